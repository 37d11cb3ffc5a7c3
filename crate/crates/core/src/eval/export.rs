//! On-disk forms of evaluation output.
//!
//! Score files (little-endian): magic `FCSS`, u32 version (1), u64 authentic
//! count, u64 impostor count, then authentic f32 scores followed by impostor
//! f32 scores. Metadata lives in a JSON sidecar next to the binary.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

use super::{RocCurve, ScoreSet};

pub const SCORE_MAGIC: [u8; 4] = *b"FCSS";
const SCORE_VERSION: u32 = 1;
const SCORE_HEADER_LEN: usize = 24;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSetMeta {
    pub group: String,
    pub seed: u64,
    pub subsample_fraction: f64,
    pub authentic_count: usize,
    pub impostor_count: usize,
}

impl ScoreSetMeta {
    pub fn of(set: &ScoreSet) -> Self {
        ScoreSetMeta {
            group: set.group.clone(),
            seed: set.seed,
            subsample_fraction: set.subsample_fraction,
            authentic_count: set.authentic.len(),
            impostor_count: set.impostor.len(),
        }
    }
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn write_with(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    body(&mut w).and_then(|_| w.flush()).map_err(io_err(path))
}

/// Writes the binary score file at `path` and its metadata at `path.json`
/// (same stem, `json` extension).
pub fn write_score_set(set: &ScoreSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    write_with(path, |w| {
        w.write_all(&SCORE_MAGIC)?;
        w.write_all(&SCORE_VERSION.to_le_bytes())?;
        w.write_all(&(set.authentic.len() as u64).to_le_bytes())?;
        w.write_all(&(set.impostor.len() as u64).to_le_bytes())?;
        for s in set.authentic.iter().chain(&set.impostor) {
            w.write_all(&s.to_le_bytes())?;
        }
        Ok(())
    })?;
    let meta_path = sidecar(path);
    let json =
        serde_json::to_string_pretty(&ScoreSetMeta::of(set)).map_err(|source| Error::Json {
            path: meta_path.clone(),
            source,
        })?;
    write_with(&meta_path, |w| writeln!(w, "{json}"))
}

pub fn read_score_set(path: impl AsRef<Path>) -> Result<ScoreSet> {
    let path = path.as_ref();
    let meta_path = sidecar(path);
    let meta_text = std::fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let meta: ScoreSetMeta = serde_json::from_str(&meta_text).map_err(|source| Error::Json {
        path: meta_path.clone(),
        source,
    })?;

    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let bad = |msg: String| Error::BadEmbeddingFile {
        path: path.to_path_buf(),
        msg,
    };
    if bytes.len() < SCORE_HEADER_LEN || bytes[0..4] != SCORE_MAGIC {
        return Err(bad("not a score file".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != SCORE_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let na = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let ni = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    if bytes.len() != SCORE_HEADER_LEN + 4 * (na + ni) {
        return Err(bad(format!(
            "header declares {na}+{ni} scores but file has {} bytes",
            bytes.len()
        )));
    }
    if (na, ni) != (meta.authentic_count, meta.impostor_count) {
        return Err(bad(format!(
            "counts {na}/{ni} disagree with sidecar {}/{}",
            meta.authentic_count, meta.impostor_count
        )));
    }
    let mut scores = bytes[SCORE_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let authentic = scores.by_ref().take(na).collect();
    let impostor = scores.collect();
    Ok(ScoreSet {
        group: meta.group,
        authentic,
        impostor,
        subsample_fraction: meta.subsample_fraction,
        seed: meta.seed,
    })
}

pub fn write_roc_csv(curve: &RocCurve, path: impl AsRef<Path>) -> Result<()> {
    write_with(path.as_ref(), |w| {
        writeln!(w, "fmr,tpr,threshold")?;
        for p in &curve.points {
            writeln!(w, "{},{},{}", p.fmr, p.tpr, p.threshold)?;
        }
        Ok(())
    })
}

pub fn write_histogram_csv(bins: &[(f64, f64)], path: impl AsRef<Path>) -> Result<()> {
    write_with(path.as_ref(), |w| {
        writeln!(w, "bin_center,density")?;
        for (center, density) in bins {
            writeln!(w, "{center},{density}")?;
        }
        Ok(())
    })
}
