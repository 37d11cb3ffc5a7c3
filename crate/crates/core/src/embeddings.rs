//! Dense store of unit-length face embeddings and its binary file format.
//!
//! File layout (little-endian): magic `FCEB`, u32 version (1), u32 count,
//! u32 dim, then `count * dim` f32 values, row-major.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{io_err, Error, Result};

pub const EMBEDDING_MAGIC: [u8; 4] = *b"FCEB";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;

/// Allowed deviation of a row's Euclidean norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    count: usize,
    data: Vec<f32>,
}

impl EmbeddingStore {
    /// Builds a store from row-major data, rejecting rows that are not unit length.
    pub fn new(dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter(
                "embedding dim must be positive".into(),
            ));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::InvalidParameter(format!(
                "{} values is not a multiple of dim {dim}",
                data.len()
            )));
        }
        let store = EmbeddingStore {
            dim,
            count: data.len() / dim,
            data,
        };
        let bad = store.rows_off_unit_norm();
        if !bad.is_empty() {
            return Err(Error::NotNormalized {
                tolerance: NORM_TOLERANCE,
                rows: bad,
            });
        }
        Ok(store)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.data[index * self.dim..(index + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    fn rows_off_unit_norm(&self) -> Vec<usize> {
        (0..self.count)
            .filter(|&i| {
                let norm = self
                    .row(i)
                    .iter()
                    .map(|&x| (x as f64) * (x as f64))
                    .sum::<f64>()
                    .sqrt();
                !((norm - 1.0).abs() <= NORM_TOLERANCE)
            })
            .collect()
    }
}

/// Scales `v` to unit length in place. Zero vectors are left untouched.
pub fn normalize(v: &mut [f32]) {
    let norm = v
        .iter()
        .map(|&x| (x as f64) * (x as f64))
        .sum::<f64>()
        .sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x = (*x as f64 / norm) as f32;
        }
    }
}

/// Loads an embedding file. When `expected_count` is given the header count
/// must match it.
pub fn load_embeddings(
    path: impl AsRef<Path>,
    expected_count: Option<usize>,
) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let bad = |msg: String| Error::BadEmbeddingFile {
        path: path.to_path_buf(),
        msg,
    };
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!(
            "file is {} bytes, shorter than the header",
            bytes.len()
        )));
    }
    if bytes[0..4] != EMBEDDING_MAGIC {
        return Err(bad(format!("bad magic {:?}", &bytes[0..4])));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    let version = word(4);
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = word(8) as usize;
    let dim = word(12) as usize;
    if dim == 0 {
        return Err(bad("dim is zero".into()));
    }
    let expected_len = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(4))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| bad("header sizes overflow".into()))?;
    if bytes.len() != expected_len {
        return Err(bad(format!(
            "header declares count={count} dim={dim} ({expected_len} bytes) but file has {} bytes",
            bytes.len()
        )));
    }
    if let Some(expected) = expected_count {
        if expected != count {
            return Err(Error::CountMismatch {
                expected,
                found: count,
            });
        }
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingStore::new(dim, data)
}

pub fn write_embeddings(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let mut header_and_payload = || -> std::io::Result<()> {
        w.write_all(&EMBEDDING_MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(store.count as u32).to_le_bytes())?;
        w.write_all(&(store.dim as u32).to_le_bytes())?;
        for x in &store.data {
            w.write_all(&x.to_le_bytes())?;
        }
        w.flush()
    };
    header_and_payload().map_err(io_err(path))
}
