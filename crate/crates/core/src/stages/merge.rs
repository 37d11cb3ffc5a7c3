use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingStore;
use crate::error::{io_err, Error, Result};
use crate::manifest::Manifest;
use crate::report::{StageReport, SubjectMerge};
use crate::simkit::cross_subject_means;

pub const DEFAULT_MERGE_THRESHOLD: f64 = 0.25;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    #[default]
    Pending,
    SamePerson,
    DifferentPerson,
}

/// A subject pair whose representatives look alike, awaiting or carrying a
/// human verdict. `subject_a < subject_b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeCandidate {
    pub subject_a: String,
    pub subject_b: String,
    pub mean_score: f64,
    #[serde(default)]
    pub decision: Decision,
    #[serde(default)]
    pub decided_by: Option<String>,
    #[serde(default)]
    pub decided_at: Option<DateTime<Utc>>,
}

impl MergeCandidate {
    pub fn key(&self) -> (String, String) {
        canonical_pair(&self.subject_a, &self.subject_b)
    }
}

fn canonical_pair(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Every subject pair whose mean representative similarity is strictly above
/// `threshold`, highest first.
pub fn generate_merge_candidates(
    manifest: &Manifest,
    store: &EmbeddingStore,
    threshold: f64,
    reps: usize,
    seed: u64,
) -> Result<Vec<MergeCandidate>> {
    Ok(cross_subject_means(manifest, store, reps, seed)?
        .into_iter()
        .take_while(|p| p.mean_score > threshold)
        .map(|p| MergeCandidate {
            subject_a: p.subject_a,
            subject_b: p.subject_b,
            mean_score: p.mean_score,
            decision: Decision::Pending,
            decided_by: None,
            decided_at: None,
        })
        .collect())
}

/// Relabels every connected component of `same_person` decisions to its
/// lexicographically smallest subject id. No records are added or removed.
pub fn apply_merges(
    manifest: &Manifest,
    decisions: &[MergeCandidate],
) -> Result<(Manifest, StageReport)> {
    let ids: Vec<&String> = manifest.subjects().keys().collect();
    let index: HashMap<&str, usize> = ids
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let lookup = |s: &str| {
        index
            .get(s)
            .copied()
            .ok_or_else(|| Error::UnknownSubject(s.to_string()))
    };

    let mut uf = UnionFind::<usize>::new(ids.len());
    let mut different = Vec::new();
    for d in decisions {
        let (a, b) = (lookup(&d.subject_a)?, lookup(&d.subject_b)?);
        match d.decision {
            Decision::Pending => {
                return Err(Error::PendingDecision(
                    d.subject_a.clone(),
                    d.subject_b.clone(),
                ))
            }
            Decision::SamePerson => {
                uf.union(a, b);
            }
            Decision::DifferentPerson => different.push((a, b)),
        }
    }
    for (a, b) in different {
        if uf.equiv(a, b) {
            return Err(Error::ContradictoryDecisions(
                ids[a].clone(),
                ids[b].clone(),
            ));
        }
    }

    // Subject ids are sorted, so the smallest index in a component is its
    // lexicographically smallest id.
    let mut survivor_of_root: HashMap<usize, usize> = HashMap::new();
    for i in 0..ids.len() {
        survivor_of_root.entry(uf.find(i)).or_insert(i);
    }
    let relabel: HashMap<&str, &str> = (0..ids.len())
        .filter_map(|i| {
            let survivor = survivor_of_root[&uf.find(i)];
            (survivor != i).then(|| (ids[i].as_str(), ids[survivor].as_str()))
        })
        .collect();

    let out = manifest.relabel(|s| relabel.get(s).map(|t| t.to_string()));
    let merged: Vec<SubjectMerge> = ids
        .iter()
        .filter_map(|s| {
            relabel.get(s.as_str()).map(|t| SubjectMerge {
                absorbed: s.to_string(),
                survivor: t.to_string(),
            })
        })
        .collect();
    let report = StageReport::new("merge", manifest, &out, Vec::new(), merged);
    Ok((out, report))
}

/// Collapses a decision log to one entry per pair; later entries win.
/// Returned in canonical pair order.
pub fn latest_decisions(
    entries: impl IntoIterator<Item = MergeCandidate>,
) -> BTreeMap<(String, String), MergeCandidate> {
    let mut latest = BTreeMap::new();
    for mut c in entries {
        let (a, b) = c.key();
        c.subject_a.clone_from(&a);
        c.subject_b.clone_from(&b);
        latest.insert((a, b), c);
    }
    latest
}

/// Reads a JSON-lines candidate or decision file. Blank lines are skipped.
pub fn read_candidates(path: impl AsRef<Path>) -> Result<Vec<MergeCandidate>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let c = serde_json::from_str(&line).map_err(|e| Error::MalformedRow {
            path: path.to_path_buf(),
            line: n as u64 + 1,
            msg: e.to_string(),
        })?;
        out.push(c);
    }
    Ok(out)
}

pub fn write_candidates(candidates: &[MergeCandidate], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for c in candidates {
        let line = serde_json::to_string(c).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}
