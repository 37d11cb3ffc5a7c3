//! Cosine similarity over unit embeddings: the kernel, within-subject
//! blocks, per-image mean-similarity rankings and cross-subject
//! representative means.
//!
//! Every reduction runs in a fixed order, so results do not depend on the
//! rayon thread count.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingStore;
use crate::error::{Error, Result};
use crate::manifest::{ImageRecord, Manifest};
use crate::seed::{rng_for, sample_positions};

pub const DEFAULT_BLOCK_ROWS: usize = 1024;
pub const DEFAULT_REPS: usize = 5;

const LANES: usize = 8;

/// Dot product with a fixed 8-lane accumulation order. `dot(a, b)` and
/// `dot(b, a)` are bit-identical.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let split = a.len() - a.len() % LANES;
    let mut acc = [0f32; LANES];
    for (ca, cb) in a[..split]
        .chunks_exact(LANES)
        .zip(b[..split].chunks_exact(LANES))
    {
        for l in 0..LANES {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut tail = 0f32;
    for (x, y) in a[split..].iter().zip(&b[split..]) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7])) + tail
}

/// Cosine of two unit vectors, clamped to [-1, 1].
#[inline]
pub fn cosine_unchecked(a: &[f32], b: &[f32]) -> f64 {
    (dot(a, b) as f64).clamp(-1.0, 1.0)
}

pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(a.len(), b.len()));
    }
    Ok(cosine_unchecked(a, b))
}

/// Tunables for blocked similarity computation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Rows handed to one worker at a time.
    pub block_rows: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            block_rows: DEFAULT_BLOCK_ROWS,
        }
    }
}

impl SimConfig {
    fn rows(&self) -> usize {
        self.block_rows.max(1)
    }
}

/// Pairwise cosine scores between two lists of images.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityBlock {
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    /// Row-major `|rows| x |cols|`.
    pub scores: Vec<f64>,
}

impl SimilarityBlock {
    pub fn compute(
        rows: &[&ImageRecord],
        cols: &[&ImageRecord],
        store: &EmbeddingStore,
        cfg: SimConfig,
    ) -> Self {
        let mut scores = vec![0f64; rows.len() * cols.len()];
        if !cols.is_empty() {
            scores
                .par_chunks_mut(cols.len() * cfg.rows())
                .enumerate()
                .for_each(|(block, out)| {
                    let first = block * cfg.rows();
                    for (offset, row_out) in out.chunks_mut(cols.len()).enumerate() {
                        let a = store.row(rows[first + offset].embedding_index);
                        for (slot, c) in row_out.iter_mut().zip(cols) {
                            *slot = cosine_unchecked(a, store.row(c.embedding_index));
                        }
                    }
                });
        }
        SimilarityBlock {
            row_ids: rows.iter().map(|r| r.image_id.clone()).collect(),
            col_ids: cols.iter().map(|r| r.image_id.clone()).collect(),
            scores,
        }
    }

    /// All-pairs block for one subject, rows and columns in image_id order.
    pub fn within_subject(
        manifest: &Manifest,
        subject: &str,
        store: &EmbeddingStore,
        cfg: SimConfig,
    ) -> Self {
        let recs = sorted_by_image_id(manifest.subject_records(subject).collect());
        Self::compute(&recs, &recs, store, cfg)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.scores[row * self.col_ids.len() + col]
    }
}

pub(crate) fn sorted_by_image_id(mut recs: Vec<&ImageRecord>) -> Vec<&ImageRecord> {
    recs.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    recs
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedImage {
    pub image_id: String,
    pub mean_score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    /// Index of the entry above the gap.
    pub position: usize,
    pub delta: f64,
}

/// Images of one subject ranked by mean similarity to the rest of the subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSimilarityRanking {
    pub subject_id: String,
    /// Descending by `mean_score`, ties by image_id ascending.
    pub entries: Vec<RankedImage>,
    /// `gaps[k].delta = entries[k].mean_score - entries[k + 1].mean_score`.
    pub gaps: Vec<Gap>,
}

impl MeanSimilarityRanking {
    /// The largest gap; ties resolve to the latest position.
    pub fn biggest_gap(&self) -> Option<Gap> {
        self.gaps.iter().copied().fold(None, |best, g| match best {
            Some(b) if g.delta < b.delta => Some(b),
            _ => Some(g),
        })
    }
}

/// Mean cosine of each image to every other image of the same subject.
///
/// Records are processed in image_id order, so the result does not depend on
/// the order they are passed in. Means accumulate in f64.
pub fn mean_similarity_ranking(
    records: &[&ImageRecord],
    store: &EmbeddingStore,
    cfg: SimConfig,
) -> Result<MeanSimilarityRanking> {
    let subject_id = records
        .first()
        .map(|r| r.subject_id.clone())
        .unwrap_or_default();
    if records.len() < 2 {
        return Err(Error::TooFewImages {
            subject: subject_id,
            count: records.len(),
            required: 2,
        });
    }
    let recs = sorted_by_image_id(records.to_vec());
    let n = recs.len();
    let mut means = vec![0f64; n];
    means
        .par_chunks_mut(cfg.rows())
        .enumerate()
        .for_each(|(block, out)| {
            for (offset, slot) in out.iter_mut().enumerate() {
                let i = block * cfg.rows() + offset;
                let a = store.row(recs[i].embedding_index);
                let mut sum = 0f64;
                for (j, r) in recs.iter().enumerate() {
                    if j != i {
                        sum += cosine_unchecked(a, store.row(r.embedding_index));
                    }
                }
                *slot = sum / (n - 1) as f64;
            }
        });

    let mut entries: Vec<RankedImage> = recs
        .iter()
        .zip(means)
        .map(|(r, mean_score)| RankedImage {
            image_id: r.image_id.clone(),
            mean_score,
        })
        .collect();
    entries.sort_by(|a, b| {
        b.mean_score
            .total_cmp(&a.mean_score)
            .then_with(|| a.image_id.cmp(&b.image_id))
    });
    let gaps = entries
        .windows(2)
        .enumerate()
        .map(|(position, w)| Gap {
            position,
            delta: w[0].mean_score - w[1].mean_score,
        })
        .collect();
    Ok(MeanSimilarityRanking {
        subject_id,
        entries,
        gaps,
    })
}

/// Seeded representative draw for one subject: `min(reps, n)` images chosen
/// without replacement from the subject's image_ids in sorted order.
pub fn representatives<'a>(
    manifest: &'a Manifest,
    subject: &str,
    reps: usize,
    seed: u64,
) -> Vec<&'a ImageRecord> {
    let recs = sorted_by_image_id(manifest.subject_records(subject).collect());
    let mut rng = rng_for(seed, subject);
    sample_positions(&mut rng, recs.len(), reps)
        .into_iter()
        .map(|p| recs[p])
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectPairScore {
    pub subject_a: String,
    pub subject_b: String,
    pub mean_score: f64,
}

/// Mean representative-pair cosine for every unordered subject pair, sorted
/// by score descending then `(subject_a, subject_b)` ascending.
pub fn cross_subject_means(
    manifest: &Manifest,
    store: &EmbeddingStore,
    reps: usize,
    seed: u64,
) -> Result<Vec<SubjectPairScore>> {
    if reps == 0 {
        return Err(Error::InvalidParameter("reps must be at least 1".into()));
    }
    let subjects: Vec<&String> = manifest.subjects().keys().collect();
    let rep_rows: Vec<Vec<&[f32]>> = subjects
        .par_iter()
        .map(|s| {
            representatives(manifest, s, reps, seed)
                .into_iter()
                .map(|r| store.row(r.embedding_index))
                .collect()
        })
        .collect();

    let per_subject: Vec<Vec<SubjectPairScore>> = (0..subjects.len())
        .into_par_iter()
        .map(|a| {
            ((a + 1)..subjects.len())
                .map(|b| SubjectPairScore {
                    subject_a: subjects[a].clone(),
                    subject_b: subjects[b].clone(),
                    mean_score: mean_cross(&rep_rows[a], &rep_rows[b]),
                })
                .collect()
        })
        .collect();

    let mut pairs: Vec<SubjectPairScore> = per_subject.into_iter().flatten().collect();
    pairs.par_sort_by(compare_pair_scores);
    Ok(pairs)
}

fn mean_cross(a: &[&[f32]], b: &[&[f32]]) -> f64 {
    let mut sum = 0f64;
    for x in a {
        for y in b {
            sum += cosine_unchecked(x, y);
        }
    }
    sum / (a.len() * b.len()) as f64
}

pub(crate) fn compare_pair_scores(x: &SubjectPairScore, y: &SubjectPairScore) -> Ordering {
    y.mean_score
        .total_cmp(&x.mean_score)
        .then_with(|| x.subject_a.cmp(&y.subject_a))
        .then_with(|| x.subject_b.cmp(&y.subject_b))
}
