use std::collections::HashSet;

use rayon::prelude::*;

use crate::embeddings::EmbeddingStore;
use crate::error::{Error, Result};
use crate::manifest::{ImageRecord, Manifest};
use crate::report::{filter_min_images, RemovalReason, StageReport};
use crate::simkit::{cosine_unchecked, sorted_by_image_id};

use super::remove_ids;

pub const DEFAULT_NEAR_DUP_THRESHOLD: f64 = 0.91;

/// Greedy pivot sweep over `rows` in the given order. Returns the indices of
/// rows removed as near-duplicates of an earlier surviving pivot.
pub fn pivot_sweep(rows: &[&[f32]], threshold: f64) -> Vec<usize> {
    let mut alive = vec![true; rows.len()];
    for pivot in 0..rows.len() {
        if !alive[pivot] {
            continue;
        }
        for other in pivot + 1..rows.len() {
            if alive[other] && cosine_unchecked(rows[pivot], rows[other]) >= threshold {
                alive[other] = false;
            }
        }
    }
    alive
        .iter()
        .enumerate()
        .filter_map(|(i, &a)| (!a).then_some(i))
        .collect()
}

/// Removes near-duplicate images within each subject (pivots taken in
/// image_id order), then drops subjects left below `min_images`.
pub fn near_duplicate_clean(
    manifest: &Manifest,
    store: &EmbeddingStore,
    threshold: f64,
    min_images: usize,
) -> Result<(Manifest, StageReport)> {
    if min_images == 0 {
        return Err(Error::InvalidParameter(
            "min_images must be at least 1".into(),
        ));
    }
    let subjects: Vec<&String> = manifest.subjects().keys().collect();
    let per_subject: Vec<Vec<&str>> = subjects
        .par_iter()
        .map(|s| {
            let recs: Vec<&ImageRecord> = sorted_by_image_id(manifest.subject_records(s).collect());
            let rows: Vec<&[f32]> = recs.iter().map(|r| store.row(r.embedding_index)).collect();
            pivot_sweep(&rows, threshold)
                .into_iter()
                .map(|i| recs[i].image_id.as_str())
                .collect()
        })
        .collect();

    let dups: HashSet<&str> = per_subject.into_iter().flatten().collect();
    let (deduped, mut removed) = remove_ids(manifest, &dups, RemovalReason::NearDuplicate);
    let (out, small) = filter_min_images(&deduped, min_images);
    removed.extend(small);
    let report = StageReport::new("near_duplicate", manifest, &out, removed, Vec::new());
    Ok((out, report))
}
