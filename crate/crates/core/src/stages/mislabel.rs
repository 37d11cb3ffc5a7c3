use std::collections::HashSet;

use rayon::prelude::*;

use crate::embeddings::EmbeddingStore;
use crate::error::Result;
use crate::manifest::{ImageRecord, Manifest};
use crate::report::{RemovalReason, StageReport};
use crate::simkit::{mean_similarity_ranking, MeanSimilarityRanking, SimConfig};

use super::remove_ids;

/// Subjects smaller than this are left alone by the gap rule.
const MIN_SUBJECT_FOR_GAP_RULE: usize = 3;

/// Number of leading ranking entries kept by the biggest-gap rule, or `None`
/// when the biggest gap does not exceed `min_gap`.
pub fn gap_cut(ranking: &MeanSimilarityRanking, min_gap: f64) -> Option<usize> {
    let gap = ranking.biggest_gap()?;
    (gap.delta > min_gap).then_some(gap.position + 1)
}

/// Removes images whose mean within-subject similarity falls below the
/// subject's biggest ranking gap, then drops subjects left with one image.
pub fn mislabel_clean(
    manifest: &Manifest,
    store: &EmbeddingStore,
    min_gap: f64,
    cfg: SimConfig,
) -> Result<(Manifest, StageReport)> {
    let subjects: Vec<&String> = manifest.subjects().keys().collect();
    let per_subject: Vec<Vec<String>> = subjects
        .par_iter()
        .map(|s| -> Result<Vec<String>> {
            let recs: Vec<&ImageRecord> = manifest.subject_records(s).collect();
            if recs.len() < MIN_SUBJECT_FOR_GAP_RULE {
                return Ok(Vec::new());
            }
            let ranking = mean_similarity_ranking(&recs, store, cfg)?;
            Ok(match gap_cut(&ranking, min_gap) {
                Some(keep) => ranking.entries[keep..]
                    .iter()
                    .map(|e| e.image_id.clone())
                    .collect(),
                None => Vec::new(),
            })
        })
        .collect::<Result<_>>()?;

    let mislabeled: HashSet<&str> = per_subject.iter().flatten().map(String::as_str).collect();
    let (cleaned, mut removed) = remove_ids(manifest, &mislabeled, RemovalReason::Mislabeled);

    let singletons: HashSet<&str> = cleaned
        .subjects()
        .values()
        .filter(|positions| positions.len() == 1)
        .map(|positions| cleaned.records()[positions[0]].image_id.as_str())
        .collect();
    let (out, singles) = remove_ids(&cleaned, &singletons, RemovalReason::Singleton);
    removed.extend(singles);

    let report = StageReport::new("mislabel", manifest, &out, removed, Vec::new());
    Ok((out, report))
}
