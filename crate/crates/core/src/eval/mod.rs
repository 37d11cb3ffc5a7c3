//! Verification-mode evaluation: authentic and impostor score sets per
//! demographic group, thresholds and TPR at fixed FMR, ROC curves and
//! score histograms.

mod export;
mod metrics;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embeddings::EmbeddingStore;
use crate::error::{Error, Result};
use crate::manifest::{GenderLabel, ImageRecord, Manifest};
use crate::seed::{rng_for, sample_positions};
use crate::simkit::dot;

pub use export::{
    read_score_set, write_histogram_csv, write_roc_csv, write_score_set, ScoreSetMeta, SCORE_MAGIC,
};
pub use metrics::{
    histogram, roc_curve, threshold_at_fmr, tpr_at_fmr, FmrThreshold, RocCurve, RocPoint,
    SortedScores, TprAtFmr, DEFAULT_HISTOGRAM_BINS, DEFAULT_ROC_POINTS,
};

pub const DEFAULT_EVAL_FRACTION: f64 = 1.0 / 3.0;
pub const DEFAULT_FMR_TARGETS: [f64; 3] = [1e-3, 1e-4, 1e-5];

const ROW_BLOCK: usize = 64;
const COL_TILE: usize = 512;

/// Authentic and impostor similarity scores for one group.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSet {
    pub group: String,
    pub authentic: Vec<f32>,
    pub impostor: Vec<f32>,
    pub subsample_fraction: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// One group, "all", with every subject.
    All,
    /// "male" and "female" groups from the manifest's gender labels.
    ByGender,
}

/// A subject that had authentic pairs before subsampling but none after.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageWarning {
    pub group: String,
    pub subject_id: String,
    pub available: usize,
    pub selected: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSetBuild {
    pub sets: Vec<ScoreSet>,
    pub warnings: Vec<CoverageWarning>,
}

/// Group name → member subject ids, in evaluation order.
pub fn evaluation_groups(
    manifest: &Manifest,
    grouping: Grouping,
) -> Result<Vec<(String, Vec<String>)>> {
    match grouping {
        Grouping::All => Ok(vec![(
            "all".to_string(),
            manifest.subjects().keys().cloned().collect(),
        )]),
        Grouping::ByGender => {
            let unlabeled = manifest.unlabeled_subjects();
            if !unlabeled.is_empty() {
                return Err(Error::UnlabeledSubjects(unlabeled));
            }
            let members = |label: GenderLabel| {
                manifest
                    .subjects()
                    .keys()
                    .filter(|s| manifest.gender_label(s) == Some(label))
                    .cloned()
                    .collect()
            };
            Ok(vec![
                ("male".to_string(), members(GenderLabel::Male)),
                ("female".to_string(), members(GenderLabel::Female)),
            ])
        }
    }
}

pub fn build_score_sets(
    manifest: &Manifest,
    store: &EmbeddingStore,
    grouping: Grouping,
    fraction: f64,
    seed: u64,
) -> Result<ScoreSetBuild> {
    let mut sets = Vec::new();
    let mut warnings = Vec::new();
    for (group, subjects) in evaluation_groups(manifest, grouping)? {
        let (set, w) = build_group_scores(manifest, store, &group, &subjects, fraction, seed)?;
        sets.push(set);
        warnings.extend(w);
    }
    Ok(ScoreSetBuild { sets, warnings })
}

/// Number of images drawn when subsampling `n` images at `fraction`.
pub fn subsample_size(n: usize, fraction: f64) -> usize {
    // The epsilon keeps exact products like 0.1 * 30 from rounding up.
    ((fraction * n as f64 - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Scores for one group: a seeded subsample of the group's images (in
/// image_id order), then every pair among them, authentic when the subject
/// matches and impostor otherwise. Pairs are emitted in `(i, j)` order over
/// the sorted selection, independent of thread count.
pub fn build_group_scores(
    manifest: &Manifest,
    store: &EmbeddingStore,
    group: &str,
    subjects: &[String],
    fraction: f64,
    seed: u64,
) -> Result<(ScoreSet, Vec<CoverageWarning>)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "fraction must be in (0, 1], got {fraction}"
        )));
    }
    let mut pool: Vec<&ImageRecord> = subjects
        .iter()
        .flat_map(|s| manifest.subject_records(s))
        .collect();
    pool.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let mut rng = rng_for(seed, &format!("score-subsample/{group}"));
    let picked = sample_positions(&mut rng, pool.len(), subsample_size(pool.len(), fraction));
    let selected: Vec<&ImageRecord> = picked.into_iter().map(|p| pool[p]).collect();

    let subject_index: HashMap<&str, u32> = subjects
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i as u32))
        .collect();
    let labels: Vec<u32> = selected
        .iter()
        .map(|r| subject_index[r.subject_id.as_str()])
        .collect();
    let rows: Vec<&[f32]> = selected
        .iter()
        .map(|r| store.row(r.embedding_index))
        .collect();

    let warnings = coverage_warnings(manifest, group, subjects, &labels);
    let (authentic, impostor) = pair_scores(&rows, &labels);
    if impostor.is_empty() {
        return Err(Error::NoImpostorPairs {
            group: group.to_string(),
        });
    }
    Ok((
        ScoreSet {
            group: group.to_string(),
            authentic,
            impostor,
            subsample_fraction: fraction,
            seed,
        },
        warnings,
    ))
}

fn coverage_warnings(
    manifest: &Manifest,
    group: &str,
    subjects: &[String],
    labels: &[u32],
) -> Vec<CoverageWarning> {
    let mut selected = vec![0usize; subjects.len()];
    for &l in labels {
        selected[l as usize] += 1;
    }
    subjects
        .iter()
        .zip(selected)
        .filter_map(|(s, sel)| {
            let available = manifest.subjects()[s].len();
            (available >= 2 && sel < 2).then(|| CoverageWarning {
                group: group.to_string(),
                subject_id: s.clone(),
                available,
                selected: sel,
            })
        })
        .collect()
}

/// All `i < j` pair scores split by label equality, written straight into
/// preallocated output so peak memory is the two result vectors.
fn pair_scores(rows: &[&[f32]], labels: &[u32]) -> (Vec<f32>, Vec<f32>) {
    let n = rows.len();
    // Same-label partners after each row.
    let mut same_after = vec![0usize; n];
    let mut seen: HashMap<u32, usize> = HashMap::new();
    for i in (0..n).rev() {
        let c = seen.entry(labels[i]).or_insert(0);
        same_after[i] = *c;
        *c += 1;
    }
    let auth_total: usize = same_after.iter().sum();
    let imp_total = n * n.saturating_sub(1) / 2 - auth_total;
    let mut authentic = vec![0f32; auth_total];
    let mut impostor = vec![0f32; imp_total];

    // Carve the outputs into contiguous per-block slices.
    let mut blocks = Vec::new();
    let (mut auth_rest, mut imp_rest) = (authentic.as_mut_slice(), impostor.as_mut_slice());
    for start in (0..n).step_by(ROW_BLOCK) {
        let end = (start + ROW_BLOCK).min(n);
        let a_len: usize = same_after[start..end].iter().sum();
        let total: usize = (start..end).map(|i| n - 1 - i).sum();
        let (a, ar) = std::mem::take(&mut auth_rest).split_at_mut(a_len);
        let (b, br) = std::mem::take(&mut imp_rest).split_at_mut(total - a_len);
        auth_rest = ar;
        imp_rest = br;
        blocks.push((start, end, a, b));
    }

    blocks
        .into_par_iter()
        .for_each(|(start, end, auth_out, imp_out)| {
            // Per-row write cursors into this block's slices.
            let mut auth_cur = Vec::with_capacity(end - start);
            let mut imp_cur = Vec::with_capacity(end - start);
            let (mut a_off, mut i_off) = (0, 0);
            for i in start..end {
                auth_cur.push(a_off);
                imp_cur.push(i_off);
                a_off += same_after[i];
                i_off += n - 1 - i - same_after[i];
            }
            for tile in ((start + 1)..n).step_by(COL_TILE) {
                let tile_end = (tile + COL_TILE).min(n);
                for i in start..end {
                    let a = rows[i];
                    let k = i - start;
                    for j in tile.max(i + 1)..tile_end {
                        let s = dot(a, rows[j]).clamp(-1.0, 1.0);
                        if labels[i] == labels[j] {
                            auth_out[auth_cur[k]] = s;
                            auth_cur[k] += 1;
                        } else {
                            imp_out[imp_cur[k]] = s;
                            imp_cur[k] += 1;
                        }
                    }
                }
            }
        });
    (authentic, impostor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embeddings::normalize;
    use crate::manifest::GenderVote;
    use rand::{Rng, SeedableRng};

    fn rec(id: String, subject: &str, idx: usize) -> ImageRecord {
        ImageRecord {
            image_id: id,
            subject_id: subject.into(),
            embedding_index: idx,
            roll: 0.0,
            pitch: 0.0,
            yaw: 0.0,
            gender_vote: GenderVote::Unknown,
            source_path: String::new(),
        }
    }

    /// `subjects` clusters of `per` images each, labeled alternately male/female.
    fn planted(subjects: usize, per: usize, dim: usize, seed: u64) -> (Manifest, EmbeddingStore) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        let mut records = Vec::new();
        let mut labels = std::collections::BTreeMap::new();
        for s in 0..subjects {
            let mut c: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            normalize(&mut c);
            let name = format!("S{s:02}");
            for i in 0..per {
                let mut v: Vec<f32> = c
                    .iter()
                    .map(|x| x + rng.random_range(-0.05f32..0.05))
                    .collect();
                normalize(&mut v);
                data.extend(v);
                records.push(rec(format!("{name}_{i:02}"), &name, records.len()));
            }
            labels.insert(
                name,
                if s % 2 == 0 {
                    GenderLabel::Male
                } else {
                    GenderLabel::Female
                },
            );
        }
        let m = Manifest::new(records).unwrap().with_gender_labels(labels);
        (m, EmbeddingStore::new(dim, data).unwrap())
    }

    /// Brute force over all pairs of selected image ids.
    fn brute(m: &Manifest, store: &EmbeddingStore, ids: &[&str]) -> (Vec<f32>, Vec<f32>) {
        let by_id: HashMap<&str, &ImageRecord> = m
            .records()
            .iter()
            .map(|r| (r.image_id.as_str(), r))
            .collect();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (i, x) in ids.iter().enumerate() {
            for y in &ids[i + 1..] {
                let (rx, ry) = (by_id[x], by_id[y]);
                let s = (dot(store.row(rx.embedding_index), store.row(ry.embedding_index)))
                    .clamp(-1.0, 1.0);
                if rx.subject_id == ry.subject_id {
                    a.push(s);
                } else {
                    b.push(s);
                }
            }
        }
        (a, b)
    }

    #[test]
    fn two_by_two_full_enumeration() {
        let (m, store) = planted(2, 2, 8, 1);
        let built = build_score_sets(&m, &store, Grouping::All, 1.0, 0).unwrap();
        assert_eq!(built.sets.len(), 1);
        assert_eq!(built.sets[0].authentic.len(), 2);
        assert_eq!(built.sets[0].impostor.len(), 4);
    }

    #[test]
    fn matches_brute_force_and_separates_clusters() {
        let (m, store) = planted(12, 9, 16, 7);
        let set = &build_score_sets(&m, &store, Grouping::All, 1.0, 3)
            .unwrap()
            .sets[0];
        let mut ids: Vec<&str> = m.records().iter().map(|r| r.image_id.as_str()).collect();
        ids.sort();
        let (a, b) = brute(&m, &store, &ids);
        assert_eq!(set.authentic, a);
        assert_eq!(set.impostor, b);
        let mean = |v: &[f32]| v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
        assert!(mean(&set.authentic) > 0.9);
        assert!(mean(&set.impostor) < 0.3);
    }

    #[test]
    fn tiled_enumeration_matches_brute_force_past_block_edges() {
        // More rows than one block and more columns than one tile.
        let (m, store) = planted(70, 9, 4, 12);
        let set = &build_score_sets(&m, &store, Grouping::All, 1.0, 3)
            .unwrap()
            .sets[0];
        let mut ids: Vec<&str> = m.records().iter().map(|r| r.image_id.as_str()).collect();
        ids.sort();
        let (a, b) = brute(&m, &store, &ids);
        assert_eq!(set.authentic, a);
        assert_eq!(set.impostor, b);
    }

    #[test]
    fn third_subsample_per_group() {
        let (m, store) = planted(10, 7, 8, 2);
        let built =
            build_score_sets(&m, &store, Grouping::ByGender, DEFAULT_EVAL_FRACTION, 9).unwrap();
        assert_eq!(
            built
                .sets
                .iter()
                .map(|s| s.group.as_str())
                .collect::<Vec<_>>(),
            ["male", "female"]
        );
        // 35 images per group; ceil(35 / 3) = 12 selected → 66 pairs.
        for set in &built.sets {
            assert_eq!(set.authentic.len() + set.impostor.len(), 12 * 11 / 2);
        }
        assert_eq!(subsample_size(30, 1.0 / 3.0), 10);
        assert_eq!(subsample_size(30, 0.1), 3);
        assert_eq!(subsample_size(31, 1.0 / 3.0), 11);
    }

    #[test]
    fn deterministic_across_threads() {
        let (m, store) = planted(20, 10, 8, 5);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| build_score_sets(&m, &store, Grouping::ByGender, 0.5, 4).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn unlabeled_subjects_block_gender_split() {
        let (m, store) = planted(4, 3, 8, 2);
        let mut labels = m.gender_labels().clone();
        labels.insert("S01".into(), GenderLabel::NeedsReview);
        let m = m.with_gender_labels(labels);
        assert!(matches!(
            build_score_sets(&m, &store, Grouping::ByGender, 1.0, 0),
            Err(Error::UnlabeledSubjects(s)) if s == vec!["S01".to_string()]
        ));
    }

    #[test]
    fn single_subject_group_has_no_impostors() {
        let (m, store) = planted(1, 4, 8, 2);
        assert!(matches!(
            build_score_sets(&m, &store, Grouping::All, 1.0, 0),
            Err(Error::NoImpostorPairs { .. })
        ));
    }

    #[test]
    fn coverage_warning_when_subject_loses_pairs() {
        let (m, store) = planted(30, 2, 8, 3);
        let built = build_score_sets(&m, &store, Grouping::All, 0.3, 1).unwrap();
        assert!(!built.warnings.is_empty());
        assert!(built
            .warnings
            .iter()
            .all(|w| w.available == 2 && w.selected < 2));
    }
}
