use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};
use crate::manifest::Manifest;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalReason {
    Pose,
    BelowMinImages,
    Mislabeled,
    Singleton,
    NearDuplicate,
}

impl RemovalReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RemovalReason::Pose => "pose",
            RemovalReason::BelowMinImages => "below_min_images",
            RemovalReason::Mislabeled => "mislabeled",
            RemovalReason::Singleton => "singleton",
            RemovalReason::NearDuplicate => "near_duplicate",
        }
    }
}

impl fmt::Display for RemovalReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Removal {
    pub image_id: String,
    pub reason: RemovalReason,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectMerge {
    pub absorbed: String,
    pub survivor: String,
}

/// Removal and merge accounting for one curation stage.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage_name: String,
    pub images_before: usize,
    pub images_after: usize,
    pub subjects_before: usize,
    pub subjects_after: usize,
    pub removed_images: Vec<Removal>,
    pub merged_subjects: Vec<SubjectMerge>,
}

impl StageReport {
    pub fn new(
        stage_name: impl Into<String>,
        before: &Manifest,
        after: &Manifest,
        removed_images: Vec<Removal>,
        merged_subjects: Vec<SubjectMerge>,
    ) -> Self {
        StageReport {
            stage_name: stage_name.into(),
            images_before: before.len(),
            images_after: after.len(),
            subjects_before: before.subject_count(),
            subjects_after: after.subject_count(),
            removed_images,
            merged_subjects,
        }
    }

    /// `images_after = images_before - |removed|` and subjects never grow.
    pub fn is_consistent(&self) -> bool {
        self.images_before.checked_sub(self.removed_images.len()) == Some(self.images_after)
            && self.subjects_after <= self.subjects_before
    }

    pub fn removed_count(&self, reason: RemovalReason) -> usize {
        self.removed_images
            .iter()
            .filter(|r| r.reason == reason)
            .count()
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        text.push('\n');
        std::fs::write(path, text).map_err(io_err(path))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Drops every subject with fewer than `min_images` records.
pub fn filter_min_images(manifest: &Manifest, min_images: usize) -> (Manifest, Vec<Removal>) {
    let removed: Vec<Removal> = manifest
        .records()
        .iter()
        .filter(|r| manifest.subjects()[&r.subject_id].len() < min_images)
        .map(|r| Removal {
            image_id: r.image_id.clone(),
            reason: RemovalReason::BelowMinImages,
        })
        .collect();
    if removed.is_empty() {
        return (manifest.clone(), removed);
    }
    let kept = manifest.retain(|r| manifest.subjects()[&r.subject_id].len() >= min_images);
    (kept, removed)
}

/// [`filter_min_images`] as a standalone stage with its own report.
pub fn filter_min_images_stage(
    manifest: &Manifest,
    min_images: usize,
) -> Result<(Manifest, StageReport)> {
    if min_images == 0 {
        return Err(Error::InvalidParameter(
            "min_images must be at least 1".into(),
        ));
    }
    let (out, removed) = filter_min_images(manifest, min_images);
    let report = StageReport::new("min_images", manifest, &out, removed, Vec::new());
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{GenderVote, ImageRecord};
    use proptest::prelude::*;

    fn manifest_with(sizes: &[(&str, usize)]) -> Manifest {
        let mut records = Vec::new();
        for (s, n) in sizes {
            for i in 0..*n {
                records.push(ImageRecord {
                    image_id: format!("{s}{i:03}"),
                    subject_id: s.to_string(),
                    embedding_index: records.len(),
                    roll: 0.0,
                    pitch: 0.0,
                    yaw: 0.0,
                    gender_vote: GenderVote::Unknown,
                    source_path: String::new(),
                });
            }
        }
        Manifest::new(records).unwrap()
    }

    #[test]
    fn nine_image_subject_removed() {
        let m = manifest_with(&[("A", 12), ("B", 9)]);
        let (out, report) = filter_min_images_stage(&m, 10).unwrap();
        assert_eq!(out.subject_count(), 1);
        assert_eq!(out.len(), 12);
        assert_eq!(report.removed_count(RemovalReason::BelowMinImages), 9);
        assert!(report
            .removed_images
            .iter()
            .all(|r| r.image_id.starts_with('B')));
        assert!(report.is_consistent());
    }

    #[test]
    fn min_one_is_identity() {
        let m = manifest_with(&[("A", 1), ("B", 3)]);
        let (out, report) = filter_min_images_stage(&m, 1).unwrap();
        assert_eq!(out, m);
        assert!(report.removed_images.is_empty());
    }

    #[test]
    fn boundary_kept() {
        let m = manifest_with(&[("A", 10), ("B", 10)]);
        let (out, report) = filter_min_images_stage(&m, 10).unwrap();
        assert_eq!(out, m);
        assert!(report.removed_images.is_empty());
    }

    #[test]
    fn zero_min_rejected() {
        assert!(filter_min_images_stage(&manifest_with(&[("A", 1)]), 0).is_err());
    }

    #[test]
    fn report_json_uses_reason_codes() {
        let m = manifest_with(&[("A", 2)]);
        let (_, report) = filter_min_images_stage(&m, 5).unwrap();
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("\"reason\":\"below_min_images\""), "{json}");
    }

    proptest! {
        #[test]
        fn idempotent_and_consistent(sizes in prop::collection::vec(1usize..15, 0..8), min in 1usize..12) {
            let names: Vec<String> = (0..sizes.len()).map(|i| format!("S{i}")).collect();
            let spec: Vec<(&str, usize)> = names.iter().map(|s| s.as_str()).zip(sizes.iter().copied()).collect();
            let m = manifest_with(&spec);
            let (once, _) = filter_min_images(&m, min);
            let (twice, removed) = filter_min_images(&once, min);
            prop_assert_eq!(&once, &twice);
            prop_assert!(removed.is_empty());
            prop_assert!(once.index_is_consistent());
            prop_assert!(once.subjects().values().all(|v| v.len() >= min));
        }
    }
}
