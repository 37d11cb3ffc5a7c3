use std::path::{Path, PathBuf};

use facecurate_core::eval::{DEFAULT_EVAL_FRACTION, DEFAULT_FMR_TARGETS, DEFAULT_HISTOGRAM_BINS, DEFAULT_ROC_POINTS};
use facecurate_core::gender::DEFAULT_AGREEMENT;
use facecurate_core::simkit::{SimConfig, DEFAULT_BLOCK_ROWS, DEFAULT_REPS};
use facecurate_core::stages::{PoseLimits, DEFAULT_MERGE_THRESHOLD, DEFAULT_MIN_IMAGES, DEFAULT_NEAR_DUP_THRESHOLD};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, json_err, PipelineError, Result};

/// Pipeline settings, read from a JSON file. Every field except the three
/// paths has a default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub manifest_path: PathBuf,
    pub embeddings_path: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub pose_limits: PoseLimits,
    #[serde(default = "defaults::min_images")]
    pub min_images: usize,
    #[serde(default = "defaults::merge_threshold")]
    pub merge_threshold: f64,
    #[serde(default = "defaults::reps")]
    pub reps: usize,
    #[serde(default = "defaults::near_dup_threshold")]
    pub near_dup_threshold: f64,
    #[serde(default)]
    pub min_gap: f64,
    #[serde(default = "defaults::eval_fraction")]
    pub eval_fraction: f64,
    #[serde(default = "defaults::fmr_targets")]
    pub fmr_targets: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::gender_agreement")]
    pub gender_agreement: f64,

    /// CSV (`subject_id,label`) of manual gender labels that replace the
    /// vote-derived ones.
    #[serde(default)]
    pub gender_overrides: Option<PathBuf>,
    /// Evaluate male and female groups separately; otherwise one "all" group.
    #[serde(default = "defaults::yes")]
    pub group_split: bool,
    #[serde(default = "defaults::block_rows")]
    pub block_rows: usize,
    #[serde(default = "defaults::roc_points")]
    pub roc_points: usize,
    #[serde(default = "defaults::histogram_bins")]
    pub histogram_bins: usize,
}

mod defaults {
    use super::*;

    pub fn min_images() -> usize {
        DEFAULT_MIN_IMAGES
    }
    pub fn merge_threshold() -> f64 {
        DEFAULT_MERGE_THRESHOLD
    }
    pub fn reps() -> usize {
        DEFAULT_REPS
    }
    pub fn near_dup_threshold() -> f64 {
        DEFAULT_NEAR_DUP_THRESHOLD
    }
    pub fn eval_fraction() -> f64 {
        DEFAULT_EVAL_FRACTION
    }
    pub fn fmr_targets() -> Vec<f64> {
        DEFAULT_FMR_TARGETS.to_vec()
    }
    pub fn gender_agreement() -> f64 {
        DEFAULT_AGREEMENT
    }
    pub fn yes() -> bool {
        true
    }
    pub fn block_rows() -> usize {
        DEFAULT_BLOCK_ROWS
    }
    pub fn roc_points() -> usize {
        DEFAULT_ROC_POINTS
    }
    pub fn histogram_bins() -> usize {
        DEFAULT_HISTOGRAM_BINS
    }
}

impl PipelineConfig {
    /// Defaults everywhere except the paths.
    pub fn new(manifest_path: impl Into<PathBuf>, embeddings_path: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            manifest_path: manifest_path.into(),
            embeddings_path: embeddings_path.into(),
            output_dir: output_dir.into(),
            pose_limits: PoseLimits::default(),
            min_images: defaults::min_images(),
            merge_threshold: defaults::merge_threshold(),
            reps: defaults::reps(),
            near_dup_threshold: defaults::near_dup_threshold(),
            min_gap: 0.0,
            eval_fraction: defaults::eval_fraction(),
            fmr_targets: defaults::fmr_targets(),
            seed: 0,
            gender_agreement: defaults::gender_agreement(),
            gender_overrides: None,
            group_split: true,
            block_rows: defaults::block_rows(),
            roc_points: defaults::roc_points(),
            histogram_bins: defaults::histogram_bins(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let cfg: PipelineConfig = serde_json::from_str(&text).map_err(json_err(path))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(io_err(path))
    }

    fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// SHA-256 of the canonical JSON form; guards resumes against edits.
    pub fn digest(&self) -> String {
        Sha256::digest(self.to_json().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn sim(&self) -> SimConfig {
        SimConfig {
            block_rows: self.block_rows,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        for (name, p) in [
            ("manifest_path", &self.manifest_path),
            ("embeddings_path", &self.embeddings_path),
            ("output_dir", &self.output_dir),
        ] {
            if p.as_os_str().is_empty() {
                return bad(format!("{name} is empty"));
            }
        }
        self.pose_limits.validate()?;
        for (name, v) in [
            ("merge_threshold", self.merge_threshold),
            ("near_dup_threshold", self.near_dup_threshold),
            ("gender_agreement", self.gender_agreement),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return bad(format!("{name} must be in (0, 1), got {v}"));
            }
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction <= 1.0) {
            return bad(format!("eval_fraction must be in (0, 1], got {}", self.eval_fraction));
        }
        if self.fmr_targets.is_empty() || self.fmr_targets.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
            return bad(format!("fmr_targets must be nonempty and in (0, 1), got {:?}", self.fmr_targets));
        }
        if !(self.min_gap >= 0.0) {
            return bad(format!("min_gap must be >= 0, got {}", self.min_gap));
        }
        for (name, v) in [
            ("min_images", self.min_images),
            ("reps", self.reps),
            ("block_rows", self.block_rows),
            ("roc_points", self.roc_points),
            ("histogram_bins", self.histogram_bins),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        Ok(())
    }
}
