use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{ImageRecord, Manifest};
use crate::report::{filter_min_images, Removal, RemovalReason, StageReport};

pub const DEFAULT_MAX_ABS_ANGLE: f64 = 15.0;

/// Largest accepted absolute head-pose angles, in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseLimits {
    pub max_abs_roll: f64,
    pub max_abs_pitch: f64,
    pub max_abs_yaw: f64,
}

impl Default for PoseLimits {
    fn default() -> Self {
        PoseLimits {
            max_abs_roll: DEFAULT_MAX_ABS_ANGLE,
            max_abs_pitch: DEFAULT_MAX_ABS_ANGLE,
            max_abs_yaw: DEFAULT_MAX_ABS_ANGLE,
        }
    }
}

impl PoseLimits {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("max_abs_roll", self.max_abs_roll),
            ("max_abs_pitch", self.max_abs_pitch),
            ("max_abs_yaw", self.max_abs_yaw),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// An angle exactly at the limit is accepted. NaN angles are not.
    pub fn accepts(&self, r: &ImageRecord) -> bool {
        r.roll.abs() <= self.max_abs_roll
            && r.pitch.abs() <= self.max_abs_pitch
            && r.yaw.abs() <= self.max_abs_yaw
    }
}

pub fn pose_filter(
    manifest: &Manifest,
    limits: PoseLimits,
    min_images: usize,
) -> Result<(Manifest, StageReport)> {
    limits.validate()?;
    if min_images == 0 {
        return Err(Error::InvalidParameter(
            "min_images must be at least 1".into(),
        ));
    }
    let mut removed: Vec<Removal> = manifest
        .records()
        .iter()
        .filter(|r| !limits.accepts(r))
        .map(|r| Removal {
            image_id: r.image_id.clone(),
            reason: RemovalReason::Pose,
        })
        .collect();
    let frontal = manifest.retain(|r| limits.accepts(r));
    let (out, small) = filter_min_images(&frontal, min_images);
    removed.extend(small);
    let report = StageReport::new("pose", manifest, &out, removed, Vec::new());
    Ok((out, report))
}
