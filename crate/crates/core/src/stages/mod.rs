//! The curation transformations. Each maps a manifest (and, where needed,
//! the embedding store) to a smaller or relabeled manifest plus a
//! [`StageReport`](crate::report::StageReport).

mod merge;
mod mislabel;
mod near_dup;
mod pose;

use std::collections::HashSet;

use crate::manifest::Manifest;
use crate::report::{Removal, RemovalReason};

pub use merge::{
    apply_merges, generate_merge_candidates, latest_decisions, read_candidates, write_candidates,
    Decision, MergeCandidate, DEFAULT_MERGE_THRESHOLD,
};
pub use mislabel::{gap_cut, mislabel_clean};
pub use near_dup::{near_duplicate_clean, pivot_sweep, DEFAULT_NEAR_DUP_THRESHOLD};
pub use pose::{pose_filter, PoseLimits, DEFAULT_MAX_ABS_ANGLE};

pub const DEFAULT_MIN_IMAGES: usize = 10;

/// Removes the given image ids, returning the reduced manifest and the
/// removals in manifest order.
fn remove_ids(
    manifest: &Manifest,
    ids: &HashSet<&str>,
    reason: RemovalReason,
) -> (Manifest, Vec<Removal>) {
    let removed = manifest
        .records()
        .iter()
        .filter(|r| ids.contains(r.image_id.as_str()))
        .map(|r| Removal {
            image_id: r.image_id.clone(),
            reason,
        })
        .collect();
    (
        manifest.retain(|r| !ids.contains(r.image_id.as_str())),
        removed,
    )
}
