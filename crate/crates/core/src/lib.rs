//! Face dataset curation: manifests and embeddings, similarity kernels,
//! cleaning stages, and verification-mode evaluation.

pub mod embeddings;
pub mod error;
pub mod eval;
pub mod gender;
pub mod manifest;
pub mod report;
pub mod seed;
pub mod simkit;
pub mod stages;
pub mod synth;

pub use embeddings::{load_embeddings, write_embeddings, EmbeddingStore};
pub use error::{Error, Result};
pub use manifest::{load_manifest, write_manifest, GenderLabel, GenderVote, ImageRecord, Manifest};
pub use report::{filter_min_images, Removal, RemovalReason, StageReport, SubjectMerge};
