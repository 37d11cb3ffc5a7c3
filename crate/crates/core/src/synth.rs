//! Synthetic labeled corpora with known ground truth, for tests and demos.
//!
//! Each identity is a random unit center; images are `center + noise`,
//! normalized, with the noise scaled so that two images of the same
//! identity have expected cosine `t` (drawn per identity from
//! `intra_cosine`). Planted problems: images of another identity filed under
//! a subject (mislabels), tight perturbations of existing images
//! (near-duplicates), identities split across two subject folders, and a
//! few images with out-of-range pose.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embeddings::{normalize, write_embeddings, EmbeddingStore};
use crate::error::{io_err, Error, Result};
use crate::manifest::{write_manifest, GenderVote, ImageRecord, Manifest};
use crate::seed::rng_for;
use crate::simkit::cosine_unchecked;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub identities: usize,
    pub dim: usize,
    /// Images per subject folder before near-duplicates are added.
    pub images_per_subject: usize,
    pub mislabel_rate: f64,
    pub near_dup_rate: f64,
    /// Identities whose images are filed under two subject folders.
    pub split_pairs: usize,
    /// Images given a yaw beyond the default pose gate, across the corpus.
    pub profile_images: usize,
    /// Range of the per-identity expected within-identity cosine.
    pub intra_cosine: (f64, f64),
    /// Expected cosine between a near-duplicate and its source.
    pub near_dup_cosine: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            identities: 200,
            dim: 128,
            images_per_subject: 40,
            mislabel_rate: 0.05,
            near_dup_rate: 0.10,
            split_pairs: 4,
            profile_images: 12,
            intra_cosine: (0.72, 0.88),
            near_dup_cosine: 0.98,
            seed: 7,
        }
    }
}

impl SynthConfig {
    /// About 100k images at dim 512.
    pub fn scale() -> Self {
        SynthConfig {
            identities: 1000,
            dim: 512,
            images_per_subject: 91,
            split_pairs: 10,
            profile_images: 200,
            ..SynthConfig::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.identities < 2 || self.dim < 2 || self.images_per_subject < 2 {
            return bad(
                "synthetic corpus needs at least 2 identities, dim 2 and 2 images per subject",
            );
        }
        if self.split_pairs > self.identities {
            return bad("more split pairs than identities");
        }
        let (lo, hi) = self.intra_cosine;
        if !(0.0 < lo && lo <= hi && hi < 1.0)
            || !(0.0 < self.near_dup_cosine && self.near_dup_cosine < 1.0)
        {
            return bad("cosine targets must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.mislabel_rate) || !(0.0..=1.0).contains(&self.near_dup_rate) {
            return bad("rates must lie in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImageKind {
    Genuine,
    /// Drawn from `identity`'s cluster but filed under another subject.
    Mislabeled {
        identity: usize,
    },
    /// Perturbed copy of the image at `source` (an embedding index).
    NearDuplicate {
        source: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageTruth {
    pub image_id: String,
    pub subject_id: String,
    /// Identity whose cluster the embedding came from.
    pub identity: usize,
    #[serde(flatten)]
    pub kind: ImageKind,
    pub profile: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub images: Vec<ImageTruth>,
    /// Identity behind each subject folder.
    pub subject_identity: BTreeMap<String, usize>,
    /// Subject folders that share an identity, `(a, b)` with `a < b`.
    pub split_pairs: Vec<(String, String)>,
}

impl GroundTruth {
    pub fn is_mislabeled(&self, image_id: &str) -> bool {
        self.images
            .iter()
            .any(|t| t.image_id == image_id && matches!(t.kind, ImageKind::Mislabeled { .. }))
    }

    /// Two subject folders hold the same identity.
    pub fn same_identity(&self, a: &str, b: &str) -> bool {
        matches!((self.subject_identity.get(a), self.subject_identity.get(b)), (Some(x), Some(y)) if x == y)
    }
}

pub struct SynthCorpus {
    pub manifest: Manifest,
    pub store: EmbeddingStore,
    pub truth: GroundTruth,
}

impl SynthCorpus {
    /// Writes `manifest.csv`, `embeddings.bin` and `truth.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_manifest(&self.manifest, dir.join("manifest.csv"))?;
        write_embeddings(&self.store, dir.join("embeddings.bin"))?;
        let path = dir.join("truth.json");
        let file = File::create(&path).map_err(io_err(&path))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, &self.truth).map_err(|source| Error::Json {
            path: path.clone(),
            source,
        })?;
        w.write_all(b"\n")
            .and_then(|_| w.flush())
            .map_err(io_err(&path))
    }
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, sigma: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal) * sigma)
        .collect()
}

fn to_unit(v: &[f64]) -> Vec<f32> {
    let mut out: Vec<f32> = v.iter().map(|&x| x as f32).collect();
    normalize(&mut out);
    out
}

/// A unit vector whose expected cosine with `center` is `sqrt(t)`, so two
/// such draws have expected cosine `t`.
fn sample_around(rng: &mut ChaCha8Rng, center: &[f64], t: f64) -> Vec<f32> {
    let sigma = ((1.0 / t - 1.0) / center.len() as f64).sqrt();
    let noise = gaussian(rng, center.len(), sigma);
    to_unit(
        &center
            .iter()
            .zip(noise)
            .map(|(c, n)| c + n)
            .collect::<Vec<_>>(),
    )
}

/// Perturbation of `source` with expected cosine `c`; redrawn until the
/// cosine is at least 0.95.
fn perturb(rng: &mut ChaCha8Rng, source: &[f32], c: f64) -> Vec<f32> {
    let sigma = ((1.0 / (c * c) - 1.0) / source.len() as f64).sqrt();
    loop {
        let noise = gaussian(rng, source.len(), sigma);
        let v: Vec<f64> = source
            .iter()
            .zip(noise)
            .map(|(&s, n)| s as f64 + n)
            .collect();
        let v = to_unit(&v);
        if cosine_unchecked(&v, source) >= 0.95 {
            return v;
        }
    }
}

fn vote(rng: &mut ChaCha8Rng, male: bool) -> GenderVote {
    let (right, wrong) = if male {
        (GenderVote::Male, GenderVote::Female)
    } else {
        (GenderVote::Female, GenderVote::Male)
    };
    match rng.random::<f64>() {
        x if x < 0.85 => right,
        x if x < 0.95 => GenderVote::Unknown,
        _ => wrong,
    }
}

struct Folder {
    subject: String,
    identity: usize,
}

struct DraftImage {
    image_id: String,
    vector: Vec<f32>,
    identity: usize,
    kind: DraftKind,
    yaw: f64,
    pitch: f64,
    roll: f64,
    vote: GenderVote,
}

enum DraftKind {
    Genuine,
    Mislabeled,
    /// Position of the source image within the folder draft.
    NearDuplicate(usize),
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, "synth/centers");
    let centers: Vec<Vec<f64>> = (0..cfg.identities)
        .map(|_| {
            let v = gaussian(&mut rng, cfg.dim, 1.0);
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    let intra: Vec<f64> = (0..cfg.identities)
        .map(|_| rng.random_range(cfg.intra_cosine.0..=cfg.intra_cosine.1))
        .collect();
    // Even identities are male, odd female.
    let male = |identity: usize| identity.is_multiple_of(2);

    let mut folders: Vec<Folder> = Vec::new();
    for identity in 0..cfg.identities {
        let suffixes: &[&str] = if identity < cfg.split_pairs {
            &["a", "b"]
        } else {
            &[""]
        };
        for s in suffixes {
            folders.push(Folder {
                subject: format!("id{identity:05}{s}"),
                identity,
            });
        }
    }

    let mislabels = (cfg.mislabel_rate * cfg.images_per_subject as f64).round() as usize;
    let dups = (cfg.near_dup_rate * cfg.images_per_subject as f64).round() as usize;
    let drafts: Vec<Vec<DraftImage>> = folders
        .par_iter()
        .map(|f| {
            let mut rng = rng_for(cfg.seed, &format!("synth/subject/{}", f.subject));
            let mut images: Vec<DraftImage> = Vec::new();
            let draft = |rng: &mut ChaCha8Rng, vector, identity, kind| DraftImage {
                image_id: String::new(),
                vector,
                identity,
                kind,
                yaw: rng.random_range(-10.0..10.0),
                pitch: rng.random_range(-10.0..10.0),
                roll: rng.random_range(-10.0..10.0),
                vote: vote(rng, male(identity)),
            };
            for _ in mislabels..cfg.images_per_subject {
                let v = sample_around(&mut rng, &centers[f.identity], intra[f.identity]);
                images.push(draft(&mut rng, v, f.identity, DraftKind::Genuine));
            }
            for _ in 0..mislabels {
                // Another identity of the same gender, so group-split
                // evaluation sees the confusion.
                let other = loop {
                    let o = rng.random_range(0..cfg.identities);
                    if o != f.identity && (male(o) == male(f.identity) || cfg.identities < 3) {
                        break o;
                    }
                };
                let v = sample_around(&mut rng, &centers[other], intra[other]);
                images.push(draft(&mut rng, v, other, DraftKind::Mislabeled));
            }
            let genuine = cfg.images_per_subject - mislabels;
            for _ in 0..dups.min(genuine) {
                let src = rng.random_range(0..genuine);
                let v = perturb(&mut rng, &images[src].vector, cfg.near_dup_cosine);
                images.push(draft(
                    &mut rng,
                    v,
                    f.identity,
                    DraftKind::NearDuplicate(src),
                ));
            }
            // Shuffle which id each image receives so kinds are not
            // recoverable from id order.
            let mut numbers: Vec<usize> = (0..images.len()).collect();
            numbers.shuffle(&mut rng);
            for (img, n) in images.iter_mut().zip(numbers) {
                img.image_id = format!("{}_{n:04}", f.subject);
            }
            images
        })
        .collect();

    // Flatten; records keep folder order, embeddings are indexed in the same order.
    let mut records = Vec::new();
    let mut data = Vec::with_capacity(drafts.iter().map(Vec::len).sum::<usize>() * cfg.dim);
    let mut truth = Vec::new();
    for (f, images) in folders.iter().zip(drafts) {
        let base = records.len();
        for img in images {
            let kind = match img.kind {
                DraftKind::Genuine => ImageKind::Genuine,
                DraftKind::Mislabeled => ImageKind::Mislabeled {
                    identity: img.identity,
                },
                DraftKind::NearDuplicate(src) => ImageKind::NearDuplicate { source: base + src },
            };
            truth.push(ImageTruth {
                image_id: img.image_id.clone(),
                subject_id: f.subject.clone(),
                identity: img.identity,
                kind,
                profile: false,
            });
            records.push(ImageRecord {
                source_path: format!("{}/{}.jpg", f.subject, img.image_id),
                image_id: img.image_id,
                subject_id: f.subject.clone(),
                embedding_index: records.len(),
                roll: round2(img.roll),
                pitch: round2(img.pitch),
                yaw: round2(img.yaw),
                gender_vote: img.vote,
            });
            data.extend(img.vector);
        }
    }

    // Profile-pose images are taken from genuine images.
    let mut rng = rng_for(cfg.seed, "synth/profile");
    let mut genuine: Vec<usize> = (0..records.len())
        .filter(|&i| truth[i].kind == ImageKind::Genuine)
        .collect();
    genuine.shuffle(&mut rng);
    for &i in genuine.iter().take(cfg.profile_images) {
        records[i].yaw = if rng.random::<bool>() { 60.0 } else { -45.0 };
        truth[i].profile = true;
    }

    let subject_identity = folders
        .iter()
        .map(|f| (f.subject.clone(), f.identity))
        .collect();
    let split_pairs = (0..cfg.split_pairs)
        .map(|i| (format!("id{i:05}a"), format!("id{i:05}b")))
        .collect();
    Ok(SynthCorpus {
        manifest: Manifest::new(records)?,
        store: EmbeddingStore::new(cfg.dim, data)?,
        truth: GroundTruth {
            images: truth,
            subject_identity,
            split_pairs,
        },
    })
}

/// Keeps the manifest CSV short and its values exactly representable on re-read.
fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}
