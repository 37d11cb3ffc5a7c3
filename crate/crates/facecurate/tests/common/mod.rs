#![allow(dead_code)]

use std::path::{Path, PathBuf};

use facecurate::PipelineConfig;
use facecurate_core::stages::{read_candidates, Decision, MergeCandidate};
use facecurate_core::synth::{generate, GroundTruth, SynthConfig};

pub fn clean_corpus(subjects: usize) -> SynthConfig {
    SynthConfig {
        identities: subjects,
        dim: 128,
        images_per_subject: 24,
        mislabel_rate: 0.0,
        near_dup_rate: 0.0,
        split_pairs: 0,
        profile_images: 0,
        intra_cosine: (0.72, 0.8),
        seed: 3,
        ..SynthConfig::default()
    }
}

/// Writes the corpus under `dir/corpus` and returns a config with outputs
/// going to `dir/<run>`.
pub fn setup(dir: &Path, synth: &SynthConfig, run: &str) -> (PipelineConfig, GroundTruth) {
    let corpus = generate(synth).unwrap();
    let data = dir.join("corpus");
    corpus.write(&data).unwrap();
    let cfg = PipelineConfig {
        seed: 9,
        ..PipelineConfig::new(data.join("manifest.csv"), data.join("embeddings.bin"), dir.join(run))
    };
    (cfg, corpus.truth)
}

pub fn rerun(cfg: &PipelineConfig, dir: &Path, run: &str) -> PipelineConfig {
    PipelineConfig {
        output_dir: dir.join(run),
        ..cfg.clone()
    }
}

/// Decides every candidate from ground truth and writes the decision file.
pub fn decide_from_truth(candidates: &Path, truth: &GroundTruth, out: &Path) -> Vec<MergeCandidate> {
    let decided: Vec<MergeCandidate> = read_candidates(candidates)
        .unwrap()
        .into_iter()
        .map(|c| MergeCandidate {
            decision: if truth.same_identity(&c.subject_a, &c.subject_b) {
                Decision::SamePerson
            } else {
                Decision::DifferentPerson
            },
            decided_by: Some("tester".into()),
            ..c
        })
        .collect();
    facecurate_core::stages::write_candidates(&decided, out).unwrap();
    decided
}

/// Relative path → bytes for every file under `dir`, sorted.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
            }
        }
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out);
    out.sort();
    out
}
