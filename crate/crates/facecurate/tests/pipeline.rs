mod common;

use std::collections::BTreeMap;

use common::{clean_corpus, decide_from_truth, rerun, setup, snapshot};
use facecurate::pipeline::{
    check_chain, compare_runs, resume_pipeline, run_pipeline, RunOptions, RunOutcome, RunSummary, CANDIDATES_FILE,
    CHECKPOINT_FILE, DECISIONS_FILE,
};
use facecurate::{PipelineConfig, PipelineError};
use facecurate_core::manifest::write_gender_labels;
use facecurate_core::stages::{read_candidates, write_candidates, Decision};
use facecurate_core::synth::SynthConfig;
use facecurate_core::{load_manifest, GenderLabel, StageReport};

fn complete(outcome: RunOutcome) -> RunSummary {
    match outcome {
        RunOutcome::Complete(s) => *s,
        RunOutcome::AwaitingReview { checkpoint, .. } => {
            panic!("halted with {} candidates", checkpoint.candidates)
        }
    }
}

/// Everything a run writes except files that echo its own paths.
fn outputs(dir: &std::path::Path) -> Vec<(std::path::PathBuf, Vec<u8>)> {
    snapshot(dir)
        .into_iter()
        .filter(|(p, _)| !["config.json", "summary.json", "resume.json"].contains(&p.to_str().unwrap()))
        .collect()
}

#[test]
fn clean_corpus_passes_every_stage_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, _) = setup(dir.path(), &clean_corpus(20), "run");
    let cfg = PipelineConfig { min_gap: 0.05, ..cfg };
    let summary = complete(run_pipeline(&cfg, &RunOptions::default()).unwrap());
    let names: Vec<&str> = summary.stages.iter().map(|s| s.stage_name.as_str()).collect();
    assert_eq!(names, ["pose", "mislabel", "merge", "near_duplicate"]);
    for s in &summary.stages {
        assert_eq!((s.images_before, s.images_after), (480, 480), "{}", s.stage_name);
        assert_eq!((s.subjects_before, s.subjects_after), (20, 20));
    }
    assert_eq!(summary.merge_candidates, 0);
    // Same manifest before and after, so identical evaluation.
    for row in &summary.curation_effect {
        assert_eq!(row.tpr_delta(), 0.0);
        assert_eq!(row.threshold_delta(), 0.0);
    }
    assert_eq!(summary, RunSummary::load(&cfg.output_dir).unwrap());
    assert!(cfg.output_dir.join(DECISIONS_FILE).exists());
    assert!(!cfg.output_dir.join(CHECKPOINT_FILE).exists());
}

#[test]
fn split_identities_halt_then_resume_merges() {
    let dir = tempfile::tempdir().unwrap();
    let synth = SynthConfig {
        split_pairs: 2,
        ..clean_corpus(12)
    };
    let (cfg, truth) = setup(dir.path(), &synth, "run");
    let outcome = run_pipeline(&cfg, &RunOptions::default()).unwrap();
    let RunOutcome::AwaitingReview { run_dir, checkpoint } = outcome else {
        panic!("expected a review halt");
    };
    assert_eq!(checkpoint.candidates, 2);
    let candidates = read_candidates(run_dir.join(CANDIDATES_FILE)).unwrap();
    assert!(candidates.iter().all(|c| c.decision == Decision::Pending));
    let mut pairs: Vec<(String, String)> = candidates.iter().map(|c| c.key()).collect();
    pairs.sort();
    assert_eq!(pairs, truth.split_pairs);

    let decisions = dir.path().join("decisions.jsonl");
    decide_from_truth(&run_dir.join(CANDIDATES_FILE), &truth, &decisions);
    let summary = resume_pipeline(&run_dir, &decisions).unwrap();
    let merge = &summary.stages[2];
    assert_eq!(merge.subjects_before - merge.subjects_after, 2);
    assert_eq!(merge.images_before, merge.images_after);
    assert_eq!(merge.merged_subjects.len(), 2);
    assert!(merge.merged_subjects.iter().all(|m| m.survivor.ends_with('a') && m.absorbed.ends_with('b')));
    check_chain(summary.stages[0].images_before, &summary.stages).unwrap();

    // A second resume is refused: the run is append-only.
    assert!(matches!(resume_pipeline(&run_dir, &decisions), Err(PipelineError::NotAwaitingReview(_))));

    // Decisions supplied up front give the same result as halting and resuming.
    let direct_cfg = rerun(&cfg, dir.path(), "direct");
    let direct = complete(
        run_pipeline(
            &direct_cfg,
            &RunOptions {
                decisions: Some(decisions.clone()),
                auto_decide: false,
            },
        )
        .unwrap(),
    );
    assert_eq!(direct.stages, summary.stages);
    assert_eq!(direct.evaluation, summary.evaluation);
    assert_eq!(direct.curation_effect, summary.curation_effect);
    assert_eq!(outputs(&run_dir), outputs(&direct_cfg.output_dir));
}

#[test]
fn resume_requires_every_decision_and_unchanged_config() {
    let dir = tempfile::tempdir().unwrap();
    let synth = SynthConfig {
        split_pairs: 2,
        ..clean_corpus(12)
    };
    let (cfg, truth) = setup(dir.path(), &synth, "run");
    let RunOutcome::AwaitingReview { run_dir, .. } = run_pipeline(&cfg, &RunOptions::default()).unwrap() else {
        panic!("expected a review halt");
    };
    let decisions = dir.path().join("partial.jsonl");
    let mut decided = decide_from_truth(&run_dir.join(CANDIDATES_FILE), &truth, &decisions);
    decided[1].decision = Decision::Pending;
    write_candidates(&decided, &decisions).unwrap();
    let err = resume_pipeline(&run_dir, &decisions).unwrap_err();
    assert!(matches!(err, PipelineError::MissingDecisions { pending: 1, total: 2, .. }), "{err}");

    // A later log entry overrides an earlier one for the same pair.
    decided[1].decision = Decision::SamePerson;
    let mut log = decided.clone();
    log[0].decision = Decision::Pending;
    log.push(decided[0].clone());
    write_candidates(&log, &decisions).unwrap();

    let edited = PipelineConfig {
        reps: 4,
        ..PipelineConfig::load(run_dir.join("config.json")).unwrap()
    };
    edited.save(run_dir.join("config.json")).unwrap();
    assert!(matches!(resume_pipeline(&run_dir, &decisions), Err(PipelineError::ConfigChanged { .. })));
    cfg.save(run_dir.join("config.json")).unwrap();
    let summary = resume_pipeline(&run_dir, &decisions).unwrap();
    assert_eq!(summary.stages[2].merged_subjects.len(), 2);
}

#[test]
fn auto_decide_never_merges() {
    let dir = tempfile::tempdir().unwrap();
    let synth = SynthConfig {
        split_pairs: 2,
        ..clean_corpus(12)
    };
    let (cfg, _) = setup(dir.path(), &synth, "run");
    let summary = complete(
        run_pipeline(
            &cfg,
            &RunOptions {
                decisions: None,
                auto_decide: true,
            },
        )
        .unwrap(),
    );
    assert!(summary.auto_decided);
    assert_eq!(summary.merge_candidates, 2);
    assert!(summary.stages[2].merged_subjects.is_empty());
    let log = read_candidates(cfg.output_dir.join(DECISIONS_FILE)).unwrap();
    assert!(log.iter().all(|c| c.decision == Decision::DifferentPerson && c.decided_by.is_some()));
}

#[test]
fn refuses_to_overwrite_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, _) = setup(dir.path(), &clean_corpus(6), "run");
    complete(run_pipeline(&cfg, &RunOptions::default()).unwrap());
    assert!(matches!(run_pipeline(&cfg, &RunOptions::default()), Err(PipelineError::OutputExists(_))));
}

#[test]
fn ambiguous_gender_blocks_group_split_until_overridden() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, _) = setup(dir.path(), &clean_corpus(6), "run");
    // Rewrite every vote of one subject to unknown.
    let mut text = std::fs::read_to_string(&cfg.manifest_path).unwrap();
    text = text
        .lines()
        .map(|l| {
            if l.starts_with("id00002_") {
                let mut cols: Vec<&str> = l.split(',').collect();
                cols[6] = "unknown";
                cols.join(",")
            } else {
                l.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
        + "\n";
    std::fs::write(&cfg.manifest_path, text).unwrap();

    match run_pipeline(&cfg, &RunOptions::default()) {
        Err(PipelineError::Core(facecurate_core::Error::UnlabeledSubjects(s))) => assert_eq!(s, ["id00002"]),
        other => panic!("unexpected {other:?}"),
    }
    let labels = facecurate_core::manifest::load_gender_labels(cfg.output_dir.join("00_gender_labels.csv")).unwrap();
    assert_eq!(labels["id00002"], GenderLabel::NeedsReview);

    let overrides = dir.path().join("overrides.csv");
    let manual = BTreeMap::from([("id00002".to_string(), GenderLabel::Male)]);
    write_gender_labels(manual.iter(), &overrides).unwrap();
    let cfg = PipelineConfig {
        gender_overrides: Some(overrides),
        ..rerun(&cfg, dir.path(), "run2")
    };
    let summary = complete(run_pipeline(&cfg, &RunOptions::default()).unwrap());
    assert_eq!(summary.phase("after").count(), 2);

    // Without the split a single "all" group needs no labels.
    let pooled = PipelineConfig {
        gender_overrides: None,
        group_split: false,
        ..rerun(&cfg, dir.path(), "run3")
    };
    let summary = complete(run_pipeline(&pooled, &RunOptions::default()).unwrap());
    let groups: Vec<&str> = summary.phase("after").map(|g| g.group.as_str()).collect();
    assert_eq!(groups, ["all"]);
}

#[test]
fn compare_runs_reports_deltas_and_rejects_mismatches() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, _) = setup(dir.path(), &clean_corpus(8), "a");
    let a = complete(run_pipeline(&cfg, &RunOptions::default()).unwrap());
    let b = complete(run_pipeline(&rerun(&cfg, dir.path(), "b"), &RunOptions::default()).unwrap());
    let rows = compare_runs(&a, &b).unwrap();
    assert_eq!(rows.len(), 2 * 3);
    assert!(rows.iter().all(|r| r.tpr_delta() == 0.0 && r.threshold_delta() == 0.0));

    let c_cfg = PipelineConfig {
        fmr_targets: vec![1e-2],
        ..rerun(&cfg, dir.path(), "c")
    };
    let c = complete(run_pipeline(&c_cfg, &RunOptions::default()).unwrap());
    assert!(matches!(compare_runs(&a, &c), Err(PipelineError::Mismatch(_))));
}

#[test]
fn planted_noise_lifts_accuracy_and_lowers_thresholds() {
    let dir = tempfile::tempdir().unwrap();
    let synth = SynthConfig {
        identities: 40,
        dim: 64,
        images_per_subject: 30,
        split_pairs: 2,
        profile_images: 6,
        seed: 5,
        ..SynthConfig::default()
    };
    let (cfg, truth) = setup(dir.path(), &synth, "run");
    let RunOutcome::AwaitingReview { run_dir, .. } = run_pipeline(&cfg, &RunOptions::default()).unwrap() else {
        panic!("expected a review halt");
    };
    let decisions = dir.path().join("d.jsonl");
    decide_from_truth(&run_dir.join(CANDIDATES_FILE), &truth, &decisions);
    let summary = resume_pipeline(&run_dir, &decisions).unwrap();
    let rows: Vec<_> = summary.curation_effect.iter().filter(|r| r.fmr == 1e-3).collect();
    assert_eq!(rows.len(), 2);
    for r in rows {
        assert!(r.tpr_after > r.tpr_before, "{r:?}");
        assert!(r.threshold_after < r.threshold_before, "{r:?}");
    }
    let last = load_manifest(run_dir.join("05_near_duplicate.csv")).unwrap();
    assert_eq!(last.len(), summary.stages[3].images_after);
    let report = StageReport::read_json(run_dir.join("05_near_duplicate.json")).unwrap();
    assert_eq!(&report, &summary.stages[3]);
}

#[test]
fn output_is_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let synth = SynthConfig {
        identities: 16,
        dim: 32,
        images_per_subject: 20,
        split_pairs: 1,
        profile_images: 4,
        seed: 8,
        ..SynthConfig::default()
    };
    let (cfg, truth) = setup(dir.path(), &synth, "probe");
    // Learn the candidates once to build a decision file for both runs.
    let RunOutcome::AwaitingReview { run_dir, .. } = run_pipeline(&cfg, &RunOptions::default()).unwrap() else {
        panic!("expected a review halt");
    };
    let decisions = dir.path().join("d.jsonl");
    decide_from_truth(&run_dir.join(CANDIDATES_FILE), &truth, &decisions);

    let run_with = |threads: usize, name: &str| {
        let cfg = rerun(&cfg, dir.path(), name);
        let opts = RunOptions {
            decisions: Some(decisions.clone()),
            auto_decide: false,
        };
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        complete(pool.install(|| run_pipeline(&cfg, &opts)).unwrap());
        outputs(&cfg.output_dir)
    };
    let one = run_with(1, "t1");
    let four = run_with(4, "t4");
    assert!(one.len() > 15);
    assert_eq!(one, four);
}
