//! Stage sequencing over a run directory.
//!
//! A run directory is append-only. Files are numbered in stage order:
//!
//! ```text
//! config.json                 config echo
//! 00_gender_labels.csv        subject gender labels used for grouping
//! 01_pose.{csv,json}          manifest and report after each stage
//! 02_mislabel.{csv,json}
//! 03_merge_candidates.jsonl   pending candidates, highest score first
//! resume.json                 present when the run halted for review
//! 04_decisions.jsonl          the decisions the merge stage consumed
//! 04_merge.{csv,json}
//! 05_near_duplicate.{csv,json}
//! eval/                       score sets, ROC and histogram CSVs per phase/group
//! summary.json
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use facecurate_core::eval::{
    build_group_scores, evaluation_groups, histogram, write_histogram_csv, write_roc_csv, write_score_set,
    CoverageWarning, Grouping, SortedScores, TprAtFmr,
};
use facecurate_core::gender::{apply_overrides, assign_gender};
use facecurate_core::manifest::{load_gender_labels, write_gender_labels};
use facecurate_core::stages::{
    apply_merges, generate_merge_candidates, latest_decisions, mislabel_clean, near_duplicate_clean, pose_filter,
    read_candidates, write_candidates, Decision, MergeCandidate,
};
use facecurate_core::{load_embeddings, load_manifest, write_manifest, EmbeddingStore, Manifest, StageReport};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{io_err, json_err, PipelineError, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const CONFIG_FILE: &str = "config.json";
pub const GENDER_FILE: &str = "00_gender_labels.csv";
pub const CANDIDATES_FILE: &str = "03_merge_candidates.jsonl";
pub const CHECKPOINT_FILE: &str = "resume.json";
pub const DECISIONS_FILE: &str = "04_decisions.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const EVAL_DIR: &str = "eval";

const POSE: &str = "01_pose";
const MISLABEL: &str = "02_mislabel";
const MERGE: &str = "04_merge";
const NEAR_DUP: &str = "05_near_duplicate";

/// Manifest the reviewer sees: subjects as they stand when candidates are generated.
pub const REVIEW_MANIFEST_FILE: &str = "02_mislabel.csv";

const AUTO_DECIDER: &str = "auto-decide (CI only; not a manual review)";

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Decision file to apply without halting.
    pub decisions: Option<PathBuf>,
    /// Mark every candidate `different_person` instead of halting. Skips the
    /// manual verification step, so it is for CI and smoke tests only.
    pub auto_decide: bool,
}

/// Written when a run halts for review; `resume` checks it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewCheckpoint {
    pub config_digest: String,
    pub candidates_file: String,
    pub manifest_file: String,
    pub candidates: usize,
}

#[derive(Debug)]
pub enum RunOutcome {
    AwaitingReview { run_dir: PathBuf, checkpoint: ReviewCheckpoint },
    Complete(Box<RunSummary>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupEvaluation {
    /// `before` (input manifest) or `after` (curated manifest).
    pub phase: String,
    pub group: String,
    pub authentic_count: usize,
    pub impostor_count: usize,
    /// Score file, relative to the run directory.
    pub score_file: String,
    pub roc_file: String,
    pub at_fmr: Vec<TprAtFmr>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub group: String,
    pub fmr: f64,
    pub tpr_before: f64,
    pub tpr_after: f64,
    pub threshold_before: f64,
    pub threshold_after: f64,
    pub unsupported_before: bool,
    pub unsupported_after: bool,
}

impl ComparisonRow {
    pub fn tpr_delta(&self) -> f64 {
        self.tpr_after - self.tpr_before
    }

    pub fn threshold_delta(&self) -> f64 {
        self.threshold_after - self.threshold_before
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub tool_version: String,
    pub config: PipelineConfig,
    pub stages: Vec<StageReport>,
    pub merge_candidates: usize,
    pub auto_decided: bool,
    pub evaluation: Vec<GroupEvaluation>,
    pub coverage_warnings: Vec<CoverageWarning>,
    /// Before-vs-after rows for this run's own evaluation phases.
    pub curation_effect: Vec<ComparisonRow>,
}

impl RunSummary {
    pub fn load(run_dir: impl AsRef<Path>) -> Result<Self> {
        read_json(&run_dir.as_ref().join(SUMMARY_FILE))
    }

    pub fn phase(&self, phase: &str) -> impl Iterator<Item = &GroupEvaluation> + '_ {
        let phase = phase.to_string();
        self.evaluation.iter().filter(move |g| g.phase == phase)
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(json_err(path))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(json_err(path))?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_err(path))
}

fn write_stage(dir: &Path, name: &str, manifest: &Manifest, report: &StageReport) -> Result<()> {
    write_manifest(manifest, dir.join(format!("{name}.csv")))?;
    report.write_json(dir.join(format!("{name}.json")))?;
    info!(
        "{}: {} -> {} images, {} -> {} subjects",
        report.stage_name, report.images_before, report.images_after, report.subjects_before, report.subjects_after
    );
    Ok(())
}

fn load_inputs(cfg: &PipelineConfig) -> Result<(Manifest, EmbeddingStore)> {
    let manifest = load_manifest(&cfg.manifest_path)?;
    let store = load_embeddings(&cfg.embeddings_path, None)?;
    manifest.check_store(&store)?;
    info!("loaded {} images of {} subjects, {} embeddings (dim {})", manifest.len(), manifest.subject_count(), store.count(), store.dim());
    Ok((manifest, store))
}

/// Runs pose filtering, mislabel cleaning and candidate generation, then
/// either halts for review or (with decisions at hand) finishes the run.
pub fn run_pipeline(cfg: &PipelineConfig, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let dir = cfg.output_dir.as_path();
    if dir.exists() && std::fs::read_dir(dir).map_err(io_err(dir))?.next().is_some() {
        return Err(PipelineError::OutputExists(dir.to_path_buf()));
    }
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    cfg.save(dir.join(CONFIG_FILE))?;

    let (input, store) = load_inputs(cfg)?;
    let mut labeled = assign_gender(input, cfg.gender_agreement);
    if let Some(path) = &cfg.gender_overrides {
        labeled = apply_overrides(labeled, &load_gender_labels(path)?);
    }
    write_gender_labels(labeled.gender_labels(), dir.join(GENDER_FILE))?;
    if cfg.group_split {
        let unlabeled = labeled.unlabeled_subjects();
        if !unlabeled.is_empty() {
            return Err(facecurate_core::Error::UnlabeledSubjects(unlabeled).into());
        }
    }

    let t = Instant::now();
    let (posed, pose_report) = pose_filter(&labeled, cfg.pose_limits, cfg.min_images)?;
    write_stage(dir, POSE, &posed, &pose_report)?;
    let (cleaned, mislabel_report) = mislabel_clean(&posed, &store, cfg.min_gap, cfg.sim())?;
    write_stage(dir, MISLABEL, &cleaned, &mislabel_report)?;
    let candidates = generate_merge_candidates(&cleaned, &store, cfg.merge_threshold, cfg.reps, cfg.seed)?;
    write_candidates(&candidates, dir.join(CANDIDATES_FILE))?;
    info!("{} merge candidates above {} ({:.1?} so far)", candidates.len(), cfg.merge_threshold, t.elapsed());

    let decisions = if candidates.is_empty() {
        Vec::new()
    } else if opts.auto_decide {
        warn!("auto-deciding {} candidates as different_person; merges are not manually verified", candidates.len());
        candidates
            .iter()
            .map(|c| MergeCandidate {
                decision: Decision::DifferentPerson,
                decided_by: Some(AUTO_DECIDER.to_string()),
                ..c.clone()
            })
            .collect()
    } else if let Some(path) = &opts.decisions {
        complete_decisions(&candidates, path)?
    } else {
        let checkpoint = ReviewCheckpoint {
            config_digest: cfg.digest(),
            candidates_file: CANDIDATES_FILE.to_string(),
            manifest_file: REVIEW_MANIFEST_FILE.to_string(),
            candidates: candidates.len(),
        };
        write_json(&checkpoint, &dir.join(CHECKPOINT_FILE))?;
        return Ok(RunOutcome::AwaitingReview {
            run_dir: dir.to_path_buf(),
            checkpoint,
        });
    };

    let summary = finish(
        cfg,
        &store,
        labeled,
        cleaned,
        vec![pose_report, mislabel_report],
        &candidates,
        decisions,
        opts.auto_decide && !candidates.is_empty(),
    )?;
    Ok(RunOutcome::Complete(Box::new(summary)))
}

/// Continues a run halted for review, applying `decisions_path`.
pub fn resume_pipeline(run_dir: impl AsRef<Path>, decisions_path: impl AsRef<Path>) -> Result<RunSummary> {
    let dir = run_dir.as_ref();
    let checkpoint_path = dir.join(CHECKPOINT_FILE);
    if !checkpoint_path.exists() || dir.join(DECISIONS_FILE).exists() || dir.join(SUMMARY_FILE).exists() {
        return Err(PipelineError::NotAwaitingReview(dir.to_path_buf()));
    }
    let checkpoint: ReviewCheckpoint = read_json(&checkpoint_path)?;
    let cfg = PipelineConfig::load(dir.join(CONFIG_FILE))?;
    if cfg.digest() != checkpoint.config_digest {
        return Err(PipelineError::ConfigChanged {
            expected: checkpoint.config_digest,
            found: cfg.digest(),
        });
    }

    let candidates = read_candidates(dir.join(&checkpoint.candidates_file))?;
    let decisions = complete_decisions(&candidates, decisions_path.as_ref())?;

    let (input, store) = load_inputs(&cfg)?;
    let labels = load_gender_labels(dir.join(GENDER_FILE))?;
    let labeled = input.with_gender_labels(labels.clone());
    let cleaned = load_manifest(dir.join(&checkpoint.manifest_file))?.with_gender_labels(labels);
    cleaned.check_store(&store)?;
    let reports = vec![
        StageReport::read_json(dir.join(format!("{POSE}.json")))?,
        StageReport::read_json(dir.join(format!("{MISLABEL}.json")))?,
    ];
    finish(&cfg, &store, labeled, cleaned, reports, &candidates, decisions, false)
}

/// Latest decision per candidate from a decision log; every candidate must
/// be decided. Decisions for pairs that are not candidates are kept.
fn complete_decisions(candidates: &[MergeCandidate], path: &Path) -> Result<Vec<MergeCandidate>> {
    let mut latest = latest_decisions(read_candidates(path)?);
    let mut out = Vec::with_capacity(candidates.len());
    let mut missing = Vec::new();
    for c in candidates {
        match latest.remove(&c.key()) {
            Some(d) if d.decision != Decision::Pending => out.push(MergeCandidate {
                mean_score: c.mean_score,
                ..d
            }),
            _ => missing.push(c),
        }
    }
    if let Some(first) = missing.first() {
        return Err(PipelineError::MissingDecisions {
            pending: missing.len(),
            total: candidates.len(),
            a: first.subject_a.clone(),
            b: first.subject_b.clone(),
        });
    }
    let extra: Vec<MergeCandidate> = latest.into_values().filter(|d| d.decision != Decision::Pending).collect();
    if !extra.is_empty() {
        warn!("{} decisions concern pairs that were not candidates; applying them", extra.len());
    }
    out.extend(extra);
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    cfg: &PipelineConfig,
    store: &EmbeddingStore,
    input: Manifest,
    cleaned: Manifest,
    mut stages: Vec<StageReport>,
    candidates: &[MergeCandidate],
    decisions: Vec<MergeCandidate>,
    auto_decided: bool,
) -> Result<RunSummary> {
    let dir = cfg.output_dir.as_path();
    write_candidates(&decisions, dir.join(DECISIONS_FILE))?;
    let (merged, merge_report) = apply_merges(&cleaned, &decisions)?;
    write_stage(dir, MERGE, &merged, &merge_report)?;
    let (deduped, dedup_report) = near_duplicate_clean(&merged, store, cfg.near_dup_threshold, cfg.min_images)?;
    write_stage(dir, NEAR_DUP, &deduped, &dedup_report)?;
    stages.push(merge_report);
    stages.push(dedup_report);
    check_chain(input.len(), &stages)?;

    let settings = EvalSettings::from_config(cfg);
    let eval_dir = dir.join(EVAL_DIR);
    std::fs::create_dir_all(&eval_dir).map_err(io_err(&eval_dir))?;
    let (mut evaluation, mut coverage_warnings) = evaluate_phase(&input, store, &settings, &eval_dir, "before")?;
    let (after, warnings) = evaluate_phase(&deduped, store, &settings, &eval_dir, "after")?;
    evaluation.extend(after);
    coverage_warnings.extend(warnings);
    for e in &mut evaluation {
        e.score_file = format!("{EVAL_DIR}/{}", e.score_file);
        e.roc_file = format!("{EVAL_DIR}/{}", e.roc_file);
    }

    let curation_effect = compare_evaluations(
        evaluation.iter().filter(|e| e.phase == "before"),
        evaluation.iter().filter(|e| e.phase == "after"),
    )?;
    let summary = RunSummary {
        tool_version: TOOL_VERSION.to_string(),
        config: cfg.clone(),
        stages,
        merge_candidates: candidates.len(),
        auto_decided,
        evaluation,
        coverage_warnings,
        curation_effect,
    };
    write_json(&summary, &dir.join(SUMMARY_FILE))?;
    Ok(summary)
}

/// Each report is internally consistent, stage k starts where stage k-1
/// ended, and merging moves no images.
pub fn check_chain(input_images: usize, stages: &[StageReport]) -> Result<()> {
    let mut expected = input_images;
    for r in stages {
        if !r.is_consistent() {
            return Err(PipelineError::Inconsistent(format!("{} report does not add up", r.stage_name)));
        }
        if r.images_before != expected {
            return Err(PipelineError::Inconsistent(format!(
                "{} starts with {} images but the previous stage ended with {expected}",
                r.stage_name, r.images_before
            )));
        }
        if r.stage_name == "merge" && r.images_after != r.images_before {
            return Err(PipelineError::Inconsistent("merge changed the image count".into()));
        }
        expected = r.images_after;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSettings {
    pub grouping: Grouping,
    pub fraction: f64,
    pub seed: u64,
    pub fmr_targets: Vec<f64>,
    pub roc_points: usize,
    pub histogram_bins: usize,
}

impl EvalSettings {
    pub fn from_config(cfg: &PipelineConfig) -> Self {
        EvalSettings {
            grouping: if cfg.group_split { Grouping::ByGender } else { Grouping::All },
            fraction: cfg.eval_fraction,
            seed: cfg.seed,
            fmr_targets: cfg.fmr_targets.clone(),
            roc_points: cfg.roc_points,
            histogram_bins: cfg.histogram_bins,
        }
    }
}

/// Scores, ROC and histograms for every group of `manifest`, one group at a
/// time so only one group's scores are in memory. Files are named
/// `{phase}_{group}_*` inside `out_dir`; returned paths are relative to it.
pub fn evaluate_phase(
    manifest: &Manifest,
    store: &EmbeddingStore,
    settings: &EvalSettings,
    out_dir: &Path,
    phase: &str,
) -> Result<(Vec<GroupEvaluation>, Vec<CoverageWarning>)> {
    let mut evaluations = Vec::new();
    let mut warnings = Vec::new();
    for (group, subjects) in evaluation_groups(manifest, settings.grouping)? {
        let t = Instant::now();
        let (set, w) = build_group_scores(manifest, store, &group, &subjects, settings.fraction, settings.seed)?;
        for cw in &w {
            warn!("{phase}/{group}: subject {} has {} of {} images selected", cw.subject_id, cw.selected, cw.available);
        }
        warnings.extend(w);
        let stem = format!("{phase}_{group}");
        let score_file = format!("{stem}_scores.bin");
        write_score_set(&set, out_dir.join(&score_file))?;
        for (kind, scores) in [("authentic", &set.authentic), ("impostor", &set.impostor)] {
            if !scores.is_empty() {
                let h = histogram(scores, settings.histogram_bins, (-1.0, 1.0))?;
                write_histogram_csv(&h, out_dir.join(format!("{stem}_{kind}_hist.csv")))?;
            }
        }
        let (authentic_count, impostor_count) = (set.authentic.len(), set.impostor.len());
        let sorted = SortedScores::from_set(set);
        let at_fmr = settings
            .fmr_targets
            .iter()
            .map(|&f| sorted.tpr_at_fmr(f))
            .collect::<facecurate_core::Result<Vec<_>>>()?;
        let roc_file = format!("{stem}_roc.csv");
        write_roc_csv(&sorted.roc_curve(settings.roc_points)?, out_dir.join(&roc_file))?;
        info!(
            "{phase}/{group}: {authentic_count} authentic, {impostor_count} impostor scores in {:.1?}",
            t.elapsed()
        );
        evaluations.push(GroupEvaluation {
            phase: phase.to_string(),
            group,
            authentic_count,
            impostor_count,
            score_file,
            roc_file,
            at_fmr,
        });
    }
    Ok((evaluations, warnings))
}

fn compare_evaluations<'a>(
    before: impl Iterator<Item = &'a GroupEvaluation>,
    after: impl Iterator<Item = &'a GroupEvaluation>,
) -> Result<Vec<ComparisonRow>> {
    let before: BTreeMap<&str, &GroupEvaluation> = before.map(|e| (e.group.as_str(), e)).collect();
    let after: Vec<&GroupEvaluation> = after.collect();
    if before.len() != after.len() || after.iter().any(|e| !before.contains_key(e.group.as_str())) {
        return Err(PipelineError::Mismatch(format!(
            "groups differ: {:?} vs {:?}",
            before.keys().collect::<Vec<_>>(),
            after.iter().map(|e| &e.group).collect::<Vec<_>>()
        )));
    }
    let mut rows = Vec::new();
    for a in after {
        let b = before[a.group.as_str()];
        let targets = |e: &GroupEvaluation| e.at_fmr.iter().map(|t| t.fmr).collect::<Vec<_>>();
        if targets(a) != targets(b) {
            return Err(PipelineError::Mismatch(format!("fmr targets differ for group {}", a.group)));
        }
        for (tb, ta) in b.at_fmr.iter().zip(&a.at_fmr) {
            rows.push(ComparisonRow {
                group: a.group.clone(),
                fmr: ta.fmr,
                tpr_before: tb.tpr,
                tpr_after: ta.tpr,
                threshold_before: tb.threshold,
                threshold_after: ta.threshold,
                unsupported_before: tb.unsupported,
                unsupported_after: ta.unsupported,
            });
        }
    }
    Ok(rows)
}

/// Final-phase accuracy of `before` against `after`, per group and FMR target.
pub fn compare_runs(before: &RunSummary, after: &RunSummary) -> Result<Vec<ComparisonRow>> {
    if before.config.fmr_targets != after.config.fmr_targets {
        return Err(PipelineError::Mismatch(format!(
            "fmr targets {:?} vs {:?}",
            before.config.fmr_targets, after.config.fmr_targets
        )));
    }
    if before.config.group_split != after.config.group_split {
        return Err(PipelineError::Mismatch("one run splits groups by gender, the other does not".into()));
    }
    compare_evaluations(before.phase("after"), after.phase("after"))
}

/// Plain-text table of comparison rows.
pub fn format_comparison(rows: &[ComparisonRow]) -> String {
    let mut out = format!(
        "{:<8} {:>8} {:>10} {:>10} {:>9} {:>12} {:>12}\n",
        "group", "fmr", "tpr_before", "tpr_after", "delta_pp", "thr_before", "thr_after"
    );
    for r in rows {
        let flag = |u: bool| if u { "*" } else { " " };
        out.push_str(&format!(
            "{:<8} {:>8.0e} {:>10.4} {:>10.4} {:>+9.2} {:>11.4}{} {:>11.4}{}\n",
            r.group,
            r.fmr,
            r.tpr_before,
            r.tpr_after,
            100.0 * r.tpr_delta(),
            r.threshold_before,
            flag(r.unsupported_before),
            r.threshold_after,
            flag(r.unsupported_after),
        ));
    }
    if rows.iter().any(|r| r.unsupported_before || r.unsupported_after) {
        out.push_str("* target below the resolution of the impostor scores\n");
    }
    out
}
