use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use facecurate::config::PipelineConfig;
use facecurate::pipeline::{self, EvalSettings, GroupEvaluation, RunOptions, RunOutcome, RunSummary, CONFIG_FILE};
use facecurate::review::{self, ReviewOptions};
use facecurate_core::eval::{Grouping, DEFAULT_EVAL_FRACTION, DEFAULT_FMR_TARGETS, DEFAULT_HISTOGRAM_BINS, DEFAULT_ROC_POINTS};
use facecurate_core::gender::{apply_overrides, assign_gender, DEFAULT_AGREEMENT};
use facecurate_core::manifest::load_gender_labels;
use facecurate_core::simkit::DEFAULT_REPS;
use facecurate_core::synth::{generate, SynthConfig};
use facecurate_core::{load_embeddings, load_manifest};

/// Exit status of `run` when it halts for manual merge review.
const EXIT_AWAITING_REVIEW: u8 = 3;

#[derive(Parser)]
#[command(name = "facecurate", version, about = "Curate a labeled face-embedding dataset and measure the effect")]
struct Cli {
    /// Worker threads for similarity computation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum AutoDecide {
    DifferentPerson,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline; halts for review when merge candidates exist.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Apply this decision file instead of halting.
        #[arg(long)]
        decisions: Option<PathBuf>,
        /// CI only: decide every candidate without review (a method deviation).
        #[arg(long, value_enum)]
        auto_decide: Option<AutoDecide>,
    },
    /// Finish a run that halted for review.
    Resume {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        decisions: PathBuf,
    },
    /// Serve the merge review API.
    Review {
        #[arg(long)]
        candidates: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
        /// Decision log (default: decisions.jsonl next to the candidate file).
        #[arg(long)]
        decisions: Option<PathBuf>,
        /// Representatives shown per subject (default: the run's config, else 5).
        #[arg(long)]
        reps: Option<usize>,
        /// Seed of the representative draw (default: the run's config, else 0).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a manifest without curating it.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_EVAL_FRACTION)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// FMR targets (repeatable).
        #[arg(long = "fmr")]
        fmr: Vec<f64>,
        /// One "all" group instead of male/female.
        #[arg(long)]
        no_group_split: bool,
        #[arg(long, default_value_t = DEFAULT_AGREEMENT)]
        gender_agreement: f64,
        #[arg(long)]
        gender_overrides: Option<PathBuf>,
    },
    /// Compare the curated accuracy of two completed runs.
    Compare { before: PathBuf, after: PathBuf },
    /// Write a synthetic corpus with planted problems and its ground truth.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// About 100k images at dim 512 instead of the small default.
        #[arg(long)]
        scale: bool,
        #[arg(long)]
        identities: Option<usize>,
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set up {n} threads: {e}");
            return ExitCode::FAILURE;
        }
    }
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Run {
            config,
            decisions,
            auto_decide,
        } => {
            let cfg = PipelineConfig::load(&config)?;
            let opts = RunOptions {
                decisions,
                auto_decide: auto_decide.is_some(),
            };
            match pipeline::run_pipeline(&cfg, &opts)? {
                RunOutcome::AwaitingReview { run_dir, checkpoint } => {
                    let dir = run_dir.display();
                    println!("{} merge candidates await manual review.", checkpoint.candidates);
                    println!(
                        "  facecurate review --candidates {dir}/{} --manifest {dir}/{} --images <image root>",
                        checkpoint.candidates_file, checkpoint.manifest_file
                    );
                    println!("  facecurate resume --run {dir} --decisions {dir}/decisions.jsonl");
                    Ok(ExitCode::from(EXIT_AWAITING_REVIEW))
                }
                RunOutcome::Complete(summary) => {
                    print_summary(&summary);
                    Ok(ExitCode::SUCCESS)
                }
            }
        }
        Command::Resume { run, decisions } => {
            let summary = pipeline::resume_pipeline(&run, &decisions)?;
            print_summary(&summary);
            Ok(ExitCode::SUCCESS)
        }
        Command::Review {
            candidates,
            manifest,
            images,
            bind,
            decisions,
            reps,
            seed,
        } => {
            let run_dir = candidates.parent().unwrap_or(Path::new("."));
            let run_cfg = PipelineConfig::load(run_dir.join(CONFIG_FILE)).ok();
            let opts = ReviewOptions {
                decisions_path: decisions.unwrap_or_else(|| run_dir.join("decisions.jsonl")),
                reps: reps.or(run_cfg.as_ref().map(|c| c.reps)).unwrap_or(DEFAULT_REPS),
                seed: seed.or(run_cfg.as_ref().map(|c| c.seed)).unwrap_or(0),
                candidates_path: candidates,
                manifest_path: manifest,
                image_root: images,
            };
            let rt = tokio::runtime::Runtime::new().context("starting the async runtime")?;
            rt.block_on(review::serve(opts, &bind))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval {
            manifest,
            embeddings,
            out,
            fraction,
            seed,
            fmr,
            no_group_split,
            gender_agreement,
            gender_overrides,
        } => {
            let mut m = assign_gender(load_manifest(&manifest)?, gender_agreement);
            if let Some(path) = gender_overrides {
                m = apply_overrides(m, &load_gender_labels(path)?);
            }
            let store = load_embeddings(&embeddings, None)?;
            m.check_store(&store)?;
            let settings = EvalSettings {
                grouping: if no_group_split { Grouping::All } else { Grouping::ByGender },
                fraction,
                seed,
                fmr_targets: if fmr.is_empty() { DEFAULT_FMR_TARGETS.to_vec() } else { fmr },
                roc_points: DEFAULT_ROC_POINTS,
                histogram_bins: DEFAULT_HISTOGRAM_BINS,
            };
            if settings.fmr_targets.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
                bail!("fmr targets must lie in (0, 1)");
            }
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let (groups, warnings) = pipeline::evaluate_phase(&m, &store, &settings, &out, "eval")?;
            let report = serde_json::json!({ "groups": groups, "coverage_warnings": warnings });
            let path = out.join("eval.json");
            std::fs::write(&path, serde_json::to_string_pretty(&report)? + "\n")
                .with_context(|| format!("writing {}", path.display()))?;
            print_groups(&groups);
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare { before, after } => {
            let rows = pipeline::compare_runs(&RunSummary::load(&before)?, &RunSummary::load(&after)?)?;
            print!("{}", pipeline::format_comparison(&rows));
            Ok(ExitCode::SUCCESS)
        }
        Command::Synth {
            out,
            scale,
            identities,
            dim,
            seed,
        } => {
            let base = if scale { SynthConfig::scale() } else { SynthConfig::default() };
            let cfg = SynthConfig {
                identities: identities.unwrap_or(base.identities),
                dim: dim.unwrap_or(base.dim),
                seed: seed.unwrap_or(base.seed),
                ..base
            };
            let corpus = generate(&cfg)?;
            corpus.write(&out)?;
            println!(
                "wrote {} images of {} subjects (dim {}) to {}",
                corpus.manifest.len(),
                corpus.manifest.subject_count(),
                cfg.dim,
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn print_groups(groups: &[GroupEvaluation]) {
    println!("{:<7} {:<8} {:>10} {:>12} {:>8} {:>8} {:>10}", "phase", "group", "authentic", "impostor", "fmr", "tpr", "threshold");
    for g in groups {
        for t in &g.at_fmr {
            println!(
                "{:<7} {:<8} {:>10} {:>12} {:>8.0e} {:>8.4} {:>10.4}{}",
                g.phase,
                g.group,
                g.authentic_count,
                g.impostor_count,
                t.fmr,
                t.tpr,
                t.reported_threshold,
                if t.unsupported { " (unsupported)" } else { "" }
            );
        }
    }
}

fn print_summary(summary: &RunSummary) {
    println!("{:<16} {:>9} {:>9} {:>9} {:>9}", "stage", "images", "subjects", "removed", "merged");
    for s in &summary.stages {
        println!(
            "{:<16} {:>9} {:>9} {:>9} {:>9}",
            s.stage_name,
            s.images_after,
            s.subjects_after,
            s.removed_images.len(),
            s.merged_subjects.len()
        );
    }
    println!();
    print!("{}", pipeline::format_comparison(&summary.curation_effect));
}
