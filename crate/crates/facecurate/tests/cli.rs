use std::path::Path;
use std::process::{Command, Output};

use facecurate_core::stages::{read_candidates, write_candidates, Decision};

fn facecurate(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_facecurate"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_run_resume_compare() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let out = facecurate(&["synth", "--out", arg(&corpus), "--identities", "20", "--dim", "32", "--seed", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["manifest.csv", "embeddings.bin", "truth.json"] {
        assert!(corpus.join(f).exists(), "{f}");
    }

    let run = dir.path().join("run");
    let config = dir.path().join("run.json");
    let cfg = serde_json::json!({
        "manifest_path": corpus.join("manifest.csv"),
        "embeddings_path": corpus.join("embeddings.bin"),
        "output_dir": run,
        "seed": 2,
    });
    std::fs::write(&config, cfg.to_string()).unwrap();

    let halted = facecurate(&["--threads", "2", "run", "--config", arg(&config)]);
    assert_eq!(halted.status.code(), Some(3), "{}", String::from_utf8_lossy(&halted.stderr));
    assert!(String::from_utf8_lossy(&halted.stdout).contains("facecurate resume --run"));

    let decisions = run.join("decisions.jsonl");
    let decided: Vec<_> = read_candidates(run.join("03_merge_candidates.jsonl"))
        .unwrap()
        .into_iter()
        .map(|mut c| {
            c.decision = if c.subject_a.ends_with('a') && c.subject_b == c.subject_a.replace('a', "b") {
                Decision::SamePerson
            } else {
                Decision::DifferentPerson
            };
            c.decided_by = Some("cli test".into());
            c
        })
        .collect();
    write_candidates(&decided, &decisions).unwrap();

    let resumed = facecurate(&["resume", "--run", arg(&run), "--decisions", arg(&decisions)]);
    assert!(resumed.status.success(), "{}", String::from_utf8_lossy(&resumed.stderr));
    let table = String::from_utf8_lossy(&resumed.stdout);
    assert!(table.contains("near_duplicate") && table.contains("female"), "{table}");
    assert!(run.join("summary.json").exists());

    let again = facecurate(&["resume", "--run", arg(&run), "--decisions", arg(&decisions)]);
    assert!(!again.status.success());

    let compared = facecurate(&["compare", arg(&run), arg(&run)]);
    assert!(compared.status.success(), "{}", String::from_utf8_lossy(&compared.stderr));

    let eval_dir = dir.path().join("eval");
    let evaluated = facecurate(&[
        "eval",
        "--manifest",
        arg(&corpus.join("manifest.csv")),
        "--embeddings",
        arg(&corpus.join("embeddings.bin")),
        "--out",
        arg(&eval_dir),
        "--fraction",
        "1",
        "--fmr",
        "0.01",
    ]);
    assert!(evaluated.status.success(), "{}", String::from_utf8_lossy(&evaluated.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(eval_dir.join("eval.json")).unwrap()).unwrap();
    assert_eq!(report["groups"].as_array().unwrap().len(), 2);
    assert!(eval_dir.join("eval_male_roc.csv").exists());
}

#[test]
fn bad_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    std::fs::write(&config, r#"{"manifest_path": "m", "embeddings_path": "e", "output_dir": "o", "merge_treshold": 0.3}"#).unwrap();
    let out = facecurate(&["run", "--config", arg(&config)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("merge_treshold"));
}
