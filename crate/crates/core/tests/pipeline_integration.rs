//! End-to-end pipeline tests at desk scale: CLI stage wiring, artifact
//! determinism, and corpus-level sanity of the classical path.

use std::path::{Path, PathBuf};
use std::process::Command;

use eegscreen::classical::gbt::GbtConfig;
use eegscreen::config::RunConfig;
use eegscreen::eval::cv::{run_cv_suite, AccessLog, ModelId, SuiteConfig};
use eegscreen::eval::folds::stratified_folds;
use eegscreen::pipeline::{
    evaluate_stage, featurize_stage, fold_inputs_from_dataset, load_dataset, preprocess_stage,
    synth_stage,
};
use eegscreen::synth::CorpusSpec;

fn light_gbe_suite(members: usize, iterations: usize, seed: u64) -> SuiteConfig {
    SuiteConfig {
        models: vec![ModelId::Gbe],
        gbt: GbtConfig {
            iterations,
            ..GbtConfig::default()
        },
        gbe_members: members,
        seed,
        ..SuiteConfig::default()
    }
}

fn build_workdir(spec: &CorpusSpec, tag: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join(format!("corpus-{tag}"));
    let work = dir.path().join(format!("work-{tag}"));
    synth_stage(spec, &corpus).unwrap();
    let cfg = RunConfig::default();
    preprocess_stage(&corpus, &work, &cfg).unwrap();
    featurize_stage(&work, &cfg).unwrap();
    (dir, work)
}

#[test]
fn evaluate_writes_identical_reports_on_rerun() {
    let spec = CorpusSpec {
        n_recordings: 24,
        ..CorpusSpec::reference()
    };
    let (dir, work) = build_workdir(&spec, "det");
    let mut cfg = RunConfig::default();
    cfg.gbe_members = 3;
    cfg.gbt.iterations = 40;
    cfg.seed = 7;
    let out_a = dir.path().join("reports-a");
    let out_b = dir.path().join("reports-b");
    evaluate_stage(&work, &[ModelId::Gbe, ModelId::Rf], 6, &cfg, &out_a).unwrap();
    evaluate_stage(&work, &[ModelId::Gbe, ModelId::Rf], 6, &cfg, &out_b).unwrap();
    for name in ["cv_GBE_corpus-n24.json", "cv_RF_corpus-n24.json"] {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "report {name} differs between identical runs");
    }
}

#[test]
fn separable_corpus_gives_high_gbe_auc() {
    let spec = CorpusSpec {
        n_recordings: 60,
        ..CorpusSpec::reference()
    };
    let (_dir, work) = build_workdir(&spec, "sep");
    let dataset = load_dataset(&work, "sep").unwrap();
    let folds = stratified_folds(&fold_inputs_from_dataset(&dataset), 6, 3);
    let suite = light_gbe_suite(5, 150, 3);
    let log = AccessLog::default();
    let reports = run_cv_suite(&dataset, &folds, &suite, &log).unwrap();
    assert!(
        reports[0].mean_auc > 0.9,
        "GBE AUC {} on a separable corpus",
        reports[0].mean_auc
    );
}

#[test]
fn null_corpus_auc_stays_near_chance() {
    // Classes are generated identically, so any model sits at chance level.
    let spec = CorpusSpec::null_effect(360, 20_240_002);
    let (_dir, work) = build_workdir(&spec, "null");
    let dataset = load_dataset(&work, "null").unwrap();
    let folds = stratified_folds(&fold_inputs_from_dataset(&dataset), 6, 5);
    let suite = light_gbe_suite(5, 100, 5);
    let log = AccessLog::default();
    let reports = run_cv_suite(&dataset, &folds, &suite, &log).unwrap();
    let auc = reports[0].mean_auc;
    assert!(
        (auc - 0.5).abs() <= 0.05,
        "null-corpus AUC {auc} strays from 0.5"
    );
}

#[test]
fn cli_binary_runs_the_whole_chain() {
    let bin = env!("CARGO_BIN_EXE_eegscreen");
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str], cwd: &Path| {
        let out = Command::new(bin).args(args).current_dir(cwd).output().unwrap();
        assert!(
            out.status.success(),
            "eegscreen {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8_lossy(&out.stdout).to_string()
    };
    let cwd = dir.path();
    let cfg_path = cwd.join("run.toml");
    std::fs::write(
        &cfg_path,
        "seed = 11\ngbe_members = 3\n[gbt]\niterations = 30\n[rf]\nn_trees = 40\n",
    )
    .unwrap();
    let cfg = cfg_path.to_str().unwrap();

    run(&["synth", "--spec", "smoke", "--out", "corpus"], cwd);
    assert!(cwd.join("corpus/labels.jsonl").exists());
    let out = run(
        &["preprocess", "--corpus", "corpus", "--work", "work", "--config", cfg],
        cwd,
    );
    assert!(out.contains("kept 24"), "{out}");
    run(&["featurize", "--work", "work", "--config", cfg], cwd);
    assert!(cwd.join("work/features.tsv").exists());
    assert!(cwd.join("work/cov_means.bin").exists());

    let out = run(
        &[
            "evaluate", "--work", "work", "--model", "RF", "--model", "GBE", "--folds", "6",
            "--config", cfg, "--out", "reports",
        ],
        cwd,
    );
    assert!(out.contains("GBE"), "{out}");
    let out = run(&["stats", "--reports", "reports", "--config", cfg], cwd);
    assert!(out.contains("Kruskal-Wallis"), "{out}");
    let out = run(
        &["report", "--reports", "reports", "--out", "summary", "--config", cfg],
        cwd,
    );
    assert!(out.contains("GBE"), "{out}");
    assert!(cwd.join("summary/auc_table.txt").exists());

    // Scaling fit against the published meta-model numbers.
    let data = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/table4_meta.csv");
    let out = run(
        &[
            "fit-scaling", "--input", data.to_str().unwrap(), "--out", "scaling", "--config", cfg,
        ],
        cwd,
    );
    assert!(out.contains("asymptote"), "{out}");
    let asymptote: f64 = out
        .split("asymptote = ")
        .nth(1)
        .and_then(|s| s.split(' ').next())
        .and_then(|s| s.parse().ok())
        .expect("printed asymptote");
    assert!(
        (asymptote - 91.3).abs() < 1.5,
        "printed asymptote {asymptote}"
    );
    assert!(cwd.join("scaling/powerlaw_fit.json").exists());
    assert!(cwd.join("scaling/scaling_curve.tsv").exists());

    // Train one classical model on a single step and keep its artifacts.
    let out = run(
        &[
            "train", "--work", "work", "--model", "RF", "--step", "0", "--out", "models/rf.json",
            "--config", cfg,
        ],
        cwd,
    );
    assert!(out.contains("saved"), "{out}");
    assert!(cwd.join("models/rf.json").exists());
    assert!(cwd.join("models/rf.manifest.json").exists());
}

#[test]
fn cli_reports_config_errors_with_exit_code_three() {
    let bin = env!("CARGO_BIN_EXE_eegscreen");
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "schema_version = 99\n").unwrap();
    let out = Command::new(bin)
        .args(["featurize", "--work", "w", "--config", cfg.to_str().unwrap()])
        .current_dir(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("\"error\""), "machine-readable line: {err}");
}

#[test]
fn cli_reports_usage_errors_with_exit_code_two() {
    let bin = env!("CARGO_BIN_EXE_eegscreen");
    let out = Command::new(bin).args(["--definitely-not-a-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}
