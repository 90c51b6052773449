// Scratch calibration of the end-to-end suite at reduced scale: timing and
// model-ordering check before pinning the acceptance configuration.
use std::time::Instant;

use eegscreen::classical::gbt::GbtConfig;
use eegscreen::config::RunConfig;
use eegscreen::eval::cv::{run_cv_suite, AccessLog, ModelId, SuiteConfig};
use eegscreen::eval::folds::stratified_folds;
use eegscreen::neural::train::TrainConfig;
use eegscreen::pipeline::{fold_inputs_from_dataset, featurize_stage, load_dataset, preprocess_stage, synth_stage};
use eegscreen::synth::CorpusSpec;

fn main() {
    let n: usize = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(120);
    let root = std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../target/calib");
    let corpus = root.join(format!("corpus{n}"));
    let work = root.join(format!("work{n}"));
    let spec = CorpusSpec {
        n_recordings: n,
        ..CorpusSpec::reference()
    };
    let cfg = RunConfig::default();

    let t0 = Instant::now();
    if !corpus.join("labels.jsonl").exists() {
        synth_stage(&spec, &corpus).unwrap();
    }
    println!("synth: {:.1}s", t0.elapsed().as_secs_f64());
    let t0 = Instant::now();
    preprocess_stage(&corpus, &work, &cfg).unwrap();
    println!("preprocess: {:.1}s", t0.elapsed().as_secs_f64());
    let t0 = Instant::now();
    featurize_stage(&work, &cfg).unwrap();
    println!("featurize: {:.1}s", t0.elapsed().as_secs_f64());

    let t0 = Instant::now();
    let dataset = load_dataset(&work, "calib").unwrap();
    println!("load: {:.1}s", t0.elapsed().as_secs_f64());
    let folds = stratified_folds(&fold_inputs_from_dataset(&dataset), 6, cfg.seed);

    let suite = SuiteConfig {
        models: vec![
            ModelId::SiNet,
            ModelId::MiNetP,
            ModelId::MiNetAttnP,
            ModelId::TransNetP,
            ModelId::Gbe,
            ModelId::Meta,
        ],
        train: TrainConfig {
            single_frame_epochs: std::env::args().nth(2).and_then(|a| a.parse().ok()).unwrap_or(2),
            mil_epochs: std::env::args().nth(3).and_then(|a| a.parse().ok()).unwrap_or(2),
            batch_frames: 256,
            batch_recordings: 4,
            frames_per_recording: 8,
            learning_rate: 3e-3,
            seed: 0,
            frame_chunk: 64,
        },
        gbt: GbtConfig::default(),
        gbe_members: 30,
        rf: Default::default(),
        meta: Default::default(),
        seed: cfg.seed,
    };
    let log = AccessLog::default();
    let t0 = Instant::now();
    let reports = run_cv_suite(&dataset, &folds, &suite, &log).unwrap();
    println!("suite: {:.1}s", t0.elapsed().as_secs_f64());
    for r in &reports {
        println!(
            "{:<10} AUC {:.4} +- {:.4}  ACC {:.4}  steps {:?}",
            r.model_id,
            r.mean_auc,
            r.sd_auc,
            r.mean_acc,
            r.steps.iter().map(|s| (s.test_auc * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        );
    }
}
