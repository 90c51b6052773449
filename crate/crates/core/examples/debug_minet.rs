// Scratch: per-epoch trajectory of miNetP on the fold split that produced an
// inverted test AUC in calibration.
use eegscreen::config::RunConfig;
use eegscreen::eval::folds::stratified_folds;
use eegscreen::eval::metrics::auc;
use eegscreen::neural::train::{predict_frameset, train_mil, train_single_frame, TrainConfig};
use eegscreen::neural::MilKind;
use eegscreen::pipeline::{fold_inputs_from_dataset, load_dataset};

fn main() {
    let step: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(4);
    let epochs: usize = std::env::args().nth(2).and_then(|a| a.parse().ok()).unwrap_or(6);
    let root = std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../target/calib");
    let work = root.join("work120");
    let cfg = RunConfig::default();
    let dataset = load_dataset(&work, "calib").unwrap();
    let folds = stratified_folds(&fold_inputs_from_dataset(&dataset), 6, cfg.seed);

    let test_fold = step;
    let val_fold = (step + 1) % 6;
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for fs in &dataset.recordings {
        match folds.fold_of(&fs.meta.recording_id).unwrap() {
            f if f == test_fold => test.push(fs),
            f if f == val_fold => val.push(fs),
            _ => train.push(fs),
        }
    }
    // Mirror the suite's seeding.
    let seed = cfg.seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(step as u64 + 1);
    let tcfg = TrainConfig {
        single_frame_epochs: 3,
        mil_epochs: epochs,
        batch_frames: 256,
        batch_recordings: 4,
        frames_per_recording: 8,
        learning_rate: 3e-3,
        seed,
        frame_chunk: 64,
    };
    let (mut pre, plog) = train_single_frame(&train, &val, &tcfg).unwrap();
    println!("pretrain best epoch {} val AUC {:.4}", plog.best_epoch, plog.best_val_auc);

    let mil_seed = seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(17 + 4 + 1);
    let tcfg_mil = TrainConfig { seed: mil_seed, ..tcfg.clone() };
    let (mut model, log) = train_mil(MilKind::MiNet, Some(&mut pre), &train, &val, &tcfg_mil).unwrap();
    for e in &log.epochs {
        println!(
            "epoch {}: train_loss {:.4} train_auc {:?} val_auc {:.4}",
            e.epoch, e.train_loss, e.train_auc.map(|a| (a * 1000.0).round() / 1000.0), e.val_auc
        );
    }
    println!("best epoch {} val {:.4}", log.best_epoch, log.best_val_auc);
    let scores: Vec<f64> = test.iter().map(|fs| predict_frameset(model.as_recording_model(), fs)).collect();
    let labels: Vec<u8> = test.iter().map(|fs| fs.label.as_u8()).collect();
    println!("test AUC {:.4}", auc(&scores, &labels).unwrap());
    println!("test scores: {:?}", scores.iter().map(|s| (s * 100.0).round() / 100.0).collect::<Vec<_>>());
}
