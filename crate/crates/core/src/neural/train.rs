//! Training protocols: single-frame training (siNet and encoder
//! pretraining) and recording-level MIL training, both with best-validation-
//! AUC epoch selection.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::loss::{bce_with_log_prob, bce_with_logit};
use crate::autodiff::optim::{radam_step, OptimError, RAdamConfig};
use crate::autodiff::{Layer, Mode, Tensor};
use crate::eval::metrics::{auc, MetricError};
use crate::preprocess::{Frame, FrameSet};

use super::{frames_to_tensor, GeomMeanNet, MilKind, MilModel, RecordingModel, RecordingOutput};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no usable validation fold: {0}")]
    NoValidationFold(String),
    #[error(transparent)]
    Optim(#[from] OptimError),
}

/// Knobs shared by both protocols. The defaults are the production settings;
/// desk-scale runs shrink epochs and batches through the run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub single_frame_epochs: usize,
    pub mil_epochs: usize,
    pub batch_frames: usize,
    pub batch_recordings: usize,
    pub frames_per_recording: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Frames per forward chunk inside a large frame batch; also the
    /// effective batch-norm population during single-frame training.
    pub frame_chunk: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            single_frame_epochs: 50,
            mil_epochs: 150,
            batch_frames: 4096,
            batch_recordings: 64,
            frames_per_recording: 64,
            learning_rate: 1e-3,
            seed: 0,
            frame_chunk: 64,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_auc: Option<f64>,
    pub val_auc: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_auc: f64,
}

struct Snapshot {
    values: Vec<Tensor>,
    bn_state: Vec<(Vec<f64>, Vec<f64>)>,
}

fn take_snapshot(model: &mut dyn RecordingModel, bn_state: Vec<(Vec<f64>, Vec<f64>)>) -> Snapshot {
    Snapshot {
        values: model
            .parameters_mut()
            .iter()
            .map(|p| p.value.clone())
            .collect(),
        bn_state,
    }
}

fn restore_snapshot(model: &mut dyn RecordingModel, snap: &Snapshot) {
    for (p, v) in model.parameters_mut().iter_mut().zip(&snap.values) {
        p.value = v.clone();
    }
}

/// Probability of normality for a whole recording, eval mode, all frames.
pub fn predict_frameset(model: &mut dyn RecordingModel, fs: &FrameSet) -> f64 {
    let refs: Vec<&Frame> = fs.frames.iter().collect();
    let x = frames_to_tensor(&refs);
    model.predict(&x)
}

fn validation_auc(
    model: &mut dyn RecordingModel,
    val: &[&FrameSet],
) -> Result<f64, TrainError> {
    let scores: Vec<f64> = val.iter().map(|fs| predict_frameset(model, fs)).collect();
    let labels: Vec<u8> = val.iter().map(|fs| fs.label.as_u8()).collect();
    auc(&scores, &labels).map_err(|e: MetricError| TrainError::NoValidationFold(e.to_string()))
}

/// Trains the encoder + frame classifier on single frames, each labeled with
/// its recording's label. Used both for the siNet model itself and for
/// encoder pretraining. Returns the best-validation-AUC epoch's weights.
pub fn train_single_frame(
    train: &[&FrameSet],
    val: &[&FrameSet],
    cfg: &TrainConfig,
) -> Result<(GeomMeanNet, TrainLog), TrainError> {
    if val.is_empty() {
        return Err(TrainError::NoValidationFold("empty validation set".into()));
    }
    let mut model = GeomMeanNet::new(cfg.seed);
    let optim = RAdamConfig {
        lr: cfg.learning_rate,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x51_4e45_54);

    // (recording, frame) index pairs with labels.
    let mut pool: Vec<(usize, usize, f64)> = Vec::new();
    for (ri, fs) in train.iter().enumerate() {
        for fi in 0..fs.n_frames() {
            pool.push((ri, fi, fs.label.as_f64()));
        }
    }

    let mut log = TrainLog {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_auc: f64::NEG_INFINITY,
    };
    let mut best: Option<Snapshot> = None;

    for epoch in 0..cfg.single_frame_epochs {
        pool.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in pool.chunks(cfg.batch_frames) {
            let scale = 1.0 / batch.len() as f64;
            for chunk in batch.chunks(cfg.frame_chunk) {
                let refs: Vec<&Frame> =
                    chunk.iter().map(|&(ri, fi, _)| &train[ri].frames[fi]).collect();
                let x = frames_to_tensor(&refs);
                let logits = model.forward_frames(&x, Mode::Train);
                let mut grads = Vec::with_capacity(chunk.len());
                for (i, &(_, _, label)) in chunk.iter().enumerate() {
                    let (loss, grad) = bce_with_logit(logits.data[i], label);
                    epoch_loss += loss * scale;
                    grads.push(grad * scale);
                }
                model.backward_frames(&Tensor::from_vec(&[chunk.len(), 1], grads));
            }
            radam_step(&mut model.parameters_mut(), &optim)?;
        }

        let val_auc = validation_auc(&mut model, val)?;
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / (pool.len() as f64 / cfg.batch_frames as f64).max(1.0),
            train_auc: None,
            val_auc,
        });
        if val_auc > log.best_val_auc {
            log.best_val_auc = val_auc;
            log.best_epoch = epoch;
            let bn = model.encoder.bn_state();
            best = Some(take_snapshot(&mut model, bn));
        }
    }

    if let Some(snap) = &best {
        restore_snapshot(&mut model, snap);
        model.encoder.set_bn_state(&snap.bn_state);
    }
    Ok((model, log))
}

fn sample_frame_refs<'a>(
    fs: &'a FrameSet,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<&'a Frame> {
    let n = fs.n_frames();
    if n <= k {
        return fs.frames.iter().collect();
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.truncate(k);
    idx.into_iter().map(|i| &fs.frames[i]).collect()
}

/// Recording-level MIL training: one loss per recording against the
/// recording label, a capped random frame sample per recording per step,
/// best-validation-AUC epoch returned. Training AUC is computed on the
/// sampled frames only; validation uses all frames.
pub fn train_mil(
    kind: MilKind,
    pretrained: Option<&mut GeomMeanNet>,
    train: &[&FrameSet],
    val: &[&FrameSet],
    cfg: &TrainConfig,
) -> Result<(MilModel, TrainLog), TrainError> {
    if val.is_empty() {
        return Err(TrainError::NoValidationFold("empty validation set".into()));
    }
    let mut model = MilModel::build(kind, cfg.seed, pretrained);
    let optim = RAdamConfig {
        lr: cfg.learning_rate,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x4d_494c);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = TrainLog {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_auc: f64::NEG_INFINITY,
    };
    let mut best: Option<Snapshot> = None;

    for epoch in 0..cfg.mil_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut train_scores = Vec::with_capacity(train.len());
        let mut train_labels = Vec::with_capacity(train.len());
        for batch in order.chunks(cfg.batch_recordings) {
            let scale = 1.0 / batch.len() as f64;
            // All sampled frames of the batch pass through the encoder as
            // one mixed population (in chunks), so batch-norm statistics
            // span recordings instead of normalizing each recording against
            // itself.
            let bags: Vec<Vec<&Frame>> = batch
                .iter()
                .map(|&ri| sample_frame_refs(train[ri], cfg.frames_per_recording, &mut rng))
                .collect();
            let flat: Vec<&Frame> = bags.iter().flatten().copied().collect();
            let total = flat.len();
            let mut perm: Vec<usize> = (0..total).collect();
            perm.shuffle(&mut rng);
            let permuted: Vec<&Frame> = perm.iter().map(|&i| flat[i]).collect();
            // Row of each flat index inside the permuted layout.
            let mut row_of = vec![0usize; total];
            for (row, &i) in perm.iter().enumerate() {
                row_of[i] = row;
            }

            let dim = super::ENCODING_DIM;
            let single_chunk = total <= cfg.frame_chunk;
            let snapshot = if single_chunk {
                None
            } else {
                let enc = model.encoder_mut();
                Some((enc.rng_state(), enc.bn_state()))
            };

            // Forward pass over chunks, collecting encodings in permuted
            // row order.
            let mut encodings = vec![0.0; total * dim];
            for (ci, chunk) in permuted.chunks(cfg.frame_chunk).enumerate() {
                let x = frames_to_tensor(chunk);
                let e = model.encoder_mut().forward(&x, Mode::Train);
                let base = ci * cfg.frame_chunk * dim;
                encodings[base..base + e.data.len()].copy_from_slice(&e.data);
            }

            // Heads per recording with immediate backward into the encoding
            // gradient buffer.
            let mut denc = vec![0.0; total * dim];
            let mut flat_off = 0usize;
            for (bag, &ri) in bags.iter().zip(batch) {
                let n_r = bag.len();
                let mut enc_r = Tensor::zeros(&[n_r, dim]);
                for j in 0..n_r {
                    let row = row_of[flat_off + j];
                    enc_r.data[j * dim..(j + 1) * dim]
                        .copy_from_slice(&encodings[row * dim..(row + 1) * dim]);
                }
                let out = model.head_forward(&enc_r, Mode::Train);
                let label = train[ri].label.as_f64();
                let (loss, dloss, prob) = match out {
                    RecordingOutput::LogProb(lp) => {
                        let (l, g) = bce_with_log_prob(lp, label);
                        (l, g, lp.exp())
                    }
                    RecordingOutput::Logit(z) => {
                        let (l, g) = bce_with_logit(z, label);
                        (l, g, crate::autodiff::loss::sigmoid(z))
                    }
                };
                epoch_loss += loss * scale;
                let denc_r = model.head_backward(dloss * scale);
                for j in 0..n_r {
                    let row = row_of[flat_off + j];
                    denc[row * dim..(row + 1) * dim]
                        .copy_from_slice(&denc_r.data[j * dim..(j + 1) * dim]);
                }
                flat_off += n_r;
                train_scores.push(prob);
                train_labels.push(train[ri].label.as_u8());
            }

            // Backward through the encoder. Multi-chunk batches replay the
            // forward from the snapshotted stochastic state to rebuild each
            // chunk's context.
            if let Some((rng_snap, bn_snap)) = snapshot {
                let enc = model.encoder_mut();
                enc.set_rng_state(&rng_snap);
                enc.set_bn_state(&bn_snap);
                for (ci, chunk) in permuted.chunks(cfg.frame_chunk).enumerate() {
                    let x = frames_to_tensor(chunk);
                    let enc_ref = model.encoder_mut();
                    let _ = enc_ref.forward(&x, Mode::Train);
                    let base = ci * cfg.frame_chunk * dim;
                    let g = Tensor::from_vec(
                        &[chunk.len(), dim],
                        denc[base..base + chunk.len() * dim].to_vec(),
                    );
                    enc_ref.backward(&g);
                }
            } else {
                let g = Tensor::from_vec(&[total, dim], denc);
                model.encoder_mut().backward(&g);
            }
            radam_step(&mut model.as_recording_model().parameters_mut(), &optim)?;
        }

        let val_auc = validation_auc(model.as_recording_model(), val)?;
        let train_auc = auc(&train_scores, &train_labels).ok();
        log.epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / (train.len() as f64 / cfg.batch_recordings as f64).max(1.0),
            train_auc,
            val_auc,
        });
        if val_auc > log.best_val_auc {
            log.best_val_auc = val_auc;
            log.best_epoch = epoch;
            let bn = match &model {
                MilModel::Geom(m) => m.encoder.bn_state(),
                MilModel::Attention(m) => m.encoder.bn_state(),
                MilModel::Trans(m) => m.encoder.bn_state(),
            };
            best = Some(take_snapshot(model.as_recording_model(), bn));
        }
    }

    if let Some(snap) = &best {
        restore_snapshot(model.as_recording_model(), snap);
        match &mut model {
            MilModel::Geom(m) => m.encoder.set_bn_state(&snap.bn_state),
            MilModel::Attention(m) => m.encoder.set_bn_state(&snap.bn_state),
            MilModel::Trans(m) => m.encoder.set_bn_state(&snap.bn_state),
        }
    }
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edf::N_CHANNELS;
    use crate::preprocess::{Label, RecordingMeta, Sex, FRAME_LEN};
    use rand::rngs::StdRng;
    use rand::Rng;

    /// Tiny separable corpus: normal recordings carry a strong 10 Hz tone on
    /// the back channels, pathological ones a strong 3 Hz sawtooth burst.
    fn toy_corpus(n_per_class: usize, frames_per_rec: usize, seed: u64) -> Vec<FrameSet> {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut out = Vec::new();
        // Interleave classes so any contiguous split keeps both.
        for r in 0..n_per_class {
            for label in [Label::Normal, Label::Pathological] {
                let frames = (0..frames_per_rec)
                    .map(|fi| {
                        let mut data = Vec::with_capacity(N_CHANNELS * FRAME_LEN);
                        for ch in 0..N_CHANNELS {
                            for t in 0..FRAME_LEN {
                                let noise: f64 = rng.gen_range(-4.0..4.0);
                                let ts = t as f64 / 100.0;
                                let sig = match label {
                                    Label::Normal => {
                                        15.0 * (2.0 * std::f64::consts::PI * 10.0 * ts).sin()
                                    }
                                    Label::Pathological => {
                                        20.0 * (2.0 * std::f64::consts::PI * 3.0 * ts).sin()
                                    }
                                };
                                let amp = if ch % 2 == 0 { 1.0 } else { 0.4 };
                                data.push((noise + amp * sig) as f32);
                            }
                        }
                        Frame { data, index: fi }
                    })
                    .collect();
                out.push(FrameSet {
                    frames,
                    label,
                    meta: RecordingMeta {
                        recording_id: format!("{label:?}-{r}"),
                        sex: if r % 2 == 0 { Sex::Female } else { Sex::Male },
                        hospital_id: "h0".into(),
                    },
                });
            }
        }
        out
    }

    fn small_cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            single_frame_epochs: 3,
            mil_epochs: 3,
            batch_frames: 64,
            batch_recordings: 4,
            frames_per_recording: 8,
            learning_rate: 3e-3,
            seed,
            frame_chunk: 32,
        }
    }

    #[test]
    fn single_frame_training_separates_the_toy_corpus() {
        let corpus = toy_corpus(4, 10, 1);
        let train: Vec<&FrameSet> = corpus[..6].iter().collect();
        let val: Vec<&FrameSet> = corpus[6..].iter().collect();
        let (_, log) = train_single_frame(&train, &val, &small_cfg(7)).unwrap();
        assert!(
            log.best_val_auc > 0.9,
            "validation AUC {} on separable data",
            log.best_val_auc
        );
        let first = log.epochs.first().unwrap().train_loss;
        let last = log.epochs.last().unwrap().train_loss;
        assert!(last < first, "loss should decrease: {first} -> {last}");
    }

    #[test]
    fn mil_training_runs_and_selects_best_epoch() {
        let corpus = toy_corpus(4, 10, 2);
        let train: Vec<&FrameSet> = corpus[..6].iter().collect();
        let val: Vec<&FrameSet> = corpus[6..].iter().collect();
        let (mut model, log) =
            train_mil(MilKind::MiNet, None, &train, &val, &small_cfg(8)).unwrap();
        assert_eq!(log.epochs.len(), 3);
        assert!(log.best_val_auc >= log.epochs.last().unwrap().val_auc - 1e-12);
        // The returned model reproduces the best epoch's validation AUC.
        let restored = validation_auc(model.as_recording_model(), &val).unwrap();
        assert!((restored - log.best_val_auc).abs() < 1e-12);
    }

    #[test]
    fn mil_training_is_deterministic_given_a_seed() {
        let corpus = toy_corpus(3, 8, 3);
        let train: Vec<&FrameSet> = corpus[..4].iter().collect();
        let val: Vec<&FrameSet> = corpus[4..].iter().collect();
        let mut cfg = small_cfg(9);
        cfg.mil_epochs = 2;
        let (mut a, log_a) = train_mil(MilKind::MiNetAttention, None, &train, &val, &cfg).unwrap();
        let (mut b, log_b) = train_mil(MilKind::MiNetAttention, None, &train, &val, &cfg).unwrap();
        let pa: Vec<f64> = a
            .as_recording_model()
            .parameters_mut()
            .iter()
            .flat_map(|p| p.value.data.clone())
            .collect();
        let pb: Vec<f64> = b
            .as_recording_model()
            .parameters_mut()
            .iter()
            .flat_map(|p| p.value.data.clone())
            .collect();
        assert_eq!(pa, pb, "same seed must give bitwise-identical parameters");
        assert_eq!(log_a.best_val_auc, log_b.best_val_auc);
    }

    #[test]
    fn empty_validation_fold_is_rejected() {
        let corpus = toy_corpus(2, 8, 4);
        let train: Vec<&FrameSet> = corpus.iter().collect();
        assert!(matches!(
            train_single_frame(&train, &[], &small_cfg(1)),
            Err(TrainError::NoValidationFold(_))
        ));
        assert!(matches!(
            train_mil(MilKind::MiNet, None, &train, &[], &small_cfg(1)),
            Err(TrainError::NoValidationFold(_))
        ));
    }

    #[test]
    fn frame_sampling_caps_at_the_configured_count() {
        let corpus = toy_corpus(1, 12, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let refs = sample_frame_refs(&corpus[0], 8, &mut rng);
        assert_eq!(refs.len(), 8);
        let refs = sample_frame_refs(&corpus[0], 64, &mut rng);
        assert_eq!(refs.len(), 12, "min(64, available) keeps all frames");
    }
}
