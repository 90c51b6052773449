//! Signal preprocessing: mains notch, band-limiting, resampling to 100 Hz,
//! common average referencing, 6-second framing and artifact rejection.

pub mod archive;
pub mod filter;
pub mod resample;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edf::{RawRecording, N_CHANNELS};
use filter::{design_highpass_for_mask, design_lowpass_for_mask, design_notch, FilterError};
use filter::{HIGHPASS_MASK, LOWPASS_MASK};
use resample::{resample, ResampleError};

/// Samples per second after resampling.
pub const TARGET_RATE: f64 = 100.0;

/// Default frame length in samples (6 s at 100 Hz).
pub const FRAME_LEN: usize = 600;

/// Minimum number of valid frames for a recording to survive rejection.
pub const MIN_VALID_FRAMES: usize = 50;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Resample(#[from] ResampleError),
}

/// Normality label: 1 = normal, 0 = pathological.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Pathological,
    Normal,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Pathological => 0,
            Label::Normal => 1,
        }
    }

    pub fn as_f64(self) -> f64 {
        self.as_u8() as f64
    }

    pub fn from_u8(v: u8) -> Option<Label> {
        match v {
            0 => Some(Label::Pathological),
            1 => Some(Label::Normal),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    Female,
    Male,
}

impl Sex {
    pub fn as_u8(self) -> u8 {
        match self {
            Sex::Female => 0,
            Sex::Male => 1,
        }
    }

    pub fn from_u8(v: u8) -> Option<Sex> {
        match v {
            0 => Some(Sex::Female),
            1 => Some(Sex::Male),
            _ => None,
        }
    }
}

/// Recording-level metadata carried through the pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub recording_id: String,
    pub sex: Sex,
    pub hospital_id: String,
}

/// One 6-second, 19-channel frame at 100 Hz, stored channel-major as f32.
#[derive(Debug, Clone)]
pub struct Frame {
    pub data: Vec<f32>,
    pub index: usize,
}

impl Frame {
    pub fn channel(&self, ch: usize) -> &[f32] {
        &self.data[ch * FRAME_LEN..(ch + 1) * FRAME_LEN]
    }
}

/// The valid frames of one recording plus its label and metadata.
#[derive(Debug, Clone)]
pub struct FrameSet {
    pub frames: Vec<Frame>,
    pub label: Label,
    pub meta: RecordingMeta,
}

impl FrameSet {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }
}

/// Distinguished outcome of slicing: either a usable frame set or an
/// exclusion with the number of valid frames that survived.
#[derive(Debug)]
pub enum SliceOutcome {
    Kept(FrameSet),
    Excluded { valid_frames: usize, meta: RecordingMeta },
}

/// Pipeline options. Defaults match the production configuration; the
/// switches exist for sensitivity checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Mains frequency: 50 (EU) or 60 (US) Hz.
    pub notch_freq: f64,
    pub notch_q: f64,
    pub frame_seconds: f64,
    /// Absolute rejection threshold in microvolts.
    pub reject_threshold_uv: f64,
    /// Apply the amplitude threshold after re-referencing (the signal the
    /// models see) rather than before.
    pub reject_after_reference: bool,
    /// Forward-backward filtering instead of single-pass causal.
    pub zero_phase: bool,
    /// Per-channel variance below this marks a flat line.
    pub flatline_variance: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            notch_freq: 50.0,
            notch_q: 5.0,
            frame_seconds: 6.0,
            reject_threshold_uv: 800.0,
            reject_after_reference: true,
            zero_phase: false,
            flatline_variance: 1e-12,
        }
    }
}

impl PreprocessConfig {
    pub fn frame_len(&self) -> usize {
        (self.frame_seconds * TARGET_RATE).round() as usize
    }
}

/// Subtracts the instantaneous mean across channels from every channel.
///
/// `channels` is a set of equal-length rows. After the call the cross-channel
/// mean is zero at every time point.
pub fn common_average_reference(channels: &mut [Vec<f64>]) {
    let n_ch = channels.len();
    if n_ch == 0 {
        return;
    }
    let len = channels[0].len();
    for t in 0..len {
        let mut mean = 0.0;
        for row in channels.iter() {
            mean += row[t];
        }
        mean /= n_ch as f64;
        for row in channels.iter_mut() {
            row[t] -= mean;
        }
    }
}

fn frame_is_valid(channels: &[Vec<f64>], start: usize, len: usize, cfg: &PreprocessConfig) -> bool {
    for row in channels {
        let window = &row[start..start + len];
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for &v in window {
            if v.abs() > cfg.reject_threshold_uv {
                return false;
            }
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / len as f64;
        let var = (sum_sq / len as f64 - mean * mean).max(0.0);
        if var < cfg.flatline_variance {
            return false;
        }
    }
    true
}

/// Slices a re-referenced 100 Hz recording into adjacent frames, drops
/// invalid ones and excludes recordings with too few valid frames. The
/// trailing remainder shorter than one frame is discarded.
pub fn slice_and_reject(
    channels: &[Vec<f64>],
    label: Label,
    meta: RecordingMeta,
    cfg: &PreprocessConfig,
) -> SliceOutcome {
    let frame_len = cfg.frame_len();
    let n = channels[0].len();
    let n_frames = n / frame_len;
    let mut frames = Vec::new();
    for f in 0..n_frames {
        let start = f * frame_len;
        if !frame_is_valid(channels, start, frame_len, cfg) {
            continue;
        }
        let mut data = Vec::with_capacity(channels.len() * frame_len);
        for row in channels {
            data.extend(row[start..start + frame_len].iter().map(|&v| v as f32));
        }
        frames.push(Frame { data, index: f });
    }
    if frames.len() < MIN_VALID_FRAMES {
        return SliceOutcome::Excluded {
            valid_frames: frames.len(),
            meta,
        };
    }
    SliceOutcome::Kept(FrameSet { frames, label, meta })
}

/// Runs the full preprocessing chain on a parsed recording:
/// notch -> high-pass -> low-pass -> resample -> common average reference ->
/// slice -> reject.
pub fn preprocess_recording(
    raw: &RawRecording,
    label: Label,
    meta: RecordingMeta,
    cfg: &PreprocessConfig,
) -> Result<SliceOutcome, PreprocessError> {
    assert_eq!(raw.channels.len(), N_CHANNELS);
    let rate = raw.rate();
    let notch = design_notch(cfg.notch_freq, cfg.notch_q, rate)?;
    let (_, highpass) = design_highpass_for_mask(&HIGHPASS_MASK, rate)?;
    let (_, lowpass) = design_lowpass_for_mask(&LOWPASS_MASK, rate)?;

    let mut channels: Vec<Vec<f64>> = Vec::with_capacity(N_CHANNELS);
    for ch in &raw.channels {
        let mut x = ch.samples.clone();
        if cfg.zero_phase {
            notch.run_zero_phase(&mut x);
            highpass.run_zero_phase(&mut x);
            lowpass.run_zero_phase(&mut x);
        } else {
            notch.run(&mut x);
            highpass.run(&mut x);
            lowpass.run(&mut x);
        }
        channels.push(resample(&x, rate, TARGET_RATE)?);
    }
    if cfg.reject_after_reference {
        common_average_reference(&mut channels);
        Ok(slice_and_reject(&channels, label, meta, cfg))
    } else {
        // Threshold on the un-referenced signal, then re-reference what the
        // models will actually see.
        let pre_reference = channels.clone();
        common_average_reference(&mut channels);
        let frame_len = cfg.frame_len();
        let n_frames = pre_reference[0].len() / frame_len;
        let mut frames = Vec::new();
        for f in 0..n_frames {
            let start = f * frame_len;
            if !frame_is_valid(&pre_reference, start, frame_len, cfg) {
                continue;
            }
            let mut data = Vec::with_capacity(N_CHANNELS * frame_len);
            for row in &channels {
                data.extend(row[start..start + frame_len].iter().map(|&v| v as f32));
            }
            frames.push(Frame { data, index: f });
        }
        if frames.len() < MIN_VALID_FRAMES {
            Ok(SliceOutcome::Excluded {
                valid_frames: frames.len(),
                meta,
            })
        } else {
            Ok(SliceOutcome::Kept(FrameSet { frames, label, meta }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> RecordingMeta {
        RecordingMeta {
            recording_id: "r0".into(),
            sex: Sex::Female,
            hospital_id: "h0".into(),
        }
    }

    fn noisy_channels(n: usize, seed: u64) -> Vec<Vec<f64>> {
        // Cheap deterministic pseudo-noise, nonzero variance everywhere.
        let mut state = seed | 1;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state as f64 / u64::MAX as f64 - 0.5) * 40.0
        };
        (0..N_CHANNELS)
            .map(|_| (0..n).map(|_| next()).collect())
            .collect()
    }

    #[test]
    fn car_zeroes_identical_channels() {
        let mut ch: Vec<Vec<f64>> = (0..N_CHANNELS).map(|_| vec![7.0, -2.0, 3.5]).collect();
        common_average_reference(&mut ch);
        for row in &ch {
            for &v in row {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn car_single_hot_channel() {
        let mut ch: Vec<Vec<f64>> = (0..N_CHANNELS).map(|_| vec![0.0]).collect();
        ch[4][0] = 19.0;
        common_average_reference(&mut ch);
        for (i, row) in ch.iter().enumerate() {
            let want = if i == 4 { 18.0 } else { -1.0 };
            assert!((row[0] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn car_column_means_vanish() {
        let mut ch = noisy_channels(500, 42);
        common_average_reference(&mut ch);
        for t in 0..500 {
            let mean: f64 = ch.iter().map(|row| row[t]).sum::<f64>() / N_CHANNELS as f64;
            assert!(mean.abs() < 1e-12);
        }
    }

    #[test]
    fn clean_305_seconds_gives_50_frames() {
        let cfg = PreprocessConfig::default();
        let ch = noisy_channels(30_500, 7);
        match slice_and_reject(&ch, Label::Normal, meta(), &cfg) {
            SliceOutcome::Kept(fs) => assert_eq!(fs.n_frames(), 50),
            SliceOutcome::Excluded { .. } => panic!("clean recording excluded"),
        }
    }

    #[test]
    fn single_outlier_sample_drops_its_frame() {
        let cfg = PreprocessConfig::default();
        let mut ch = noisy_channels(31_200, 11);
        ch[3][700] = 801.0;
        match slice_and_reject(&ch, Label::Normal, meta(), &cfg) {
            SliceOutcome::Kept(fs) => {
                assert_eq!(fs.n_frames(), 51);
                assert!(fs.frames.iter().all(|f| f.index != 1));
            }
            SliceOutcome::Excluded { .. } => panic!("unexpected exclusion"),
        }
    }

    #[test]
    fn flatline_channel_drops_its_frame() {
        let cfg = PreprocessConfig::default();
        let mut ch = noisy_channels(31_200, 13);
        for v in &mut ch[0][1200..1800] {
            *v = 5.0;
        }
        match slice_and_reject(&ch, Label::Normal, meta(), &cfg) {
            SliceOutcome::Kept(fs) => {
                assert_eq!(fs.n_frames(), 51);
                assert!(fs.frames.iter().all(|f| f.index != 2));
            }
            SliceOutcome::Excluded { .. } => panic!("unexpected exclusion"),
        }
    }

    #[test]
    fn short_recording_is_excluded() {
        let cfg = PreprocessConfig::default();
        let ch = noisy_channels(29_400, 3);
        match slice_and_reject(&ch, Label::Normal, meta(), &cfg) {
            SliceOutcome::Excluded { valid_frames, .. } => assert_eq!(valid_frames, 49),
            SliceOutcome::Kept(_) => panic!("49-frame recording kept"),
        }
    }

    #[test]
    fn emitted_frames_satisfy_validity_by_construction() {
        let cfg = PreprocessConfig::default();
        let ch = noisy_channels(36_000, 21);
        if let SliceOutcome::Kept(fs) = slice_and_reject(&ch, Label::Normal, meta(), &cfg) {
            for frame in &fs.frames {
                for c in 0..N_CHANNELS {
                    let row = frame.channel(c);
                    assert!(row.iter().all(|v| v.abs() <= 800.0));
                    let mean: f32 = row.iter().sum::<f32>() / row.len() as f32;
                    let var: f32 =
                        row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / row.len() as f32;
                    assert!(var as f64 >= 1e-12);
                }
            }
        } else {
            panic!("corpus unexpectedly excluded");
        }
    }
}
