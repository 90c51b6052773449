//! Synthetic EEG corpora: pink-noise background with alpha-band rhythm,
//! configurable pathology effects (delta-band power shift and spike-wave
//! bursts), hospital gain/noise heterogeneity, emitted as real EDF files
//! plus a JSON-lines label manifest.

use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::edf::{write_edf, Channel, EdfWriteOptions, RawRecording, CHANNEL_LABELS, N_CHANNELS};
use crate::preprocess::{Label, Sex};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Edf(#[from] crate::edf::EdfError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Sampling rate of generated corpora.
pub const SYNTH_RATE: f64 = 200.0;

/// Frontal channels receiving spike-wave bursts.
const BURST_CHANNELS: [usize; 7] = [0, 1, 2, 3, 4, 5, 6];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HospitalEffect {
    pub gain: f64,
    pub noise_floor_uv: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathologySignature {
    /// Band whose power is multiplied on the affected channels.
    pub shift_band: (f64, f64),
    /// Channel indices receiving the power shift.
    pub shift_channels: Vec<usize>,
    /// Multiplicative power factor (1.0 = no effect).
    pub shift_factor: f64,
    /// Spike-wave events per minute (0 = none).
    pub burst_rate_per_min: f64,
    /// Peak burst amplitude in microvolts.
    pub burst_amplitude_uv: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_recordings: usize,
    pub pathology_fraction: f64,
    pub hospital_effects: Vec<HospitalEffect>,
    pub pathology: PathologySignature,
    /// Closed range of recording durations in whole seconds.
    pub duration_range: (usize, usize),
    pub seed: u64,
}

impl CorpusSpec {
    /// The reference corpus: 600 recordings, strong and cleanly detectable
    /// pathology, three mildly different hospitals.
    pub fn reference() -> CorpusSpec {
        CorpusSpec {
            n_recordings: 600,
            pathology_fraction: 0.5,
            hospital_effects: vec![
                HospitalEffect { gain: 1.0, noise_floor_uv: 1.0 },
                HospitalEffect { gain: 1.15, noise_floor_uv: 2.0 },
                HospitalEffect { gain: 0.9, noise_floor_uv: 1.5 },
            ],
            pathology: PathologySignature {
                shift_band: (0.5, 4.0),
                shift_channels: (0..N_CHANNELS).collect(),
                shift_factor: 3.0,
                burst_rate_per_min: 2.0,
                burst_amplitude_uv: 120.0,
            },
            duration_range: (305, 330),
            seed: 20_240_001,
        }
    }

    /// A small corpus for smoke tests and examples.
    pub fn smoke() -> CorpusSpec {
        CorpusSpec {
            n_recordings: 24,
            ..CorpusSpec::reference()
        }
    }

    /// No pathology effect at all: both classes share one distribution.
    pub fn null_effect(n_recordings: usize, seed: u64) -> CorpusSpec {
        CorpusSpec {
            n_recordings,
            pathology: PathologySignature {
                shift_band: (0.5, 4.0),
                shift_channels: (0..N_CHANNELS).collect(),
                shift_factor: 1.0,
                burst_rate_per_min: 0.0,
                burst_amplitude_uv: 0.0,
            },
            seed,
            ..CorpusSpec::reference()
        }
    }
}

/// Label manifest row for a generated recording.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub recording_id: String,
    pub label: u8,
    pub sex: String,
    pub hospital_id: String,
    pub duration_s: usize,
}

impl CorpusEntry {
    pub fn label_enum(&self) -> Option<Label> {
        Label::from_u8(self.label)
    }

    pub fn sex_enum(&self) -> Option<Sex> {
        match self.sex.as_str() {
            "F" => Some(Sex::Female),
            "M" => Some(Sex::Male),
            _ => None,
        }
    }
}

fn is_pathological(index: usize, n: usize, fraction: f64) -> bool {
    // Evenly interleaved assignment with exactly round(n * fraction) cases.
    let before = ((index as f64) * fraction).floor() as usize;
    let after = ((index as f64 + 1.0) * fraction).floor() as usize;
    let _ = n;
    after > before
}

/// One channel of pink noise via spectral shaping: amplitude falls as
/// 1/sqrt(f) (1/f power), random phases, unit-RMS output scaled by `rms`.
fn pink_noise(n: usize, rms: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut spectrum = vec![Complex64::new(0.0, 0.0); n];
    let df = SYNTH_RATE / n as f64;
    for k in 1..=n / 2 {
        let f = k as f64 * df;
        let amp = 1.0 / f.sqrt();
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let magnitude = amp * (0.5 + rng.gen::<f64>());
        let v = Complex64::from_polar(magnitude, phase);
        spectrum[k] = v;
        if k != n - k && n - k < n {
            spectrum[n - k] = v.conj();
        }
    }
    let fft = FftPlanner::new().plan_fft_inverse(n);
    fft.process(&mut spectrum);
    let mut out: Vec<f64> = spectrum.iter().map(|c| c.re).collect();
    let cur_rms = (out.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    if cur_rms > 0.0 {
        let scale = rms / cur_rms;
        for v in &mut out {
            *v *= scale;
        }
    }
    out
}

/// A 3 Hz spike-and-wave template covering one cycle at 200 Hz (about 67
/// samples): a sharp positive spike followed by a slow negative half-wave.
fn spike_wave_cycle(amplitude: f64) -> Vec<f64> {
    let cycle = (SYNTH_RATE / 3.0).round() as usize;
    let spike_len = cycle / 5;
    let mut out = vec![0.0; cycle];
    for (i, v) in out.iter_mut().enumerate().take(spike_len) {
        // Triangular spike.
        let x = i as f64 / spike_len as f64;
        *v = amplitude * (1.0 - (2.0 * x - 1.0).abs());
    }
    for i in spike_len..cycle {
        let x = (i - spike_len) as f64 / (cycle - spike_len) as f64;
        out[i] = -0.6 * amplitude * (std::f64::consts::PI * x).sin();
    }
    out
}

/// Generates one recording deterministically from the spec and its index.
pub fn generate_recording(spec: &CorpusSpec, index: usize) -> (RawRecording, CorpusEntry) {
    let mut rng = ChaCha8Rng::seed_from_u64(
        spec.seed
            .wrapping_mul(0x9e3779b97f4a7c15)
            .wrapping_add(index as u64),
    );
    let duration = rng.gen_range(spec.duration_range.0..=spec.duration_range.1);
    let n = duration * SYNTH_RATE as usize;
    let pathological = is_pathological(index, spec.n_recordings, spec.pathology_fraction);
    let hospital = index % spec.hospital_effects.len().max(1);
    let effect = &spec.hospital_effects[hospital];
    let sex = if rng.gen::<bool>() { Sex::Male } else { Sex::Female };

    let df = SYNTH_RATE / n as f64;
    let mut channels = Vec::with_capacity(N_CHANNELS);
    // Common alpha rhythm phase so channels correlate realistically.
    let alpha_phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);

    for (ch, label) in CHANNEL_LABELS.iter().enumerate() {
        let mut x = pink_noise(n, 15.0, &mut rng);

        // Delta-band power shift for pathological recordings: amplify the
        // band content via an extra shaped-noise component so the shift is a
        // true power multiplication in expectation.
        if pathological
            && spec.pathology.shift_factor != 1.0
            && spec.pathology.shift_channels.contains(&ch)
        {
            let (lo, hi) = spec.pathology.shift_band;
            let extra_power = spec.pathology.shift_factor - 1.0;
            if extra_power > 0.0 {
                let mut spectrum = vec![Complex64::new(0.0, 0.0); n];
                for k in 1..=n / 2 {
                    let f = k as f64 * df;
                    if f < lo || f > hi {
                        continue;
                    }
                    let amp = 1.0 / f.sqrt();
                    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
                    let v = Complex64::from_polar(amp * (0.5 + rng.gen::<f64>()), phase);
                    spectrum[k] = v;
                    spectrum[n - k] = v.conj();
                }
                let fft = FftPlanner::new().plan_fft_inverse(n);
                fft.process(&mut spectrum);
                // Match the band component to the background level in the
                // band, scaled by sqrt(extra power).
                let band: Vec<f64> = spectrum.iter().map(|c| c.re).collect();
                let band_rms = (band.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
                if band_rms > 0.0 {
                    let target = 9.0 * extra_power.sqrt();
                    let s = target / band_rms;
                    for (xi, bi) in x.iter_mut().zip(&band) {
                        *xi += s * bi;
                    }
                }
            }
        }

        // Posterior alpha rhythm.
        let posterior = ch >= 12;
        let alpha_amp = if posterior {
            rng.gen_range(8.0..14.0)
        } else {
            rng.gen_range(2.0..5.0)
        };
        for (i, v) in x.iter_mut().enumerate() {
            let t = i as f64 / SYNTH_RATE;
            *v += alpha_amp * (std::f64::consts::TAU * 10.0 * t + alpha_phase).sin();
        }

        // Hospital gain and noise floor.
        for v in x.iter_mut() {
            *v = *v * effect.gain + rng.gen_range(-1.0..1.0) * effect.noise_floor_uv;
        }

        channels.push(Channel {
            label: label.to_string(),
            samples: x,
            rate: SYNTH_RATE,
        });
    }

    // Spike-wave bursts on frontal channels, shared timing across channels.
    if pathological && spec.pathology.burst_rate_per_min > 0.0 {
        let n_bursts =
            ((duration as f64 / 60.0) * spec.pathology.burst_rate_per_min).round() as usize;
        let cycle = spike_wave_cycle(spec.pathology.burst_amplitude_uv);
        for _ in 0..n_bursts.max(1) {
            let start = rng.gen_range(0..n.saturating_sub(3 * cycle.len()));
            let cycles = rng.gen_range(2..=4);
            for ch in BURST_CHANNELS {
                let scale = rng.gen_range(0.7..1.0);
                let row = &mut channels[ch].samples;
                for c in 0..cycles {
                    for (i, &v) in cycle.iter().enumerate() {
                        row[start + c * cycle.len() + i] += scale * v;
                    }
                }
            }
        }
    }

    let recording = RawRecording {
        channels,
        duration: duration as f64,
        source_path: String::new(),
    };
    let entry = CorpusEntry {
        recording_id: format!("synth-{index:05}"),
        label: if pathological {
            Label::Pathological.as_u8()
        } else {
            Label::Normal.as_u8()
        },
        sex: match sex {
            Sex::Female => "F".into(),
            Sex::Male => "M".into(),
        },
        hospital_id: format!("h{hospital:02}"),
        duration_s: duration,
    };
    (recording, entry)
}

/// Generates the whole corpus under `out_dir`: one EDF per recording plus
/// `labels.jsonl`. Returns the manifest entries in index order.
pub fn generate_corpus(spec: &CorpusSpec, out_dir: &Path) -> Result<Vec<CorpusEntry>, SynthError> {
    std::fs::create_dir_all(out_dir)?;
    let results: Result<Vec<CorpusEntry>, SynthError> = (0..spec.n_recordings)
        .into_par_iter()
        .map(|i| {
            let (recording, entry) = generate_recording(spec, i);
            let bytes = write_edf(
                &recording,
                &EdfWriteOptions {
                    patient_id: entry.recording_id.clone(),
                    recording_id: entry.recording_id.clone(),
                },
            )?;
            std::fs::write(out_dir.join(format!("{}.edf", entry.recording_id)), bytes)?;
            Ok(entry)
        })
        .collect();
    let entries = results?;
    let mut manifest = String::new();
    for e in &entries {
        manifest.push_str(&serde_json::to_string(e).expect("manifest row"));
        manifest.push('\n');
    }
    std::fs::write(out_dir.join("labels.jsonl"), manifest)?;
    Ok(entries)
}

pub fn read_corpus_manifest(path: &Path) -> Result<Vec<CorpusEntry>, SynthError> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("corpus manifest row"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edf::parse_edf;
    use crate::preprocess::{
        preprocess_recording, PreprocessConfig, RecordingMeta, SliceOutcome, MIN_VALID_FRAMES,
    };

    fn tiny_spec(n: usize, seed: u64) -> CorpusSpec {
        CorpusSpec {
            n_recordings: n,
            duration_range: (305, 315),
            ..CorpusSpec::reference()
        }
        .with_seed(seed)
    }

    impl CorpusSpec {
        fn with_seed(mut self, seed: u64) -> CorpusSpec {
            self.seed = seed;
            self
        }
    }

    #[test]
    fn generated_recordings_survive_the_pipeline() {
        let spec = tiny_spec(4, 1);
        for i in 0..4 {
            let (rec, entry) = generate_recording(&spec, i);
            let bytes = write_edf(&rec, &EdfWriteOptions::default()).unwrap();
            let (_, parsed) = parse_edf(&bytes).unwrap();
            assert_eq!(parsed.channels.len(), N_CHANNELS);
            let outcome = preprocess_recording(
                &parsed,
                entry.label_enum().unwrap(),
                RecordingMeta {
                    recording_id: entry.recording_id.clone(),
                    sex: entry.sex_enum().unwrap(),
                    hospital_id: entry.hospital_id.clone(),
                },
                &PreprocessConfig::default(),
            )
            .unwrap();
            match outcome {
                SliceOutcome::Kept(fs) => {
                    assert!(fs.n_frames() >= MIN_VALID_FRAMES, "{}", fs.n_frames())
                }
                SliceOutcome::Excluded { valid_frames, .. } => {
                    panic!("recording excluded with {valid_frames} frames")
                }
            }
        }
    }

    #[test]
    fn same_seed_gives_byte_identical_edf() {
        let spec = tiny_spec(2, 2);
        let (rec_a, _) = generate_recording(&spec, 1);
        let (rec_b, _) = generate_recording(&spec, 1);
        let a = write_edf(&rec_a, &EdfWriteOptions::default()).unwrap();
        let b = write_edf(&rec_b, &EdfWriteOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn label_balance_matches_the_fraction() {
        let spec = tiny_spec(101, 3);
        let pathological = (0..101)
            .filter(|&i| is_pathological(i, 101, spec.pathology_fraction))
            .count();
        let frac = pathological as f64 / 101.0;
        assert!((frac - spec.pathology_fraction).abs() <= 1.0 / 101.0);
    }

    #[test]
    fn null_effect_classes_share_a_distribution() {
        // With factor 1 and burst rate 0, pathological and normal recordings
        // are generated identically; compare delta-band energy across groups.
        let spec = CorpusSpec::null_effect(12, 4);
        let mut delta_by_label = [Vec::new(), Vec::new()];
        for i in 0..spec.n_recordings {
            let (rec, entry) = generate_recording(&spec, i);
            // Mean squared amplitude of a frontal channel as a crude proxy.
            let x = &rec.channels[0].samples;
            let power = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
            delta_by_label[entry.label as usize].push(power);
        }
        let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        let m0 = mean(&delta_by_label[0]);
        let m1 = mean(&delta_by_label[1]);
        let rel = (m0 - m1).abs() / m0.max(m1);
        assert!(rel < 0.25, "group powers differ by {rel} on a null corpus");
    }

    #[test]
    fn pathological_recordings_carry_more_low_band_power() {
        let spec = tiny_spec(8, 5);
        let mut powers = [Vec::new(), Vec::new()];
        for i in 0..8 {
            let (rec, entry) = generate_recording(&spec, i);
            let x = &rec.channels[9].samples; // Cz: shifted band, no bursts
            let power = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
            powers[entry.label as usize].push(power);
        }
        let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        let pathological = mean(&powers[Label::Pathological.as_u8() as usize]);
        let normal = mean(&powers[Label::Normal.as_u8() as usize]);
        assert!(
            pathological > normal * 1.2,
            "pathological {pathological} vs normal {normal}"
        );
    }

    #[test]
    fn corpus_directory_layout_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let spec = tiny_spec(3, 6);
        let entries = generate_corpus(&spec, dir.path()).unwrap();
        assert_eq!(entries.len(), 3);
        for e in &entries {
            assert!(dir.path().join(format!("{}.edf", e.recording_id)).exists());
        }
        let back = read_corpus_manifest(&dir.path().join("labels.jsonl")).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[0].recording_id, "synth-00000");
    }
}
