//! Handcrafted features: 190 Riemannian tangent values, 266 normalized band
//! powers and 2,394 band-wise coherences per recording, 2,850 in total.

pub mod bands;
pub mod multitaper;
pub mod riemann;

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::edf::{CHANNEL_LABELS, N_CHANNELS};
use crate::preprocess::FrameSet;
use bands::BandTable;
use multitaper::{
    channel_pairs, multitaper_band_power, multitaper_coherence, SpectralError, DEFAULT_NW,
    DEFAULT_TAPERS,
};
use riemann::{frame_covariance, riemannian_mean, tangent_project, RiemannError, SpdMatrix};

/// Tangent feature count for 19 channels.
pub const N_RIEMANN: usize = 190;
/// Band-power feature count (19 channels x 14 bands).
pub const N_POWER: usize = 266;
/// Coherence feature count (171 pairs x 14 bands).
pub const N_COHERENCE: usize = 2394;
/// Full handcrafted feature count.
pub const N_FEATURES: usize = N_RIEMANN + N_POWER + N_COHERENCE;
/// Frequency-domain subset used by the random forest.
pub const N_FREQUENCY: usize = N_POWER + N_COHERENCE;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Riemann(#[from] RiemannError),
    #[error("feature file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Handcrafted features of one recording.
#[derive(Debug, Clone)]
pub struct FeatureVector {
    pub time_riemann: Vec<f64>,
    pub band_power: Vec<f64>,
    pub coherence: Vec<f64>,
}

impl FeatureVector {
    /// Concatenation in the fixed order: tangent, power, coherence.
    pub fn concat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(N_FEATURES);
        out.extend_from_slice(&self.time_riemann);
        out.extend_from_slice(&self.band_power);
        out.extend_from_slice(&self.coherence);
        out
    }

    /// The 2,660 frequency-domain values (power then coherence).
    pub fn frequency_only(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(N_FREQUENCY);
        out.extend_from_slice(&self.band_power);
        out.extend_from_slice(&self.coherence);
        out
    }
}

/// Elementwise median over equal-length rows. Even counts average the two
/// middle values.
fn elementwise_median(rows: &[Vec<f64>]) -> Vec<f64> {
    let width = rows[0].len();
    let mut out = Vec::with_capacity(width);
    let mut column = Vec::with_capacity(rows.len());
    for j in 0..width {
        column.clear();
        column.extend(rows.iter().map(|r| r[j]));
        column.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = column.len();
        out.push(if n % 2 == 1 {
            column[n / 2]
        } else {
            0.5 * (column[n / 2 - 1] + column[n / 2])
        });
    }
    out
}

/// Per-frame spectral features aggregated by the elementwise median, plus the
/// recording's Karcher-mean covariance.
#[derive(Debug, Clone)]
pub struct RecordingAggregate {
    pub band_power: Vec<f64>,
    pub coherence: Vec<f64>,
    pub covariance_mean: SpdMatrix,
    pub karcher_converged: bool,
}

/// Computes the fold-independent part of the features: median band powers,
/// median coherences, and the Riemannian mean of the frame covariances.
pub fn aggregate_recording(frames: &FrameSet, bands: &BandTable) -> Result<RecordingAggregate, FeatureError> {
    let mut powers = Vec::with_capacity(frames.n_frames());
    let mut coherences = Vec::with_capacity(frames.n_frames());
    let mut covs = Vec::with_capacity(frames.n_frames());
    let mut degenerate = 0usize;
    for frame in &frames.frames {
        match (
            multitaper_band_power(frame, bands, DEFAULT_NW, DEFAULT_TAPERS),
            multitaper_coherence(frame, bands, DEFAULT_NW, DEFAULT_TAPERS),
        ) {
            (Ok(p), Ok(c)) => {
                powers.push(p);
                coherences.push(c);
                covs.push(frame_covariance(frame));
            }
            _ => degenerate += 1,
        }
    }
    if powers.is_empty() {
        return Err(FeatureError::Spectral(SpectralError::DegenerateFrame(
            format!("all {degenerate} frames degenerate"),
        )));
    }
    let karcher = riemannian_mean(&covs)?;
    Ok(RecordingAggregate {
        band_power: elementwise_median(&powers),
        coherence: elementwise_median(&coherences),
        covariance_mean: karcher.mean,
        karcher_converged: karcher.converged,
    })
}

/// Assembles the full feature vector given a tangent reference (usually the
/// Karcher mean of training-fold recording means). With no reference the
/// recording's own mean is used, which zeroes the tangent block; callers
/// wanting informative tangent features must supply a population reference.
pub fn extract_recording_features(
    frames: &FrameSet,
    bands: &BandTable,
    reference: Option<&SpdMatrix>,
) -> Result<FeatureVector, FeatureError> {
    let agg = aggregate_recording(frames, bands)?;
    let vector = features_from_aggregate(&agg, reference)?;
    Ok(vector)
}

/// Tangent-projects an existing aggregate at `reference` and assembles the
/// feature vector. Splitting this from [`aggregate_recording`] lets
/// cross-validation recompute the fold-dependent tangent block without
/// redoing the spectral work.
pub fn features_from_aggregate(
    agg: &RecordingAggregate,
    reference: Option<&SpdMatrix>,
) -> Result<FeatureVector, FeatureError> {
    let reference = reference.unwrap_or(&agg.covariance_mean);
    let time_riemann = tangent_project(reference, &agg.covariance_mean)?;
    Ok(FeatureVector {
        time_riemann,
        band_power: agg.band_power.clone(),
        coherence: agg.coherence.clone(),
    })
}

/// Column names of the feature table, in on-disk order.
pub fn feature_column_names() -> Vec<String> {
    let mut names = Vec::with_capacity(N_FEATURES);
    for i in 0..N_CHANNELS {
        for j in i..N_CHANNELS {
            names.push(format!("tr_{}_{}", CHANNEL_LABELS[i], CHANNEL_LABELS[j]));
        }
    }
    for ch in CHANNEL_LABELS {
        for b in 0..14 {
            names.push(format!("pw_{ch}_b{b:02}"));
        }
    }
    for (x, y) in channel_pairs() {
        for b in 0..14 {
            names.push(format!(
                "coh_{}_{}_b{b:02}",
                CHANNEL_LABELS[x], CHANNEL_LABELS[y]
            ));
        }
    }
    names
}

/// One row of the feature table.
#[derive(Debug, Clone)]
pub struct FeatureRow {
    pub recording_id: String,
    pub label: u8,
    pub values: Vec<f64>,
}

/// Writes the tab-separated feature table with a header line:
/// recording_id, label, then the 2,850 feature columns.
pub fn write_feature_table(rows: &[FeatureRow], path: &Path) -> Result<(), FeatureError> {
    let mut out = String::new();
    out.push_str("recording_id\tlabel");
    for name in feature_column_names() {
        out.push('\t');
        out.push_str(&name);
    }
    out.push('\n');
    for row in rows {
        if row.values.len() != N_FEATURES {
            return Err(FeatureError::Format(format!(
                "row {} has {} values, expected {N_FEATURES}",
                row.recording_id,
                row.values.len()
            )));
        }
        out.push_str(&row.recording_id);
        out.push('\t');
        out.push_str(&row.label.to_string());
        for v in &row.values {
            out.push('\t');
            let mut buf = ryu_format(*v);
            if buf.is_empty() {
                buf = "0".into();
            }
            out.push_str(&buf);
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn ryu_format(v: f64) -> String {
    // Shortest round-trippable representation the std formatter provides.
    format!("{v:e}")
}

pub fn read_feature_table(path: &Path) -> Result<Vec<FeatureRow>, FeatureError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| FeatureError::Format("empty feature table".into()))?;
    let n_cols = header.split('\t').count();
    if n_cols != N_FEATURES + 2 {
        return Err(FeatureError::Format(format!(
            "expected {} columns, found {n_cols}",
            N_FEATURES + 2
        )));
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let recording_id = parts
            .next()
            .ok_or_else(|| FeatureError::Format(format!("line {}", lineno + 2)))?
            .to_string();
        let label: u8 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| FeatureError::Format(format!("line {}: bad label", lineno + 2)))?;
        let values: Vec<f64> = parts
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| FeatureError::Format(format!("line {}: bad value {s}", lineno + 2)))
            })
            .collect::<Result<_, _>>()?;
        if values.len() != N_FEATURES {
            return Err(FeatureError::Format(format!(
                "line {}: {} values",
                lineno + 2,
                values.len()
            )));
        }
        rows.push(FeatureRow {
            recording_id,
            label,
            values,
        });
    }
    Ok(rows)
}

const MEANS_MAGIC: &[u8; 8] = b"EEGSPDMN";

/// Sidecar with each recording's covariance Karcher mean, so evaluation can
/// re-project tangent features per fold without redoing spectral work.
pub fn write_covariance_means(
    entries: &[(String, SpdMatrix)],
    path: &Path,
) -> Result<(), FeatureError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MEANS_MAGIC)?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (id, m) in entries {
        let bytes = id.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        let mat = m.matrix();
        assert_eq!(mat.nrows(), N_CHANNELS);
        for i in 0..N_CHANNELS {
            for j in 0..N_CHANNELS {
                w.write_all(&mat[(i, j)].to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_covariance_means(path: &Path) -> Result<Vec<(String, SpdMatrix)>, FeatureError> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MEANS_MAGIC {
        return Err(FeatureError::Format("bad covariance-means magic".into()));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let count = u32::from_le_bytes(u32buf) as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut u32buf)?;
        let len = u32::from_le_bytes(u32buf) as usize;
        let mut id = vec![0u8; len];
        r.read_exact(&mut id)?;
        let id = String::from_utf8(id).map_err(|_| FeatureError::Format("id".into()))?;
        let mut data = vec![0.0f64; N_CHANNELS * N_CHANNELS];
        let mut f64buf = [0u8; 8];
        for slot in &mut data {
            r.read_exact(&mut f64buf)?;
            *slot = f64::from_le_bytes(f64buf);
        }
        let m = nalgebra::DMatrix::from_row_slice(N_CHANNELS, N_CHANNELS, &data);
        out.push((id, SpdMatrix::try_new(m).map_err(FeatureError::Riemann)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::preprocess::{Frame, Label, RecordingMeta, Sex, FRAME_LEN, MIN_VALID_FRAMES};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn synthetic_frameset(seed: u64, n_frames: usize) -> FrameSet {
        let mut rng = StdRng::seed_from_u64(seed);
        let frames = (0..n_frames)
            .map(|i| Frame {
                data: (0..N_CHANNELS * FRAME_LEN)
                    .map(|_| rng.gen_range(-40.0f64..40.0) as f32)
                    .collect(),
                index: i,
            })
            .collect();
        FrameSet {
            frames,
            label: Label::Normal,
            meta: RecordingMeta {
                recording_id: "test".into(),
                sex: Sex::Female,
                hospital_id: "h".into(),
            },
        }
    }

    #[test]
    fn feature_vector_has_2850_values() {
        let fs = synthetic_frameset(1, MIN_VALID_FRAMES);
        let bands = BandTable::standard();
        let fv = extract_recording_features(&fs, &bands, None).unwrap();
        assert_eq!(fv.time_riemann.len(), N_RIEMANN);
        assert_eq!(fv.band_power.len(), N_POWER);
        assert_eq!(fv.coherence.len(), N_COHERENCE);
        assert_eq!(fv.concat().len(), 2850);
        assert_eq!(fv.frequency_only().len(), 2660);
        for &v in &fv.band_power {
            assert!((0.0..=1.0).contains(&v));
        }
        for &v in &fv.coherence {
            assert!((0.0..=1.0 + 1e-12).contains(&v));
        }
    }

    #[test]
    fn identical_frames_aggregate_to_the_per_frame_values() {
        let mut fs = synthetic_frameset(2, 1);
        let frame = fs.frames[0].clone();
        fs.frames = (0..MIN_VALID_FRAMES)
            .map(|i| Frame {
                data: frame.data.clone(),
                index: i,
            })
            .collect();
        let bands = BandTable::standard();
        let agg = aggregate_recording(&fs, &bands).unwrap();
        let per_frame_power =
            multitaper_band_power(&frame, &bands, DEFAULT_NW, DEFAULT_TAPERS).unwrap();
        for (a, b) in agg.band_power.iter().zip(&per_frame_power) {
            assert!((a - b).abs() < 1e-12);
        }
        let cov = frame_covariance(&frame);
        assert!((agg.covariance_mean.matrix() - cov.matrix()).norm() < 1e-9);
    }

    #[test]
    fn median_resists_one_outlier_frame() {
        let rows = vec![vec![1.0, 5.0], vec![2.0, 6.0], vec![100.0, -100.0]];
        let med = elementwise_median(&rows);
        assert_eq!(med, vec![2.0, 5.0]);
    }

    #[test]
    fn feature_table_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.tsv");
        let mut rng = StdRng::seed_from_u64(3);
        let rows: Vec<FeatureRow> = (0..3)
            .map(|i| FeatureRow {
                recording_id: format!("rec{i}"),
                label: (i % 2) as u8,
                values: (0..N_FEATURES).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            })
            .collect();
        write_feature_table(&rows, &path).unwrap();
        let back = read_feature_table(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.recording_id, b.recording_id);
            assert_eq!(a.label, b.label);
            for (x, y) in a.values.iter().zip(&b.values) {
                assert_eq!(x, y, "feature values must round-trip exactly");
            }
        }
    }

    #[test]
    fn covariance_means_sidecar_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("means.bin");
        let mut rng = StdRng::seed_from_u64(4);
        let make = |rng: &mut StdRng| {
            let a = nalgebra::DMatrix::from_fn(N_CHANNELS, N_CHANNELS, |_, _| {
                rng.gen_range(-1.0..1.0)
            });
            let m = &a * a.transpose() + nalgebra::DMatrix::identity(N_CHANNELS, N_CHANNELS);
            SpdMatrix::try_new(m).unwrap()
        };
        let entries = vec![("a".to_string(), make(&mut rng)), ("b".to_string(), make(&mut rng))];
        write_covariance_means(&entries, &path).unwrap();
        let back = read_covariance_means(&path).unwrap();
        assert_eq!(back.len(), 2);
        for ((id_a, m_a), (id_b, m_b)) in entries.iter().zip(&back) {
            assert_eq!(id_a, id_b);
            assert_eq!(m_a.matrix(), m_b.matrix());
        }
    }
}
