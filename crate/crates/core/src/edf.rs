//! European Data Format (EDF) reading and writing.
//!
//! The parser is bit-exact against the EDF layout: a 256-byte fixed-width
//! ASCII header, 256 bytes of per-signal header fields (field-major), and
//! data records of 16-bit two's-complement little-endian samples. Parsed
//! recordings are calibrated to physical units and restricted to the 19
//! standard 10-20 channels in a fixed canonical order.

use std::fmt::Write as _;

use thiserror::Error;

/// Canonical 10-20 channel labels, in the order used everywhere downstream.
pub const CHANNEL_LABELS: [&str; 19] = [
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "T3", "C3", "Cz", "C4", "T4", "T5", "P3", "Pz",
    "P4", "T6", "O1", "O2",
];

/// Number of canonical channels.
pub const N_CHANNELS: usize = 19;

#[derive(Debug, Error)]
pub enum EdfError {
    #[error("malformed EDF header: {0}")]
    MalformedHeader(String),
    #[error("missing channels: only {found} of 19 canonical 10-20 labels present")]
    MissingChannels { found: usize },
    #[error("inconsistent sampling rate: {0}")]
    InconsistentRate(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EdfError>;

/// Per-signal header entry.
#[derive(Debug, Clone)]
pub struct SignalHeader {
    pub label: String,
    pub transducer: String,
    pub physical_dimension: String,
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
    pub prefilter: String,
    pub samples_per_record: usize,
}

/// Parsed EDF file header.
#[derive(Debug, Clone)]
pub struct EdfHeader {
    pub version: String,
    pub patient_id: String,
    pub recording_id: String,
    pub start_date: String,
    pub start_time: String,
    pub n_records: usize,
    pub record_duration: f64,
    pub signals: Vec<SignalHeader>,
}

impl EdfHeader {
    pub fn n_signals(&self) -> usize {
        self.signals.len()
    }

    pub fn header_len(&self) -> usize {
        256 + 256 * self.signals.len()
    }

    fn record_byte_len(&self) -> usize {
        self.signals.iter().map(|s| s.samples_per_record * 2).sum()
    }
}

/// A calibrated channel: label, physical samples and sampling rate.
#[derive(Debug, Clone)]
pub struct Channel {
    pub label: String,
    pub samples: Vec<f64>,
    pub rate: f64,
}

/// Calibrated multichannel recording restricted to the 19 canonical channels.
#[derive(Debug, Clone)]
pub struct RawRecording {
    pub channels: Vec<Channel>,
    pub duration: f64,
    pub source_path: String,
}

impl RawRecording {
    pub fn rate(&self) -> f64 {
        self.channels[0].rate
    }

    pub fn n_samples(&self) -> usize {
        self.channels[0].samples.len()
    }
}

/// Maps a raw signal label onto a canonical channel index.
///
/// Matching is case-insensitive, drops an "EEG" prefix and anything from the
/// first '-' onward (reference suffixes such as "-REF" or "-LE"), and accepts
/// the modern T7/T8/P7/P8 names for T3/T4/T5/T6.
pub fn canonical_channel_index(label: &str) -> Option<usize> {
    let mut s = label.trim().to_ascii_uppercase();
    if let Some(rest) = s.strip_prefix("EEG") {
        s = rest.trim_start().to_string();
    }
    if let Some(pos) = s.find('-') {
        s.truncate(pos);
    }
    let s = s.trim();
    let s = match s {
        "T7" => "T3",
        "T8" => "T4",
        "P7" => "T5",
        "P8" => "T6",
        other => other,
    };
    CHANNEL_LABELS
        .iter()
        .position(|c| c.eq_ignore_ascii_case(s))
}

fn is_annotation_label(label: &str) -> bool {
    label.trim().eq_ignore_ascii_case("EDF Annotations")
}

fn ascii_field(bytes: &[u8]) -> Result<String> {
    if bytes.iter().any(|&b| !(32..=126).contains(&b)) {
        return Err(EdfError::MalformedHeader(
            "non-ASCII byte in header field".into(),
        ));
    }
    Ok(std::str::from_utf8(bytes).unwrap().trim().to_string())
}

fn parse_int_field(bytes: &[u8], what: &str) -> Result<i64> {
    let s = ascii_field(bytes)?;
    s.parse::<i64>()
        .map_err(|_| EdfError::MalformedHeader(format!("{what}: cannot parse integer from {s:?}")))
}

fn parse_float_field(bytes: &[u8], what: &str) -> Result<f64> {
    let s = ascii_field(bytes)?;
    s.parse::<f64>()
        .map_err(|_| EdfError::MalformedHeader(format!("{what}: cannot parse number from {s:?}")))
}

/// Parses the fixed and per-signal header blocks.
pub fn parse_header(bytes: &[u8]) -> Result<EdfHeader> {
    if bytes.len() < 256 {
        return Err(EdfError::MalformedHeader(format!(
            "file is {} bytes, shorter than the 256-byte header",
            bytes.len()
        )));
    }
    let version = ascii_field(&bytes[0..8])?;
    let patient_id = ascii_field(&bytes[8..88])?;
    let recording_id = ascii_field(&bytes[88..168])?;
    let start_date = ascii_field(&bytes[168..176])?;
    let start_time = ascii_field(&bytes[176..184])?;
    let declared_header_len = parse_int_field(&bytes[184..192], "header length")?;
    let n_records_raw = parse_int_field(&bytes[236..244], "number of records")?;
    let record_duration = parse_float_field(&bytes[244..252], "record duration")?;
    let n_signals = parse_int_field(&bytes[252..256], "signal count")?;

    if n_signals < 1 {
        return Err(EdfError::MalformedHeader(format!(
            "signal count {n_signals} out of range"
        )));
    }
    let n_signals = n_signals as usize;
    let header_len = 256 + 256 * n_signals;
    if declared_header_len != header_len as i64 {
        return Err(EdfError::MalformedHeader(format!(
            "declared header length {declared_header_len} != 256 + 256*{n_signals}"
        )));
    }
    if bytes.len() < header_len {
        return Err(EdfError::MalformedHeader(
            "file shorter than declared header".into(),
        ));
    }
    if record_duration <= 0.0 {
        return Err(EdfError::MalformedHeader(format!(
            "record duration {record_duration} out of range"
        )));
    }
    if n_records_raw < 1 && n_records_raw != -1 {
        return Err(EdfError::MalformedHeader(format!(
            "record count {n_records_raw} out of range"
        )));
    }

    // Per-signal fields are stored field-major: all labels, all transducers, ...
    let sig = &bytes[256..header_len];
    let field = |offset: usize, width: usize, i: usize| -> &[u8] {
        let base = offset * n_signals + i * width;
        &sig[base..base + width]
    };
    let mut signals = Vec::with_capacity(n_signals);
    for i in 0..n_signals {
        let label = ascii_field(field(0, 16, i))?;
        let transducer = ascii_field(field(16, 80, i))?;
        let physical_dimension = ascii_field(field(96, 8, i))?;
        let physical_min = parse_float_field(field(104, 8, i), "physical minimum")?;
        let physical_max = parse_float_field(field(112, 8, i), "physical maximum")?;
        let digital_min = parse_int_field(field(120, 8, i), "digital minimum")?;
        let digital_max = parse_int_field(field(128, 8, i), "digital maximum")?;
        let prefilter = ascii_field(field(136, 80, i))?;
        let samples_per_record = parse_int_field(field(216, 8, i), "samples per record")?;

        if digital_min >= digital_max {
            return Err(EdfError::MalformedHeader(format!(
                "signal {label:?}: digital range [{digital_min}, {digital_max}] is empty"
            )));
        }
        if !(-32768..=32767).contains(&digital_min) || !(-32768..=32767).contains(&digital_max) {
            return Err(EdfError::MalformedHeader(format!(
                "signal {label:?}: digital range outside 16-bit bounds"
            )));
        }
        if physical_min == physical_max || !physical_min.is_finite() || !physical_max.is_finite() {
            return Err(EdfError::MalformedHeader(format!(
                "signal {label:?}: degenerate physical range"
            )));
        }
        if samples_per_record < 1 {
            return Err(EdfError::MalformedHeader(format!(
                "signal {label:?}: samples per record {samples_per_record} out of range"
            )));
        }
        signals.push(SignalHeader {
            label,
            transducer,
            physical_dimension,
            physical_min,
            physical_max,
            digital_min: digital_min as i32,
            digital_max: digital_max as i32,
            prefilter,
            samples_per_record: samples_per_record as usize,
        });
    }

    let mut header = EdfHeader {
        version,
        patient_id,
        recording_id,
        start_date,
        start_time,
        n_records: 0,
        record_duration,
        signals,
    };
    header.n_records = if n_records_raw == -1 {
        // Unknown record count: resolve from the file size.
        let data_len = bytes.len() - header_len;
        let rec_len = header.record_byte_len();
        let n = data_len / rec_len;
        if n == 0 {
            return Err(EdfError::MalformedHeader(
                "record count unknown and file holds no complete record".into(),
            ));
        }
        n
    } else {
        n_records_raw as usize
    };
    Ok(header)
}

/// Parses a complete EDF file and returns the header together with the
/// calibrated recording restricted to the canonical channels.
pub fn parse_edf(bytes: &[u8]) -> Result<(EdfHeader, RawRecording)> {
    let header = parse_header(bytes)?;
    let header_len = header.header_len();
    let rec_len = header.record_byte_len();
    let available = (bytes.len() - header_len) / rec_len;
    if available < header.n_records {
        return Err(EdfError::MalformedHeader(format!(
            "file holds {available} complete records, header declares {}",
            header.n_records
        )));
    }

    // Select canonical channels; first occurrence wins on duplicates.
    let mut picked: [Option<usize>; N_CHANNELS] = [None; N_CHANNELS];
    for (sig_idx, sig) in header.signals.iter().enumerate() {
        if is_annotation_label(&sig.label) {
            continue;
        }
        if let Some(ch) = canonical_channel_index(&sig.label) {
            if picked[ch].is_none() {
                picked[ch] = Some(sig_idx);
            }
        }
    }
    let found = picked.iter().filter(|p| p.is_some()).count();
    if found < N_CHANNELS {
        return Err(EdfError::MissingChannels { found });
    }

    let rates: Vec<f64> = picked
        .iter()
        .map(|p| header.signals[p.unwrap()].samples_per_record as f64 / header.record_duration)
        .collect();
    let rate = rates[0];
    if rates.iter().any(|&r| (r - rate).abs() > 1e-9) {
        return Err(EdfError::InconsistentRate(format!(
            "canonical channels disagree: {rates:?}"
        )));
    }
    if (rate - rate.round()).abs() > 1e-9 {
        return Err(EdfError::MalformedHeader(format!(
            "non-integral sampling rate {rate}"
        )));
    }
    if !(200.0..=500.0).contains(&rate) {
        return Err(EdfError::MalformedHeader(format!(
            "sampling rate {rate} Hz outside the supported 200-500 Hz range"
        )));
    }

    // Byte offset of each signal inside a data record.
    let mut sig_offsets = Vec::with_capacity(header.n_signals());
    let mut off = 0usize;
    for sig in &header.signals {
        sig_offsets.push(off);
        off += sig.samples_per_record * 2;
    }

    let mut channels = Vec::with_capacity(N_CHANNELS);
    for (ch, pick) in picked.iter().enumerate() {
        let sig_idx = pick.unwrap();
        let sig = &header.signals[sig_idx];
        let spr = sig.samples_per_record;
        let gain = (sig.physical_max - sig.physical_min)
            / (sig.digital_max as f64 - sig.digital_min as f64);
        let mut samples = Vec::with_capacity(spr * header.n_records);
        for rec in 0..header.n_records {
            let base = header_len + rec * rec_len + sig_offsets[sig_idx];
            for k in 0..spr {
                let lo = bytes[base + 2 * k];
                let hi = bytes[base + 2 * k + 1];
                let digital = i16::from_le_bytes([lo, hi]) as f64;
                samples.push((digital - sig.digital_min as f64) * gain + sig.physical_min);
            }
        }
        channels.push(Channel {
            label: CHANNEL_LABELS[ch].to_string(),
            samples,
            rate,
        });
    }

    let duration = header.n_records as f64 * header.record_duration;
    Ok((
        header,
        RawRecording {
            channels,
            duration,
            source_path: String::new(),
        },
    ))
}

fn put_field(buf: &mut Vec<u8>, value: &str, width: usize) {
    let mut s = value.to_string();
    s.truncate(width);
    buf.extend_from_slice(s.as_bytes());
    for _ in s.len()..width {
        buf.push(b' ');
    }
}

fn fmt_num(v: f64) -> String {
    // Shortest exact-enough representation that fits an 8-char field.
    if v == v.trunc() && v.abs() < 1e7 {
        format!("{}", v as i64)
    } else {
        let mut s = String::new();
        let _ = write!(s, "{v:.4}");
        s.truncate(8);
        s
    }
}

/// Metadata for [`write_edf`].
#[derive(Debug, Clone, Default)]
pub struct EdfWriteOptions {
    pub patient_id: String,
    pub recording_id: String,
}

/// Serializes a recording as a plain EDF file with one-second data records.
///
/// Physical ranges are chosen per channel as symmetric integer bounds covering
/// the data, so header truncation never distorts calibration. Samples are
/// quantized to the 16-bit digital range; re-parsing reproduces each sample
/// to within one digital quantum. Trailing samples short of a full record are
/// dropped.
pub fn write_edf(recording: &RawRecording, opts: &EdfWriteOptions) -> Result<Vec<u8>> {
    let rate = recording.rate();
    if (rate - rate.round()).abs() > 1e-9 || rate < 1.0 {
        return Err(EdfError::MalformedHeader(format!(
            "writer requires an integral sampling rate, got {rate}"
        )));
    }
    let spr = rate.round() as usize;
    let n_samples = recording.n_samples();
    if recording.channels.iter().any(|c| c.samples.len() != n_samples) {
        return Err(EdfError::MalformedHeader(
            "writer requires equal-length channels".into(),
        ));
    }
    let n_records = n_samples / spr;
    if n_records == 0 {
        return Err(EdfError::MalformedHeader(
            "recording shorter than one data record".into(),
        ));
    }
    let ns = recording.channels.len();

    let (dig_min, dig_max) = (-32768i32, 32767i32);
    let ranges: Vec<(f64, f64)> = recording
        .channels
        .iter()
        .map(|c| {
            let peak = c
                .samples
                .iter()
                .fold(1.0f64, |acc, &v| acc.max(v.abs()))
                .ceil();
            (-peak, peak)
        })
        .collect();

    let mut buf = Vec::with_capacity(256 + 256 * ns + n_records * ns * spr * 2);
    put_field(&mut buf, "0", 8);
    put_field(&mut buf, &opts.patient_id, 80);
    put_field(&mut buf, &opts.recording_id, 80);
    put_field(&mut buf, "01.01.00", 8);
    put_field(&mut buf, "00.00.00", 8);
    put_field(&mut buf, &format!("{}", 256 + 256 * ns), 8);
    put_field(&mut buf, "", 44);
    put_field(&mut buf, &format!("{n_records}"), 8);
    put_field(&mut buf, "1", 8);
    put_field(&mut buf, &format!("{ns}"), 4);

    for c in &recording.channels {
        put_field(&mut buf, &c.label, 16);
    }
    for _ in 0..ns {
        put_field(&mut buf, "", 80);
    }
    for _ in 0..ns {
        put_field(&mut buf, "uV", 8);
    }
    for r in &ranges {
        put_field(&mut buf, &fmt_num(r.0), 8);
    }
    for r in &ranges {
        put_field(&mut buf, &fmt_num(r.1), 8);
    }
    for _ in 0..ns {
        put_field(&mut buf, &format!("{dig_min}"), 8);
    }
    for _ in 0..ns {
        put_field(&mut buf, &format!("{dig_max}"), 8);
    }
    for _ in 0..ns {
        put_field(&mut buf, "", 80);
    }
    for _ in 0..ns {
        put_field(&mut buf, &format!("{spr}"), 8);
    }
    for _ in 0..ns {
        put_field(&mut buf, "", 32);
    }
    debug_assert_eq!(buf.len(), 256 + 256 * ns);

    for rec in 0..n_records {
        for (c, r) in recording.channels.iter().zip(&ranges) {
            let gain = (dig_max as f64 - dig_min as f64) / (r.1 - r.0);
            for k in 0..spr {
                let v = c.samples[rec * spr + k];
                let digital = ((v - r.0) * gain + dig_min as f64).round();
                let digital = digital.clamp(dig_min as f64, dig_max as f64) as i16;
                buf.extend_from_slice(&digital.to_le_bytes());
            }
        }
    }
    Ok(buf)
}
