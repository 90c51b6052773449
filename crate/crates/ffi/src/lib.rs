//! C ABI over the screening toolkit: EDF parsing, preprocessing to frames,
//! handcrafted feature extraction, and the evaluation math (AUC, saturation
//! power law). Handles are opaque; every call returns a status code and the
//! last error message is kept per thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use eegscreen::edf::{parse_edf, RawRecording};
use eegscreen::eval::metrics::auc;
use eegscreen::eval::powerlaw::fit_power_law;
use eegscreen::features::bands::BandTable;
use eegscreen::features::extract_recording_features;
use eegscreen::preprocess::{
    preprocess_recording, FrameSet, Label, PreprocessConfig, RecordingMeta, Sex, SliceOutcome,
};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EsStatus {
    EsOk = 0,
    EsNullArgument = 1,
    EsInvalidArgument = 2,
    EsParseError = 3,
    EsPreprocessError = 4,
    /// The recording survived preprocessing with too few valid frames.
    EsExcluded = 5,
    EsFeatureError = 6,
    EsSingleClass = 7,
    EsNoConvergence = 8,
    EsIoError = 9,
    EsPanic = 10,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn guard<F: FnOnce() -> EsStatus>(f: F) -> EsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            EsStatus::EsPanic
        }
    }
}

/// Message describing the most recent failure on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn es_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as 0x00MMmmpp.
#[no_mangle]
pub extern "C" fn es_version() -> u32 {
    0x000100
}

/// A parsed, calibrated 19-channel recording.
pub struct EsRecording {
    inner: RawRecording,
}

/// Preprocessed valid frames of one recording.
pub struct EsFrameSet {
    inner: FrameSet,
}

/// Parses an EDF file into a calibrated recording restricted to the 19
/// standard channels.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn es_recording_open(
    path: *const c_char,
    out: *mut *mut EsRecording,
) -> EsStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            set_error("null argument");
            return EsStatus::EsNullArgument;
        }
        let path = match CStr::from_ptr(path).to_str() {
            Ok(p) => p,
            Err(_) => {
                set_error("path is not valid UTF-8");
                return EsStatus::EsInvalidArgument;
            }
        };
        let bytes = match std::fs::read(Path::new(path)) {
            Ok(b) => b,
            Err(e) => {
                set_error(&format!("read {path}: {e}"));
                return EsStatus::EsIoError;
            }
        };
        match parse_edf(&bytes) {
            Ok((_, recording)) => {
                *out = Box::into_raw(Box::new(EsRecording { inner: recording }));
                EsStatus::EsOk
            }
            Err(e) => {
                set_error(&e.to_string());
                EsStatus::EsParseError
            }
        }
    })
}

/// Releases a recording handle. A null handle is a no-op.
///
/// # Safety
/// `handle` must come from [`es_recording_open`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn es_recording_free(handle: *mut EsRecording) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Number of channels (always 19 after selection).
///
/// # Safety
/// `handle` must be a live recording handle.
#[no_mangle]
pub unsafe extern "C" fn es_recording_channels(handle: *const EsRecording) -> usize {
    if handle.is_null() {
        return 0;
    }
    (*handle).inner.channels.len()
}

/// Samples per channel.
///
/// # Safety
/// `handle` must be a live recording handle.
#[no_mangle]
pub unsafe extern "C" fn es_recording_samples(handle: *const EsRecording) -> usize {
    if handle.is_null() {
        return 0;
    }
    (*handle).inner.n_samples()
}

/// Sampling rate in Hz.
///
/// # Safety
/// `handle` must be a live recording handle.
#[no_mangle]
pub unsafe extern "C" fn es_recording_rate(handle: *const EsRecording) -> f64 {
    if handle.is_null() {
        return 0.0;
    }
    (*handle).inner.rate()
}

/// Copies one channel's calibrated samples (microvolts) into `out`.
///
/// # Safety
/// `out` must point to at least `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn es_recording_channel(
    handle: *const EsRecording,
    channel: usize,
    out: *mut f64,
    capacity: usize,
) -> EsStatus {
    guard(|| {
        if handle.is_null() || out.is_null() {
            set_error("null argument");
            return EsStatus::EsNullArgument;
        }
        let rec = &(*handle).inner;
        let Some(ch) = rec.channels.get(channel) else {
            set_error(&format!("channel {channel} out of range"));
            return EsStatus::EsInvalidArgument;
        };
        if capacity < ch.samples.len() {
            set_error(&format!(
                "buffer holds {capacity} samples, need {}",
                ch.samples.len()
            ));
            return EsStatus::EsInvalidArgument;
        }
        std::ptr::copy_nonoverlapping(ch.samples.as_ptr(), out, ch.samples.len());
        EsStatus::EsOk
    })
}

/// Runs the preprocessing chain (notch at `notch_hz`, band-limiting,
/// resampling to 100 Hz, common average reference, framing, artifact
/// rejection). `label` is 1 for normal, 0 for pathological.
///
/// # Safety
/// `handle` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn es_frameset_from_recording(
    handle: *const EsRecording,
    label: i32,
    notch_hz: f64,
    out: *mut *mut EsFrameSet,
) -> EsStatus {
    guard(|| {
        if handle.is_null() || out.is_null() {
            set_error("null argument");
            return EsStatus::EsNullArgument;
        }
        let label = match label {
            0 => Label::Pathological,
            1 => Label::Normal,
            other => {
                set_error(&format!("label {other} must be 0 or 1"));
                return EsStatus::EsInvalidArgument;
            }
        };
        let cfg = PreprocessConfig {
            notch_freq: notch_hz,
            ..PreprocessConfig::default()
        };
        let meta = RecordingMeta {
            recording_id: String::new(),
            sex: Sex::Female,
            hospital_id: String::new(),
        };
        match preprocess_recording(&(*handle).inner, label, meta, &cfg) {
            Ok(SliceOutcome::Kept(fs)) => {
                *out = Box::into_raw(Box::new(EsFrameSet { inner: fs }));
                EsStatus::EsOk
            }
            Ok(SliceOutcome::Excluded { valid_frames, .. }) => {
                set_error(&format!(
                    "recording excluded: only {valid_frames} valid frames"
                ));
                EsStatus::EsExcluded
            }
            Err(e) => {
                set_error(&e.to_string());
                EsStatus::EsPreprocessError
            }
        }
    })
}

/// Releases a frame-set handle. A null handle is a no-op.
///
/// # Safety
/// `handle` must come from [`es_frameset_from_recording`].
#[no_mangle]
pub unsafe extern "C" fn es_frameset_free(handle: *mut EsFrameSet) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Number of valid frames.
///
/// # Safety
/// `handle` must be a live frame-set handle.
#[no_mangle]
pub unsafe extern "C" fn es_frameset_frames(handle: *const EsFrameSet) -> usize {
    if handle.is_null() {
        return 0;
    }
    (*handle).inner.n_frames()
}

/// Length of a full handcrafted feature vector (2,850).
#[no_mangle]
pub extern "C" fn es_feature_count() -> usize {
    eegscreen::features::N_FEATURES
}

/// Extracts the 2,850 handcrafted features of one recording, tangent block
/// projected at the recording's own covariance mean.
///
/// # Safety
/// `out` must point to at least `capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn es_features_extract(
    handle: *const EsFrameSet,
    out: *mut f64,
    capacity: usize,
) -> EsStatus {
    guard(|| {
        if handle.is_null() || out.is_null() {
            set_error("null argument");
            return EsStatus::EsNullArgument;
        }
        if capacity < eegscreen::features::N_FEATURES {
            set_error(&format!(
                "buffer holds {capacity} values, need {}",
                eegscreen::features::N_FEATURES
            ));
            return EsStatus::EsInvalidArgument;
        }
        let bands = BandTable::standard();
        match extract_recording_features(&(*handle).inner, &bands, None) {
            Ok(fv) => {
                let all = fv.concat();
                std::ptr::copy_nonoverlapping(all.as_ptr(), out, all.len());
                EsStatus::EsOk
            }
            Err(e) => {
                set_error(&e.to_string());
                EsStatus::EsFeatureError
            }
        }
    })
}

/// Rank-based AUC with midrank tie handling. Labels are 0/1.
///
/// # Safety
/// `scores` and `labels` must hold `n` elements; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn es_auc(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    out: *mut f64,
) -> EsStatus {
    guard(|| {
        if scores.is_null() || labels.is_null() || out.is_null() {
            set_error("null argument");
            return EsStatus::EsNullArgument;
        }
        let scores = std::slice::from_raw_parts(scores, n);
        let labels = std::slice::from_raw_parts(labels, n);
        match auc(scores, labels) {
            Ok(a) => {
                *out = a;
                EsStatus::EsOk
            }
            Err(e) => {
                set_error(&e.to_string());
                EsStatus::EsSingleClass
            }
        }
    })
}

/// Fits metric(n) = asymptote - alpha * n^(-beta); writes [asymptote, alpha,
/// beta] plus optionally R^2 and the one-standard-error data size.
///
/// # Safety
/// `sizes` and `metrics` must hold `n` elements; `out_params` must hold 3
/// doubles; `out_r_squared` and `out_n_db` may be null.
#[no_mangle]
pub unsafe extern "C" fn es_fit_power_law(
    sizes: *const f64,
    metrics: *const f64,
    n: usize,
    out_params: *mut f64,
    out_r_squared: *mut f64,
    out_n_db: *mut f64,
) -> EsStatus {
    guard(|| {
        if sizes.is_null() || metrics.is_null() || out_params.is_null() {
            set_error("null argument");
            return EsStatus::EsNullArgument;
        }
        let sizes = std::slice::from_raw_parts(sizes, n);
        let metrics = std::slice::from_raw_parts(metrics, n);
        let points: Vec<(f64, f64)> = sizes.iter().copied().zip(metrics.iter().copied()).collect();
        match fit_power_law(&points, None) {
            Ok(fit) => {
                let params = std::slice::from_raw_parts_mut(out_params, 3);
                params[0] = fit.asymptote;
                params[1] = fit.alpha;
                params[2] = fit.beta;
                if !out_r_squared.is_null() {
                    *out_r_squared = fit.r_squared;
                }
                if !out_n_db.is_null() {
                    *out_n_db = fit.n_db.unwrap_or(f64::NAN);
                }
                if fit.converged {
                    EsStatus::EsOk
                } else {
                    set_error("power-law fit did not converge");
                    EsStatus::EsNoConvergence
                }
            }
            Err(e) => {
                set_error(&e.to_string());
                EsStatus::EsInvalidArgument
            }
        }
    })
}
