#pragma once

/* Generated with cbindgen:0.27.0 */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum EsStatus {
  EsOk = 0,
  EsNullArgument = 1,
  EsInvalidArgument = 2,
  EsParseError = 3,
  EsPreprocessError = 4,
  /**
   * The recording survived preprocessing with too few valid frames.
   */
  EsExcluded = 5,
  EsFeatureError = 6,
  EsSingleClass = 7,
  EsNoConvergence = 8,
  EsIoError = 9,
  EsPanic = 10,
} EsStatus;

/**
 * Preprocessed valid frames of one recording.
 */
typedef struct EsFrameSet EsFrameSet;

/**
 * A parsed, calibrated 19-channel recording.
 */
typedef struct EsRecording EsRecording;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *es_last_error(void);

/**
 * Library version as 0x00MMmmpp.
 */
uint32_t es_version(void);

/**
 * Parses an EDF file into a calibrated recording restricted to the 19
 * standard channels.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
enum EsStatus es_recording_open(const char *path, struct EsRecording **out);

/**
 * Releases a recording handle. A null handle is a no-op.
 *
 * # Safety
 * `handle` must come from [`es_recording_open`] and not be freed twice.
 */
void es_recording_free(struct EsRecording *handle);

/**
 * Number of channels (always 19 after selection).
 *
 * # Safety
 * `handle` must be a live recording handle.
 */
uintptr_t es_recording_channels(const struct EsRecording *handle);

/**
 * Samples per channel.
 *
 * # Safety
 * `handle` must be a live recording handle.
 */
uintptr_t es_recording_samples(const struct EsRecording *handle);

/**
 * Sampling rate in Hz.
 *
 * # Safety
 * `handle` must be a live recording handle.
 */
double es_recording_rate(const struct EsRecording *handle);

/**
 * Copies one channel's calibrated samples (microvolts) into `out`.
 *
 * # Safety
 * `out` must point to at least `capacity` doubles.
 */
enum EsStatus es_recording_channel(const struct EsRecording *handle,
                                   uintptr_t channel,
                                   double *out,
                                   uintptr_t capacity);

/**
 * Runs the preprocessing chain (notch at `notch_hz`, band-limiting,
 * resampling to 100 Hz, common average reference, framing, artifact
 * rejection). `label` is 1 for normal, 0 for pathological.
 *
 * # Safety
 * `handle` and `out` must be valid pointers.
 */
enum EsStatus es_frameset_from_recording(const struct EsRecording *handle,
                                         int32_t label,
                                         double notch_hz,
                                         struct EsFrameSet **out);

/**
 * Releases a frame-set handle. A null handle is a no-op.
 *
 * # Safety
 * `handle` must come from [`es_frameset_from_recording`].
 */
void es_frameset_free(struct EsFrameSet *handle);

/**
 * Number of valid frames.
 *
 * # Safety
 * `handle` must be a live frame-set handle.
 */
uintptr_t es_frameset_frames(const struct EsFrameSet *handle);

/**
 * Length of a full handcrafted feature vector (2,850).
 */
uintptr_t es_feature_count(void);

/**
 * Extracts the 2,850 handcrafted features of one recording, tangent block
 * projected at the recording's own covariance mean.
 *
 * # Safety
 * `out` must point to at least `capacity` doubles.
 */
enum EsStatus es_features_extract(const struct EsFrameSet *handle, double *out, uintptr_t capacity);

/**
 * Rank-based AUC with midrank tie handling. Labels are 0/1.
 *
 * # Safety
 * `scores` and `labels` must hold `n` elements; `out` must be valid.
 */
enum EsStatus es_auc(const double *scores, const uint8_t *labels, uintptr_t n, double *out);

/**
 * Fits metric(n) = asymptote - alpha * n^(-beta); writes [asymptote, alpha,
 * beta] plus optionally R^2 and the one-standard-error data size.
 *
 * # Safety
 * `sizes` and `metrics` must hold `n` elements; `out_params` must hold 3
 * doubles; `out_r_squared` and `out_n_db` may be null.
 */
enum EsStatus es_fit_power_law(const double *sizes,
                               const double *metrics,
                               uintptr_t n,
                               double *out_params,
                               double *out_r_squared,
                               double *out_n_db);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus
