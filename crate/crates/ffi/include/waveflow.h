#ifndef WAVEFLOW_H
#define WAVEFLOW_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes.
 */
typedef enum wf_status {
  WF_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  WF_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  WF_STATUS_INVALID_UTF8 = 2,
  /**
   * Bad configuration or argument values.
   */
  WF_STATUS_INVALID_ARGUMENT = 3,
  /**
   * The checkpoint is missing, corrupt or of the wrong kind.
   */
  WF_STATUS_CHECKPOINT = 4,
  WF_STATUS_IO = 5,
  /**
   * A numerical or internal failure.
   */
  WF_STATUS_RUNTIME = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  WF_STATUS_PANIC = 7,
} wf_status;

/**
 * Synthesized mono audio.
 */
typedef struct wf_audio wf_audio;

/**
 * A loaded text-to-speech model.
 */
typedef struct wf_model wf_model;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. Valid until
 * the next call into the library from this thread.
 */
const char *wf_last_error(void);

/**
 * Library version as a static nul-terminated string.
 */
const char *wf_version(void);

/**
 * Loads a text-to-speech checkpoint.
 *
 * # Safety
 * `path` must be a nul-terminated string and `out` a valid pointer.
 */
enum wf_status wf_model_load(const char *path, struct wf_model **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from [`wf_model_load`] and not be used afterwards.
 */
void wf_model_free(struct wf_model *model);

/**
 * Output sample rate in Hz, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uint32_t wf_model_sample_rate(const struct wf_model *model);

/**
 * Samples generated per decoder step, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t wf_model_block_size(const struct wf_model *model);

/**
 * Synthesizes `text`. A negative `temperature` uses the model default and
 * `max_steps == 0` the default step cap.
 *
 * # Safety
 * `model` must be a live handle, `text` nul-terminated and `out` valid.
 */
enum wf_status wf_synthesize(const struct wf_model *model,
                             const char *text,
                             double temperature,
                             size_t max_steps,
                             uint64_t seed,
                             struct wf_audio **out);

/**
 * Borrowed pointer to the samples; the count is written to `len`.
 * Returns null for a null handle.
 *
 * # Safety
 * `audio` must be null or a live handle; `len` may be null.
 */
const float *wf_audio_samples(const struct wf_audio *audio, size_t *len);

/**
 * # Safety
 * `audio` must be null or a live handle.
 */
uint32_t wf_audio_sample_rate(const struct wf_audio *audio);

/**
 * Decoder steps taken.
 *
 * # Safety
 * `audio` must be null or a live handle.
 */
size_t wf_audio_steps(const struct wf_audio *audio);

/**
 * Whether generation ended on the stop token rather than the step cap.
 *
 * # Safety
 * `audio` must be null or a live handle.
 */
bool wf_audio_stopped_by_token(const struct wf_audio *audio);

/**
 * Writes the audio as 16-bit PCM WAV.
 *
 * # Safety
 * `audio` must be a live handle and `path` nul-terminated.
 */
enum wf_status wf_audio_save_wav(const struct wf_audio *audio, const char *path);

/**
 * Releases audio. Null is ignored.
 *
 * # Safety
 * `audio` must come from [`wf_synthesize`] and not be used afterwards.
 */
void wf_audio_free(struct wf_audio *audio);

/**
 * Mel cepstral distortion between two signals at `sample_rate`.
 *
 * # Safety
 * `x` and `y` must point to `nx` and `ny` floats; `out` must be valid.
 */
enum wf_status wf_mcd(const float *x,
                      size_t nx,
                      const float *y,
                      size_t ny,
                      uint32_t sample_rate,
                      double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WAVEFLOW_H */
