#ifndef CACTUS_H
#define CACTUS_H

/* Generated by cbindgen; do not edit. */

#include <stddef.h>
#include <stdint.h>

/**
 * Status codes returned by every fallible call.
 */
typedef enum CactusStatus {
  CACTUS_STATUS_OK = 0,
  CACTUS_STATUS_NULL_POINTER = 1,
  CACTUS_STATUS_INVALID_ARGUMENT = 2,
  CACTUS_STATUS_CONFIG = 3,
  CACTUS_STATUS_TRACKING = 4,
  CACTUS_STATUS_ZERO_GROUND_TRUTH = 5,
  CACTUS_STATUS_BUFFER_TOO_SMALL = 6,
  CACTUS_STATUS_PANIC = 7,
} CactusStatus;

/**
 * Opaque tracker handle.
 */
typedef struct CactusTracker CactusTracker;

/**
 * An oriented box in pixels; `angle` is the long-axis direction in radians.
 */
typedef struct CactusBox {
  double cx;
  double cy;
  double half_len;
  double half_wid;
  double angle;
} CactusBox;

/**
 * One filter's output for one frame.
 */
typedef struct CactusTrack {
  uint64_t frame;
  uint64_t sef_id;
  struct CactusBox bbox;
  double energy;
  double rho;
} CactusTrack;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *cactus_version(void);

/**
 * Message of the last failure on this thread; empty if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *cactus_last_error(void);

/**
 * Creates a tracker from a run configuration in TOML (may be NULL for
 * defaults) and stores the handle in `out`.
 *
 * # Safety
 * `config_toml` must be NULL or a NUL-terminated string; `out` must be a
 * valid pointer.
 */
enum CactusStatus cactus_tracker_new(const char *config_toml, struct CactusTracker **out);

/**
 * Releases a tracker; NULL is ignored.
 *
 * # Safety
 * `tracker` must be NULL or a handle from [`cactus_tracker_new`] that has
 * not been freed.
 */
void cactus_tracker_free(struct CactusTracker *tracker);

/**
 * Number of filters, i.e. outputs per frame.
 *
 * # Safety
 * `tracker` must be a live handle or NULL (which yields 0).
 */
size_t cactus_tracker_filter_count(const struct CactusTracker *tracker);

/**
 * Tracks one 8-bit greyscale frame (`width × height`, row-major). Writes
 * one record per filter into `out` (capacity `capacity`) and the number
 * written into `written`. Boxes are in input pixels.
 *
 * # Safety
 * `pixels` must point to `width * height` bytes, `out` to `capacity`
 * records, and `tracker` and `written` must be valid.
 */
enum CactusStatus cactus_tracker_push_gray(struct CactusTracker *tracker,
                                           const uint8_t *pixels,
                                           size_t width,
                                           size_t height,
                                           struct CactusTrack *out,
                                           size_t capacity,
                                           size_t *written);

/**
 * Intersection over union of two oriented boxes.
 *
 * # Safety
 * All pointers must be valid.
 */
enum CactusStatus cactus_overlap(const struct CactusBox *a, const struct CactusBox *b, double *out);

/**
 * `1 − (fn + fp) / gt` from totals.
 *
 * # Safety
 * `out` must be valid.
 */
enum CactusStatus cactus_nmotda(size_t gt, size_t fn_, size_t fp, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CACTUS_H */
