#ifndef CABWATCH_H
#define CABWATCH_H

/* Generated with cbindgen:0.29.4 */

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum CwStatus {
  CW_STATUS_OK = 0,
  CW_STATUS_NULL_ARGUMENT = 1,
  CW_STATUS_INVALID_ARGUMENT = 2,
  CW_STATUS_IO = 3,
  CW_STATUS_CORRUPT = 4,
  CW_STATUS_ALREADY_ENROLLED = 5,
  CW_STATUS_OUT_OF_ORDER = 6,
  CW_STATUS_NOT_FOUND = 7,
  CW_STATUS_BUFFER_TOO_SMALL = 8,
  CW_STATUS_PANIC = 99,
} CwStatus;

/**
 * Opaque operator gallery.
 */
typedef struct CwGallery CwGallery;

/**
 * Opaque shift tracker.
 */
typedef struct CwTracker CwTracker;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *cw_version(void);

/**
 * Message for the last failed call on this thread, or NULL. Valid until the
 * next cabwatch call on the same thread.
 */
const char *cw_last_error_message(void);

void cw_string_free(char *s);

/**
 * Length of every embedding accepted by this library.
 */
size_t cw_embedding_dim(void);

enum CwStatus cw_gallery_new(struct CwGallery **out);

enum CwStatus cw_gallery_load(const char *path, struct CwGallery **out);

enum CwStatus cw_gallery_save(const struct CwGallery *gallery, const char *path);

/**
 * Number of records; 0 for NULL.
 */
size_t cw_gallery_len(const struct CwGallery *gallery);

/**
 * Enrolls a unit-length embedding of `cw_embedding_dim()` values.
 */
enum CwStatus cw_gallery_enroll(struct CwGallery *gallery,
                                const char *operator_id,
                                const char *display_name,
                                const char *source_image_ref,
                                int64_t enrolled_at_ns,
                                const double *embedding,
                                size_t len,
                                bool replace);

/**
 * Matches a query embedding. On success `*matched` is set; when matched,
 * `*operator_id` receives a caller-owned string, otherwise NULL.
 * `*distance` is the nearest record's distance, or NaN for an empty gallery.
 */
enum CwStatus cw_gallery_match(const struct CwGallery *gallery,
                               const double *query,
                               size_t len,
                               double threshold,
                               bool *matched,
                               double *distance,
                               char **operator_id);

void cw_gallery_free(struct CwGallery *gallery);

/**
 * Euclidean distance between two equal-length vectors.
 */
enum CwStatus cw_distance(const double *a, const double *b, size_t len, double *out);

/**
 * Scales `v` to unit length in place.
 */
enum CwStatus cw_l2_normalize(double *v, size_t len);

/**
 * `max(0, |a-p|² - |a-n|² + margin)` over unit embeddings.
 */
enum CwStatus cw_triplet_loss(const double *anchor,
                              const double *positive,
                              const double *negative,
                              size_t len,
                              double margin,
                              double *out);

/**
 * Descriptor length for a `width`×`height` window under default HOG
 * parameters, or 0 when the window is too small.
 */
size_t cw_hog_descriptor_len(size_t width, size_t height);

/**
 * HOG descriptor of a row-major 8-bit grayscale window, default parameters.
 * `*written` receives the descriptor length; `CwStatus::BufferTooSmall` is
 * returned (with `*written` set) when `out_len` is insufficient.
 */
enum CwStatus cw_hog_descriptor(const uint8_t *pixels,
                                size_t width,
                                size_t height,
                                double *out,
                                size_t out_len,
                                size_t *written);

enum CwStatus cw_tracker_new(int64_t shift_limit_secs,
                             int64_t gap_tolerance_secs,
                             int64_t trespass_throttle_secs,
                             struct CwTracker **out);

/**
 * Ingests one sighting; `operator_id` NULL means an unknown face. The
 * alerts raised are returned in `*alerts_json` as a JSON array of alert
 * payloads (caller-owned).
 */
enum CwStatus cw_tracker_ingest(struct CwTracker *tracker,
                                int64_t timestamp_ns,
                                const char *frame_ref,
                                const char *operator_id,
                                double distance,
                                char **alerts_json);

/**
 * Closes sessions idle longer than the gap tolerance at `now_ns`.
 */
enum CwStatus cw_tracker_close_stale(struct CwTracker *tracker, int64_t now_ns, size_t *closed);

/**
 * Elapsed seconds of the operator's open session at `now_ns`;
 * `CwStatus::NotFound` when no session is open.
 */
enum CwStatus cw_tracker_shift_seconds(const struct CwTracker *tracker,
                                       const char *operator_id,
                                       int64_t now_ns,
                                       int64_t *out);

void cw_tracker_free(struct CwTracker *tracker);

/**
 * Renders the CSV daily report for `year-month-day` from an observation log.
 * `gallery` may be NULL; it only supplies display names. Tracker settings
 * are the defaults.
 */
enum CwStatus cw_report_csv(const char *observation_log,
                            const struct CwGallery *gallery,
                            int32_t year,
                            uint32_t month,
                            uint32_t day,
                            uint32_t cadence_hours,
                            char **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CABWATCH_H */
