#ifndef MELTPOOL_H
#define MELTPOOL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum MpStatus {
  MP_STATUS_OK = 0,
  MP_STATUS_NULL_POINTER = 1,
  MP_STATUS_INVALID_ARGUMENT = 2,
  MP_STATUS_NO_CONTOUR = 3,
  MP_STATUS_OUT_OF_FRAME = 4,
  MP_STATUS_UNDEFINED_CORRELATION = 5,
  MP_STATUS_BUFFER_TOO_SMALL = 6,
  MP_STATUS_IO = 7,
  MP_STATUS_CHECKPOINT = 8,
  MP_STATUS_NUMERICAL = 9,
  MP_STATUS_PANIC = 10,
} MpStatus;

// Melt-pool boundary polyline.
typedef struct MpContour MpContour;

// Trained network loaded from a checkpoint.
typedef struct MpModel MpModel;

// Truncated signed-distance image.
typedef struct MpSdfGrid MpSdfGrid;

// Raster geometry of a signed-distance image.
typedef struct MpGridSpec {
  size_t rows;
  size_t cols;
  double pitch_x_um;
  double pitch_d_um;
} MpGridSpec;

typedef struct MpDimensions {
  double depth_um;
  double width_um;
  double area_um2;
} MpDimensions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or null. Valid until the
// next call into the library on the same thread.
const char *mp_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *mp_version(void);

// The 64 x 64 target grid used by the toolkit.
struct MpGridSpec mp_default_grid(void);

// Builds a contour from `n` lateral offsets `xs` and depths `ds` (µm).
//
// # Safety
// `xs` and `ds` must point to `n` readable values; `out` must be writable.
enum MpStatus mp_contour_new(const double *xs, const double *ds, size_t n, struct MpContour **out);

// # Safety
// `c` must be null or a pointer obtained from this library, freed once.
void mp_contour_free(struct MpContour *c);

// Number of points, 0 for a null handle.
//
// # Safety
// `c` must be null or a live contour handle.
size_t mp_contour_len(const struct MpContour *c);

// Copies the points into `xs` and `ds`, each with room for `capacity`
// values. Fails with `BufferTooSmall` when `capacity < mp_contour_len(c)`.
//
// # Safety
// `c` must be a live handle; `xs` and `ds` must be writable for `capacity` values.
enum MpStatus mp_contour_points(const struct MpContour *c, double *xs, double *ds, size_t capacity);

// # Safety
// `c` must be a live handle and `out` writable.
enum MpStatus mp_contour_dimensions(const struct MpContour *c, struct MpDimensions *out);

// Mean absolute depth difference of the 100-point resamplings.
//
// # Safety
// Both handles must be live and `out` writable.
enum MpStatus mp_contour_mae(const struct MpContour *pred, const struct MpContour *gt, double *out);

// Symmetric Hausdorff distance (µm).
//
// # Safety
// Both handles must be live and `out` writable.
enum MpStatus mp_hausdorff(const struct MpContour *a, const struct MpContour *b, double *out);

// Overlap of `left` with `right` shifted by `hatch_spacing_um`. Sets
// `overlaps` to 1 and `distance_um` to the base-to-crossing distance when
// the boundaries cross, else `overlaps` to 0 and `distance_um` to NaN.
//
// # Safety
// Both handles must be live and the outputs writable.
enum MpStatus mp_intersection_distance(const struct MpContour *left,
                                       const struct MpContour *right,
                                       double hatch_spacing_um,
                                       int32_t *overlaps,
                                       double *distance_um);

// Pearson correlation of `n` pairs.
//
// # Safety
// `xs` and `ys` must hold `n` values; `out` must be writable.
enum MpStatus mp_pearson_r(const double *xs, const double *ys, size_t n, double *out);

// Mean absolute difference of `n` pairs.
//
// # Safety
// `ys` and `preds` must hold `n` values; `out` must be writable.
enum MpStatus mp_mae(const double *ys, const double *preds, size_t n, double *out);

// Rasterizes a contour into a signed-distance image.
//
// # Safety
// `c` must be a live handle and `out` writable.
enum MpStatus mp_sdf_from_contour(const struct MpContour *c,
                                  struct MpGridSpec grid,
                                  double truncation_um,
                                  struct MpSdfGrid **out);

// Wraps `rows * cols` normalized values in `[-1, 1]`, row-major.
//
// # Safety
// `values` must hold `grid.rows * grid.cols` values; `out` must be writable.
enum MpStatus mp_sdf_from_values(struct MpGridSpec grid,
                                 double truncation_um,
                                 const double *values,
                                 struct MpSdfGrid **out);

// # Safety
// `g` must be null or a pointer obtained from this library, freed once.
void mp_sdf_free(struct MpSdfGrid *g);

// Copies the normalized values, row-major, into `out`.
//
// # Safety
// `g` must be a live handle and `out` writable for `capacity` values.
enum MpStatus mp_sdf_values(const struct MpSdfGrid *g, double *out, size_t capacity);

// Level set of a signed-distance image as a contour.
//
// # Safety
// `g` must be a live handle and `out` writable.
enum MpStatus mp_sdf_extract_contour(const struct MpSdfGrid *g,
                                     double level,
                                     struct MpContour **out);

// Intersection over union of the negative regions of two images.
//
// # Safety
// Both handles must be live and `out` writable.
enum MpStatus mp_sdf_iou(const struct MpSdfGrid *a, const struct MpSdfGrid *b, double *out);

// Loads a checkpoint written by the `mpf` tool.
//
// # Safety
// `path` must be a NUL-terminated UTF-8 string and `out` writable.
enum MpStatus mp_model_load(const char *path, struct MpModel **out);

// # Safety
// `m` must be null or a pointer obtained from this library, freed once.
void mp_model_free(struct MpModel *m);

// Trainable parameter count, 0 for a null handle.
//
// # Safety
// `m` must be null or a live handle.
size_t mp_model_num_parameters(const struct MpModel *m);

// Side length of the square input frames and output image.
//
// # Safety
// `m` must be null or a live handle.
size_t mp_model_image_size(const struct MpModel *m);

// Predicts one signed-distance image from `frames` consecutive normalized
// frames, each `size * size` values row-major (`size` from
// [`mp_model_image_size`]). Writes `size * size` values into `out`.
//
// # Safety
// `m` must be a live handle, `input` readable for `frames * size * size`
// values and `out` writable for `capacity` values.
enum MpStatus mp_model_predict(const struct MpModel *m,
                               const float *input,
                               size_t frames,
                               float *out,
                               size_t capacity);

// Predicts and wraps the result as a signed-distance image on the grid the
// model was trained on.
//
// # Safety
// As for [`mp_model_predict`]; `out` must be writable.
enum MpStatus mp_model_predict_sdf(const struct MpModel *m,
                                   const float *input,
                                   size_t frames,
                                   struct MpSdfGrid **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MELTPOOL_H */
