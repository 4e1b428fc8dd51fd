#ifndef FLOWSR_H
#define FLOWSR_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes returned by every fallible function.
 */
typedef enum FlowsrStatus {
  FLOWSR_STATUS_OK = 0,
  FLOWSR_STATUS_NULL_POINTER = 1,
  FLOWSR_STATUS_INVALID_UTF8 = 2,
  FLOWSR_STATUS_IO = 3,
  FLOWSR_STATUS_FORMAT = 4,
  FLOWSR_STATUS_INVALID_INPUT = 5,
  FLOWSR_STATUS_NUMERICAL = 6,
  FLOWSR_STATUS_BUFFER_TOO_SMALL = 7,
  FLOWSR_STATUS_PANIC = 8,
} FlowsrStatus;

/**
 * Generator weights with their inferred architecture.
 */
typedef struct FlowsrGenerator FlowsrGenerator;

/**
 * Time-resolved velocity field on a regular grid.
 */
typedef struct FlowsrVolume FlowsrVolume;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *flowsr_version(void);

/**
 * Message for the last failed call on this thread, or NULL after a
 * successful call. The pointer stays valid until the next call on the
 * same thread.
 */
const char *flowsr_last_error(void);

/**
 * Builds a volume from `len` interleaved values laid out as
 * (t, z, y, x, component).
 *
 * # Safety
 * `data` must point to `len` readable doubles and `out` must be writable.
 */
enum FlowsrStatus flowsr_volume_new(size_t nx,
                                    size_t ny,
                                    size_t nz,
                                    size_t nt,
                                    double spacing,
                                    double dt,
                                    const double *data,
                                    size_t len,
                                    struct FlowsrVolume **out);

/**
 * Reads a velocity volume from an F4D file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` must be writable.
 */
enum FlowsrStatus flowsr_volume_read(const char *path, struct FlowsrVolume **out);

/**
 * Writes a volume to an F4D file. Values are stored in single precision.
 *
 * # Safety
 * `volume` must be a live handle and `path` a NUL-terminated string.
 */
enum FlowsrStatus flowsr_volume_write(const struct FlowsrVolume *volume, const char *path);

/**
 * Reports grid size, frame count and spacing. Any output pointer may be
 * NULL.
 *
 * # Safety
 * `volume` must be a live handle; non-NULL outputs must be writable.
 */
enum FlowsrStatus flowsr_volume_shape(const struct FlowsrVolume *volume,
                                      size_t *nx,
                                      size_t *ny,
                                      size_t *nz,
                                      size_t *nt,
                                      double *spacing,
                                      double *dt);

/**
 * Number of doubles held by the volume.
 *
 * # Safety
 * `volume` must be a live handle or NULL (which yields 0).
 */
size_t flowsr_volume_len(const struct FlowsrVolume *volume);

/**
 * Copies the interleaved values into `buf`, which must hold at least
 * [`flowsr_volume_len`] doubles.
 *
 * # Safety
 * `volume` must be a live handle and `buf` must point to `len` writable
 * doubles.
 */
enum FlowsrStatus flowsr_volume_copy(const struct FlowsrVolume *volume, double *buf, size_t len);

/**
 * Releases a volume. NULL is ignored.
 *
 * # Safety
 * `volume` must come from this library and not be used afterwards.
 */
void flowsr_volume_free(struct FlowsrVolume *volume);

/**
 * Loads generator weights from an F4DW checkpoint and checks that they
 * form a complete generator.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` must be writable.
 */
enum FlowsrStatus flowsr_generator_load(const char *path, struct FlowsrGenerator **out);

/**
 * Trainable parameter count, or 0 for NULL.
 *
 * # Safety
 * `generator` must be a live handle or NULL.
 */
size_t flowsr_generator_param_count(const struct FlowsrGenerator *generator);

/**
 * Releases a generator. NULL is ignored.
 *
 * # Safety
 * `generator` must come from this library and not be used afterwards.
 */
void flowsr_generator_free(struct FlowsrGenerator *generator);

/**
 * Super-resolves a low-resolution volume to twice its grid size by tiled
 * inference. A NULL generator selects trilinear upsampling.
 *
 * # Safety
 * `lr` must be a live handle, `generator` a live handle or NULL, and `out`
 * writable.
 */
enum FlowsrStatus flowsr_infer(const struct FlowsrGenerator *generator,
                               const struct FlowsrVolume *lr,
                               struct FlowsrVolume **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FLOWSR_H */
