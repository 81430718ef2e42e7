#ifndef QDM_H
#define QDM_H

#pragma once

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum QdmStatus {
  QDM_STATUS_OK = 0,
  QDM_STATUS_NULL_POINTER = 1,
  QDM_STATUS_INVALID_ARGUMENT = 2,
  QDM_STATUS_PARSE = 3,
  QDM_STATUS_IO = 4,
  QDM_STATUS_NUMERICAL = 5,
  QDM_STATUS_BUFFER_TOO_SMALL = 6,
  QDM_STATUS_PANIC = 7,
} QdmStatus;

/**
 * Scene preset selector for [`qdm_scene_preset`].
 */
typedef enum QdmPreset {
  QDM_PRESET_EXAMPLE1 = 0,
  QDM_PRESET_EXAMPLE2 = 1,
} QdmPreset;

/**
 * Map channel selector for [`qdm_scan_copy_map`].
 */
typedef enum QdmMap {
  /**
   * Normalized static shift.
   */
  QDM_MAP_FIELD = 0,
  /**
   * Normalized decoherence rate.
   */
  QDM_MAP_DECOHERENCE = 1,
  /**
   * Colour channel; unresolved pixels hold -1.
   */
  QDM_MAP_COLOR = 2,
  /**
   * Static shift in rad/s (or normalized energy units).
   */
  QDM_MAP_FIELD_RAW = 3,
  /**
   * Total decoherence rate in s⁻¹ (or normalized units).
   */
  QDM_MAP_DECOHERENCE_RAW = 4,
} QdmMap;

/**
 * Opaque scan result handle.
 */
typedef struct QdmScan QdmScan;

/**
 * Opaque scene handle.
 */
typedef struct QdmScene QdmScene;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread. The pointer stays valid
 * until the next failing call on the same thread.
 */
const char *qdm_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *qdm_version(void);

/**
 * Lateral FWHM of a `1/r^n` response at probe height `h_p`.
 *
 * # Safety
 * `out` must be a valid writable pointer.
 */
enum QdmStatus qdm_resolution_fwhm(double h_p, double n, double *out);

/**
 * Measurement-induced dephasing rate `κ²/(4Δt)`.
 *
 * # Safety
 * `out` must be a valid writable pointer.
 */
enum QdmStatus qdm_measurement_induced_rate(double kappa, double delta_t, double *out);

/**
 * Thermal ground/excited populations of a spin of `m0` Bohr magnetons in
 * field `field` (T) at temperature `temperature` (K).
 *
 * # Safety
 * `p_ground` and `p_excited` must be valid writable pointers.
 */
enum QdmStatus qdm_boltzmann_populations(double m0,
                                         double field,
                                         double temperature,
                                         double *p_ground,
                                         double *p_excited);

/**
 * Parse scene text.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out` a valid writable pointer.
 */
enum QdmStatus qdm_scene_parse(const char *text, struct QdmScene **out);

/**
 * Load a scene file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` a valid writable pointer.
 */
enum QdmStatus qdm_scene_load(const char *path, struct QdmScene **out);

/**
 * Build one of the reference scenes.
 *
 * # Safety
 * `out` must be a valid writable pointer.
 */
enum QdmStatus qdm_scene_preset(enum QdmPreset kind, uint64_t seed, struct QdmScene **out);

/**
 * Number of spins and fluctuators in a scene.
 *
 * # Safety
 * `scene` must come from a `qdm_scene_*` constructor; outputs may be null.
 */
enum QdmStatus qdm_scene_counts(const struct QdmScene *scene,
                                size_t *n_spins,
                                size_t *n_fluctuators);

/**
 * Release a scene. Null is ignored.
 *
 * # Safety
 * `scene` must come from a `qdm_scene_*` constructor and not be used
 * afterwards.
 */
void qdm_scene_free(struct QdmScene *scene);

/**
 * Scan a scene over an `nx × ny` grid spanning its field of view at its
 * probe height, with the default probe for its units. `steps == 0` selects
 * the closed-form pipeline, otherwise the record-based one with `steps`
 * measurements per pixel.
 *
 * # Safety
 * `scene` must be a live scene handle; `out` a valid writable pointer.
 */
enum QdmStatus qdm_scan(const struct QdmScene *scene,
                        size_t nx,
                        size_t ny,
                        uint64_t seed,
                        size_t steps,
                        struct QdmScan **out);

/**
 * Grid dimensions of a scan.
 *
 * # Safety
 * `scan` must be a live scan handle; `nx`, `ny` valid writable pointers.
 */
enum QdmStatus qdm_scan_dims(const struct QdmScan *scan, size_t *nx, size_t *ny);

/**
 * Copy one map, row-major with `iy` outer, into `buf` of `len` doubles.
 * `len` must be at least `nx·ny`.
 *
 * # Safety
 * `scan` must be a live scan handle and `buf` valid for `len` writes.
 */
enum QdmStatus qdm_scan_copy_map(const struct QdmScan *scan,
                                 enum QdmMap which,
                                 double *buf,
                                 size_t len);

/**
 * Release a scan. Null is ignored.
 *
 * # Safety
 * `scan` must come from [`qdm_scan`] and not be used afterwards.
 */
void qdm_scan_free(struct QdmScan *scan);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QDM_H */
