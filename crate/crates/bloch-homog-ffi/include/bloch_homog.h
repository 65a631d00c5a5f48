/* C interface of the bloch-homog workbench. */

#ifndef BLOCH_HOMOG_H
#define BLOCH_HOMOG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Success.
 */
#define BH_OK 0

/**
 * A panic was caught at the language boundary; treat outputs as invalid.
 */
#define BH_ERR_PANIC 1

/**
 * The run completed but at least one check failed.
 */
#define BH_ERR_CHECK_FAILED 2

/**
 * Invalid input: null pointer, bad JSON, unknown mode, or a value that
 * fails validation.
 */
#define BH_ERR_CONFIG 3

/**
 * An iterative solve stopped before reaching its tolerance.
 */
#define BH_ERR_NON_CONVERGENCE 4

/**
 * Discretization selector for the solver entry points.
 */
typedef enum BhScheme {
  /**
   * Fourier-Galerkin collocation, one- or two-dimensional grids.
   */
  BhSchemeSpectral = 0,
  /**
   * Face-harmonic finite differences, one-dimensional grids only.
   */
  BhSchemeFdHarmonic = 1,
} BhScheme;

/**
 * Opaque sampled coefficient field on the unit torus.
 */
typedef struct BhField BhField;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Crate version as a static NUL-terminated string.
 */
const char *bh_version(void);

/**
 * Diagnostic for the most recent failing call on this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *bh_last_error(void);

/**
 * Build a coefficient field from a preset description in JSON, for
 * example `{"kind":"laminate","phases":[1.0,4.0],"fraction":0.5}`.
 *
 * # Safety
 * `preset_json` must be a valid NUL-terminated string and `out_field` a
 * valid pointer. On `BH_OK` the caller owns the new handle and must
 * release it with `bh_field_free`.
 */
int32_t bh_field_build_json(const char *preset_json,
                            size_t dim,
                            size_t resolution,
                            struct BhField **out_field);

/**
 * Release a field handle. A null handle is a no-op.
 *
 * # Safety
 * `field` must be null or a handle from `bh_field_build_json` that has
 * not been freed already.
 */
void bh_field_free(struct BhField *field);

/**
 * Spatial dimension of a field handle, or 0 for a null handle.
 *
 * # Safety
 * `field` must be null or a live handle.
 */
size_t bh_field_dim(const struct BhField *field);

/**
 * Homogenized tensor of one field: solves the cell correctors at `tol`
 * and writes the dim x dim entries row-major into `out_entries`.
 *
 * # Safety
 * `field` must be a live handle and `out_entries` must point to at least
 * dim*dim writable doubles.
 */
int32_t bh_homogenized(const struct BhField *field,
                       enum BhScheme scheme,
                       double tol,
                       double *out_entries);

/**
 * Microstructure-interaction tensor of a pair on one grid: solves the
 * correctors of `field_a` at `tol` and evaluates the energy form of
 * `field_b` on them, writing dim x dim entries row-major.
 *
 * # Safety
 * Both handles must be live and `out_entries` must point to at least
 * dim*dim writable doubles.
 */
int32_t bh_bsharp_energy(const struct BhField *field_a,
                         const struct BhField *field_b,
                         enum BhScheme scheme,
                         double tol,
                         double *out_entries);

/**
 * Run a full pipeline in memory. `config_json` is the same document the
 * CLI reads and `mode` the same mode word (tensors, bloch-verify, bounds,
 * transform-check, converge-1d, variational, all). On `BH_OK` or
 * `BH_ERR_CHECK_FAILED` the full report is stored as a JSON string in
 * `*out_report_json`; release it with `bh_string_free`. No files are
 * written.
 *
 * # Safety
 * `config_json` and `mode` must be valid NUL-terminated strings and
 * `out_report_json` a valid pointer.
 */
int32_t bh_run_json(const char *config_json, const char *mode, char **out_report_json);

/**
 * Release a string returned by `bh_run_json`. A null pointer is a no-op.
 *
 * # Safety
 * `s` must be null or a string obtained from this library that has not
 * been freed already.
 */
void bh_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BLOCH_HOMOG_H */
