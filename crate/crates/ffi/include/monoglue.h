#ifndef MONOGLUE_H
#define MONOGLUE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes. Values from `MG_GATE_FAILED` on mirror the command-line exit codes.
 */
typedef enum MgStatus {
  MG_OK = 0,
  MG_IO = 1,
  MG_INVALID = 2,
  MG_GATE_FAILED = 3,
  MG_DIVERGED = 4,
  MG_NULL_POINTER = 10,
  MG_PANIC = 11,
} MgStatus;

/**
 * Periodic Dirac monopole solution on a cubic torus.
 */
typedef struct MgDirac MgDirac;

/**
 * Copies the last error message of this thread into `buf` (NUL-terminated,
 * truncated to `len`). Returns the full message length without the NUL.
 *
 * # Safety
 * `buf` must be valid for `len` bytes or null.
 */
size_t mg_last_error(char *buf, size_t len);

/**
 * Samples the BPS monopole of mass `lambda` centred at the origin at `x[3]`.
 * Writes the connection components `a[3][3]` (row `j` is `A_j ∈ su(2)`) and
 * the Higgs field `phi[3]`.
 *
 * # Safety
 * `x` must point to 3 doubles, `a_out` to 9 and `phi_out` to 3.
 */
enum MgStatus mg_bps_eval(double lambda, const double *x, double *a_out, double *phi_out);

/**
 * Solves for the abelian Higgs field of point charges on the torus
 * `[0, period)³` with `points` nodes per axis. `positions` holds `3·count`
 * coordinates and `charges` holds `count` integers summing to zero.
 *
 * # Safety
 * The arrays must hold the stated number of elements; `out` must be writable.
 */
enum MgStatus mg_dirac_solve(double period,
                             size_t points,
                             size_t count,
                             const double *positions,
                             const int32_t *charges,
                             double mean,
                             struct MgDirac **out);

/**
 * Number of grid nodes of a solution.
 *
 * # Safety
 * `h` must be a live handle from [`mg_dirac_solve`] or null.
 */
size_t mg_dirac_len(const struct MgDirac *h);

/**
 * Copies the Higgs field (x fastest) into `buf`, which must hold `len` values.
 *
 * # Safety
 * `h` must be a live handle; `buf` must be valid for `len` doubles.
 */
enum MgStatus mg_dirac_higgs(const struct MgDirac *h, double *buf, size_t len);

/**
 * Flux of `∗dφ` through the lattice sphere of `radius` around `site`,
 * divided by 2π.
 *
 * # Safety
 * `h` must be a live handle; `out` must be writable.
 */
enum MgStatus mg_dirac_site_flux(const struct MgDirac *h, size_t site, double radius, double *out);

/**
 * Releases a solution handle. Null is ignored.
 *
 * # Safety
 * `h` must come from [`mg_dirac_solve`] and not be used afterwards.
 */
void mg_dirac_free(struct MgDirac *h);

/**
 * Runs one command-line mode from a TOML configuration string, writing
 * artifacts into `out_dir`. `mode` uses the command-line spelling, e.g.
 * `"bps-residual"`.
 *
 * # Safety
 * All arguments must be NUL-terminated strings.
 */
enum MgStatus mg_run(const char *config_toml, const char *mode, const char *out_dir);

#endif  /* MONOGLUE_H */
