/* Generated by cbindgen from scintilla-ffi. Do not edit. */

#ifndef SCINTILLA_H
#define SCINTILLA_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ScintillaArms {
  SCINTILLA_ARMS_ONE_ARM = 0,
  SCINTILLA_ARMS_BOTH_ARMS = 1,
} ScintillaArms;

typedef enum ScintillaStatus {
  SCINTILLA_STATUS_OK = 0,
  SCINTILLA_STATUS_NULL_POINTER = 1,
  SCINTILLA_STATUS_DOMAIN = 2,
  SCINTILLA_STATUS_DIMENSION = 3,
  SCINTILLA_STATUS_CONTAINMENT = 4,
  SCINTILLA_STATUS_INFRARED_DIVERGENCE = 5,
  SCINTILLA_STATUS_QUADRATURE = 6,
  SCINTILLA_STATUS_STEP_UNDERFLOW = 7,
  SCINTILLA_STATUS_NON_FINITE = 8,
  SCINTILLA_STATUS_INVALID_STATE = 9,
  SCINTILLA_STATUS_CONFIG = 10,
  SCINTILLA_STATUS_IO = 11,
  SCINTILLA_STATUS_PANIC = 12,
} ScintillaStatus;

typedef enum ScintillaStructureKind {
  SCINTILLA_STRUCTURE_KIND_KOLMOGOROV = 0,
  SCINTILLA_STRUCTURE_KIND_QUADRATIC = 1,
} ScintillaStructureKind;

/*
 Modal basis handle.
 */
typedef struct ScintillaBasis ScintillaBasis;

/*
 Coupling set handle (P, Λ, Λ_T).
 */
typedef struct ScintillaCouplings ScintillaCouplings;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message for the last failed call on this thread, or null. Valid until the
 next failing call on the same thread.
 */
const char *scintilla_last_error(void);

/*
 Library version, static string.
 */
const char *scintilla_version(void);

/*
 r0 = 0.185 (λ²/(Cn² z))^(3/5), SI units.

 # Safety
 `out` must be valid for writes.
 */
enum ScintillaStatus scintilla_fried_parameter(double cn2,
                                               double wavelength,
                                               double z,
                                               double *out_r0);

/*
 σ_R² = 1.23 Cn² k^(7/6) z^(11/6), SI units.

 # Safety
 `out` must be valid for writes.
 */
enum ScintillaStatus scintilla_rytov_variance(double cn2,
                                              double wavenumber,
                                              double z,
                                              double *out_sigma2);

/*
 Phase structure function at separation `x` for Fried parameter `r0`.

 # Safety
 `out` must be valid for writes.
 */
enum ScintillaStatus scintilla_structure_function(double x,
                                                  double r0,
                                                  enum ScintillaStructureKind kind,
                                                  double *out_d);

/*
 First `n_modes` LG modes of waist `waist` [m] on an `n_side`² frequency
 grid of half-width `extent` [1/m]; `extent <= 0` picks 8/(π·waist).

 # Safety
 `out_basis` must be valid for writes.
 */
enum ScintillaStatus scintilla_basis_lg_first(size_t n_modes,
                                              double waist,
                                              size_t n_side,
                                              double extent,
                                              struct ScintillaBasis **out_basis);

/*
 Number of modes; 0 for a null handle.

 # Safety
 `basis` must be null or a live handle.
 */
size_t scintilla_basis_len(const struct ScintillaBasis *basis);

/*
 # Safety
 `basis` must be null or a handle not yet freed.
 */
void scintilla_basis_free(struct ScintillaBasis *basis);

/*
 Couplings in the waist frame for a von Karman spectrum (outer scale > 0).

 # Safety
 `basis` must be a live handle and `out_couplings` valid for writes.
 */
enum ScintillaStatus scintilla_couplings_compute(const struct ScintillaBasis *basis,
                                                 double wavelength,
                                                 double cn2,
                                                 double outer_scale,
                                                 struct ScintillaCouplings **out_couplings);

/*
 Basis dimension of a coupling set; 0 for a null handle.

 # Safety
 `c` must be null or a live handle.
 */
size_t scintilla_couplings_dim(const struct ScintillaCouplings *c);

/*
 Λ_T [1/m].

 # Safety
 `c` must be a live handle and `out_lambda_t` valid for writes.
 */
enum ScintillaStatus scintilla_couplings_lambda_t(const struct ScintillaCouplings *c,
                                                  double *out_lambda_t);

/*
 Kinetic matrix P into two dim² row-major arrays.

 # Safety
 `c` must be a live handle; `out_re` and `out_im` must hold dim² doubles.
 */
enum ScintillaStatus scintilla_couplings_kinetic(const struct ScintillaCouplings *c,
                                                 double *out_re,
                                                 double *out_im);

/*
 # Safety
 `c` must be null or a handle not yet freed.
 */
void scintilla_couplings_free(struct ScintillaCouplings *c);

/*
 Integrates the IPE from 0 to `z` [m] with fixed couplings.
 `tolerance <= 0` uses the default 1e-6.

 # Safety
 `c` must be a live handle; all arrays must hold dim² doubles.
 */
enum ScintillaStatus scintilla_evolve(const struct ScintillaCouplings *c,
                                      const double *rho_re,
                                      const double *rho_im,
                                      double z,
                                      double tolerance,
                                      double *out_re,
                                      double *out_im);

/*
 Wootters concurrence of a 4×4 two-qubit density matrix.

 # Safety
 `rho_re` and `rho_im` must hold 16 doubles; `out_c` valid for writes.
 */
enum ScintillaStatus scintilla_concurrence(const double *rho_re,
                                           const double *rho_im,
                                           double *out_c);

/*
 Single-screen concurrence sweep for the ℓ = ±`l` Bell state. Writes
 `n` concurrences and the interpolated zero crossing (NaN if none).

 # Safety
 `w_over_r0` and `out_concurrence` must hold `n` doubles; `out_crossing`
 must be valid for writes.
 */
enum ScintillaStatus scintilla_concurrence_curve(int32_t l,
                                                 const double *w_over_r0,
                                                 size_t n,
                                                 enum ScintillaStructureKind kind,
                                                 enum ScintillaArms arms,
                                                 double *out_concurrence,
                                                 double *out_crossing);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SCINTILLA_H */
