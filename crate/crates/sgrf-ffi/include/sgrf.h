#ifndef SGRF_H
#define SGRF_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum {
  SGRF_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  SGRF_STATUS_NULL_POINTER = 1,
  /**
   * Invalid sizes, resolutions or spectrum parameters.
   */
  SGRF_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Numerical failure (spectrum rejected, covariance indefinite, ...).
   */
  SGRF_STATUS_NUMERIC = 3,
  /**
   * File I/O or format failure.
   */
  SGRF_STATUS_IO = 4,
  /**
   * A path argument was not valid UTF-8.
   */
  SGRF_STATUS_UTF8 = 5,
  /**
   * Internal panic caught at the boundary.
   */
  SGRF_STATUS_PANIC = 6,
} SgrfStatus;

/**
 * Pre-computed filter bank handle.
 */
typedef struct SgrfBank SgrfBank;

/**
 * One field realization handle.
 */
typedef struct SgrfField SgrfField;

/**
 * Angular power spectrum handle.
 */
typedef struct SgrfSpectrum SgrfSpectrum;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static, NUL-terminated name of a status code.
 */
const char *sgrf_status_name(SgrfStatus status);

/**
 * Builds the order-2 spectrum C_l = (a2 + l²(l+1)²)^{-1}.
 *
 * # Safety
 * `out` must be a valid pointer; the returned handle must be released
 * with [`sgrf_spectrum_free`].
 */
SgrfStatus sgrf_spectrum_from_squared_amplitude(double a2, SgrfSpectrum **out);

/**
 * Builds a spectrum from `len` operator roots kappa_i given as parallel
 * real/imaginary arrays.
 *
 * # Safety
 * `re` and `im` must point to `len` readable doubles; `out` must be a
 * valid pointer. Release the handle with [`sgrf_spectrum_free`].
 */
SgrfStatus sgrf_spectrum_from_kappas(const double *re,
                                     const double *im,
                                     uintptr_t len,
                                     SgrfSpectrum **out);

/**
 * Operator order M, or 0 for a null handle.
 *
 * # Safety
 * `spectrum` must be null or a live handle from this library.
 */
uintptr_t sgrf_spectrum_order(const SgrfSpectrum *spectrum);

/**
 * Angular power C_l; NaN for a null handle.
 *
 * # Safety
 * `spectrum` must be null or a live handle from this library.
 */
double sgrf_spectrum_angular_power(const SgrfSpectrum *spectrum, uint32_t l);

/**
 * # Safety
 * `spectrum` must be null or an unreleased handle from this library.
 */
void sgrf_spectrum_free(SgrfSpectrum *spectrum);

/**
 * Pre-computes the filter bank on the grid with 2n+1 latitudes, band
 * limit `m_max` and ring length `n_phi` (>= 2 m_max). `threads` = 0 or 1
 * runs serially; `term_cap` = 0 uses the default hypergeometric cap.
 *
 * # Safety
 * `spectrum` must be a live handle; `out` must be a valid pointer. The
 * returned handle must be released with [`sgrf_bank_free`].
 */
SgrfStatus sgrf_bank_build(const SgrfSpectrum *spectrum,
                           uintptr_t n,
                           uintptr_t m_max,
                           uintptr_t n_phi,
                           uintptr_t threads,
                           uintptr_t term_cap,
                           SgrfBank **out);

/**
 * # Safety
 * `bank` must be a live handle; `path` must be a NUL-terminated string.
 */
SgrfStatus sgrf_bank_save(const SgrfBank *bank, const char *path);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be a valid pointer.
 * The returned handle must be released with [`sgrf_bank_free`].
 */
SgrfStatus sgrf_bank_load(const char *path, SgrfBank **out);

/**
 * Latitude count (2n+1) of the bank's grid, or 0 for a null handle.
 *
 * # Safety
 * `bank` must be null or a live handle from this library.
 */
uintptr_t sgrf_bank_rows(const SgrfBank *bank);

/**
 * Ring length n_phi of the bank's grid, or 0 for a null handle.
 *
 * # Safety
 * `bank` must be null or a live handle from this library.
 */
uintptr_t sgrf_bank_cols(const SgrfBank *bank);

/**
 * # Safety
 * `bank` must be null or an unreleased handle from this library.
 */
void sgrf_bank_free(SgrfBank *bank);

/**
 * Generates one field sample from the (seed, stream) random substream.
 * Identical inputs give identical fields on every platform.
 *
 * # Safety
 * `bank` must be a live handle; `out` must be a valid pointer. The
 * returned handle must be released with [`sgrf_field_free`].
 */
SgrfStatus sgrf_field_generate(const SgrfBank *bank,
                               uint64_t seed,
                               uint64_t stream,
                               SgrfField **out);

/**
 * Latitude count of the field, or 0 for a null handle.
 *
 * # Safety
 * `field` must be null or a live handle from this library.
 */
uintptr_t sgrf_field_rows(const SgrfField *field);

/**
 * Ring length of the field, or 0 for a null handle.
 *
 * # Safety
 * `field` must be null or a live handle from this library.
 */
uintptr_t sgrf_field_cols(const SgrfField *field);

/**
 * Borrowed pointer to the row-major rows x cols field values; valid until
 * the field handle is released. Null for a null handle.
 *
 * # Safety
 * `field` must be null or a live handle from this library.
 */
const double *sgrf_field_data(const SgrfField *field);

/**
 * Writes the binary field format (length-prefixed JSON header plus
 * float64 payload).
 *
 * # Safety
 * `field` must be a live handle; `path` must be a NUL-terminated string.
 */
SgrfStatus sgrf_field_save(const SgrfField *field, const char *path);

/**
 * # Safety
 * `field` must be null or an unreleased handle from this library.
 */
void sgrf_field_free(SgrfField *field);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SGRF_H */
