#ifndef BVENTROPY_H
#define BVENTROPY_H

#pragma once

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum BveStatus {
  BVE_STATUS_OK = 0,
  BVE_STATUS_NULL_POINTER = 1,
  BVE_STATUS_INVALID_ARGUMENT = 2,
  BVE_STATUS_METRIC_ERROR = 3,
  BVE_STATUS_GAUGE_ERROR = 4,
  BVE_STATUS_VARIATION_ERROR = 5,
  BVE_STATUS_CODEC_ERROR = 6,
  BVE_STATUS_PANIC = 99,
} BveStatus;

/**
 * Serialized codeword with its exact payload bit count.
 */
typedef struct BveCodeword BveCodeword;

/**
 * Gauge function Ψ.
 */
typedef struct BveGauge BveGauge;

/**
 * Finite metric space.
 */
typedef struct BveSpace BveSpace;

/**
 * Real-valued step function on `[0, L)`.
 */
typedef struct BveStep BveStep;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next failing call.
 */
const char *bve_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *bve_version(void);

/**
 * Space from a row-major `n × n` distance matrix.
 *
 * # Safety
 * `dist` must point to `n * n` doubles; `out` must be writable.
 */
enum BveStatus bve_space_from_matrix(size_t n, const double *dist, struct BveSpace **out);

/**
 * Regular lattice with `side^dim` points and the given spacing.
 *
 * # Safety
 * `out` must be writable.
 */
enum BveStatus bve_space_lattice(size_t side, size_t dim, double spacing, struct BveSpace **out);

/**
 * # Safety
 * `space` must come from a `bve_space_*` constructor or be null.
 */
void bve_space_free(struct BveSpace *space);

/**
 * # Safety
 * `space` must be a live handle.
 */
size_t bve_space_len(const struct BveSpace *space);

/**
 * Doubling and packing dimensions over the scale window `[lo, hi]`.
 *
 * # Safety
 * `space` must be a live handle; `d` and `p` must be writable.
 */
enum BveStatus bve_space_dimensions(const struct BveSpace *space,
                                    double lo,
                                    double hi,
                                    uint32_t *d,
                                    uint32_t *p);

/**
 * `α`-covering number of the whole space (closed balls).
 *
 * # Safety
 * `space` must be a live handle; `count` must be writable.
 */
enum BveStatus bve_covering_number(const struct BveSpace *space,
                                   double alpha,
                                   bool exact,
                                   size_t *count);

/**
 * `α`-packing number of the whole space.
 *
 * # Safety
 * `space` must be a live handle; `count` must be writable.
 */
enum BveStatus bve_packing_number(const struct BveSpace *space,
                                  double alpha,
                                  bool exact,
                                  size_t *count);

/**
 * Gauge from a token: `id`, `pow:<gamma>` or `table:<path>`.
 *
 * # Safety
 * `token` must be a NUL-terminated string; `out` must be writable.
 */
enum BveStatus bve_gauge_parse(const char *token, struct BveGauge **out);

/**
 * # Safety
 * `gauge` must come from [`bve_gauge_parse`] or be null.
 */
void bve_gauge_free(struct BveGauge *gauge);

/**
 * `Ψ(s)`; NaN for a null handle.
 *
 * # Safety
 * `gauge` must be a live handle or null.
 */
double bve_gauge_eval(const struct BveGauge *gauge, double s);

/**
 * Step function equal to `values[i]` on `[breakpoints[i], breakpoints[i+1])`,
 * with `breakpoints[pieces] = length`. `breakpoints` holds `pieces` left
 * ends starting at 0.
 *
 * # Safety
 * `breakpoints` and `values` must point to `pieces` doubles; `out` must be
 * writable.
 */
enum BveStatus bve_step_new(double length,
                            const double *breakpoints,
                            const double *values,
                            size_t pieces,
                            struct BveStep **out);

/**
 * # Safety
 * `step` must come from a `bve_step_*` constructor or be null.
 */
void bve_step_free(struct BveStep *step);

/**
 * # Safety
 * `step` must be a live handle or null.
 */
size_t bve_step_pieces(const struct BveStep *step);

/**
 * Copies left ends and values into caller buffers of capacity `cap`.
 *
 * # Safety
 * `step` must be a live handle; both buffers must hold `cap` doubles.
 */
enum BveStatus bve_step_read(const struct BveStep *step,
                             double *breakpoints,
                             double *values,
                             size_t cap);

/**
 * `TV^Ψ` of a step function with real values.
 *
 * # Safety
 * Handles must be live; `value` must be writable.
 */
enum BveStatus bve_step_tv_psi(const struct BveStep *step,
                               const struct BveGauge *gauge,
                               double *value);

/**
 * `L¹` distance of two step functions on the same interval.
 *
 * # Safety
 * Handles must be live; `value` must be writable.
 */
enum BveStatus bve_l1_distance(const struct BveStep *a, const struct BveStep *b, double *value);

/**
 * Encodes `step` (values in `[-half_width, half_width]`, `TV^Ψ ≤ budget`)
 * to `L¹` accuracy `epsilon`.
 *
 * # Safety
 * Handles must be live; `out` must be writable.
 */
enum BveStatus bve_encode(const struct BveStep *step,
                          const struct BveGauge *gauge,
                          double half_width,
                          double budget,
                          double epsilon,
                          struct BveCodeword **out);

/**
 * # Safety
 * `cw` must come from [`bve_encode`] or be null.
 */
void bve_codeword_free(struct BveCodeword *cw);

/**
 * Serialized bytes, borrowed from the handle.
 *
 * # Safety
 * `cw` must be live; `data` and `len` must be writable.
 */
enum BveStatus bve_codeword_bytes(const struct BveCodeword *cw, const uint8_t **data, size_t *len);

/**
 * Exact number of payload bits; 0 for a null handle.
 *
 * # Safety
 * `cw` must be live or null.
 */
uint64_t bve_codeword_bit_length(const struct BveCodeword *cw);

/**
 * Bit bound the codeword is certified against; NaN for a null handle.
 *
 * # Safety
 * `cw` must be live or null.
 */
double bve_codeword_budget_bits(const struct BveCodeword *cw);

/**
 * Decodes serialized codeword bytes for values in `[-half_width, half_width]`.
 *
 * # Safety
 * `data` must point to `len` bytes; `out` must be writable.
 */
enum BveStatus bve_decode(const uint8_t *data, size_t len, double half_width, struct BveStep **out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BVENTROPY_H */
