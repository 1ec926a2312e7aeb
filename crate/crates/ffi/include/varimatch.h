#ifndef VARIMATCH_H
#define VARIMATCH_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes. Zero is success.
typedef enum VmStatus {
  VM_STATUS_OK = 0,
  VM_STATUS_NULL_POINTER = 1,
  VM_STATUS_INVALID_ARGUMENT = 2,
  VM_STATUS_DIMENSION_MISMATCH = 3,
  VM_STATUS_PARSE = 4,
  VM_STATUS_IO = 5,
  VM_STATUS_NUMERICAL = 6,
  VM_STATUS_PANIC = 7,
} VmStatus;

// Kernel, deformation and optimizer settings.
typedef struct VmConfig VmConfig;

// A discrete oriented varifold.
typedef struct VmVarifold VmVarifold;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on the same thread.
const char *vm_last_error(void);

// Builds a varifold from `atoms` blocks of `n*(d+1)` doubles: the position, then the `d` frame vectors.
//
// # Safety
// `data` must point to `atoms*n*(d+1)` doubles (it may be null when `atoms` is 0); `out` must be writable.
enum VmStatus vm_varifold_new(size_t n,
                              size_t d,
                              const double *data,
                              size_t atoms,
                              struct VmVarifold **out);

// Reads a varifold JSON file.
//
// # Safety
// `file` must be a NUL-terminated string; `out` must be writable.
enum VmStatus vm_varifold_read(const char *file, struct VmVarifold **out);

// Converts an OBJ triangle mesh or CSV polyline file.
//
// # Safety
// As [`vm_varifold_read`].
enum VmStatus vm_varifold_from_mesh(const char *file, struct VmVarifold **out);

// # Safety
// `mu` must be a live handle and `file` a NUL-terminated string.
enum VmStatus vm_varifold_write(const struct VmVarifold *mu, const char *file);

// # Safety
// `mu` must be null or a handle not yet freed.
void vm_varifold_free(struct VmVarifold *mu);

// Writes the atom count, ambient dimension and frame dimension.
//
// # Safety
// `mu` must be a live handle; the outputs must be writable.
enum VmStatus vm_varifold_shape(const struct VmVarifold *mu, size_t *atoms, size_t *n, size_t *d);

// Copies the flat atom data into `buf`, which holds `len` doubles.
//
// # Safety
// `mu` must be a live handle and `buf` must be writable for `len` doubles.
enum VmStatus vm_varifold_data(const struct VmVarifold *mu, double *buf, size_t len);

// Total mass, the sum of frame weights.
//
// # Safety
// `mu` must be a live handle and `out` writable.
enum VmStatus vm_varifold_mass(const struct VmVarifold *mu, double *out);

// Default settings.
struct VmConfig *vm_config_default(void);

// Parses settings from JSON text (the run configuration format).
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum VmStatus vm_config_parse(const char *json, struct VmConfig **out);

// # Safety
// As [`vm_config_parse`], with a file path.
enum VmStatus vm_config_read(const char *file, struct VmConfig **out);

// # Safety
// `cfg` must be null or a handle not yet freed.
void vm_config_free(struct VmConfig *cfg);

// Kernel inner product. A null `cfg` selects the defaults.
//
// # Safety
// `a`, `b` must be live handles, `cfg` null or live, `out` writable.
enum VmStatus vm_inner_product(const struct VmVarifold *a,
                               const struct VmVarifold *b,
                               const struct VmConfig *cfg,
                               double *out);

// Squared kernel distance.
//
// # Safety
// As [`vm_inner_product`].
enum VmStatus vm_distance_sq(const struct VmVarifold *a,
                             const struct VmVarifold *b,
                             const struct VmConfig *cfg,
                             double *out);

// Quantizes `target` with at most `atoms` Diracs and `restarts` restarts.
// `rel_error` may be null.
//
// # Safety
// `target` must be live, `cfg` null or live, `out` writable.
enum VmStatus vm_quantize(const struct VmVarifold *target,
                          const struct VmConfig *cfg,
                          size_t atoms,
                          size_t restarts,
                          struct VmVarifold **out,
                          double *rel_error);

// Registers `source` onto `target` and returns the deformed source. `energy` may be null.
//
// # Safety
// As [`vm_quantize`].
enum VmStatus vm_register(const struct VmVarifold *source,
                          const struct VmVarifold *target,
                          const struct VmConfig *cfg,
                          struct VmVarifold **deformed,
                          double *energy);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VARIMATCH_H */
