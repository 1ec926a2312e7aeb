#include <math.h>
#include <stdio.h>
#include <string.h>

#include "varimatch.h"

#define CHECK(expr)                                                              \
  do {                                                                           \
    VmStatus s_ = (expr);                                                        \
    if (s_ != VM_STATUS_OK) {                                                    \
      fprintf(stderr, "%s:%d: status %d: %s\n", __FILE__, __LINE__, (int)s_,     \
              vm_last_error());                                                  \
      return 1;                                                                  \
    }                                                                            \
  } while (0)

int main(void) {
  /* unit square, one segment per side */
  const double square[] = {0.5, 0, 1, 0, 1, 0.5, 0, 1, 0.5, 1, -1, 0, 0, 0.5, 0, -1};
  VmVarifold *a = NULL, *q = NULL;
  CHECK(vm_varifold_new(2, 1, square, 4, &a));

  double mass = 0, dist = 1;
  CHECK(vm_varifold_mass(a, &mass));
  CHECK(vm_distance_sq(a, a, NULL, &dist));
  if (fabs(mass - 4.0) > 1e-12 || dist != 0.0) {
    fprintf(stderr, "mass %g dist %g\n", mass, dist);
    return 1;
  }

  VmConfig *cfg = NULL;
  CHECK(vm_config_parse("{\"sigma_rho\": 0.5}", &cfg));
  double rel = 1;
  CHECK(vm_quantize(a, cfg, 4, 2, &q, &rel));
  size_t atoms = 0, n = 0, d = 0;
  CHECK(vm_varifold_shape(q, &atoms, &n, &d));
  if (atoms != 4 || n != 2 || d != 1 || rel > 1e-8) {
    fprintf(stderr, "atoms %zu rel %g\n", atoms, rel);
    return 1;
  }

  VmVarifold *bad = NULL;
  if (vm_varifold_new(2, 1, NULL, 3, &bad) != VM_STATUS_NULL_POINTER || strlen(vm_last_error()) == 0) {
    fprintf(stderr, "null data accepted\n");
    return 1;
  }

  vm_varifold_free(q);
  vm_varifold_free(a);
  vm_config_free(cfg);
  puts("ok");
  return 0;
}
