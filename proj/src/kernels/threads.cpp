#include <cstdlib>
#include <string>

#include "csfnet/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace csfnet {

void set_num_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(n < 1 ? 1 : n);
#else
  (void)n;
#endif
}

int num_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

int configure_threads_from_env() {
  int n = 1;
  if (const char* env = std::getenv("CSFNET_THREADS")) {
    try {
      n = std::stoi(env);
    } catch (const std::exception&) {
      n = 1;
    }
  }
  set_num_threads(n);
  return num_threads();
}

}  // namespace csfnet
