#pragma once

#include <cstddef>

#include "doatrack/common.hpp"

namespace doatrack {

/// Runs body(i) for i in [0, n). With Backend::openmp the iterations are
/// spread over an OpenMP team; every iteration must write disjoint output so
/// that both backends give identical results.
template <class Body>
void parallel_for(Backend backend, long n, Body&& body) {
  if (backend == Backend::openmp) {
#pragma omp parallel for schedule(static)
    for (long i = 0; i < n; ++i) body(i);
  } else {
    for (long i = 0; i < n; ++i) body(i);
  }
}

}  // namespace doatrack
