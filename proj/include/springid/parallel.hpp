#pragma once

#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace springid {

/// Point counts below this run the per-point kernels serially; a fork/join per
/// substep costs more than the work on small systems.
inline constexpr std::ptrdiff_t kParallelPointThreshold = 2048;

/// Edge counts below this evaluate the neural field serially.
inline constexpr std::ptrdiff_t kParallelEdgeThreshold = 256;

inline int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

}  // namespace springid
