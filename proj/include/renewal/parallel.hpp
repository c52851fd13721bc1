#pragma once

#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace renewal {

// Execution policy for the hot kernels. Every parallel kernel has a serial
// twin that produces bit-identical results; tests compare the two and the
// bench target times them. Parallel loops only ever distribute independent
// units (features, covariate cells, policies), so results do not depend on
// the schedule or thread count.
enum class Exec { Serial, Parallel };

inline int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

inline void set_threads(int n) {
#ifdef _OPENMP
    if (n > 0) omp_set_num_threads(n);
#else
    (void)n;
#endif
}

template <typename Fn>
void parallel_for(std::ptrdiff_t n, Exec exec, Fn&& fn) {
    if (exec == Exec::Parallel) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
        for (std::ptrdiff_t i = 0; i < n; ++i) fn(i);
        return;
#endif
    }
    for (std::ptrdiff_t i = 0; i < n; ++i) fn(i);
}

// Dynamic schedule for uneven work items (tree fits, bootstrap resamples).
template <typename Fn>
void parallel_for_dynamic(std::ptrdiff_t n, Exec exec, Fn&& fn) {
    if (exec == Exec::Parallel) {
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 1)
        for (std::ptrdiff_t i = 0; i < n; ++i) fn(i);
        return;
#endif
    }
    for (std::ptrdiff_t i = 0; i < n; ++i) fn(i);
}

}  // namespace renewal
