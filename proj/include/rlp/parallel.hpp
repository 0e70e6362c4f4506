#pragma once
#include <cstddef>
#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace rlp {

// Serial fallback is selected at runtime via RLP_SERIAL=1; results must be
// bitwise identical either way, so parallel loops only ever write to
// preallocated disjoint slots and reductions happen serially afterwards.
inline bool parallel_enabled() {
#ifdef _OPENMP
  const char* s = std::getenv("RLP_SERIAL");
  return !(s && s[0] == '1');
#else
  return false;
#endif
}

template <class F>
void parallel_for(std::size_t n, F&& body) {
#ifdef _OPENMP
  if (parallel_enabled()) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i)
      body(static_cast<std::size_t>(i));
    return;
  }
#endif
  for (std::size_t i = 0; i < n; ++i) body(i);
}

}  // namespace rlp
