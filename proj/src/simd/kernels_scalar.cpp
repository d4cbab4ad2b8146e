// Reference kernels. Plain loops, single accumulator: every vector variant
// is tested against these.

#include "variants.hpp"

namespace invmahal::simd::detail {

namespace {

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double squared_distance(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = a[i] - b[i];
    s += t * t;
  }
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void dot_panel(const double* a, std::size_t lda, std::size_t na, const double* b,
               std::size_t ldb, std::size_t nb, std::size_t n, double* out,
               std::size_t ldo) {
  for (std::size_t i = 0; i < na; ++i) {
    for (std::size_t j = 0; j < nb; ++j) {
      out[i * ldo + j] = dot(a + i * lda, b + j * ldb, n);
    }
  }
}

}  // namespace

const Kernels& scalar_kernels() noexcept {
  static const Kernels k{dot, squared_distance, axpy, dot_panel};
  return k;
}

}  // namespace invmahal::simd::detail
