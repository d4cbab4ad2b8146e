// AVX2 + FMA kernels. Compiled with -mavx2 -mfma; only reached after a
// runtime CPU check.

#include <immintrin.h>

#include "variants.hpp"

namespace invmahal::simd::detail {

namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot(const double* a, const double* b, std::size_t n) {
  __m256d s0 = _mm256_setzero_pd();
  __m256d s1 = _mm256_setzero_pd();
  __m256d s2 = _mm256_setzero_pd();
  __m256d s3 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
    s1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), s1);
    s2 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 8), _mm256_loadu_pd(b + i + 8), s2);
    s3 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 12), _mm256_loadu_pd(b + i + 12), s3);
  }
  for (; i + 4 <= n; i += 4) {
    s0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), s0);
  }
  double s = hsum(_mm256_add_pd(_mm256_add_pd(s0, s1), _mm256_add_pd(s2, s3)));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

double squared_distance(const double* a, const double* b, std::size_t n) {
  __m256d s0 = _mm256_setzero_pd();
  __m256d s1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256d t0 = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    const __m256d t1 = _mm256_sub_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4));
    s0 = _mm256_fmadd_pd(t0, t0, s0);
    s1 = _mm256_fmadd_pd(t1, t1, s1);
  }
  for (; i + 4 <= n; i += 4) {
    const __m256d t = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    s0 = _mm256_fmadd_pd(t, t, s0);
  }
  double s = hsum(_mm256_add_pd(s0, s1));
  for (; i < n; ++i) {
    const double t = a[i] - b[i];
    s += t * t;
  }
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
    _mm256_storeu_pd(y + i + 4,
                     _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i + 4), _mm256_loadu_pd(y + i + 4)));
  }
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// 3 rows of a against 4 rows of b: 12 accumulators + 3 a-loads + 1 b-load
// fills the 16 ymm registers.
void micro_3x4(const double* a, std::size_t lda, const double* b, std::size_t ldb,
               std::size_t n, double* out, std::size_t ldo) {
  const double* a0 = a;
  const double* a1 = a + lda;
  const double* a2 = a + 2 * lda;
  const double* b0 = b;
  const double* b1 = b + ldb;
  const double* b2 = b + 2 * ldb;
  const double* b3 = b + 3 * ldb;
  __m256d c00 = _mm256_setzero_pd(), c01 = _mm256_setzero_pd(), c02 = _mm256_setzero_pd(),
          c03 = _mm256_setzero_pd();
  __m256d c10 = _mm256_setzero_pd(), c11 = _mm256_setzero_pd(), c12 = _mm256_setzero_pd(),
          c13 = _mm256_setzero_pd();
  __m256d c20 = _mm256_setzero_pd(), c21 = _mm256_setzero_pd(), c22 = _mm256_setzero_pd(),
          c23 = _mm256_setzero_pd();
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    const __m256d x0 = _mm256_loadu_pd(a0 + k);
    const __m256d x1 = _mm256_loadu_pd(a1 + k);
    const __m256d x2 = _mm256_loadu_pd(a2 + k);
    __m256d y = _mm256_loadu_pd(b0 + k);
    c00 = _mm256_fmadd_pd(x0, y, c00);
    c10 = _mm256_fmadd_pd(x1, y, c10);
    c20 = _mm256_fmadd_pd(x2, y, c20);
    y = _mm256_loadu_pd(b1 + k);
    c01 = _mm256_fmadd_pd(x0, y, c01);
    c11 = _mm256_fmadd_pd(x1, y, c11);
    c21 = _mm256_fmadd_pd(x2, y, c21);
    y = _mm256_loadu_pd(b2 + k);
    c02 = _mm256_fmadd_pd(x0, y, c02);
    c12 = _mm256_fmadd_pd(x1, y, c12);
    c22 = _mm256_fmadd_pd(x2, y, c22);
    y = _mm256_loadu_pd(b3 + k);
    c03 = _mm256_fmadd_pd(x0, y, c03);
    c13 = _mm256_fmadd_pd(x1, y, c13);
    c23 = _mm256_fmadd_pd(x2, y, c23);
  }
  double r[3][4] = {{hsum(c00), hsum(c01), hsum(c02), hsum(c03)},
                    {hsum(c10), hsum(c11), hsum(c12), hsum(c13)},
                    {hsum(c20), hsum(c21), hsum(c22), hsum(c23)}};
  const double* as[3] = {a0, a1, a2};
  const double* bs[4] = {b0, b1, b2, b3};
  for (; k < n; ++k) {
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 4; ++j) r[i][j] += as[i][k] * bs[j][k];
    }
  }
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 4; ++j) out[i * ldo + j] = r[i][j];
  }
}

void dot_panel(const double* a, std::size_t lda, std::size_t na, const double* b,
               std::size_t ldb, std::size_t nb, std::size_t n, double* out,
               std::size_t ldo) {
  const std::size_t na3 = na - na % 3;
  const std::size_t nb4 = nb - nb % 4;
  for (std::size_t i = 0; i < na3; i += 3) {
    for (std::size_t j = 0; j < nb4; j += 4) {
      micro_3x4(a + i * lda, lda, b + j * ldb, ldb, n, out + i * ldo + j, ldo);
    }
    for (std::size_t j = nb4; j < nb; ++j) {
      for (std::size_t ii = i; ii < i + 3; ++ii) {
        out[ii * ldo + j] = dot(a + ii * lda, b + j * ldb, n);
      }
    }
  }
  for (std::size_t i = na3; i < na; ++i) {
    for (std::size_t j = 0; j < nb; ++j) out[i * ldo + j] = dot(a + i * lda, b + j * ldb, n);
  }
}

}  // namespace

const Kernels& avx2_kernels() noexcept {
  static const Kernels k{dot, squared_distance, axpy, dot_panel};
  return k;
}

}  // namespace invmahal::simd::detail
