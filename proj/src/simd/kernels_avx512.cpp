// AVX-512F kernels. Compiled with -mavx512f; tails use masked loads, so
// there is no scalar remainder loop.

#include <immintrin.h>

#include "variants.hpp"

namespace invmahal::simd::detail {

namespace {

inline __mmask8 tail_mask(std::size_t rem) { return static_cast<__mmask8>((1u << rem) - 1u); }

double dot(const double* a, const double* b, std::size_t n) {
  __m512d s0 = _mm512_setzero_pd();
  __m512d s1 = _mm512_setzero_pd();
  __m512d s2 = _mm512_setzero_pd();
  __m512d s3 = _mm512_setzero_pd();
  std::size_t i = 0;
  for (; i + 32 <= n; i += 32) {
    s0 = _mm512_fmadd_pd(_mm512_loadu_pd(a + i), _mm512_loadu_pd(b + i), s0);
    s1 = _mm512_fmadd_pd(_mm512_loadu_pd(a + i + 8), _mm512_loadu_pd(b + i + 8), s1);
    s2 = _mm512_fmadd_pd(_mm512_loadu_pd(a + i + 16), _mm512_loadu_pd(b + i + 16), s2);
    s3 = _mm512_fmadd_pd(_mm512_loadu_pd(a + i + 24), _mm512_loadu_pd(b + i + 24), s3);
  }
  for (; i + 8 <= n; i += 8) {
    s0 = _mm512_fmadd_pd(_mm512_loadu_pd(a + i), _mm512_loadu_pd(b + i), s0);
  }
  if (i < n) {
    const __mmask8 m = tail_mask(n - i);
    s1 = _mm512_fmadd_pd(_mm512_maskz_loadu_pd(m, a + i), _mm512_maskz_loadu_pd(m, b + i), s1);
  }
  return _mm512_reduce_add_pd(_mm512_add_pd(_mm512_add_pd(s0, s1), _mm512_add_pd(s2, s3)));
}

double squared_distance(const double* a, const double* b, std::size_t n) {
  __m512d s0 = _mm512_setzero_pd();
  __m512d s1 = _mm512_setzero_pd();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    const __m512d t0 = _mm512_sub_pd(_mm512_loadu_pd(a + i), _mm512_loadu_pd(b + i));
    const __m512d t1 = _mm512_sub_pd(_mm512_loadu_pd(a + i + 8), _mm512_loadu_pd(b + i + 8));
    s0 = _mm512_fmadd_pd(t0, t0, s0);
    s1 = _mm512_fmadd_pd(t1, t1, s1);
  }
  for (; i + 8 <= n; i += 8) {
    const __m512d t = _mm512_sub_pd(_mm512_loadu_pd(a + i), _mm512_loadu_pd(b + i));
    s0 = _mm512_fmadd_pd(t, t, s0);
  }
  if (i < n) {
    const __mmask8 m = tail_mask(n - i);
    const __m512d t = _mm512_sub_pd(_mm512_maskz_loadu_pd(m, a + i), _mm512_maskz_loadu_pd(m, b + i));
    s1 = _mm512_fmadd_pd(t, t, s1);
  }
  return _mm512_reduce_add_pd(_mm512_add_pd(s0, s1));
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m512d va = _mm512_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm512_storeu_pd(y + i, _mm512_fmadd_pd(va, _mm512_loadu_pd(x + i), _mm512_loadu_pd(y + i)));
  }
  if (i < n) {
    const __mmask8 m = tail_mask(n - i);
    const __m512d r =
        _mm512_fmadd_pd(va, _mm512_maskz_loadu_pd(m, x + i), _mm512_maskz_loadu_pd(m, y + i));
    _mm512_mask_storeu_pd(y + i, m, r);
  }
}

// 4x4 tile: 16 accumulators + 4 a-loads + 1 b-load of the 32 zmm registers.
void micro_4x4(const double* a, std::size_t lda, const double* b, std::size_t ldb,
               std::size_t n, double* out, std::size_t ldo) {
  __m512d c[4][4];
  for (auto& row : c)
    for (auto& v : row) v = _mm512_setzero_pd();
  std::size_t k = 0;
  for (; k + 8 <= n; k += 8) {
    __m512d x[4];
    for (int i = 0; i < 4; ++i) x[i] = _mm512_loadu_pd(a + i * lda + k);
    for (int j = 0; j < 4; ++j) {
      const __m512d y = _mm512_loadu_pd(b + j * ldb + k);
      for (int i = 0; i < 4; ++i) c[i][j] = _mm512_fmadd_pd(x[i], y, c[i][j]);
    }
  }
  if (k < n) {
    const __mmask8 m = tail_mask(n - k);
    __m512d x[4];
    for (int i = 0; i < 4; ++i) x[i] = _mm512_maskz_loadu_pd(m, a + i * lda + k);
    for (int j = 0; j < 4; ++j) {
      const __m512d y = _mm512_maskz_loadu_pd(m, b + j * ldb + k);
      for (int i = 0; i < 4; ++i) c[i][j] = _mm512_fmadd_pd(x[i], y, c[i][j]);
    }
  }
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) out[i * ldo + j] = _mm512_reduce_add_pd(c[i][j]);
  }
}

void dot_panel(const double* a, std::size_t lda, std::size_t na, const double* b,
               std::size_t ldb, std::size_t nb, std::size_t n, double* out,
               std::size_t ldo) {
  const std::size_t na4 = na - na % 4;
  const std::size_t nb4 = nb - nb % 4;
  for (std::size_t i = 0; i < na4; i += 4) {
    for (std::size_t j = 0; j < nb4; j += 4) {
      micro_4x4(a + i * lda, lda, b + j * ldb, ldb, n, out + i * ldo + j, ldo);
    }
    for (std::size_t j = nb4; j < nb; ++j) {
      for (std::size_t ii = i; ii < i + 4; ++ii) {
        out[ii * ldo + j] = dot(a + ii * lda, b + j * ldb, n);
      }
    }
  }
  for (std::size_t i = na4; i < na; ++i) {
    for (std::size_t j = 0; j < nb; ++j) out[i * ldo + j] = dot(a + i * lda, b + j * ldb, n);
  }
}

}  // namespace

const Kernels& avx512_kernels() noexcept {
  static const Kernels k{dot, squared_distance, axpy, dot_panel};
  return k;
}

}  // namespace invmahal::simd::detail
