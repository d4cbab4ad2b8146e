#pragma once

// Data-parallel inner loops with one scalar reference implementation and
// ISA-specific variants selected at runtime.
//
// The active level defaults to the best level the CPU supports. The
// INVMAHAL_SIMD environment variable (scalar|avx2|avx512) caps it, and
// set_active_level() overrides it in-process (tests use this to compare
// variants against the reference).

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>

namespace invmahal {
class RowMatrix;
}

namespace invmahal::simd {

enum class Level { Scalar = 0, Avx2 = 1, Avx512 = 2 };

struct Kernels {
  double (*dot)(const double* a, const double* b, std::size_t n);
  double (*squared_distance)(const double* a, const double* b, std::size_t n);
  /// y += alpha * x
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  /// out[i*ldo + j] = dot(a + i*lda, b + j*ldb, n) for i < na, j < nb.
  void (*dot_panel)(const double* a, std::size_t lda, std::size_t na, const double* b,
                    std::size_t ldb, std::size_t nb, std::size_t n, double* out,
                    std::size_t ldo);
};

std::string_view name(Level level) noexcept;
std::optional<Level> parse_level(std::string_view text) noexcept;

bool supported(Level level) noexcept;
Level best_supported() noexcept;

/// Throws InvalidArgument when `level` is not supported on this CPU.
const Kernels& kernels_for(Level level);

Level active_level() noexcept;
void set_active_level(Level level);
const Kernels& active() noexcept;

// Convenience wrappers over the active kernels. Sizes must agree.
double dot(std::span<const double> a, std::span<const double> b);
double squared_distance(std::span<const double> a, std::span<const double> b);
void axpy(double alpha, std::span<const double> x, std::span<double> y);

/// out = rows * rows^T (symmetric, full matrix written).
void gram(const RowMatrix& rows, RowMatrix& out);
/// out = a * b^T.
void cross_gram(const RowMatrix& a, const RowMatrix& b, RowMatrix& out);

}  // namespace invmahal::simd
