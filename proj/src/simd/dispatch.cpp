#include <algorithm>
#include <atomic>
#include <cstdlib>

#include "invmahal/core.hpp"
#include "invmahal/simd.hpp"
#include "variants.hpp"

namespace invmahal::simd {

namespace {

Level initial_level() noexcept {
  Level level = best_supported();
  if (const char* env = std::getenv("INVMAHAL_SIMD")) {
    if (auto requested = parse_level(env); requested && *requested < level) {
      level = *requested;
    }
  }
  return level;
}

std::atomic<Level>& level_slot() noexcept {
  static std::atomic<Level> slot{initial_level()};
  return slot;
}

// Column panel of b kept hot in L2 while row blocks of a stream past it.
constexpr std::size_t kPanelCols = 64;
constexpr std::size_t kPanelRows = 96;

void check_same(std::size_t a, std::size_t b) {
  if (a != b) throw Error(ErrorCode::DimensionMismatch, "vector lengths differ");
}

}  // namespace

std::string_view name(Level level) noexcept {
  switch (level) {
    case Level::Scalar: return "scalar";
    case Level::Avx2: return "avx2";
    case Level::Avx512: return "avx512";
  }
  return "scalar";
}

std::optional<Level> parse_level(std::string_view text) noexcept {
  if (text == "scalar") return Level::Scalar;
  if (text == "avx2") return Level::Avx2;
  if (text == "avx512") return Level::Avx512;
  return std::nullopt;
}

bool supported(Level level) noexcept {
  switch (level) {
    case Level::Scalar: return true;
#if defined(INVMAHAL_HAVE_X86_VARIANTS)
    case Level::Avx2:
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    case Level::Avx512:
      return __builtin_cpu_supports("avx512f");
#else
    default: return false;
#endif
  }
  return false;
}

Level best_supported() noexcept {
  if (supported(Level::Avx512)) return Level::Avx512;
  if (supported(Level::Avx2)) return Level::Avx2;
  return Level::Scalar;
}

const Kernels& kernels_for(Level level) {
  if (!supported(level)) {
    throw Error(ErrorCode::InvalidArgument,
                "SIMD level " + std::string(name(level)) + " not supported on this CPU");
  }
  switch (level) {
#if defined(INVMAHAL_HAVE_X86_VARIANTS)
    case Level::Avx2: return detail::avx2_kernels();
    case Level::Avx512: return detail::avx512_kernels();
#endif
    default: return detail::scalar_kernels();
  }
}

Level active_level() noexcept { return level_slot().load(std::memory_order_relaxed); }

void set_active_level(Level level) {
  kernels_for(level);  // validates
  level_slot().store(level, std::memory_order_relaxed);
}

const Kernels& active() noexcept {
  // Level in the slot is always supported: set_active_level validates it.
  switch (active_level()) {
#if defined(INVMAHAL_HAVE_X86_VARIANTS)
    case Level::Avx2: return detail::avx2_kernels();
    case Level::Avx512: return detail::avx512_kernels();
#endif
    default: return detail::scalar_kernels();
  }
}

double dot(std::span<const double> a, std::span<const double> b) {
  check_same(a.size(), b.size());
  return active().dot(a.data(), b.data(), a.size());
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  check_same(a.size(), b.size());
  return active().squared_distance(a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  check_same(x.size(), y.size());
  active().axpy(alpha, x.data(), y.data(), x.size());
}

void gram(const RowMatrix& rows, RowMatrix& out) {
  const std::size_t n = rows.rows();
  const std::size_t d = rows.cols();
  out = RowMatrix(n, n);
  const Kernels& k = active();
  for (std::size_t j0 = 0; j0 < n; j0 += kPanelCols) {
    const std::size_t nb = std::min(kPanelCols, n - j0);
    // Upper block triangle only; blocks straddling the diagonal are computed whole.
    for (std::size_t i0 = 0; i0 < j0 + nb; i0 += kPanelRows) {
      const std::size_t na = std::min({kPanelRows, n - i0, j0 + nb - i0});
      k.dot_panel(rows.data() + i0 * d, d, na, rows.data() + j0 * d, d, nb, d,
                  out.data() + i0 * n + j0, n);
    }
  }
  // The strict upper triangle is always covered; copy it down so the result
  // is exactly symmetric.
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t j = 0; j < i; ++j) out(i, j) = out(j, i);
  }
}

void cross_gram(const RowMatrix& a, const RowMatrix& b, RowMatrix& out) {
  if (!a.empty() && !b.empty()) check_same(a.cols(), b.cols());
  const std::size_t d = a.cols();
  out = RowMatrix(a.rows(), b.rows());
  const Kernels& k = active();
  for (std::size_t j0 = 0; j0 < b.rows(); j0 += kPanelCols) {
    const std::size_t nb = std::min(kPanelCols, b.rows() - j0);
    for (std::size_t i0 = 0; i0 < a.rows(); i0 += kPanelRows) {
      const std::size_t na = std::min(kPanelRows, a.rows() - i0);
      k.dot_panel(a.data() + i0 * d, d, na, b.data() + j0 * d, d, nb, d,
                  out.data() + i0 * b.rows() + j0, b.rows());
    }
  }
}

}  // namespace invmahal::simd
