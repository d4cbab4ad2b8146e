#include <doctest.h>

#include <random>

#include "invmahal/core.hpp"
#include "invmahal/simd.hpp"

using namespace invmahal;
using simd::Level;

namespace {

std::vector<double> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

RowMatrix random_rows(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  return RowMatrix(r, c, random_vec(r * c, rng));
}

std::vector<Level> variants() {
  std::vector<Level> out;
  for (Level l : {Level::Avx2, Level::Avx512}) {
    if (simd::supported(l)) out.push_back(l);
  }
  return out;
}

// Restores the process-wide level after a test switches it.
struct LevelGuard {
  Level saved = simd::active_level();
  ~LevelGuard() { simd::set_active_level(saved); }
};

}  // namespace

TEST_CASE("level names parse back") {
  for (Level l : {Level::Scalar, Level::Avx2, Level::Avx512}) {
    CHECK(simd::parse_level(simd::name(l)) == l);
  }
  CHECK_FALSE(simd::parse_level("neon").has_value());
  CHECK(simd::supported(Level::Scalar));
}

TEST_CASE("scalar reference kernels on fixed inputs") {
  const auto& k = simd::kernels_for(Level::Scalar);
  const double a[] = {1, 2, 3};
  const double b[] = {4, -5, 6};
  CHECK(k.dot(a, b, 3) == 12.0);
  CHECK(k.squared_distance(a, b, 3) == 9.0 + 49.0 + 9.0);
  double y[] = {1, 1, 1};
  k.axpy(2.0, a, y, 3);
  CHECK(y[2] == 7.0);
}

TEST_CASE("variants match scalar on every length up to 67") {
  std::mt19937_64 rng(5);
  const auto& ref = simd::kernels_for(Level::Scalar);
  for (Level l : variants()) {
    const auto& k = simd::kernels_for(l);
    for (std::size_t n = 0; n <= 67; ++n) {
      const auto a = random_vec(n, rng);
      const auto b = random_vec(n, rng);
      CHECK(k.dot(a.data(), b.data(), n) == doctest::Approx(ref.dot(a.data(), b.data(), n)).epsilon(1e-13));
      CHECK(k.squared_distance(a.data(), b.data(), n) ==
            doctest::Approx(ref.squared_distance(a.data(), b.data(), n)).epsilon(1e-13));
      auto y1 = b, y2 = b;
      ref.axpy(0.37, a.data(), y1.data(), n);
      k.axpy(0.37, a.data(), y2.data(), n);
      for (std::size_t i = 0; i < n; ++i) CHECK(y2[i] == doctest::Approx(y1[i]).epsilon(1e-15));
    }
  }
}

TEST_CASE("dot_panel variants match scalar across ragged shapes") {
  std::mt19937_64 rng(9);
  const auto& ref = simd::kernels_for(Level::Scalar);
  for (Level l : variants()) {
    const auto& k = simd::kernels_for(l);
    for (std::size_t na : {1u, 2u, 3u, 4u, 5u, 7u, 13u}) {
      for (std::size_t nb : {1u, 3u, 4u, 6u, 9u}) {
        for (std::size_t n : {1u, 7u, 8u, 17u, 33u}) {
          const auto a = random_rows(na, n + 2, rng);
          const auto b = random_rows(nb, n + 1, rng);
          std::vector<double> o1(na * (nb + 3), -7.0), o2 = o1;
          ref.dot_panel(a.data(), n + 2, na, b.data(), n + 1, nb, n, o1.data(), nb + 3);
          k.dot_panel(a.data(), n + 2, na, b.data(), n + 1, nb, n, o2.data(), nb + 3);
          for (std::size_t i = 0; i < o1.size(); ++i) {
            CHECK(o2[i] == doctest::Approx(o1[i]).epsilon(1e-13));
          }
        }
      }
    }
  }
}

TEST_CASE("gram is symmetric and matches pairwise dots at every level") {
  LevelGuard guard;
  std::mt19937_64 rng(11);
  const RowMatrix rows = random_rows(150, 45, rng);
  for (Level l : {Level::Scalar, Level::Avx2, Level::Avx512}) {
    if (!simd::supported(l)) continue;
    simd::set_active_level(l);
    RowMatrix g;
    simd::gram(rows, g);
    REQUIRE(g.rows() == 150);
    for (std::size_t i = 0; i < 150; i += 7) {
      for (std::size_t j = 0; j < 150; j += 5) {
        CHECK(g(i, j) == g(j, i));
        CHECK(g(i, j) == doctest::Approx(simd::kernels_for(Level::Scalar)
                                             .dot(rows.row(i).data(), rows.row(j).data(), 45))
                             .epsilon(1e-13));
      }
    }
    RowMatrix c;
    const RowMatrix other = random_rows(70, 45, rng);
    simd::cross_gram(rows, other, c);
    CHECK(c.rows() == 150);
    CHECK(c.cols() == 70);
    CHECK(c(149, 69) == doctest::Approx(simd::dot(rows.row(149), other.row(69))).epsilon(1e-13));
  }
}

TEST_CASE("wrappers check sizes") {
  std::vector<double> a(3), b(4);
  CHECK_THROWS_AS(simd::dot(a, b), Error);
  CHECK_THROWS_AS(simd::axpy(1.0, a, b), Error);
}
