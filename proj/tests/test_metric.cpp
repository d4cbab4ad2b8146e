#include <doctest.h>

#include <filesystem>
#include <random>

#include "invmahal/invariance.hpp"
#include "invmahal/metric.hpp"

using namespace invmahal;

namespace {

ExemplarProblem random_problem(std::uint64_t seed, std::size_t n, std::size_t d) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  auto draw = [&] {
    std::vector<double> v(d);
    for (auto& x : v) x = g(rng);
    return FeatureVector(v);
  };
  FeatureVector q = draw();
  std::vector<FeatureVector> negs;
  for (std::size_t i = 0; i < n; ++i) negs.push_back(draw());
  return ExemplarProblem(q, negs);
}

}  // namespace

TEST_CASE("analytic fixture materializes diag(2,2)") {
  ExemplarProblem p(FeatureVector{0.0, 0.0}, {FeatureVector{1.0, 0.0}, FeatureVector{0.0, 1.0}});
  const LocalMetric m = build_local_metric(p);
  const RowMatrix M = materialize(m);
  CHECK(M(0, 0) == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(M(1, 1) == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(std::abs(M(0, 1)) < 1e-6);
  CHECK(m.support_size() == 2);
  CHECK(metric_rank(m) == 2);
  CHECK(mahal_distance_sq(m, FeatureVector{1.0, 0.0}) == doctest::Approx(2.0));
  CHECK(mahal_distance_sq(m, FeatureVector{0.0, 0.0}) == 0.0);
}

TEST_CASE("single negative: M = 2 u u^T / |u|^4 scale") {
  ExemplarProblem p(FeatureVector{0.0, 0.0}, {FeatureVector{1.0, 0.0}});
  const RowMatrix M = materialize(build_local_metric(p));
  CHECK(M(0, 0) == doctest::Approx(2.0));
  CHECK(M(1, 1) == 0.0);
  // query (0.1, 0): d = 2 * 0.01
  CHECK(mahal_distance_sq(build_local_metric(p), FeatureVector{0.1, 0.0}) == doctest::Approx(0.02));
}

TEST_CASE("metric is PSD with rank bounded by support") {
  for (std::uint64_t seed = 1; seed <= 25; ++seed) {
    const LocalMetric m = build_local_metric(random_problem(seed, 3 + seed % 17, 2 + seed % 4));
    const RowMatrix M = materialize(m);
    CHECK(min_eigenvalue(M) >= -1e-8 * m.trace());
    CHECK(metric_rank(m) <= m.support_size());
    for (std::size_t i = 0; i < M.rows(); ++i) {
      for (std::size_t j = 0; j < M.cols(); ++j) CHECK(M(i, j) == M(j, i));
    }
  }
}

TEST_CASE("hard margin keeps negatives at distance >= margin") {
  for (std::uint64_t seed = 40; seed < 60; ++seed) {
    const auto p = random_problem(seed, 12, 3);
    const LocalMetric m = build_local_metric(p);
    for (const auto& neg : p.negatives()) CHECK(mahal_distance_sq(m, neg) >= 2.0 - 1e-5);
  }
}

TEST_CASE("distance from support form matches the dense matrix") {
  const auto p = random_problem(77, 10, 4);
  const LocalMetric m = build_local_metric(p);
  const RowMatrix M = materialize(m);
  const FeatureVector y{0.3, -1.2, 0.5, 2.0};
  std::vector<double> u(4);
  for (int i = 0; i < 4; ++i) u[i] = y[i] - p.query()[i];
  double dense = 0.0;
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) dense += u[i] * M(i, j) * u[j];
  }
  CHECK(mahal_distance_sq(m, y) == doctest::Approx(dense).epsilon(1e-10));
  CHECK_THROWS_AS(mahal_distance_sq(m, FeatureVector{1.0}), Error);
}

TEST_CASE("materialize refuses large dimensions") {
  const LocalMetric id = LocalMetric::identity(FeatureVector(std::vector<double>(20, 0.0)));
  CHECK_THROWS_AS(materialize(id, 10), Error);
  CHECK(materialize(id, 20)(3, 3) == 1.0);
}

TEST_CASE("support threshold drops negligible alphas") {
  // The far negative is not active: the near one alone forces the margin.
  ExemplarProblem p(FeatureVector{0.0}, {FeatureVector{1.0}, FeatureVector{5.0}});
  const auto build = build_local_metric_detailed(p);
  CHECK(build.metric.support_size() == 1);
  CHECK(build.metric.alphas()[0] == doctest::Approx(2.0));
}

TEST_CASE("metric serialization round-trip is bit-exact") {
  const auto p = random_problem(5, 8, 3);
  const LocalMetric m = build_local_metric(p);
  const std::string bytes = serialize_metric(m);
  const LocalMetric back = deserialize_metric(bytes);
  CHECK(serialize_metric(back) == bytes);
  CHECK(back.anchor() == m.anchor());
  CHECK(back.directions() == m.directions());
  CHECK(std::vector<double>(back.alphas().begin(), back.alphas().end()) ==
        std::vector<double>(m.alphas().begin(), m.alphas().end()));
  CHECK(back.config_echo() == m.config_echo());

  SUBCASE("invariant metric keeps its basis") {
    const TangentSet ts = build_tangent_set(p.query(), std::vector<FeatureVector>{FeatureVector{
                                                           p.query()[0] + 1.0, p.query()[1], p.query()[2]}});
    const LocalMetric inv = build_invariant_metric(p, ts);
    const LocalMetric inv_back = deserialize_metric(serialize_metric(inv));
    REQUIRE(inv_back.invariant());
    CHECK(inv_back.basis_v()->basis() == ts.basis());
    CHECK(serialize_metric(inv_back) == serialize_metric(inv));
  }
  SUBCASE("file round-trip") {
    const auto path = std::filesystem::temp_directory_path() / "invmahal_metric_test.bin";
    save_metric(m, path);
    CHECK(serialize_metric(load_metric(path)) == bytes);
    std::filesystem::remove(path);
  }
}

TEST_CASE("corrupt metric files are rejected with specific errors") {
  const std::string bytes = serialize_metric(build_local_metric(random_problem(6, 4, 2)));
  auto code_of = [](const std::string& b) {
    try {
      deserialize_metric(b);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::Io;
  };
  CHECK(code_of("NOT-A-METRIC\n") == ErrorCode::BadMagic);
  CHECK(code_of(bytes.substr(0, bytes.size() - 3)) == ErrorCode::TruncatedFile);
  CHECK(code_of(bytes + "x") == ErrorCode::ParseError);
}

TEST_CASE("echo records the solve settings") {
  SolverConfig cfg;
  cfg.shuffle_seed = 42;
  const LocalMetric m = build_local_metric(random_problem(9, 5, 2), cfg);
  bool seen = false;
  for (const auto& [k, v] : m.config_echo()) {
    if (v == "42") seen = true;
  }
  CHECK(seen);
}
