#include "invmahal/equivalence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "invmahal/invariance.hpp"
#include "invmahal/metric.hpp"
#include "invmahal/oracle.hpp"

namespace invmahal {

namespace {

double rel_error(double got, double want) {
  return std::abs(got - want) / std::max(std::abs(want), 1e-300);
}

// PSD, rank and margin checks shared by the plain and invariant metrics.
void check_metric(const LocalMetric& m, const ExemplarProblem& problem, bool hard,
                  const EquivalenceLimits& limits, const char* tag, EquivalenceTrial& t) {
  const double trace = m.trace();
  const double min_eig = min_eigenvalue(materialize(m));
  const double ratio = trace > 0.0 ? min_eig / trace : min_eig;
  t.min_eigen_ratio = std::min(t.min_eigen_ratio, ratio);
  if (min_eig < -limits.psd_tolerance * trace) {
    t.psd_ok = false;
    t.failures.push_back(std::string(tag) + ": min eigenvalue " + format_exact(min_eig));
  }
  const std::size_t rank = metric_rank(m);
  t.rank = std::max(t.rank, rank);
  t.support = std::max(t.support, m.support_size());
  if (rank > m.support_size()) {
    t.rank_ok = false;
    t.failures.push_back(std::string(tag) + ": rank " + std::to_string(rank) + " > support " +
                         std::to_string(m.support_size()));
  }
  if (!hard) return;
  for (const auto& neg : problem.negatives()) {
    // Skip negatives the metric cannot see: equal to x0 or inside span(V).
    std::vector<double> diff(problem.dimension());
    for (std::size_t j = 0; j < diff.size(); ++j) diff[j] = neg[j] - problem.query()[j];
    double norm = 0.0, proj = 0.0;
    for (double v : diff) norm += v * v;
    if (norm == 0.0) continue;
    if (m.basis_v()) {
      for (double v : project_complement(*m.basis_v(), diff)) proj += v * v;
      if (std::sqrt(proj) <= kSpanTolerance * std::sqrt(norm)) continue;
    }
    const double dist = mahal_distance_sq(m, neg);
    t.worst_margin = std::min(t.worst_margin, dist);
    if (dist < problem.margin() - limits.margin_slack) {
      t.margin_ok = false;
      t.failures.push_back(std::string(tag) + ": negative at distance " + format_exact(dist));
    }
  }
}

}  // namespace

EquivalenceTrial run_equivalence_trial(std::uint64_t seed, const EquivalenceLimits& limits,
                                       const SolverConfig& cfg) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  EquivalenceTrial t;
  t.seed = seed;
  t.d = 1 + std::size_t(rng() % limits.max_dimension);
  t.n = 1 + std::size_t(rng() % limits.max_negatives);
  t.hard_margin = rng() % 3 != 0;
  const double c = std::exp(std::uniform_real_distribution<double>(std::log(0.1), std::log(10.0))(rng));
  t.min_eigen_ratio = 0.0;
  t.worst_margin = std::numeric_limits<double>::infinity();

  auto draw = [&] {
    std::vector<double> v(t.d);
    for (auto& x : v) x = gauss(rng);
    return v;
  };
  FeatureVector x0(draw());
  std::vector<FeatureVector> negatives;
  for (std::size_t i = 0; i < t.n; ++i) negatives.emplace_back(draw());
  const ExemplarProblem problem(x0, negatives, ExemplarProblem::kDefaultMargin,
                                t.hard_margin ? std::nullopt : std::optional<double>(c));

  try {
    const MetricBuild build = build_local_metric_detailed(problem, cfg);
    const DualSolution ref = oracle::oracle_solve(problem);
    t.objective_rel_error = rel_error(build.solution.objective_value, ref.objective_value);
    if (!ref.converged) {
      t.objective_ok = false;
      t.failures.push_back("oracle did not converge");
    }
    if (t.objective_rel_error > limits.objective_tolerance) {
      t.objective_ok = false;
      t.failures.push_back("objective " + format_exact(build.solution.objective_value) +
                           " vs oracle " + format_exact(ref.objective_value));
    }
    check_metric(build.metric, problem, t.hard_margin, limits, "plain", t);

    // Tangents leave at least one free direction.
    if (t.d >= 2) {
      t.tangent_count = 1 + std::size_t(rng() % (t.d - 1));
      std::vector<FeatureVector> transformed, raw;
      for (std::size_t j = 0; j < t.tangent_count; ++j) {
        auto r = draw();
        for (auto& v : r) v *= 0.1;
        raw.emplace_back(r);
        for (std::size_t k = 0; k < t.d; ++k) r[k] += x0[k];
        transformed.emplace_back(r);
      }
      const TangentSet ts = build_tangent_set(x0, transformed);
      const MetricBuild inv = build_invariant_metric_detailed(problem, ts, cfg);
      const auto ref_inv = oracle::invariant_oracle_solve(problem, ts.raw());
      t.invariant_objective_rel_error = rel_error(inv.solution.objective_value, ref_inv.objective);
      if (t.invariant_objective_rel_error > limits.objective_tolerance) {
        t.objective_ok = false;
        t.failures.push_back("invariant objective " + format_exact(inv.solution.objective_value) +
                             " vs oracle " + format_exact(ref_inv.objective));
      }
      const bool fell_back = std::any_of(inv.metric.config_echo().begin(), inv.metric.config_echo().end(),
                                         [](const auto& kv) { return kv.first == "fallback_soft_c"; });
      check_metric(inv.metric, problem, t.hard_margin && !fell_back, limits, "invariant", t);
      const double trace = inv.metric.trace();
      for (const auto& r : ts.raw()) {
        double rr = 0.0;
        for (double v : r.values()) rr += v * v;
        std::vector<double> y(t.d);
        for (std::size_t k = 0; k < t.d; ++k) y[k] = x0[k] + r[k];
        const double dist = mahal_distance_sq(inv.metric, y);
        const double ratio = trace * rr > 0.0 ? dist / (trace * rr) : 0.0;
        t.invariance_ratio = std::max(t.invariance_ratio, ratio);
        if (dist > limits.invariance_tolerance * trace * rr) {
          t.invariance_ok = false;
          t.failures.push_back("tangent distance " + format_exact(dist));
        }
      }
    }
  } catch (const std::exception& e) {
    t.objective_ok = t.psd_ok = t.rank_ok = t.invariance_ok = t.margin_ok = false;
    t.failures.push_back(std::string("exception: ") + e.what());
  }
  return t;
}

}  // namespace invmahal
