#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "invmahal/core.hpp"
#include "invmahal/solver.hpp"

namespace invmahal {

/// Metric plus the solve that produced it.
struct MetricBuild {
  LocalMetric metric;
  DualSolution solution;
  std::vector<std::string> warnings;
};

/// Learns the max-margin local metric at problem.query(). Throws
/// IterationLimit if the solver does not reach cfg.tolerance, and
/// propagates other solver errors.
LocalMetric build_local_metric(const ExemplarProblem& problem, const SolverConfig& cfg = {});
MetricBuild build_local_metric_detailed(const ExemplarProblem& problem,
                                        const SolverConfig& cfg = {});

/// Keeps rows of `directions` whose alpha exceeds cfg.support_threshold *
/// max(alpha). Exposed for callers that assemble the dual themselves.
LocalMetric metric_from_solution(FeatureVector anchor, const RowMatrix& directions,
                                 std::span<const double> alphas, const SolverConfig& cfg,
                                 std::optional<TangentSet> basis_v, ConfigEcho echo);

ConfigEcho solve_echo(const ExemplarProblem& problem, const SolverConfig& cfg,
                      const DualSolution& solution);

/// (y - x0)^T M (y - x0) from the support form; y - x0 is projected onto
/// the complement of V first when the metric carries a basis.
double mahal_distance_sq(const LocalMetric& metric, std::span<const double> y);
double mahal_distance_sq(const LocalMetric& metric, const FeatureVector& y);

/// Dense M. Throws DimensionLimit when d > limit.
RowMatrix materialize(const LocalMetric& metric, std::size_t limit = 4096);

/// Numerical rank at 1e-8 * largest singular value.
std::size_t metric_rank(const LocalMetric& metric, std::size_t limit = 4096);

/// Smallest eigenvalue of the dense matrix (test and acceptance helper).
double min_eigenvalue(const RowMatrix& symmetric);

// Metric record file:
//   text header  "INVMAHAL-METRIC 1\n", then "key value\n" lines
//   (dimension, support, basis, raw_tangents, echo.* entries), then "end\n";
//   binary body  little-endian float64 arrays: anchor[d], alphas[s],
//   directions[s*d], basis[m*d], raw_tangents[k*d].
std::string serialize_metric(const LocalMetric& metric);
LocalMetric deserialize_metric(const std::string& bytes);
void save_metric(const LocalMetric& metric, const std::filesystem::path& path);
LocalMetric load_metric(const std::filesystem::path& path);

}  // namespace invmahal
