#pragma once

// Transformation-invariant local metrics.
//
// Given transformations T_1..T_k that the metric should ignore near x0, the
// difference vectors are projected onto the orthogonal complement of
// V = span{T_j(x0) - x0} before solving. Every support direction then lies
// in V-perp, so M v = 0 for all v in V without any explicit constraint.

#include <span>

#include "invmahal/core.hpp"
#include "invmahal/metric.hpp"
#include "invmahal/solver.hpp"

namespace invmahal {

/// Residuals at or below this fraction of a vector's norm count as zero.
inline constexpr double kSpanTolerance = 1e-10;

/// raw_j = transformed[j] - x0, orthonormalized by modified Gram-Schmidt
/// with one re-orthogonalization pass. Throws DimensionMismatch.
TangentSet build_tangent_set(const FeatureVector& x0, std::span<const FeatureVector> transformed);

/// v minus its projection onto span(basis). Throws DimensionMismatch.
std::vector<double> project_complement(const TangentSet& tangents, std::span<const double> v);
FeatureVector project_complement(const TangentSet& tangents, const FeatureVector& v);

/// In-place projection of every row of `rows`; rows whose residual falls
/// below kSpanTolerance of their original norm are zeroed. Returns the
/// number of rows that survive.
std::size_t project_rows(const TangentSet& tangents, RowMatrix& rows);

/// Throws Infeasible when every projected negative vanishes. A hard-margin
/// solve the solver reports as infeasible is retried with soft margin
/// C = cfg.fallback_soft_c and a warning.
LocalMetric build_invariant_metric(const ExemplarProblem& problem, const TangentSet& tangents,
                                   const SolverConfig& cfg = {});
MetricBuild build_invariant_metric_detailed(const ExemplarProblem& problem,
                                            const TangentSet& tangents,
                                            const SolverConfig& cfg = {});

}  // namespace invmahal
