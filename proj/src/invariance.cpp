#include "invmahal/invariance.hpp"

#include <cmath>

#include "invmahal/simd.hpp"

namespace invmahal {

namespace {

void subtract_projection(const RowMatrix& basis, std::span<double> v) {
  for (std::size_t b = 0; b < basis.rows(); ++b) {
    simd::axpy(-simd::dot(v, basis.row(b)), basis.row(b), v);
  }
}

}  // namespace

TangentSet build_tangent_set(const FeatureVector& x0, std::span<const FeatureVector> transformed) {
  const std::size_t d = x0.size();
  std::vector<FeatureVector> raw;
  raw.reserve(transformed.size());
  RowMatrix basis(0, d);
  std::vector<double> w(d);
  for (const auto& t : transformed) {
    if (t.size() != d) {
      throw Error(ErrorCode::DimensionMismatch, "transformed vector dimension differs from x0");
    }
    for (std::size_t j = 0; j < d; ++j) w[j] = t[j] - x0[j];
    raw.emplace_back(w);
    const double norm = std::sqrt(simd::dot(w, w));
    if (norm == 0.0) continue;
    // Two Gram-Schmidt passes keep the basis orthogonal to working precision.
    subtract_projection(basis, w);
    subtract_projection(basis, w);
    const double resid = std::sqrt(simd::dot(w, w));
    if (resid <= kSpanTolerance * norm) continue;
    for (double& x : w) x /= resid;
    basis.append_row(w);
  }
  return TangentSet(std::move(raw), std::move(basis));
}

std::vector<double> project_complement(const TangentSet& tangents, std::span<const double> v) {
  if (tangents.basis_size() > 0 && v.size() != tangents.dimension()) {
    throw Error(ErrorCode::DimensionMismatch, "vector dimension differs from tangent basis");
  }
  std::vector<double> out(v.begin(), v.end());
  subtract_projection(tangents.basis(), out);
  return out;
}

FeatureVector project_complement(const TangentSet& tangents, const FeatureVector& v) {
  return FeatureVector(project_complement(tangents, v.values()));
}

std::size_t project_rows(const TangentSet& tangents, RowMatrix& rows) {
  if (tangents.basis_size() > 0 && rows.cols() != tangents.dimension()) {
    throw Error(ErrorCode::DimensionMismatch, "rows differ from tangent basis dimension");
  }
  std::size_t alive = 0;
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    auto r = rows.row(i);
    const double before = std::sqrt(simd::dot(r, r));
    subtract_projection(tangents.basis(), r);
    const double after = std::sqrt(simd::dot(r, r));
    if (after <= kSpanTolerance * before) {
      std::fill(r.begin(), r.end(), 0.0);
    } else {
      ++alive;
    }
  }
  return alive;
}

MetricBuild build_invariant_metric_detailed(const ExemplarProblem& problem,
                                            const TangentSet& tangents,
                                            const SolverConfig& cfg) {
  auto warnings = validate_problem(problem);
  if (tangents.basis_size() > 0 && tangents.dimension() != problem.dimension()) {
    throw Error(ErrorCode::DimensionMismatch, "tangent basis dimension differs from problem");
  }
  RowMatrix z = problem.differences();
  if (project_rows(tangents, z) == 0) {
    throw Error(ErrorCode::Infeasible, "every negative lies in x0 + span(tangents)");
  }
  const auto kernel = make_kernel(z, KernelKind::Quadratic, cfg);
  const std::vector<double> linear(problem.size(), problem.margin());

  std::optional<double> upper = problem.soft_margin_c();
  DualSolution sol;
  try {
    sol = solve_box_dual(*kernel, linear, upper, cfg);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::Infeasible || upper) throw;
    upper = cfg.fallback_soft_c;
    warnings.push_back("projected negatives not separable; using soft margin C=" +
                       format_exact(*upper));
    sol = solve_box_dual(*kernel, linear, upper, cfg);
  }
  if (!sol.converged) {
    throw Error(ErrorCode::IterationLimit,
                "KKT violation " + format_exact(sol.kkt_violation) + " after " +
                    std::to_string(sol.iterations) + " sweeps");
  }
  ConfigEcho echo = solve_echo(problem, cfg, sol);
  if (upper != problem.soft_margin_c()) echo.emplace_back("fallback_soft_c", format_exact(*upper));
  echo.emplace_back("tangent_rank", std::to_string(tangents.basis_size()));
  auto metric = metric_from_solution(problem.query(), z, sol.alphas, cfg, tangents, std::move(echo));
  return {std::move(metric), std::move(sol), std::move(warnings)};
}

LocalMetric build_invariant_metric(const ExemplarProblem& problem, const TangentSet& tangents,
                                   const SolverConfig& cfg) {
  return build_invariant_metric_detailed(problem, tangents, cfg).metric;
}

}  // namespace invmahal
