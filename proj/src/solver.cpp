#include "invmahal/solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "invmahal/simd.hpp"

namespace invmahal {

namespace {

double apply_kind(double dot, KernelKind kind) {
  return kind == KernelKind::Quadratic ? dot * dot : dot;
}

double violation_at(double alpha, double grad, double upper) {
  if (alpha <= 0.0) return std::max(grad, 0.0);
  if (alpha >= upper) return std::max(-grad, 0.0);
  return std::abs(grad);
}

// f = Q alpha over the rows with nonzero alpha.
void recompute_margins(const KernelRows& q, std::span<const double> alphas,
                       std::vector<double>& f, std::vector<double>& scratch) {
  std::fill(f.begin(), f.end(), 0.0);
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (alphas[i] != 0.0) simd::axpy(alphas[i], q.row(i, scratch), f);
  }
}

}  // namespace

void SolverConfig::validate() const {
  if (!(tolerance > 0.0)) throw Error(ErrorCode::InvalidArgument, "tolerance must be > 0");
  if (!(support_threshold >= 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "support threshold must be >= 0");
  }
}

double quadratic_kernel(std::span<const double> a, std::span<const double> b) {
  const double ip = simd::dot(a, b);
  return ip * ip;
}

double quadratic_kernel(const FeatureVector& a, const FeatureVector& b) {
  return quadratic_kernel(a.values(), b.values());
}

DenseKernel::DenseKernel(RowMatrix dots, KernelKind kind, std::span<const double> labels)
    : q_(std::move(dots)) {
  if (q_.rows() != q_.cols()) throw Error(ErrorCode::DimensionMismatch, "kernel must be square");
  if (!labels.empty() && labels.size() != q_.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "one label per kernel row");
  }
  const std::size_t n = q_.rows();
  for (std::size_t i = 0; i < n; ++i) {
    auto r = q_.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      double v = apply_kind(r[j], kind);
      if (!labels.empty()) v *= labels[i] * labels[j];
      r[j] = v;
    }
  }
}

OnDemandKernel::OnDemandKernel(RowMatrix vectors, KernelKind kind, std::vector<double> labels)
    : z_(std::move(vectors)), kind_(kind), labels_(std::move(labels)) {
  if (!labels_.empty() && labels_.size() != z_.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "one label per kernel row");
  }
  diag_.resize(z_.rows());
  for (std::size_t i = 0; i < z_.rows(); ++i) {
    diag_[i] = apply_kind(simd::dot(z_.row(i), z_.row(i)), kind_);
  }
}

double OnDemandKernel::transform(double dot, std::size_t i, std::size_t j) const {
  double v = apply_kind(dot, kind_);
  return labels_.empty() ? v : v * labels_[i] * labels_[j];
}

std::span<const double> OnDemandKernel::row(std::size_t i, std::vector<double>& scratch) const {
  const std::size_t n = z_.rows();
  const std::size_t d = z_.cols();
  scratch.resize(n);
  simd::active().dot_panel(z_.data() + i * d, d, 1, z_.data(), d, n, d, scratch.data(), n);
  for (std::size_t j = 0; j < n; ++j) scratch[j] = transform(scratch[j], i, j);
  return {scratch.data(), n};
}

std::unique_ptr<KernelRows> make_kernel(const RowMatrix& vectors, KernelKind kind,
                                        const SolverConfig& cfg,
                                        std::span<const double> labels) {
  if (vectors.rows() <= cfg.kernel_cache_limit) {
    RowMatrix dots;
    simd::gram(vectors, dots);
    return std::make_unique<DenseKernel>(std::move(dots), kind, labels);
  }
  return std::make_unique<OnDemandKernel>(vectors, kind,
                                          std::vector<double>(labels.begin(), labels.end()));
}

double box_dual_objective(const KernelRows& q, std::span<const double> linear,
                          std::span<const double> alphas) {
  if (alphas.size() != q.size() || linear.size() != q.size()) {
    throw Error(ErrorCode::DimensionMismatch, "alpha/linear length must match kernel");
  }
  std::vector<double> f(q.size()), scratch;
  recompute_margins(q, alphas, f, scratch);
  double g = 0.0;
  for (std::size_t i = 0; i < alphas.size(); ++i) g += alphas[i] * (linear[i] - 0.5 * f[i]);
  return g;
}

double kkt_violation(const KernelRows& q, std::span<const double> linear,
                     std::optional<double> upper, std::span<const double> alphas) {
  if (alphas.size() != q.size() || linear.size() != q.size()) {
    throw Error(ErrorCode::DimensionMismatch, "alpha/linear length must match kernel");
  }
  const double c = upper.value_or(kHardMarginC);
  std::vector<double> f(q.size()), scratch;
  recompute_margins(q, alphas, f, scratch);
  double worst = 0.0;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (q.diag(i) == 0.0) continue;
    worst = std::max(worst, violation_at(alphas[i], linear[i] - f[i], c));
  }
  return worst;
}

DualSolution solve_box_dual(const KernelRows& q, std::span<const double> linear,
                            std::optional<double> upper, const SolverConfig& cfg,
                            std::span<const double> warm_start) {
  cfg.validate();
  const std::size_t n = q.size();
  if (linear.size() != n) throw Error(ErrorCode::DimensionMismatch, "one linear term per row");
  if (!warm_start.empty() && warm_start.size() != n) {
    throw Error(ErrorCode::DimensionMismatch, "warm start length must match kernel");
  }
  if (upper && !(*upper > 0.0)) throw Error(ErrorCode::InvalidArgument, "C must be > 0");
  const bool hard = !upper.has_value();
  const double c = upper.value_or(kHardMarginC);
  const double tol = cfg.tolerance;

  DualSolution sol;
  sol.alphas.assign(n, 0.0);
  std::vector<std::size_t> index;
  index.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (q.diag(i) > 0.0) {
      index.push_back(i);
      if (!warm_start.empty()) sol.alphas[i] = std::clamp(warm_start[i], 0.0, c);
    } else {
      sol.excluded.push_back(i);
    }
  }

  std::vector<double> f(n, 0.0);
  std::vector<double> scratch;
  recompute_margins(q, sol.alphas, f, scratch);

  const std::size_t budget =
      cfg.max_iterations ? cfg.max_iterations : 1000 * std::max<std::size_t>(n, 1);
  std::mt19937_64 rng(cfg.shuffle_seed);
  std::size_t active = index.size();
  double shrink_bound = std::numeric_limits<double>::infinity();
  std::size_t visits = 0;

  auto objective = [&] {
    double g = 0.0;
    for (std::size_t i : index) g += sol.alphas[i] * (linear[i] - 0.5 * f[i]);
    return g;
  };

  while (!index.empty()) {
    for (std::size_t s = active; s > 1; --s) {
      std::swap(index[s - 1], index[rng() % s]);
    }
    double sweep_max = 0.0;
    for (std::size_t s = 0; s < active;) {
      const std::size_t i = index[s];
      const double a = sol.alphas[i];
      const double grad = linear[i] - f[i];
      if (cfg.shrinking &&
          ((a <= 0.0 && grad < -shrink_bound) || (a >= c && grad > shrink_bound))) {
        std::swap(index[s], index[--active]);
        continue;
      }
      const double v = violation_at(a, grad, c);
      sweep_max = std::max(sweep_max, v);
      ++visits;
      if (v > tol) {
        const double next = std::clamp(a + grad / q.diag(i), 0.0, c);
        if (hard && next >= c) {
          throw Error(ErrorCode::Infeasible,
                      "hard-margin coefficient diverged; constraints cannot be met");
        }
        const double delta = next - a;
        if (delta != 0.0) {
          sol.alphas[i] = next;
          simd::axpy(delta, q.row(i, scratch), f);
          ++sol.updates;
        }
      }
      ++s;
    }
    ++sol.iterations;
    if (cfg.record_trace) sol.objective_trace.push_back(objective());

    if (sweep_max <= tol) {
      // Verify against freshly computed margins over every coordinate.
      recompute_margins(q, sol.alphas, f, scratch);
      double full = 0.0;
      for (std::size_t i : index) {
        full = std::max(full, violation_at(sol.alphas[i], linear[i] - f[i], c));
      }
      if (full <= tol) {
        sol.converged = true;
        break;
      }
      active = index.size();
      shrink_bound = std::numeric_limits<double>::infinity();
    } else {
      shrink_bound = sweep_max;
    }
    if (visits >= budget) break;
  }
  if (index.empty()) sol.converged = true;

  if (!sol.converged) recompute_margins(q, sol.alphas, f, scratch);
  sol.kkt_violation = 0.0;
  for (std::size_t i : index) {
    sol.kkt_violation =
        std::max(sol.kkt_violation, violation_at(sol.alphas[i], linear[i] - f[i], c));
  }
  sol.objective_value = objective();
  return sol;
}

DualSolution solve_dual(const ExemplarProblem& problem, const SolverConfig& cfg,
                        std::span<const double> warm_start) {
  const RowMatrix diffs = problem.differences();
  const auto kernel = make_kernel(diffs, KernelKind::Quadratic, cfg);
  const std::vector<double> linear(problem.size(), problem.margin());
  return solve_box_dual(*kernel, linear, problem.soft_margin_c(), cfg, warm_start);
}

double dual_objective(const ExemplarProblem& problem, std::span<const double> alphas) {
  if (alphas.size() != problem.size()) {
    throw Error(ErrorCode::DimensionMismatch, "one alpha per negative");
  }
  const RowMatrix diffs = problem.differences();
  double g = 0.0;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (alphas[i] < 0.0) throw Error(ErrorCode::InvalidArgument, "alphas must be >= 0");
    if (alphas[i] == 0.0) continue;
    g += problem.margin() * alphas[i];
    for (std::size_t j = 0; j < alphas.size(); ++j) {
      if (alphas[j] == 0.0) continue;
      g -= 0.5 * alphas[i] * alphas[j] * quadratic_kernel(diffs.row(i), diffs.row(j));
    }
  }
  return g;
}

}  // namespace invmahal
