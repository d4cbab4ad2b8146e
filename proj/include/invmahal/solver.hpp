#pragma once

// Fixed-bias kernel SVM dual, solved by randomized dual coordinate ascent.
//
// Learning the local metric reduces to
//
//   max_a  sum_i e_i a_i - 1/2 sum_ij a_i a_j Q_ij,   0 <= a_i <= C
//
// with Q_ij = <x~_i, x~_j>^2 and e_i = margin. The bias is frozen, so there
// is no equality constraint and each coordinate has a closed-form maximizer.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "invmahal/core.hpp"

namespace invmahal {

struct SolverConfig {
  double tolerance = 1e-6;              // max KKT violation at return
  std::size_t max_iterations = 0;       // coordinate-visit budget; 0 means 1000 * n
  std::size_t kernel_cache_limit = 8192;  // largest n with a precomputed n x n kernel
  std::uint64_t shuffle_seed = 0;
  bool shrinking = true;
  bool record_trace = false;
  double support_threshold = 1e-9;      // relative to the largest alpha
  std::size_t materialize_limit = 4096;
  double fallback_soft_c = 1.0;         // used when a hard-margin solve is infeasible

  /// Throws InvalidArgument.
  void validate() const;
};

/// Box upper bound used for hard margin.
inline constexpr double kHardMarginC = 1e12;

enum class KernelKind { Quadratic, Linear };

/// <a,b>^2. Throws DimensionMismatch.
double quadratic_kernel(std::span<const double> a, std::span<const double> b);
double quadratic_kernel(const FeatureVector& a, const FeatureVector& b);

/// Signed kernel matrix Q_ij = y_i y_j k(z_i, z_j) seen one row at a time.
class KernelRows {
 public:
  virtual ~KernelRows() = default;
  virtual std::size_t size() const = 0;
  virtual double diag(std::size_t i) const = 0;
  /// Row i. May return a view into internal storage or into `scratch`.
  virtual std::span<const double> row(std::size_t i, std::vector<double>& scratch) const = 0;
};

/// Fully precomputed Q.
class DenseKernel final : public KernelRows {
 public:
  /// `dots` holds <z_i, z_j>; it is transformed in place. Empty `labels`
  /// means all +1.
  DenseKernel(RowMatrix dots, KernelKind kind, std::span<const double> labels = {});

  std::size_t size() const override { return q_.rows(); }
  double diag(std::size_t i) const override { return q_(i, i); }
  std::span<const double> row(std::size_t i, std::vector<double>&) const override {
    return q_.row(i);
  }
  const RowMatrix& matrix() const noexcept { return q_; }

 private:
  RowMatrix q_;
};

/// Q rows recomputed from the vectors z_i on demand: O(n d) per row, O(n d)
/// memory.
class OnDemandKernel final : public KernelRows {
 public:
  OnDemandKernel(RowMatrix vectors, KernelKind kind, std::vector<double> labels = {});

  std::size_t size() const override { return z_.rows(); }
  double diag(std::size_t i) const override { return diag_[i]; }
  std::span<const double> row(std::size_t i, std::vector<double>& scratch) const override;

 private:
  double transform(double dot, std::size_t i, std::size_t j) const;

  RowMatrix z_;
  KernelKind kind_;
  std::vector<double> labels_;
  std::vector<double> diag_;
};

/// Dense kernel when n <= cfg.kernel_cache_limit, on-demand otherwise.
std::unique_ptr<KernelRows> make_kernel(const RowMatrix& vectors, KernelKind kind,
                                        const SolverConfig& cfg,
                                        std::span<const double> labels = {});

/// Core coordinate-ascent routine. Rows with Q_ii == 0 are excluded (alpha
/// pinned at 0). `upper` empty means hard margin. Throws Infeasible if a
/// hard-margin coefficient runs into kHardMarginC.
DualSolution solve_box_dual(const KernelRows& q, std::span<const double> linear,
                            std::optional<double> upper, const SolverConfig& cfg,
                            std::span<const double> warm_start = {});

/// g(alpha) = sum e_i a_i - 1/2 a^T Q a, computed from scratch.
double box_dual_objective(const KernelRows& q, std::span<const double> linear,
                          std::span<const double> alphas);

/// Largest KKT violation of `alphas` (see solve_dual).
double kkt_violation(const KernelRows& q, std::span<const double> linear,
                     std::optional<double> upper, std::span<const double> alphas);

/// Solves the local-metric dual for an exemplar problem. Degenerate negatives
/// (x_i == x_0) are excluded and listed in the result. A solution that hits
/// the iteration budget is returned with converged == false.
DualSolution solve_dual(const ExemplarProblem& problem, const SolverConfig& cfg = {},
                        std::span<const double> warm_start = {});

double dual_objective(const ExemplarProblem& problem, std::span<const double> alphas);

}  // namespace invmahal
