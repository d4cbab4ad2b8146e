#pragma once

// Shared domain types for local Mahalanobis metric learning.
//
// Everything here is immutable after construction and validated on the way
// in: a constructed object always satisfies its invariants.

#include <cstddef>
#include <initializer_list>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace invmahal {

enum class ErrorCode {
  DimensionMismatch,
  InvalidArgument,
  Infeasible,
  IterationLimit,
  ScaleExceeded,
  DimensionLimit,
  ShiftTooLarge,
  AngleTooLarge,
  BlankImage,
  BadMagic,
  TruncatedFile,
  ParseError,
  InsufficientFolds,
  Io,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::size_t line = 0);

  ErrorCode code() const noexcept { return code_; }
  /// 1-based input line for ParseError, 0 otherwise.
  std::size_t line() const noexcept { return line_; }

 private:
  ErrorCode code_;
  std::size_t line_;
};

/// Ordered key/value snapshot of the settings that produced a result.
using ConfigEcho = std::vector<std::pair<std::string, std::string>>;

/// Formats a double so that parsing it back yields the identical value.
std::string format_exact(double v);

/// Dense real vector, one datum in feature space. Nonempty and finite.
class FeatureVector {
 public:
  explicit FeatureVector(std::vector<double> values);
  FeatureVector(std::initializer_list<double> values);
  explicit FeatureVector(std::span<const double> values);

  std::size_t size() const noexcept { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const noexcept { return values_; }
  const double* data() const noexcept { return values_.data(); }

  bool operator==(const FeatureVector&) const = default;

 private:
  std::vector<double> values_;
};

/// Contiguous row-major matrix; used for banks of vectors and dense results.
class RowMatrix {
 public:
  RowMatrix() = default;
  RowMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  RowMatrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static RowMatrix from_vectors(std::span<const FeatureVector> vectors);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return rows_ == 0; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<const double> flat() const noexcept { return data_; }

  void append_row(std::span<const double> values);

  bool operator==(const RowMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// One query point plus its bank of negatives.
class ExemplarProblem {
 public:
  static constexpr double kDefaultMargin = 2.0;

  /// `soft_margin_c` empty means hard margin.
  ExemplarProblem(FeatureVector query, std::vector<FeatureVector> negatives,
                  double margin = kDefaultMargin,
                  std::optional<double> soft_margin_c = std::nullopt);

  const FeatureVector& query() const noexcept { return query_; }
  std::span<const FeatureVector> negatives() const noexcept { return negatives_; }
  std::size_t dimension() const noexcept { return query_.size(); }
  std::size_t size() const noexcept { return negatives_.size(); }
  double margin() const noexcept { return margin_; }
  std::optional<double> soft_margin_c() const noexcept { return soft_c_; }
  bool hard_margin() const noexcept { return !soft_c_.has_value(); }

  /// Rows x_i - x_0, in input order (degenerate rows included).
  RowMatrix differences() const;

 private:
  FeatureVector query_;
  std::vector<FeatureVector> negatives_;
  double margin_;
  std::optional<double> soft_c_;
};

/// Warnings for negatives equal to the query. Throws DimensionMismatch.
std::vector<std::string> validate_problem(const FeatureVector& query,
                                          std::span<const FeatureVector> negatives);
std::vector<std::string> validate_problem(const ExemplarProblem& problem);

struct DualSolution {
  std::vector<double> alphas;       // one per negative, input order
  std::size_t iterations = 0;       // completed sweeps
  std::size_t updates = 0;          // coordinate moves with nonzero step
  double kkt_violation = 0.0;
  double objective_value = 0.0;
  bool converged = false;
  std::vector<std::size_t> excluded;      // degenerate negatives, never solved
  std::vector<double> objective_trace;    // per sweep, when requested
};

/// Span of transformation tangents T_j(x0) - x0 with an orthonormal basis.
class TangentSet {
 public:
  /// Validates orthonormality (1e-10) and that each raw vector is
  /// reconstructed by the basis within 1e-8 relative.
  TangentSet(std::vector<FeatureVector> raw, RowMatrix ortho_basis);

  std::span<const FeatureVector> raw() const noexcept { return raw_; }
  const RowMatrix& basis() const noexcept { return basis_; }
  std::size_t basis_size() const noexcept { return basis_.rows(); }
  std::size_t dimension() const noexcept { return basis_.cols(); }

 private:
  std::vector<FeatureVector> raw_;
  RowMatrix basis_;
};

/// Learned PSD matrix M = sum_k alpha_k d_k d_k^T anchored at x0, kept in
/// support-vector form. The dense matrix is never stored.
class LocalMetric {
 public:
  LocalMetric(FeatureVector anchor, std::vector<double> alphas, RowMatrix directions,
              std::optional<TangentSet> basis_v = std::nullopt, ConfigEcho echo = {});

  /// Identity metric at `anchor` (unit-coordinate support, alpha 1).
  static LocalMetric identity(FeatureVector anchor);

  const FeatureVector& anchor() const noexcept { return anchor_; }
  std::size_t dimension() const noexcept { return anchor_.size(); }
  std::size_t support_size() const noexcept { return alphas_.size(); }
  std::span<const double> alphas() const noexcept { return alphas_; }
  const RowMatrix& directions() const noexcept { return directions_; }
  const std::optional<TangentSet>& basis_v() const noexcept { return basis_v_; }
  bool invariant() const noexcept { return basis_v_.has_value(); }
  const ConfigEcho& config_echo() const noexcept { return echo_; }

  double trace() const;

 private:
  FeatureVector anchor_;
  std::vector<double> alphas_;
  RowMatrix directions_;
  std::optional<TangentSet> basis_v_;
  ConfigEcho echo_;
};

struct ClassTally {
  std::size_t errors = 0;
  std::size_t total = 0;
  double rate() const { return total == 0 ? 0.0 : double(errors) / double(total); }
};

struct EvalReport {
  std::string task_name;
  std::string method;
  double error_rate = 0.0;
  double error_std = 0.0;            // across folds; 0 when unfolded
  std::size_t errors = 0;
  std::size_t total = 0;
  std::size_t failures = 0;          // exemplars whose solve failed
  std::map<std::string, ClassTally> per_class;
  std::vector<double> per_fold_errors;
  std::vector<std::pair<std::string, double>> timings;   // stage -> seconds
  ConfigEcho config_echo;

  /// Checks error_rate against the tallies; throws InvalidArgument.
  void check_consistency() const;
};

}  // namespace invmahal
