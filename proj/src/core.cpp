#include "invmahal/core.hpp"

#include <charconv>
#include <cmath>
#include <sstream>

#include "invmahal/simd.hpp"

namespace invmahal {

namespace {

void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::InvalidArgument, std::string(what) + ": non-finite entry");
    }
  }
}

}  // namespace

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Infeasible: return "Infeasible";
    case ErrorCode::IterationLimit: return "IterationLimit";
    case ErrorCode::ScaleExceeded: return "ScaleExceeded";
    case ErrorCode::DimensionLimit: return "DimensionLimit";
    case ErrorCode::ShiftTooLarge: return "ShiftTooLarge";
    case ErrorCode::AngleTooLarge: return "AngleTooLarge";
    case ErrorCode::BlankImage: return "BlankImage";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::InsufficientFolds: return "InsufficientFolds";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message, std::size_t line)
    : std::runtime_error(std::string(to_string(code)) + ": " + message),
      code_(code),
      line_(line) {}

std::string format_exact(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

FeatureVector::FeatureVector(std::vector<double> values) : values_(std::move(values)) {
  if (values_.empty()) {
    throw Error(ErrorCode::InvalidArgument, "feature vector must have dimension >= 1");
  }
  require_finite(values_, "feature vector");
}

FeatureVector::FeatureVector(std::initializer_list<double> values)
    : FeatureVector(std::vector<double>(values)) {}

FeatureVector::FeatureVector(std::span<const double> values)
    : FeatureVector(std::vector<double>(values.begin(), values.end())) {}

RowMatrix::RowMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw Error(ErrorCode::DimensionMismatch, "matrix storage does not match shape");
  }
}

RowMatrix RowMatrix::from_vectors(std::span<const FeatureVector> vectors) {
  if (vectors.empty()) return {};
  RowMatrix m(vectors.size(), vectors.front().size());
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    if (vectors[i].size() != m.cols()) {
      throw Error(ErrorCode::DimensionMismatch, "vectors of unequal dimension");
    }
    std::copy(vectors[i].values().begin(), vectors[i].values().end(), m.row(i).begin());
  }
  return m;
}

void RowMatrix::append_row(std::span<const double> values) {
  if (rows_ == 0 && cols_ == 0) cols_ = values.size();
  if (values.size() != cols_) {
    throw Error(ErrorCode::DimensionMismatch, "appended row has wrong width");
  }
  data_.insert(data_.end(), values.begin(), values.end());
  ++rows_;
}

std::vector<std::string> validate_problem(const FeatureVector& query,
                                          std::span<const FeatureVector> negatives) {
  std::vector<std::string> warnings;
  for (std::size_t i = 0; i < negatives.size(); ++i) {
    if (negatives[i].size() != query.size()) {
      std::ostringstream msg;
      msg << "negative " << i << " has dimension " << negatives[i].size()
          << ", query has " << query.size();
      throw Error(ErrorCode::DimensionMismatch, msg.str());
    }
    if (negatives[i] == query) {
      warnings.push_back("degenerate negative at index " + std::to_string(i));
    }
  }
  return warnings;
}

std::vector<std::string> validate_problem(const ExemplarProblem& problem) {
  return validate_problem(problem.query(), problem.negatives());
}

ExemplarProblem::ExemplarProblem(FeatureVector query, std::vector<FeatureVector> negatives,
                                 double margin, std::optional<double> soft_margin_c)
    : query_(std::move(query)),
      negatives_(std::move(negatives)),
      margin_(margin),
      soft_c_(soft_margin_c) {
  if (negatives_.empty()) {
    throw Error(ErrorCode::InvalidArgument, "problem needs at least one negative");
  }
  if (!(margin_ > 0.0) || !std::isfinite(margin_)) {
    throw Error(ErrorCode::InvalidArgument, "margin must be positive");
  }
  if (soft_c_ && (!(*soft_c_ > 0.0) || !std::isfinite(*soft_c_))) {
    throw Error(ErrorCode::InvalidArgument, "soft-margin C must be positive");
  }
  validate_problem(query_, negatives_);
}

RowMatrix ExemplarProblem::differences() const {
  RowMatrix diffs(negatives_.size(), dimension());
  for (std::size_t i = 0; i < negatives_.size(); ++i) {
    auto out = diffs.row(i);
    auto x = negatives_[i].values();
    auto q = query_.values();
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = x[j] - q[j];
  }
  return diffs;
}

TangentSet::TangentSet(std::vector<FeatureVector> raw, RowMatrix ortho_basis)
    : raw_(std::move(raw)), basis_(std::move(ortho_basis)) {
  const std::size_t d = basis_.cols();
  for (const auto& r : raw_) {
    if (basis_.rows() > 0 && r.size() != d) {
      throw Error(ErrorCode::DimensionMismatch, "tangent dimension differs from basis");
    }
  }
  require_finite(basis_.flat(), "tangent basis");
  for (std::size_t a = 0; a < basis_.rows(); ++a) {
    for (std::size_t b = a; b < basis_.rows(); ++b) {
      const double ip = simd::dot(basis_.row(a), basis_.row(b));
      const double want = a == b ? 1.0 : 0.0;
      if (std::abs(ip - want) > 1e-10) {
        throw Error(ErrorCode::InvalidArgument, "tangent basis is not orthonormal");
      }
    }
  }
  // Every raw tangent must lie in the span of the basis.
  std::vector<double> resid;
  for (const auto& r : raw_) {
    resid.assign(r.values().begin(), r.values().end());
    for (std::size_t b = 0; b < basis_.rows(); ++b) {
      simd::axpy(-simd::dot(resid, basis_.row(b)), basis_.row(b), resid);
    }
    const double rn = std::sqrt(simd::dot(r.values(), r.values()));
    const double en = std::sqrt(simd::dot(resid, resid));
    if (en > 1e-8 * std::max(rn, 1e-300) && en > 0.0) {
      throw Error(ErrorCode::InvalidArgument, "raw tangent outside basis span");
    }
  }
}

LocalMetric::LocalMetric(FeatureVector anchor, std::vector<double> alphas,
                         RowMatrix directions, std::optional<TangentSet> basis_v,
                         ConfigEcho echo)
    : anchor_(std::move(anchor)),
      alphas_(std::move(alphas)),
      directions_(std::move(directions)),
      basis_v_(std::move(basis_v)),
      echo_(std::move(echo)) {
  if (alphas_.size() != directions_.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "one direction per alpha required");
  }
  if (!directions_.empty() && directions_.cols() != anchor_.size()) {
    throw Error(ErrorCode::DimensionMismatch, "direction dimension differs from anchor");
  }
  if (basis_v_ && basis_v_->basis_size() > 0 && basis_v_->dimension() != anchor_.size()) {
    throw Error(ErrorCode::DimensionMismatch, "basis dimension differs from anchor");
  }
  for (double a : alphas_) {
    if (!(a > 0.0) || !std::isfinite(a)) {
      throw Error(ErrorCode::InvalidArgument, "support coefficients must be positive");
    }
  }
  require_finite(directions_.flat(), "support direction");
}

LocalMetric LocalMetric::identity(FeatureVector anchor) {
  const std::size_t d = anchor.size();
  RowMatrix dirs(d, d);
  for (std::size_t i = 0; i < d; ++i) dirs(i, i) = 1.0;
  return LocalMetric(std::move(anchor), std::vector<double>(d, 1.0), std::move(dirs));
}

double LocalMetric::trace() const {
  double t = 0.0;
  for (std::size_t k = 0; k < alphas_.size(); ++k) {
    t += alphas_[k] * simd::dot(directions_.row(k), directions_.row(k));
  }
  return t;
}

void EvalReport::check_consistency() const {
  if (error_rate < 0.0 || error_rate > 1.0) {
    throw Error(ErrorCode::InvalidArgument, "error rate outside [0,1]");
  }
  if (per_class.empty()) return;
  std::size_t e = 0, t = 0;
  for (const auto& [label, tally] : per_class) {
    e += tally.errors;
    t += tally.total;
  }
  if (e != errors || t != total ||
      std::abs(error_rate - (t ? double(e) / double(t) : 0.0)) > 1e-12) {
    throw Error(ErrorCode::InvalidArgument, "error rate inconsistent with per-class counts");
  }
}

}  // namespace invmahal
