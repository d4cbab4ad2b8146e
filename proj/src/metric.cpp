#include "invmahal/metric.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "invmahal/simd.hpp"

namespace invmahal {

namespace {

constexpr std::string_view kMagic = "INVMAHAL-METRIC";
constexpr int kFormatVersion = 1;

void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
}

void put_array(std::string& out, std::span<const double> values) {
  out.reserve(out.size() + 8 * values.size());
  for (double v : values) put_f64(out, v);
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  std::string line() {
    const auto end = bytes_.find('\n', pos_);
    if (end == std::string::npos) throw Error(ErrorCode::TruncatedFile, "metric header ends early");
    std::string out = bytes_.substr(pos_, end - pos_);
    pos_ = end + 1;
    ++line_no_;
    return out;
  }

  std::vector<double> array(std::size_t count) {
    if (bytes_.size() - pos_ < 8 * count) {
      throw Error(ErrorCode::TruncatedFile, "metric body shorter than header declares");
    }
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) {
        bits |= std::uint64_t(static_cast<unsigned char>(bytes_[pos_ + b])) << (8 * b);
      }
      out[i] = std::bit_cast<double>(bits);
      pos_ += 8;
    }
    return out;
  }

  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t line_no() const { return line_no_; }

 private:
  const std::string& bytes_;
  std::size_t pos_ = 0;
  std::size_t line_no_ = 0;
};

std::size_t parse_count(const std::string& text, std::size_t line) {
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(text, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != text.size() || text.empty()) {
    throw Error(ErrorCode::ParseError, "bad count '" + text + "'", line);
  }
  return static_cast<std::size_t>(v);
}

}  // namespace

ConfigEcho solve_echo(const ExemplarProblem& problem, const SolverConfig& cfg,
                      const DualSolution& solution) {
  return {
      {"margin", format_exact(problem.margin())},
      {"soft_c", problem.soft_margin_c() ? format_exact(*problem.soft_margin_c()) : "hard"},
      {"tolerance", format_exact(cfg.tolerance)},
      {"shuffle_seed", std::to_string(cfg.shuffle_seed)},
      {"negatives", std::to_string(problem.size())},
      {"sweeps", std::to_string(solution.iterations)},
      {"kkt_violation", format_exact(solution.kkt_violation)},
      {"dual_objective", format_exact(solution.objective_value)},
  };
}

LocalMetric metric_from_solution(FeatureVector anchor, const RowMatrix& directions,
                                 std::span<const double> alphas, const SolverConfig& cfg,
                                 std::optional<TangentSet> basis_v, ConfigEcho echo) {
  if (alphas.size() != directions.rows()) {
    throw Error(ErrorCode::DimensionMismatch, "one alpha per direction");
  }
  const double top = alphas.empty() ? 0.0 : *std::max_element(alphas.begin(), alphas.end());
  const double cut = cfg.support_threshold * top;
  std::vector<double> kept_alpha;
  RowMatrix kept(0, anchor.size());
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (alphas[i] > cut && alphas[i] > 0.0) {
      kept_alpha.push_back(alphas[i]);
      kept.append_row(directions.row(i));
    }
  }
  return LocalMetric(std::move(anchor), std::move(kept_alpha), std::move(kept),
                     std::move(basis_v), std::move(echo));
}

MetricBuild build_local_metric_detailed(const ExemplarProblem& problem, const SolverConfig& cfg) {
  auto warnings = validate_problem(problem);
  const RowMatrix diffs = problem.differences();
  const auto kernel = make_kernel(diffs, KernelKind::Quadratic, cfg);
  const std::vector<double> linear(problem.size(), problem.margin());
  DualSolution sol = solve_box_dual(*kernel, linear, problem.soft_margin_c(), cfg);
  if (!sol.converged) {
    throw Error(ErrorCode::IterationLimit,
                "KKT violation " + format_exact(sol.kkt_violation) + " after " +
                    std::to_string(sol.iterations) + " sweeps");
  }
  auto metric = metric_from_solution(problem.query(), diffs, sol.alphas, cfg, std::nullopt,
                                     solve_echo(problem, cfg, sol));
  return {std::move(metric), std::move(sol), std::move(warnings)};
}

LocalMetric build_local_metric(const ExemplarProblem& problem, const SolverConfig& cfg) {
  return build_local_metric_detailed(problem, cfg).metric;
}

double mahal_distance_sq(const LocalMetric& metric, std::span<const double> y) {
  if (y.size() != metric.dimension()) {
    throw Error(ErrorCode::DimensionMismatch, "query dimension differs from metric anchor");
  }
  std::vector<double> u(y.begin(), y.end());
  simd::axpy(-1.0, metric.anchor().values(), u);
  if (const auto& v = metric.basis_v()) {
    const RowMatrix& b = v->basis();
    for (std::size_t k = 0; k < b.rows(); ++k) simd::axpy(-simd::dot(u, b.row(k)), b.row(k), u);
  }
  double s = 0.0;
  const auto alphas = metric.alphas();
  for (std::size_t k = 0; k < alphas.size(); ++k) {
    const double p = simd::dot(metric.directions().row(k), u);
    s += alphas[k] * p * p;
  }
  return s;
}

double mahal_distance_sq(const LocalMetric& metric, const FeatureVector& y) {
  return mahal_distance_sq(metric, y.values());
}

RowMatrix materialize(const LocalMetric& metric, std::size_t limit) {
  const std::size_t d = metric.dimension();
  if (d > limit) {
    throw Error(ErrorCode::DimensionLimit,
                "dimension " + std::to_string(d) + " exceeds materialize limit " +
                    std::to_string(limit));
  }
  RowMatrix m(d, d);
  const auto alphas = metric.alphas();
  for (std::size_t k = 0; k < alphas.size(); ++k) {
    const auto dir = metric.directions().row(k);
    for (std::size_t r = 0; r < d; ++r) {
      const double w = alphas[k] * dir[r];
      if (w == 0.0) continue;
      double* row = m.data() + r * d;
      for (std::size_t c = r; c < d; ++c) row[c] += w * dir[c];
    }
  }
  for (std::size_t r = 1; r < d; ++r)
    for (std::size_t c = 0; c < r; ++c) m(r, c) = m(c, r);
  return m;
}

std::size_t metric_rank(const LocalMetric& metric, std::size_t limit) {
  const std::size_t d = metric.dimension();
  const std::size_t s = metric.support_size();
  if (d > limit) {
    throw Error(ErrorCode::DimensionLimit, "dimension exceeds materialize limit");
  }
  if (s == 0) return 0;
  // M = A A^T with A = [sqrt(a_k) d_k]; A^T A shares its nonzero spectrum and
  // is the smaller matrix whenever s < d.
  Eigen::MatrixXd small;
  if (s < d) {
    small.resize(s, s);
    const auto alphas = metric.alphas();
    for (std::size_t i = 0; i < s; ++i) {
      for (std::size_t j = i; j < s; ++j) {
        const double v = std::sqrt(alphas[i] * alphas[j]) *
                         simd::dot(metric.directions().row(i), metric.directions().row(j));
        small(i, j) = v;
        small(j, i) = v;
      }
    }
  } else {
    const RowMatrix m = materialize(metric, limit);
    small = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        m.data(), d, d);
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(small, Eigen::EigenvaluesOnly);
  const Eigen::VectorXd ev = eig.eigenvalues().cwiseAbs();
  const double top = ev.maxCoeff();
  if (top == 0.0) return 0;
  return static_cast<std::size_t>((ev.array() > 1e-8 * top).count());
}

double min_eigenvalue(const RowMatrix& symmetric) {
  if (symmetric.rows() != symmetric.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "matrix must be square");
  }
  if (symmetric.empty()) return 0.0;
  const Eigen::MatrixXd m =
      Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
          symmetric.data(), symmetric.rows(), symmetric.cols());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m, Eigen::EigenvaluesOnly);
  return eig.eigenvalues().minCoeff();
}

std::string serialize_metric(const LocalMetric& metric) {
  const std::size_t d = metric.dimension();
  std::ostringstream head;
  head << kMagic << ' ' << kFormatVersion << '\n'
       << "dimension " << d << '\n'
       << "support " << metric.support_size() << '\n'
       << "invariant " << (metric.invariant() ? 1 : 0) << '\n';
  if (metric.invariant()) {
    head << "basis " << metric.basis_v()->basis_size() << '\n'
         << "raw_tangents " << metric.basis_v()->raw().size() << '\n';
  }
  for (const auto& [key, value] : metric.config_echo()) {
    if (key.find_first_of(" \n") != std::string::npos || value.find('\n') != std::string::npos) {
      throw Error(ErrorCode::InvalidArgument, "echo entries must be single-line tokens");
    }
    head << "echo." << key << ' ' << value << '\n';
  }
  head << "end\n";

  std::string out = head.str();
  put_array(out, metric.anchor().values());
  put_array(out, metric.alphas());
  put_array(out, metric.directions().flat());
  if (metric.invariant()) {
    put_array(out, metric.basis_v()->basis().flat());
    for (const auto& r : metric.basis_v()->raw()) put_array(out, r.values());
  }
  return out;
}

LocalMetric deserialize_metric(const std::string& bytes) {
  Reader in(bytes);
  {
    const std::string first = in.line();
    std::istringstream ss(first);
    std::string magic;
    int version = 0;
    ss >> magic >> version;
    if (magic != kMagic) throw Error(ErrorCode::BadMagic, "not a metric file");
    if (version != kFormatVersion) {
      throw Error(ErrorCode::ParseError, "unsupported metric format version", 1);
    }
  }
  std::size_t d = 0, s = 0, m = 0, k = 0;
  bool invariant = false;
  ConfigEcho echo;
  for (;;) {
    const std::string l = in.line();
    if (l == "end") break;
    const auto sp = l.find(' ');
    if (sp == std::string::npos) throw Error(ErrorCode::ParseError, "malformed header", in.line_no());
    const std::string key = l.substr(0, sp);
    const std::string value = l.substr(sp + 1);
    if (key == "dimension") {
      d = parse_count(value, in.line_no());
    } else if (key == "support") {
      s = parse_count(value, in.line_no());
    } else if (key == "invariant") {
      invariant = parse_count(value, in.line_no()) != 0;
    } else if (key == "basis") {
      m = parse_count(value, in.line_no());
    } else if (key == "raw_tangents") {
      k = parse_count(value, in.line_no());
    } else if (key.rfind("echo.", 0) == 0) {
      echo.emplace_back(key.substr(5), value);
    } else {
      throw Error(ErrorCode::ParseError, "unknown header key '" + key + "'", in.line_no());
    }
  }
  if (d == 0) throw Error(ErrorCode::ParseError, "metric dimension missing");
  FeatureVector anchor(in.array(d));
  std::vector<double> alphas = in.array(s);
  RowMatrix dirs(s, d, in.array(s * d));
  std::optional<TangentSet> basis;
  if (invariant) {
    RowMatrix b(m, d, in.array(m * d));
    std::vector<FeatureVector> raw;
    for (std::size_t j = 0; j < k; ++j) raw.emplace_back(in.array(d));
    basis.emplace(std::move(raw), std::move(b));
  }
  if (!in.at_end()) throw Error(ErrorCode::ParseError, "trailing bytes after metric body");
  return LocalMetric(std::move(anchor), std::move(alphas), std::move(dirs), std::move(basis),
                     std::move(echo));
}

void save_metric(const LocalMetric& metric, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  const std::string bytes = serialize_metric(metric);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

LocalMetric load_metric(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_metric(buf.str());
}

}  // namespace invmahal
