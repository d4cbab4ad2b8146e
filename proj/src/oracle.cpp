#include "invmahal/oracle.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

namespace invmahal::oracle {

namespace {

constexpr double kTargetViolation = 1e-8;
constexpr std::size_t kMaxSteps = 4'000'000;

double violation(double alpha, double grad) {
  return alpha <= 0.0 ? std::max(grad, 0.0) : std::abs(grad);
}

}  // namespace

double outer_product_kernel(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::DimensionMismatch, "kernel operands differ");
  double s = 0.0;
  for (std::size_t r = 0; r < a.size(); ++r) {
    for (std::size_t c = 0; c < a.size(); ++c) s += (a[r] * a[c]) * (b[r] * b[c]);
  }
  return s;
}

DualSolution oracle_solve(const ExemplarProblem& problem) {
  const std::size_t n = problem.size();
  const std::size_t d = problem.dimension();
  if (n > kMaxNegatives || d > kMaxDimension) {
    throw Error(ErrorCode::ScaleExceeded, "oracle handles n <= 32, d <= 8 only");
  }
  std::vector<std::vector<double>> z(n, std::vector<double>(d));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) z[i][j] = problem.negatives()[i][j] - problem.query()[j];
  }
  std::vector<double> k(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) k[i * n + j] = outer_product_kernel(z[i], z[j]);
  }
  const double margin = problem.margin();
  const double upper = problem.soft_margin_c().value_or(std::numeric_limits<double>::infinity());

  DualSolution sol;
  std::vector<std::size_t> live;
  for (std::size_t i = 0; i < n; ++i) {
    if (k[i * n + i] > 0.0) {
      live.push_back(i);
    } else {
      sol.excluded.push_back(i);
    }
  }
  sol.alphas.assign(n, 0.0);
  if (live.empty()) {
    sol.converged = true;
    return sol;
  }

  // Jacobi scaling b_i = sqrt(K_ii) a_i gives a unit diagonal, which keeps
  // badly scaled negatives (tiny or huge |x_i - x0|) from stalling the
  // gradient steps. KKT is still measured in the original variables.
  std::vector<double> scale(n, 1.0), lin(n, 0.0), ub(n, upper);
  for (std::size_t i : live) {
    scale[i] = std::sqrt(k[i * n + i]);
    lin[i] = margin / scale[i];
    ub[i] = upper * scale[i];
  }
  std::vector<double> ks(n * n, 0.0);
  for (std::size_t i : live) {
    for (std::size_t j : live) ks[i * n + j] = k[i * n + j] / (scale[i] * scale[j]);
  }

  // Gershgorin bound on the largest eigenvalue gives a safe 1/L step.
  double lip = 0.0;
  for (std::size_t i : live) {
    double row = 0.0;
    for (std::size_t j : live) row += std::abs(ks[i * n + j]);
    lip = std::max(lip, row);
  }
  const double step = 1.0 / lip;

  auto gradient = [&](const std::vector<double>& b, std::vector<double>& g) {
    for (std::size_t i : live) {
      double f = 0.0;
      for (std::size_t j : live) f += ks[i * n + j] * b[j];
      g[i] = lin[i] - f;
    }
  };
  auto value = [&](const std::vector<double>& b, const std::vector<double>& g) {
    // g = lin - K b, so b^T K b = sum b (lin - g).
    double v = 0.0;
    for (std::size_t i : live) v += lin[i] * b[i] - 0.5 * b[i] * (lin[i] - g[i]);
    return v;
  };

  // Accelerated projected gradient with function-value restart.
  std::vector<double> x(n, 0.0), y(n, 0.0), x_prev(n, 0.0), gy(n, 0.0), gx(n, 0.0);
  double t = 1.0;
  gradient(x, gx);
  double fx = value(x, gx);
  std::size_t it = 0;
  for (; it < kMaxSteps; ++it) {
    gradient(y, gy);
    x_prev = x;
    for (std::size_t i : live) x[i] = std::clamp(y[i] + step * gy[i], 0.0, ub[i]);
    gradient(x, gx);
    const double fnew = value(x, gx);
    double worst = 0.0;
    for (std::size_t i : live) {
      const double g = gx[i] * scale[i];
      const double v = x[i] >= ub[i] ? std::max(-g, 0.0) : violation(x[i], g);
      worst = std::max(worst, v);
    }
    if (worst <= kTargetViolation) {
      sol.converged = true;
      sol.kkt_violation = worst;
      fx = fnew;
      ++it;
      break;
    }
    if (fnew < fx) {
      t = 1.0;
      y = x;
    } else {
      const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      for (std::size_t i : live) y[i] = x[i] + ((t - 1.0) / t_next) * (x[i] - x_prev[i]);
      t = t_next;
    }
    fx = fnew;
    sol.kkt_violation = worst;
  }
  for (std::size_t i : live) x[i] /= scale[i];
  sol.alphas = x;
  sol.iterations = it;
  sol.objective_value = fx;
  return sol;
}

InvariantOracleResult invariant_oracle_solve(const ExemplarProblem& problem,
                                             std::span<const FeatureVector> tangents) {
  const std::size_t d = problem.dimension();
  Eigen::MatrixXd u;
  if (tangents.empty()) {
    u = Eigen::MatrixXd::Identity(d, d);
  } else {
    Eigen::MatrixXd t(d, tangents.size());
    for (std::size_t j = 0; j < tangents.size(); ++j) {
      if (tangents[j].size() != d) throw Error(ErrorCode::DimensionMismatch, "tangent dimension");
      for (std::size_t r = 0; r < d; ++r) t(r, j) = tangents[j][r];
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(t);
    qr.setThreshold(1e-10);
    const auto rank = static_cast<std::size_t>(qr.rank());
    const Eigen::MatrixXd q = qr.householderQ();
    u = q.rightCols(d - rank);
  }
  const std::size_t m = static_cast<std::size_t>(u.cols());
  if (m == 0) throw Error(ErrorCode::Infeasible, "tangents span the whole space");

  std::vector<FeatureVector> coords;
  bool any = false;
  for (const auto& neg : problem.negatives()) {
    Eigen::VectorXd diff(d);
    for (std::size_t r = 0; r < d; ++r) diff(r) = neg[r] - problem.query()[r];
    Eigen::VectorXd w = u.transpose() * diff;
    if (w.norm() <= 1e-10 * diff.norm()) w.setZero();
    any = any || w.squaredNorm() > 0.0;
    coords.emplace_back(std::vector<double>(w.data(), w.data() + m));
  }
  if (!any) throw Error(ErrorCode::Infeasible, "all negatives lie in the tangent span");

  const ExemplarProblem reduced(FeatureVector(std::vector<double>(m, 0.0)), coords,
                                problem.margin(), problem.soft_margin_c());
  const DualSolution sol = oracle_solve(reduced);

  Eigen::MatrixXd reduced_m = Eigen::MatrixXd::Zero(m, m);
  for (std::size_t i = 0; i < coords.size(); ++i) {
    if (sol.alphas[i] == 0.0) continue;
    Eigen::Map<const Eigen::VectorXd> w(coords[i].data(), m);
    reduced_m += sol.alphas[i] * w * w.transpose();
  }
  const Eigen::MatrixXd full = u * reduced_m * u.transpose();

  InvariantOracleResult out;
  out.objective = sol.objective_value;
  out.complement_dimension = m;
  out.matrix = RowMatrix(d, d);
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < d; ++c) out.matrix(r, c) = full(r, c);
  return out;
}

}  // namespace invmahal::oracle
