#include "invmahal/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <random>
#include <thread>

#include "invmahal/invariance.hpp"
#include "invmahal/metric.hpp"
#include "invmahal/simd.hpp"

namespace invmahal {

namespace {

constexpr std::size_t kScoreBatch = 256;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

template <class Fn>
void parallel_for(std::size_t count, std::size_t workers, Fn&& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

bool is_mahalanobis(Method m) { return m == Method::LocalMahal || m == Method::InvMahal; }

TangentSet anchor_tangents(std::span<const double> x, const RasterImage* image,
                           const ExperimentConfig& cfg) {
  if (image == nullptr) {
    throw Error(ErrorCode::InvalidArgument, "tangent methods need image-shaped data");
  }
  const auto transformed = make_tangents(*image, cfg.tangent_spec);
  return build_tangent_set(FeatureVector(x), transformed);
}

ConfigEcho model_echo(const ExperimentConfig& cfg, const ExemplarModel& model, std::uint64_t seed) {
  return {
      {"margin", format_exact(cfg.margin)},
      {"soft_c", cfg.soft_c ? format_exact(*cfg.soft_c) : "hard"},
      {"tolerance", format_exact(cfg.solver.tolerance)},
      {"shuffle_seed", std::to_string(seed)},
      {"sweeps", std::to_string(model.sweeps)},
      {"kkt_violation", format_exact(model.kkt_violation)},
  };
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

std::string_view to_string(Method m) noexcept {
  switch (m) {
    case Method::L2: return "l2";
    case Method::Esvm: return "esvm";
    case Method::EsvmShifts: return "esvm_shifts";
    case Method::LocalMahal: return "local_mahal";
    case Method::InvMahal: return "inv_mahal";
  }
  return "l2";
}

std::vector<Method> parse_methods(std::string_view list) {
  std::vector<Method> out;
  std::size_t pos = 0;
  while (pos <= list.size()) {
    auto end = list.find(',', pos);
    if (end == std::string_view::npos) end = list.size();
    const std::string_view item = list.substr(pos, end - pos);
    pos = end + 1;
    if (item.empty()) continue;
    bool found = false;
    for (Method m : {Method::L2, Method::Esvm, Method::EsvmShifts, Method::LocalMahal,
                     Method::InvMahal}) {
      if (item == to_string(m)) {
        if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
        found = true;
      }
    }
    if (!found) throw Error(ErrorCode::InvalidArgument, "unknown method '" + std::string(item) + "'");
  }
  if (out.empty()) throw Error(ErrorCode::InvalidArgument, "no methods given");
  return out;
}

bool needs_tangents(Method m) noexcept { return m == Method::InvMahal || m == Method::EsvmShifts; }

void ExperimentConfig::validate() const {
  if (k_neighbors < 1 || k_neighbors % 2 == 0) {
    throw Error(ErrorCode::InvalidArgument, "k must be odd and >= 1");
  }
  if (train_limit < 1 || test_limit < 1) throw Error(ErrorCode::InvalidArgument, "limits must be >= 1");
  if (workers < 1) throw Error(ErrorCode::InvalidArgument, "workers must be >= 1");
  if (!(margin > 0.0)) throw Error(ErrorCode::InvalidArgument, "margin must be > 0");
  if (soft_c && !(*soft_c > 0.0)) throw Error(ErrorCode::InvalidArgument, "soft C must be > 0");
  if (!(esvm_c > 0.0)) throw Error(ErrorCode::InvalidArgument, "eSVM C must be > 0");
  if (baseline_set.empty()) throw Error(ErrorCode::InvalidArgument, "no methods selected");
  solver.validate();
}

ConfigEcho ExperimentConfig::echo() const {
  std::string methods, tangents;
  for (Method m : baseline_set) methods += (methods.empty() ? "" : ",") + std::string(to_string(m));
  for (const auto& t : tangent_spec) tangents += (tangents.empty() ? "" : ";") + to_string(t);
  return {
      {"train_limit", std::to_string(train_limit)},
      {"test_limit", std::to_string(test_limit)},
      {"k_neighbors", std::to_string(k_neighbors)},
      {"negatives_per_exemplar",
       negatives_per_exemplar ? std::to_string(negatives_per_exemplar) : "all-other-classes"},
      {"tangent_spec", tangents.empty() ? "none" : tangents},
      {"methods", methods},
      {"seed", std::to_string(seed)},
      {"margin", format_exact(margin)},
      {"soft_c", soft_c ? format_exact(*soft_c) : "hard"},
      {"esvm_c", format_exact(esvm_c)},
      {"tolerance", format_exact(solver.tolerance)},
  };
}

Pool::Pool(std::shared_ptr<const LabeledSet> data) : data_(std::move(data)) {
  simd::gram(data_->features, gram_);
}

AnchorView pool_anchor(const Pool& pool, std::size_t i) {
  AnchorView v;
  v.x = pool.data().features.row(i);
  v.pool_dots = pool.gram().row(i);
  v.self_dot = pool.gram()(i, i);
  v.pool_index = i;
  return v;
}

ExemplarModel learn_exemplar(const Pool& pool, const AnchorView& anchor,
                             std::span<const std::size_t> negatives, Method method,
                             const ExperimentConfig& cfg, std::uint64_t seed,
                             const RasterImage* image) {
  const RowMatrix& x = pool.data().features;
  const RowMatrix& g = pool.gram();
  const std::size_t n = negatives.size();
  const std::size_t d = x.cols();
  ExemplarModel model;
  model.method = method;
  if (method == Method::L2) return model;
  if (n == 0) throw Error(ErrorCode::InvalidArgument, "exemplar has no negatives");

  // <x_a - x0, x_b - x0> from Gram entries; diagonal computed directly.
  RowMatrix dots(n, n);
  for (std::size_t a = 0; a < n; ++a) {
    const std::size_t ia = negatives[a];
    const double base = anchor.pool_dots[ia];
    dots(a, a) = simd::squared_distance(x.row(ia), anchor.x);
    for (std::size_t b = a + 1; b < n; ++b) {
      const std::size_t ib = negatives[b];
      const double v = g(ia, ib) - base - anchor.pool_dots[ib] + anchor.self_dot;
      dots(a, b) = v;
      dots(b, a) = v;
    }
  }
  for (std::size_t a = 0; a < n; ++a) {
    if (dots(a, a) == 0.0) {
      model.warnings.push_back("degenerate negative at pool index " + std::to_string(negatives[a]));
      for (std::size_t b = 0; b < n; ++b) dots(a, b) = dots(b, a) = 0.0;
    }
  }

  SolverConfig scfg = cfg.solver;
  scfg.shuffle_seed = seed;

  if (is_mahalanobis(method)) {
    RowMatrix coeffs;  // <x_a - x0, b>
    if (method == Method::InvMahal) {
      const TangentSet ts = anchor_tangents(anchor.x, image, cfg);
      model.basis = ts.basis();
      const std::size_t m = model.basis.rows();
      model.anchor_basis_dots.resize(m);
      for (std::size_t b = 0; b < m; ++b) {
        model.anchor_basis_dots[b] = simd::dot(anchor.x, model.basis.row(b));
      }
      coeffs = RowMatrix(n, m);
      std::vector<double> z(d);
      std::size_t alive = 0;
      for (std::size_t a = 0; a < n; ++a) {
        const auto row = x.row(negatives[a]);
        if (m > 0) {
          simd::active().dot_panel(row.data(), d, 1, model.basis.data(), d, m, d,
                                   coeffs.row(a).data(), m);
        }
        for (std::size_t b = 0; b < m; ++b) coeffs(a, b) -= model.anchor_basis_dots[b];
        if (dots(a, a) == 0.0) continue;
        // Squared norm of the projected difference, computed explicitly.
        for (std::size_t j = 0; j < d; ++j) z[j] = row[j] - anchor.x[j];
        for (std::size_t b = 0; b < m; ++b) simd::axpy(-coeffs(a, b), model.basis.row(b), z);
        const double zz = simd::dot(z, z);
        if (std::sqrt(zz) <= kSpanTolerance * std::sqrt(dots(a, a))) {
          for (std::size_t b = 0; b < n; ++b) dots(a, b) = dots(b, a) = 0.0;
          continue;
        }
        ++alive;
        for (std::size_t b = 0; b < a; ++b) {
          if (dots(b, b) == 0.0) continue;
          double v = dots(a, b);
          for (std::size_t k = 0; k < m; ++k) v -= coeffs(a, k) * coeffs(b, k);
          dots(a, b) = dots(b, a) = v;
        }
        dots(a, a) = zz;
      }
      if (alive == 0) throw Error(ErrorCode::Infeasible, "every negative lies in the tangent span");
    }

    const DenseKernel kernel(std::move(dots), KernelKind::Quadratic);
    const std::vector<double> linear(n, cfg.margin);
    std::optional<double> upper = cfg.soft_c;
    DualSolution sol;
    try {
      sol = solve_box_dual(kernel, linear, upper, scfg);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Infeasible || upper || method != Method::InvMahal) throw;
      upper = scfg.fallback_soft_c;
      model.warnings.push_back("projected negatives not separable; soft margin fallback");
      sol = solve_box_dual(kernel, linear, upper, scfg);
    }
    if (!sol.converged) {
      throw Error(ErrorCode::IterationLimit, "KKT violation " + format_exact(sol.kkt_violation));
    }
    model.sweeps = sol.iterations;
    model.kkt_violation = sol.kkt_violation;
    const double top = *std::max_element(sol.alphas.begin(), sol.alphas.end());
    const double cut = scfg.support_threshold * top;
    const std::size_t m = model.basis.rows();
    model.support_basis_dots = RowMatrix(0, m);
    for (std::size_t a = 0; a < n; ++a) {
      if (sol.alphas[a] > cut && sol.alphas[a] > 0.0) {
        model.support.push_back(negatives[a]);
        model.alphas.push_back(sol.alphas[a]);
        if (method == Method::InvMahal) model.support_basis_dots.append_row(coeffs.row(a));
      }
    }
    return model;
  }

  // Exemplar-SVM: linear kernel, negatives +1, optional positives -1.
  std::vector<std::vector<double>> positives;
  if (method == Method::EsvmShifts) {
    if (image == nullptr) throw Error(ErrorCode::InvalidArgument, "eSVM+shifts needs image data");
    for (const auto& t : make_tangents(*image, cfg.tangent_spec)) {
      std::vector<double> p(t.values().begin(), t.values().end());
      simd::axpy(-1.0, anchor.x, p);
      positives.push_back(std::move(p));
    }
  }
  const std::size_t np = positives.size();
  const std::size_t total = n + np;
  RowMatrix all(total, total);
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = 0; b < n; ++b) all(a, b) = dots(a, b);
  }
  for (std::size_t j = 0; j < np; ++j) {
    const double px = simd::dot(positives[j], anchor.x);
    for (std::size_t a = 0; a < n; ++a) {
      const double v =
          dots(a, a) == 0.0 ? 0.0 : simd::dot(positives[j], x.row(negatives[a])) - px;
      all(n + j, a) = all(a, n + j) = v;
    }
    for (std::size_t l = 0; l <= j; ++l) {
      const double v = simd::dot(positives[j], positives[l]);
      all(n + j, n + l) = all(n + l, n + j) = v;
    }
  }
  std::vector<double> labels(total, 1.0), linear(total, cfg.margin);
  for (std::size_t j = 0; j < np; ++j) {
    labels[n + j] = -1.0;
    linear[n + j] = 0.0;
  }
  const DenseKernel kernel(std::move(all), KernelKind::Linear, labels);
  const DualSolution sol = solve_box_dual(kernel, linear, cfg.esvm_c, scfg);
  if (!sol.converged) {
    throw Error(ErrorCode::IterationLimit, "KKT violation " + format_exact(sol.kkt_violation));
  }
  model.sweeps = sol.iterations;
  model.kkt_violation = sol.kkt_violation;
  model.weights.assign(d, 0.0);
  double alpha_sum = 0.0;
  for (std::size_t a = 0; a < n; ++a) {
    if (sol.alphas[a] == 0.0) continue;
    simd::axpy(sol.alphas[a], x.row(negatives[a]), model.weights);
    alpha_sum += sol.alphas[a];
    model.support.push_back(negatives[a]);
    model.alphas.push_back(sol.alphas[a]);
  }
  simd::axpy(-alpha_sum, anchor.x, model.weights);
  for (std::size_t j = 0; j < np; ++j) {
    if (sol.alphas[n + j] != 0.0) simd::axpy(-sol.alphas[n + j], positives[j], model.weights);
  }
  model.anchor_weight_dot = simd::dot(model.weights, anchor.x);
  return model;
}

LocalMetric model_metric(const Pool& pool, std::span<const double> anchor, const ExemplarModel& model,
                         const ExperimentConfig& cfg, const RasterImage* image) {
  FeatureVector x0(anchor);
  if (model.method == Method::L2) return LocalMetric::identity(std::move(x0));
  if (!is_mahalanobis(model.method)) {
    throw Error(ErrorCode::InvalidArgument, "exemplar-SVM models are not Mahalanobis metrics");
  }
  const std::size_t d = anchor.size();
  RowMatrix dirs(model.support.size(), d);
  for (std::size_t k = 0; k < model.support.size(); ++k) {
    auto out = dirs.row(k);
    const auto xk = pool.data().features.row(model.support[k]);
    for (std::size_t j = 0; j < d; ++j) out[j] = xk[j] - anchor[j];
  }
  std::optional<TangentSet> basis;
  if (model.method == Method::InvMahal) {
    basis = anchor_tangents(anchor, image, cfg);
    project_rows(*basis, dirs);
  }
  ConfigEcho echo = model_echo(cfg, model, 0);
  echo.erase(echo.begin() + 3);  // shuffle seed is not recoverable here
  return LocalMetric(std::move(x0), model.alphas, std::move(dirs), std::move(basis), std::move(echo));
}

MetricBank::MetricBank(std::shared_ptr<const Pool> pool, Method method, ExperimentConfig cfg,
                       std::vector<ExemplarModel> models)
    : pool_(std::move(pool)), method_(method), cfg_(std::move(cfg)), models_(std::move(models)) {
  if (models_.size() != pool_->size()) {
    throw Error(ErrorCode::DimensionMismatch, "one model per pool datum");
  }
}

std::size_t MetricBank::failures() const {
  return std::size_t(std::count_if(models_.begin(), models_.end(),
                                   [](const ExemplarModel& m) { return m.failure.has_value(); }));
}

LocalMetric MetricBank::metric(std::size_t i) const {
  const LabeledSet& data = pool_->data();
  std::optional<RasterImage> img;
  if (data.has_image_shape()) img = data.image(i);
  return model_metric(*pool_, data.features.row(i), models_.at(i), cfg_, img ? &*img : nullptr);
}

RowMatrix MetricBank::score(const RowMatrix& queries) const {
  const LabeledSet& data = pool_->data();
  const RowMatrix& g = pool_->gram();
  const std::size_t nq = queries.rows();
  const std::size_t ne = models_.size();
  if (nq > 0 && queries.cols() != data.dimension()) {
    throw Error(ErrorCode::DimensionMismatch, "query dimension differs from training data");
  }
  RowMatrix out(nq, ne);
  constexpr double inf = std::numeric_limits<double>::infinity();

  // Stacked per-exemplar rows that need a dot with every query.
  RowMatrix stacked(0, data.dimension());
  std::vector<std::size_t> offset(ne, 0);
  if (method_ == Method::InvMahal) {
    for (std::size_t i = 0; i < ne; ++i) {
      offset[i] = stacked.rows();
      for (std::size_t b = 0; b < models_[i].basis.rows(); ++b) stacked.append_row(models_[i].basis.row(b));
    }
  } else if (method_ == Method::Esvm || method_ == Method::EsvmShifts) {
    for (std::size_t i = 0; i < ne; ++i) {
      offset[i] = stacked.rows();
      if (models_[i].failure) {
        stacked.append_row(std::vector<double>(data.dimension(), 0.0));
      } else {
        stacked.append_row(models_[i].weights);
      }
    }
  }

  const std::size_t batches = (nq + kScoreBatch - 1) / kScoreBatch;
  parallel_for(batches, cfg_.workers, [&](std::size_t bi) {
    const std::size_t q0 = bi * kScoreBatch;
    const std::size_t q1 = std::min(nq, q0 + kScoreBatch);
    RowMatrix batch(0, data.dimension());
    for (std::size_t q = q0; q < q1; ++q) batch.append_row(queries.row(q));
    RowMatrix cross, extra;
    simd::cross_gram(batch, data.features, cross);
    if (!stacked.empty()) simd::cross_gram(batch, stacked, extra);

    for (std::size_t q = q0; q < q1; ++q) {
      const auto t = cross.row(q - q0);
      const double qq = simd::dot(queries.row(q), queries.row(q));
      auto dist = out.row(q);
      for (std::size_t i = 0; i < ne; ++i) {
        const ExemplarModel& m = models_[i];
        if (m.failure) {
          dist[i] = inf;
          continue;
        }
        switch (method_) {
          case Method::L2:
            dist[i] = std::max(0.0, qq - 2.0 * t[i] + g(i, i));
            break;
          case Method::Esvm:
          case Method::EsvmShifts:
            dist[i] = extra(q - q0, offset[i]) - m.anchor_weight_dot;
            break;
          case Method::LocalMahal:
          case Method::InvMahal: {
            const double base = g(i, i) - t[i];
            const std::size_t nb = m.basis.rows();
            double s = 0.0;
            for (std::size_t k = 0; k < m.support.size(); ++k) {
              const std::size_t sk = m.support[k];
              double p = t[sk] - g(sk, i) + base;
              for (std::size_t b = 0; b < nb; ++b) {
                p -= m.support_basis_dots(k, b) *
                     (extra(q - q0, offset[i] + b) - m.anchor_basis_dots[b]);
              }
              s += m.alphas[k] * p * p;
            }
            dist[i] = s;
            break;
          }
        }
      }
    }
  });
  return out;
}

std::vector<std::size_t> exemplar_negatives(const LabeledSet& data, std::size_t i,
                                            std::size_t limit, std::uint64_t seed) {
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < data.size(); ++j) {
    if (data.labels[j] != data.labels[i]) out.push_back(j);
  }
  if (limit > 0 && out.size() > limit) {
    std::mt19937_64 rng(mix_seed(seed, i));
    // Partial Fisher-Yates: the first `limit` slots hold a uniform sample.
    for (std::size_t s = 0; s < limit; ++s) {
      const std::size_t r = s + std::size_t(rng() % (out.size() - s));
      std::swap(out[s], out[r]);
    }
    out.resize(limit);
    std::sort(out.begin(), out.end());
  }
  return out;
}

MetricBank learn_all_metrics(std::shared_ptr<const Pool> pool, Method method,
                             const ExperimentConfig& cfg) {
  cfg.validate();
  const LabeledSet& data = pool->data();
  std::vector<int> distinct(data.labels.begin(), data.labels.end());
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 2) throw Error(ErrorCode::InvalidArgument, "need at least two classes");
  if (needs_tangents(method) && !data.has_image_shape()) {
    throw Error(ErrorCode::InvalidArgument,
                std::string(to_string(method)) + " needs image-shaped data for tangents");
  }

  std::vector<ExemplarModel> models(data.size());
  parallel_for(data.size(), cfg.workers, [&](std::size_t i) {
    const std::uint64_t seed = mix_seed(cfg.seed, i);
    try {
      const auto negs = exemplar_negatives(data, i, cfg.negatives_per_exemplar, cfg.seed);
      std::optional<RasterImage> img;
      if (data.has_image_shape()) img = data.image(i);
      models[i] = learn_exemplar(*pool, pool_anchor(*pool, i), negs, method, cfg, seed,
                                 img ? &*img : nullptr);
    } catch (const std::exception& e) {
      models[i] = ExemplarModel{};
      models[i].method = method;
      models[i].failure = e.what();
    }
  });
  return MetricBank(std::move(pool), method, cfg, std::move(models));
}

int knn_vote(std::span<const double> distances, std::span<const int> labels, std::size_t k) {
  if (distances.size() != labels.size()) {
    throw Error(ErrorCode::DimensionMismatch, "one label per distance");
  }
  if (k == 0 || k > distances.size()) {
    throw Error(ErrorCode::InvalidArgument, "k must be in [1, number of exemplars]");
  }
  std::vector<std::size_t> order(distances.size());
  std::iota(order.begin(), order.end(), 0);
  auto closer = [&](std::size_t a, std::size_t b) {
    return distances[a] < distances[b] || (distances[a] == distances[b] && a < b);
  };
  std::partial_sort(order.begin(), order.begin() + std::ptrdiff_t(k), order.end(), closer);
  std::map<int, std::pair<std::size_t, double>> votes;  // label -> (count, distance sum)
  for (std::size_t r = 0; r < k; ++r) {
    auto& v = votes[labels[order[r]]];
    ++v.first;
    v.second += distances[order[r]];
  }
  int best = votes.begin()->first;
  auto best_v = votes.begin()->second;
  for (const auto& [label, v] : votes) {
    if (v.first > best_v.first || (v.first == best_v.first && v.second < best_v.second)) {
      best = label;
      best_v = v;
    }
  }
  return best;
}

int knn_classify(std::span<const LocalMetric> metrics, std::span<const int> labels,
                 std::span<const double> query, std::size_t k) {
  if (k > metrics.size()) throw Error(ErrorCode::InvalidArgument, "k exceeds number of metrics");
  std::vector<double> dist(metrics.size());
  for (std::size_t i = 0; i < metrics.size(); ++i) dist[i] = mahal_distance_sq(metrics[i], query);
  return knn_vote(dist, labels, k);
}

double LinearScorer::score(std::span<const double> q) const {
  if (q.size() != anchor.size()) throw Error(ErrorCode::DimensionMismatch, "query dimension");
  return simd::dot(w, q) - simd::dot(w, anchor.values());
}

LinearScorer exemplar_svm_baseline(const FeatureVector& x0, std::span<const FeatureVector> negatives,
                                   std::span<const FeatureVector> positives,
                                   const ExperimentConfig& cfg) {
  validate_problem(x0, negatives);
  validate_problem(x0, positives);
  if (negatives.empty()) throw Error(ErrorCode::InvalidArgument, "need at least one negative");
  const std::size_t n = negatives.size();
  const std::size_t total = n + positives.size();
  RowMatrix z(total, x0.size());
  std::vector<double> labels(total, 1.0), linear(total, cfg.margin);
  for (std::size_t i = 0; i < total; ++i) {
    const FeatureVector& v = i < n ? negatives[i] : positives[i - n];
    for (std::size_t j = 0; j < x0.size(); ++j) z(i, j) = v[j] - x0[j];
    if (i >= n) {
      labels[i] = -1.0;
      linear[i] = 0.0;
    }
  }
  const auto kernel = make_kernel(z, KernelKind::Linear, cfg.solver, labels);
  const DualSolution sol = solve_box_dual(*kernel, linear, cfg.esvm_c, cfg.solver);
  if (!sol.converged) throw Error(ErrorCode::IterationLimit, "exemplar-SVM did not converge");
  std::vector<double> w(x0.size(), 0.0);
  for (std::size_t i = 0; i < total; ++i) {
    if (sol.alphas[i] != 0.0) simd::axpy(sol.alphas[i] * labels[i], z.row(i), w);
  }
  return LinearScorer{x0, std::move(w)};
}

ClassificationResult evaluate_classification(const LabeledSet& train, const LabeledSet& test,
                                             const ExperimentConfig& cfg,
                                             const std::string& task_name) {
  cfg.validate();
  if (cfg.k_neighbors > train.size()) {
    throw Error(ErrorCode::InvalidArgument, "k exceeds the number of training exemplars");
  }
  if (test.size() > 0 && test.dimension() != train.dimension()) {
    throw Error(ErrorCode::DimensionMismatch, "train and test dimensions differ");
  }
  // Test labels are matched to training ids by name.
  std::map<std::string, int> train_id;
  for (std::size_t i = 0; i < train.label_names.size(); ++i) train_id[train.label_names[i]] = int(i);

  auto t_gram = std::chrono::steady_clock::now();
  auto pool = std::make_shared<const Pool>(std::make_shared<const LabeledSet>(train));
  const double gram_seconds = seconds_since(t_gram);

  ClassificationResult result;
  for (Method method : cfg.baseline_set) {
    EvalReport report;
    report.task_name = task_name;
    report.method = std::string(to_string(method));
    report.config_echo = cfg.echo();
    report.timings.emplace_back("gram", gram_seconds);

    const auto t0 = std::chrono::steady_clock::now();
    const MetricBank bank = learn_all_metrics(pool, method, cfg);
    report.timings.emplace_back("learn", seconds_since(t0));
    report.failures = bank.failures();

    const auto t1 = std::chrono::steady_clock::now();
    const RowMatrix scores = bank.score(test.features);
    for (std::size_t q = 0; q < test.size(); ++q) {
      const int predicted = knn_vote(scores.row(q), train.labels, cfg.k_neighbors);
      const std::string& truth = test.label_names.at(test.labels[q]);
      const auto it = train_id.find(truth);
      const bool wrong = it == train_id.end() || it->second != predicted;
      auto& tally = report.per_class[truth];
      ++tally.total;
      ++report.total;
      if (wrong) {
        ++tally.errors;
        ++report.errors;
      }
    }
    report.timings.emplace_back("classify", seconds_since(t1));
    report.error_rate = report.total ? double(report.errors) / double(report.total) : 0.0;
    report.check_consistency();
    result.reports.push_back(std::move(report));
  }
  return result;
}

LabeledSet deskew_all(const LabeledSet& set) {
  if (!set.has_image_shape()) throw Error(ErrorCode::InvalidArgument, "deskew needs image data");
  LabeledSet out = set;
  for (std::size_t i = 0; i < set.size(); ++i) {
    const RasterImage img = set.image(i);
    if (img.total_intensity() == 0.0) continue;
    const RasterImage fixed = deskew(img);
    std::copy(fixed.pixels().begin(), fixed.pixels().end(), out.features.row(i).begin());
  }
  return out;
}

LabeledSet shift_augment(const LabeledSet& set, std::span<const Transform> spec, std::uint64_t seed) {
  if (!set.has_image_shape()) throw Error(ErrorCode::InvalidArgument, "augmentation needs image data");
  if (spec.empty()) throw Error(ErrorCode::InvalidArgument, "no transformations to augment with");
  LabeledSet out = set;
  std::mt19937_64 rng(mix_seed(seed, 0xa06));
  for (std::size_t i = 0; i < set.size(); ++i) {
    const Transform& t = spec[rng() % spec.size()];
    out.features.append_row(apply(set.image(i), t).pixels());
    out.labels.push_back(set.labels[i]);
  }
  return out;
}

std::pair<LabeledSet, LabeledSet> split_subsample(const LabeledSet& pool, std::size_t train,
                                                  std::size_t test, std::uint64_t seed) {
  if (train + test > pool.size()) {
    throw Error(ErrorCode::InvalidArgument, "subsample larger than the pool");
  }
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix_seed(seed, 0x5b1));
  for (std::size_t s = 0; s < train + test; ++s) {
    std::swap(order[s], order[s + std::size_t(rng() % (order.size() - s))]);
  }
  std::vector<std::size_t> tr(order.begin(), order.begin() + std::ptrdiff_t(train));
  std::vector<std::size_t> te(order.begin() + std::ptrdiff_t(train),
                              order.begin() + std::ptrdiff_t(train + test));
  std::sort(tr.begin(), tr.end());
  std::sort(te.begin(), te.end());
  return {pool.subset(tr), pool.subset(te)};
}

PairSet parse_pair_table(std::string_view text) {
  const LabeledSet rows = parse_feature_table(text);
  if (rows.size() == 0) throw Error(ErrorCode::ParseError, "pair table is empty", 1);
  if (rows.dimension() % 2 != 0) {
    throw Error(ErrorCode::ParseError, "pair rows need an even number of values", 1);
  }
  PairSet out;
  const std::size_t d = rows.dimension() / 2;
  out.first = RowMatrix(0, d);
  out.second = RowMatrix(0, d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const std::string& tag = rows.label_names[rows.labels[i]];
    if (tag != "same" && tag != "diff") {
      throw Error(ErrorCode::ParseError, "pair label must be 'same' or 'diff'", i + 1);
    }
    out.same.push_back(tag == "same");
    out.first.append_row(rows.features.row(i).subspan(0, d));
    out.second.append_row(rows.features.row(i).subspan(d, d));
  }
  return out;
}

PairSet read_pair_table(const std::filesystem::path& path) {
  return parse_pair_table(read_file(path));
}

namespace {

void check_pair_inputs(const PairSet& pairs, const LabeledSet& bank, const ExperimentConfig& cfg) {
  if (bank.size() == 0) throw Error(ErrorCode::InvalidArgument, "empty negatives bank");
  if (bank.dimension() != pairs.first.cols()) {
    throw Error(ErrorCode::DimensionMismatch, "bank and pair dimensions differ");
  }
  cfg.validate();
  for (Method m : cfg.baseline_set) {
    if (needs_tangents(m) && pairs.image_width == 0) {
      throw Error(ErrorCode::InvalidArgument,
                  std::string(to_string(m)) + " needs an image shape for the pairs");
    }
  }
}

std::vector<double> score_pairs(const PairSet& pairs, const Pool& pool, Method method,
                                const ExperimentConfig& cfg) {
  const LabeledSet& bank = pool.data();
  const std::size_t d = bank.dimension();
  const std::size_t np = pairs.size();
  const bool images = pairs.image_width > 0;

  // Negatives: the whole bank, or a seeded subsample shared by all anchors.
  std::vector<std::size_t> negs(bank.size());
  std::iota(negs.begin(), negs.end(), 0);
  if (cfg.negatives_per_exemplar > 0 && cfg.negatives_per_exemplar < negs.size()) {
    std::mt19937_64 rng(mix_seed(cfg.seed, 0xba4c));
    for (std::size_t s = 0; s < cfg.negatives_per_exemplar; ++s) {
      std::swap(negs[s], negs[s + std::size_t(rng() % (negs.size() - s))]);
    }
    negs.resize(cfg.negatives_per_exemplar);
    std::sort(negs.begin(), negs.end());
  }

  std::vector<double> score(np, 0.0);
  parallel_for(np, cfg.workers, [&](std::size_t p) {
    const auto a = pairs.first.row(p);
    const auto b = pairs.second.row(p);
    if (method == Method::L2) {
      score[p] = simd::squared_distance(a, b);
      return;
    }
    // One model per side; the score averages both directions.
    auto one_side = [&](std::span<const double> x, std::span<const double> y, std::uint64_t side) {
      std::vector<double> dots(bank.size());
      simd::active().dot_panel(x.data(), d, 1, bank.features.data(), d, bank.size(), d, dots.data(),
                               bank.size());
      AnchorView anchor{x, dots, simd::dot(x, x), std::nullopt};
      std::optional<RasterImage> img;
      if (images) img = RasterImage::from_features(x, pairs.image_width, pairs.image_height);
      const ExemplarModel model = learn_exemplar(pool, anchor, negs, method, cfg,
                                                 mix_seed(cfg.seed, 2 * p + side), img ? &*img : nullptr);
      if (is_mahalanobis(method)) {
        return mahal_distance_sq(model_metric(pool, x, model, cfg, img ? &*img : nullptr), y);
      }
      return simd::dot(model.weights, y) - model.anchor_weight_dot;
    };
    score[p] = 0.5 * (one_side(a, b, 0) + one_side(b, a, 1));
  });
  return score;
}

}  // namespace

std::vector<double> pair_scores(const PairSet& pairs, const LabeledSet& negatives_bank, Method method,
                                const ExperimentConfig& cfg) {
  check_pair_inputs(pairs, negatives_bank, cfg);
  const Pool pool(std::make_shared<const LabeledSet>(negatives_bank));
  return score_pairs(pairs, pool, method, cfg);
}

std::vector<EvalReport> verify_pairs(const PairSet& pairs, const LabeledSet& negatives_bank,
                                     std::size_t folds, const ExperimentConfig& cfg) {
  if (folds < 2) throw Error(ErrorCode::InsufficientFolds, "need at least two folds");
  if (pairs.size() < folds) throw Error(ErrorCode::InsufficientFolds, "fewer pairs than folds");
  check_pair_inputs(pairs, negatives_bank, cfg);
  const Pool pool(std::make_shared<const LabeledSet>(negatives_bank));
  const std::size_t np = pairs.size();

  std::vector<EvalReport> reports;
  for (Method method : cfg.baseline_set) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<double> score = score_pairs(pairs, pool, method, cfg);

    EvalReport report;
    report.task_name = "verification";
    report.method = std::string(to_string(method));
    report.config_echo = cfg.echo();
    report.config_echo.emplace_back("folds", std::to_string(folds));
    report.timings.emplace_back("score_pairs", seconds_since(t0));

    for (std::size_t f = 0; f < folds; ++f) {
      const std::size_t lo = f * np / folds;
      const std::size_t hi = (f + 1) * np / folds;
      // Threshold maximizing training-fold accuracy; "same" iff score <= t.
      std::vector<std::pair<double, bool>> train_scores;
      for (std::size_t p = 0; p < np; ++p) {
        if (p < lo || p >= hi) train_scores.emplace_back(score[p], pairs.same[p]);
      }
      std::sort(train_scores.begin(), train_scores.end());
      std::size_t diff_total = 0;
      for (const auto& s : train_scores) diff_total += !s.second;
      // Below every score: all pairs called "diff".
      std::size_t best_correct = diff_total;
      double threshold = train_scores.front().first - 1.0;
      std::size_t same_below = 0, diff_below = 0;
      for (std::size_t r = 0; r < train_scores.size(); ++r) {
        (train_scores[r].second ? same_below : diff_below) += 1;
        if (r + 1 < train_scores.size() && train_scores[r + 1].first == train_scores[r].first) continue;
        const std::size_t correct = same_below + (diff_total - diff_below);
        if (correct > best_correct) {
          best_correct = correct;
          threshold = r + 1 < train_scores.size()
                          ? 0.5 * (train_scores[r].first + train_scores[r + 1].first)
                          : train_scores[r].first + 1.0;
        }
      }
      std::size_t wrong = 0;
      for (std::size_t p = lo; p < hi; ++p) {
        const bool said_same = score[p] <= threshold;
        const bool err = said_same != pairs.same[p];
        wrong += err;
        auto& tally = report.per_class[pairs.same[p] ? "same" : "diff"];
        ++tally.total;
        tally.errors += err;
      }
      report.errors += wrong;
      report.total += hi - lo;
      report.per_fold_errors.push_back(double(wrong) / double(hi - lo));
    }
    report.error_rate = double(report.errors) / double(report.total);
    const double mean = std::accumulate(report.per_fold_errors.begin(), report.per_fold_errors.end(), 0.0) /
                        double(folds);
    double var = 0.0;
    for (double e : report.per_fold_errors) var += (e - mean) * (e - mean);
    report.error_std = std::sqrt(var / double(folds - 1));
    report.check_consistency();
    reports.push_back(std::move(report));
  }
  return reports;
}

std::vector<RasterImage> make_stroke_images(std::size_t count, std::size_t side, std::uint64_t seed) {
  if (side < 4) throw Error(ErrorCode::InvalidArgument, "stroke images need side >= 4");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> pos(0.2 * double(side), 0.8 * double(side));
  const double radius = std::max(1.0, double(side) / 14.0);
  std::vector<RasterImage> out;
  out.reserve(count);
  std::vector<double> px(side * side);
  for (std::size_t n = 0; n < count; ++n) {
    std::fill(px.begin(), px.end(), 0.0);
    const int strokes = 1 + int(rng() % 3);
    for (int s = 0; s < strokes; ++s) {
      const double x0 = pos(rng), y0 = pos(rng), x1 = pos(rng), y1 = pos(rng);
      const double len2 = (x1 - x0) * (x1 - x0) + (y1 - y0) * (y1 - y0);
      for (std::size_t y = 0; y < side; ++y) {
        for (std::size_t x = 0; x < side; ++x) {
          // Distance from the pixel to the segment.
          double t = len2 > 0 ? ((double(x) - x0) * (x1 - x0) + (double(y) - y0) * (y1 - y0)) / len2 : 0.0;
          t = std::clamp(t, 0.0, 1.0);
          const double dx = double(x) - (x0 + t * (x1 - x0));
          const double dy = double(y) - (y0 + t * (y1 - y0));
          const double v = std::clamp(1.5 - std::sqrt(dx * dx + dy * dy) / radius, 0.0, 1.0);
          px[y * side + x] = std::max(px[y * side + x], v);
        }
      }
    }
    out.emplace_back(side, side, px);
  }
  return out;
}

std::vector<FeatureVector> mnist_like_negatives(const LabeledSet& pool, std::size_t query,
                                                std::size_t count) {
  std::vector<std::size_t> others;
  for (std::size_t j = 0; j < pool.size(); ++j) {
    if (pool.labels[j] != pool.labels[query]) others.push_back(j);
  }
  if (others.empty()) throw Error(ErrorCode::InvalidArgument, "pool has a single class");
  static const Transform kShifts[] = {Transform::shift(1, 0), Transform::shift(-1, 0),
                                      Transform::shift(0, 1), Transform::shift(0, -1)};
  std::vector<FeatureVector> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t j = others[k % others.size()];
    const std::size_t round = k / others.size();
    if (round == 0) {
      out.push_back(pool.feature(j));
    } else {
      const Transform& t = kShifts[(round - 1) % 4];
      out.push_back(apply(pool.image(j), t).flatten());
    }
  }
  return out;
}

BenchTable bench_solver(std::span<const std::pair<std::size_t, std::size_t>> grid,
                        std::size_t repetitions, const SolverConfig& cfg,
                        const BenchProblemFactory& factory) {
  BenchTable table;
  table.machine = machine_info();
  const std::size_t reps = std::max<std::size_t>(repetitions, 5);
  for (const auto& [n, d] : grid) {
    const ExemplarProblem problem = factory(n, d);
    BenchRow row;
    row.n = problem.size();
    row.d = problem.dimension();
    row.repetitions = reps;
    std::vector<double> times;
    for (std::size_t r = 0; r < reps; ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      const MetricBuild build = build_local_metric_detailed(problem, cfg);
      times.push_back(seconds_since(t0));
      row.sweeps = build.solution.iterations;
      row.support = build.metric.support_size();
      row.kkt_violation = build.solution.kkt_violation;
    }
    std::sort(times.begin(), times.end());
    row.median_seconds = times.size() % 2 ? times[times.size() / 2]
                                          : 0.5 * (times[times.size() / 2 - 1] + times[times.size() / 2]);
    row.min_seconds = times.front();
    row.max_seconds = times.back();
    table.rows.push_back(row);
  }
  return table;
}

BenchProblemFactory synthetic_bench_factory(std::uint64_t seed) {
  return [seed](std::size_t n, std::size_t d) {
    const auto side = std::max<std::size_t>(4, std::size_t(std::ceil(std::sqrt(double(d)))));
    const auto images = make_stroke_images(n + 1, side, mix_seed(seed, n * 1'000'003 + d));
    auto flat = [d](const RasterImage& img) {
      return FeatureVector(img.pixels().subspan(0, std::min(d, img.pixels().size())));
    };
    std::vector<FeatureVector> negatives;
    for (std::size_t i = 1; i <= n; ++i) negatives.push_back(flat(images[i]));
    return ExemplarProblem(flat(images[0]), std::move(negatives));
  };
}

double loglog_slope(std::span<const BenchRow> rows) {
  if (rows.size() < 2) throw Error(ErrorCode::InvalidArgument, "slope needs two rows");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& r : rows) {
    const double x = std::log(double(r.n));
    const double y = std::log(r.median_seconds);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double k = double(rows.size());
  return (k * sxy - sx * sy) / (k * sxx - sx * sx);
}

ConfigEcho machine_info() {
  ConfigEcho info;
  std::string model = "unknown";
  std::ifstream cpu("/proc/cpuinfo");
  for (std::string line; std::getline(cpu, line);) {
    if (line.rfind("model name", 0) == 0) {
      model = line.substr(line.find(':') + 2);
      break;
    }
  }
  info.emplace_back("cpu", model);
  info.emplace_back("hardware_threads", std::to_string(std::thread::hardware_concurrency()));
  info.emplace_back("simd", std::string(simd::name(simd::active_level())));
  info.emplace_back("compiler", __VERSION__);
  return info;
}

}  // namespace invmahal
