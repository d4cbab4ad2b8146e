#pragma once

// Evaluation protocols: per-exemplar metric learning over a training pool,
// local-metric kNN classification, same/not-same pair verification,
// exemplar-SVM baselines and solver timing.
//
// Per-exemplar learning works from the Gram matrix of the training pool:
// <x_i - x0, x_j - x0> needs four Gram lookups, so assembling one
// exemplar's kernel costs O(n^2) instead of O(n^2 d). Models keep support
// indices into the pool; explicit LocalMetric objects are produced on
// demand.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "invmahal/core.hpp"
#include "invmahal/data_io.hpp"
#include "invmahal/image.hpp"
#include "invmahal/solver.hpp"

namespace invmahal {

enum class Method { L2, Esvm, EsvmShifts, LocalMahal, InvMahal };

std::string_view to_string(Method m) noexcept;
/// Comma-separated method names. Throws InvalidArgument.
std::vector<Method> parse_methods(std::string_view list);
bool needs_tangents(Method m) noexcept;

struct ExperimentConfig {
  std::size_t train_limit = 2000;
  std::size_t test_limit = 1000;
  std::size_t k_neighbors = 3;
  std::size_t negatives_per_exemplar = 1000;  // 0: every datum of another class
  std::vector<Transform> tangent_spec = parse_transforms("shift:1");
  std::vector<Method> baseline_set = {Method::L2, Method::Esvm, Method::EsvmShifts,
                                      Method::LocalMahal, Method::InvMahal};
  std::uint64_t seed = 1;
  std::size_t workers = 1;
  double margin = ExemplarProblem::kDefaultMargin;
  std::optional<double> soft_c;  // metric solves; empty = hard margin
  double esvm_c = 1.0;
  SolverConfig solver;

  /// k odd and >= 1, limits >= 1, workers >= 1. Throws InvalidArgument.
  void validate() const;
  ConfigEcho echo() const;
};

/// Training pool with its Gram matrix.
class Pool {
 public:
  explicit Pool(std::shared_ptr<const LabeledSet> data);

  const LabeledSet& data() const noexcept { return *data_; }
  const RowMatrix& gram() const noexcept { return gram_; }
  std::size_t size() const noexcept { return data_->size(); }

 private:
  std::shared_ptr<const LabeledSet> data_;
  RowMatrix gram_;
};

/// Anchor point expressed against a pool.
struct AnchorView {
  std::span<const double> x;
  std::span<const double> pool_dots;   // <x, pool_j>
  double self_dot = 0.0;
  std::optional<std::size_t> pool_index;  // set when the anchor is a pool row
};

AnchorView pool_anchor(const Pool& pool, std::size_t i);

/// One learned exemplar model, in pool coordinates.
struct ExemplarModel {
  Method method = Method::LocalMahal;
  std::vector<std::size_t> support;    // pool indices with nonzero weight
  std::vector<double> alphas;          // one per support index
  RowMatrix basis;                     // tangent basis (invariant metric)
  RowMatrix support_basis_dots;        // <x_k - x0, b>, support x basis
  std::vector<double> anchor_basis_dots;  // <x0, b>
  std::vector<double> weights;         // explicit w for exemplar-SVM
  double anchor_weight_dot = 0.0;      // <w, x0>
  std::size_t sweeps = 0;
  double kkt_violation = 0.0;
  std::vector<std::string> warnings;
  std::optional<std::string> failure;
};

/// Learns one exemplar. `negatives` are pool indices. Tangent methods need
/// `image` (the anchor as an image). Throws on solver failure.
ExemplarModel learn_exemplar(const Pool& pool, const AnchorView& anchor,
                             std::span<const std::size_t> negatives, Method method,
                             const ExperimentConfig& cfg, std::uint64_t seed,
                             const RasterImage* image = nullptr);

/// Explicit support-form metric of a Mahalanobis model.
LocalMetric model_metric(const Pool& pool, std::span<const double> anchor, const ExemplarModel& model,
                         const ExperimentConfig& cfg, const RasterImage* image = nullptr);

/// One model per pool datum, anchored at that datum.
class MetricBank {
 public:
  MetricBank(std::shared_ptr<const Pool> pool, Method method, ExperimentConfig cfg,
             std::vector<ExemplarModel> models);

  Method method() const noexcept { return method_; }
  std::size_t size() const noexcept { return models_.size(); }
  const Pool& pool() const noexcept { return *pool_; }
  const ExemplarModel& model(std::size_t i) const { return models_.at(i); }
  std::size_t failures() const;

  /// Explicit LocalMetric for exemplar i (Mahalanobis methods).
  LocalMetric metric(std::size_t i) const;

  /// queries x exemplars matrix of distances (smaller = closer). Failed
  /// exemplars score +inf.
  RowMatrix score(const RowMatrix& queries) const;

 private:
  std::shared_ptr<const Pool> pool_;
  Method method_;
  ExperimentConfig cfg_;
  std::vector<ExemplarModel> models_;
};

/// Seeded negative sample for pool datum i: every other-class index, or
/// negatives_per_exemplar of them (sorted) when that is nonzero.
std::vector<std::size_t> exemplar_negatives(const LabeledSet& data, std::size_t i,
                                            std::size_t limit, std::uint64_t seed);

/// Learns a model for every pool datum on `cfg.workers` threads. Per-datum
/// failures are recorded in the model, not thrown.
MetricBank learn_all_metrics(std::shared_ptr<const Pool> pool, Method method,
                             const ExperimentConfig& cfg);

/// Majority label of the k smallest distances; ties go to the smaller sum of
/// member distances, then the smaller class id.
int knn_vote(std::span<const double> distances, std::span<const int> labels, std::size_t k);

/// Scores every metric at `query` and votes. Throws InvalidArgument when
/// k exceeds the number of metrics.
int knn_classify(std::span<const LocalMetric> metrics, std::span<const int> labels,
                 std::span<const double> query, std::size_t k);

/// Linear exemplar scorer: score(q) = <w, q - x0>.
struct LinearScorer {
  FeatureVector anchor;
  std::vector<double> w;
  double score(std::span<const double> q) const;
};

/// Fixed-bias linear SVM over x_i - x0 (label +1) and, when given,
/// positives p_j - x0 (label -1), soft margin C = cfg.esvm_c.
LinearScorer exemplar_svm_baseline(const FeatureVector& x0, std::span<const FeatureVector> negatives,
                                   std::span<const FeatureVector> positives,
                                   const ExperimentConfig& cfg);

struct ClassificationResult {
  std::vector<EvalReport> reports;   // one per method, in cfg.baseline_set order
};

/// Learns each method on `train` and classifies `test` with kNN.
ClassificationResult evaluate_classification(const LabeledSet& train, const LabeledSet& test,
                                             const ExperimentConfig& cfg,
                                             const std::string& task_name = "classification");

/// Deskews every row (requires image shape).
LabeledSet deskew_all(const LabeledSet& set);

/// Originals followed by one copy of each row under a seeded random
/// transformation from `spec`.
LabeledSet shift_augment(const LabeledSet& set, std::span<const Transform> spec, std::uint64_t seed);

/// Disjoint seeded train/test subsample of `pool`.
std::pair<LabeledSet, LabeledSet> split_subsample(const LabeledSet& pool, std::size_t train,
                                                  std::size_t test, std::uint64_t seed);

struct PairSet {
  RowMatrix first;
  RowMatrix second;
  std::vector<bool> same;
  std::size_t image_width = 0;
  std::size_t image_height = 0;
  std::size_t size() const noexcept { return same.size(); }
};

/// Rows "same|diff,a_1..a_d,b_1..b_d".
PairSet parse_pair_table(std::string_view text);
PairSet read_pair_table(const std::filesystem::path& path);

/// Symmetric pair scores s = (d_a(b) + d_b(a)) / 2 under one method; for
/// L2 the squared distance, for eSVM the averaged linear scores.
std::vector<double> pair_scores(const PairSet& pairs, const LabeledSet& negatives_bank, Method method,
                                const ExperimentConfig& cfg);

/// Same/not-same verification with folds cross-validation. Folds are
/// contiguous blocks of pairs; thresholds are fit on the other folds.
/// Throws InsufficientFolds for folds < 2.
std::vector<EvalReport> verify_pairs(const PairSet& pairs, const LabeledSet& negatives_bank,
                                     std::size_t folds, const ExperimentConfig& cfg);

struct BenchRow {
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t repetitions = 0;
  double median_seconds = 0.0;
  double min_seconds = 0.0;
  double max_seconds = 0.0;
  std::size_t sweeps = 0;
  std::size_t support = 0;
  double kkt_violation = 0.0;
};

struct BenchTable {
  std::vector<BenchRow> rows;
  ConfigEcho machine;
};

/// Synthetic digit-like images: a few thick random strokes on side x side,
/// values in [0,1].
std::vector<RasterImage> make_stroke_images(std::size_t count, std::size_t side, std::uint64_t seed);

/// Negatives for timing a solve at `query`: other-class pool rows, then
/// unit-shifted copies of them until `count` is reached.
std::vector<FeatureVector> mnist_like_negatives(const LabeledSet& pool, std::size_t query,
                                                std::size_t count);

/// Problem source for one (n, d) grid point.
using BenchProblemFactory = std::function<ExemplarProblem(std::size_t n, std::size_t d)>;

/// Median wall-clock of a full build_local_metric per grid point.
BenchTable bench_solver(std::span<const std::pair<std::size_t, std::size_t>> grid,
                        std::size_t repetitions, const SolverConfig& cfg,
                        const BenchProblemFactory& factory);

/// Factory over synthetic stroke images (d rounded up to a square side).
BenchProblemFactory synthetic_bench_factory(std::uint64_t seed);

/// Least-squares slope of log(time) against log(n).
double loglog_slope(std::span<const BenchRow> rows);

ConfigEcho machine_info();

}  // namespace invmahal
