#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "invmahal/data_io.hpp"
#include "invmahal/equivalence.hpp"
#include "invmahal/harness.hpp"
#include "invmahal/invariance.hpp"
#include "invmahal/metric.hpp"
#include "invmahal/report.hpp"

namespace invmahal::cli {

namespace {

// Bad flag values caught after parsing; reported with exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// --args-file PATH is replaced, in place, by the flags in PATH (one per line,
// "--flag value" or "--flag=value"; '#' starts a comment line).
std::vector<std::string> expand_args_files(const std::vector<std::string>& args) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    std::string path;
    if (args[i] == "--args-file") {
      if (i + 1 >= args.size()) throw UsageError("--args-file needs a path");
      path = args[++i];
    } else if (args[i].rfind("--args-file=", 0) == 0) {
      path = args[i].substr(12);
    } else {
      out.push_back(args[i]);
      continue;
    }
    std::ifstream in(path);
    if (!in) throw UsageError("cannot read args file " + path);
    for (std::string line; std::getline(in, line);) {
      line = trim(line);
      if (line.empty() || line[0] == '#') continue;
      const auto sp = line.find_first_of(" \t");
      if (sp == std::string::npos) {
        out.push_back(line);
      } else {
        out.push_back(line.substr(0, sp));
        out.push_back(trim(line.substr(sp)));
      }
    }
  }
  return out;
}

std::pair<std::size_t, std::size_t> parse_shape(const std::string& text) {
  const auto x = text.find('x');
  try {
    if (x != std::string::npos) {
      std::size_t p1 = 0, p2 = 0;
      const auto w = std::stoul(text.substr(0, x), &p1);
      const auto h = std::stoul(text.substr(x + 1), &p2);
      if (p1 == x && p2 == text.size() - x - 1 && w > 0 && h > 0) return {w, h};
    }
  } catch (const std::exception&) {
  }
  throw UsageError("image shape must look like 28x28, got '" + text + "'");
}

// Explicit shape, else the square root of the dimension when it is a square.
std::pair<std::size_t, std::size_t> image_shape(const std::string& flag, std::size_t dim) {
  if (!flag.empty()) {
    auto s = parse_shape(flag);
    if (s.first * s.second != dim) {
      throw UsageError("image shape " + flag + " does not match dimension " + std::to_string(dim));
    }
    return s;
  }
  const auto side = std::size_t(std::llround(std::sqrt(double(dim))));
  if (side * side != dim) throw UsageError("tangents need --image-shape for non-square dimension");
  return {side, side};
}

std::vector<Transform> transforms_or_usage(const std::string& spec) {
  try {
    return parse_transforms(spec);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

std::vector<Method> methods_or_usage(const std::string& list) {
  try {
    return parse_methods(list);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

std::vector<std::size_t> parse_size_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      std::size_t p = 0;
      const auto v = std::stoul(item, &p);
      if (p != item.size() || v == 0) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::exception&) {
      throw UsageError("bad size '" + item + "'");
    }
  }
  if (out.empty()) throw UsageError("empty size list");
  return out;
}

LabeledSet load_idx(const std::string& images, const std::string& labels) {
  const auto imgs = read_idx_images(images);
  const auto labs = read_idx_labels(labels);
  return from_idx(imgs, labs);
}

// Seeded subsample down to `limit` rows (order preserved).
LabeledSet limit_rows(const LabeledSet& set, std::size_t limit, std::uint64_t seed) {
  if (set.size() <= limit) return set;
  return split_subsample(set, limit, 0, seed).first;
}

// ---------------------------------------------------------------- learn

struct LearnArgs {
  std::string query;
  std::string negatives;
  double margin = ExemplarProblem::kDefaultMargin;
  std::optional<double> soft_c;
  std::string tangents;
  std::string shape;
  double tolerance = SolverConfig{}.tolerance;
  std::uint64_t seed = 1;
  std::string out;
};

int cmd_learn(const LearnArgs& a, std::ostream& out, std::ostream& err) {
  if (!(a.margin > 0)) throw UsageError("--margin must be > 0");
  if (a.soft_c && !(*a.soft_c > 0)) throw UsageError("--soft-c must be > 0");
  const auto spec = transforms_or_usage(a.tangents);

  const LabeledSet bank = read_feature_table(a.negatives);
  if (bank.size() == 0) throw Error(ErrorCode::InvalidArgument, "negatives table is empty");
  std::optional<FeatureVector> query;
  std::vector<FeatureVector> negatives;
  const bool is_index = !a.query.empty() && std::all_of(a.query.begin(), a.query.end(), ::isdigit);
  if (is_index) {
    const std::size_t i = std::stoul(a.query);
    if (i >= bank.size()) throw UsageError("--query index out of range");
    query = bank.feature(i);
    for (std::size_t j = 0; j < bank.size(); ++j) {
      if (bank.labels[j] != bank.labels[i]) negatives.push_back(bank.feature(j));
    }
  } else {
    const LabeledSet q = read_feature_table(a.query);
    if (q.size() == 0) throw Error(ErrorCode::InvalidArgument, "query table is empty");
    query = q.feature(0);
    for (std::size_t j = 0; j < bank.size(); ++j) negatives.push_back(bank.feature(j));
  }
  const ExemplarProblem problem(*query, std::move(negatives), a.margin, a.soft_c);

  SolverConfig cfg;
  cfg.tolerance = a.tolerance;
  cfg.shuffle_seed = a.seed;

  std::optional<TangentSet> ts;
  if (!spec.empty()) {
    const auto [w, h] = image_shape(a.shape, query->size());
    const auto img = RasterImage::from_features(query->values(), w, h);
    ts = build_tangent_set(*query, make_tangents(img, spec));
    // An empty tangent span leaves the plain metric unchanged.
    if (ts->basis_size() == 0) ts.reset();
  }

  const auto t0 = std::chrono::steady_clock::now();
  const MetricBuild build = ts ? build_invariant_metric_detailed(problem, *ts, cfg)
                               : build_local_metric_detailed(problem, cfg);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  for (const auto& w : build.warnings) err << "warning: " << w << "\n";
  save_metric(build.metric, a.out);

  out << "support " << build.metric.support_size() << "\n";
  out << "rank " << metric_rank(build.metric) << "\n";
  out << "solve_seconds " << seconds << "\n";
  out << "kkt_violation " << format_exact(build.solution.kkt_violation) << "\n";
  if (ts) out << "tangent_rank " << ts->basis_size() << "\n";
  return 0;
}

// ---------------------------------------------------------------- knn-eval

struct ExperimentArgs {
  std::string methods = "l2,esvm,esvm_shifts,local_mahal,inv_mahal";
  std::size_t k = 3;
  std::uint64_t seed = 1;
  std::size_t workers = 1;
  std::size_t negatives = 1000;
  std::string tangents = "shift:1";
  std::string shape;
  double margin = ExemplarProblem::kDefaultMargin;
  std::optional<double> soft_c;
  double esvm_c = 1.0;
  std::string report;
};

ExperimentConfig make_config(const ExperimentArgs& a) {
  ExperimentConfig cfg;
  cfg.baseline_set = methods_or_usage(a.methods);
  cfg.k_neighbors = a.k;
  cfg.seed = a.seed;
  cfg.workers = a.workers;
  cfg.negatives_per_exemplar = a.negatives;
  cfg.tangent_spec = transforms_or_usage(a.tangents);
  cfg.margin = a.margin;
  cfg.soft_c = a.soft_c;
  cfg.esvm_c = a.esvm_c;
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  return cfg;
}

void add_experiment_flags(CLI::App* app, ExperimentArgs& a) {
  app->add_option("--methods", a.methods,
                  "Comma list of l2, esvm, esvm_shifts, local_mahal, inv_mahal")
      ->capture_default_str();
  app->add_option("--seed", a.seed, "Seed for subsampling and solver shuffles")->capture_default_str();
  app->add_option("--workers", a.workers, "Worker threads for per-exemplar learning")->capture_default_str();
  app->add_option("--negatives", a.negatives, "Negatives per exemplar (0 = all others)")
      ->capture_default_str();
  app->add_option("--tangents", a.tangents, "Declared transformations, e.g. 'shift:1 rotate:5'")
      ->capture_default_str();
  app->add_option("--image-shape", a.shape, "WxH of table rows (default: square)");
  app->add_option("--margin", a.margin, "Required squared distance to negatives")->capture_default_str();
  app->add_option("--soft-c", a.soft_c, "Soft-margin C for metric solves (default hard)");
  app->add_option("--esvm-c", a.esvm_c, "Soft-margin C for exemplar-SVM baselines")->capture_default_str();
  app->add_option("--report", a.report, "Output stem: writes STEM.txt, STEM.csv, STEM.timings.csv")
      ->required();
}

void print_summary(std::ostream& out, std::span<const EvalReport> reports) {
  out << std::left << std::setw(14) << "method" << std::right << std::setw(12) << "error"
      << std::setw(10) << "std" << std::setw(14) << "errors/total" << std::setw(10) << "failed"
      << "\n";
  for (const auto& r : reports) {
    std::ostringstream frac;
    frac << r.errors << "/" << r.total;
    out << std::left << std::setw(14) << r.method << std::right << std::fixed << std::setprecision(4)
        << std::setw(12) << r.error_rate << std::setw(10) << r.error_std << std::setw(14)
        << frac.str() << std::setw(10) << r.failures << "\n";
    out.unsetf(std::ios::floatfield);
  }
}

struct KnnArgs {
  ExperimentArgs exp;
  std::string train_images, train_labels, test_images, test_labels;
  std::string table, test_table;
  std::size_t train_limit = 2000;
  std::size_t test_limit = 1000;
  bool deskew = false;
  bool augment = false;
};

int cmd_knn_eval(const KnnArgs& a, std::ostream& out, std::ostream&) {
  ExperimentConfig cfg = make_config(a.exp);
  cfg.train_limit = a.train_limit;
  cfg.test_limit = a.test_limit;
  try {
    cfg.validate();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const bool idx = !a.train_images.empty();
  if (idx == !a.table.empty()) throw UsageError("give either --train-images/--train-labels or --table");
  if (idx && a.train_labels.empty()) throw UsageError("--train-images needs --train-labels");
  if (a.test_images.empty() != a.test_labels.empty()) {
    throw UsageError("--test-images and --test-labels go together");
  }

  LabeledSet train, test;
  auto shaped = [&](LabeledSet s) {
    if (!idx && !a.exp.shape.empty()) {
      const auto [w, h] = image_shape(a.exp.shape, s.dimension());
      s.image_width = w;
      s.image_height = h;
    }
    return s;
  };
  const LabeledSet pool = shaped(idx ? load_idx(a.train_images, a.train_labels) : read_feature_table(a.table));
  const bool has_test = idx ? !a.test_images.empty() : !a.test_table.empty();
  if (has_test) {
    train = limit_rows(pool, cfg.train_limit, cfg.seed);
    test = limit_rows(shaped(idx ? load_idx(a.test_images, a.test_labels) : read_feature_table(a.test_table)),
                      cfg.test_limit, cfg.seed + 1);
  } else {
    if (pool.size() < 2) throw Error(ErrorCode::InvalidArgument, "dataset too small to split");
    const std::size_t tr = std::min(cfg.train_limit, pool.size() - 1);
    const std::size_t te = std::min(cfg.test_limit, pool.size() - tr);
    std::tie(train, test) = split_subsample(pool, tr, te, cfg.seed);
  }
  if (a.deskew) {
    train = deskew_all(train);
    test = deskew_all(test);
  }
  if (a.augment) test = shift_augment(test, cfg.tangent_spec, cfg.seed);

  const auto result = evaluate_classification(train, test, cfg, a.augment ? "augmented" : "classification");
  write_reports(a.exp.report, result.reports);
  out << "train " << train.size() << ", test " << test.size() << ", k " << cfg.k_neighbors << "\n";
  print_summary(out, result.reports);
  return 0;
}

// ---------------------------------------------------------------- verify-pairs

struct PairArgs {
  ExperimentArgs exp;
  std::string pairs;
  std::string bank;
  std::size_t folds = 10;
};

int cmd_verify_pairs(const PairArgs& a, std::ostream& out, std::ostream&) {
  if (a.folds < 2) throw UsageError("--folds must be >= 2");
  const ExperimentConfig cfg = make_config(a.exp);
  PairSet pairs = read_pair_table(a.pairs);
  if (!a.exp.shape.empty() ||
      std::any_of(cfg.baseline_set.begin(), cfg.baseline_set.end(), needs_tangents)) {
    const auto [w, h] = image_shape(a.exp.shape, pairs.first.cols());
    pairs.image_width = w;
    pairs.image_height = h;
  }
  const LabeledSet bank = read_feature_table(a.bank);
  const auto reports = verify_pairs(pairs, bank, a.folds, cfg);
  write_reports(a.exp.report, reports);
  out << "pairs " << pairs.size() << ", folds " << a.folds << "\n";
  print_summary(out, reports);
  return 0;
}

// ---------------------------------------------------------------- bench

struct BenchArgs {
  std::string sizes = "1000,2000,5000";
  std::size_t dim = 784;
  std::size_t reps = 5;
  std::string images, labels;
  double tolerance = SolverConfig{}.tolerance;
  std::uint64_t seed = 1;
  std::string out;
};

int cmd_bench(const BenchArgs& a, std::ostream& out, std::ostream&) {
  const auto sizes = parse_size_list(a.sizes);
  if (a.dim == 0) throw UsageError("--d must be >= 1");
  if (a.images.empty() != a.labels.empty()) throw UsageError("--images and --labels go together");
  SolverConfig cfg;
  cfg.tolerance = a.tolerance;
  cfg.shuffle_seed = a.seed;

  BenchProblemFactory factory = synthetic_bench_factory(a.seed);
  std::shared_ptr<const LabeledSet> pool;
  if (!a.images.empty()) {
    pool = std::make_shared<const LabeledSet>(load_idx(a.images, a.labels));
    if (pool->size() == 0) throw Error(ErrorCode::InvalidArgument, "empty image set");
    const std::size_t query = std::size_t(a.seed % pool->size());
    factory = [pool, query](std::size_t n, std::size_t) {
      return ExemplarProblem(pool->feature(query), mnist_like_negatives(*pool, query, n));
    };
  }
  std::vector<std::pair<std::size_t, std::size_t>> grid;
  for (auto n : sizes) grid.emplace_back(n, a.dim);
  const BenchTable table = bench_solver(grid, a.reps, cfg, factory);
  const std::string csv = format_bench_csv(table);
  if (!a.out.empty()) write_file(a.out, csv);
  out << csv;
  if (table.rows.size() >= 2) out << "loglog_slope " << loglog_slope(table.rows) << "\n";
  return 0;
}

// ---------------------------------------------------------------- oracle-check

struct OracleArgs {
  std::size_t trials = 100;
  std::uint64_t seed = 1;
  std::size_t max_n = 20;
  std::size_t max_d = 5;
};

int cmd_oracle_check(const OracleArgs& a, std::ostream& out, std::ostream& err) {
  if (a.trials == 0) throw UsageError("--trials must be >= 1");
  if (a.max_n < 1 || a.max_n > 32 || a.max_d < 1 || a.max_d > 8) {
    throw UsageError("--max-n must be in [1,32] and --max-d in [1,8]");
  }
  EquivalenceLimits limits;
  limits.max_negatives = a.max_n;
  limits.max_dimension = a.max_d;
  std::size_t failed = 0;
  double worst_obj = 0.0, worst_inv = 0.0;
  for (std::size_t t = 0; t < a.trials; ++t) {
    const auto trial = run_equivalence_trial(a.seed + t, limits);
    worst_obj = std::max(worst_obj, trial.objective_rel_error);
    worst_inv = std::max(worst_inv, trial.invariant_objective_rel_error);
    if (!trial.ok()) {
      ++failed;
      for (const auto& f : trial.failures) err << "trial seed " << trial.seed << ": " << f << "\n";
    }
  }
  out << "trials " << a.trials << ", failed " << failed << "\n";
  out << "max objective rel error " << format_exact(worst_obj) << "\n";
  out << "max invariant objective rel error " << format_exact(worst_inv) << "\n";
  return failed == 0 ? 0 : 1;
}

}  // namespace

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Local Mahalanobis metrics learned from negative examples"};
  app.name(raw_args.empty() ? "invmahal" : raw_args.front());
  app.require_subcommand(1);
  std::string args_file_doc;
  const char* args_help = "Read further flags from a file, one per line";
  app.add_option("--args-file", args_file_doc, args_help);

  LearnArgs learn;
  auto* c_learn = app.add_subcommand("learn", "Learn one local metric and write it to a file");
  c_learn->add_option("--query", learn.query, "Row index into --negatives, or a table file")->required();
  c_learn->add_option("--negatives", learn.negatives,
                      "Feature table; with an index query, rows of other labels are negatives")
      ->required();
  c_learn->add_option("--margin", learn.margin, "Required squared distance")->capture_default_str();
  c_learn->add_option("--soft-c", learn.soft_c, "Soft-margin C (default hard margin)");
  c_learn->add_option("--tangents", learn.tangents, "Declared transformations, e.g. 'shift:1'");
  c_learn->add_option("--image-shape", learn.shape, "WxH of the rows (default: square)");
  c_learn->add_option("--tolerance", learn.tolerance, "KKT tolerance")->capture_default_str();
  c_learn->add_option("--seed", learn.seed, "Solver shuffle seed")->capture_default_str();
  c_learn->add_option("--out", learn.out, "Metric file to write")->required();
  c_learn->add_option("--args-file", args_file_doc, args_help);

  KnnArgs knn;
  auto* c_knn = app.add_subcommand("knn-eval", "kNN classification with per-exemplar metrics");
  c_knn->add_option("--train-images", knn.train_images, "IDX training images");
  c_knn->add_option("--train-labels", knn.train_labels, "IDX training labels");
  c_knn->add_option("--test-images", knn.test_images, "IDX test images (default: split the training pool)");
  c_knn->add_option("--test-labels", knn.test_labels, "IDX test labels");
  c_knn->add_option("--table", knn.table, "Feature table instead of IDX files");
  c_knn->add_option("--test-table", knn.test_table, "Test feature table (default: split --table)");
  c_knn->add_option("--k", knn.exp.k, "Neighbours (odd)")->capture_default_str();
  c_knn->add_option("--train-limit", knn.train_limit, "Training exemplars")->capture_default_str();
  c_knn->add_option("--test-limit", knn.test_limit, "Test queries")->capture_default_str();
  c_knn->add_flag("--deskew", knn.deskew, "Deskew train and test images");
  c_knn->add_flag("--augment-test", knn.augment,
                  "Append one randomly transformed copy of every test image (from --tangents)");
  add_experiment_flags(c_knn, knn.exp);
  c_knn->add_option("--args-file", args_file_doc, args_help);

  PairArgs pairs;
  pairs.exp.methods = "l2,local_mahal";
  auto* c_pairs = app.add_subcommand("verify-pairs", "Same/not-same pair verification");
  c_pairs->add_option("--pairs", pairs.pairs, "Pair table: same|diff,a...,b...")->required();
  c_pairs->add_option("--bank", pairs.bank, "Feature table of negatives")->required();
  c_pairs->add_option("--folds", pairs.folds, "Cross-validation folds (>= 2)")->capture_default_str();
  add_experiment_flags(c_pairs, pairs.exp);
  c_pairs->add_option("--args-file", args_file_doc, args_help);

  BenchArgs bench;
  auto* c_bench = app.add_subcommand("bench", "Time single metric solves over a grid of n");
  c_bench->add_option("--n", bench.sizes, "Comma list of negative counts")->capture_default_str();
  c_bench->add_option("--d", bench.dim, "Dimension of synthetic problems")->capture_default_str();
  c_bench->add_option("--reps", bench.reps, "Repetitions per point (at least 5 are run)")
      ->capture_default_str();
  c_bench->add_option("--images", bench.images, "IDX images for MNIST-like negatives");
  c_bench->add_option("--labels", bench.labels, "IDX labels matching --images");
  c_bench->add_option("--tolerance", bench.tolerance, "KKT tolerance")->capture_default_str();
  c_bench->add_option("--seed", bench.seed, "Problem and shuffle seed")->capture_default_str();
  c_bench->add_option("--out", bench.out, "CSV file to write");
  c_bench->add_option("--args-file", args_file_doc, args_help);

  OracleArgs oracle;
  auto* c_oracle = app.add_subcommand("oracle-check", "Randomized solver-vs-oracle equivalence suite");
  c_oracle->add_option("--trials", oracle.trials, "Number of random problems")->capture_default_str();
  c_oracle->add_option("--seed", oracle.seed, "Seed of the first trial")->capture_default_str();
  c_oracle->add_option("--max-n", oracle.max_n, "Largest negative count")->capture_default_str();
  c_oracle->add_option("--max-d", oracle.max_d, "Largest dimension")->capture_default_str();
  c_oracle->add_option("--args-file", args_file_doc, args_help);

  try {
    const auto args = expand_args_files(raw_args);
    std::vector<const char*> argv;
    for (const auto& s : args) argv.push_back(s.c_str());
    try {
      app.parse(int(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
      out << app.help();
      return 0;
    } catch (const CLI::CallForAllHelp&) {
      out << app.help("", CLI::AppFormatMode::All);
      return 0;
    } catch (const CLI::ParseError& e) {
      err << "usage error: " << e.what() << "\nRun with --help for usage.\n";
      return 2;
    }
    if (c_learn->parsed()) return cmd_learn(learn, out, err);
    if (c_knn->parsed()) return cmd_knn_eval(knn, out, err);
    if (c_pairs->parsed()) return cmd_verify_pairs(pairs, out, err);
    if (c_bench->parsed()) return cmd_bench(bench, out, err);
    if (c_oracle->parsed()) return cmd_oracle_check(oracle, out, err);
    return 2;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace invmahal::cli
