#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "invmahal/harness.hpp"
#include "invmahal/invariance.hpp"
#include "invmahal/metric.hpp"

using namespace invmahal;

namespace {

LabeledSet table(const std::string& text) { return parse_feature_table(text); }

// Two Gaussian classes with centers 5 apart, sigma 0.1.
LabeledSet two_blobs(std::size_t per_class, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.1);
  LabeledSet s;
  s.features = RowMatrix(0, d);
  s.label_names = {"left", "right"};
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    std::vector<double> v(d);
    for (auto& x : v) x = g(rng);
    if (i % 2) v[0] += 5.0;
    s.features.append_row(v);
    s.labels.push_back(int(i % 2));
  }
  return s;
}

// Small stroke images with labels by stroke count parity; image-shaped.
LabeledSet stroke_set(std::size_t count, std::uint64_t seed) {
  const auto imgs = make_stroke_images(count, 8, seed);
  LabeledSet s;
  s.features = RowMatrix(0, 64);
  s.label_names = {"a", "b", "c"};
  s.image_width = 8;
  s.image_height = 8;
  for (std::size_t i = 0; i < imgs.size(); ++i) {
    s.features.append_row(imgs[i].pixels());
    s.labels.push_back(int(i % 3));
  }
  return s;
}

ExperimentConfig small_cfg(std::vector<Method> methods) {
  ExperimentConfig cfg;
  cfg.baseline_set = std::move(methods);
  cfg.k_neighbors = 1;
  return cfg;
}

std::shared_ptr<const Pool> pool_of(const LabeledSet& s) {
  return std::make_shared<const Pool>(std::make_shared<const LabeledSet>(s));
}

}  // namespace

TEST_CASE("method names") {
  const auto m = parse_methods("l2,inv_mahal,l2");
  CHECK(m == std::vector<Method>{Method::L2, Method::InvMahal});
  CHECK_THROWS_AS(parse_methods("l2,lmnn"), Error);
  CHECK_THROWS_AS(parse_methods(""), Error);
  CHECK(needs_tangents(Method::EsvmShifts));
  CHECK_FALSE(needs_tangents(Method::LocalMahal));
}

TEST_CASE("config rejects even k") {
  ExperimentConfig cfg;
  cfg.k_neighbors = 2;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg.k_neighbors = 3;
  cfg.workers = 0;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("two-point toy: single-negative closed forms and kNN") {
  const auto pool = pool_of(table("A,0,0\nB,1,0\n"));
  const auto bank = learn_all_metrics(pool, Method::LocalMahal, small_cfg({Method::LocalMahal}));
  REQUIRE(bank.size() == 2);
  CHECK(bank.model(0).support == std::vector<std::size_t>{1});
  const LocalMetric ma = bank.metric(0);
  const LocalMetric mb = bank.metric(1);
  const FeatureVector q{0.1, 0.0};
  CHECK(mahal_distance_sq(ma, q) == doctest::Approx(0.02));
  CHECK(mahal_distance_sq(mb, q) == doctest::Approx(1.62));
  const std::vector<LocalMetric> metrics{ma, mb};
  const std::vector<int> labels{0, 1};
  CHECK(knn_classify(metrics, labels, q.values(), 1) == 0);
  CHECK_THROWS_AS(knn_classify(metrics, labels, q.values(), 3), Error);
  // Bank scoring agrees.
  RowMatrix queries(1, 2, std::vector<double>{0.1, 0.0});
  const RowMatrix s = bank.score(queries);
  CHECK(s(0, 0) == doctest::Approx(0.02));
  CHECK(s(0, 1) == doctest::Approx(1.62));
}

TEST_CASE("one metric per datum, needs two classes") {
  const auto s = two_blobs(5, 3, 1);
  CHECK(learn_all_metrics(pool_of(s), Method::LocalMahal, small_cfg({Method::LocalMahal})).size() == 10);
  CHECK_THROWS_AS(learn_all_metrics(pool_of(table("A,0\nA,1\n")), Method::LocalMahal,
                                    small_cfg({Method::LocalMahal})),
                  Error);
  CHECK_THROWS_AS(learn_all_metrics(pool_of(s), Method::InvMahal, small_cfg({Method::InvMahal})), Error);
}

TEST_CASE("bank scores equal explicit metric distances") {
  const LabeledSet s = stroke_set(24, 3);
  const auto pool = pool_of(s);
  const LabeledSet queries = stroke_set(5, 99);
  for (Method m : {Method::LocalMahal, Method::InvMahal}) {
    auto cfg = small_cfg({m});
    const auto bank = learn_all_metrics(pool, m, cfg);
    REQUIRE(bank.failures() == 0);
    const RowMatrix sc = bank.score(queries.features);
    for (std::size_t i = 0; i < s.size(); ++i) {
      const LocalMetric metric = bank.metric(i);
      CHECK(metric.invariant() == (m == Method::InvMahal));
      for (std::size_t q = 0; q < queries.size(); ++q) {
        const double explicit_d = mahal_distance_sq(metric, queries.features.row(q));
        CHECK(sc(q, i) == doctest::Approx(explicit_d).epsilon(1e-8).scale(metric.trace() * 1e-6));
      }
    }
  }
}

TEST_CASE("gram-assembled solve matches the standalone builder") {
  const LabeledSet s = stroke_set(15, 4);
  const auto pool = pool_of(s);
  auto cfg = small_cfg({Method::InvMahal});
  const auto negs = exemplar_negatives(s, 0, 0, 1);
  std::vector<FeatureVector> neg_vecs;
  for (auto j : negs) neg_vecs.push_back(s.feature(j));
  const ExemplarProblem p(s.feature(0), neg_vecs);
  const auto img = s.image(0);

  const auto local = learn_exemplar(*pool, pool_anchor(*pool, 0), negs, Method::LocalMahal, cfg, 1);
  const auto ref_local = build_local_metric(p);
  const LocalMetric from_bank = model_metric(*pool, s.features.row(0), local, cfg);
  CHECK(from_bank.trace() == doctest::Approx(ref_local.trace()).epsilon(1e-5));

  const auto inv = learn_exemplar(*pool, pool_anchor(*pool, 0), negs, Method::InvMahal, cfg, 1, &img);
  const TangentSet ts = build_tangent_set(s.feature(0), make_tangents(img, cfg.tangent_spec));
  const auto ref_inv = build_invariant_metric(p, ts);
  CHECK(model_metric(*pool, s.features.row(0), inv, cfg, &img).trace() ==
        doctest::Approx(ref_inv.trace()).epsilon(1e-5));
}

TEST_CASE("learning is deterministic and independent of worker count") {
  const LabeledSet s = stroke_set(18, 5);
  auto cfg = small_cfg({Method::InvMahal});
  cfg.negatives_per_exemplar = 7;
  const auto a = learn_all_metrics(pool_of(s), Method::InvMahal, cfg);
  cfg.workers = 3;
  const auto b = learn_all_metrics(pool_of(s), Method::InvMahal, cfg);
  for (std::size_t i = 0; i < s.size(); ++i) {
    CHECK(serialize_metric(a.metric(i)) == serialize_metric(b.metric(i)));
  }
}

TEST_CASE("negative subsampling is seeded, sorted and class-pure") {
  const auto s = two_blobs(20, 2, 3);
  const auto a = exemplar_negatives(s, 4, 5, 9);
  CHECK(a == exemplar_negatives(s, 4, 5, 9));
  CHECK(a.size() == 5);
  CHECK(std::is_sorted(a.begin(), a.end()));
  for (auto j : a) CHECK(s.labels[j] != s.labels[4]);
  CHECK(exemplar_negatives(s, 4, 0, 9).size() == 20);
}

TEST_CASE("kNN vote tie-breaks") {
  const std::vector<int> labels{0, 1, 1, 0};
  // k=2, one vote each: smaller distance sum wins.
  CHECK(knn_vote(std::vector<double>{1.0, 0.5, 9.0, 9.0}, labels, 2) == 1);
  // Equal counts and equal sums: smaller class id.
  CHECK(knn_vote(std::vector<double>{1.0, 1.0, 5.0, 5.0}, labels, 2) == 0);
  // Symmetric fixture with k = all exemplars.
  CHECK(knn_vote(std::vector<double>{2.0, 2.0, 3.0, 3.0}, labels, 4) == 0);
  CHECK_THROWS_AS(knn_vote(std::vector<double>{1.0}, labels, 1), Error);
}

TEST_CASE("exemplar-SVM closed forms") {
  ExperimentConfig cfg;
  const FeatureVector x0{0.0, 0.0};
  const auto single = exemplar_svm_baseline(x0, std::vector<FeatureVector>{FeatureVector{1.0, 0.0}}, {}, cfg);
  CHECK(single.w[0] > 0.0);
  CHECK(single.w[1] == 0.0);
  CHECK(single.score(x0.values()) == 0.0);
  const auto sym = exemplar_svm_baseline(
      x0, std::vector<FeatureVector>{FeatureVector{1.0, 1.0}, FeatureVector{1.0, -1.0}}, {}, cfg);
  CHECK(std::abs(sym.w[1]) < 1e-9);
  const auto with_pos = exemplar_svm_baseline(x0, std::vector<FeatureVector>{FeatureVector{1.0, 0.0}},
                                              std::vector<FeatureVector>{FeatureVector{0.5, 0.0}}, cfg);
  // A positive on the negative's side pulls w back.
  CHECK(with_pos.w[0] < single.w[0]);
  CHECK(with_pos.w[0] > 0.0);
}

TEST_CASE("bank eSVM scores match the standalone baseline") {
  const LabeledSet s = stroke_set(12, 8);
  const auto pool = pool_of(s);
  auto cfg = small_cfg({Method::EsvmShifts});
  const auto bank = learn_all_metrics(pool, Method::EsvmShifts, cfg);
  const LabeledSet queries = stroke_set(3, 77);
  const RowMatrix sc = bank.score(queries.features);
  for (std::size_t i = 0; i < s.size(); i += 5) {
    std::vector<FeatureVector> negs, pos;
    for (auto j : exemplar_negatives(s, i, cfg.negatives_per_exemplar, cfg.seed)) negs.push_back(s.feature(j));
    for (const auto& t : make_tangents(s.image(i), cfg.tangent_spec)) pos.push_back(t);
    const auto ref = exemplar_svm_baseline(s.feature(i), negs, pos, cfg);
    for (std::size_t q = 0; q < queries.size(); ++q) {
      CHECK(sc(q, i) == doctest::Approx(ref.score(queries.features.row(q))).epsilon(1e-4));
    }
  }
  CHECK_THROWS_AS(model_metric(*pool, s.features.row(0), bank.model(0), cfg), Error);
}

TEST_CASE("separable blobs: every method is perfect") {
  const auto all = two_blobs(50, 4, 11);
  std::vector<std::size_t> tr, te;
  for (std::size_t i = 0; i < all.size(); ++i) (i % 2 == i / 2 % 2 ? tr : te).push_back(i);
  auto cfg = small_cfg({Method::L2, Method::Esvm, Method::LocalMahal});
  cfg.k_neighbors = 3;
  const auto res = evaluate_classification(all.subset(tr), all.subset(te), cfg, "blobs");
  REQUIRE(res.reports.size() == 3);
  for (const auto& r : res.reports) {
    CHECK(r.error_rate == 0.0);
    CHECK(r.total == te.size());
    CHECK(r.task_name == "blobs");
  }
}

TEST_CASE("test subset of train with k=1 is classified perfectly") {
  const auto s = two_blobs(15, 3, 12);
  std::vector<std::size_t> idx{0, 3, 7, 20};
  const auto res = evaluate_classification(s, s.subset(idx), small_cfg({Method::LocalMahal}));
  CHECK(res.reports[0].errors == 0);
}

TEST_CASE("permuted labels give chance-level error") {
  std::mt19937_64 rng(13);
  LabeledSet train = make_blobs(4, 100, 5, 0.3, 13);
  LabeledSet test = make_blobs(4, 100, 5, 0.3, 13);
  std::shuffle(train.labels.begin(), train.labels.end(), rng);
  auto cfg = small_cfg({Method::L2});
  cfg.k_neighbors = 1;
  const auto r = evaluate_classification(train, test, cfg).reports[0];
  // chance 0.75, binomial sd ~0.022 for 400 queries
  CHECK(r.error_rate > 0.75 - 4 * 0.022);
  CHECK(r.error_rate < 0.75 + 4 * 0.022);
}

TEST_CASE("pair verification") {
  // Two identities far apart, bank of random background points.
  std::mt19937_64 rng(14);
  std::normal_distribution<double> g(0.0, 0.1);
  PairSet pairs;
  pairs.first = RowMatrix(0, 3);
  pairs.second = RowMatrix(0, 3);
  auto sample = [&](int id) {
    std::vector<double> v{g(rng), g(rng), g(rng)};
    v[0] += 4.0 * id;
    return v;
  };
  for (int p = 0; p < 20; ++p) {
    const int a = p % 2;
    const bool same = (p / 2) % 2 == 0;
    pairs.first.append_row(sample(a));
    pairs.second.append_row(sample(same ? a : 1 - a));
    pairs.same.push_back(same);
  }
  const LabeledSet bank = make_blobs(3, 10, 3, 1.0, 15);
  auto cfg = small_cfg({Method::L2, Method::LocalMahal, Method::Esvm});
  const auto reports = verify_pairs(pairs, bank, 5, cfg);
  REQUIRE(reports.size() == 3);
  for (const auto& r : reports) {
    CAPTURE(r.method);
    // eSVM scores are signed margins, not distances; only the report shape is checked.
    if (r.method != "esvm") CHECK(r.error_rate == 0.0);
    CHECK(r.per_fold_errors.size() == 5);
    CHECK(r.total == 20);
  }
  CHECK_THROWS_AS(verify_pairs(pairs, bank, 1, cfg), Error);
  try {
    verify_pairs(pairs, bank, 1, cfg);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InsufficientFolds);
  }
}

TEST_CASE("identical pair scores zero under every method") {
  PairSet pairs;
  pairs.first = RowMatrix(2, 9, std::vector<double>{0.2, 0.3, 0.9, 0.0, 0.5, 0.5, 0.1, 0.7, 0.0,
                                                     0.0, 0.0, 0.0, 0.0, 1.0, 0.4, 0.0, 0.2, 0.0});
  pairs.second = pairs.first;
  pairs.same = {true, true};
  pairs.image_width = 3;
  pairs.image_height = 3;
  LabeledSet bank = make_blobs(2, 5, 9, 0.2, 1);
  for (Method m : {Method::L2, Method::Esvm, Method::EsvmShifts, Method::LocalMahal, Method::InvMahal}) {
    for (double s : pair_scores(pairs, bank, m, small_cfg({m}))) CHECK(s == doctest::Approx(0.0).scale(1e-12));
  }
}

TEST_CASE("parse pair tables") {
  const auto p = parse_pair_table("same,1,2,3,4\ndiff,5,6,7,8\n");
  CHECK(p.size() == 2);
  CHECK(p.first(1, 1) == 6.0);
  CHECK(p.second(0, 0) == 3.0);
  CHECK(p.same == std::vector<bool>{true, false});
  CHECK_THROWS_AS(parse_pair_table("same,1,2,3\n"), Error);
  CHECK_THROWS_AS(parse_pair_table("maybe,1,2\n"), Error);
}

TEST_CASE("augmentation, splitting and deskewing keep sizes and labels") {
  const LabeledSet s = stroke_set(10, 20);
  const auto spec = parse_transforms("shift:1");
  const auto aug = shift_augment(s, spec, 3);
  CHECK(aug.size() == 20);
  CHECK(aug.labels[13] == s.labels[3]);
  CHECK(aug.features.row(0)[0] == s.features.row(0)[0]);
  CHECK(shift_augment(s, spec, 3).features == aug.features);

  const auto [tr, te] = split_subsample(s, 6, 3, 1);
  CHECK(tr.size() == 6);
  CHECK(te.size() == 3);
  std::set<std::vector<double>> seen;
  for (std::size_t i = 0; i < tr.size(); ++i) seen.insert({tr.features.row(i).begin(), tr.features.row(i).end()});
  for (std::size_t i = 0; i < te.size(); ++i) {
    CHECK(seen.count({te.features.row(i).begin(), te.features.row(i).end()}) == 0);
  }
  CHECK_THROWS_AS(split_subsample(s, 8, 3, 1), Error);

  const auto d = deskew_all(s);
  CHECK(d.size() == s.size());
}

TEST_CASE("benchmark rows and slope") {
  SolverConfig cfg;
  const std::pair<std::size_t, std::size_t> grid[] = {{1, 16}};
  const BenchTable t = bench_solver(grid, 1, cfg, synthetic_bench_factory(1));
  REQUIRE(t.rows.size() == 1);
  CHECK(t.rows[0].median_seconds > 0.0);
  CHECK(t.rows[0].repetitions >= 5);
  CHECK(!t.machine.empty());
  std::vector<BenchRow> rows(3);
  for (std::size_t i = 0; i < 3; ++i) {
    rows[i].n = 100u << i;
    rows[i].median_seconds = 1e-6 * double(rows[i].n * rows[i].n);
  }
  CHECK(loglog_slope(rows) == doctest::Approx(2.0));
}

TEST_CASE("MNIST-like negatives fill with shifted copies") {
  const LabeledSet s = stroke_set(9, 21);
  const auto negs = mnist_like_negatives(s, 0, 14);
  CHECK(negs.size() == 14);
  CHECK(negs[0] == s.feature(1));
  CHECK(negs[6] == shift(s.image(1), 1, 0).flatten());
}
