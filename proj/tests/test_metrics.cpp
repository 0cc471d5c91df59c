#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "ccdc/metrics.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

using namespace ccdc;

TEST_CASE("auc on pinned fixtures") {
  CHECK(roc_auc({0.9, 0.8, 0.3, 0.1}, {1, 1, 0, 0}) == 1.0);
  CHECK(roc_auc({0.4, 0.4, 0.4, 0.4}, {1, 0, 1, 0}) == 0.5);
  CHECK(roc_auc({0.9, 0.2, 0.6, 0.1}, {1, 1, 0, 0}) == 0.75);
  CHECK(roc_auc({0.1, 0.9}, {1, 0}) == 0.0);
}

TEST_CASE("auc equals the pairwise rank statistic on random tied fixtures") {
  std::mt19937_64 rng(2024);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 4 + rng() % 17;  // up to 20
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    // coarse grid forces score ties; labels resampled until both classes appear
    for (auto& s : scores) s = static_cast<double>(rng() % 7) / 6.0;
    do {
      for (auto& l : labels) l = static_cast<int>(rng() % 2);
    } while (std::count(labels.begin(), labels.end(), 1) == 0 ||
             std::count(labels.begin(), labels.end(), 0) == 0);
    CHECK(roc_auc(scores, labels) == oracle::auc_pairwise(scores, labels));
  }
}

TEST_CASE("auc is invariant under strictly increasing transforms") {
  const std::vector<double> s = {0.11, 0.52, 0.52, 0.48, 0.9, 0.07, 0.3};
  const std::vector<int> l = {0, 1, 0, 1, 1, 0, 0};
  const double base = roc_auc(s, l);
  std::vector<double> warped(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) warped[i] = std::exp(3.0 * s[i]) - 7.0;
  CHECK(roc_auc(warped, l) == base);
}

TEST_CASE("auc complement identity for tie-free scores") {
  const std::vector<double> s = {0.1, 0.2, 0.35, 0.5, 0.62, 0.77, 0.91};
  const std::vector<int> l = {0, 1, 0, 0, 1, 1, 0};
  std::vector<int> flipped(l.size());
  for (std::size_t i = 0; i < l.size(); ++i) flipped[i] = 1 - l[i];
  CHECK(roc_auc(s, l) + roc_auc(s, flipped) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("auc requires both classes") {
  CHECK_THROWS_AS(roc_auc({0.1, 0.2}, {1, 1}), MetricError);
  CHECK_THROWS_AS(roc_auc({0.1, 0.2}, {0, 0}), MetricError);
  CHECK_THROWS_AS(roc_auc({0.1}, {0, 1}), UsageError);
}

TEST_CASE("classification metrics on pinned fixtures") {
  const ClassMetrics perfect = classification_metrics({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0});
  CHECK(perfect.acc == 1.0);
  CHECK(perfect.f1 == 1.0);

  const ClassMetrics wrong = classification_metrics({0.4, 0.6}, {1, 0}, 0.5);
  CHECK(wrong.acc == 0.0);
  CHECK(wrong.f1 == 0.0);
  CHECK(wrong.threshold == 0.5);

  CHECK_THROWS_AS(classification_metrics({0.4, 0.6}, {0, 0}), MetricError);
}

TEST_CASE("threshold scan agrees with the oracle on random fixtures") {
  std::mt19937_64 rng(77);
  for (int rep = 0; rep < 60; ++rep) {
    const std::size_t n = 3 + rng() % 14;
    std::vector<double> scores(n);
    std::vector<int> labels(n);
    for (auto& s : scores) s = static_cast<double>(rng() % 9) / 8.0;
    do {
      for (auto& l : labels) l = static_cast<int>(rng() % 2);
    } while (std::count(labels.begin(), labels.end(), 1) == 0);

    const auto want = oracle::threshold_scan(scores, labels);
    const ClassMetrics got = classification_metrics(scores, labels);
    CHECK(got.f1 == doctest::Approx(want.f1).epsilon(1e-12));
    CHECK(got.acc == doctest::Approx(want.acc).epsilon(1e-12));
    // optimality: no candidate threshold beats the reported objective
    for (const double th : oracle::candidate_thresholds(scores)) {
      const ClassMetrics at = classification_metrics(scores, labels, th);
      CHECK(at.f1 <= got.f1 + 1e-12);
    }
  }
}

TEST_CASE("threshold scan breaks objective ties toward the lower threshold") {
  // any threshold in (0.2, 0.8) separates identically; the low midpoint wins
  const ClassMetrics m = classification_metrics({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1});
  CHECK(m.f1 == 1.0);
  CHECK(m.threshold == doctest::Approx(0.5).epsilon(1e-15));

  const ClassMetrics inv = classification_metrics({0.9, 0.8, 0.1, 0.2}, {0, 0, 1, 1});
  CHECK(inv.f1 > 0.0);  // scan still finds the best achievable split
}

TEST_CASE("paired t-test on the pinned difference fixture") {
  // differences 1..5: t = 3 / (sqrt(2.5) / sqrt(5)) = 4.2426...
  const std::vector<double> a = {2, 4, 6, 8, 10};
  const std::vector<double> b = {1, 2, 3, 4, 5};
  const TTestResult r = paired_ttest(a, b);
  CHECK(r.t == doctest::Approx(4.242640687119285).epsilon(1e-12));
  CHECK(r.p == doctest::Approx(0.0132355996).epsilon(0.0005 / 0.0132));

  const TTestResult null = paired_ttest(b, b);
  CHECK(null.t == 0.0);
  CHECK(null.p == 1.0);

  const TTestResult neg = paired_ttest(b, a);
  CHECK(neg.t == doctest::Approx(-r.t).epsilon(1e-15));
  CHECK(neg.p == doctest::Approx(r.p).epsilon(1e-12));
}

TEST_CASE("paired t-test shift invariance and p-value range") {
  const std::vector<double> a = {0.61, 0.72, 0.55, 0.69, 0.66, 0.73};
  const std::vector<double> b = {0.58, 0.70, 0.57, 0.61, 0.60, 0.65};
  const TTestResult r = paired_ttest(a, b);
  std::vector<double> a2(a), b2(b);
  for (auto& x : a2) x += 0.17;
  for (auto& x : b2) x += 0.17;
  const TTestResult r2 = paired_ttest(a2, b2);
  CHECK(r2.t == doctest::Approx(r.t).epsilon(1e-12));
  CHECK(r2.p == doctest::Approx(r.p).epsilon(1e-12));
  CHECK(r.p > 0.0);
  CHECK(r.p <= 1.0);

  // degenerate cases: the statistic is undefined
  CHECK_THROWS_AS(paired_ttest({1, 2, 3}, {0, 1, 2}), MetricError);
  CHECK_THROWS_AS(paired_ttest({1.0}, {2.0}), MetricError);
  CHECK_THROWS_AS(paired_ttest({1.0, 2.0}, {2.0}), UsageError);
}

TEST_CASE("incomplete beta matches reference points") {
  CHECK(incomplete_beta(1.0, 1.0, 0.3) == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(incomplete_beta(2.0, 2.0, 0.5) == doctest::Approx(0.5).epsilon(1e-12));
  // I_x(1/2, 1/2) = (2/pi) asin(sqrt(x))
  CHECK(incomplete_beta(0.5, 0.5, 0.25) ==
        doctest::Approx(2.0 / std::numbers::pi * std::asin(0.5)).epsilon(1e-10));
}

TEST_CASE("metrics report json round-trip") {
  MetricsReport r = aggregate_folds({{0.8, 0.9, 0.75, 0.5}, {0.9, 0.95, 0.85, 0.45}});
  const std::string text = r.to_json();
  const MetricsReport back = MetricsReport::from_json(text);
  REQUIRE(back.per_fold.size() == 2);
  CHECK(back.per_fold[1].auc == r.per_fold[1].auc);
  CHECK(back.mean.acc == r.mean.acc);
  CHECK(back.sd.f1 == r.sd.f1);
  CHECK_THROWS_AS(MetricsReport::from_json("{"), InputError);
}

TEST_CASE("aggregate_folds mean and sample sd") {
  const MetricsReport r = aggregate_folds({{0.8, 1.0, 0.6, 0.5}, {0.6, 0.8, 0.4, 0.5}});
  CHECK(r.mean.acc == doctest::Approx(0.7).epsilon(1e-15));
  CHECK(r.sd.acc == doctest::Approx(std::sqrt(0.02 / 1.0)).epsilon(1e-12));
  const MetricsReport one = aggregate_folds({{0.8, 1.0, 0.6, 0.5}});
  CHECK(one.sd.acc == 0.0);
  CHECK_THROWS_AS(aggregate_folds({}), UsageError);
}

TEST_CASE("cross_validate visits each fold once and is order-insensitive") {
  const std::vector<int> folds = {0, 1, 2, 0, 1, 2, 0, 1, 2, 0};
  std::vector<int> seen;
  const MetricsReport r = cross_validate(10, folds, [&](const auto& train, const auto& test, int f) {
    seen.push_back(f);
    // constant predictions: accuracy equals the share of positives in test
    double acc = 0;
    for (std::size_t i : test) acc += static_cast<double>(i % 2);
    for (std::size_t i : train) CHECK(folds[i] != f);
    for (std::size_t i : test) CHECK(folds[i] == f);
    return FoldMetrics{acc / static_cast<double>(test.size()), 0.5, 0.0, 0.5};
  });
  CHECK(seen == std::vector<int>{0, 1, 2});
  REQUIRE(r.per_fold.size() == 3);

  // permuting fold ids permutes per-fold rows but keeps the aggregates
  std::vector<int> renamed(folds.size());
  for (std::size_t i = 0; i < folds.size(); ++i) renamed[i] = (folds[i] + 1) % 3;
  const MetricsReport r2 = cross_validate(10, renamed, [&](const auto&, const auto& test, int) {
    double acc = 0;
    for (std::size_t i : test) acc += static_cast<double>(i % 2);
    return FoldMetrics{acc / static_cast<double>(test.size()), 0.5, 0.0, 0.5};
  });
  CHECK(r2.mean.acc == doctest::Approx(r.mean.acc).epsilon(1e-15));
  CHECK(r2.sd.acc == doctest::Approx(r.sd.acc).epsilon(1e-15));
}
