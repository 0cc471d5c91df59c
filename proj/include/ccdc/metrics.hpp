#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ccdc/common.hpp"

namespace ccdc {

// Probability that a random positive outscores a random negative, ties
// counted one half (rank-statistic formulation; equals the trapezoidal ROC
// area). Labels are 0/1 with 1 the positive class.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

enum class ThresholdObjective { F1, ACC };

struct ClassMetrics {
  double acc = 0;
  double f1 = 0;
  double threshold = 0;
};

// Accuracy/F1 at a threshold (prediction = score >= threshold). Without an
// explicit threshold, scans the midpoints between adjacent sorted unique
// scores and keeps the one maximizing the objective, breaking ties toward
// the lower threshold. Fewer than two distinct scores fall back to 0.5.
ClassMetrics classification_metrics(const std::vector<double>& scores,
                                    const std::vector<int>& labels,
                                    std::optional<double> threshold = std::nullopt,
                                    ThresholdObjective objective = ThresholdObjective::F1);

struct TTestResult {
  double t = 0;
  double p = 1;
};

// Two-sided paired t-test on a - b with n - 1 degrees of freedom.
TTestResult paired_ttest(const std::vector<double>& a, const std::vector<double>& b);

// Regularized incomplete beta I_x(a, b); exposed for verification.
double incomplete_beta(double a, double b, double x);

struct FoldMetrics {
  double acc = 0;
  double auc = 0;
  double f1 = 0;
  double threshold = 0;
};

struct MetricsReport {
  std::vector<FoldMetrics> per_fold;
  FoldMetrics mean;
  FoldMetrics sd;  // population-like, n - 1 denominator; zeros for one fold

  std::string to_json() const;
  std::string to_table() const;  // fixed-width mean±sd summary
  static MetricsReport from_json(const std::string& text);
};

MetricsReport aggregate_folds(const std::vector<FoldMetrics>& per_fold);

// Runs fold_fn on (train ids, test ids, fold index) for each fold id present
// in `folds` and aggregates the per-fold metrics.
MetricsReport cross_validate(
    std::size_t case_count, const std::vector<int>& folds,
    const std::function<FoldMetrics(const std::vector<std::size_t>&,
                                    const std::vector<std::size_t>&, int)>& fold_fn);

}  // namespace ccdc
