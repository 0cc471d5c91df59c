#include "ccdc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace ccdc {

namespace {

void require_binary(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw UsageError("scores and labels differ in length");
  if (scores.empty()) throw MetricError("no samples");
  for (int l : labels)
    if (l != 0 && l != 1) throw InputError("labels must be 0 or 1");
}

struct Counts {
  Index tp = 0, fp = 0, tn = 0, fn = 0;
};

Counts count_at(const std::vector<double>& scores, const std::vector<int>& labels, double th) {
  Counts c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i] >= th;
    if (labels[i] == 1)
      pred ? ++c.tp : ++c.fn;
    else
      pred ? ++c.fp : ++c.tn;
  }
  return c;
}

double f1_of(const Counts& c) {
  const Index denom = 2 * c.tp + c.fp + c.fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

double acc_of(const Counts& c) {
  return static_cast<double>(c.tp + c.tn) / static_cast<double>(c.tp + c.tn + c.fp + c.fn);
}

// Continued-fraction core of the regularized incomplete beta (Lentz).
double beta_cf(double a, double b, double x) {
  constexpr double kTiny = 1e-300;
  constexpr int kMaxIter = 300;
  double c = 1.0;
  double d = 1.0 - (a + b) * x / (a + 1.0);
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double md = static_cast<double>(m);
    double num = md * (b - md) * x / ((a + 2 * md - 1) * (a + 2 * md));
    d = 1.0 + num * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + num / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    num = -(a + md) * (a + b + md) * x / ((a + 2 * md) * (a + 2 * md + 1));
    d = 1.0 + num * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + num / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < 1e-15) break;
  }
  return h;
}

nlohmann::json fold_to_json(const FoldMetrics& f) {
  return {{"acc", f.acc}, {"auc", f.auc}, {"f1", f.f1}, {"threshold", f.threshold}};
}

FoldMetrics fold_from_json(const nlohmann::json& j) {
  FoldMetrics f;
  f.acc = j.at("acc").get<double>();
  f.auc = j.at("auc").get<double>();
  f.f1 = j.at("f1").get<double>();
  f.threshold = j.at("threshold").get<double>();
  return f;
}

}  // namespace

double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  require_binary(scores, labels);
  const Index n_pos = std::accumulate(labels.begin(), labels.end(), Index{0});
  const Index n_neg = static_cast<Index>(labels.size()) - n_pos;
  if (n_pos == 0 || n_neg == 0) throw MetricError("roc_auc needs both classes present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // midranks over tie groups
  double pos_rank_sum = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) pos_rank_sum += midrank;
    i = j;
  }
  const double u = pos_rank_sum - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

ClassMetrics classification_metrics(const std::vector<double>& scores,
                                    const std::vector<int>& labels,
                                    std::optional<double> threshold,
                                    ThresholdObjective objective) {
  require_binary(scores, labels);
  if (std::accumulate(labels.begin(), labels.end(), 0) == 0)
    throw MetricError("F1 undefined: no positive labels");

  const auto evaluate = [&](double th) {
    const Counts c = count_at(scores, labels, th);
    return std::pair<double, double>(acc_of(c), f1_of(c));
  };

  ClassMetrics out;
  if (threshold) {
    out.threshold = *threshold;
  } else {
    std::vector<double> uniq = scores;
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    out.threshold = 0.5;
    double best = -1.0;
    for (std::size_t i = 0; i + 1 < uniq.size(); ++i) {
      const double th = 0.5 * (uniq[i] + uniq[i + 1]);
      const auto [acc, f1] = evaluate(th);
      const double score = objective == ThresholdObjective::F1 ? f1 : acc;
      if (score > best) {
        best = score;
        out.threshold = th;
      }
    }
  }
  const auto [acc, f1] = evaluate(out.threshold);
  out.acc = acc;
  out.f1 = f1;
  return out;
}

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0) || !(b > 0)) throw UsageError("incomplete_beta requires positive shape parameters");
  if (x <= 0) return 0;
  if (x >= 1) return 1;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  // continued fraction converges fast for x < (a+1)/(a+b+2); reflect otherwise
  if (x < (a + 1.0) / (a + b + 2.0)) return std::exp(ln_front) * beta_cf(a, b, x) / a;
  return 1.0 - std::exp(std::lgamma(a + b) - std::lgamma(b) - std::lgamma(a) +
                        b * std::log1p(-x) + a * std::log(x)) *
                   beta_cf(b, a, 1.0 - x) / b;
}

TTestResult paired_ttest(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw UsageError("paired_ttest requires equal-length series");
  const std::size_t n = a.size();
  if (n < 2) throw MetricError("paired_ttest needs at least 2 pairs");
  double mean = 0;
  for (std::size_t i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= static_cast<double>(n);
  double var = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = a[i] - b[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(n - 1);
  if (var == 0) {
    if (mean == 0) return {0.0, 1.0};
    throw MetricError("paired_ttest: zero-variance differences with nonzero mean");
  }
  TTestResult r;
  const double nu = static_cast<double>(n - 1);
  r.t = mean / std::sqrt(var / static_cast<double>(n));
  r.p = incomplete_beta(nu / 2.0, 0.5, nu / (nu + r.t * r.t));
  return r;
}

MetricsReport aggregate_folds(const std::vector<FoldMetrics>& per_fold) {
  if (per_fold.empty()) throw UsageError("aggregate_folds: no folds");
  MetricsReport rep;
  rep.per_fold = per_fold;
  const double n = static_cast<double>(per_fold.size());
  const auto collect = [&](double FoldMetrics::*field, double& mean_out, double& sd_out) {
    double s = 0;
    for (const FoldMetrics& f : per_fold) s += f.*field;
    const double mean = s / n;
    double v = 0;
    for (const FoldMetrics& f : per_fold) v += (f.*field - mean) * (f.*field - mean);
    mean_out = mean;
    sd_out = per_fold.size() > 1 ? std::sqrt(v / (n - 1.0)) : 0.0;
  };
  collect(&FoldMetrics::acc, rep.mean.acc, rep.sd.acc);
  collect(&FoldMetrics::auc, rep.mean.auc, rep.sd.auc);
  collect(&FoldMetrics::f1, rep.mean.f1, rep.sd.f1);
  collect(&FoldMetrics::threshold, rep.mean.threshold, rep.sd.threshold);
  return rep;
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["schema_version"] = 1;
  j["per_fold"] = nlohmann::json::array();
  for (const FoldMetrics& f : per_fold) j["per_fold"].push_back(fold_to_json(f));
  j["mean"] = fold_to_json(mean);
  j["sd"] = fold_to_json(sd);
  return j.dump(2);
}

MetricsReport MetricsReport::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("bad metrics report: ") + e.what());
  }
  if (!j.contains("schema_version") || j["schema_version"].get<int>() != 1)
    throw InputError("unsupported metrics report schema");
  MetricsReport rep;
  try {
    for (const auto& f : j.at("per_fold")) rep.per_fold.push_back(fold_from_json(f));
    rep.mean = fold_from_json(j.at("mean"));
    rep.sd = fold_from_json(j.at("sd"));
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("bad metrics report: ") + e.what());
  }
  return rep;
}

std::string MetricsReport::to_table() const {
  std::ostringstream os;
  char line[128];
  os << "metric       mean      sd        per-fold\n";
  const auto row = [&](const char* name, double FoldMetrics::*field) {
    std::snprintf(line, sizeof line, "%-10s %8.4f  %8.4f  ", name, mean.*field, sd.*field);
    os << line;
    for (std::size_t i = 0; i < per_fold.size(); ++i) {
      std::snprintf(line, sizeof line, "%s%.4f", i ? " " : "", per_fold[i].*field);
      os << line;
    }
    os << '\n';
  };
  row("acc", &FoldMetrics::acc);
  row("auc", &FoldMetrics::auc);
  row("f1", &FoldMetrics::f1);
  row("threshold", &FoldMetrics::threshold);
  return os.str();
}

MetricsReport cross_validate(
    std::size_t case_count, const std::vector<int>& folds,
    const std::function<FoldMetrics(const std::vector<std::size_t>&,
                                    const std::vector<std::size_t>&, int)>& fold_fn) {
  if (folds.size() != case_count) throw UsageError("fold assignment length mismatch");
  int k = 0;
  for (int f : folds) {
    if (f < 0) throw UsageError("negative fold id");
    k = std::max(k, f + 1);
  }
  if (k < 2) throw ConfigError("cross_validate needs at least 2 folds");
  std::vector<FoldMetrics> per_fold;
  for (int f = 0; f < k; ++f) {
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < case_count; ++i) (folds[i] == f ? test : train).push_back(i);
    if (test.empty()) throw ConfigError("fold " + std::to_string(f) + " is empty");
    per_fold.push_back(fold_fn(train, test, f));
  }
  return aggregate_folds(per_fold);
}

}  // namespace ccdc
