#pragma once

#include <functional>
#include <random>
#include <vector>

#include "ccdc/tensor.hpp"

namespace testsup {

inline std::vector<double> random_vec(std::size_t n, std::uint64_t seed, double lo = -1.0,
                                      double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

inline ccdc::Array to_array(const std::vector<double>& v) {
  ccdc::Array a(static_cast<ccdc::Index>(v.size()));
  for (std::size_t i = 0; i < v.size(); ++i) a[static_cast<ccdc::Index>(i)] = v[i];
  return a;
}

inline std::vector<double> to_vec(const ccdc::Array& a) {
  return std::vector<double>(a.data(), a.data() + a.size());
}

// Scalar function of a flat input vector; a fresh graph is built per call.
using ScalarFn = std::function<double(const std::vector<double>&)>;

inline std::vector<double> central_diff(const ScalarFn& f, std::vector<double> x,
                                        double h = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double fp = f(x);
    x[i] = keep - h;
    const double fm = f(x);
    x[i] = keep;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-8});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace testsup
