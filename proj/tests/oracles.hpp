#pragma once

// Independent reference implementations used only by tests. Plain loops over
// std::vector<double>, no Eigen, no library code beyond index arithmetic.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace oracle {

using std::size_t;

// c[m,n] = a[m,k] . b[k,n], triple loop
inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b,
                                  size_t m, size_t k, size_t n) {
  std::vector<double> c(m * n, 0.0);
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < n; ++j)
      for (size_t p = 0; p < k; ++p) c[i * n + j] += a[i * k + p] * b[p * n + j];
  return c;
}

// Cross-correlation of x[ci,H,L,D] with kernels[co,ci,kh,kl,kd], zero padded.
inline std::vector<double> conv3d(const std::vector<double>& x, size_t ci_n, size_t H, size_t L,
                                  size_t D, const std::vector<double>& k, size_t co_n, size_t kh,
                                  size_t kl, size_t kd, size_t sh, size_t sl, size_t sd, size_t ph,
                                  size_t pl, size_t pd) {
  const size_t Ho = (H + 2 * ph - kh) / sh + 1;
  const size_t Lo = (L + 2 * pl - kl) / sl + 1;
  const size_t Do = (D + 2 * pd - kd) / sd + 1;
  std::vector<double> out(co_n * Ho * Lo * Do, 0.0);
  for (size_t co = 0; co < co_n; ++co)
    for (size_t oh = 0; oh < Ho; ++oh)
      for (size_t ol = 0; ol < Lo; ++ol)
        for (size_t od = 0; od < Do; ++od)
          for (size_t ci = 0; ci < ci_n; ++ci)
            for (size_t a = 0; a < kh; ++a)
              for (size_t b = 0; b < kl; ++b)
                for (size_t c = 0; c < kd; ++c) {
                  const long ih = static_cast<long>(oh * sh + a) - static_cast<long>(ph);
                  const long il = static_cast<long>(ol * sl + b) - static_cast<long>(pl);
                  const long id = static_cast<long>(od * sd + c) - static_cast<long>(pd);
                  if (ih < 0 || ih >= static_cast<long>(H)) continue;
                  if (il < 0 || il >= static_cast<long>(L)) continue;
                  if (id < 0 || id >= static_cast<long>(D)) continue;
                  out[((co * Ho + oh) * Lo + ol) * Do + od] +=
                      x[((ci * H + static_cast<size_t>(ih)) * L + static_cast<size_t>(il)) * D +
                        static_cast<size_t>(id)] *
                      k[(((co * ci_n + ci) * kh + a) * kl + b) * kd + c];
                }
  return out;
}

// z_m = sum_{h,l,d} w[h,l,d,m] * x[H-1-h, L-1-l, D-1-d], the contraction the
// dynamic layer computes, written exactly as the formula reads.
inline std::vector<double> dynamic_contract(const std::vector<double>& x,
                                            const std::vector<double>& w, size_t H, size_t L,
                                            size_t D, size_t M) {
  std::vector<double> z(M, 0.0);
  for (size_t m = 0; m < M; ++m)
    for (size_t h = 0; h < H; ++h)
      for (size_t l = 0; l < L; ++l)
        for (size_t d = 0; d < D; ++d)
          z[m] += w[((h * L + l) * D + d) * M + m] *
                  x[((H - 1 - h) * L + (L - 1 - l)) * D + (D - 1 - d)];
  return z;
}

// AUC as the plain pairwise count: P(score_pos > score_neg), ties half.
inline double auc_pairwise(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  size_t pairs = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j])
        wins += 1.0;
      else if (scores[i] == scores[j])
        wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

struct ScanResult {
  double threshold;
  double f1;
  double acc;
};

// Midpoints between adjacent distinct scores; {0.5} when fewer than two.
inline std::vector<double> candidate_thresholds(const std::vector<double>& scores) {
  std::vector<double> cand;
  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  for (size_t i = 0; i + 1 < sorted.size(); ++i) cand.push_back(0.5 * (sorted[i] + sorted[i + 1]));
  if (cand.empty()) cand.push_back(0.5);
  return cand;
}

// Best-F1 threshold by brute force over the midpoint candidates.
inline ScanResult threshold_scan(const std::vector<double>& scores, const std::vector<int>& labels) {
  const std::vector<double> cand = candidate_thresholds(scores);
  ScanResult best{cand[0], -1.0, 0.0};
  for (double th : cand) {
    size_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
      const bool pred = scores[i] >= th;
      if (pred && labels[i] == 1) ++tp;
      if (pred && labels[i] == 0) ++fp;
      if (!pred && labels[i] == 1) ++fn;
      if (!pred && labels[i] == 0) ++tn;
    }
    const double prec = (tp + fp) ? static_cast<double>(tp) / (tp + fp) : 0.0;
    const double rec = (tp + fn) ? static_cast<double>(tp) / (tp + fn) : 0.0;
    const double f1 = (prec + rec > 0.0) ? 2.0 * prec * rec / (prec + rec) : 0.0;
    if (f1 > best.f1 || (f1 == best.f1 && th < best.threshold)) {
      best = {th, f1, static_cast<double>(tp + tn) / scores.size()};
    }
  }
  return best;
}

}  // namespace oracle
