#include "ccdc/losses.hpp"

#include <cmath>
#include <set>

namespace ccdc {

namespace {
constexpr double kProbEps = 1e-7;
}

void HyperParams::validate() const {
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (lambda_p < 0.0 || lambda_c < 0.0) throw ConfigError("loss weights must be non-negative");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if ((lambda_c > 0.0 || lambda_p > 0.0) && batch_size < 2)
    throw ConfigError("contrastive losses need batch_size >= 2");
  if (epochs < 1) throw ConfigError("epochs must be at least 1");
}

void validate_contrastive_batch(const std::vector<ContrastiveItem>& items) {
  std::set<int> seen_pairs;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const ContrastiveItem& it = items[i];
    if (!it.feature.valid() || it.feature.rank() != 1)
      throw InputError("contrastive feature " + std::to_string(i) + " is not a vector");
    const double norm = std::sqrt(it.feature.value().square().sum());
    if (std::abs(norm - 1.0) > 1e-6)
      throw InputError("contrastive feature " + std::to_string(i) + " has norm " +
                       std::to_string(norm) + ", expected 1");
    if (it.label != 0 && it.label != 1)
      throw InputError("contrastive label must be 0 or 1");
    if (it.pair >= 0) {
      if (static_cast<std::size_t>(it.pair) >= items.size() || items[it.pair].is_ct)
        throw InputError("pairing of feature " + std::to_string(i) +
                         " does not point at a pathology feature");
      if (!seen_pairs.insert(it.pair).second)
        throw InputError("pairing is not injective at feature " + std::to_string(i));
    }
  }
}

Tensor class_loss(Tape&, const std::vector<Tensor>& probs, const std::vector<int>& labels) {
  if (probs.size() != labels.size())
    throw InputError("class_loss: " + std::to_string(probs.size()) + " probabilities vs " +
                     std::to_string(labels.size()) + " labels");
  if (probs.empty()) throw InputError("class_loss: empty batch");
  std::vector<Tensor> terms;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    Tensor p = clamp(probs[i], kProbEps, 1.0 - kProbEps);
    Tensor ll = labels[i] == 1 ? ccdc::log(p) : ccdc::log(affine(p, -1.0, 1.0));
    terms.push_back(ll);
  }
  return scale(add_all(terms), -1.0 / static_cast<double>(terms.size()));
}

namespace {

// Pairwise inner products with node reuse across the symmetric pairs.
class SimTable {
 public:
  SimTable(const std::vector<ContrastiveItem>& items, double tau)
      : n_(items.size()), sims_(n_ * n_), inv_tau_(1.0 / tau) {
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = i + 1; j < n_; ++j) {
        Tensor s = scale(inner_product(items[i].feature, items[j].feature), inv_tau_);
        sims_[i * n_ + j] = s;
        sims_[j * n_ + i] = s;
      }
  }
  const Tensor& at(std::size_t i, std::size_t j) const { return sims_[i * n_ + j]; }

 private:
  std::size_t n_;
  std::vector<Tensor> sims_;
  double inv_tau_;
};

}  // namespace

Tensor type_contrastive_loss(Tape& tape, const std::vector<ContrastiveItem>& items, double tau,
                             bool ct_anchors_only) {
  validate_contrastive_batch(items);
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  const std::size_t n = items.size();
  SimTable sims(items, tau);
  std::vector<Tensor> anchor_terms;
  for (std::size_t i = 0; i < n; ++i) {
    if (ct_anchors_only && !items[i].is_ct) continue;
    std::vector<std::size_t> positives;
    for (std::size_t p = 0; p < n; ++p)
      if (p != i && items[p].label == items[i].label) positives.push_back(p);
    if (positives.empty()) continue;

    std::vector<Tensor> denom_terms;
    for (std::size_t k = 0; k < n; ++k)
      if (k != i) denom_terms.push_back(ccdc::exp(sims.at(i, k)));
    Tensor log_denom = ccdc::log(add_all(denom_terms));

    std::vector<Tensor> logs;
    for (std::size_t p : positives) logs.push_back(sub(sims.at(i, p), log_denom));
    anchor_terms.push_back(scale(add_all(logs), -1.0 / static_cast<double>(positives.size())));
  }
  if (anchor_terms.empty()) return tape.scalar_const(0.0);
  return add_all(anchor_terms);
}

Tensor correlation_contrastive_loss(Tape& tape, const std::vector<ContrastiveItem>& items,
                                    double tau) {
  validate_contrastive_batch(items);
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  const std::size_t n = items.size();
  std::vector<std::size_t> path_idx;
  for (std::size_t i = 0; i < n; ++i)
    if (!items[i].is_ct) path_idx.push_back(i);

  SimTable sims(items, tau);
  std::vector<Tensor> terms;
  for (std::size_t j = 0; j < n; ++j) {
    if (!items[j].is_ct) continue;
    if (items[j].pair < 0)
      throw InputError("CT feature " + std::to_string(j) + " has no pathology pairing");
    std::vector<Tensor> denom_terms;
    for (std::size_t a : path_idx) denom_terms.push_back(ccdc::exp(sims.at(j, a)));
    Tensor log_denom = ccdc::log(add_all(denom_terms));
    terms.push_back(sub(log_denom, sims.at(j, static_cast<std::size_t>(items[j].pair))));
  }
  if (terms.empty()) return tape.scalar_const(0.0);
  return add_all(terms);
}

Tensor contrast_loss(Tape& tape, const std::vector<ContrastiveItem>& items, const HyperParams& hp) {
  Tensor type_part = type_contrastive_loss(tape, items, hp.tau, hp.type_anchors_ct_only);
  Tensor corr_part = correlation_contrastive_loss(tape, items, hp.tau);
  return add(type_part, scale(corr_part, hp.lambda_p));
}

Tensor total_loss(Tape&, const Tensor& class_part, const std::optional<Tensor>& contrast_part,
                  bool paired, const HyperParams& hp) {
  if (!paired) return class_part;  // the alpha gate: bit-identical class term
  if (!contrast_part) throw UsageError("total_loss: paired batch without a contrastive part");
  return add(class_part, scale(*contrast_part, hp.lambda_c));
}

}  // namespace ccdc
