#pragma once

#include <optional>
#include <vector>

#include "ccdc/ops.hpp"
#include "ccdc/tensor.hpp"

namespace ccdc {

struct HyperParams {
  double tau = 0.07;       // contrastive temperature
  double lambda_p = 1.0;   // correlation-term weight inside the contrastive loss
  double lambda_c = 1.0;   // contrastive weight in the total loss
  double learning_rate = 1e-4;
  int batch_size = 4;
  int epochs = 30;
  bool type_anchors_ct_only = false;  // sensitivity switch for the subtype loss

  void validate() const;
};

// One normalized feature taking part in a contrastive batch.
struct ContrastiveItem {
  Tensor feature;  // [N], expected L2-normalized
  int label;       // 0 = LUAD, 1 = LUSC
  bool is_ct;
  int pair = -1;  // CT items: index of the paired pathology item, -1 if none
};

// Checks unit norms (within 1e-6) and that CT->pathology pairing is injective.
void validate_contrastive_batch(const std::vector<ContrastiveItem>& items);

// Mean binary cross-entropy over per-case LUSC probabilities, each clipped to
// [eps, 1-eps] with eps = 1e-7.
Tensor class_loss(Tape& tape, const std::vector<Tensor>& probs, const std::vector<int>& labels);

// Subtype-supervised contrastive term. Anchors run over every feature (or CT
// features only when the switch is set); positives are same-label features
// other than the anchor, the denominator runs over all features other than
// the anchor. Anchors without positives contribute zero.
Tensor type_contrastive_loss(Tape& tape, const std::vector<ContrastiveItem>& items, double tau,
                             bool ct_anchors_only = false);

// Cross-modality alignment term. Each CT feature is scored against every
// pathology feature in the batch, its own pair being the target.
Tensor correlation_contrastive_loss(Tape& tape, const std::vector<ContrastiveItem>& items,
                                    double tau);

// type + lambda_p * correlation
Tensor contrast_loss(Tape& tape, const std::vector<ContrastiveItem>& items, const HyperParams& hp);

// class + lambda_c * contrast on paired batches; the class term alone (the
// identical tensor, no added nodes) on CT-only batches.
Tensor total_loss(Tape& tape, const Tensor& class_part, const std::optional<Tensor>& contrast_part,
                  bool paired, const HyperParams& hp);

}  // namespace ccdc
