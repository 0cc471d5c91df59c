#pragma once

#include <cstdint>
#include <optional>

#include "ccdc/dynconv.hpp"
#include "ccdc/vit.hpp"

namespace ccdc {

struct ModelConfig {
  ViTConfig ct;    // 3 axes, channels 1
  ViTConfig path;  // 2 axes, channels 3
  DynConvConfig dyn;

  Index feature_dim() const { return ct.output_dim; }
  void validate() const;
};

// The full classifier: two extractors, weight generator, dynamic contraction,
// logistic head. Parameters are created deterministically from the seed, in a
// fixed order, under the prefixes ct. / path. / gen. / head.
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);

  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }
  const ModelConfig& config() const { return cfg_; }

  Tensor radiological(Tape& tape, const Array& volume);
  Tensor pathological(Tape& tape, const PatchBag& bag);

  struct CaseOut {
    Tensor x_r;
    std::optional<Tensor> x_p;
    Tensor z;      // [m] contraction output (the fused feature)
    Tensor logit;  // [1]
    Tensor prob;   // [1]
  };

  // bag may be null: CT-only forward, the block halves its L extent.
  CaseOut forward_case(Tape& tape, const Array& volume, const PatchBag* bag);

  // Forward-pass counters; the trainer asserts the pathology extractor stays
  // cold on CT-only batches.
  std::size_t ct_forwards() const { return ct_forwards_; }
  std::size_t path_forwards() const { return path_forwards_; }

 private:
  ModelConfig cfg_;
  ParameterStore store_;
  VitParams ct_params_;
  VitParams path_params_;
  GenParams gen_params_;
  HeadParams head_params_;
  std::size_t ct_forwards_ = 0;
  std::size_t path_forwards_ = 0;
};

}  // namespace ccdc
