#pragma once

#include <optional>

#include "ccdc/ops.hpp"
#include "ccdc/rng.hpp"
#include "ccdc/tensor.hpp"

namespace ccdc {

// Geometry of the concatenated feature block. The paired block is H x L x D,
// CT-only halves L; both must flatten back to the feature length(s) exactly.
struct DynConvConfig {
  Index h = 16;
  Index l_paired = 16;
  Index d = 8;
  Index m = 512;          // contraction output length
  Index gen_kernel = 3;   // generator kernel side

  Index l_ct() const { return l_paired / 2; }
  void validate(Index feature_dim) const;
};

struct ConcatFeature {
  Tensor block;  // rank 3, [h, l, d]
  bool paired;
};

struct GenParams {
  Parameter* kernels;  // [m, 1, k, k, k]
  Parameter* bias;     // [m]
};

struct HeadParams {
  Parameter* w;  // [m]
  Parameter* b;  // [1]
};

GenParams make_gen_params(ParameterStore& store, const DynConvConfig& cfg, Rng& rng);
HeadParams make_head_params(ParameterStore& store, const DynConvConfig& cfg, Rng& rng);

// Row-major packing of x_r (then x_p when present) into the feature block.
ConcatFeature concat_reshape(const Tensor& x_r, const std::optional<Tensor>& x_p,
                             const DynConvConfig& cfg);

// Same-size convolution of the single-channel block, bias added, rearranged
// to [h, l, d, m]: one m-vector of generated weights per block position.
Tensor generate_weights(Tape& tape, const ConcatFeature& x, const DynConvConfig& cfg,
                        const GenParams& gp);

// z_m = sum_{h,l,d} w[h,l,d,m] * x[H-1-h, L-1-l, D-1-d]. Gradients flow into
// both operands, so generated weights contribute their product-rule path.
Tensor dynamic_contract(const ConcatFeature& x, const Tensor& w);

struct HeadOut {
  Tensor logit;  // [1]
  Tensor prob;   // [1], sigmoid(logit)
};

HeadOut classify_head(Tape& tape, const Tensor& z, const HeadParams& hp);

}  // namespace ccdc
