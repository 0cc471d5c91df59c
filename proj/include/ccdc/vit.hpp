#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ccdc/ops.hpp"
#include "ccdc/rng.hpp"
#include "ccdc/tensor.hpp"

namespace ccdc {

enum class Magnification { X10 = 0, X20 = 1, X40 = 2, X100 = 3 };
constexpr Index kMagnificationCount = 4;

Index mag_index(Magnification m);
Magnification mag_from_string(const std::string& s);  // "10X" .. "100X"
std::string mag_to_string(Magnification m);
double mag_ratio(Magnification m);  // resampling ratio relative to 10X

struct ViTConfig {
  Shape input_extents;   // spatial extents of one input patch (2 or 3 axes)
  Shape token_patch;     // extents of one token patch, same rank
  Index channels = 1;    // 1 for volumes, 3 for RGB patches
  Index embed_dim = 64;
  Index heads = 4;
  Index depth = 2;
  Index mlp_dim = 128;
  Index output_dim = 128;

  Index token_count() const;
  Index patch_numel() const;  // channels * prod(token_patch)
  void validate(const char* what) const;
};

struct PatchBag {
  std::vector<Array> patches;  // each flat [channels * S * S], channel-major
  std::vector<Magnification> mags;
  std::string case_id;
};

struct BlockParams {
  Parameter *ln1_g, *ln1_b, *ln2_g, *ln2_b;
  std::vector<Parameter*> wq, wk, wv;  // one [embed, head_dim] matrix per head
  Parameter *wo, *bo;
  Parameter *w1, *b1, *w2, *b2;
};

// Parameter handles for one extractor. Created through make_vit_params with a
// name prefix; the same struct serves both the 3D and the 2D variant (pos for
// the former, mag embeddings for the latter).
struct VitParams {
  Parameter *proj_w, *proj_b;
  Parameter* pos = nullptr;             // [tokens, embed]
  std::vector<Parameter*> mag;          // kMagnificationCount x [embed]
  std::vector<BlockParams> blocks;
  Parameter *out_w, *out_b;
};

VitParams make_vit_params(ParameterStore& store, const std::string& prefix, const ViTConfig& cfg,
                          bool positional, Rng& rng);

// Cuts the flat input into non-overlapping token patches and projects them to
// embed_dim. No encoding is added here.
Tensor project_tokens(Tape& tape, const Array& input, const ViTConfig& cfg, const VitParams& p);

Tensor tokenize_volume_3d(Tape& tape, const Array& volume, const ViTConfig& cfg,
                          const VitParams& p);
Tensor tokenize_patch_2d(Tape& tape, const Array& patch, Magnification mag, const ViTConfig& cfg,
                         const VitParams& p);

// depth x (pre-norm attention + MLP), mean pool, linear head -> [output_dim]
Tensor transformer_encode(Tape& tape, const Tensor& tokens, const ViTConfig& cfg,
                          const VitParams& p);

Tensor extract_radiological(Tape& tape, const Array& volume, const ViTConfig& cfg,
                            const VitParams& p);

// Per-patch encodings averaged over the bag. The bag is canonicalized first
// (bit-identical patches merged, groups sorted) so the result is exactly
// invariant under permutation and duplication of the bag.
Tensor extract_pathological(Tape& tape, const PatchBag& bag, const ViTConfig& cfg,
                            const VitParams& p);

}  // namespace ccdc
