#include "ccdc/vit.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace ccdc {

Index mag_index(Magnification m) { return static_cast<Index>(m); }

Magnification mag_from_string(const std::string& s) {
  if (s == "10X") return Magnification::X10;
  if (s == "20X") return Magnification::X20;
  if (s == "40X") return Magnification::X40;
  if (s == "100X") return Magnification::X100;
  throw InputError("unknown magnification level: " + s);
}

std::string mag_to_string(Magnification m) {
  switch (m) {
    case Magnification::X10: return "10X";
    case Magnification::X20: return "20X";
    case Magnification::X40: return "40X";
    case Magnification::X100: return "100X";
  }
  throw InputError("unknown magnification level");
}

double mag_ratio(Magnification m) {
  switch (m) {
    case Magnification::X10: return 1.0;
    case Magnification::X20: return 2.0;
    case Magnification::X40: return 4.0;
    case Magnification::X100: return 10.0;
  }
  throw InputError("unknown magnification level");
}

Index ViTConfig::token_count() const {
  Index t = 1;
  for (std::size_t a = 0; a < input_extents.size(); ++a) t *= input_extents[a] / token_patch[a];
  return t;
}

Index ViTConfig::patch_numel() const { return channels * numel(token_patch); }

void ViTConfig::validate(const char* what) const {
  const std::string w(what);
  if (input_extents.size() != token_patch.size() ||
      (input_extents.size() != 2 && input_extents.size() != 3))
    throw ConfigError(w + ": input extents " + shape_str(input_extents) + " and token patch " +
                      shape_str(token_patch) + " must both have 2 or 3 axes");
  for (std::size_t a = 0; a < input_extents.size(); ++a) {
    if (token_patch[a] < 1 || input_extents[a] < 1)
      throw ConfigError(w + ": extents must be positive");
    if (input_extents[a] % token_patch[a] != 0)
      throw ConfigError(w + ": input extent " + std::to_string(input_extents[a]) +
                        " not divisible by token patch " + std::to_string(token_patch[a]));
  }
  if (channels != 1 && channels != 3) throw ConfigError(w + ": channels must be 1 or 3");
  if (embed_dim < 1 || heads < 1 || embed_dim % heads != 0)
    throw ConfigError(w + ": heads must divide embed_dim");
  if (depth < 1 || mlp_dim < 1 || output_dim < 1)
    throw ConfigError(w + ": depth, mlp_dim, output_dim must be positive");
}

VitParams make_vit_params(ParameterStore& store, const std::string& prefix, const ViTConfig& cfg,
                          bool positional, Rng& rng) {
  const auto init_normal = [&](Parameter& p, double sd) {
    for (Index i = 0; i < p.numel(); ++i) p.value[i] = rng.normal(0.0, sd);
  };
  const auto init_ones = [](Parameter& p) { p.value.setOnes(); };

  VitParams vp;
  vp.proj_w = &store.create(prefix + "proj_w", {cfg.patch_numel(), cfg.embed_dim});
  init_normal(*vp.proj_w, 0.02);
  vp.proj_b = &store.create(prefix + "proj_b", {cfg.embed_dim});
  if (positional) {
    vp.pos = &store.create(prefix + "pos", {cfg.token_count(), cfg.embed_dim});
    init_normal(*vp.pos, 0.02);
  } else {
    for (Index m = 0; m < kMagnificationCount; ++m) {
      vp.mag.push_back(&store.create(prefix + "mag" + std::to_string(m), {cfg.embed_dim}));
      init_normal(*vp.mag.back(), 0.02);
    }
  }
  const Index head_dim = cfg.embed_dim / cfg.heads;
  for (Index b = 0; b < cfg.depth; ++b) {
    const std::string bp = prefix + "blk" + std::to_string(b) + ".";
    BlockParams blk;
    blk.ln1_g = &store.create(bp + "ln1_g", {cfg.embed_dim});
    init_ones(*blk.ln1_g);
    blk.ln1_b = &store.create(bp + "ln1_b", {cfg.embed_dim});
    for (Index h = 0; h < cfg.heads; ++h) {
      const std::string hp = bp + "h" + std::to_string(h) + ".";
      blk.wq.push_back(&store.create(hp + "wq", {cfg.embed_dim, head_dim}));
      init_normal(*blk.wq.back(), 0.02);
      blk.wk.push_back(&store.create(hp + "wk", {cfg.embed_dim, head_dim}));
      init_normal(*blk.wk.back(), 0.02);
      blk.wv.push_back(&store.create(hp + "wv", {cfg.embed_dim, head_dim}));
      init_normal(*blk.wv.back(), 0.02);
    }
    blk.wo = &store.create(bp + "wo", {cfg.embed_dim, cfg.embed_dim});
    init_normal(*blk.wo, 0.02);
    blk.bo = &store.create(bp + "bo", {cfg.embed_dim});
    blk.ln2_g = &store.create(bp + "ln2_g", {cfg.embed_dim});
    init_ones(*blk.ln2_g);
    blk.ln2_b = &store.create(bp + "ln2_b", {cfg.embed_dim});
    blk.w1 = &store.create(bp + "w1", {cfg.embed_dim, cfg.mlp_dim});
    init_normal(*blk.w1, 0.02);
    blk.b1 = &store.create(bp + "b1", {cfg.mlp_dim});
    blk.w2 = &store.create(bp + "w2", {cfg.mlp_dim, cfg.embed_dim});
    init_normal(*blk.w2, 0.02);
    blk.b2 = &store.create(bp + "b2", {cfg.embed_dim});
    vp.blocks.push_back(std::move(blk));
  }
  vp.out_w = &store.create(prefix + "out_w", {cfg.embed_dim, cfg.output_dim});
  init_normal(*vp.out_w, 0.02);
  vp.out_b = &store.create(prefix + "out_b", {cfg.output_dim});
  return vp;
}

namespace {

// Gathers the flat channel-major input into a [tokens, patch_numel] matrix.
// Token grid and within-patch coordinates are both walked row-major; channels
// vary slowest inside one token row.
Array gather_token_patches(const Array& input, const ViTConfig& cfg) {
  const bool is3d = cfg.input_extents.size() == 3;
  const Index X = cfg.input_extents[0];
  const Index Y = cfg.input_extents[1];
  const Index Z = is3d ? cfg.input_extents[2] : 1;
  const Index px = cfg.token_patch[0];
  const Index py = cfg.token_patch[1];
  const Index pz = is3d ? cfg.token_patch[2] : 1;
  const Index gx = X / px, gy = Y / py, gz = Z / pz;
  if (input.size() != cfg.channels * X * Y * Z)
    throw ShapeError("token gather: input has " + std::to_string(input.size()) +
                     " values, expected " + std::to_string(cfg.channels * X * Y * Z));
  Array out(cfg.token_count() * cfg.patch_numel());
  Index w = 0;
  for (Index tx = 0; tx < gx; ++tx)
    for (Index ty = 0; ty < gy; ++ty)
      for (Index tz = 0; tz < gz; ++tz)
        for (Index c = 0; c < cfg.channels; ++c)
          for (Index ix = 0; ix < px; ++ix)
            for (Index iy = 0; iy < py; ++iy)
              for (Index iz = 0; iz < pz; ++iz) {
                const Index x = tx * px + ix, y = ty * py + iy, z = tz * pz + iz;
                out[w++] = input[((c * X + x) * Y + y) * Z + z];
              }
  return out;
}

}  // namespace

Tensor project_tokens(Tape& tape, const Array& input, const ViTConfig& cfg, const VitParams& p) {
  Tensor patches = tape.constant({cfg.token_count(), cfg.patch_numel()},
                                 gather_token_patches(input, cfg));
  return linear(patches, tape.bind(*p.proj_w), tape.bind(*p.proj_b));
}

Tensor tokenize_volume_3d(Tape& tape, const Array& volume, const ViTConfig& cfg,
                          const VitParams& p) {
  if (!p.pos) throw UsageError("tokenize_volume_3d: extractor has no positional table");
  return add(project_tokens(tape, volume, cfg, p), tape.bind(*p.pos));
}

Tensor tokenize_patch_2d(Tape& tape, const Array& patch, Magnification mag, const ViTConfig& cfg,
                         const VitParams& p) {
  if (p.mag.empty()) throw UsageError("tokenize_patch_2d: extractor has no magnification table");
  const Index mi = mag_index(mag);
  if (mi < 0 || mi >= kMagnificationCount) throw InputError("unknown magnification level");
  return add_rowvec(project_tokens(tape, patch, cfg, p), tape.bind(*p.mag[mi]));
}

Tensor transformer_encode(Tape& tape, const Tensor& tokens, const ViTConfig& cfg,
                          const VitParams& p) {
  if (tokens.rank() != 2 || tokens.shape()[1] != cfg.embed_dim)
    throw ShapeError("transformer_encode: tokens " + shape_str(tokens.shape()));
  const Index head_dim = cfg.embed_dim / cfg.heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  Tensor x = tokens;
  for (const BlockParams& blk : p.blocks) {
    Tensor xn = layer_norm(x, tape.bind(*blk.ln1_g), tape.bind(*blk.ln1_b));
    std::vector<Tensor> heads;
    for (Index h = 0; h < cfg.heads; ++h) {
      Tensor q = matmul(xn, tape.bind(*blk.wq[h]));
      Tensor k = matmul(xn, tape.bind(*blk.wk[h]));
      Tensor v = matmul(xn, tape.bind(*blk.wv[h]));
      Tensor attn = softmax_rows(scale(matmul_nt(q, k), att_scale));
      heads.push_back(matmul(attn, v));
    }
    Tensor merged = cfg.heads == 1 ? heads[0] : concat(heads, 1);
    x = add(x, linear(merged, tape.bind(*blk.wo), tape.bind(*blk.bo)));
    Tensor xn2 = layer_norm(x, tape.bind(*blk.ln2_g), tape.bind(*blk.ln2_b));
    Tensor hidden = gelu(linear(xn2, tape.bind(*blk.w1), tape.bind(*blk.b1)));
    x = add(x, linear(hidden, tape.bind(*blk.w2), tape.bind(*blk.b2)));
  }
  Tensor pooled = reshape(mean_rows(x), {1, cfg.embed_dim});
  return reshape(linear(pooled, tape.bind(*p.out_w), tape.bind(*p.out_b)), {cfg.output_dim});
}

Tensor extract_radiological(Tape& tape, const Array& volume, const ViTConfig& cfg,
                            const VitParams& p) {
  return transformer_encode(tape, tokenize_volume_3d(tape, volume, cfg, p), cfg, p);
}

Tensor extract_pathological(Tape& tape, const PatchBag& bag, const ViTConfig& cfg,
                            const VitParams& p) {
  if (bag.patches.empty()) throw InputError("patch bag is empty: " + bag.case_id);
  if (bag.patches.size() != bag.mags.size())
    throw InputError("patch bag lists disagree in length: " + bag.case_id);

  // Canonical grouping: bit-identical (magnification, pixels) entries collapse
  // to one weighted representative, groups ordered by content. Makes the bag
  // mean exactly order-free and duplication-proof.
  std::vector<std::size_t> order(bag.patches.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const auto cmp = [&](std::size_t a, std::size_t b) {
    if (bag.mags[a] != bag.mags[b]) return bag.mags[a] < bag.mags[b];
    const Array& pa = bag.patches[a];
    const Array& pb = bag.patches[b];
    if (pa.size() != pb.size()) return pa.size() < pb.size();
    const int c = std::memcmp(pa.data(), pb.data(), sizeof(double) * pa.size());
    return c < 0;
  };
  const auto same = [&](std::size_t a, std::size_t b) { return !cmp(a, b) && !cmp(b, a); };
  std::sort(order.begin(), order.end(), cmp);

  const double total = static_cast<double>(bag.patches.size());
  std::vector<Tensor> weighted;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && same(order[i], order[j])) ++j;
    const double weight = static_cast<double>(j - i) / total;
    Tensor f = transformer_encode(
        tape, tokenize_patch_2d(tape, bag.patches[order[i]], bag.mags[order[i]], cfg, p), cfg, p);
    weighted.push_back(scale(f, weight));
    i = j;
  }
  return add_all(weighted);
}

}  // namespace ccdc
