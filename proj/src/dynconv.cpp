#include "ccdc/dynconv.hpp"

#include <cmath>

namespace ccdc {

void DynConvConfig::validate(Index feature_dim) const {
  if (h < 1 || l_paired < 2 || d < 1 || m < 1) throw ConfigError("dynconv extents must be positive");
  if (l_paired % 2 != 0) throw ConfigError("paired block L must be even (CT-only halves it)");
  if (gen_kernel < 1 || gen_kernel % 2 == 0)
    throw ConfigError("generator kernel side must be odd, got " + std::to_string(gen_kernel));
  if (h * l_ct() * d != feature_dim)
    throw ConfigError("feature length " + std::to_string(feature_dim) +
                      " does not factor into the CT block " + std::to_string(h) + "x" +
                      std::to_string(l_ct()) + "x" + std::to_string(d));
}

GenParams make_gen_params(ParameterStore& store, const DynConvConfig& cfg, Rng& rng) {
  GenParams gp;
  const Index k = cfg.gen_kernel;
  gp.kernels = &store.create("gen.kernels", {cfg.m, 1, k, k, k});
  const double sd = 1.0 / std::sqrt(static_cast<double>(k * k * k));
  for (Index i = 0; i < gp.kernels->numel(); ++i) gp.kernels->value[i] = rng.normal(0.0, sd);
  gp.bias = &store.create("gen.bias", {cfg.m});
  return gp;
}

HeadParams make_head_params(ParameterStore& store, const DynConvConfig& cfg, Rng& rng) {
  HeadParams hp;
  hp.w = &store.create("head.w", {cfg.m});
  const double sd = 1.0 / std::sqrt(static_cast<double>(cfg.m));
  for (Index i = 0; i < cfg.m; ++i) hp.w->value[i] = rng.normal(0.0, sd);
  hp.b = &store.create("head.b", {1});
  return hp;
}

ConcatFeature concat_reshape(const Tensor& x_r, const std::optional<Tensor>& x_p,
                             const DynConvConfig& cfg) {
  if (x_r.rank() != 1) throw ShapeError("concat_reshape: x_r must be a vector");
  cfg.validate(x_r.numel());
  if (x_p) {
    if (x_p->shape() != x_r.shape())
      throw ShapeError("concat_reshape: modality features disagree, " + shape_str(x_r.shape()) +
                       " vs " + shape_str(x_p->shape()));
    return {reshape(concat({x_r, *x_p}, 0), {cfg.h, cfg.l_paired, cfg.d}), true};
  }
  return {reshape(x_r, {cfg.h, cfg.l_ct(), cfg.d}), false};
}

Tensor generate_weights(Tape& tape, const ConcatFeature& x, const DynConvConfig& cfg,
                        const GenParams& gp) {
  const Shape& s = x.block.shape();
  Tensor as_volume = reshape(x.block, {1, s[0], s[1], s[2]});
  const Index pad = (cfg.gen_kernel - 1) / 2;
  Tensor conv = conv3d(as_volume, tape.bind(*gp.kernels), {1, 1, 1}, {pad, pad, pad});
  return channels_last(add_channel_bias(conv, tape.bind(*gp.bias)));
}

Tensor dynamic_contract(const ConcatFeature& x, const Tensor& w) {
  const Shape& s = x.block.shape();
  if (w.rank() != 4 || w.shape()[0] != s[0] || w.shape()[1] != s[1] || w.shape()[2] != s[2])
    throw ShapeError("dynamic_contract: weights " + shape_str(w.shape()) +
                     " do not cover block " + shape_str(s));
  const Index H = s[0], L = s[1], D = s[2], M = w.shape()[3];
  Tape& tape = *x.block.node()->tape;
  auto fwd = [H, L, D, M](const std::vector<std::shared_ptr<Node>>& in) {
    const Array& xv = in[0]->value;
    const Array& wv = in[1]->value;
    Array z = Array::Zero(M);
    for (Index h = 0; h < H; ++h)
      for (Index l = 0; l < L; ++l)
        for (Index d = 0; d < D; ++d) {
          const double xval = xv[((H - 1 - h) * L + (L - 1 - l)) * D + (D - 1 - d)];
          const double* wrow = wv.data() + ((h * L + l) * D + d) * M;
          for (Index m = 0; m < M; ++m) z[m] += wrow[m] * xval;
        }
    return z;
  };
  auto bwd = [H, L, D, M](const Node& self, const Array& adj, BackwardCtx& ctx) {
    Array* gx = ctx.buffer(*self.inputs[0]);
    Array* gw = ctx.buffer(*self.inputs[1]);
    if (!gx && !gw) return;
    const Array& xv = self.inputs[0]->value;
    const Array& wv = self.inputs[1]->value;
    for (Index h = 0; h < H; ++h)
      for (Index l = 0; l < L; ++l)
        for (Index d = 0; d < D; ++d) {
          const Index xi = ((H - 1 - h) * L + (L - 1 - l)) * D + (D - 1 - d);
          const Index wbase = ((h * L + l) * D + d) * M;
          if (gw) {
            const double xval = xv[xi];
            for (Index m = 0; m < M; ++m) (*gw)[wbase + m] += adj[m] * xval;
          }
          if (gx) {
            double acc = 0.0;
            for (Index m = 0; m < M; ++m) acc += adj[m] * wv[wbase + m];
            (*gx)[xi] += acc;
          }
        }
  };
  return tape.make("dynamic_contract", {x.block, w}, Shape{M}, std::move(fwd), std::move(bwd));
}

HeadOut classify_head(Tape& tape, const Tensor& z, const HeadParams& hp) {
  Tensor logit = add(inner_product(z, tape.bind(*hp.w)), tape.bind(*hp.b));
  return {logit, sigmoid(logit)};
}

}  // namespace ccdc
