#include "ccdc/model.hpp"

namespace ccdc {

void ModelConfig::validate() const {
  ct.validate("ct extractor");
  path.validate("pathology extractor");
  if (ct.input_extents.size() != 3) throw ConfigError("ct extractor needs 3 axes");
  if (ct.channels != 1) throw ConfigError("ct extractor is single-channel");
  if (path.input_extents.size() != 2) throw ConfigError("pathology extractor needs 2 axes");
  if (path.channels != 3) throw ConfigError("pathology extractor is RGB");
  if (ct.output_dim != path.output_dim)
    throw ConfigError("extractor output lengths disagree: " + std::to_string(ct.output_dim) +
                      " vs " + std::to_string(path.output_dim));
  dyn.validate(ct.output_dim);
}

Model::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(mix_seed(seed, 0x6d6f64656c000000ULL));
  ct_params_ = make_vit_params(store_, "ct.", cfg_.ct, /*positional=*/true, rng);
  path_params_ = make_vit_params(store_, "path.", cfg_.path, /*positional=*/false, rng);
  gen_params_ = make_gen_params(store_, cfg_.dyn, rng);
  head_params_ = make_head_params(store_, cfg_.dyn, rng);
}

Tensor Model::radiological(Tape& tape, const Array& volume) {
  ++ct_forwards_;
  return extract_radiological(tape, volume, cfg_.ct, ct_params_);
}

Tensor Model::pathological(Tape& tape, const PatchBag& bag) {
  ++path_forwards_;
  return extract_pathological(tape, bag, cfg_.path, path_params_);
}

Model::CaseOut Model::forward_case(Tape& tape, const Array& volume, const PatchBag* bag) {
  CaseOut out;
  out.x_r = radiological(tape, volume);
  std::optional<Tensor> x_p;
  if (bag) {
    out.x_p = pathological(tape, *bag);
    x_p = out.x_p;
  }
  ConcatFeature block = concat_reshape(out.x_r, x_p, cfg_.dyn);
  Tensor w = generate_weights(tape, block, cfg_.dyn, gen_params_);
  out.z = dynamic_contract(block, w);
  HeadOut head = classify_head(tape, out.z, head_params_);
  out.logit = head.logit;
  out.prob = head.prob;
  return out;
}

}  // namespace ccdc
