#include "ccdc/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace ccdc {

namespace {

using nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key)) throw ConfigError("unknown config key '" + where + "." + key + "'");
}

Shape shape_from(const json& j, const std::string& where, std::size_t rank) {
  if (!j.is_array() || j.size() != rank)
    throw ConfigError(where + " must be an array of " + std::to_string(rank) + " extents");
  Shape s;
  for (const auto& v : j) {
    if (!v.is_number_integer() || v.get<Index>() <= 0)
      throw ConfigError(where + " extents must be positive integers");
    s.push_back(v.get<Index>());
  }
  return s;
}

template <typename T>
void take(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for '" + where + "." + key + "'");
  }
}

void overlay_vit(const json& j, ViTConfig& cfg, const std::string& where, std::size_t rank) {
  check_keys(j, {"input", "token", "embed_dim", "heads", "depth", "mlp_dim", "output_dim"}, where);
  if (j.contains("input")) cfg.input_extents = shape_from(j["input"], where + ".input", rank);
  if (j.contains("token")) cfg.token_patch = shape_from(j["token"], where + ".token", rank);
  take(j, "embed_dim", cfg.embed_dim, where);
  take(j, "heads", cfg.heads, where);
  take(j, "depth", cfg.depth, where);
  take(j, "mlp_dim", cfg.mlp_dim, where);
  take(j, "output_dim", cfg.output_dim, where);
}

void overlay_model(const json& j, ModelConfig& cfg) {
  check_keys(j, {"ct", "path", "dyn"}, "model");
  if (j.contains("ct")) overlay_vit(j["ct"], cfg.ct, "model.ct", 3);
  if (j.contains("path")) overlay_vit(j["path"], cfg.path, "model.path", 2);
  if (j.contains("dyn")) {
    const json& d = j["dyn"];
    check_keys(d, {"h", "l_paired", "d", "m", "gen_kernel"}, "model.dyn");
    take(d, "h", cfg.dyn.h, "model.dyn");
    take(d, "l_paired", cfg.dyn.l_paired, "model.dyn");
    take(d, "d", cfg.dyn.d, "model.dyn");
    take(d, "m", cfg.dyn.m, "model.dyn");
    take(d, "gen_kernel", cfg.dyn.gen_kernel, "model.dyn");
  }
}

void overlay_hyper(const json& j, HyperParams& hp) {
  check_keys(j,
             {"tau", "lambda_p", "lambda_c", "learning_rate", "batch_size", "epochs",
              "type_anchors_ct_only"},
             "hyper");
  take(j, "tau", hp.tau, "hyper");
  take(j, "lambda_p", hp.lambda_p, "hyper");
  take(j, "lambda_c", hp.lambda_c, "hyper");
  take(j, "learning_rate", hp.learning_rate, "hyper");
  take(j, "batch_size", hp.batch_size, "hyper");
  take(j, "epochs", hp.epochs, "hyper");
  take(j, "type_anchors_ct_only", hp.type_anchors_ct_only, "hyper");
}

void overlay_train(const json& j, TrainConfig& tc) {
  check_keys(j, {"contrastive", "mode_mix", "checkpoint_every", "test_fraction", "folds"},
             "train");
  take(j, "contrastive", tc.contrastive, "train");
  take(j, "mode_mix", tc.mode_mix, "train");
  take(j, "checkpoint_every", tc.checkpoint_every, "train");
  take(j, "test_fraction", tc.test_fraction, "train");
  take(j, "folds", tc.folds, "train");
}

void overlay_preprocess(const json& j, PreprocessConfig& pc) {
  check_keys(j, {"dilate_radius", "voi", "color_normalizer"}, "preprocess");
  take(j, "dilate_radius", pc.dilate_radius, "preprocess");
  if (j.contains("voi")) pc.voi_extents = shape_from(j["voi"], "preprocess.voi", 3);
  if (j.contains("color_normalizer")) {
    const std::string v = j["color_normalizer"].get<std::string>();
    if (v == "identity")
      pc.color_normalizer = ColorNormalizer::Identity;
    else if (v == "od_mean_std")
      pc.color_normalizer = ColorNormalizer::OdMeanStd;
    else
      throw ConfigError("unknown color_normalizer '" + v + "'");
  }
}

void overlay_gen(const json& j, SyntheticGenConfig& g) {
  check_keys(j,
             {"n_paired_per_class", "n_ct_only_per_class", "volume_extents", "patch_side",
              "bag_size", "latent_dim", "signal_strength", "cross_modal_rho", "noise_sigma",
              "magnifications"},
             "gen");
  take(j, "n_paired_per_class", g.n_paired_per_class, "gen");
  take(j, "n_ct_only_per_class", g.n_ct_only_per_class, "gen");
  if (j.contains("volume_extents"))
    g.volume_extents = shape_from(j["volume_extents"], "gen.volume_extents", 3);
  take(j, "patch_side", g.patch_side, "gen");
  take(j, "bag_size", g.bag_size, "gen");
  take(j, "latent_dim", g.latent_dim, "gen");
  take(j, "signal_strength", g.signal_strength, "gen");
  take(j, "cross_modal_rho", g.cross_modal_rho, "gen");
  take(j, "noise_sigma", g.noise_sigma, "gen");
  if (j.contains("magnifications")) {
    g.magnifications.clear();
    for (const auto& v : j["magnifications"])
      g.magnifications.push_back(mag_from_string(v.get<std::string>()));
  }
}

json vit_to_json(const ViTConfig& cfg) {
  return {{"input", cfg.input_extents}, {"token", cfg.token_patch},
          {"embed_dim", cfg.embed_dim}, {"heads", cfg.heads},
          {"depth", cfg.depth},         {"mlp_dim", cfg.mlp_dim},
          {"output_dim", cfg.output_dim}};
}

json model_to_json(const ModelConfig& cfg) {
  return {{"ct", vit_to_json(cfg.ct)},
          {"path", vit_to_json(cfg.path)},
          {"dyn",
           {{"h", cfg.dyn.h},
            {"l_paired", cfg.dyn.l_paired},
            {"d", cfg.dyn.d},
            {"m", cfg.dyn.m},
            {"gen_kernel", cfg.dyn.gen_kernel}}}};
}

}  // namespace

void TrainConfig::validate() const {
  if (!(mode_mix <= 1.0)) throw ConfigError("mode_mix must be at most 1");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every must be positive");
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ConfigError("test_fraction must lie strictly between 0 and 1");
  if (folds < 2) throw ConfigError("folds must be at least 2");
}

void PreprocessConfig::validate() const {
  if (dilate_radius < 0) throw ConfigError("dilate_radius must be non-negative");
  if (voi_extents.size() != 3) throw ConfigError("voi must have 3 extents");
  for (Index e : voi_extents)
    if (e <= 0) throw ConfigError("voi extents must be positive");
}

void RunConfig::validate() const {
  model.validate();
  hyper.validate();
  train.validate();
  preprocess.validate();
  gen.validate();
  for (int i = 0; i < 3; ++i)
    if (model.ct.input_extents[static_cast<std::size_t>(i)] >
        preprocess.voi_extents[static_cast<std::size_t>(i)])
      throw ConfigError("CT input extents exceed the preprocessed VOI");
  if (gen.patch_side != model.path.input_extents[0] ||
      gen.patch_side != model.path.input_extents[1])
    throw ConfigError("generated patch side does not match the pathology input extents");
}

RunConfig desk_preset() {
  RunConfig cfg;
  cfg.model.ct.input_extents = {32, 32, 32};
  cfg.model.ct.token_patch = {8, 8, 8};
  cfg.model.ct.channels = 1;
  cfg.model.ct.embed_dim = 64;
  cfg.model.ct.heads = 4;
  cfg.model.ct.depth = 2;
  cfg.model.ct.mlp_dim = 128;
  cfg.model.ct.output_dim = 128;
  cfg.model.path = cfg.model.ct;
  cfg.model.path.input_extents = {64, 64};
  cfg.model.path.token_patch = {16, 16};
  cfg.model.path.channels = 3;
  cfg.model.dyn = DynConvConfig{8, 8, 4, 128, 3};
  cfg.hyper.tau = 0.07;
  cfg.hyper.lambda_p = 1.0;
  cfg.hyper.lambda_c = 1.0;
  cfg.hyper.learning_rate = 3e-4;
  cfg.hyper.batch_size = 4;
  cfg.hyper.epochs = 30;
  cfg.gen.n_paired_per_class = 20;
  cfg.gen.n_ct_only_per_class = 30;
  cfg.gen.volume_extents = {44, 44, 44};
  cfg.gen.patch_side = 64;
  cfg.gen.bag_size = 8;
  cfg.gen.latent_dim = 8;
  cfg.gen.signal_strength = 2.5;
  cfg.gen.cross_modal_rho = 0.8;
  cfg.gen.noise_sigma = 0.1;
  cfg.preprocess.voi_extents = {36, 36, 36};
  return cfg;
}

RunConfig paper_preset() {
  RunConfig cfg = desk_preset();
  cfg.model.ct.input_extents = {112, 112, 112};
  cfg.model.ct.token_patch = {16, 16, 16};
  cfg.model.ct.embed_dim = 256;
  cfg.model.ct.heads = 8;
  cfg.model.ct.depth = 6;
  cfg.model.ct.mlp_dim = 512;
  cfg.model.ct.output_dim = 1024;
  cfg.model.path = cfg.model.ct;
  cfg.model.path.input_extents = {560, 560};
  cfg.model.path.token_patch = {56, 56};
  cfg.model.path.channels = 3;
  cfg.model.ct.channels = 1;
  cfg.model.dyn = DynConvConfig{16, 16, 8, 512, 3};
  cfg.hyper.epochs = 400;
  cfg.gen.volume_extents = {272, 272, 144};
  cfg.gen.patch_side = 560;
  cfg.preprocess.voi_extents = {256, 256, 128};
  return cfg;
}

RunConfig mini_preset() {
  RunConfig cfg = desk_preset();
  cfg.model.ct.input_extents = {8, 8, 8};
  cfg.model.ct.token_patch = {4, 4, 4};
  cfg.model.ct.embed_dim = 16;
  cfg.model.ct.heads = 2;
  cfg.model.ct.depth = 1;
  cfg.model.ct.mlp_dim = 32;
  cfg.model.ct.output_dim = 32;
  cfg.model.path = cfg.model.ct;
  cfg.model.path.input_extents = {8, 8};
  cfg.model.path.token_patch = {4, 4};
  cfg.model.path.channels = 3;
  cfg.model.ct.channels = 1;
  cfg.model.dyn = DynConvConfig{4, 4, 4, 16, 3};
  cfg.hyper.batch_size = 2;
  cfg.gen.volume_extents = {12, 12, 12};
  cfg.gen.patch_side = 8;
  cfg.gen.bag_size = 2;
  cfg.gen.latent_dim = 4;
  cfg.preprocess.voi_extents = {10, 10, 10};
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("bad config " + path.string() + ": " + e.what());
  }
  check_keys(j,
             {"schema_version", "seed", "model", "hyper", "train", "preprocess", "gen",
              "data_dir", "out_dir"},
             "config");
  if (j.contains("schema_version") && j["schema_version"].get<int>() != 1)
    throw ConfigError("unsupported config schema_version in " + path.string());
  take(j, "seed", base.seed, "config");
  if (j.contains("model")) overlay_model(j["model"], base.model);
  if (j.contains("hyper")) overlay_hyper(j["hyper"], base.hyper);
  if (j.contains("train")) overlay_train(j["train"], base.train);
  if (j.contains("preprocess")) overlay_preprocess(j["preprocess"], base.preprocess);
  if (j.contains("gen")) overlay_gen(j["gen"], base.gen);
  take(j, "data_dir", base.data_dir, "config");
  take(j, "out_dir", base.out_dir, "config");
  base.validate();
  return base;
}

std::string config_to_json(const RunConfig& cfg) {
  json j;
  j["schema_version"] = 1;
  j["seed"] = cfg.seed;
  j["model"] = model_to_json(cfg.model);
  j["hyper"] = {{"tau", cfg.hyper.tau},
                {"lambda_p", cfg.hyper.lambda_p},
                {"lambda_c", cfg.hyper.lambda_c},
                {"learning_rate", cfg.hyper.learning_rate},
                {"batch_size", cfg.hyper.batch_size},
                {"epochs", cfg.hyper.epochs},
                {"type_anchors_ct_only", cfg.hyper.type_anchors_ct_only}};
  j["train"] = {{"contrastive", cfg.train.contrastive},
                {"mode_mix", cfg.train.mode_mix},
                {"checkpoint_every", cfg.train.checkpoint_every},
                {"test_fraction", cfg.train.test_fraction},
                {"folds", cfg.train.folds}};
  std::vector<std::string> mags;
  for (Magnification m : cfg.gen.magnifications) mags.push_back(mag_to_string(m));
  j["preprocess"] = {
      {"dilate_radius", cfg.preprocess.dilate_radius},
      {"voi", cfg.preprocess.voi_extents},
      {"color_normalizer",
       cfg.preprocess.color_normalizer == ColorNormalizer::Identity ? "identity" : "od_mean_std"}};
  j["gen"] = {{"n_paired_per_class", cfg.gen.n_paired_per_class},
              {"n_ct_only_per_class", cfg.gen.n_ct_only_per_class},
              {"volume_extents", cfg.gen.volume_extents},
              {"patch_side", cfg.gen.patch_side},
              {"bag_size", cfg.gen.bag_size},
              {"latent_dim", cfg.gen.latent_dim},
              {"signal_strength", cfg.gen.signal_strength},
              {"cross_modal_rho", cfg.gen.cross_modal_rho},
              {"noise_sigma", cfg.gen.noise_sigma},
              {"magnifications", mags}};
  j["data_dir"] = cfg.data_dir;
  j["out_dir"] = cfg.out_dir;
  return j.dump(2);
}

std::uint64_t model_digest(const RunConfig& cfg) {
  const std::string canon = model_to_json(cfg.model).dump();
  return fnv1a64(canon.data(), canon.size());
}

}  // namespace ccdc
