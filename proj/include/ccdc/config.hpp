#pragma once

#include <filesystem>
#include <string>

#include "ccdc/data.hpp"
#include "ccdc/losses.hpp"
#include "ccdc/model.hpp"

namespace ccdc {

struct TrainConfig {
  bool contrastive = true;
  double mode_mix = -1.0;  // negative: proportional to available batches
  int checkpoint_every = 5;
  double test_fraction = 0.2;
  int folds = 5;

  void validate() const;
};

struct PreprocessConfig {
  int dilate_radius = 3;
  Shape voi_extents{36, 36, 36};
  ColorNormalizer color_normalizer = ColorNormalizer::OdMeanStd;

  void validate() const;
};

struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  HyperParams hyper;
  TrainConfig train;
  PreprocessConfig preprocess;
  SyntheticGenConfig gen;
  std::string data_dir;
  std::string out_dir;

  void validate() const;
};

// Presets. "desk" is small enough to train on a laptop core in minutes;
// "paper" carries the full-size geometry and epoch count.
RunConfig desk_preset();
RunConfig paper_preset();

// Miniature geometry for the gradient audit: small enough that central
// differences over every parameter group finish in seconds.
RunConfig mini_preset();

// Overlays a JSON config file onto `base`. Keys not present keep the base
// value; unknown keys anywhere are rejected.
RunConfig load_config(const std::filesystem::path& path, RunConfig base);

std::string config_to_json(const RunConfig& cfg);

// Digest of the architecture-defining part (model geometry); checkpoints
// refuse to load under a different digest.
std::uint64_t model_digest(const RunConfig& cfg);

}  // namespace ccdc
