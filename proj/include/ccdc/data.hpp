#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ccdc/preprocess.hpp"
#include "ccdc/volume_io.hpp"

namespace ccdc {

enum class Label { LUAD = 0, LUSC = 1 };

const char* label_to_string(Label l);
Label label_from_string(const std::string& s);

struct CaseRecord {
  std::string case_id;
  Label label = Label::LUAD;
  std::string ct_path;                       // relative to the manifest directory
  std::string mask_path;
  std::optional<std::string> wsi_patch_dir;  // present iff the case is paired
  std::string center;

  bool paired() const { return wsi_patch_dir.has_value(); }
};

struct Manifest {
  int schema_version = 1;
  std::vector<CaseRecord> cases;
  std::filesystem::path root;  // directory the relative paths resolve against

  std::filesystem::path resolve(const std::string& rel) const { return root / rel; }
  std::size_t paired_count() const;
};

void save_manifest(const std::filesystem::path& path, const Manifest& m);
Manifest load_manifest(const std::filesystem::path& path);

struct SyntheticGenConfig {
  Index n_paired_per_class = 10;
  Index n_ct_only_per_class = 15;
  Shape volume_extents{44, 44, 44};
  Index patch_side = 64;
  Index bag_size = 8;
  Index latent_dim = 8;
  double signal_strength = 1.0;
  double cross_modal_rho = 0.8;   // shared-latent fraction between modalities
  double noise_sigma = 0.1;
  std::uint64_t seed = 0;
  std::vector<Magnification> magnifications{Magnification::X10, Magnification::X20,
                                            Magnification::X40, Magnification::X100};

  void validate() const;
};

// One generated case, before anything touches disk. The latent vectors are
// exposed so data-quality probes can measure cross-modal correlation.
struct SyntheticCase {
  Volume volume;
  Mask mask;
  std::vector<RgbImage> patches;  // empty for CT-only cases
  std::vector<Magnification> mags;
  std::vector<double> ct_latent;
  std::vector<double> path_latent;
};

SyntheticCase make_synthetic_case(const SyntheticGenConfig& cfg, Index case_index, Label label,
                                  bool paired);

// Writes volumes, masks, patch bags, and manifest.json under out_dir.
// Byte-identical across runs for identical (cfg, seed).
Manifest generate_synthetic_dataset(const SyntheticGenConfig& cfg,
                                    const std::filesystem::path& out_dir);

// Runs the CT pipeline (dilate, VOI crop, unit normalize, center patch) and
// patch color normalization over every case, writing results plus a fresh
// manifest under out_dir. The color reference is the first patch of the
// first paired case. A failing case is reported through on_error and
// dropped; without a hook the error propagates instead.
struct RunConfig;
using PreprocessErrorFn =
    std::function<void(const std::string& case_id, const Error& err)>;
Manifest preprocess_dataset(const RunConfig& cfg, const Manifest& in,
                            const std::filesystem::path& out_dir,
                            const PreprocessErrorFn& on_error = {});

// Case-level label-stratified fold ids (0..k-1), one per manifest case.
std::vector<int> make_folds(const Manifest& m, int k, std::uint64_t seed);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Label-stratified holdout; every class contributes at least one test case.
Split make_split(const Manifest& m, double test_fraction, std::uint64_t seed);

struct Batch {
  bool paired = false;
  std::vector<std::size_t> cases;  // manifest indices
};

struct BatchPlan {
  std::vector<Batch> batches;
  std::vector<std::string> warnings;
};

// Chunks the pool into modality-homogeneous batches of exactly batch_size
// (ragged remainders dropped) and interleaves the two chunk lists. mode_mix
// in [0,1] sets the paired share of the interleave draw; a negative value
// means proportional to the available batches.
BatchPlan build_batch_plan(const std::vector<bool>& paired_flags,
                           const std::vector<std::size_t>& pool, Index batch_size,
                           double mode_mix, bool contrastive_enabled, std::uint64_t seed);

BatchPlan build_batch_plan(const Manifest& m, const std::vector<std::size_t>& pool,
                           Index batch_size, double mode_mix, bool contrastive_enabled,
                           std::uint64_t seed);

}  // namespace ccdc
