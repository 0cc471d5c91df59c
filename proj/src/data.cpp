#include "ccdc/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>

#include <json.hpp>

#include "ccdc/config.hpp"
#include "ccdc/rng.hpp"

namespace ccdc {

namespace {

constexpr std::uint64_t kBasisSalt = 0x6261736973000000ull;
constexpr std::uint64_t kCaseSalt = 0x6361736500000000ull;
constexpr std::uint64_t kFoldSalt = 0x666f6c6400000000ull;
constexpr std::uint64_t kSplitSalt = 0x73706c6974000000ull;
constexpr std::uint64_t kPlanSalt = 0x706c616e00000000ull;

// Shared texture structure: class directions, cosine-mixture bases, and the
// channel response. Drawn once from the master seed so every case embeds its
// latent against the same dictionary (keeps latents linearly recoverable).
struct TextureDictionary {
  std::vector<std::vector<double>> class_dir;  // [2][latent_dim], unit norm
  std::vector<std::array<double, 4>> basis3d;  // fx, fy, fz, phase
  std::vector<std::array<double, 3>> basis2d;  // fx, fy, phase
  std::array<double, 3> channel_gain;
};

TextureDictionary make_dictionary(const SyntheticGenConfig& cfg) {
  Rng rng(mix_seed(cfg.seed, kBasisSalt));
  TextureDictionary d;
  for (int cls = 0; cls < 2; ++cls) {
    std::vector<double> u(static_cast<std::size_t>(cfg.latent_dim));
    double norm = 0;
    for (double& v : u) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : u) v /= norm;
    d.class_dir.push_back(std::move(u));
  }
  // Sub-cycle frequencies keep the fields smooth AND survive the extractor's
  // token-grid mean pooling: a wave of f cycles per crop is attenuated by
  // |sin(pi f) / (g sin(pi f / g))| per axis for a g-token grid, which decays
  // fast once f exceeds ~1. Integer f would vanish outright.
  for (Index k = 0; k < cfg.latent_dim; ++k) {
    const double fx = rng.uniform(0.2, 0.9);
    const double fy = rng.uniform(0.2, 0.9);
    const double fz = rng.uniform(0.2, 0.9);
    d.basis3d.push_back({fx, fy, fz, rng.uniform(0.0, 2.0 * std::numbers::pi)});
  }
  // The 2D band sits higher: color normalization pins per-channel mean and
  // std, so sub-cycle ramps would all look alike. A cycle or two across the
  // patch keeps the basis mixtures distinguishable after normalization.
  for (Index k = 0; k < cfg.latent_dim; ++k) {
    const double fx = rng.uniform(0.8, 2.5);
    const double fy = rng.uniform(0.8, 2.5);
    d.basis2d.push_back({fx, fy, rng.uniform(0.0, 2.0 * std::numbers::pi)});
  }
  d.channel_gain = {1.0, 0.8, 1.25};
  return d;
}

std::vector<double> draw_latent(Rng& rng, Index dim) {
  std::vector<double> v(static_cast<std::size_t>(dim));
  for (double& x : v) x = rng.normal();
  return v;
}

std::string case_name(Index i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "case_%04lld", static_cast<long long>(i));
  return buf;
}

nlohmann::json record_to_json(const CaseRecord& r) {
  nlohmann::json j;
  j["case_id"] = r.case_id;
  j["label"] = label_to_string(r.label);
  j["ct"] = r.ct_path;
  j["mask"] = r.mask_path;
  j["wsi"] = r.wsi_patch_dir ? nlohmann::json(*r.wsi_patch_dir) : nlohmann::json(nullptr);
  j["center"] = r.center;
  return j;
}

CaseRecord record_from_json(const nlohmann::json& j, const std::string& where) {
  static const std::set<std::string> known = {"case_id", "label", "ct", "mask", "wsi", "center"};
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw InputError("unknown manifest key '" + key + "' in " + where);
  CaseRecord r;
  try {
    r.case_id = j.at("case_id").get<std::string>();
    r.label = label_from_string(j.at("label").get<std::string>());
    r.ct_path = j.at("ct").get<std::string>();
    r.mask_path = j.at("mask").get<std::string>();
    if (!j.at("wsi").is_null()) r.wsi_patch_dir = j.at("wsi").get<std::string>();
    r.center = j.at("center").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError("bad manifest record in " + where + ": " + e.what());
  }
  return r;
}

}  // namespace

const char* label_to_string(Label l) { return l == Label::LUAD ? "LUAD" : "LUSC"; }

Label label_from_string(const std::string& s) {
  if (s == "LUAD") return Label::LUAD;
  if (s == "LUSC") return Label::LUSC;
  throw InputError("unknown label '" + s + "'");
}

std::size_t Manifest::paired_count() const {
  std::size_t n = 0;
  for (const CaseRecord& c : cases) n += c.paired();
  return n;
}

void save_manifest(const std::filesystem::path& path, const Manifest& m) {
  nlohmann::json j;
  j["schema_version"] = m.schema_version;
  j["cases"] = nlohmann::json::array();
  for (const CaseRecord& c : m.cases) j["cases"].push_back(record_to_json(c));
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot create " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failure on " + path.string());
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("bad manifest " + path.string() + ": " + e.what());
  }
  if (!j.contains("schema_version") || !j["schema_version"].is_number_integer() ||
      j["schema_version"].get<int>() != 1)
    throw InputError("unsupported manifest schema in " + path.string());
  Manifest m;
  m.root = path.parent_path();
  std::set<std::string> seen;
  for (const auto& rec : j.at("cases")) {
    CaseRecord r = record_from_json(rec, path.string());
    if (!seen.insert(r.case_id).second)
      throw InputError("duplicate case_id '" + r.case_id + "' in " + path.string());
    m.cases.push_back(std::move(r));
  }
  return m;
}

void SyntheticGenConfig::validate() const {
  if (n_paired_per_class < 0 || n_ct_only_per_class < 0)
    throw ConfigError("case counts must be non-negative");
  if (volume_extents.size() != 3) throw ConfigError("volume_extents must have 3 axes");
  for (Index e : volume_extents)
    if (e < 8) throw ConfigError("volume extents must be at least 8");
  if (patch_side < 4) throw ConfigError("patch_side must be at least 4");
  if (bag_size < 1) throw ConfigError("bag_size must be positive");
  if (latent_dim < 1) throw ConfigError("latent_dim must be positive");
  if (!(cross_modal_rho >= 0.0 && cross_modal_rho <= 1.0))
    throw ConfigError("cross_modal_rho must lie in [0, 1]");
  if (noise_sigma < 0) throw ConfigError("noise_sigma must be non-negative");
  if (magnifications.empty()) throw ConfigError("at least one magnification level required");
}

SyntheticCase make_synthetic_case(const SyntheticGenConfig& cfg, Index case_index, Label label,
                                  bool paired) {
  cfg.validate();
  const TextureDictionary dict = make_dictionary(cfg);
  Rng rng(mix_seed(cfg.seed, kCaseSalt ^ static_cast<std::uint64_t>(case_index)));

  const std::vector<double> shared = draw_latent(rng, cfg.latent_dim);
  const std::vector<double> ct_indep = draw_latent(rng, cfg.latent_dim);
  const std::vector<double> path_indep = draw_latent(rng, cfg.latent_dim);
  const std::vector<double>& cls = dict.class_dir[static_cast<std::size_t>(label)];

  SyntheticCase out;
  out.ct_latent.resize(static_cast<std::size_t>(cfg.latent_dim));
  out.path_latent.resize(static_cast<std::size_t>(cfg.latent_dim));
  const double rho = cfg.cross_modal_rho;
  for (std::size_t k = 0; k < out.ct_latent.size(); ++k) {
    out.ct_latent[k] = cfg.signal_strength * cls[k] + rho * shared[k] + (1.0 - rho) * ct_indep[k];
    out.path_latent[k] =
        cfg.signal_strength * cls[k] + rho * shared[k] + (1.0 - rho) * path_indep[k];
  }

  const Index X = cfg.volume_extents[0], Y = cfg.volume_extents[1], Z = cfg.volume_extents[2];
  out.volume.extents = cfg.volume_extents;
  out.volume.spacing = {1.0, 1.0, 1.0};
  out.volume.values.resize(X * Y * Z);
  constexpr double kTau = 2.0 * std::numbers::pi;
  Index w = 0;
  for (Index x = 0; x < X; ++x)
    for (Index y = 0; y < Y; ++y)
      for (Index z = 0; z < Z; ++z, ++w) {
        double v = 0;
        for (std::size_t k = 0; k < out.ct_latent.size(); ++k) {
          const auto& b = dict.basis3d[k];
          v += out.ct_latent[k] *
               std::cos(kTau * (b[0] * (x + 0.5) / X + b[1] * (y + 0.5) / Y +
                                b[2] * (z + 0.5) / Z) +
                        b[3]);
        }
        out.volume.values[w] = v + cfg.noise_sigma * rng.normal();
      }

  const Index radius = std::max<Index>(2, std::min({X, Y, Z}) / 5);
  Index center[3];
  for (int a = 0; a < 3; ++a) {
    const Index e = cfg.volume_extents[a];
    const Index jitter = static_cast<Index>(rng.uniform_index(e / 4 + 1)) - e / 8;
    center[a] = std::clamp(e / 2 + jitter, radius, e - 1 - radius);
  }
  out.mask.extents = cfg.volume_extents;
  out.mask.values.assign(static_cast<std::size_t>(X * Y * Z), 0);
  w = 0;
  for (Index x = 0; x < X; ++x)
    for (Index y = 0; y < Y; ++y)
      for (Index z = 0; z < Z; ++z, ++w) {
        const double dx = static_cast<double>(x - center[0]);
        const double dy = static_cast<double>(y - center[1]);
        const double dz = static_cast<double>(z - center[2]);
        out.mask.values[static_cast<std::size_t>(w)] =
            dx * dx + dy * dy + dz * dz <= static_cast<double>(radius * radius);
      }

  if (paired) {
    const Index side = cfg.patch_side;
    for (Index p = 0; p < cfg.bag_size; ++p) {
      const Magnification mag =
          cfg.magnifications[static_cast<std::size_t>(p) % cfg.magnifications.size()];
      const double ratio = static_cast<double>(mag_ratio(mag));
      RgbImage img;
      img.width = side;
      img.height = side;
      img.pixels.resize(static_cast<std::size_t>(3 * side * side));
      for (Index y = 0; y < side; ++y)
        for (Index x = 0; x < side; ++x) {
          double v = 0;
          for (std::size_t k = 0; k < out.path_latent.size(); ++k) {
            const auto& b = dict.basis2d[k];
            v += out.path_latent[k] *
                 std::cos(kTau * ratio * (b[0] * (x + 0.5) / side + b[1] * (y + 0.5) / side) +
                          b[2]);
          }
          v += cfg.noise_sigma * rng.normal();
          for (int c = 0; c < 3; ++c) {
            const double level =
                0.5 + 0.12 * dict.channel_gain[static_cast<std::size_t>(c)] * v;
            const double clamped = level < 0 ? 0 : (level > 1 ? 1 : level);
            img.at(x, y, c) = static_cast<std::uint8_t>(std::llround(clamped * 255.0));
          }
        }
      out.patches.push_back(std::move(img));
      out.mags.push_back(mag);
    }
  }
  return out;
}

Manifest generate_synthetic_dataset(const SyntheticGenConfig& cfg,
                                    const std::filesystem::path& out_dir) {
  cfg.validate();
  std::filesystem::create_directories(out_dir / "cases");

  // paired cases first, then CT-only; LUAD before LUSC within each group
  std::vector<std::pair<Label, bool>> roster;
  for (int cls = 0; cls < 2; ++cls)
    for (Index i = 0; i < cfg.n_paired_per_class; ++i)
      roster.emplace_back(static_cast<Label>(cls), true);
  for (int cls = 0; cls < 2; ++cls)
    for (Index i = 0; i < cfg.n_ct_only_per_class; ++i)
      roster.emplace_back(static_cast<Label>(cls), false);

  Manifest m;
  m.root = out_dir;
  for (std::size_t i = 0; i < roster.size(); ++i) {
    const auto [label, paired] = roster[i];
    const std::string id = case_name(static_cast<Index>(i));
    const SyntheticCase sc = make_synthetic_case(cfg, static_cast<Index>(i), label, paired);
    const std::filesystem::path case_dir = out_dir / "cases" / id;
    std::filesystem::create_directories(case_dir);
    write_volume(case_dir / "ct.vol", sc.volume);
    write_mask(case_dir / "mask.vol", sc.mask);

    CaseRecord r;
    r.case_id = id;
    r.label = label;
    r.ct_path = "cases/" + id + "/ct.vol";
    r.mask_path = "cases/" + id + "/mask.vol";
    r.center = i % 2 == 0 ? "A" : "B";
    if (paired) {
      write_patch_dir(case_dir / "patches", sc.patches, sc.mags);
      r.wsi_patch_dir = "cases/" + id + "/patches";
    }
    m.cases.push_back(std::move(r));
  }
  save_manifest(out_dir / "manifest.json", m);
  return m;
}

Manifest preprocess_dataset(const RunConfig& cfg, const Manifest& in,
                            const std::filesystem::path& out_dir,
                            const PreprocessErrorFn& on_error) {
  std::filesystem::create_directories(out_dir);

  std::optional<ColorStats> reference;
  if (cfg.preprocess.color_normalizer != ColorNormalizer::Identity) {
    for (const CaseRecord& r : in.cases) {
      if (!r.paired()) continue;
      const PatchDirImages raw = read_patch_images(in.resolve(*r.wsi_patch_dir));
      if (!raw.images.empty()) {
        reference = compute_color_stats(raw.images.front());
        break;
      }
    }
  }

  Manifest out;
  out.root = out_dir;
  for (const CaseRecord& r : in.cases) {
    try {
      const Volume v = read_volume(in.resolve(r.ct_path));
      const Mask m = read_mask(in.resolve(r.mask_path));
      const Mask grown = dilate_mask(m, cfg.preprocess.dilate_radius);
      Volume voi = crop_voi(v, grown, cfg.preprocess.voi_extents);
      voi.values = normalize_unit(voi.values);
      const Volume patch = extract_ct_patch(voi, cfg.model.ct.input_extents);

      CaseRecord rec = r;
      rec.ct_path = r.case_id + "_ct.vol";
      rec.mask_path = r.case_id + "_mask.vol";
      write_volume(out_dir / rec.ct_path, patch);
      write_mask(out_dir / rec.mask_path, m);
      if (r.paired()) {
        PatchDirImages raw = read_patch_images(in.resolve(*r.wsi_patch_dir));
        if (reference)
          for (RgbImage& img : raw.images)
            img = color_normalize(img, *reference, cfg.preprocess.color_normalizer);
        rec.wsi_patch_dir = r.case_id + "_patches";
        write_patch_dir(out_dir / *rec.wsi_patch_dir, raw.images, raw.mags);
      }
      out.cases.push_back(std::move(rec));
    } catch (const Error& e) {
      if (!on_error) throw;
      on_error(r.case_id, e);
    }
  }
  save_manifest(out_dir / "manifest.json", out);
  return out;
}

std::vector<int> make_folds(const Manifest& m, int k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("fold count must be at least 2");
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < m.cases.size(); ++i)
    by_class[static_cast<int>(m.cases[i].label)].push_back(i);
  for (int cls = 0; cls < 2; ++cls)
    if (by_class[cls].size() < static_cast<std::size_t>(k))
      throw ConfigError(std::string("class ") + label_to_string(static_cast<Label>(cls)) +
                        " has fewer cases than folds");
  std::vector<int> fold(m.cases.size(), -1);
  for (int cls = 0; cls < 2; ++cls) {
    auto& idx = by_class[cls];
    Rng rng(mix_seed(seed, kFoldSalt ^ static_cast<std::uint64_t>(cls)));
    for (std::size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng.uniform_index(static_cast<Index>(i)))]);
    for (std::size_t i = 0; i < idx.size(); ++i)
      fold[idx[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
  }
  return fold;
}

Split make_split(const Manifest& m, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ConfigError("test_fraction must lie strictly between 0 and 1");
  Split s;
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < m.cases.size(); ++i)
    by_class[static_cast<int>(m.cases[i].label)].push_back(i);
  for (int cls = 0; cls < 2; ++cls) {
    auto& idx = by_class[cls];
    if (idx.size() < 2)
      throw ConfigError(std::string("class ") + label_to_string(static_cast<Label>(cls)) +
                        " needs at least 2 cases to split");
    Rng rng(mix_seed(seed, kSplitSalt ^ static_cast<std::uint64_t>(cls)));
    for (std::size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[static_cast<std::size_t>(rng.uniform_index(static_cast<Index>(i)))]);
    std::size_t n_test = static_cast<std::size_t>(
        std::llround(test_fraction * static_cast<double>(idx.size())));
    n_test = std::clamp<std::size_t>(n_test, 1, idx.size() - 1);
    for (std::size_t i = 0; i < idx.size(); ++i)
      (i < n_test ? s.test : s.train).push_back(idx[i]);
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

BatchPlan build_batch_plan(const Manifest& m, const std::vector<std::size_t>& pool,
                           Index batch_size, double mode_mix, bool contrastive_enabled,
                           std::uint64_t seed) {
  std::vector<bool> flags(m.cases.size());
  for (std::size_t i = 0; i < m.cases.size(); ++i) flags[i] = m.cases[i].paired();
  return build_batch_plan(flags, pool, batch_size, mode_mix, contrastive_enabled, seed);
}

BatchPlan build_batch_plan(const std::vector<bool>& paired_flags,
                           const std::vector<std::size_t>& pool, Index batch_size,
                           double mode_mix, bool contrastive_enabled, std::uint64_t seed) {
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  std::vector<std::size_t> paired_pool, ct_pool;
  for (std::size_t i : pool) {
    if (i >= paired_flags.size()) throw UsageError("batch plan pool index out of range");
    (paired_flags[i] ? paired_pool : ct_pool).push_back(i);
  }
  BatchPlan plan;
  if (contrastive_enabled && paired_pool.empty())
    plan.warnings.push_back(
        "no paired cases available: contrastive losses are inactive, training reduces to the "
        "classification objective");

  Rng rng(mix_seed(seed, kPlanSalt));
  const auto chunk = [&](std::vector<std::size_t>& p, bool paired) {
    for (std::size_t i = p.size(); i > 1; --i) std::swap(p[i - 1], p[static_cast<std::size_t>(rng.uniform_index(static_cast<Index>(i)))]);
    std::vector<Batch> batches;
    for (std::size_t at = 0; at + static_cast<std::size_t>(batch_size) <= p.size();
         at += static_cast<std::size_t>(batch_size)) {
      Batch b;
      b.paired = paired;
      b.cases.assign(p.begin() + static_cast<std::ptrdiff_t>(at),
                     p.begin() + static_cast<std::ptrdiff_t>(at + static_cast<std::size_t>(batch_size)));
      batches.push_back(std::move(b));
    }
    return batches;
  };
  std::vector<Batch> pb = chunk(paired_pool, true);
  std::vector<Batch> cb = chunk(ct_pool, false);

  double share = mode_mix;
  if (share < 0) {
    const std::size_t total = pb.size() + cb.size();
    share = total == 0 ? 0.0 : static_cast<double>(pb.size()) / static_cast<double>(total);
  }
  if (share > 1.0) throw ConfigError("mode_mix must be at most 1");

  std::size_t ip = 0, ic = 0;
  while (ip < pb.size() && ic < cb.size()) {
    if (rng.uniform() < share)
      plan.batches.push_back(std::move(pb[ip++]));
    else
      plan.batches.push_back(std::move(cb[ic++]));
  }
  for (; ip < pb.size(); ++ip) plan.batches.push_back(std::move(pb[ip]));
  for (; ic < cb.size(); ++ic) plan.batches.push_back(std::move(cb[ic]));
  return plan;
}

}  // namespace ccdc
