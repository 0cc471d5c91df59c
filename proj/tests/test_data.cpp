#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "ccdc/config.hpp"
#include "ccdc/data.hpp"
#include "test_support.hpp"

using namespace ccdc;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& leaf) {
  const fs::path d = fs::temp_directory_path() / "ccdc_data_test" / leaf;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

SyntheticGenConfig tiny_gen() {
  SyntheticGenConfig g;
  g.n_paired_per_class = 2;
  g.n_ct_only_per_class = 1;
  g.volume_extents = {12, 12, 12};
  g.patch_side = 8;
  g.bag_size = 3;
  g.latent_dim = 4;
  g.signal_strength = 1.5;
  g.cross_modal_rho = 0.7;
  g.noise_sigma = 0.05;
  g.seed = 11;
  g.magnifications = {Magnification::X10, Magnification::X20};
  return g;
}

// In-memory manifest with the given per-class label layout; no files behind it.
Manifest label_manifest(const std::vector<Label>& labels, int paired_every = 1) {
  Manifest m;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    CaseRecord r;
    r.case_id = "case_" + std::to_string(i);
    r.label = labels[i];
    r.ct_path = r.case_id + "_ct.vol";
    r.mask_path = r.case_id + "_mask.vol";
    r.center = i % 2 == 0 ? "A" : "B";
    if (paired_every > 0 && static_cast<int>(i) % paired_every == 0)
      r.wsi_patch_dir = r.case_id + "_patches";
    m.cases.push_back(std::move(r));
  }
  return m;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ma += a[i], mb += b[i];
  ma /= n, mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

std::vector<fs::path> files_under(const fs::path& root) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root));
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_CASE("generated datasets are byte-identical for identical config and seed") {
  const SyntheticGenConfig g = tiny_gen();
  const fs::path d1 = scratch_dir("det1");
  const fs::path d2 = scratch_dir("det2");
  generate_synthetic_dataset(g, d1);
  generate_synthetic_dataset(g, d2);

  const auto f1 = files_under(d1);
  const auto f2 = files_under(d2);
  REQUIRE(f1 == f2);
  CHECK(f1.size() > 10);  // volumes, masks, patch bags, manifest
  for (const auto& rel : f1) CHECK(file_digest(d1 / rel) == file_digest(d2 / rel));

  SyntheticGenConfig g3 = g;
  g3.seed = 12;
  const fs::path d3 = scratch_dir("det3");
  generate_synthetic_dataset(g3, d3);
  CHECK(file_digest(d1 / "cases/case_0000/ct.vol") != file_digest(d3 / "cases/case_0000/ct.vol"));
}

TEST_CASE("generated manifest lists paired cases first with alternating centers") {
  const SyntheticGenConfig g = tiny_gen();  // 2 paired + 1 CT-only per class
  const fs::path dir = scratch_dir("roster");
  const Manifest m = generate_synthetic_dataset(g, dir);

  REQUIRE(m.cases.size() == 6);
  CHECK(m.paired_count() == 4);
  for (std::size_t i = 0; i < m.cases.size(); ++i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "case_%04zu", i);
    CHECK(m.cases[i].case_id == buf);
    CHECK(m.cases[i].center == (i % 2 == 0 ? "A" : "B"));
    CHECK(fs::exists(m.resolve(m.cases[i].ct_path)));
    CHECK(fs::exists(m.resolve(m.cases[i].mask_path)));
  }
  // paired block first (LUAD then LUSC), then the CT-only block in same order
  const std::vector<std::pair<Label, bool>> want = {
      {Label::LUAD, true},  {Label::LUAD, true},  {Label::LUSC, true},
      {Label::LUSC, true},  {Label::LUAD, false}, {Label::LUSC, false}};
  for (std::size_t i = 0; i < want.size(); ++i) {
    CHECK(m.cases[i].label == want[i].first);
    CHECK(m.cases[i].paired() == want[i].second);
  }

  // reloading from disk reproduces the in-memory manifest
  const Manifest r = load_manifest(dir / "manifest.json");
  REQUIRE(r.cases.size() == m.cases.size());
  for (std::size_t i = 0; i < m.cases.size(); ++i) {
    CHECK(r.cases[i].case_id == m.cases[i].case_id);
    CHECK(r.cases[i].label == m.cases[i].label);
    CHECK(r.cases[i].wsi_patch_dir == m.cases[i].wsi_patch_dir);
    CHECK(r.cases[i].center == m.cases[i].center);
  }
}

TEST_CASE("case volume, mask, and patch bag have the configured shapes") {
  SyntheticGenConfig g = tiny_gen();
  const SyntheticCase sc = make_synthetic_case(g, 0, Label::LUAD, true);

  CHECK(sc.volume.extents == g.volume_extents);
  CHECK(sc.mask.extents == g.volume_extents);
  CHECK(sc.mask.foreground() > 0);
  CHECK(sc.mask.foreground() < sc.mask.numel());
  REQUIRE(sc.patches.size() == static_cast<std::size_t>(g.bag_size));
  REQUIRE(sc.mags.size() == sc.patches.size());
  for (const RgbImage& p : sc.patches) {
    CHECK(p.width == g.patch_side);
    CHECK(p.height == g.patch_side);
  }
  // magnifications cycle through the configured list
  CHECK(sc.mags[0] == Magnification::X10);
  CHECK(sc.mags[1] == Magnification::X20);
  CHECK(sc.mags[2] == Magnification::X10);

  const SyntheticCase ct_only = make_synthetic_case(g, 1, Label::LUSC, false);
  CHECK(ct_only.patches.empty());
  CHECK(ct_only.mags.empty());
}

TEST_CASE("cross-modal latent correlation tracks the mixing weight") {
  SyntheticGenConfig g = tiny_gen();
  g.signal_strength = 0.0;  // isolate the shared/independent split

  g.cross_modal_rho = 1.0;
  for (Index i = 0; i < 4; ++i) {
    const SyntheticCase sc = make_synthetic_case(g, i, Label::LUAD, false);
    CHECK(sc.ct_latent == sc.path_latent);  // fully shared
  }

  std::vector<double> ct0, path0, ct9, path9;
  g.cross_modal_rho = 0.0;
  for (Index i = 0; i < 60; ++i) {
    const SyntheticCase sc = make_synthetic_case(g, i, Label::LUAD, false);
    ct0.insert(ct0.end(), sc.ct_latent.begin(), sc.ct_latent.end());
    path0.insert(path0.end(), sc.path_latent.begin(), sc.path_latent.end());
  }
  g.cross_modal_rho = 0.9;
  for (Index i = 0; i < 60; ++i) {
    const SyntheticCase sc = make_synthetic_case(g, i, Label::LUAD, false);
    ct9.insert(ct9.end(), sc.ct_latent.begin(), sc.ct_latent.end());
    path9.insert(path9.end(), sc.path_latent.begin(), sc.path_latent.end());
  }
  const double r0 = pearson(ct0, path0);
  const double r9 = pearson(ct9, path9);
  CHECK(std::abs(r0) < 0.2);
  CHECK(r9 > 0.9);
}

TEST_CASE("class signal shifts latents and zero signal makes labels interchangeable") {
  SyntheticGenConfig g = tiny_gen();
  const SyntheticCase a = make_synthetic_case(g, 0, Label::LUAD, false);
  const SyntheticCase b = make_synthetic_case(g, 0, Label::LUSC, false);
  CHECK(a.ct_latent != b.ct_latent);

  g.signal_strength = 0.0;
  const SyntheticCase a0 = make_synthetic_case(g, 0, Label::LUAD, false);
  const SyntheticCase b0 = make_synthetic_case(g, 0, Label::LUSC, false);
  CHECK(a0.ct_latent == b0.ct_latent);  // per-case noise is label-independent
}

TEST_CASE("fold assignment stratifies by class and partitions every case") {
  // 6 LUAD / 4 LUSC, two folds: each fold gets 3 LUAD and 2 LUSC
  std::vector<Label> labels(10, Label::LUAD);
  for (int i = 6; i < 10; ++i) labels[static_cast<std::size_t>(i)] = Label::LUSC;
  const Manifest m = label_manifest(labels);

  const std::vector<int> fold = make_folds(m, 2, 5);
  REQUIRE(fold.size() == 10);
  int count[2][2] = {};
  for (std::size_t i = 0; i < fold.size(); ++i) {
    REQUIRE(fold[i] >= 0);
    REQUIRE(fold[i] < 2);
    ++count[static_cast<int>(m.cases[i].label)][fold[i]];
  }
  CHECK(count[0][0] == 3);
  CHECK(count[0][1] == 3);
  CHECK(count[1][0] == 2);
  CHECK(count[1][1] == 2);

  CHECK(make_folds(m, 2, 5) == fold);  // same seed, same assignment
  bool any_differs = false;
  for (std::uint64_t s = 6; s < 9; ++s) any_differs |= make_folds(m, 2, s) != fold;
  CHECK(any_differs);
}

TEST_CASE("five balanced folds hold one case of each class") {
  std::vector<Label> labels;
  for (int i = 0; i < 5; ++i) labels.push_back(Label::LUAD);
  for (int i = 0; i < 5; ++i) labels.push_back(Label::LUSC);
  const Manifest m = label_manifest(labels);

  const std::vector<int> fold = make_folds(m, 5, 0);
  int per_fold[5] = {};
  int luad_per_fold[5] = {};
  for (std::size_t i = 0; i < fold.size(); ++i) {
    ++per_fold[fold[i]];
    if (m.cases[i].label == Label::LUAD) ++luad_per_fold[fold[i]];
  }
  for (int f = 0; f < 5; ++f) {
    CHECK(per_fold[f] == 2);
    CHECK(luad_per_fold[f] == 1);
  }
}

TEST_CASE("fold assignment rejects impossible configurations") {
  const Manifest m =
      label_manifest({Label::LUAD, Label::LUAD, Label::LUAD, Label::LUSC, Label::LUSC});
  CHECK_THROWS_AS(make_folds(m, 1, 0), ConfigError);
  CHECK_THROWS_AS(make_folds(m, 3, 0), ConfigError);  // LUSC has only 2 cases
  CHECK_NOTHROW(make_folds(m, 2, 0));
}

TEST_CASE("holdout split is a stratified partition") {
  std::vector<Label> labels;
  for (int i = 0; i < 5; ++i) labels.push_back(Label::LUAD);
  for (int i = 0; i < 5; ++i) labels.push_back(Label::LUSC);
  const Manifest m = label_manifest(labels);

  const Split s = make_split(m, 0.2, 3);
  CHECK(s.test.size() == 2);
  CHECK(s.train.size() == 8);
  int test_luad = 0;
  for (std::size_t i : s.test) test_luad += m.cases[i].label == Label::LUAD;
  CHECK(test_luad == 1);  // one test case per class

  std::set<std::size_t> seen(s.train.begin(), s.train.end());
  seen.insert(s.test.begin(), s.test.end());
  CHECK(seen.size() == 10);
  CHECK(std::is_sorted(s.train.begin(), s.train.end()));
  CHECK(std::is_sorted(s.test.begin(), s.test.end()));

  const Split again = make_split(m, 0.2, 3);
  CHECK(again.train == s.train);
  CHECK(again.test == s.test);
}

TEST_CASE("holdout split keeps at least one case per class on both sides") {
  const Manifest tiny =
      label_manifest({Label::LUAD, Label::LUAD, Label::LUSC, Label::LUSC});
  const Split s = make_split(tiny, 0.5, 1);
  CHECK(s.test.size() == 2);
  CHECK(s.train.size() == 2);

  // rounding would push the test share to zero; the split clamps it to one
  const Split slim = make_split(tiny, 0.05, 1);
  CHECK(slim.test.size() == 2);

  CHECK_THROWS_AS(make_split(tiny, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(make_split(tiny, 1.0, 1), ConfigError);
  const Manifest lone = label_manifest({Label::LUAD, Label::LUSC, Label::LUSC});
  CHECK_THROWS_AS(make_split(lone, 0.5, 1), ConfigError);
}

TEST_CASE("batch plan yields modality-homogeneous batches of exact size") {
  // 5 paired, 7 CT-only in one pool
  std::vector<bool> flags(12, false);
  for (std::size_t i = 0; i < 5; ++i) flags[i] = true;
  std::vector<std::size_t> pool(12);
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;

  const BatchPlan plan = build_batch_plan(flags, pool, 2, -1.0, true, 9);
  CHECK(plan.warnings.empty());
  std::size_t paired_batches = 0, ct_batches = 0;
  std::set<std::size_t> used;
  for (const Batch& b : plan.batches) {
    REQUIRE(b.cases.size() == 2);
    for (std::size_t i : b.cases) {
      CHECK(flags[i] == b.paired);
      CHECK(used.insert(i).second);  // no case appears twice
    }
    ++(b.paired ? paired_batches : ct_batches);
  }
  CHECK(paired_batches == 2);  // 5 paired -> 2 full batches, 1 dropped
  CHECK(ct_batches == 3);      // 7 CT-only -> 3 full batches, 1 dropped
}

TEST_CASE("ragged remainder is dropped and the drop rotates with the seed") {
  std::vector<bool> flags(10, true);
  std::vector<std::size_t> pool(10);
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;

  std::set<std::size_t> ever_used;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const BatchPlan plan = build_batch_plan(flags, pool, 4, -1.0, false, seed);
    REQUIRE(plan.batches.size() == 2);
    for (const Batch& b : plan.batches)
      ever_used.insert(b.cases.begin(), b.cases.end());
  }
  CHECK(ever_used.size() == 10);  // shuffling means nobody is always left out
}

TEST_CASE("mode mix extremes order the interleave deterministically") {
  std::vector<bool> flags(16, false);
  for (std::size_t i = 0; i < 8; ++i) flags[i] = true;
  std::vector<std::size_t> pool(16);
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;

  const BatchPlan all_paired_first = build_batch_plan(flags, pool, 2, 1.0, true, 4);
  REQUIRE(all_paired_first.batches.size() == 8);
  for (std::size_t i = 0; i < 4; ++i) CHECK(all_paired_first.batches[i].paired);
  for (std::size_t i = 4; i < 8; ++i) CHECK_FALSE(all_paired_first.batches[i].paired);

  const BatchPlan ct_first = build_batch_plan(flags, pool, 2, 0.0, true, 4);
  for (std::size_t i = 0; i < 4; ++i) CHECK_FALSE(ct_first.batches[i].paired);
  for (std::size_t i = 4; i < 8; ++i) CHECK(ct_first.batches[i].paired);
}

TEST_CASE("balanced mode mix interleaves rather than segregating") {
  std::vector<bool> flags(80, false);
  for (std::size_t i = 0; i < 40; ++i) flags[i] = true;
  std::vector<std::size_t> pool(80);
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;

  const BatchPlan plan = build_batch_plan(flags, pool, 1, 0.5, true, 21);
  REQUIRE(plan.batches.size() == 80);
  std::size_t paired_total = 0, paired_first_20 = 0;
  for (std::size_t i = 0; i < plan.batches.size(); ++i) {
    paired_total += plan.batches[i].paired;
    if (i < 20) paired_first_20 += plan.batches[i].paired;
  }
  CHECK(paired_total == 40);
  CHECK(paired_first_20 > 2);   // a segregated plan would put 0 or 20 here
  CHECK(paired_first_20 < 18);
}

TEST_CASE("contrastive plan without paired cases warns and degrades to classification") {
  std::vector<bool> flags(8, false);
  std::vector<std::size_t> pool(8);
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;

  const BatchPlan warned = build_batch_plan(flags, pool, 4, -1.0, true, 0);
  REQUIRE(warned.batches.size() == 2);
  for (const Batch& b : warned.batches) CHECK_FALSE(b.paired);
  REQUIRE(warned.warnings.size() == 1);
  CHECK(warned.warnings[0].find("no paired cases") != std::string::npos);

  const BatchPlan quiet = build_batch_plan(flags, pool, 4, -1.0, false, 0);
  CHECK(quiet.warnings.empty());
}

TEST_CASE("batch plan rejects bad sizes, mixes, and pool indices") {
  std::vector<bool> flags(4, true);
  const std::vector<std::size_t> pool = {0, 1, 2, 3};
  CHECK_THROWS_AS(build_batch_plan(flags, pool, 0, 0.5, true, 0), ConfigError);
  CHECK_THROWS_AS(build_batch_plan(flags, pool, 2, 1.5, true, 0), ConfigError);
  CHECK_THROWS_AS(build_batch_plan(flags, {0, 7}, 2, 0.5, true, 0), UsageError);
}

TEST_CASE("manifest io rejects foreign keys, duplicates, and schema drift") {
  const fs::path dir = scratch_dir("manifest");
  Manifest m = label_manifest({Label::LUAD, Label::LUSC}, 2);
  m.root = dir;
  save_manifest(dir / "manifest.json", m);
  const Manifest back = load_manifest(dir / "manifest.json");
  REQUIRE(back.cases.size() == 2);
  CHECK(back.cases[0].paired());
  CHECK_FALSE(back.cases[1].paired());
  CHECK(back.root == dir);

  auto write_text = [&](const std::string& name, const std::string& text) {
    std::ofstream out(dir / name);
    out << text;
    return dir / name;
  };
  const std::string record =
      R"({"case_id":"c0","label":"LUAD","ct":"a.vol","mask":"b.vol","center":"A"})";
  CHECK_THROWS_AS(
      load_manifest(write_text(
          "unknown.json", R"({"schema_version":1,"cases":[)" + record +
                              R"(],"extra":true})")),
      InputError);
  const std::string foreign =
      R"({"case_id":"c0","label":"LUAD","ct":"a.vol","mask":"b.vol","center":"A","notes":"x"})";
  CHECK_THROWS_AS(load_manifest(write_text(
                      "foreign.json",
                      R"({"schema_version":1,"cases":[)" + foreign + "]}")),
                  InputError);
  CHECK_THROWS_AS(load_manifest(write_text(
                      "dup.json", R"({"schema_version":1,"cases":[)" + record +
                                      "," + record + "]}")),
                  InputError);
  CHECK_THROWS_AS(load_manifest(write_text(
                      "drift.json", R"({"schema_version":2,"cases":[]})")),
                  InputError);
  CHECK_THROWS_AS(load_manifest(write_text("bad.json", "{")), InputError);
  CHECK_THROWS_AS(load_manifest(write_text(
                      "label.json",
                      R"({"schema_version":1,"cases":[{"case_id":"c0","label":"SCLC",)"
                      R"("ct":"a.vol","mask":"b.vol","center":"A"}]})")),
                  InputError);
}

TEST_CASE("preprocessing reshapes every case and drops broken ones via the hook") {
  RunConfig cfg = mini_preset();
  cfg.gen.n_paired_per_class = 2;
  cfg.gen.n_ct_only_per_class = 1;
  cfg.gen.seed = 3;
  const fs::path raw = scratch_dir("prep_raw");
  const fs::path cooked = scratch_dir("prep_out");
  const Manifest m = generate_synthetic_dataset(cfg.gen, raw);

  const Manifest out = preprocess_dataset(cfg, m, cooked);
  REQUIRE(out.cases.size() == m.cases.size());
  for (const CaseRecord& r : out.cases) {
    const Volume v = read_volume(out.resolve(r.ct_path));
    CHECK(v.extents == cfg.model.ct.input_extents);
    double lo = 1e300, hi = -1e300;
    for (Index i = 0; i < v.numel(); ++i) {
      lo = std::min(lo, static_cast<double>(v.values[i]));
      hi = std::max(hi, static_cast<double>(v.values[i]));
    }
    CHECK(lo >= 0.0);
    CHECK(hi <= 1.0);
    const Mask mask = read_mask(out.resolve(r.mask_path));
    CHECK(mask.extents == cfg.gen.volume_extents);  // mask passes through uncropped
    if (r.paired()) {
      const PatchDirImages bags = read_patch_images(out.resolve(*r.wsi_patch_dir));
      CHECK(bags.images.size() == static_cast<std::size_t>(cfg.gen.bag_size));
    }
  }

  // corrupt one CT volume: with a hook the case is reported and dropped
  {
    std::ofstream bad(raw / m.cases[1].ct_path, std::ios::binary | std::ios::trunc);
    bad << "CCDCVOL1 but far too short";
  }
  std::vector<std::string> failed;
  const fs::path cooked2 = scratch_dir("prep_out2");
  const Manifest partial = preprocess_dataset(
      cfg, m, cooked2, [&](const std::string& id, const Error&) { failed.push_back(id); });
  REQUIRE(failed.size() == 1);
  CHECK(failed[0] == m.cases[1].case_id);
  CHECK(partial.cases.size() == m.cases.size() - 1);
  for (const CaseRecord& r : partial.cases) CHECK(r.case_id != m.cases[1].case_id);
  // the written manifest reflects the surviving subset
  CHECK(load_manifest(cooked2 / "manifest.json").cases.size() == partial.cases.size());

  // without a hook the same corruption propagates
  const fs::path cooked3 = scratch_dir("prep_out3");
  CHECK_THROWS_AS(preprocess_dataset(cfg, m, cooked3), Error);
}
