// Command-line driver: gen-data | preprocess | train | eval | gradcheck | compare.
// Exit codes: 0 ok, 1 unexpected, 2 usage, 3 config, 4 input, 5 io,
// 6 numeric domain, 7 metric.

#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "ccdc/checkpoint.hpp"
#include "ccdc/config.hpp"
#include "ccdc/data.hpp"
#include "ccdc/metrics.hpp"
#include "ccdc/model.hpp"
#include "ccdc/preprocess.hpp"
#include "ccdc/train.hpp"
#include "ccdc/volume_io.hpp"

namespace fs = std::filesystem;
using namespace ccdc;

namespace {

constexpr const char* kUsage = R"(usage: ccdcnet <command> [flags]

commands:
  gen-data     write a synthetic dataset (volumes, masks, patch bags, manifest)
  preprocess   run the CT crop/normalize chain and patch color normalization
  train        train on a manifest, logging epochs and saving checkpoints
  eval         score a checkpoint on a manifest, one report per modality mode
  gradcheck    finite-difference audit of the training loss gradients
  compare      paired t-tests between two metric reports

global flags:
  --config PATH   JSON config overlaid on the preset
  --seed U64      overrides the config seed
  --out DIR       output directory (default: the config's out_dir or 'run')
  --preset NAME   desk | paper (default desk)

command flags:
  preprocess|train|eval: --manifest PATH   (default: <data_dir>/manifest.json)
  eval:                  --checkpoint PATH (default: <out>/model.ckpt)
                         --split all|test  (default all)
  compare:               positional REPORT_A.json REPORT_B.json

exit codes: 0 ok, 1 unexpected error, 2 usage, 3 config, 4 input,
            5 io, 6 numeric domain, 7 metric
)";

int exit_code_for(const Error& e) {
  if (dynamic_cast<const UsageError*>(&e)) return 2;
  if (dynamic_cast<const ConfigError*>(&e)) return 3;
  if (dynamic_cast<const InputError*>(&e)) return 4;
  if (dynamic_cast<const ShapeError*>(&e)) return 4;
  if (dynamic_cast<const IoError*>(&e)) return 5;
  if (dynamic_cast<const DomainError*>(&e)) return 6;
  if (dynamic_cast<const MetricError*>(&e)) return 7;
  return 1;
}

struct CliArgs {
  std::string command;
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> preset;
  std::optional<std::string> manifest;
  std::optional<std::string> checkpoint;
  std::string split = "all";
  bool corrupt_adjoint = false;  // hidden: gradcheck mutation fixture
  std::vector<std::string> positional;
};

std::string need_value(int argc, char** argv, int& i, const std::string& flag) {
  if (i + 1 >= argc) throw UsageError(flag + " needs a value");
  return argv[++i];
}

CliArgs parse_args(int argc, char** argv) {
  if (argc < 2) throw UsageError("no command given");
  CliArgs a;
  a.command = argv[1];
  for (int i = 2; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg == "--config") {
      a.config = need_value(argc, argv, i, arg);
    } else if (arg == "--seed") {
      const std::string v = need_value(argc, argv, i, arg);
      try {
        std::size_t pos = 0;
        a.seed = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
      } catch (const std::exception&) {
        throw UsageError("--seed wants an unsigned integer, got '" + v + "'");
      }
    } else if (arg == "--out") {
      a.out = need_value(argc, argv, i, arg);
    } else if (arg == "--preset") {
      a.preset = need_value(argc, argv, i, arg);
    } else if (arg == "--manifest") {
      a.manifest = need_value(argc, argv, i, arg);
    } else if (arg == "--checkpoint") {
      a.checkpoint = need_value(argc, argv, i, arg);
    } else if (arg == "--split") {
      a.split = need_value(argc, argv, i, arg);
      if (a.split != "all" && a.split != "test")
        throw UsageError("--split wants 'all' or 'test'");
    } else if (arg == "--corrupt-adjoint") {
      a.corrupt_adjoint = true;
    } else if (!arg.empty() && arg[0] == '-') {
      throw UsageError("unknown flag '" + arg + "'");
    } else {
      a.positional.push_back(arg);
    }
  }
  return a;
}

RunConfig resolve_config(const CliArgs& a, RunConfig base) {
  if (a.preset) {
    if (*a.preset == "desk")
      base = desk_preset();
    else if (*a.preset == "paper")
      base = paper_preset();
    else
      throw UsageError("unknown preset '" + *a.preset + "' (desk or paper)");
  }
  RunConfig cfg = a.config ? load_config(*a.config, base) : base;
  if (a.seed) cfg.seed = *a.seed;
  if (a.out) cfg.out_dir = *a.out;
  if (cfg.out_dir.empty()) cfg.out_dir = "run";
  return cfg;
}

fs::path manifest_path(const CliArgs& a, const RunConfig& cfg) {
  if (a.manifest) return *a.manifest;
  if (cfg.data_dir.empty())
    throw UsageError("no manifest: pass --manifest or set data_dir in the config");
  return fs::path(cfg.data_dir) / "manifest.json";
}

int cmd_gen_data(const CliArgs& a) {
  RunConfig cfg = resolve_config(a, desk_preset());
  cfg.validate();
  SyntheticGenConfig gen = cfg.gen;
  if (a.seed) gen.seed = *a.seed;
  const fs::path out = a.out ? fs::path(*a.out)
                             : (!cfg.data_dir.empty() ? fs::path(cfg.data_dir)
                                                      : fs::path(cfg.out_dir) / "data");
  const Manifest m = generate_synthetic_dataset(gen, out);
  std::cout << "wrote " << m.cases.size() << " cases (" << m.paired_count() << " paired) under "
            << out.string() << '\n';
  return 0;
}

int cmd_preprocess(const CliArgs& a) {
  RunConfig cfg = resolve_config(a, desk_preset());
  cfg.validate();
  const Manifest in = load_manifest(manifest_path(a, cfg));
  int first_code = 0;
  const Manifest out =
      preprocess_dataset(cfg, in, cfg.out_dir, [&](const std::string& id, const Error& e) {
        std::cerr << "error: " << id << ": " << e.what() << '\n';
        if (first_code == 0) first_code = exit_code_for(e);
      });
  std::cout << "preprocessed " << out.cases.size() << " of " << in.cases.size() << " cases into "
            << fs::path(cfg.out_dir).string() << '\n';
  return first_code;
}

int cmd_train(const CliArgs& a) {
  RunConfig cfg = resolve_config(a, desk_preset());
  cfg.validate();
  const Manifest m = load_manifest(manifest_path(a, cfg));
  const fs::path out_dir = cfg.out_dir;
  fs::create_directories(out_dir);
  {
    std::ofstream cfg_out(out_dir / "config.json", std::ios::trunc);
    cfg_out << config_to_json(cfg) << '\n';
  }
  std::cout << "training on " << m.cases.size() << " cases (" << m.paired_count()
            << " paired), seed " << cfg.seed << ", adam beta1=0.9 beta2=0.999 eps=1e-8\n";
  const TrainRunResult res = train_run(cfg, m, out_dir);
  if (!res.epochs.empty()) {
    const EpochLog& last = res.epochs.back();
    std::cout << "finished epoch " << last.epoch << ": class " << last.class_loss << " type "
              << last.type_loss << " corr " << last.corr_loss << " total " << last.total_loss
              << '\n';
  }
  char digest[32];
  std::snprintf(digest, sizeof digest, "%016llx",
                static_cast<unsigned long long>(res.checkpoint_digest));
  std::cout << "checkpoint " << (out_dir / "model.ckpt").string() << " (digest " << digest
            << ")\n";
  std::cout << "holdout, ct-only mode:\n" << res.ct_only_report.to_table();
  if (res.paired_mode_evaluated)
    std::cout << "holdout, paired mode:\n" << res.paired_report.to_table();
  else
    std::cerr << "warning: no paired cases in the holdout; skipping paired mode\n";
  return 0;
}

// Stratified fold partition of `idx`, capped so every fold keeps at least
// one case of each class; one fold when a class is too scarce.
MetricsReport fold_report(Model& model, const std::vector<CaseData>& cases,
                          const std::vector<std::size_t>& idx, bool paired_mode, int want_folds,
                          std::uint64_t seed) {
  std::size_t n0 = 0, n1 = 0;
  for (std::size_t i : idx) (cases[i].label == Label::LUAD ? n0 : n1)++;
  const int k = std::min<int>(want_folds, static_cast<int>(std::min(n0, n1)));
  if (k < 2) {
    const EvalOutcome e = evaluate(model, cases, idx, paired_mode);
    return aggregate_folds({FoldMetrics{e.acc, e.auc, e.f1, e.threshold}});
  }
  Manifest sub;
  sub.cases.resize(idx.size());
  for (std::size_t j = 0; j < idx.size(); ++j)
    sub.cases[j].label = cases[idx[j]].label;
  const std::vector<int> folds = make_folds(sub, k, seed);
  std::vector<FoldMetrics> per_fold;
  for (int f = 0; f < k; ++f) {
    std::vector<std::size_t> members;
    for (std::size_t j = 0; j < idx.size(); ++j)
      if (folds[j] == f) members.push_back(idx[j]);
    const EvalOutcome e = evaluate(model, cases, members, paired_mode);
    per_fold.push_back({e.acc, e.auc, e.f1, e.threshold});
  }
  return aggregate_folds(per_fold);
}

int cmd_eval(const CliArgs& a) {
  RunConfig cfg = resolve_config(a, desk_preset());
  cfg.validate();
  const Manifest m = load_manifest(manifest_path(a, cfg));
  const fs::path out_dir = cfg.out_dir;
  const fs::path ckpt = a.checkpoint ? fs::path(*a.checkpoint) : out_dir / "model.ckpt";

  Model model(cfg.model, cfg.seed);
  AdamState adam = AdamState::zeros_like(model.params());
  load_checkpoint(ckpt, model.params(), adam, model_digest(cfg));

  const std::vector<CaseData> cases = load_cases(cfg, m);
  std::vector<std::size_t> idx;
  if (a.split == "test") {
    idx = make_split(m, cfg.train.test_fraction, cfg.seed).test;
  } else {
    idx.resize(cases.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  }

  fs::create_directories(out_dir);
  const MetricsReport ct_report =
      fold_report(model, cases, idx, false, cfg.train.folds, cfg.seed);
  {
    std::ofstream out(out_dir / "eval_ct_only.json", std::ios::trunc);
    out << ct_report.to_json() << '\n';
  }
  std::cout << "ct-only mode (" << idx.size() << " cases):\n" << ct_report.to_table();

  std::vector<std::size_t> paired_idx;
  for (std::size_t i : idx)
    if (cases[i].paired()) paired_idx.push_back(i);
  if (paired_idx.empty()) {
    std::cerr << "warning: no paired cases in the selection; skipping paired mode\n";
    return 0;
  }
  const MetricsReport p_report =
      fold_report(model, cases, paired_idx, true, cfg.train.folds, cfg.seed);
  {
    std::ofstream out(out_dir / "eval_paired.json", std::ios::trunc);
    out << p_report.to_json() << '\n';
  }
  std::cout << "paired mode (" << paired_idx.size() << " cases):\n" << p_report.to_table();
  return 0;
}

int cmd_gradcheck(const CliArgs& a) {
  // Defaults to the miniature geometry; --preset/--config audit bigger models.
  RunConfig base = mini_preset();
  RunConfig cfg = resolve_config(a, base);
  constexpr double kGate = 1e-4;
  bool ok = true;
  for (const bool paired : {true, false}) {
    GradCheckOptions opts;
    opts.seed = cfg.seed;
    const GradCheckReport rep = model_grad_check(cfg, paired, opts, a.corrupt_adjoint);
    std::cout << (paired ? "paired mode:\n" : "ct-only mode:\n");
    for (const GradCheckGroup& g : rep.groups) {
      if (!g.has_grad_path) {
        std::cout << "  " << g.name << ": no gradient path"
                  << (paired ? "" : " (expected for pathology groups)") << '\n';
        continue;
      }
      char line[160];
      std::snprintf(line, sizeof line, "  %s: worst %.3e at %s[%lld] over %lld coords%s\n",
                    g.name.c_str(), g.worst_rel_err, g.worst_param.c_str(),
                    static_cast<long long>(g.worst_coord),
                    static_cast<long long>(g.coords_checked), g.non_finite ? " (non-finite!)" : "");
      std::cout << line;
      ok &= g.worst_rel_err <= kGate && !g.non_finite;
    }
    std::cout << "  worst over groups: " << rep.worst_rel_err << '\n';
    ok &= !rep.any_non_finite;
  }
  std::cout << (ok ? "gradient audit passed\n" : "gradient audit FAILED\n");
  return ok ? 0 : 1;
}

int cmd_compare(const CliArgs& a) {
  if (a.positional.size() != 2)
    throw UsageError("compare wants two report files: compare A.json B.json");
  const auto read_report = [](const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return MetricsReport::from_json(text);
  };
  const MetricsReport ra = read_report(a.positional[0]);
  const MetricsReport rb = read_report(a.positional[1]);
  if (ra.per_fold.size() != rb.per_fold.size())
    throw InputError("reports have different fold counts (" +
                     std::to_string(ra.per_fold.size()) + " vs " +
                     std::to_string(rb.per_fold.size()) + ")");

  const auto column = [](const MetricsReport& r, double FoldMetrics::* field) {
    std::vector<double> v;
    for (const FoldMetrics& f : r.per_fold) v.push_back(f.*field);
    return v;
  };
  std::printf("%-6s %12s %12s %10s %10s\n", "metric", "mean_a", "mean_b", "t", "p");
  const std::pair<const char*, double FoldMetrics::*> fields[] = {
      {"acc", &FoldMetrics::acc}, {"auc", &FoldMetrics::auc}, {"f1", &FoldMetrics::f1}};
  for (const auto& [name, field] : fields) {
    const TTestResult tt = paired_ttest(column(ra, field), column(rb, field));
    std::printf("%-6s %12.4f %12.4f %10.4f %10.4f\n", name, ra.mean.*field, rb.mean.*field, tt.t,
                tt.p);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    const CliArgs a = parse_args(argc, argv);
    if (a.command == "gen-data") return cmd_gen_data(a);
    if (a.command == "preprocess") return cmd_preprocess(a);
    if (a.command == "train") return cmd_train(a);
    if (a.command == "eval") return cmd_eval(a);
    if (a.command == "gradcheck") return cmd_gradcheck(a);
    if (a.command == "compare") return cmd_compare(a);
    if (a.command == "--help" || a.command == "-h" || a.command == "help") {
      std::cout << kUsage;
      return 0;
    }
    throw UsageError("unknown command '" + a.command + "'");
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n\n" << kUsage;
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << '\n';
    return 1;
  }
}
