#include "ccdc/train.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "ccdc/ops.hpp"

namespace ccdc {

namespace {

constexpr std::uint64_t kEpochSalt = 0x65706f6300000000ull;
constexpr std::uint64_t kAuditSalt = 0x6175646974000000ull;

double cosine(const Array& a, const Array& b) {
  const double na = std::sqrt((a * a).sum());
  const double nb = std::sqrt((b * b).sum());
  if (na == 0 || nb == 0) return 0;
  return (a * b).sum() / (na * nb);
}

}  // namespace

std::vector<CaseData> load_cases(const RunConfig& cfg, const Manifest& m) {
  std::vector<CaseData> cases;
  cases.reserve(m.cases.size());
  for (const CaseRecord& r : m.cases) {
    CaseData c;
    c.label = r.label;
    const Volume v = read_volume(m.resolve(r.ct_path));
    if (v.extents != cfg.model.ct.input_extents)
      throw ConfigError("case " + r.case_id + " volume extents " + shape_str(v.extents) +
                        " do not match the model input " +
                        shape_str(cfg.model.ct.input_extents) +
                        " (run the preprocess step first)");
    c.volume = v.values;
    if (r.wsi_patch_dir) {
      PatchBag bag = read_patch_dir(m.resolve(*r.wsi_patch_dir), r.case_id);
      const Index want = 3 * cfg.model.path.input_extents[0] * cfg.model.path.input_extents[1];
      for (const Array& p : bag.patches)
        if (p.size() != want)
          throw ConfigError("case " + r.case_id + " has a patch of " + std::to_string(p.size()) +
                            " values where " + std::to_string(want) + " are expected");
      c.bag = std::move(bag);
    }
    cases.push_back(std::move(c));
  }
  return cases;
}

void adam_step(ParameterStore& store, AdamState& adam, double lr) {
  if (adam.m.size() != store.size())
    throw UsageError("optimizer state does not match the parameter store");
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  adam.step += 1;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(adam.step));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(adam.step));
  for (std::size_t i = 0; i < store.size(); ++i) {
    Parameter& p = store.at(i);
    adam.m[i] = kBeta1 * adam.m[i] + (1.0 - kBeta1) * p.grad;
    adam.v[i] = kBeta2 * adam.v[i] + (1.0 - kBeta2) * p.grad * p.grad;
    p.value -= lr * (adam.m[i] / bc1) / ((adam.v[i] / bc2).sqrt() + kEps);
  }
}

std::string EpochLog::to_json_line() const {
  nlohmann::json j;
  j["epoch"] = epoch;
  j["class_loss"] = class_loss;
  j["type_loss"] = type_loss;
  j["corr_loss"] = corr_loss;
  j["total_loss"] = total_loss;
  j["batches"] = batches;
  return j.dump();
}

EvalOutcome evaluate(Model& model, const std::vector<CaseData>& cases,
                     const std::vector<std::size_t>& idx, bool paired_mode,
                     std::optional<double> threshold) {
  EvalOutcome out;
  double cos_sum = 0;
  for (std::size_t i : idx) {
    const CaseData& c = cases.at(i);
    if (paired_mode && !c.paired()) continue;
    Tape tape;
    const auto fwd = model.forward_case(tape, c.volume, paired_mode ? &*c.bag : nullptr);
    out.scores.push_back(fwd.prob.value()[0]);
    out.labels.push_back(static_cast<int>(c.label));
    if (paired_mode) cos_sum += cosine(fwd.x_r.value(), fwd.x_p->value());
  }
  if (out.scores.empty()) throw InputError("evaluate: no cases for the requested mode");
  if (paired_mode) out.mean_cosine = cos_sum / static_cast<double>(out.scores.size());
  out.auc = roc_auc(out.scores, out.labels);
  const ClassMetrics cm = classification_metrics(out.scores, out.labels, threshold);
  out.acc = cm.acc;
  out.f1 = cm.f1;
  out.threshold = cm.threshold;
  return out;
}

Trainer::Trainer(const RunConfig& cfg, std::vector<CaseData> cases)
    : cfg_(cfg), cases_(std::move(cases)), model_(cfg.model, cfg.seed),
      adam_(AdamState::zeros_like(model_.params())) {
  cfg_.validate();
}

EpochLog Trainer::run_epoch(int epoch, const std::vector<std::size_t>& train_idx) {
  std::vector<bool> paired_flags(cases_.size());
  for (std::size_t i = 0; i < cases_.size(); ++i) paired_flags[i] = cases_[i].paired();
  BatchPlan plan = build_batch_plan(
      paired_flags, train_idx, cfg_.hyper.batch_size, cfg_.train.mode_mix,
      cfg_.train.contrastive, mix_seed(cfg_.seed, kEpochSalt ^ static_cast<std::uint64_t>(epoch)));
  plan_warnings_ = plan.warnings;

  EpochLog log;
  log.epoch = epoch;
  const HyperParams& hp = cfg_.hyper;
  for (const Batch& batch : plan.batches) {
    Tape tape;
    std::vector<Tensor> probs;
    std::vector<int> labels;
    std::vector<ContrastiveItem> items;
    const bool use_contrast = batch.paired && cfg_.train.contrastive;
    for (std::size_t ci : batch.cases) {
      const CaseData& c = cases_[ci];
      const auto fwd = model_.forward_case(tape, c.volume, batch.paired ? &*c.bag : nullptr);
      probs.push_back(fwd.prob);
      labels.push_back(static_cast<int>(c.label));
      if (use_contrast) {
        ContrastiveItem ct_item;
        ct_item.feature = l2_normalize(fwd.x_r);
        ct_item.label = static_cast<int>(c.label);
        ct_item.is_ct = true;
        ct_item.pair = static_cast<int>(items.size()) + 1;
        items.push_back(ct_item);
        ContrastiveItem path_item;
        path_item.feature = l2_normalize(*fwd.x_p);
        path_item.label = static_cast<int>(c.label);
        path_item.is_ct = false;
        items.push_back(path_item);
      }
    }
    const Tensor cls = class_loss(tape, probs, labels);
    std::optional<Tensor> contrast;
    if (use_contrast) {
      validate_contrastive_batch(items);
      const Tensor type_part = type_contrastive_loss(tape, items, hp.tau, hp.type_anchors_ct_only);
      const Tensor corr_part = correlation_contrastive_loss(tape, items, hp.tau);
      contrast = add(type_part, scale(corr_part, hp.lambda_p));
      log.type_loss += type_part.scalar();
      log.corr_loss += corr_part.scalar();
    }
    const Tensor total = total_loss(tape, cls, contrast, use_contrast, hp);
    if (!std::isfinite(total.scalar()))
      throw DomainError("non-finite loss in epoch " + std::to_string(epoch));
    log.class_loss += cls.scalar();
    log.total_loss += total.scalar();
    model_.params().zero_grads();
    backward(total);
    adam_step(model_.params(), adam_, hp.learning_rate);
    ++log.batches;
  }
  if (log.batches > 0) {
    const double n = log.batches;
    log.class_loss /= n;
    log.type_loss /= n;
    log.corr_loss /= n;
    log.total_loss /= n;
  }
  return log;
}

std::vector<EpochLog> Trainer::run(const std::vector<std::size_t>& train_idx,
                                   const EpochCallback& on_epoch) {
  std::vector<EpochLog> logs;
  for (int e = 0; e < static_cast<int>(cfg_.hyper.epochs); ++e) {
    logs.push_back(run_epoch(e, train_idx));
    if (on_epoch && !on_epoch(logs.back())) break;
  }
  return logs;
}

RunLock::RunLock(const std::filesystem::path& dir) : path_(dir / ".run_lock") {
  std::filesystem::create_directories(dir);
  fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd_ < 0)
    throw ConfigError("run directory " + dir.string() +
                      " is locked by another process (remove " + path_.string() +
                      " if that run is dead)");
}

RunLock::~RunLock() {
  if (fd_ >= 0) {
    ::close(fd_);
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
}

TrainRunResult train_run(const RunConfig& cfg, const Manifest& manifest,
                         const std::filesystem::path& out_dir) {
  RunLock lock(out_dir);
  std::vector<CaseData> cases = load_cases(cfg, manifest);
  const Split split = make_split(manifest, cfg.train.test_fraction, cfg.seed);

  Trainer trainer(cfg, std::move(cases));
  const std::uint64_t digest = model_digest(cfg);
  const std::filesystem::path ckpt = out_dir / "model.ckpt";
  const std::filesystem::path log_path = out_dir / "train_log.jsonl";

  std::ofstream log(log_path, std::ios::app);
  if (!log) throw IoError("cannot open " + log_path.string());

  TrainRunResult result;
  const auto on_epoch = [&](const EpochLog& el) {
    if (el.epoch == 0)
      for (const std::string& w : trainer.plan_warnings()) log << R"({"warning":")" << w << "\"}\n";
    log << el.to_json_line() << '\n';
    log.flush();
    if ((el.epoch + 1) % cfg.train.checkpoint_every == 0 ||
        el.epoch + 1 == static_cast<int>(cfg.hyper.epochs)) {
      CheckpointMeta meta;
      meta.config_digest = digest;
      meta.epoch = static_cast<std::uint32_t>(el.epoch + 1);
      save_checkpoint(ckpt, trainer.model().params(), trainer.adam(), meta);
    }
    return true;
  };
  result.epochs = trainer.run(split.train, on_epoch);

  CheckpointMeta meta;
  meta.config_digest = digest;
  meta.epoch = static_cast<std::uint32_t>(result.epochs.size());
  save_checkpoint(ckpt, trainer.model().params(), trainer.adam(), meta);
  result.checkpoint_digest = parameter_digest(trainer.model().params());

  bool any_paired_test = false;
  for (std::size_t i : split.test) any_paired_test |= trainer.cases()[i].paired();
  const EvalOutcome ct_eval = evaluate(trainer.model(), trainer.cases(), split.test, false);
  result.ct_only_report =
      aggregate_folds({FoldMetrics{ct_eval.acc, ct_eval.auc, ct_eval.f1, ct_eval.threshold}});
  if (any_paired_test) {
    const EvalOutcome p_eval = evaluate(trainer.model(), trainer.cases(), split.test, true);
    result.paired_report =
        aggregate_folds({FoldMetrics{p_eval.acc, p_eval.auc, p_eval.f1, p_eval.threshold}});
    result.paired_mode_evaluated = true;
  }
  return result;
}

GradCheckReport model_grad_check(const RunConfig& cfg, bool paired_mode,
                                 const GradCheckOptions& opts, bool corrupt_adjoint) {
  cfg.model.validate();
  cfg.hyper.validate();
  Model model(cfg.model, cfg.seed);
  Rng rng(mix_seed(cfg.seed, kAuditSalt));

  const Index vol_n = numel(cfg.model.ct.input_extents);
  const Index patch_n = cfg.model.path.channels * ccdc::numel(cfg.model.path.input_extents);
  const std::vector<int> labels = {0, 1};
  std::vector<Array> volumes;
  std::vector<PatchBag> bags;
  for (int i = 0; i < 2; ++i) {
    Array v(vol_n);
    for (Index k = 0; k < vol_n; ++k) v[k] = rng.normal();
    volumes.push_back(std::move(v));
    PatchBag bag;
    for (int p = 0; p < 2; ++p) {
      Array px(patch_n);
      for (Index k = 0; k < patch_n; ++k) px[k] = rng.normal();
      bag.patches.push_back(std::move(px));
      bag.mags.push_back(p == 0 ? Magnification::X10 : Magnification::X40);
    }
    bags.push_back(std::move(bag));
  }

  const HyperParams& hp = cfg.hyper;
  const auto eval = [&](bool build_grad) {
    Tape tape;
    std::vector<Tensor> probs;
    std::vector<ContrastiveItem> items;
    for (int i = 0; i < 2; ++i) {
      const auto fwd = model.forward_case(tape, volumes[static_cast<std::size_t>(i)],
                                          paired_mode ? &bags[static_cast<std::size_t>(i)] : nullptr);
      probs.push_back(fwd.prob);
      if (paired_mode) {
        ContrastiveItem ct_item;
        ct_item.feature = l2_normalize(fwd.x_r);
        ct_item.label = labels[static_cast<std::size_t>(i)];
        ct_item.is_ct = true;
        ct_item.pair = static_cast<int>(items.size()) + 1;
        items.push_back(ct_item);
        ContrastiveItem path_item;
        path_item.feature = l2_normalize(*fwd.x_p);
        path_item.label = labels[static_cast<std::size_t>(i)];
        path_item.is_ct = false;
        items.push_back(path_item);
      }
    }
    const Tensor cls = class_loss(tape, probs, labels);
    std::optional<Tensor> contrast;
    if (paired_mode) {
      validate_contrastive_batch(items);
      const Tensor type_part = type_contrastive_loss(tape, items, hp.tau, hp.type_anchors_ct_only);
      const Tensor corr_part = correlation_contrastive_loss(tape, items, hp.tau);
      contrast = add(type_part, scale(corr_part, hp.lambda_p));
    }
    const Tensor total = total_loss(tape, cls, contrast, paired_mode, hp);
    if (build_grad) {
      backward(total);
      if (corrupt_adjoint) {
        Parameter* w = model.params().find("head.w");
        if (w) w->grad *= 3.0;
      }
    }
    return total.scalar();
  };
  return grad_check(model.params(), eval, opts);
}

}  // namespace ccdc
