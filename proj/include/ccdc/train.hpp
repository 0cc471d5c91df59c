#pragma once

#include <functional>

#include "ccdc/checkpoint.hpp"
#include "ccdc/config.hpp"
#include "ccdc/gradcheck.hpp"
#include "ccdc/metrics.hpp"

namespace ccdc {

// One case, fully loaded: preprocessed CT values plus the patch bag when the
// case is paired.
struct CaseData {
  Label label = Label::LUAD;
  Array volume;
  std::optional<PatchBag> bag;

  bool paired() const { return bag.has_value(); }
};

// Reads every manifest case into memory, checking extents against the model
// geometry. Volumes must already be preprocessed to the CT input extents.
std::vector<CaseData> load_cases(const RunConfig& cfg, const Manifest& m);

// One Adam update over all parameters from the accumulated gradients.
void adam_step(ParameterStore& store, AdamState& adam, double lr);

struct EpochLog {
  int epoch = 0;
  double class_loss = 0;
  double type_loss = 0;
  double corr_loss = 0;
  double total_loss = 0;
  int batches = 0;

  std::string to_json_line() const;
};

struct EvalOutcome {
  std::vector<double> scores;  // LUSC probability per case
  std::vector<int> labels;
  double auc = 0;
  double acc = 0;
  double f1 = 0;
  double threshold = 0;
  double mean_cosine = 0;  // paired mode: mean cos(X_r, X_p); 0 otherwise
};

// Forward-only scoring over idx. In paired mode only paired cases are
// scored; CT-only mode scores every case from its volume alone.
EvalOutcome evaluate(Model& model, const std::vector<CaseData>& cases,
                     const std::vector<std::size_t>& idx, bool paired_mode,
                     std::optional<double> threshold = std::nullopt);

// Returning false from the callback stops training after that epoch.
using EpochCallback = std::function<bool(const EpochLog&)>;

class Trainer {
 public:
  Trainer(const RunConfig& cfg, std::vector<CaseData> cases);

  // Runs up to cfg.hyper.epochs epochs over seeded batch plans.
  std::vector<EpochLog> run(const std::vector<std::size_t>& train_idx,
                            const EpochCallback& on_epoch = {});

  Model& model() { return model_; }
  AdamState& adam() { return adam_; }
  const std::vector<CaseData>& cases() const { return cases_; }
  const std::vector<std::string>& plan_warnings() const { return plan_warnings_; }

 private:
  EpochLog run_epoch(int epoch, const std::vector<std::size_t>& train_idx);

  RunConfig cfg_;
  std::vector<CaseData> cases_;
  Model model_;
  AdamState adam_;
  std::vector<std::string> plan_warnings_;
};

// Exclusive advisory lock on a run directory; throws if already held.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
  int fd_ = -1;
};

struct TrainRunResult {
  std::vector<EpochLog> epochs;
  std::uint64_t checkpoint_digest = 0;
  MetricsReport paired_report;   // empty per_fold if no paired test cases
  MetricsReport ct_only_report;
  bool paired_mode_evaluated = false;
};

// Full training run as the CLI performs it: lock, JSONL epoch log,
// checkpoint cadence with last-good retention, final split evaluation.
TrainRunResult train_run(const RunConfig& cfg, const Manifest& manifest,
                         const std::filesystem::path& out_dir);

// Finite-difference audit of the training loss on one seeded synthetic
// batch. corrupt_adjoint scales one analytic gradient after backward — a
// mutation fixture that must make the audit fail.
GradCheckReport model_grad_check(const RunConfig& cfg, bool paired_mode,
                                 const GradCheckOptions& opts = {},
                                 bool corrupt_adjoint = false);

}  // namespace ccdc
