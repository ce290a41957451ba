#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "gist/checkpoint.hpp"
#include "gist/datagen.hpp"
#include "gist/eval.hpp"
#include "gist/losses.hpp"
#include "gist/optimizer.hpp"
#include "gist/sampling.hpp"
#include "gist/train_config.hpp"

namespace gist {

/// Stream ids under the run seed.
inline constexpr std::uint64_t kEmbeddingStream = 1;
inline constexpr std::uint64_t kClassifierStream = 2;
inline constexpr std::uint64_t kRandomSamplerStream = 3;
inline constexpr std::uint64_t kBalancedSamplerStream = 4;
inline constexpr std::uint64_t kStructureStream = 5;

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based count of completed epochs
  Phase phase = Phase::pretrain;
  double loss = 0.0;
  double loss_balanced = 0.0;  // NaN when the objective has no balanced term
  double loss_random = 0.0;    // NaN when the objective has no random term
  double lr = 0.0;
  double tau = 0.0;  // at the end of the epoch
  std::optional<SplitAccuracy> test;
};

/// Everything a step computed, before the update is applied.
struct StepView {
  std::size_t epoch = 0;  // 0-based epoch the step belongs to
  std::size_t step = 0;   // within the epoch
  Phase phase = Phase::pretrain;
  const Model* model = nullptr;
  const LabeledBatch* batch_balanced = nullptr;
  const LabeledBatch* batch_random = nullptr;  // the second batch of a dual step
  const StepPlan* plan = nullptr;
  double lambda = 0.0;
  const GradientBundle* grads = nullptr;
};

struct AuditRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  Phase phase = Phase::pretrain;
  StepAudit audit;
};

/// The two-phase schedule as an epoch-granular state machine.
class Trainer {
 public:
  /// A fresh run from the config seed.
  Trainer(TrainConfig config, const LongTailDataset& train);
  /// Continues from a checkpoint of the same config and training set.
  Trainer(TrainConfig config, const LongTailDataset& train, const Checkpoint& resume);

  /// Starts the second phase of `config` from a first-phase checkpoint
  /// written by any config with the same first phase.
  static Trainer from_pretrained(TrainConfig config, const LongTailDataset& train,
                                 const Checkpoint& pretrained);

  void set_test_set(const LongTailDataset* test) { test_ = test; }
  void set_step_observer(std::function<void(const StepView&)> f) { on_step_ = std::move(f); }
  void set_epoch_observer(std::function<void(const EpochMetrics&, const Trainer&)> f) {
    on_epoch_ = std::move(f);
  }
  void set_keep_audit(bool keep) { keep_audit_ = keep; }

  /// One epoch; throws DivergenceError on a non-finite loss or update, in
  /// which case last_good() still holds the previous epoch boundary.
  EpochMetrics run_epoch();
  /// Runs until `epoch` epochs are complete (clamped to the schedule).
  void run_until(std::size_t epoch);
  void run() { run_until(config_.total_epochs()); }

  bool finished() const noexcept { return phase_ == Phase::done; }
  std::size_t epoch() const noexcept { return epoch_; }
  Phase phase() const noexcept { return phase_; }
  const TrainConfig& config() const noexcept { return config_; }
  const Model& model() const noexcept { return model_; }
  const MomentumBuffers& momentum() const noexcept { return velocity_; }
  /// Learning rate of the epoch about to run.
  double learning_rate() const;
  std::size_t steps_per_epoch() const noexcept { return random_.batches_per_epoch(); }

  Checkpoint checkpoint() const;
  const Checkpoint& last_good() const noexcept { return last_good_; }
  const std::vector<AuditRecord>& audit() const noexcept { return audit_; }
  const std::vector<EpochMetrics>& history() const noexcept { return history_; }

 private:
  Trainer(TrainConfig config, const LongTailDataset& train, bool);
  void restore(const Checkpoint& ckpt);
  void enter_second_phase();
  void finish();

  TrainConfig config_;
  const LongTailDataset* train_;
  const LongTailDataset* test_ = nullptr;
  Model model_;
  MomentumBuffers velocity_;
  RandomSampler random_;
  BalancedSampler balanced_;
  std::size_t epoch_ = 0;
  Phase phase_ = Phase::pretrain;
  Checkpoint last_good_;
  bool keep_audit_ = true;
  std::vector<AuditRecord> audit_;
  std::vector<EpochMetrics> history_;
  std::function<void(const StepView&)> on_step_;
  std::function<void(const EpochMetrics&, const Trainer&)> on_epoch_;
};

/// First phase only: the checkpoint after epochs_pretrain epochs.
Checkpoint pretrain(const LongTailDataset& train, const TrainConfig& config);
/// Second phase from a pretrain checkpoint; the result has V discarded.
Checkpoint train_gist(const Checkpoint& pretrained, const LongTailDataset& train,
                      const TrainConfig& config);

/// Hash of the fields that determine the first phase.
std::uint64_t pretrain_hash(const TrainConfig& config);

}  // namespace gist
