#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "unmix/checkpoint.hpp"
#include "unmix/config.hpp"
#include "unmix/data.hpp"
#include "unmix/encoder.hpp"
#include "unmix/losses.hpp"
#include "unmix/memory_bank.hpp"
#include "unmix/optim.hpp"

namespace unmix {

/// Called for every batch of keys pushed into a bank, with the bank index.
using KeyObserver = std::function<void(int bank, const Tensor& keys, const KeyTag& tag)>;

/// Learning rate at `step` (0-based): linear warm-up, then ×0.2 at 95% and
/// again at 97.5% of `total_steps`.
double scheduled_lr(const OptimConfig& cfg, std::int64_t step, std::int64_t total_steps);

/// Owns the training state of one run: online and momentum encoders,
/// optional predictor, memory banks (one per input extent), optimizer and
/// step counter. All randomness is derived from (seed, step) so a restored
/// state continues exactly as the uninterrupted run would.
class Trainer {
 public:
  /// `dataset` feeds step(); it may be null when batches are supplied
  /// directly through train_step(). `total_steps` sizes the LR schedule.
  Trainer(RunConfig cfg, std::shared_ptr<const LabeledDataset> dataset, std::int64_t total_steps);

  /// One optimization step on a raw batch: two augmented views, optional
  /// mixture, loss, backward, update, momentum update and bank enqueue.
  /// Dispatches to the multi-scale path when cfg.scales is non-empty.
  LossReport train_step(const ByteImages& batch);
  /// Draws the next batch from the seeded sampler and trains on it.
  LossReport step();

  /// Batch for a given step: epoch-wise seeded permutation, drop-last.
  ByteImages batch_for_step(std::int64_t step) const;
  std::int64_t steps_per_epoch() const;

  std::int64_t step_count() const { return step_; }
  std::int64_t epoch() const;
  std::int64_t total_steps() const { return total_steps_; }
  const RunConfig& config() const { return cfg_; }

  Encoder& online() { return *online_; }
  Encoder* key_encoder() { return key_.get(); }
  Predictor* predictor() { return predictor_.get(); }
  const std::vector<MemoryBank>& banks() const { return banks_; }
  /// Extent handled by each bank, in bank order.
  const std::vector<int>& extents() const { return extents_; }
  Optimizer& optimizer() { return *optimizer_; }

  void set_key_observer(KeyObserver observer) { observer_ = std::move(observer); }

  Checkpoint save() const;
  /// Restores a state produced by save() under the same model config.
  void load(const Checkpoint& checkpoint);

 private:
  LossResult loss_at_extent(const Tensor& view1, const Tensor& view2, int bank_index);
  void enqueue(int bank_index, const std::vector<Tensor>& keys);

  RunConfig cfg_;
  std::shared_ptr<const LabeledDataset> dataset_;
  std::int64_t total_steps_;
  std::int64_t step_ = 0;
  int source_extent_;

  std::unique_ptr<Encoder> online_;
  std::unique_ptr<Encoder> key_;
  std::unique_ptr<Predictor> predictor_;
  std::vector<MemoryBank> banks_;
  std::vector<int> extents_;
  std::unique_ptr<Optimizer> optimizer_;
  KeyObserver observer_;
};

/// Append-only metrics CSV. The header is written when the file is new.
class MetricsWriter {
 public:
  explicit MetricsWriter(const std::filesystem::path& path);

  static const char* header();
  void write(std::int64_t step, std::int64_t epoch, const LossReport& report, std::optional<double> knn_acc,
             std::optional<double> wall_ms);
  /// Evaluation-only row (used by `unmix eval`).
  void write_eval(std::int64_t step, const std::string& protocol, double accuracy);

 private:
  std::ofstream out_;
};

struct Datasets {
  std::shared_ptr<const LabeledDataset> train;
  std::shared_ptr<const LabeledDataset> test;
};

/// Train/test sets named by cfg.data (synthetic or CIFAR, with subsets).
Datasets load_datasets(const RunConfig& cfg);

/// Steps the run will take: epochs × steps-per-epoch, capped by max_steps.
std::int64_t planned_steps(const RunConfig& cfg, int train_size);

/// Weighted/unweighted kNN of test features against train features, both
/// from the online backbone in eval mode.
double evaluate_knn(Encoder& encoder, const LabeledDataset& train, const LabeledDataset& test,
                    const Normalization& norm, int k, double tau, bool weighted);

struct RunSummary {
  std::int64_t steps = 0;
  std::vector<LossReport> reports;
  std::optional<double> final_knn;
  std::filesystem::path checkpoint;
};

/// (steps done, total steps, report, kNN accuracy if evaluated this step)
using StepCallback =
    std::function<void(std::int64_t, std::int64_t, const LossReport&, const std::optional<double>&)>;

/// Full run: writes config.resolved, metrics.csv and checkpoints under
/// cfg.output_dir. Throws NumericError on a non-finite loss.
RunSummary run_training(const RunConfig& cfg, const StepCallback& on_step = {});

/// Rebuilds an encoder from a checkpoint written by Trainer::save().
Encoder encoder_from_checkpoint(const Checkpoint& checkpoint);
/// The run config recorded in a checkpoint's metadata.
RunConfig config_from_checkpoint(const Checkpoint& checkpoint);

}  // namespace unmix
