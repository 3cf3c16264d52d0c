#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "unmix/data.hpp"
#include "unmix/encoder.hpp"
#include "unmix/losses.hpp"
#include "unmix/mixer.hpp"

namespace unmix {

enum class DataSource { Synthetic, Cifar10, Cifar100 };
enum class OptimizerKind { Adam, Sgd };
enum class BankInit { Random, Empty };

struct LossConfig {
  BaseLoss base = BaseLoss::MoCo;
  LossMode mode = LossMode::Combined;
  double tau = 0.2;
  bool symmetric = false;
};

struct OptimConfig {
  OptimizerKind kind = OptimizerKind::Adam;
  double lr = 3e-3;
  double momentum = 0.9;  // SGD only
  double weight_decay = 1e-6;
  int warmup_steps = 500;
};

struct DataConfig {
  DataSource source = DataSource::Synthetic;
  std::string dir;     // CIFAR root; falls back to $UNMIX_DATA_DIR
  int subset = 0;      // first N training images (0 = all)
  int test_subset = 0; // first N test images (0 = all)
  Normalization norm;
  SyntheticSpec synthetic;
  int synthetic_test_per_class = 100;
};

struct EvalConfig {
  int knn_k = 200;
  double knn_tau = 0.1;
  bool knn_weighted = true;
};

/// Every tunable of a run. Built from a flat "dotted.key = value" file plus
/// overrides; see config_keys() for the full list with defaults.
struct RunConfig {
  std::uint64_t seed = 0;
  int epochs = 200;
  int max_steps = 0;  // > 0 caps the run regardless of epochs
  int batch_size = 128;
  std::string output_dir = "runs/default";
  int eval_every = 0;        // 0: evaluate at the end only
  int checkpoint_every = 0;  // 0: checkpoint at the end only

  MixConfig mix;
  EncoderSpec encoder;
  double encoder_momentum = 0.99;
  LossConfig loss;
  int bank_size = 4096;
  BankInit bank_init = BankInit::Random;
  int predictor_hidden = 512;
  OptimConfig optim;
  std::vector<int> scales;  // empty: single scale at the dataset extent
  DataConfig data;
  AugmentConfig augment;
  EvalConfig eval;
  bool metrics_wall_ms = false;

  /// Cross-field checks; throws ConfigError naming the key.
  void validate() const;
};

struct ConfigKey {
  std::string name;
  std::string help;
};

/// All accepted keys, in the order they are echoed.
const std::vector<ConfigKey>& config_keys();
bool is_config_key(const std::string& key);

/// Ordered (key, value, line) entries from a config file.
struct ConfigEntry {
  std::string key;
  std::string value;
  int line = 0;
};

std::vector<ConfigEntry> parse_config_text(const std::string& text);
std::vector<ConfigEntry> read_config_file(const std::filesystem::path& path);
/// "key=value" command-line overrides.
ConfigEntry parse_override(const std::string& text);

/// Defaults, then entries in order. Unknown keys and bad values throw
/// ConfigError with the key and line.
RunConfig resolve_config(const std::vector<ConfigEntry>& entries);
void apply_entry(RunConfig& cfg, const ConfigEntry& entry);

std::string get_config_value(const RunConfig& cfg, const std::string& key);
/// Every key with its resolved value, one "key = value" per line.
std::string resolved_text(const RunConfig& cfg);
std::uint64_t config_hash(const RunConfig& cfg);

std::string to_string(DataSource source);

}  // namespace unmix
