#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unmix/parameter.hpp"
#include "unmix/rng.hpp"
#include "unmix/tensor.hpp"

namespace unmix {

class Linear {
 public:
  Linear(std::string name, int in, int out, Rng& rng);
  Tensor forward(const Tensor& x) const;
  void collect(NamedTensors& params) const;

 private:
  std::string name_;
  Tensor weight_;  // in × out
  Tensor bias_;
};

class BatchNorm {
 public:
  BatchNorm(std::string name, int channels);
  Tensor forward(const Tensor& x, bool train);
  void collect(NamedTensors& params) const;
  void collect_buffers(NamedTensors& buffers) const;

 private:
  std::string name_;
  Tensor gamma_, beta_;
  Tensor running_mean_, running_var_;
};

/// linear → batch-norm → relu → linear
class Mlp {
 public:
  Mlp(const std::string& name, int in, int hidden, int out, Rng& rng);
  Tensor forward(const Tensor& x, bool train);
  void collect(NamedTensors& params) const;
  void collect_buffers(NamedTensors& buffers) const;

 private:
  Linear fc1_;
  BatchNorm bn_;
  Linear fc2_;
};

struct ConvStage {
  int filters = 32;
  int stride = 2;

  bool operator==(const ConvStage&) const = default;
};

struct EncoderSpec {
  int in_channels = 3;
  std::vector<ConvStage> stages{{32, 2}, {64, 2}, {128, 2}, {128, 2}};
  int embedding_dim = 64;
  int proj_hidden_dim = 1024;

  void validate() const;
  int feature_dim() const { return stages.back().filters; }
};

/// Convolutional backbone (3×3 conv → batch-norm → relu per stage, then global
/// average pooling) followed by an MLP projection head and row normalization.
class Encoder {
 public:
  Encoder(EncoderSpec spec, std::uint64_t seed);

  /// N×C×H×W images -> N×embedding_dim unit rows.
  Tensor forward(const Tensor& images, bool train);
  /// Pooled backbone features, N×feature_dim, before the projection head.
  Tensor features(const Tensor& images, bool train);

  const EncoderSpec& spec() const { return spec_; }
  /// Trainable tensors.
  NamedTensors parameters() const;
  /// Batch-norm running statistics.
  NamedTensors buffers() const;
  /// parameters() followed by buffers().
  NamedTensors state() const;
  /// Copies values by name; shapes must match.
  void load_state(const NamedTensors& state);
  void set_trainable(bool on);
  Encoder clone() const;

  std::uint64_t forward_passes() const { return forward_passes_; }

 private:
  Tensor backbone(const Tensor& images, bool train);

  EncoderSpec spec_;
  std::vector<Tensor> conv_weights_;
  std::vector<BatchNorm> conv_norms_;
  Mlp head_;
  std::uint64_t forward_passes_ = 0;
};

/// BYOL online predictor: MLP then row normalization.
class Predictor {
 public:
  Predictor(int dim, int hidden, std::uint64_t seed);
  Tensor forward(const Tensor& embeddings, bool train);
  NamedTensors parameters() const;
  NamedTensors buffers() const;

 private:
  Mlp mlp_;
};

/// key ← m·key + (1 − m)·online for each parameter, matched by position and
/// checked by name and shape.
void momentum_update(const NamedTensors& key, const NamedTensors& online, double momentum);

/// Copies values between tensor lists matched by name. Throws on a missing
/// name or a shape mismatch.
void copy_by_name(const NamedTensors& src, const NamedTensors& dst);

}  // namespace unmix
