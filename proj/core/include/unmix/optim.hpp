#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "unmix/parameter.hpp"

namespace unmix {

class Optimizer {
 public:
  explicit Optimizer(NamedTensors params);
  virtual ~Optimizer() = default;

  /// Applies one in-place update. Every parameter must hold a gradient.
  virtual void step(float lr) = 0;
  void zero_grad();

  const NamedTensors& params() const { return params_; }
  std::int64_t steps_taken() const { return t_; }
  void set_steps_taken(std::int64_t t) { t_ = t; }

  /// Internal buffers, named "<param>.<slot>".
  virtual NamedTensors state() const = 0;
  virtual void load_state(const NamedTensors& state) = 0;

 protected:
  void require_grads() const;

  NamedTensors params_;
  std::int64_t t_ = 0;
};

/// SGD with classical momentum and L2 weight decay folded into the gradient:
///   v ← momentum·v + (g + wd·p);  p ← p − lr·v
class Sgd final : public Optimizer {
 public:
  Sgd(NamedTensors params, float momentum, float weight_decay);

  void step(float lr) override;
  NamedTensors state() const override;
  void load_state(const NamedTensors& state) override;

 private:
  std::vector<std::vector<float>> velocity_;
  float momentum_;
  float weight_decay_;
};

/// Adam with bias correction; weight decay added to the gradient.
class Adam final : public Optimizer {
 public:
  Adam(NamedTensors params, float beta1 = 0.9f, float beta2 = 0.999f, float eps = 1e-8f,
       float weight_decay = 0.0f);

  void step(float lr) override;
  NamedTensors state() const override;
  void load_state(const NamedTensors& state) override;

 private:
  std::vector<std::vector<float>> m_;
  std::vector<std::vector<float>> v_;
  float beta1_, beta2_, eps_, weight_decay_;
};

}  // namespace unmix
