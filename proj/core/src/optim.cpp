#include "unmix/optim.hpp"

#include <cmath>
#include <unordered_map>

#include "unmix/error.hpp"

namespace unmix {

namespace {

void load_slot(const NamedTensors& state, const NamedTensors& params, const std::string& slot,
               std::vector<std::vector<float>>& dst) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& s : state) by_name[s.name] = &s.value;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto it = by_name.find(params[i].name + "." + slot);
    if (it == by_name.end()) throw FormatError("optimizer state missing '" + params[i].name + "." + slot + "'");
    if (it->second->shape() != params[i].value.shape())
      throw ShapeError("optimizer state '" + it->first + "' has shape " + to_string(it->second->shape()));
    dst[i].assign(it->second->data().begin(), it->second->data().end());
  }
}

NamedTensors dump_slot(const NamedTensors& params, const std::string& slot,
                       const std::vector<std::vector<float>>& src) {
  NamedTensors out;
  for (std::size_t i = 0; i < params.size(); ++i)
    out.push_back({params[i].name + "." + slot, Tensor::from(params[i].value.shape(), src[i])});
  return out;
}

std::vector<std::vector<float>> zeros_like(const NamedTensors& params) {
  std::vector<std::vector<float>> out;
  for (const auto& p : params) out.emplace_back(p.value.data().size(), 0.0f);
  return out;
}

}  // namespace

Optimizer::Optimizer(NamedTensors params) : params_(std::move(params)) {}

void Optimizer::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

void Optimizer::require_grads() const {
  for (const auto& p : params_)
    if (!p.value.has_grad()) throw ValueError("optimizer step: parameter '" + p.name + "' has no gradient");
}

Sgd::Sgd(NamedTensors params, float momentum, float weight_decay)
    : Optimizer(std::move(params)), velocity_(zeros_like(params_)), momentum_(momentum),
      weight_decay_(weight_decay) {}

void Sgd::step(float lr) {
  require_grads();
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto p = params_[i].value.mutable_data();
    auto g = params_[i].value.grad();
    auto& v = velocity_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = momentum_ * v[j] + (g[j] + weight_decay_ * p[j]);
      p[j] -= lr * v[j];
    }
  }
  ++t_;
}

NamedTensors Sgd::state() const { return dump_slot(params_, "velocity", velocity_); }
void Sgd::load_state(const NamedTensors& state) { load_slot(state, params_, "velocity", velocity_); }

Adam::Adam(NamedTensors params, float beta1, float beta2, float eps, float weight_decay)
    : Optimizer(std::move(params)), m_(zeros_like(params_)), v_(zeros_like(params_)), beta1_(beta1),
      beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

void Adam::step(float lr) {
  require_grads();
  ++t_;
  const double c1 = 1.0 - std::pow(static_cast<double>(beta1_), static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(static_cast<double>(beta2_), static_cast<double>(t_));
  const float step_size = static_cast<float>(lr * std::sqrt(c2) / c1);
  const float eps_hat = static_cast<float>(eps_ * std::sqrt(c2));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto p = params_[i].value.mutable_data();
    auto g = params_[i].value.grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const float gj = g[j] + weight_decay_ * p[j];
      m[j] = beta1_ * m[j] + (1.0f - beta1_) * gj;
      v[j] = beta2_ * v[j] + (1.0f - beta2_) * gj * gj;
      p[j] -= step_size * m[j] / (std::sqrt(v[j]) + eps_hat);
    }
  }
}

NamedTensors Adam::state() const {
  auto out = dump_slot(params_, "m", m_);
  auto v = dump_slot(params_, "v", v_);
  out.insert(out.end(), v.begin(), v.end());
  return out;
}

void Adam::load_state(const NamedTensors& state) {
  load_slot(state, params_, "m", m_);
  load_slot(state, params_, "v", v_);
}

}  // namespace unmix
