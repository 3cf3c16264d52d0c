#include "unmix/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "unmix/error.hpp"
#include "unmix/ops.hpp"

namespace unmix {

namespace {

Tensor uniform_param(Shape shape, float bound, Rng& rng) {
  std::uniform_real_distribution<float> u(-bound, bound);
  std::vector<float> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = u(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Tensor normal_param(Shape shape, float stddev, Rng& rng) {
  std::normal_distribution<float> g(0.0f, stddev);
  std::vector<float> v(static_cast<std::size_t>(numel(shape)));
  for (auto& x : v) x = g(rng);
  return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace

Linear::Linear(std::string name, int in, int out, Rng& rng) : name_(std::move(name)) {
  const float bound = 1.0f / std::sqrt(static_cast<float>(in));
  weight_ = uniform_param({in, out}, bound, rng);
  bias_ = uniform_param({out}, bound, rng);
}

Tensor Linear::forward(const Tensor& x) const { return add_bias(matmul(x, weight_), bias_); }

void Linear::collect(NamedTensors& params) const {
  params.push_back({name_ + ".weight", weight_});
  params.push_back({name_ + ".bias", bias_});
}

BatchNorm::BatchNorm(std::string name, int channels)
    : name_(std::move(name)),
      gamma_(Tensor::full({channels}, 1.0f, true)),
      beta_(Tensor::zeros({channels}, true)),
      running_mean_(Tensor::zeros({channels})),
      running_var_(Tensor::full({channels}, 1.0f)) {}

Tensor BatchNorm::forward(const Tensor& x, bool train) {
  return batch_norm(x, gamma_, beta_, running_mean_, running_var_, train);
}

void BatchNorm::collect(NamedTensors& params) const {
  params.push_back({name_ + ".gamma", gamma_});
  params.push_back({name_ + ".beta", beta_});
}

void BatchNorm::collect_buffers(NamedTensors& buffers) const {
  buffers.push_back({name_ + ".running_mean", running_mean_});
  buffers.push_back({name_ + ".running_var", running_var_});
}

Mlp::Mlp(const std::string& name, int in, int hidden, int out, Rng& rng)
    : fc1_(name + ".fc1", in, hidden, rng), bn_(name + ".bn", hidden), fc2_(name + ".fc2", hidden, out, rng) {}

Tensor Mlp::forward(const Tensor& x, bool train) { return fc2_.forward(relu(bn_.forward(fc1_.forward(x), train))); }

void Mlp::collect(NamedTensors& params) const {
  fc1_.collect(params);
  bn_.collect(params);
  fc2_.collect(params);
}

void Mlp::collect_buffers(NamedTensors& buffers) const { bn_.collect_buffers(buffers); }

void EncoderSpec::validate() const {
  if (in_channels < 1) throw ValueError("encoder input channels must be >= 1");
  if (stages.empty()) throw ValueError("encoder.stages must list at least one stage");
  for (const auto& s : stages) {
    if (s.filters < 1) throw ValueError("encoder stage filter count must be >= 1");
    if (s.stride < 1) throw ValueError("encoder stage stride must be >= 1");
  }
  if (embedding_dim < 2) throw ValueError("encoder.embedding_dim must be >= 2");
  if (proj_hidden_dim < 1) throw ValueError("encoder.proj_hidden_dim must be >= 1");
}

namespace {

Mlp make_head(const EncoderSpec& spec, Rng& rng) {
  spec.validate();
  return Mlp("proj", spec.feature_dim(), spec.proj_hidden_dim, spec.embedding_dim, rng);
}

}  // namespace

Encoder::Encoder(EncoderSpec spec, std::uint64_t seed)
    : spec_(std::move(spec)),
      head_([&] {
        auto rng = make_rng(seed, {tag(Stream::Init), 1});
        return make_head(spec_, rng);
      }()) {
  auto rng = make_rng(seed, {tag(Stream::Init), 0});
  int in = spec_.in_channels;
  for (std::size_t i = 0; i < spec_.stages.size(); ++i) {
    const int f = spec_.stages[i].filters;
    conv_weights_.push_back(normal_param({f, in, 3, 3}, std::sqrt(2.0f / static_cast<float>(in * 9)), rng));
    conv_norms_.emplace_back("stage" + std::to_string(i) + ".bn", f);
    in = f;
  }
}

Tensor Encoder::backbone(const Tensor& images, bool train) {
  if (images.rank() != 4 || images.dim(1) != spec_.in_channels)
    throw ShapeError("encoder expects N×" + std::to_string(spec_.in_channels) + "×H×W input, got " +
                     to_string(images.shape()));
  Tensor h = images;
  for (std::size_t i = 0; i < conv_weights_.size(); ++i) {
    if (h.dim(2) < 1 || h.dim(3) < 1)
      throw ShapeError("input " + to_string(images.shape()) + " too small for encoder stages");
    h = relu(conv_norms_[i].forward(conv2d(h, conv_weights_[i], spec_.stages[i].stride, 1), train));
  }
  return global_avg_pool(h);
}

Tensor Encoder::features(const Tensor& images, bool train) {
  ++forward_passes_;
  return backbone(images, train);
}

Tensor Encoder::forward(const Tensor& images, bool train) {
  ++forward_passes_;
  return l2_normalize(head_.forward(backbone(images, train), train));
}

NamedTensors Encoder::parameters() const {
  NamedTensors out;
  for (std::size_t i = 0; i < conv_weights_.size(); ++i) {
    out.push_back({"stage" + std::to_string(i) + ".conv.weight", conv_weights_[i]});
    conv_norms_[i].collect(out);
  }
  head_.collect(out);
  return out;
}

NamedTensors Encoder::buffers() const {
  NamedTensors out;
  for (const auto& bn : conv_norms_) bn.collect_buffers(out);
  head_.collect_buffers(out);
  return out;
}

NamedTensors Encoder::state() const {
  auto out = parameters();
  auto b = buffers();
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

void Encoder::load_state(const NamedTensors& state) { copy_by_name(state, this->state()); }

void Encoder::set_trainable(bool on) {
  for (auto& p : parameters()) {
    Tensor t = p.value;
    t.set_requires_grad(on);
    if (!on) t.zero_grad();
  }
}

Encoder Encoder::clone() const {
  Encoder copy(spec_, 0);
  copy.load_state(state());
  return copy;
}

Predictor::Predictor(int dim, int hidden, std::uint64_t seed)
    : mlp_([&] {
        auto rng = make_rng(seed, {tag(Stream::Init), 2});
        return Mlp("pred", dim, hidden, dim, rng);
      }()) {}

Tensor Predictor::forward(const Tensor& embeddings, bool train) { return l2_normalize(mlp_.forward(embeddings, train)); }

NamedTensors Predictor::parameters() const {
  NamedTensors out;
  mlp_.collect(out);
  return out;
}

NamedTensors Predictor::buffers() const {
  NamedTensors out;
  mlp_.collect_buffers(out);
  return out;
}

void momentum_update(const NamedTensors& key, const NamedTensors& online, double momentum) {
  if (key.size() != online.size())
    throw ShapeError("momentum_update: " + std::to_string(key.size()) + " key tensors vs " +
                     std::to_string(online.size()) + " online tensors");
  const float m = static_cast<float>(momentum);
  const float rest = 1.0f - m;
  for (std::size_t i = 0; i < key.size(); ++i) {
    if (key[i].name != online[i].name || key[i].value.shape() != online[i].value.shape())
      throw ShapeError("momentum_update: '" + key[i].name + "' " + to_string(key[i].value.shape()) +
                       " does not pair with '" + online[i].name + "' " + to_string(online[i].value.shape()));
    Tensor k = key[i].value;
    auto kd = k.mutable_data();
    auto od = online[i].value.data();
    for (std::size_t j = 0; j < kd.size(); ++j) kd[j] = m * kd[j] + rest * od[j];
  }
}

void copy_by_name(const NamedTensors& src, const NamedTensors& dst) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& s : src) by_name[s.name] = &s.value;
  for (const auto& d : dst) {
    auto it = by_name.find(d.name);
    if (it == by_name.end()) throw FormatError("state is missing '" + d.name + "'");
    if (it->second->shape() != d.value.shape())
      throw ShapeError("state '" + d.name + "' has shape " + to_string(it->second->shape()) + ", expected " +
                       to_string(d.value.shape()));
    Tensor t = d.value;
    auto out = t.mutable_data();
    std::copy(it->second->data().begin(), it->second->data().end(), out.begin());
  }
}

}  // namespace unmix
