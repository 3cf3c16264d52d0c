#include "unmix/tensor.hpp"

#include <algorithm>
#include <sstream>
#include <unordered_set>

#include "unmix/error.hpp"

namespace unmix {

namespace {

thread_local bool g_grad_enabled = true;
thread_local std::uint64_t g_next_seq = 1;

}  // namespace

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

std::vector<float>& TensorImpl::ensure_grad() {
  if (grad.empty()) grad.assign(data.size(), 0.0f);
  return grad;
}

Tensor make_result(const char* name, Shape shape, std::vector<float> values,
                   std::vector<Tensor> inputs,
                   std::function<void(const TensorImpl& out)> backward) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  bool needs = false;
  if (g_grad_enabled) {
    for (const auto& t : inputs) needs = needs || (t.defined() && t.requires_grad());
  }
  if (needs) {
    auto node = std::make_shared<Node>();
    node->seq = g_next_seq++;
    node->name = name;
    node->output = impl.get();
    node->backward = std::move(backward);
    for (auto& t : inputs)
      if (t.defined()) node->inputs.push_back(t.impl());
    impl->requires_grad = true;
    impl->grad_fn = std::move(node);
  }
  return Tensor(std::move(impl));
}

}  // namespace detail

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0f, requires_grad); }

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  for (auto e : shape)
    if (e <= 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  auto n = static_cast<std::size_t>(unmix::numel(shape));
  return from(std::move(shape), std::vector<float>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
  for (auto e : shape)
    if (e <= 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
  if (static_cast<std::int64_t>(values.size()) != unmix::numel(shape))
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     to_string(shape));
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(float value, bool requires_grad) { return from({1}, {value}, requires_grad); }

const Shape& Tensor::shape() const { return impl_->shape; }

std::int64_t Tensor::dim(int axis) const {
  const auto& s = impl_->shape;
  if (axis < 0) axis += static_cast<int>(s.size());
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + to_string(s));
  return s[static_cast<std::size_t>(axis)];
}

int Tensor::rank() const { return static_cast<int>(impl_->shape.size()); }
std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

std::span<const float> Tensor::data() const { return impl_->data; }
std::span<float> Tensor::mutable_data() { return impl_->data; }

float Tensor::item() const {
  if (impl_->data.size() != 1) throw ShapeError("item() needs one element, shape is " + to_string(shape()));
  return impl_->data[0];
}

float Tensor::at(std::initializer_list<std::int64_t> index) const {
  const auto& s = impl_->shape;
  if (index.size() != s.size()) throw ShapeError("index rank mismatch for shape " + to_string(s));
  std::int64_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i < 0 || i >= s[axis]) throw ShapeError("index out of range for shape " + to_string(s));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return impl_->data[static_cast<std::size_t>(flat)];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) throw ValueError("requires_grad can only be changed on leaf tensors");
  impl_->requires_grad = on;
  return *this;
}

bool Tensor::is_leaf() const { return impl_->grad_fn == nullptr; }

bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<const float> Tensor::grad() const { return impl_->grad; }
std::span<float> Tensor::mutable_grad() { return impl_->ensure_grad(); }
void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::detach() const { return from(impl_->shape, impl_->data, false); }

Tensor Tensor::clone() const { return from(impl_->shape, impl_->data, impl_->requires_grad); }

void Tensor::backward() const {
  if (impl_->data.size() != 1)
    throw ShapeError("backward() needs a single-element tensor, shape is " + to_string(shape()));
  if (!impl_->requires_grad) throw ValueError("backward() on a tensor that does not require grad");

  impl_->ensure_grad()[0] += 1.0f;
  if (!impl_->grad_fn) return;

  std::vector<detail::Node*> nodes;
  std::unordered_set<const detail::Node*> seen;
  std::vector<detail::Node*> stack{impl_->grad_fn.get()};
  while (!stack.empty()) {
    auto* node = stack.back();
    stack.pop_back();
    if (!seen.insert(node).second) continue;
    nodes.push_back(node);
    for (const auto& in : node->inputs)
      if (in->grad_fn) stack.push_back(in->grad_fn.get());
  }
  std::sort(nodes.begin(), nodes.end(), [](const auto* a, const auto* b) { return a->seq > b->seq; });

  for (auto* node : nodes) {
    const auto& out = *node->output;
    if (out.grad.empty()) continue;
    node->backward(out);
  }
}

}  // namespace unmix
