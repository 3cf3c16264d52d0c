#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace unmix {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {

struct TensorImpl;

/// One executed differentiable operation. Holds its inputs alive; the output
/// is referenced weakly (raw) since the output owns the node.
struct Node {
  std::uint64_t seq = 0;
  const char* name = "";
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  TensorImpl* output = nullptr;
  std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;

  std::vector<float>& ensure_grad();
};

}  // namespace detail

/// Dense row-major float32 tensor with reverse-mode autodiff.
///
/// Copies share storage, like a handle. Use clone() or detach() for a deep
/// copy. A tensor and the graph hanging off it belong to a single thread.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }

  const Shape& shape() const;
  std::int64_t dim(int axis) const;
  int rank() const;
  std::int64_t numel() const;

  std::span<const float> data() const;
  /// Direct write access. Bypasses the graph; intended for initialization and
  /// optimizer updates on leaf parameters.
  std::span<float> mutable_data();
  float item() const;
  float at(std::initializer_list<std::int64_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const float> grad() const;
  std::span<float> mutable_grad();
  void zero_grad();

  /// Same values, cut from the graph, fresh storage.
  Tensor detach() const;
  /// Deep copy that keeps requires_grad but drops history.
  Tensor clone() const;

  /// Reverse-mode sweep from a single-element tensor. Each reachable node runs
  /// once, in reverse execution order. Gradients accumulate into leaves.
  void backward() const;

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

namespace detail {

/// Builds an output tensor and, when recording is on and any input needs a
/// gradient, attaches a node with the given backward rule.
Tensor make_result(const char* name, Shape shape, std::vector<float> values,
                   std::vector<Tensor> inputs,
                   std::function<void(const TensorImpl& out)> backward);

}  // namespace detail

}  // namespace unmix
