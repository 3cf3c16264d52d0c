#include "unmix/memory_bank.hpp"

#include <cmath>

#include "unmix/error.hpp"

namespace unmix {

MemoryBank::MemoryBank(int capacity, int dim, int scale) : capacity_(capacity), dim_(dim), scale_(scale) {
  if (capacity < 1) throw ValueError("memory bank capacity must be >= 1");
  if (dim < 1) throw ValueError("memory bank dimension must be >= 1");
  data_.assign(static_cast<std::size_t>(capacity) * static_cast<std::size_t>(dim), 0.0f);
  tags_.resize(static_cast<std::size_t>(capacity));
}

std::size_t MemoryBank::slot(int logical) const {
  const int oldest = size_ < capacity_ ? 0 : head_;
  return static_cast<std::size_t>((oldest + logical) % capacity_);
}

void MemoryBank::enqueue(const Tensor& keys, const KeyTag& tag) {
  if (tag.source == KeySource::Mixed)
    throw ValueError("memory bank accepts unmixed keys only; got keys tagged as mixed");
  if (keys.rank() != 2 || keys.dim(1) != dim_)
    throw ShapeError("memory bank of dimension " + std::to_string(dim_) + " cannot take keys of shape " +
                     to_string(keys.shape()));
  const auto n = keys.dim(0);
  auto kd = keys.data();
  for (std::int64_t i = 0; i < n; ++i) {
    double ss = 0.0;
    for (int j = 0; j < dim_; ++j) ss += static_cast<double>(kd[i * dim_ + j]) * kd[i * dim_ + j];
    if (std::abs(std::sqrt(ss) - 1.0) > 1e-4)
      throw ValueError("memory bank key " + std::to_string(i) + " is not unit-norm (norm " +
                       std::to_string(std::sqrt(ss)) + ")");
  }
  for (std::int64_t i = 0; i < n; ++i) {
    std::copy_n(kd.data() + i * dim_, dim_, data_.data() + static_cast<std::size_t>(head_) * dim_);
    tags_[static_cast<std::size_t>(head_)] = tag;
    head_ = (head_ + 1) % capacity_;
    if (size_ < capacity_) ++size_;
  }
}

void MemoryBank::fill_random(Rng& rng) {
  std::normal_distribution<float> g(0.0f, 1.0f);
  std::vector<float> v(static_cast<std::size_t>(capacity_) * dim_);
  for (int i = 0; i < capacity_; ++i) {
    double ss = 0.0;
    for (int j = 0; j < dim_; ++j) {
      v[i * dim_ + j] = g(rng);
      ss += static_cast<double>(v[i * dim_ + j]) * v[i * dim_ + j];
    }
    const auto norm = static_cast<float>(std::sqrt(ss));
    for (int j = 0; j < dim_; ++j) v[i * dim_ + j] /= norm;
  }
  clear();
  enqueue(Tensor::from({capacity_, dim_}, std::move(v)), KeyTag{KeySource::Random, scale_, -1});
}

void MemoryBank::clear() {
  head_ = 0;
  size_ = 0;
}

void MemoryBank::restore(const Tensor& keys, const std::vector<KeyTag>& tags) {
  clear();
  if (!keys.defined()) return;
  if (keys.rank() != 2 || static_cast<std::size_t>(keys.dim(0)) != tags.size())
    throw ShapeError("memory bank restore: " + std::to_string(tags.size()) + " tags for keys " +
                     to_string(keys.shape()));
  for (std::int64_t i = 0; i < keys.dim(0); ++i) {
    const auto row = std::vector<float>(keys.data().begin() + i * dim_, keys.data().begin() + (i + 1) * dim_);
    enqueue(Tensor::from({1, dim_}, row), tags[static_cast<std::size_t>(i)]);
  }
}

Tensor MemoryBank::keys() const {
  if (size_ == 0) return {};
  std::vector<float> out(static_cast<std::size_t>(size_) * dim_);
  for (int i = 0; i < size_; ++i) std::copy_n(data_.data() + slot(i) * dim_, dim_, out.data() + i * dim_);
  return Tensor::from({size_, dim_}, std::move(out));
}

std::vector<KeyTag> MemoryBank::tags() const {
  std::vector<KeyTag> out;
  out.reserve(static_cast<std::size_t>(size_));
  for (int i = 0; i < size_; ++i) out.push_back(tags_[slot(i)]);
  return out;
}

}  // namespace unmix
