#pragma once

#include <cstdint>
#include <vector>

#include "unmix/rng.hpp"
#include "unmix/tensor.hpp"

namespace unmix {

enum class KeySource : std::uint8_t { Random = 0, Unmixed = 1, Mixed = 2 };

/// Provenance carried with every key in a bank.
struct KeyTag {
  KeySource source = KeySource::Unmixed;
  int scale = 0;  // input extent the key was computed at
  std::int64_t step = 0;

  bool operator==(const KeyTag&) const = default;
};

/// Fixed-capacity FIFO of unit-norm negative keys. Only keys from unmixed
/// images are admitted.
class MemoryBank {
 public:
  MemoryBank(int capacity, int dim, int scale = 0);

  /// Appends keys (N×dim, unit rows), evicting the oldest beyond capacity.
  /// Rejects keys tagged Mixed, a dimension mismatch, or non-unit rows.
  void enqueue(const Tensor& keys, const KeyTag& tag);
  /// Fills to capacity with random unit keys tagged Random.
  void fill_random(Rng& rng);
  void clear();
  /// Replaces the contents with `keys` (oldest first) and their tags.
  void restore(const Tensor& keys, const std::vector<KeyTag>& tags);

  int size() const { return size_; }
  int capacity() const { return capacity_; }
  int dim() const { return dim_; }
  int scale() const { return scale_; }
  bool empty() const { return size_ == 0; }

  /// size×dim, oldest first. Undefined tensor when empty.
  Tensor keys() const;
  /// Tags in the same order as keys().
  std::vector<KeyTag> tags() const;

 private:
  std::size_t slot(int logical) const;

  int capacity_;
  int dim_;
  int scale_;
  std::vector<float> data_;
  std::vector<KeyTag> tags_;
  int head_ = 0;  // next write position
  int size_ = 0;
};

}  // namespace unmix
