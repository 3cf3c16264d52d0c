#pragma once

#include <string>
#include <vector>

#include "unmix/tensor.hpp"

namespace unmix {

/// A tensor with a stable dotted name ("stage0.conv.weight"). Names key
/// checkpoints and pair online/momentum copies.
struct NamedTensor {
  std::string name;
  Tensor value;
};

using NamedTensors = std::vector<NamedTensor>;

}  // namespace unmix
