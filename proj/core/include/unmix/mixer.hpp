#pragma once

#include <optional>
#include <string>

#include "unmix/rng.hpp"
#include "unmix/tensor.hpp"

namespace unmix {

enum class MixMode { Global, Region };

std::string to_string(MixMode mode);

/// Half-open pixel rectangle: columns [x1, x2), rows [y1, y2).
struct Box {
  int x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  long area() const { return static_cast<long>(x2 - x1) * static_cast<long>(y2 - y1); }
  bool operator==(const Box&) const = default;
};

struct MixConfig {
  double gamma = 1.0;     // Beta(gamma, gamma) shape
  double p_global = 0.5;  // probability of a global (mixup) iteration
  bool enabled = true;

  void validate() const;
};

/// The random choices of one iteration, shared by every image in the batch.
struct MixDraw {
  MixMode mode = MixMode::Global;
  double lambda_raw = 1.0;
  std::optional<Box> box;
};

/// A mixed view. `lambda` is the weight of the image's own content: the
/// sampled coefficient in Global mode, 1 − box_area/(H·W) in Region mode.
struct MixedBatch {
  Tensor images;
  double lambda = 1.0;
  MixMode mode = MixMode::Global;
  std::optional<Box> box;
};

double sample_lambda(double gamma, Rng& rng);
MixMode choose_mode(double p_global, Rng& rng);

/// Box with cut ratio sqrt(1 − lambda_raw) centred on a uniformly drawn pixel,
/// clipped to the image.
Box rand_bbox(int height, int width, double lambda_raw, Rng& rng);
/// Deterministic core of rand_bbox with the centre supplied.
Box bbox_at(int height, int width, double lambda_raw, int center_y, int center_x);

/// Draws mode, lambda and (Region only) box, in that order of RNG use:
/// mode uniform, Beta lambda, box centre.
MixDraw draw_mix(const MixConfig& cfg, int height, int width, Rng& rng);

/// Mixes image i with image N−1−i of the same batch.
MixedBatch apply_mix(const Tensor& view, const MixDraw& draw);
MixedBatch mix_batch(const Tensor& view, const MixConfig& cfg, Rng& rng);

/// out[i] = in[N−1−i]. Differentiable; an involution.
Tensor reverse_batch(const Tensor& batch);

}  // namespace unmix
