#include "unmix/mixer.hpp"

#include <algorithm>
#include <cmath>

#include "unmix/error.hpp"
#include "unmix/ops.hpp"

namespace unmix {

std::string to_string(MixMode mode) { return mode == MixMode::Global ? "global" : "region"; }

void MixConfig::validate() const {
  if (!(gamma > 0.0)) throw ValueError("mix.gamma must be > 0, got " + std::to_string(gamma));
  if (!(p_global >= 0.0 && p_global <= 1.0))
    throw ValueError("mix.p_global must lie in [0,1], got " + std::to_string(p_global));
}

double sample_lambda(double gamma, Rng& rng) {
  std::gamma_distribution<double> g(gamma, 1.0);
  const double a = g(rng);
  const double b = g(rng);
  if (a + b <= 0.0) return 0.5;
  return a / (a + b);
}

MixMode choose_mode(double p_global, Rng& rng) { return uniform01(rng) < p_global ? MixMode::Global : MixMode::Region; }

Box bbox_at(int height, int width, double lambda_raw, int center_y, int center_x) {
  const double cut = std::sqrt(std::clamp(1.0 - lambda_raw, 0.0, 1.0));
  const int cut_w = static_cast<int>(std::floor(width * cut));
  const int cut_h = static_cast<int>(std::floor(height * cut));
  Box b;
  b.x1 = std::clamp(center_x - cut_w / 2, 0, width);
  b.x2 = std::clamp(center_x + cut_w / 2, 0, width);
  b.y1 = std::clamp(center_y - cut_h / 2, 0, height);
  b.y2 = std::clamp(center_y + cut_h / 2, 0, height);
  return b;
}

Box rand_bbox(int height, int width, double lambda_raw, Rng& rng) {
  if (height < 1 || width < 1) throw ValueError("rand_bbox: image extents must be positive");
  const int cx = std::uniform_int_distribution<int>(0, width - 1)(rng);
  const int cy = std::uniform_int_distribution<int>(0, height - 1)(rng);
  return bbox_at(height, width, lambda_raw, cy, cx);
}

MixDraw draw_mix(const MixConfig& cfg, int height, int width, Rng& rng) {
  MixDraw d;
  d.mode = choose_mode(cfg.p_global, rng);
  d.lambda_raw = sample_lambda(cfg.gamma, rng);
  if (d.mode == MixMode::Region) d.box = rand_bbox(height, width, d.lambda_raw, rng);
  return d;
}

MixedBatch apply_mix(const Tensor& view, const MixDraw& draw) {
  if (view.rank() != 4) throw ShapeError("mix: expected N×C×H×W images, got " + to_string(view.shape()));
  const auto n = view.dim(0);
  if (n < 2) throw ShapeError("mix: batch size " + std::to_string(n) + " < 2, flip pairing undefined");
  const auto c = view.dim(1), h = view.dim(2), w = view.dim(3);
  const auto per_image = c * h * w;
  auto src = view.data();
  for (float v : src)
    if (!std::isfinite(v)) throw ValueError("mix: input batch contains non-finite values");

  MixedBatch out;
  out.mode = draw.mode;
  std::vector<float> mixed(src.begin(), src.end());
  if (draw.mode == MixMode::Global) {
    if (!(draw.lambda_raw >= 0.0 && draw.lambda_raw <= 1.0)) throw ValueError("mix: lambda outside [0,1]");
    const float lam = static_cast<float>(draw.lambda_raw);
    const float rest = 1.0f - lam;
    for (std::int64_t i = 0; i < n; ++i) {
      const float* a = src.data() + i * per_image;
      const float* b = src.data() + (n - 1 - i) * per_image;
      float* dst = mixed.data() + i * per_image;
      for (std::int64_t j = 0; j < per_image; ++j) dst[j] = lam * a[j] + rest * b[j];
    }
    out.lambda = lam;
  } else {
    if (!draw.box) throw ValueError("mix: region mode requires a box");
    const Box b = *draw.box;
    if (!(0 <= b.x1 && b.x1 <= b.x2 && b.x2 <= w && 0 <= b.y1 && b.y1 <= b.y2 && b.y2 <= h))
      throw ValueError("mix: box outside image bounds");
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t ch = 0; ch < c; ++ch)
        for (int y = b.y1; y < b.y2; ++y)
          for (int x = b.x1; x < b.x2; ++x) {
            const auto off = (ch * h + y) * w + x;
            mixed[i * per_image + off] = src[(n - 1 - i) * per_image + off];
          }
    out.box = b;
    out.lambda = 1.0 - static_cast<double>(b.area()) / static_cast<double>(h * w);
  }
  out.images = Tensor::from(view.shape(), std::move(mixed));
  return out;
}

MixedBatch mix_batch(const Tensor& view, const MixConfig& cfg, Rng& rng) {
  cfg.validate();
  return apply_mix(view, draw_mix(cfg, static_cast<int>(view.dim(2)), static_cast<int>(view.dim(3)), rng));
}

Tensor reverse_batch(const Tensor& batch) { return reverse_rows(batch); }

}  // namespace unmix
