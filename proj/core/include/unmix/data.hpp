#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "unmix/rng.hpp"
#include "unmix/tensor.hpp"

namespace unmix {

/// Raw 8-bit images, count×channels×height×width, row-major.
struct ByteImages {
  int count = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> pixels;

  std::size_t image_size() const {
    return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }
  std::span<const std::uint8_t> image(int i) const {
    return std::span(pixels).subspan(static_cast<std::size_t>(i) * image_size(), image_size());
  }
  std::span<std::uint8_t> image(int i) {
    return std::span(pixels).subspan(static_cast<std::size_t>(i) * image_size(), image_size());
  }
  ByteImages gather(std::span<const int> indices) const;
};

enum class Split { Train, Test };
enum class CifarVariant { C10, C100 };

struct LabeledDataset {
  ByteImages images;
  std::vector<int> labels;
  int num_classes = 0;
  Split split = Split::Train;

  int size() const { return images.count; }
  LabeledDataset subset(std::span<const int> indices) const;
};

/// Parses CIFAR binary records: one label byte (CIFAR-10) or two (CIFAR-100,
/// coarse then fine; the fine label is kept) followed by 3072 pixel bytes
/// (1024 R, 1024 G, 1024 B, each 32×32 row-major). `offset_base` is added to
/// byte offsets in error messages.
LabeledDataset parse_cifar(std::span<const std::uint8_t> bytes, CifarVariant variant, Split split,
                           std::size_t offset_base = 0);
LabeledDataset load_cifar_file(const std::filesystem::path& file, CifarVariant variant, Split split);
/// Loads a full split from the standard binary distribution directory
/// (data_batch_{1..5}.bin / test_batch.bin, or train.bin / test.bin for
/// CIFAR-100). The directory itself or its canonical subdirectory
/// ("cifar-10-batches-bin", "cifar-100-binary") is accepted. Record counts
/// must be 50,000 (train) or 10,000 (test).
LabeledDataset load_cifar(const std::filesystem::path& dir, CifarVariant variant, Split split);

/// Deterministic toy dataset: class c draws fixed sinusoid-plus-blob
/// templates (per channel) and adds Gaussian pixel noise of std `noise`
/// (in [0,1] intensity units). Templates depend on `seed` only; the split
/// selects the noise stream.
struct SyntheticSpec {
  int num_classes = 4;
  int samples_per_class = 500;
  int extent = 32;
  int channels = 3;
  int max_frequency = 3;
  int components = 3;
  double noise = 0.1;
  std::uint64_t seed = 7;
};

LabeledDataset make_synthetic(const SyntheticSpec& spec, Split split = Split::Train);

struct AugmentConfig {
  int pad = 4;
  double flip_p = 0.5;
  double gray_p = 0.2;
  double jitter_p = 0.0;
  double jitter_strength = 0.4;
};

// Primitive transforms on one C×H×W image.
std::vector<std::uint8_t> crop_with_pad(std::span<const std::uint8_t> img, int c, int h, int w, int pad,
                                        int offset_y, int offset_x);
std::vector<std::uint8_t> hflip(std::span<const std::uint8_t> img, int c, int h, int w);
/// Luma 0.299 R + 0.587 G + 0.114 B, rounded, written to every channel.
std::vector<std::uint8_t> grayscale(std::span<const std::uint8_t> img, int c, int h, int w);

/// Random crop-with-pad, horizontal flip, grayscale and (optional) brightness
/// jitter. Always draws the same number of variates from `rng`.
std::vector<std::uint8_t> augment(std::span<const std::uint8_t> img, int c, int h, int w, Rng& rng,
                                  const AugmentConfig& cfg);
ByteImages augment_batch(const ByteImages& batch, Rng& rng, const AugmentConfig& cfg);

struct Normalization {
  std::vector<float> mean{0.4914f, 0.4822f, 0.4465f};
  std::vector<float> std{0.2470f, 0.2435f, 0.2616f};
};

/// x/255 then per-channel (x − mean)/std. Accepts only 8-bit images, so
/// normalization cannot be applied twice.
Tensor to_tensor(const ByteImages& images, const Normalization& norm);

/// Bilinear resize of an N×C×H×W tensor (align-corners off). Throws if the
/// target is larger than the source.
Tensor resize_bilinear(const Tensor& images, int out_h, int out_w);

}  // namespace unmix
