#include "unmix/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include "unmix/error.hpp"

namespace unmix {

namespace {

constexpr int kCifarExtent = 32;
constexpr std::size_t kCifarPixels = 3 * 32 * 32;

std::vector<std::uint8_t> read_file(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw Error("cannot open '" + file.string() + "'");
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

std::uint8_t to_byte(double v01) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v01 * 255.0), 0L, 255L));
}

}  // namespace

ByteImages ByteImages::gather(std::span<const int> indices) const {
  ByteImages out{static_cast<int>(indices.size()), channels, height, width, {}};
  out.pixels.reserve(indices.size() * image_size());
  for (int i : indices) {
    if (i < 0 || i >= count) throw ValueError("gather: index " + std::to_string(i) + " out of range");
    auto img = image(i);
    out.pixels.insert(out.pixels.end(), img.begin(), img.end());
  }
  return out;
}

LabeledDataset LabeledDataset::subset(std::span<const int> indices) const {
  LabeledDataset out;
  out.images = images.gather(indices);
  for (int i : indices) out.labels.push_back(labels[static_cast<std::size_t>(i)]);
  out.num_classes = num_classes;
  out.split = split;
  return out;
}

LabeledDataset parse_cifar(std::span<const std::uint8_t> bytes, CifarVariant variant, Split split,
                           std::size_t offset_base) {
  const std::size_t label_bytes = variant == CifarVariant::C10 ? 1 : 2;
  const std::size_t record = label_bytes + kCifarPixels;
  if (bytes.size() % record != 0) {
    const auto complete = bytes.size() / record;
    throw FormatError("CIFAR data truncated: record " + std::to_string(complete) + " incomplete at byte offset " +
                      std::to_string(offset_base + complete * record) + " (record size " +
                      std::to_string(record) + ")");
  }
  LabeledDataset out;
  out.num_classes = variant == CifarVariant::C10 ? 10 : 100;
  out.split = split;
  const auto count = bytes.size() / record;
  out.images = ByteImages{static_cast<int>(count), 3, kCifarExtent, kCifarExtent, {}};
  out.images.pixels.reserve(count * kCifarPixels);
  out.labels.reserve(count);
  for (std::size_t r = 0; r < count; ++r) {
    const auto* rec = bytes.data() + r * record;
    const int label = rec[label_bytes - 1];
    if (label >= out.num_classes)
      throw FormatError("CIFAR label " + std::to_string(label) + " out of range at byte offset " +
                        std::to_string(offset_base + r * record + label_bytes - 1));
    out.labels.push_back(label);
    out.images.pixels.insert(out.images.pixels.end(), rec + label_bytes, rec + record);
  }
  return out;
}

LabeledDataset load_cifar_file(const std::filesystem::path& file, CifarVariant variant, Split split) {
  try {
    return parse_cifar(read_file(file), variant, split);
  } catch (const FormatError& e) {
    throw FormatError(file.string() + ": " + e.what());
  }
}

LabeledDataset load_cifar(const std::filesystem::path& dir, CifarVariant variant, Split split) {
  std::filesystem::path root = dir;
  const char* canonical = variant == CifarVariant::C10 ? "cifar-10-batches-bin" : "cifar-100-binary";
  if (std::filesystem::exists(dir / canonical)) root = dir / canonical;

  std::vector<std::string> files;
  if (variant == CifarVariant::C10) {
    if (split == Split::Train)
      for (int i = 1; i <= 5; ++i) files.push_back("data_batch_" + std::to_string(i) + ".bin");
    else
      files.push_back("test_batch.bin");
  } else {
    files.push_back(split == Split::Train ? "train.bin" : "test.bin");
  }

  LabeledDataset out;
  out.num_classes = variant == CifarVariant::C10 ? 10 : 100;
  out.split = split;
  out.images = ByteImages{0, 3, kCifarExtent, kCifarExtent, {}};
  for (const auto& name : files) {
    const auto path = root / name;
    if (!std::filesystem::exists(path)) throw Error("CIFAR file not found: '" + path.string() + "'");
    auto part = load_cifar_file(path, variant, split);
    out.images.count += part.images.count;
    out.images.pixels.insert(out.images.pixels.end(), part.images.pixels.begin(), part.images.pixels.end());
    out.labels.insert(out.labels.end(), part.labels.begin(), part.labels.end());
  }
  const int expected = split == Split::Train ? 50000 : 10000;
  if (out.images.count != expected)
    throw FormatError("CIFAR split has " + std::to_string(out.images.count) + " records, expected " +
                      std::to_string(expected));
  return out;
}

LabeledDataset make_synthetic(const SyntheticSpec& spec, Split split) {
  if (spec.extent < 8) throw ValueError("synthetic extent must be at least 8");
  if (spec.num_classes < 1 || spec.samples_per_class < 1 || spec.channels < 1)
    throw ValueError("synthetic spec needs positive class, sample and channel counts");
  if (spec.noise < 0.0) throw ValueError("synthetic noise must be non-negative");

  const int e = spec.extent;
  const int c = spec.channels;
  const std::size_t plane = static_cast<std::size_t>(e) * static_cast<std::size_t>(e);
  constexpr double two_pi = 2.0 * std::numbers::pi;

  std::vector<std::vector<double>> templates;
  for (int cls = 0; cls < spec.num_classes; ++cls) {
    auto rng = make_rng(spec.seed, {tag(Stream::Synthetic), 0, static_cast<std::uint64_t>(cls)});
    std::uniform_int_distribution<int> freq(-spec.max_frequency, spec.max_frequency);
    std::vector<double> t(static_cast<std::size_t>(c) * plane);
    for (int ch = 0; ch < c; ++ch) {
      const double offset = 0.3 + 0.4 * uniform01(rng);
      for (std::size_t p = 0; p < plane; ++p) t[ch * plane + p] = offset;
    }
    for (int m = 0; m < spec.components; ++m) {
      int fx = 0, fy = 0;
      while (fx == 0 && fy == 0) {
        fx = freq(rng);
        fy = freq(rng);
      }
      for (int ch = 0; ch < c; ++ch) {
        const double amp = 0.05 + 0.1 * uniform01(rng);
        const double phase = two_pi * uniform01(rng);
        for (int y = 0; y < e; ++y)
          for (int x = 0; x < e; ++x)
            t[ch * plane + y * e + x] += amp * std::sin(two_pi * (fx * x + fy * y) / e + phase);
      }
    }
    const double by = e * (0.2 + 0.6 * uniform01(rng));
    const double bx = e * (0.2 + 0.6 * uniform01(rng));
    const double radius = e * (0.1 + 0.1 * uniform01(rng));
    for (int ch = 0; ch < c; ++ch) {
      const double amp = 0.4 * uniform01(rng) - 0.2;
      for (int y = 0; y < e; ++y)
        for (int x = 0; x < e; ++x) {
          const double d2 = (y - by) * (y - by) + (x - bx) * (x - bx);
          t[ch * plane + y * e + x] += amp * std::exp(-d2 / (2.0 * radius * radius));
        }
    }
    templates.push_back(std::move(t));
  }

  LabeledDataset out;
  out.num_classes = spec.num_classes;
  out.split = split;
  const int total = spec.num_classes * spec.samples_per_class;
  out.images = ByteImages{total, c, e, e, {}};
  out.images.pixels.resize(static_cast<std::size_t>(total) * out.images.image_size());
  auto noise_rng = make_rng(spec.seed, {tag(Stream::Synthetic), 1, split == Split::Train ? 0u : 1u});
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int i = 0; i < total; ++i) {
    const int cls = i % spec.num_classes;
    out.labels.push_back(cls);
    auto img = out.images.image(i);
    const auto& t = templates[static_cast<std::size_t>(cls)];
    for (std::size_t p = 0; p < img.size(); ++p) {
      const double n = spec.noise > 0.0 ? spec.noise * gauss(noise_rng) : 0.0;
      img[p] = to_byte(t[p] + n);
    }
  }
  return out;
}

std::vector<std::uint8_t> crop_with_pad(std::span<const std::uint8_t> img, int c, int h, int w, int pad,
                                        int offset_y, int offset_x) {
  std::vector<std::uint8_t> out(img.size(), 0);
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y) {
      const int sy = y + offset_y - pad;
      if (sy < 0 || sy >= h) continue;
      for (int x = 0; x < w; ++x) {
        const int sx = x + offset_x - pad;
        if (sx >= 0 && sx < w) out[(ch * h + y) * w + x] = img[(ch * h + sy) * w + sx];
      }
    }
  return out;
}

std::vector<std::uint8_t> hflip(std::span<const std::uint8_t> img, int c, int h, int w) {
  std::vector<std::uint8_t> out(img.size());
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out[(ch * h + y) * w + x] = img[(ch * h + y) * w + (w - 1 - x)];
  return out;
}

std::vector<std::uint8_t> grayscale(std::span<const std::uint8_t> img, int c, int h, int w) {
  if (c != 3) return {img.begin(), img.end()};
  const std::size_t plane = static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
  std::vector<std::uint8_t> out(img.size());
  for (std::size_t p = 0; p < plane; ++p) {
    const double luma = 0.299 * img[p] + 0.587 * img[plane + p] + 0.114 * img[2 * plane + p];
    const auto v = static_cast<std::uint8_t>(std::clamp(std::lround(luma), 0L, 255L));
    out[p] = out[plane + p] = out[2 * plane + p] = v;
  }
  return out;
}

std::vector<std::uint8_t> augment(std::span<const std::uint8_t> img, int c, int h, int w, Rng& rng,
                                  const AugmentConfig& cfg) {
  std::uniform_int_distribution<int> shift(0, 2 * std::max(cfg.pad, 0));
  const int oy = shift(rng);
  const int ox = shift(rng);
  const bool flip = uniform01(rng) < cfg.flip_p;
  const bool gray = uniform01(rng) < cfg.gray_p;
  const bool jitter = uniform01(rng) < cfg.jitter_p;
  const double factor = 1.0 + cfg.jitter_strength * (2.0 * uniform01(rng) - 1.0);

  std::vector<std::uint8_t> out = cfg.pad > 0 ? crop_with_pad(img, c, h, w, cfg.pad, oy, ox)
                                              : std::vector<std::uint8_t>(img.begin(), img.end());
  if (flip) out = hflip(out, c, h, w);
  if (jitter)
    for (auto& v : out) v = to_byte(v / 255.0 * factor);
  if (gray) out = grayscale(out, c, h, w);
  return out;
}

ByteImages augment_batch(const ByteImages& batch, Rng& rng, const AugmentConfig& cfg) {
  ByteImages out{batch.count, batch.channels, batch.height, batch.width, {}};
  out.pixels.reserve(batch.pixels.size());
  for (int i = 0; i < batch.count; ++i) {
    auto img = augment(batch.image(i), batch.channels, batch.height, batch.width, rng, cfg);
    out.pixels.insert(out.pixels.end(), img.begin(), img.end());
  }
  return out;
}

Tensor to_tensor(const ByteImages& images, const Normalization& norm) {
  if (static_cast<int>(norm.mean.size()) != images.channels || static_cast<int>(norm.std.size()) != images.channels)
    throw ShapeError("normalization has " + std::to_string(norm.mean.size()) + " channels, images have " +
                     std::to_string(images.channels));
  std::vector<float> values(images.pixels.size());
  const std::size_t plane = static_cast<std::size_t>(images.height) * static_cast<std::size_t>(images.width);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto ch = (i / plane) % static_cast<std::size_t>(images.channels);
    values[i] = (static_cast<float>(images.pixels[i]) / 255.0f - norm.mean[ch]) / norm.std[ch];
  }
  return Tensor::from({images.count, images.channels, images.height, images.width}, std::move(values));
}

Tensor resize_bilinear(const Tensor& images, int out_h, int out_w) {
  if (images.rank() != 4) throw ShapeError("resize_bilinear: expected N×C×H×W, got " + to_string(images.shape()));
  const auto n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  if (out_h > h || out_w > w)
    throw ValueError("resize_bilinear: target " + std::to_string(out_h) + "×" + std::to_string(out_w) +
                     " larger than source " + std::to_string(h) + "×" + std::to_string(w));
  if (out_h < 1 || out_w < 1) throw ValueError("resize_bilinear: target extent must be positive");
  if (out_h == h && out_w == w) return images.detach();

  auto src = images.data();
  std::vector<float> out(static_cast<std::size_t>(n * c * out_h * out_w));
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  for (std::int64_t p = 0; p < n * c; ++p) {
    const float* plane = src.data() + p * h * w;
    float* dst = out.data() + p * out_h * out_w;
    for (int y = 0; y < out_h; ++y) {
      const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
      const auto y0 = std::min<std::int64_t>(static_cast<std::int64_t>(fy), h - 1);
      const auto y1 = std::min<std::int64_t>(y0 + 1, h - 1);
      const double wy = fy - static_cast<double>(y0);
      for (int x = 0; x < out_w; ++x) {
        const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
        const auto x0 = std::min<std::int64_t>(static_cast<std::int64_t>(fx), w - 1);
        const auto x1 = std::min<std::int64_t>(x0 + 1, w - 1);
        const double wx = fx - static_cast<double>(x0);
        const double top = plane[y0 * w + x0] * (1 - wx) + plane[y0 * w + x1] * wx;
        const double bottom = plane[y1 * w + x0] * (1 - wx) + plane[y1 * w + x1] * wx;
        dst[y * out_w + x] = static_cast<float>(top * (1 - wy) + bottom * wy);
      }
    }
  }
  return Tensor::from({n, c, out_h, out_w}, std::move(out));
}

}  // namespace unmix
