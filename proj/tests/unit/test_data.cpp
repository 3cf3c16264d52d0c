#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "unmix/data.hpp"
#include "unmix/error.hpp"

using namespace unmix;

namespace {

constexpr int kPixels = 3072;

std::vector<std::uint8_t> fixture_record(int label_bytes, std::uint8_t coarse, std::uint8_t fine, int salt) {
  std::vector<std::uint8_t> r;
  if (label_bytes == 2) r.push_back(coarse);
  r.push_back(fine);
  for (int p = 0; p < kPixels; ++p) r.push_back(static_cast<std::uint8_t>((p * 7 + salt) % 251));
  return r;
}

// Minimal second reader: mean of the first image's pixels straight from bytes.
double first_image_mean(const std::vector<std::uint8_t>& bytes, int label_bytes) {
  double s = 0;
  for (int p = 0; p < kPixels; ++p) s += bytes[static_cast<std::size_t>(label_bytes + p)];
  return s / kPixels;
}

std::filesystem::path write_file(const std::string& name, const std::vector<std::uint8_t>& bytes) {
  const auto p = std::filesystem::temp_directory_path() / ("unmix_data_" + name);
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                           static_cast<std::streamsize>(bytes.size()));
  return p;
}

}  // namespace

TEST(Cifar, TwoRecordFixtureRoundTrips) {
  auto bytes = fixture_record(1, 0, 3, 1);
  const auto second = fixture_record(1, 0, 9, 2);
  bytes.insert(bytes.end(), second.begin(), second.end());
  const auto d = parse_cifar(bytes, CifarVariant::C10, Split::Train);
  ASSERT_EQ(d.size(), 2);
  EXPECT_EQ(d.labels, (std::vector<int>{3, 9}));
  EXPECT_EQ(d.num_classes, 10);
  EXPECT_EQ(d.images.channels, 3);
  EXPECT_EQ(d.images.height, 32);
  EXPECT_TRUE(std::equal(d.images.image(1).begin(), d.images.image(1).end(), second.begin() + 1));
  // channel-major layout: pixel (y=1, x=2) of the green plane
  EXPECT_EQ(d.images.image(0)[1024 + 32 + 2], bytes[1 + 1024 + 32 + 2]);
}

TEST(Cifar, HundredKeepsFineLabel) {
  auto bytes = fixture_record(2, 4, 77, 3);
  const auto d = parse_cifar(bytes, CifarVariant::C100, Split::Test);
  EXPECT_EQ(d.labels, (std::vector<int>{77}));
  EXPECT_EQ(d.num_classes, 100);
  EXPECT_EQ(d.split, Split::Test);
}

TEST(Cifar, FirstImageMeanMatchesIndependentReader) {
  std::vector<std::uint8_t> bytes;
  for (int r = 0; r < 5; ++r) {
    const auto rec = fixture_record(1, 0, static_cast<std::uint8_t>(r), 13 * r + 5);
    bytes.insert(bytes.end(), rec.begin(), rec.end());
  }
  const auto d = parse_cifar(bytes, CifarVariant::C10, Split::Train);
  const auto img = d.images.image(0);
  const double mean = std::accumulate(img.begin(), img.end(), 0.0) / kPixels;
  EXPECT_EQ(mean, first_image_mean(bytes, 1));
}

TEST(Cifar, TruncationNamesByteOffset) {
  auto bytes = fixture_record(1, 0, 1, 0);
  bytes.resize(bytes.size() + 100, 0);
  try {
    parse_cifar(bytes, CifarVariant::C10, Split::Train, 1000);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("byte offset 4073"), std::string::npos) << e.what();
  }
  const auto path = write_file("trunc.bin", bytes);
  try {
    load_cifar_file(path, CifarVariant::C10, Split::Train);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(path.string()), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("byte offset 3073"), std::string::npos) << e.what();
  }
}

TEST(Cifar, LabelOutOfRangeIsFormatError) {
  EXPECT_THROW(parse_cifar(fixture_record(1, 0, 10, 0), CifarVariant::C10, Split::Train), FormatError);
}

TEST(Cifar, SplitDirectoryNeedsFullCounts) {
  const auto dir = std::filesystem::temp_directory_path() / "unmix_data_split";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir / "cifar-10-batches-bin");
  std::ofstream(dir / "cifar-10-batches-bin" / "test_batch.bin", std::ios::binary)
      .write(reinterpret_cast<const char*>(fixture_record(1, 0, 1, 0).data()), 3073);
  EXPECT_THROW(load_cifar(dir, CifarVariant::C10, Split::Test), FormatError);
  EXPECT_THROW(load_cifar(dir, CifarVariant::C10, Split::Train), Error);
}

TEST(Cifar, RealTrainSplitWhenAvailable) {
  const char* root = std::getenv("UNMIX_DATA_DIR");
  if (!root) GTEST_SKIP() << "UNMIX_DATA_DIR not set";
  const auto d = load_cifar(root, CifarVariant::C10, Split::Train);
  EXPECT_EQ(d.size(), 50000);
  for (int l : d.labels) ASSERT_TRUE(l >= 0 && l <= 9);
}

TEST(Synthetic, NoiselessClassesAreConstant) {
  SyntheticSpec s;
  s.num_classes = 3;
  s.samples_per_class = 4;
  s.extent = 8;
  s.noise = 0.0;
  const auto d = make_synthetic(s);
  for (int i = 0; i < d.size(); ++i)
    for (int j = 0; j < d.size(); ++j) {
      const bool same = std::equal(d.images.image(i).begin(), d.images.image(i).end(), d.images.image(j).begin());
      EXPECT_EQ(same, d.labels[static_cast<std::size_t>(i)] == d.labels[static_cast<std::size_t>(j)]);
    }
}

TEST(Synthetic, SameSeedIsBitwiseIdentical) {
  SyntheticSpec s;
  s.samples_per_class = 20;
  const auto a = make_synthetic(s), b = make_synthetic(s);
  EXPECT_EQ(a.images.pixels, b.images.pixels);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_NE(make_synthetic(s, Split::Test).images.pixels, a.images.pixels);
  s.seed = 8;
  EXPECT_NE(make_synthetic(s).images.pixels, a.images.pixels);
}

TEST(Synthetic, NearestCentroidSeparatesLowNoise) {
  SyntheticSpec s;
  s.num_classes = 2;
  s.samples_per_class = 200;
  s.noise = 0.05;
  const auto train = make_synthetic(s), test = make_synthetic(s, Split::Test);
  const std::size_t n = train.images.image_size();
  std::vector<std::vector<double>> centroid(2, std::vector<double>(n, 0.0));
  std::vector<int> count(2, 0);
  for (int i = 0; i < train.size(); ++i) {
    const int c = train.labels[static_cast<std::size_t>(i)];
    ++count[static_cast<std::size_t>(c)];
    const auto img = train.images.image(i);
    for (std::size_t p = 0; p < n; ++p) centroid[static_cast<std::size_t>(c)][p] += img[p];
  }
  for (int c = 0; c < 2; ++c)
    for (auto& v : centroid[static_cast<std::size_t>(c)]) v /= count[static_cast<std::size_t>(c)];
  int correct = 0;
  for (int i = 0; i < test.size(); ++i) {
    const auto img = test.images.image(i);
    double d0 = 0, d1 = 0;
    for (std::size_t p = 0; p < n; ++p) {
      d0 += (img[p] - centroid[0][p]) * (img[p] - centroid[0][p]);
      d1 += (img[p] - centroid[1][p]) * (img[p] - centroid[1][p]);
    }
    correct += (d1 < d0 ? 1 : 0) == test.labels[static_cast<std::size_t>(i)];
  }
  EXPECT_GT(double(correct) / test.size(), 0.99);
}

TEST(Synthetic, RejectsTinyExtent) {
  SyntheticSpec s;
  s.extent = 7;
  EXPECT_THROW(make_synthetic(s), ValueError);
}

class AugmentTest : public ::testing::Test {
 protected:
  void SetUp() override {
    SyntheticSpec s;
    s.num_classes = 1;
    s.samples_per_class = 1;
    s.extent = 12;
    img = make_synthetic(s).images;
  }
  ByteImages img;
};

TEST_F(AugmentTest, AllOffIsIdentity) {
  AugmentConfig cfg{0, 0.0, 0.0, 0.0, 0.4};
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    const auto out = augment(img.image(0), 3, 12, 12, rng, cfg);
    EXPECT_TRUE(std::equal(out.begin(), out.end(), img.image(0).begin()));
  }
}

TEST_F(AugmentTest, DoubleFlipIsIdentity) {
  AugmentConfig cfg{0, 1.0, 0.0, 0.0, 0.4};
  Rng rng(2);
  const auto once = augment(img.image(0), 3, 12, 12, rng, cfg);
  EXPECT_FALSE(std::equal(once.begin(), once.end(), img.image(0).begin()));
  const auto twice = augment(once, 3, 12, 12, rng, cfg);
  EXPECT_TRUE(std::equal(twice.begin(), twice.end(), img.image(0).begin()));
}

TEST_F(AugmentTest, GrayscaleUsesLumaWeights) {
  AugmentConfig cfg{0, 0.0, 1.0, 0.0, 0.4};
  Rng rng(3);
  const auto out = augment(img.image(0), 3, 12, 12, rng, cfg);
  const auto src = img.image(0);
  for (int p = 0; p < 144; ++p) {
    const double luma = 0.299 * src[p] + 0.587 * src[144 + p] + 0.114 * src[288 + p];
    const auto expect = static_cast<std::uint8_t>(std::floor(luma + 0.5));
    ASSERT_EQ(out[p], expect);
    ASSERT_EQ(out[144 + p], expect);
    ASSERT_EQ(out[288 + p], expect);
  }
}

TEST_F(AugmentTest, CropShiftsWithZeroBorder) {
  const auto out = crop_with_pad(img.image(0), 3, 12, 12, 2, 0, 4);
  // offset (0, 4) with pad 2 moves content up-left by (-2, +2)
  for (int ch = 0; ch < 3; ++ch)
    for (int y = 0; y < 12; ++y)
      for (int x = 0; x < 12; ++x) {
        const int sy = y - 2, sx = x + 2;
        const std::uint8_t expect = (sy < 0 || sx >= 12) ? 0 : img.image(0)[(ch * 12 + sy) * 12 + sx];
        ASSERT_EQ(out[(ch * 12 + y) * 12 + x], expect);
      }
}

TEST_F(AugmentTest, RandomnessComesOnlyFromTheRng) {
  AugmentConfig cfg;
  cfg.jitter_p = 0.5;
  Rng a(9), b(9);
  for (int t = 0; t < 10; ++t) {
    const auto x = augment(img.image(0), 3, 12, 12, a, cfg), y = augment(img.image(0), 3, 12, 12, b, cfg);
    ASSERT_EQ(x, y);
  }
  // fixed draw count: the streams stay aligned whatever the probabilities
  Rng c(11), d(11);
  augment(img.image(0), 3, 12, 12, c, AugmentConfig{0, 0.0, 0.0, 0.0, 0.4});
  augment(img.image(0), 3, 12, 12, d, AugmentConfig{4, 1.0, 1.0, 1.0, 0.4});
  EXPECT_EQ(c(), d());
}

TEST(ToTensor, NormalizesOncePerChannel) {
  ByteImages b{1, 3, 1, 2, {0, 255, 51, 102, 255, 0}};
  Normalization n{{0.5f, 0.0f, 1.0f}, {0.5f, 0.2f, 2.0f}};
  const auto t = to_tensor(b, n);
  EXPECT_FLOAT_EQ(t.at({0, 0, 0, 0}), -1.0f);
  EXPECT_FLOAT_EQ(t.at({0, 0, 0, 1}), 1.0f);
  EXPECT_FLOAT_EQ(t.at({0, 1, 0, 0}), 1.0f);
  EXPECT_FLOAT_EQ(t.at({0, 1, 0, 1}), 2.0f);
  EXPECT_FLOAT_EQ(t.at({0, 2, 0, 0}), 0.0f);
  EXPECT_FLOAT_EQ(t.at({0, 2, 0, 1}), -0.5f);
  EXPECT_THROW(to_tensor(b, Normalization{{0.5f}, {0.5f}}), ShapeError);
}

TEST(ResizeBilinear, IdentityAndAveraging) {
  const auto x = Tensor::from({1, 1, 2, 2}, {1, 2, 3, 4});
  const auto same = resize_bilinear(x, 2, 2);
  EXPECT_TRUE(std::equal(same.data().begin(), same.data().end(), x.data().begin()));
  EXPECT_FLOAT_EQ(resize_bilinear(x, 1, 1).at({0, 0, 0, 0}), 2.5f);
  EXPECT_THROW(resize_bilinear(x, 3, 3), ValueError);
}

TEST(ByteImages, GatherAndSubset) {
  ByteImages b{3, 1, 1, 2, {1, 2, 3, 4, 5, 6}};
  const std::vector<int> idx{2, 0};
  EXPECT_EQ(b.gather(idx).pixels, (std::vector<std::uint8_t>{5, 6, 1, 2}));
  LabeledDataset d{b, {7, 8, 9}, 10, Split::Train};
  EXPECT_EQ(d.subset(idx).labels, (std::vector<int>{9, 7}));
  const std::vector<int> bad{3};
  EXPECT_THROW(b.gather(bad), ValueError);
}
