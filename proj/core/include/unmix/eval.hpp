#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "unmix/data.hpp"
#include "unmix/encoder.hpp"
#include "unmix/tensor.hpp"

namespace unmix {

/// Unit-norm feature rows with integer labels in [0, num_classes).
struct FeatureIndex {
  Tensor features;  // M×D
  std::vector<int> labels;
  int num_classes = 0;

  int size() const { return static_cast<int>(labels.size()); }
  /// Throws unless rows are unit-norm within 1e-5 and labels are in range.
  void validate() const;
};

/// Nearest neighbours by cosine similarity (ties: lower index first).
/// Weighted: class score Σ exp(sim/τ) over the k neighbours, argmax with ties
/// to the lower class. Unweighted: majority vote, ties to the class of the
/// nearest neighbour among the tied classes.
std::vector<int> knn_predict(const FeatureIndex& index, const Tensor& queries, int k, double tau, bool weighted);
double knn_accuracy(const FeatureIndex& index, const FeatureIndex& queries, int k, double tau, bool weighted);

struct ProbeConfig {
  int epochs = 100;
  double lr_start = 1e-2;
  double lr_end = 1e-6;
  double weight_decay = 5e-6;
  int batch_size = 256;
  std::uint64_t seed = 0;
};

/// Softmax-regression probe on frozen features, trained with Adam and an
/// exponentially decaying learning rate. Returns test accuracy.
double linear_probe(const Tensor& train_features, std::span<const int> train_labels, const Tensor& test_features,
                    std::span<const int> test_labels, int num_classes, const ProbeConfig& cfg);

/// Eval-mode pooled backbone features, row-normalized.
FeatureIndex extract_features(Encoder& encoder, const LabeledDataset& data, const Normalization& norm,
                              int batch_size = 256);

/// Writes "features" (M×D) and "labels" (M, stored as float32) UMX1 records.
void export_features(const std::filesystem::path& path, const FeatureIndex& index);

}  // namespace unmix
