#include "unmix/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "unmix/checkpoint.hpp"
#include "unmix/error.hpp"
#include "unmix/ops.hpp"
#include "unmix/optim.hpp"

namespace unmix {

void FeatureIndex::validate() const {
  if (!features.defined() || features.rank() != 2) throw ShapeError("feature index needs an M×D feature matrix");
  if (features.dim(0) != static_cast<std::int64_t>(labels.size()))
    throw ShapeError("feature index has " + std::to_string(features.dim(0)) + " rows but " +
                     std::to_string(labels.size()) + " labels");
  const auto d = features.dim(1);
  auto v = features.data();
  for (std::int64_t i = 0; i < features.dim(0); ++i) {
    double ss = 0.0;
    for (std::int64_t j = 0; j < d; ++j) ss += static_cast<double>(v[i * d + j]) * v[i * d + j];
    if (std::abs(std::sqrt(ss) - 1.0) > 1e-5)
      throw ValueError("feature row " + std::to_string(i) + " is not unit-norm");
  }
  for (int l : labels)
    if (l < 0 || l >= num_classes) throw ValueError("feature label " + std::to_string(l) + " out of range");
}

std::vector<int> knn_predict(const FeatureIndex& index, const Tensor& queries, int k, double tau, bool weighted) {
  if (index.size() == 0) throw ValueError("knn: empty index");
  if (k < 1 || k > index.size())
    throw ValueError("knn: k=" + std::to_string(k) + " must lie in [1, " + std::to_string(index.size()) + "]");
  if (weighted && !(tau > 0.0)) throw ValueError("knn: temperature must be > 0");
  if (queries.rank() != 2 || queries.dim(1) != index.features.dim(1))
    throw ShapeError("knn: queries " + to_string(queries.shape()) + " vs index " + to_string(index.features.shape()));

  const auto m = index.features.dim(0), d = index.features.dim(1);
  auto feat = index.features.data();
  auto qd = queries.data();
  std::vector<double> sims(static_cast<std::size_t>(m));
  std::vector<int> order(static_cast<std::size_t>(m));
  std::vector<double> scores(static_cast<std::size_t>(index.num_classes));
  std::vector<int> predictions;
  predictions.reserve(static_cast<std::size_t>(queries.dim(0)));

  for (std::int64_t q = 0; q < queries.dim(0); ++q) {
    const float* qrow = qd.data() + q * d;
    for (std::int64_t i = 0; i < m; ++i) {
      double s = 0.0;
      const float* row = feat.data() + i * d;
      for (std::int64_t j = 0; j < d; ++j) s += static_cast<double>(qrow[j]) * row[j];
      sims[i] = s;
    }
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](int a, int b) {
      return sims[a] != sims[b] ? sims[a] > sims[b] : a < b;
    });
    std::fill(scores.begin(), scores.end(), 0.0);
    for (int r = 0; r < k; ++r) {
      const int nb = order[r];
      scores[index.labels[nb]] += weighted ? std::exp(sims[nb] / tau) : 1.0;
    }
    const double best = *std::max_element(scores.begin(), scores.end());
    int pick = -1;
    if (weighted) {
      pick = static_cast<int>(std::find(scores.begin(), scores.end(), best) - scores.begin());
    } else {
      for (int r = 0; r < k && pick < 0; ++r)
        if (scores[index.labels[order[r]]] == best) pick = index.labels[order[r]];
    }
    predictions.push_back(pick);
  }
  return predictions;
}

double knn_accuracy(const FeatureIndex& index, const FeatureIndex& queries, int k, double tau, bool weighted) {
  index.validate();
  if (queries.size() == 0) throw ValueError("knn: no queries");
  const auto pred = knn_predict(index, queries.features, k, tau, weighted);
  int correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == queries.labels[i];
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

double linear_probe(const Tensor& train_features, std::span<const int> train_labels, const Tensor& test_features,
                    std::span<const int> test_labels, int num_classes, const ProbeConfig& cfg) {
  if (train_features.rank() != 2 || test_features.rank() != 2 || train_features.dim(1) != test_features.dim(1))
    throw ShapeError("linear_probe: feature shapes " + to_string(train_features.shape()) + " / " +
                     to_string(test_features.shape()));
  if (train_features.dim(0) != static_cast<std::int64_t>(train_labels.size()) ||
      test_features.dim(0) != static_cast<std::int64_t>(test_labels.size()))
    throw ShapeError("linear_probe: label count does not match feature rows");
  for (auto labels : {train_labels, test_labels})
    for (int l : labels)
      if (l < 0 || l >= num_classes)
        throw ValueError("linear_probe: class count mismatch, label " + std::to_string(l) + " with " +
                         std::to_string(num_classes) + " classes");
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw ValueError("linear_probe: epochs and batch size must be >= 1");

  const auto n = train_features.dim(0), d = train_features.dim(1);
  auto rng = make_rng(cfg.seed, {tag(Stream::Probe)});
  std::normal_distribution<float> g(0.0f, 0.01f);
  std::vector<float> w0(static_cast<std::size_t>(d * num_classes));
  for (auto& v : w0) v = g(rng);
  Tensor weight = Tensor::from({d, num_classes}, std::move(w0), true);
  Tensor bias = Tensor::zeros({num_classes}, true);
  Adam opt({{"probe.weight", weight}, {"probe.bias", bias}}, 0.9f, 0.999f, 1e-8f, static_cast<float>(cfg.weight_decay));

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  auto features = train_features.data();
  const double decay = cfg.epochs > 1 ? std::log(cfg.lr_end / cfg.lr_start) / (cfg.epochs - 1) : 0.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto lr = static_cast<float>(cfg.lr_start * std::exp(decay * epoch));
    std::shuffle(order.begin(), order.end(), rng);
    for (std::int64_t start = 0; start < n; start += cfg.batch_size) {
      const auto end = std::min<std::int64_t>(n, start + cfg.batch_size);
      std::vector<float> xb;
      std::vector<std::int64_t> yb;
      for (auto i = start; i < end; ++i) {
        const int row = order[i];
        xb.insert(xb.end(), features.begin() + row * d, features.begin() + (row + 1) * d);
        yb.push_back(train_labels[static_cast<std::size_t>(row)]);
      }
      Tensor x = Tensor::from({end - start, d}, std::move(xb));
      Tensor loss = scale(mean(pick(log_softmax(add_bias(matmul(x, weight), bias)), yb)), -1.0f);
      opt.zero_grad();
      loss.backward();
      opt.step(lr);
    }
  }

  NoGradGuard no_grad;
  Tensor logits = add_bias(matmul(test_features, weight), bias);
  auto ld = logits.data();
  int correct = 0;
  for (std::size_t i = 0; i < test_labels.size(); ++i) {
    const float* row = ld.data() + i * num_classes;
    const int pred = static_cast<int>(std::max_element(row, row + num_classes) - row);
    correct += pred == test_labels[i];
  }
  return test_labels.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(test_labels.size());
}

FeatureIndex extract_features(Encoder& encoder, const LabeledDataset& data, const Normalization& norm,
                              int batch_size) {
  NoGradGuard no_grad;
  FeatureIndex out;
  out.labels = data.labels;
  out.num_classes = data.num_classes;
  std::vector<float> all;
  std::int64_t dim = 0;
  for (int start = 0; start < data.size(); start += batch_size) {
    const int end = std::min(data.size(), start + batch_size);
    std::vector<int> idx(static_cast<std::size_t>(end - start));
    std::iota(idx.begin(), idx.end(), start);
    Tensor f = l2_normalize(encoder.features(to_tensor(data.images.gather(idx), norm), false));
    dim = f.dim(1);
    all.insert(all.end(), f.data().begin(), f.data().end());
  }
  out.features = Tensor::from({data.size(), dim}, std::move(all));
  return out;
}

void export_features(const std::filesystem::path& path, const FeatureIndex& index) {
  Checkpoint c;
  c.tensors.push_back({"features", index.features.detach()});
  std::vector<float> labels(index.labels.begin(), index.labels.end());
  const auto count = static_cast<std::int64_t>(labels.size());
  c.tensors.push_back({"labels", Tensor::from({count}, std::move(labels))});
  c.metadata["num_classes"] = std::to_string(index.num_classes);
  save_checkpoint(path, c);
}

}  // namespace unmix
