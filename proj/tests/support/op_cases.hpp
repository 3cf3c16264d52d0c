#pragma once

// Every differentiable op (and the base losses) with an input generator, for
// the finite-difference sweep.

#include <functional>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "unmix/losses.hpp"
#include "unmix/ops.hpp"

namespace unmix::test {

struct OpCase {
  std::string name;
  std::function<std::vector<Tensor>(Rng&)> inputs;
  std::function<Tensor(const std::vector<Tensor>&)> op;
  // Scalar losses round their float32 output; a wider step keeps that
  // rounding well below the tolerance.
  float eps = 1e-3f;
};

inline std::vector<OpCase> op_cases() {
  auto t = [](Shape s) { return [s](Rng& r) { return std::vector<Tensor>{random_tensor(s, r, -1, 1, true)}; }; };
  auto t2 = [](Shape a, Shape b) {
    return [a, b](Rng& r) { return std::vector<Tensor>{random_tensor(a, r, -1, 1, true), random_tensor(b, r, -1, 1, true)}; };
  };
  return {
      {"add", t2({3, 4}, {3, 4}), [](const auto& in) { return add(in[0], in[1]); }},
      {"sub", t2({3, 4}, {3, 4}), [](const auto& in) { return sub(in[0], in[1]); }},
      {"mul", t2({3, 4}, {3, 4}), [](const auto& in) { return mul(in[0], in[1]); }},
      {"div",
       [](Rng& r) {
         return std::vector<Tensor>{random_tensor({3, 4}, r, -1, 1, true), random_tensor({3, 4}, r, 0.5f, 2.0f, true)};
       },
       [](const auto& in) { return div(in[0], in[1]); }},
      {"add_scalar", t({3, 4}), [](const auto& in) { return add(in[0], 0.7f); }},
      {"scale", t({3, 4}), [](const auto& in) { return scale(in[0], -1.3f); }},
      {"transpose", t({3, 5}), [](const auto& in) { return transpose(in[0]); }},
      {"relu", [](Rng& r) { return std::vector<Tensor>{random_off_zero({4, 5}, r)}; },
       [](const auto& in) { return relu(in[0]); }},
      {"log_softmax", t({4, 6}), [](const auto& in) { return log_softmax(in[0]); }},
      {"l2_normalize", t({4, 6}), [](const auto& in) { return l2_normalize(in[0]); }},
      {"global_avg_pool", t({2, 3, 4, 4}), [](const auto& in) { return global_avg_pool(in[0]); }},
      {"add_bias", t2({4, 3}, {3}), [](const auto& in) { return add_bias(in[0], in[1]); }},
      {"reshape", t({2, 6}), [](const auto& in) { return reshape(in[0], {3, 4}); }},
      {"sum", t({3, 4}), [](const auto& in) { return sum(in[0]); }},
      {"mean", t({3, 4}), [](const auto& in) { return mean(in[0]); }},
      {"rowwise_dot", t2({4, 5}, {4, 5}), [](const auto& in) { return rowwise_dot(in[0], in[1]); }},
      {"concat_cols", t2({3, 2}, {3, 4}), [](const auto& in) { return concat_cols(in[0], in[1]); }},
      {"pick", t({4, 5}),
       [](const auto& in) {
         const std::vector<std::int64_t> idx{0, 3, 4, 1};
         return pick(in[0], idx);
       }},
      {"reverse_rows", t({5, 3}), [](const auto& in) { return reverse_rows(in[0]); }},
      {"slice_rows", t({5, 3}), [](const auto& in) { return slice_rows(in[0], 1, 4); }},
      {"batch_norm_train_rank2",
       [](Rng& r) {
         return std::vector<Tensor>{random_tensor({6, 3}, r, -1, 1, true), random_tensor({3}, r, 0.5f, 1.5f, true),
                                    random_tensor({3}, r, -1, 1, true)};
       },
       [](const auto& in) {
         Tensor rm = Tensor::zeros({3}), rv = Tensor::full({3}, 1.0f);
         return batch_norm(in[0], in[1], in[2], rm, rv, true);
       }},
      {"batch_norm_train_rank4",
       [](Rng& r) {
         return std::vector<Tensor>{random_tensor({2, 3, 3, 3}, r, -1, 1, true),
                                    random_tensor({3}, r, 0.5f, 1.5f, true), random_tensor({3}, r, -1, 1, true)};
       },
       [](const auto& in) {
         Tensor rm = Tensor::zeros({3}), rv = Tensor::full({3}, 1.0f);
         return batch_norm(in[0], in[1], in[2], rm, rv, true);
       }},
      {"batch_norm_eval",
       [](Rng& r) {
         return std::vector<Tensor>{random_tensor({4, 3}, r, -1, 1, true), random_tensor({3}, r, 0.5f, 1.5f, true),
                                    random_tensor({3}, r, -1, 1, true)};
       },
       [](const auto& in) {
         Tensor rm = Tensor::from({3}, {0.1f, -0.2f, 0.3f}), rv = Tensor::from({3}, {0.5f, 1.0f, 2.0f});
         return batch_norm(in[0], in[1], in[2], rm, rv, false);
       }},
      {"matmul", t2({4, 5}, {5, 3}), [](const auto& in) { return matmul(in[0], in[1]); }},
      {"conv2d_s1p1", t2({2, 3, 5, 5}, {4, 3, 3, 3}), [](const auto& in) { return conv2d(in[0], in[1], 1, 1); }},
      {"conv2d_s2p1", t2({2, 2, 6, 6}, {3, 2, 3, 3}), [](const auto& in) { return conv2d(in[0], in[1], 2, 1); }},
      {"contrastive_cross_entropy",
       [](Rng& r) {
         return std::vector<Tensor>{random_tensor({3, 4}, r, -1, 1, true), random_tensor({3, 4}, r, -1, 1, true),
                                    random_tensor({5, 4}, r, -1, 1, true)};
       },
       [](const auto& in) {
         std::vector<double> t(18, 0.0);
         for (int i = 0; i < 3; ++i) t[static_cast<std::size_t>(i * 6)] = 0.6, t[static_cast<std::size_t>(i * 6 + 2 + i)] = 0.4;
         return contrastive_cross_entropy(in[0], in[1], in[2], t, 0.5f);
       },
       5e-3f},
      // Loss inputs go through l2_normalize so perturbed rows stay unit-norm.
      {"info_nce",
       [](Rng& r) {
         return std::vector<Tensor>{random_tensor({4, 6}, r, -1, 1, true), random_tensor({4, 6}, r, -1, 1, true),
                                    random_tensor({7, 6}, r, -1, 1, true)};
       },
       [](const auto& in) { return info_nce(l2_normalize(in[0]), l2_normalize(in[1]), l2_normalize(in[2]), 0.2f); },
       5e-3f},
      {"in_batch_info_nce", t2({5, 6}, {5, 6}),
       [](const auto& in) { return in_batch_info_nce(l2_normalize(in[0]), l2_normalize(in[1]), 0.2f); },
       5e-3f},
      {"soft_in_batch_info_nce", t2({5, 6}, {5, 6}),
       [](const auto& in) {
         return soft_in_batch_info_nce(l2_normalize(in[0]), l2_normalize(in[1]), build_distance_matrix(5, 0.3), 0.2f);
       },
       5e-3f},
      {"distance_loss", t2({4, 6}, {4, 6}),
       [](const auto& in) { return distance_loss(l2_normalize(in[0]), l2_normalize(in[1])); },
       5e-3f},
  };
}

}  // namespace unmix::test
