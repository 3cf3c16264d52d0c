#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "unmix/tensor.hpp"

namespace unmix {

// Elementwise. Shapes must match exactly; there is no broadcasting apart from
// the scalar overloads and the explicit bias helpers below.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, float b);
Tensor scale(const Tensor& a, float factor);

/// [M×K]·[K×N] -> [M×N].
Tensor matmul(const Tensor& a, const Tensor& b);
/// Rank-2 transpose.
Tensor transpose(const Tensor& a);

/// Cross-correlation of an N×C×H×W batch with F×C×kh×kw filters, zero padding
/// on all sides. Output extent per axis is floor((H + 2·pad − k)/stride) + 1.
Tensor conv2d(const Tensor& x, const Tensor& weight, int stride, int pad);

Tensor relu(const Tensor& x);

/// Per-channel normalization over every axis except axis 1 (rank 2 or 4).
/// In training mode the batch statistics are used and the running buffers are
/// updated as running = momentum·running + (1 − momentum)·batch (variance
/// unbiased). In eval mode the running buffers are used. The buffers are the
/// only state this op writes.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, bool train,
                  float momentum = 0.9f, float eps = 1e-5f);

/// Scales each row of a rank-2 tensor to unit Euclidean norm. A zero row throws.
Tensor l2_normalize(const Tensor& x);

/// Row-wise log-softmax of a rank-2 tensor.
Tensor log_softmax(const Tensor& x);

/// Soft-target cross-entropy over similarity logits, accumulated in double:
///   −(1/N) Σ_i Σ_j T(i,j) · log softmax_j(l_i)
/// where row i of the logits is [q_i·pos_i (if pos is defined), q_i·keys_0, …]
/// scaled by 1/τ. `targets` is N×columns, row-major. Either `pos` or `keys`
/// may be undefined, not both.
Tensor contrastive_cross_entropy(const Tensor& q, const Tensor& pos, const Tensor& keys,
                                 std::span<const double> targets, float tau);

/// N×C×H×W -> N×C.
Tensor global_avg_pool(const Tensor& x);

/// x[N×D] + b[D] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor reshape(const Tensor& x, Shape shape);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// out[i] = a[i,:]·b[i,:], shape {N}.
Tensor rowwise_dot(const Tensor& a, const Tensor& b);
/// [N×P] ++ [N×Q] -> [N×(P+Q)].
Tensor concat_cols(const Tensor& a, const Tensor& b);
/// out[i] = x[i, index[i]], shape {N}.
Tensor pick(const Tensor& x, std::span<const std::int64_t> index);
/// out[i] = x[N−1−i] along axis 0, for any rank.
Tensor reverse_rows(const Tensor& x);
/// Selects rows [begin, end) along axis 0.
Tensor slice_rows(const Tensor& x, std::int64_t begin, std::int64_t end);

}  // namespace unmix
