#pragma once

#include <optional>
#include <string>
#include <vector>

#include "unmix/encoder.hpp"
#include "unmix/memory_bank.hpp"
#include "unmix/mixer.hpp"
#include "unmix/tensor.hpp"

namespace unmix {

enum class BaseLoss { SimCLR, MoCo, BYOL };

/// original_only, mixed_only and combined are single-branch (only the first
/// view is mixed); both_branch mixes both views with the same draw.
enum class LossMode { OriginalOnly, MixedOnly, Combined, BothBranch };

std::string to_string(BaseLoss base);
std::string to_string(LossMode mode);
BaseLoss parse_base_loss(const std::string& text);
LossMode parse_loss_mode(const std::string& text);

/// Mean over rows of −log softmax([q·k_pos, q·negatives…]/τ)[0].
/// `negatives` may be undefined (no negatives: the loss is exactly 0).
/// Rows of q, k_pos and negatives must be unit-norm within 1e-4.
Tensor info_nce(const Tensor& q, const Tensor& k_pos, const Tensor& negatives, float tau);

/// In-batch InfoNCE: row i of `queries` is scored against every row of `keys`;
/// the positive is key i, the rest are negatives.
Tensor in_batch_info_nce(const Tensor& queries, const Tensor& keys, float tau);

/// Mean over i of 2 − 2·q_i·k_i (squared distance of unit vectors).
Tensor distance_loss(const Tensor& q, const Tensor& k);

/// Softened positive-pair targets between a self-mixed batch and the keys of
/// the second view: entry (i, i) is λ, entry (i, N−1−i) is 1 − λ, everything
/// else (negative pairs) is 0. When i == N−1−i the two merge into 1.
struct DistanceMatrix {
  int n = 0;
  double lambda = 1.0;
  std::vector<double> values;  // n×n, row-major

  double at(int i, int j) const { return values[static_cast<std::size_t>(i) * n + j]; }
};

DistanceMatrix build_distance_matrix(int n, double lambda);

/// Soft-target in-batch InfoNCE: mean over i of −Σ_j D(i,j)·log softmax_j(q_i·k_j/τ).
/// With D from build_distance_matrix this equals λ·L(q, k) + (1 − λ)·L(reverse(q), k).
Tensor soft_in_batch_info_nce(const Tensor& queries, const Tensor& keys, const DistanceMatrix& targets,
                              float tau);

/// Everything the base method needs besides the images. The online encoder is
/// required; `target` is the momentum copy (MoCo key encoder, BYOL target);
/// `predictor` is BYOL only; `bank` supplies MoCo negatives.
struct LossContext {
  Encoder* online = nullptr;
  Encoder* target = nullptr;
  Predictor* predictor = nullptr;
  const MemoryBank* bank = nullptr;
  float tau = 0.2f;
  bool symmetric = false;
  bool train = true;
};

struct LossReport {
  double l_ori = 0.0;
  double l_m_normal = 0.0;
  double l_m_reverse = 0.0;
  double lambda = 1.0;
  double total = 0.0;
  std::optional<MixMode> mode;  // empty when no mixture entered the loss

  std::string describe() const;
};

struct LossResult {
  Tensor objective;  // differentiable scalar
  LossReport report;
  /// Detached keys computed from unmixed views, ready for a memory bank.
  std::vector<Tensor> bank_keys;
};

/// The base method on (view1, view2) alone.
LossResult original_loss(const Tensor& view1, const Tensor& view2, BaseLoss base, const LossContext& ctx);

/// Single-branch objective: L_ori + λ·L_m(mixed, view2) + (1 − λ)·L_m(reverse(mixed), view2).
/// The mixed batch is embedded once; the reverse-order term permutes those
/// embeddings. With include_original = false the L_ori term (and its forward
/// passes) is skipped.
LossResult unmix_loss_single(const Tensor& view1, const Tensor& view2, const MixedBatch& mixed, BaseLoss base,
                             const LossContext& ctx, bool include_original = true);

/// Both-branch objective: L_ori(view1, view2) + L_m(mixed1, mixed2). λ is
/// recorded but does not weight any term.
LossResult unmix_loss_both(const Tensor& view1, const Tensor& view2, const MixedBatch& mixed1,
                           const MixedBatch& mixed2, BaseLoss base, const LossContext& ctx);

}  // namespace unmix
