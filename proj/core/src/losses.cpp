#include "unmix/losses.hpp"

#include <cmath>
#include <sstream>

#include "unmix/error.hpp"
#include "unmix/ops.hpp"

namespace unmix {

std::string to_string(BaseLoss base) {
  switch (base) {
    case BaseLoss::SimCLR: return "simclr";
    case BaseLoss::MoCo: return "moco";
    case BaseLoss::BYOL: return "byol";
  }
  return "?";
}

std::string to_string(LossMode mode) {
  switch (mode) {
    case LossMode::OriginalOnly: return "original_only";
    case LossMode::MixedOnly: return "mixed_only";
    case LossMode::Combined: return "combined";
    case LossMode::BothBranch: return "both_branch";
  }
  return "?";
}

BaseLoss parse_base_loss(const std::string& text) {
  if (text == "simclr") return BaseLoss::SimCLR;
  if (text == "moco") return BaseLoss::MoCo;
  if (text == "byol") return BaseLoss::BYOL;
  throw ValueError("unknown base loss '" + text + "' (expected simclr, moco or byol)");
}

LossMode parse_loss_mode(const std::string& text) {
  if (text == "original_only") return LossMode::OriginalOnly;
  if (text == "mixed_only") return LossMode::MixedOnly;
  if (text == "combined") return LossMode::Combined;
  if (text == "both_branch") return LossMode::BothBranch;
  throw ValueError("unknown loss mode '" + text + "' (expected original_only, mixed_only, combined or both_branch)");
}

std::string LossReport::describe() const {
  std::ostringstream os;
  os << "l_ori=" << l_ori << " l_m_normal=" << l_m_normal << " l_m_reverse=" << l_m_reverse
     << " lambda=" << lambda << " total=" << total << " mode=" << (mode ? to_string(*mode) : "none");
  return os.str();
}

namespace {

void require_unit_rows(const char* what, const Tensor& t) {
  if (t.rank() != 2) throw ShapeError(std::string(what) + ": expected rank-2 embeddings, got " + to_string(t.shape()));
  const auto n = t.dim(0), d = t.dim(1);
  auto v = t.data();
  for (std::int64_t i = 0; i < n; ++i) {
    double ss = 0.0;
    for (std::int64_t j = 0; j < d; ++j) ss += static_cast<double>(v[i * d + j]) * v[i * d + j];
    if (std::abs(std::sqrt(ss) - 1.0) > 1e-4)
      throw ValueError(std::string(what) + ": row " + std::to_string(i) + " is not unit-norm (norm " +
                       std::to_string(std::sqrt(ss)) + ")");
  }
}

}  // namespace

Tensor info_nce(const Tensor& q, const Tensor& k_pos, const Tensor& negatives, float tau) {
  if (!(tau > 0.0f)) throw ValueError("info_nce: temperature must be > 0");
  if (q.shape() != k_pos.shape())
    throw ShapeError("info_nce: query " + to_string(q.shape()) + " and key " + to_string(k_pos.shape()) + " differ");
  require_unit_rows("info_nce query", q);
  require_unit_rows("info_nce key", k_pos);
  const auto n = q.dim(0);
  std::int64_t cols = 1;
  if (negatives.defined()) {
    if (negatives.rank() != 2 || negatives.dim(1) != q.dim(1))
      throw ShapeError("info_nce: negatives " + to_string(negatives.shape()) + " incompatible with " +
                       to_string(q.shape()));
    require_unit_rows("info_nce negatives", negatives);
    cols += negatives.dim(0);
  }
  std::vector<double> targets(static_cast<std::size_t>(n * cols), 0.0);
  for (std::int64_t i = 0; i < n; ++i) targets[static_cast<std::size_t>(i * cols)] = 1.0;
  return contrastive_cross_entropy(q, k_pos, negatives, targets, tau);
}

Tensor in_batch_info_nce(const Tensor& queries, const Tensor& keys, float tau) {
  if (!(tau > 0.0f)) throw ValueError("in_batch_info_nce: temperature must be > 0");
  if (queries.shape() != keys.shape())
    throw ShapeError("in_batch_info_nce: " + to_string(queries.shape()) + " vs " + to_string(keys.shape()));
  require_unit_rows("in_batch_info_nce query", queries);
  require_unit_rows("in_batch_info_nce key", keys);
  const auto n = queries.dim(0);
  std::vector<double> targets(static_cast<std::size_t>(n * n), 0.0);
  for (std::int64_t i = 0; i < n; ++i) targets[static_cast<std::size_t>(i * n + i)] = 1.0;
  return contrastive_cross_entropy(queries, Tensor{}, keys, targets, tau);
}

Tensor soft_in_batch_info_nce(const Tensor& queries, const Tensor& keys, const DistanceMatrix& targets, float tau) {
  if (!(tau > 0.0f)) throw ValueError("soft_in_batch_info_nce: temperature must be > 0");
  if (queries.shape() != keys.shape() || queries.dim(0) != targets.n)
    throw ShapeError("soft_in_batch_info_nce: " + to_string(queries.shape()) + " vs " + to_string(keys.shape()) +
                     " with " + std::to_string(targets.n) + "×" + std::to_string(targets.n) + " targets");
  require_unit_rows("soft_in_batch_info_nce query", queries);
  require_unit_rows("soft_in_batch_info_nce key", keys);
  return contrastive_cross_entropy(queries, Tensor{}, keys, targets.values, tau);
}

Tensor distance_loss(const Tensor& q, const Tensor& k) {
  if (q.shape() != k.shape())
    throw ShapeError("distance_loss: " + to_string(q.shape()) + " vs " + to_string(k.shape()));
  require_unit_rows("distance_loss query", q);
  require_unit_rows("distance_loss key", k);
  return mean(add(scale(rowwise_dot(q, k), -2.0f), 2.0f));
}

DistanceMatrix build_distance_matrix(int n, double lambda) {
  if (n < 1) throw ValueError("build_distance_matrix: n must be >= 1");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ValueError("build_distance_matrix: lambda must lie in [0,1]");
  DistanceMatrix d;
  d.n = n;
  d.lambda = lambda;
  d.values.assign(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    const int partner = n - 1 - i;
    if (partner == i) {
      d.values[static_cast<std::size_t>(i) * n + i] = 1.0;
    } else {
      d.values[static_cast<std::size_t>(i) * n + i] = lambda;
      d.values[static_cast<std::size_t>(i) * n + partner] = 1.0 - lambda;
    }
  }
  return d;
}

namespace {

/// Embeddings of one image batch. `online` carries gradients (BYOL: after the
/// predictor); `target` is detached output of the momentum encoder.
struct Branch {
  Tensor online;
  Tensor target;
  bool mixed = false;
};

struct Needs {
  bool query_online = false, query_target = false;
  bool key_online = false, key_target = false;
};

Needs needs_for(BaseLoss base, bool symmetric) {
  switch (base) {
    case BaseLoss::SimCLR: return {true, false, true, false};
    case BaseLoss::MoCo: return symmetric ? Needs{true, true, true, true} : Needs{true, false, false, true};
    case BaseLoss::BYOL: return {true, true, true, true};
  }
  return {};
}

void check_context(BaseLoss base, const LossContext& ctx) {
  if (!ctx.online) throw ValueError("loss context has no online encoder");
  if ((base == BaseLoss::MoCo || base == BaseLoss::BYOL) && !ctx.target)
    throw ValueError(to_string(base) + " needs a momentum (target) encoder");
  if (base == BaseLoss::BYOL && !ctx.predictor) throw ValueError("byol needs a predictor");
  if (!(ctx.tau > 0.0f)) throw ValueError("loss.tau must be > 0");
}

Branch embed(const Tensor& images, BaseLoss base, const LossContext& ctx, bool want_online, bool want_target,
             bool mixed) {
  Branch b;
  b.mixed = mixed;
  if (want_online) {
    b.online = ctx.online->forward(images, ctx.train);
    if (base == BaseLoss::BYOL) b.online = ctx.predictor->forward(b.online, ctx.train);
  }
  if (want_target) {
    NoGradGuard no_grad;
    b.target = ctx.target->forward(images, ctx.train).detach();
  }
  return b;
}

Branch reversed(const Branch& b) {
  Branch r;
  r.mixed = b.mixed;
  if (b.online.defined()) r.online = reverse_batch(b.online);
  if (b.target.defined()) r.target = reverse_batch(b.target);
  return r;
}

/// The base method's loss with `a` in the query role and `b` in the key role.
Tensor pair_loss(const Branch& a, const Branch& b, BaseLoss base, const LossContext& ctx, const Tensor& bank) {
  switch (base) {
    case BaseLoss::SimCLR:
      return scale(add(in_batch_info_nce(a.online, b.online, ctx.tau), in_batch_info_nce(b.online, a.online, ctx.tau)),
                   0.5f);
    case BaseLoss::MoCo: {
      Tensor forward = info_nce(a.online, b.target, bank, ctx.tau);
      if (!ctx.symmetric) return forward;
      return scale(add(forward, info_nce(b.online, a.target, bank, ctx.tau)), 0.5f);
    }
    case BaseLoss::BYOL:
      return scale(add(distance_loss(a.online, b.target), distance_loss(b.online, a.target)), 0.5f);
  }
  throw ValueError("unknown base loss");
}

Tensor bank_negatives(BaseLoss base, const LossContext& ctx) {
  if (base != BaseLoss::MoCo || !ctx.bank) return {};
  return ctx.bank->keys();
}

void collect_bank_keys(BaseLoss base, const Branch& b, std::vector<Tensor>& out) {
  if (base != BaseLoss::MoCo || b.mixed || !b.target.defined()) return;
  out.push_back(b.target);
}

void check_mixed(const Tensor& view, const MixedBatch& mixed) {
  if (!mixed.images.defined()) throw ValueError("mixed batch has no images");
  if (!(mixed.lambda >= 0.0 && mixed.lambda <= 1.0) || !std::isfinite(mixed.lambda))
    throw ValueError("mixed batch lambda missing or outside [0,1]");
  if (mixed.images.shape() != view.shape())
    throw ShapeError("mixed batch " + to_string(mixed.images.shape()) + " does not pair with view " +
                     to_string(view.shape()));
}

}  // namespace

LossResult original_loss(const Tensor& view1, const Tensor& view2, BaseLoss base, const LossContext& ctx) {
  check_context(base, ctx);
  if (view1.shape() != view2.shape())
    throw ShapeError("views differ: " + to_string(view1.shape()) + " vs " + to_string(view2.shape()));
  const auto need = needs_for(base, ctx.symmetric);
  const Tensor bank = bank_negatives(base, ctx);
  Branch v1 = embed(view1, base, ctx, need.query_online, need.query_target, false);
  Branch v2 = embed(view2, base, ctx, need.key_online, need.key_target, false);

  LossResult out;
  out.objective = pair_loss(v1, v2, base, ctx, bank);
  out.report.l_ori = out.objective.item();
  out.report.total = out.report.l_ori;
  collect_bank_keys(base, v2, out.bank_keys);
  collect_bank_keys(base, v1, out.bank_keys);
  return out;
}

LossResult unmix_loss_single(const Tensor& view1, const Tensor& view2, const MixedBatch& mixed, BaseLoss base,
                             const LossContext& ctx, bool include_original) {
  check_context(base, ctx);
  check_mixed(view1, mixed);
  if (view1.shape() != view2.shape())
    throw ShapeError("views differ: " + to_string(view1.shape()) + " vs " + to_string(view2.shape()));
  const auto need = needs_for(base, ctx.symmetric);
  const Tensor bank = bank_negatives(base, ctx);

  // Online passes: view1 (when L_ori is on), view2 (when the base needs it), mixed.
  std::optional<Branch> v1;
  if (include_original) v1 = embed(view1, base, ctx, need.query_online, need.query_target, false);
  Branch v2 = embed(view2, base, ctx, need.key_online, need.key_target, false);
  Branch m = embed(mixed.images, base, ctx, need.query_online, need.query_target, true);
  Branch m_rev = reversed(m);

  const double lam = mixed.lambda;
  Tensor l_normal = pair_loss(m, v2, base, ctx, bank);
  Tensor l_reverse = pair_loss(m_rev, v2, base, ctx, bank);
  Tensor mixed_terms = add(scale(l_normal, static_cast<float>(lam)), scale(l_reverse, static_cast<float>(1.0 - lam)));

  LossResult out;
  out.report.lambda = lam;
  out.report.mode = mixed.mode;
  out.report.l_m_normal = l_normal.item();
  out.report.l_m_reverse = l_reverse.item();
  if (v1) {
    Tensor l_ori = pair_loss(*v1, v2, base, ctx, bank);
    out.report.l_ori = l_ori.item();
    out.objective = add(l_ori, mixed_terms);
  } else {
    out.objective = mixed_terms;
  }
  out.report.total = out.report.l_ori + lam * out.report.l_m_normal + (1.0 - lam) * out.report.l_m_reverse;
  collect_bank_keys(base, v2, out.bank_keys);
  if (v1) collect_bank_keys(base, *v1, out.bank_keys);
  return out;
}

LossResult unmix_loss_both(const Tensor& view1, const Tensor& view2, const MixedBatch& mixed1,
                           const MixedBatch& mixed2, BaseLoss base, const LossContext& ctx) {
  check_context(base, ctx);
  check_mixed(view1, mixed1);
  check_mixed(view2, mixed2);
  if (mixed1.lambda != mixed2.lambda || mixed1.mode != mixed2.mode || mixed1.box != mixed2.box)
    throw ValueError("both-branch mixing needs the same draw for both views (lambda " + std::to_string(mixed1.lambda) +
                     " vs " + std::to_string(mixed2.lambda) + ")");
  const auto need = needs_for(base, ctx.symmetric);
  const Tensor bank = bank_negatives(base, ctx);

  Branch v1 = embed(view1, base, ctx, need.query_online, need.query_target, false);
  Branch v2 = embed(view2, base, ctx, need.key_online, need.key_target, false);
  Branch m1 = embed(mixed1.images, base, ctx, need.query_online, need.query_target, true);
  Branch m2 = embed(mixed2.images, base, ctx, need.key_online, need.key_target, true);

  Tensor l_ori = pair_loss(v1, v2, base, ctx, bank);
  Tensor l_m = pair_loss(m1, m2, base, ctx, bank);

  LossResult out;
  out.objective = add(l_ori, l_m);
  out.report.l_ori = l_ori.item();
  out.report.l_m_normal = l_m.item();
  out.report.lambda = mixed1.lambda;
  out.report.mode = mixed1.mode;
  out.report.total = out.report.l_ori + out.report.l_m_normal;
  collect_bank_keys(base, v2, out.bank_keys);
  collect_bank_keys(base, v1, out.bank_keys);
  return out;
}

}  // namespace unmix
