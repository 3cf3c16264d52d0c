#include "unmix/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "unmix/error.hpp"

namespace unmix {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

using detail::make_result;
using detail::TensorImpl;

std::vector<float>* grad_of(const Tensor& t) {
  if (!t.requires_grad()) return nullptr;
  return &t.impl()->ensure_grad();
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
}

void require_rank(const char* op, const Tensor& t, int rank) {
  if (t.rank() != rank)
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got shape " +
                     to_string(t.shape()));
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<float> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  return make_result("add", a.shape(), std::move(out), {a, b}, [a, b](const TensorImpl& o) {
    for (const Tensor* t : {&a, &b})
      if (auto* g = grad_of(*t))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += o.grad[i];
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<float> out(a.data().begin(), a.data().end());
  auto bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  return make_result("sub", a.shape(), std::move(out), {a, b}, [a, b](const TensorImpl& o) {
    if (auto* g = grad_of(a))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += o.grad[i];
    if (auto* g = grad_of(b))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= o.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  auto ad = a.data();
  auto bd = b.data();
  std::vector<float> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [a, b](const TensorImpl& o) {
    auto ad = a.data();
    auto bd = b.data();
    if (auto* g = grad_of(a))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += o.grad[i] * bd[i];
    if (auto* g = grad_of(b))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += o.grad[i] * ad[i];
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape("div", a, b);
  auto ad = a.data();
  auto bd = b.data();
  std::vector<float> out(ad.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] / bd[i];
  return make_result("div", a.shape(), std::move(out), {a, b}, [a, b](const TensorImpl& o) {
    auto ad = a.data();
    auto bd = b.data();
    if (auto* g = grad_of(a))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += o.grad[i] / bd[i];
    if (auto* g = grad_of(b))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] -= o.grad[i] * ad[i] / (bd[i] * bd[i]);
  });
}

Tensor add(const Tensor& a, float b) {
  std::vector<float> out(a.data().begin(), a.data().end());
  for (auto& v : out) v += b;
  return make_result("add_scalar", a.shape(), std::move(out), {a}, [a](const TensorImpl& o) {
    if (auto* g = grad_of(a))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += o.grad[i];
  });
}

Tensor scale(const Tensor& a, float factor) {
  std::vector<float> out(a.data().begin(), a.data().end());
  if (factor != 1.0f)
    for (auto& v : out) v *= factor;
  return make_result("scale", a.shape(), std::move(out), {a}, [a, factor](const TensorImpl& o) {
    if (auto* g = grad_of(a))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += o.grad[i] * factor;
  });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul: inner dimensions disagree " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  std::vector<float> out(static_cast<std::size_t>(m * n));
  MutMap(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  return make_result("matmul", {m, n}, std::move(out), {a, b}, [a, b, m, k, n](const TensorImpl& o) {
    ConstMap g(o.grad.data(), m, n);
    if (auto* ga = grad_of(a))
      MutMap(ga->data(), m, k).noalias() += g * ConstMap(b.data().data(), k, n).transpose();
    if (auto* gb = grad_of(b))
      MutMap(gb->data(), k, n).noalias() += ConstMap(a.data().data(), m, k).transpose() * g;
  });
}

Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  const auto r = a.dim(0), c = a.dim(1);
  std::vector<float> out(static_cast<std::size_t>(r * c));
  MutMap(out.data(), c, r) = ConstMap(a.data().data(), r, c).transpose();
  return make_result("transpose", {c, r}, std::move(out), {a}, [a, r, c](const TensorImpl& o) {
    if (auto* g = grad_of(a)) MutMap(g->data(), r, c) += ConstMap(o.grad.data(), c, r).transpose();
  });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, int stride, int pad) {
  if (stride < 1 || pad < 0)
    throw ValueError("conv2d: invalid stride/pad (stride=" + std::to_string(stride) +
                     ", pad=" + std::to_string(pad) + ")");
  require_rank("conv2d", x, 4);
  require_rank("conv2d", weight, 4);
  const auto n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto f = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != c)
    throw ShapeError("conv2d: input channels " + to_string(x.shape()) + " do not match filters " +
                     to_string(weight.shape()));
  if (kh > h + 2 * pad || kw > w + 2 * pad)
    throw ShapeError("conv2d: kernel " + to_string(weight.shape()) + " larger than padded input " +
                     to_string(x.shape()));
  const auto ho = (h + 2 * pad - kh) / stride + 1;
  const auto wo = (w + 2 * pad - kw) / stride + 1;
  const auto patch = c * kh * kw;
  const auto cols_n = n * ho * wo;

  // im2col: rows are (channel, ky, kx), columns are (image, oy, ox).
  auto cols = std::make_shared<std::vector<float>>(static_cast<std::size_t>(patch * cols_n), 0.0f);
  auto xd = x.data();
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t ky = 0; ky < kh; ++ky)
      for (std::int64_t kx = 0; kx < kw; ++kx) {
        float* row = cols->data() + ((ch * kh + ky) * kw + kx) * cols_n;
        for (std::int64_t img = 0; img < n; ++img) {
          const float* plane = xd.data() + (img * c + ch) * h * w;
          float* dst = row + img * ho * wo;
          for (std::int64_t oy = 0; oy < ho; ++oy) {
            const auto iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) continue;
            for (std::int64_t ox = 0; ox < wo; ++ox) {
              const auto ix = ox * stride - pad + kx;
              if (ix >= 0 && ix < w) dst[oy * wo + ox] = plane[iy * w + ix];
            }
          }
        }
      }

  RowMat prod = ConstMap(weight.data().data(), f, patch) * ConstMap(cols->data(), patch, cols_n);
  std::vector<float> out(static_cast<std::size_t>(n * f * ho * wo));
  const auto plane_out = ho * wo;
  for (std::int64_t img = 0; img < n; ++img)
    for (std::int64_t ff = 0; ff < f; ++ff)
      std::copy_n(prod.data() + ff * cols_n + img * plane_out, plane_out,
                  out.data() + (img * f + ff) * plane_out);

  return make_result(
      "conv2d", {n, f, ho, wo}, std::move(out), {x, weight},
      [=](const TensorImpl& o) {
        RowMat g(f, cols_n);
        for (std::int64_t img = 0; img < n; ++img)
          for (std::int64_t ff = 0; ff < f; ++ff)
            std::copy_n(o.grad.data() + (img * f + ff) * plane_out, plane_out,
                        g.data() + ff * cols_n + img * plane_out);
        if (auto* gw = grad_of(weight))
          MutMap(gw->data(), f, patch).noalias() += g * ConstMap(cols->data(), patch, cols_n).transpose();
        if (auto* gx = grad_of(x)) {
          RowMat dcols = ConstMap(weight.data().data(), f, patch).transpose() * g;
          for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t ky = 0; ky < kh; ++ky)
              for (std::int64_t kx = 0; kx < kw; ++kx) {
                const float* row = dcols.data() + ((ch * kh + ky) * kw + kx) * cols_n;
                for (std::int64_t img = 0; img < n; ++img) {
                  float* plane = gx->data() + (img * c + ch) * h * w;
                  const float* src = row + img * plane_out;
                  for (std::int64_t oy = 0; oy < ho; ++oy) {
                    const auto iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= h) continue;
                    for (std::int64_t ox = 0; ox < wo; ++ox) {
                      const auto ix = ox * stride - pad + kx;
                      if (ix >= 0 && ix < w) plane[iy * w + ix] += src[oy * wo + ox];
                    }
                  }
                }
              }
        }
      });
}

Tensor relu(const Tensor& x) {
  std::vector<float> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = v > 0.0f ? v : 0.0f;
  return make_result("relu", x.shape(), std::move(out), {x}, [x](const TensorImpl& o) {
    if (auto* g = grad_of(x))
      for (std::size_t i = 0; i < g->size(); ++i)
        if (o.data[i] > 0.0f) (*g)[i] += o.grad[i];
  });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                  Tensor& running_var, bool train, float momentum, float eps) {
  if (x.rank() != 2 && x.rank() != 4)
    throw ShapeError("batch_norm: expected rank 2 or 4, got " + to_string(x.shape()));
  const auto n = x.dim(0), c = x.dim(1);
  const auto spatial = x.rank() == 4 ? x.dim(2) * x.dim(3) : std::int64_t{1};
  for (const Tensor* t : {&gamma, &beta, static_cast<const Tensor*>(&running_mean), static_cast<const Tensor*>(&running_var)})
    if (t->shape() != Shape{c})
      throw ShapeError("batch_norm: per-channel tensor " + to_string(t->shape()) +
                       " does not match input " + to_string(x.shape()));
  const auto count = n * spatial;
  if (train && count < 2) throw ShapeError("batch_norm: training mode needs more than one value per channel");

  auto xd = x.data();
  std::vector<float> mean_c(static_cast<std::size_t>(c)), inv_std(static_cast<std::size_t>(c));
  for (std::int64_t ch = 0; ch < c; ++ch) {
    if (train) {
      double s = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        const float* p = xd.data() + (i * c + ch) * spatial;
        for (std::int64_t j = 0; j < spatial; ++j) s += p[j];
      }
      const double mu = s / static_cast<double>(count);
      double ss = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        const float* p = xd.data() + (i * c + ch) * spatial;
        for (std::int64_t j = 0; j < spatial; ++j) ss += (p[j] - mu) * (p[j] - mu);
      }
      const double var = ss / static_cast<double>(count);
      mean_c[ch] = static_cast<float>(mu);
      inv_std[ch] = static_cast<float>(1.0 / std::sqrt(var + eps));
      auto rm = running_mean.mutable_data();
      auto rv = running_var.mutable_data();
      rm[ch] = momentum * rm[ch] + (1.0f - momentum) * static_cast<float>(mu);
      rv[ch] = momentum * rv[ch] +
               (1.0f - momentum) * static_cast<float>(ss / static_cast<double>(count - 1));
    } else {
      mean_c[ch] = running_mean.data()[ch];
      inv_std[ch] = 1.0f / std::sqrt(running_var.data()[ch] + eps);
    }
  }

  auto gd = gamma.data();
  auto bd = beta.data();
  std::vector<float> xhat(xd.size()), out(xd.size());
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const auto base = (i * c + ch) * spatial;
      for (std::int64_t j = 0; j < spatial; ++j) {
        const float h = (xd[base + j] - mean_c[ch]) * inv_std[ch];
        xhat[base + j] = h;
        out[base + j] = gd[ch] * h + bd[ch];
      }
    }

  return make_result(
      "batch_norm", x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std, n, c, spatial, count, train](const TensorImpl& o) {
        std::vector<double> sum_g(static_cast<std::size_t>(c), 0.0), sum_gx(static_cast<std::size_t>(c), 0.0);
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t ch = 0; ch < c; ++ch) {
            const auto base = (i * c + ch) * spatial;
            for (std::int64_t j = 0; j < spatial; ++j) {
              sum_g[ch] += o.grad[base + j];
              sum_gx[ch] += static_cast<double>(o.grad[base + j]) * xhat[base + j];
            }
          }
        if (auto* g = grad_of(gamma))
          for (std::int64_t ch = 0; ch < c; ++ch) (*g)[ch] += static_cast<float>(sum_gx[ch]);
        if (auto* g = grad_of(beta))
          for (std::int64_t ch = 0; ch < c; ++ch) (*g)[ch] += static_cast<float>(sum_g[ch]);
        if (auto* g = grad_of(x)) {
          auto gd = gamma.data();
          const double inv_count = 1.0 / static_cast<double>(count);
          for (std::int64_t i = 0; i < n; ++i)
            for (std::int64_t ch = 0; ch < c; ++ch) {
              const auto base = (i * c + ch) * spatial;
              const float k = gd[ch] * inv_std[ch];
              const float mg = train ? static_cast<float>(sum_g[ch] * inv_count) : 0.0f;
              const float mgx = train ? static_cast<float>(sum_gx[ch] * inv_count) : 0.0f;
              for (std::int64_t j = 0; j < spatial; ++j)
                (*g)[base + j] += k * (o.grad[base + j] - mg - xhat[base + j] * mgx);
            }
        }
      });
}

Tensor l2_normalize(const Tensor& x) {
  require_rank("l2_normalize", x, 2);
  const auto n = x.dim(0), d = x.dim(1);
  auto xd = x.data();
  std::vector<float> norms(static_cast<std::size_t>(n));
  std::vector<float> out(xd.size());
  for (std::int64_t i = 0; i < n; ++i) {
    double ss = 0.0;
    for (std::int64_t j = 0; j < d; ++j) ss += static_cast<double>(xd[i * d + j]) * xd[i * d + j];
    if (!(ss > 0.0)) throw NumericError("l2_normalize: row " + std::to_string(i) + " has zero or non-finite norm");
    const double norm = std::sqrt(ss);
    norms[i] = static_cast<float>(norm);
    for (std::int64_t j = 0; j < d; ++j) out[i * d + j] = static_cast<float>(xd[i * d + j] / norm);
  }
  return make_result("l2_normalize", x.shape(), std::move(out), {x}, [x, norms, n, d](const TensorImpl& o) {
    if (auto* g = grad_of(x))
      for (std::int64_t i = 0; i < n; ++i) {
        double dot = 0.0;
        for (std::int64_t j = 0; j < d; ++j) dot += static_cast<double>(o.grad[i * d + j]) * o.data[i * d + j];
        for (std::int64_t j = 0; j < d; ++j)
          (*g)[i * d + j] += static_cast<float>((o.grad[i * d + j] - o.data[i * d + j] * dot) / norms[i]);
      }
  });
}

Tensor log_softmax(const Tensor& x) {
  require_rank("log_softmax", x, 2);
  const auto n = x.dim(0), d = x.dim(1);
  auto xd = x.data();
  std::vector<float> out(xd.size());
  for (std::int64_t i = 0; i < n; ++i) {
    const float* row = xd.data() + i * d;
    const float mx = *std::max_element(row, row + d);
    double s = 0.0;
    for (std::int64_t j = 0; j < d; ++j) s += std::exp(static_cast<double>(row[j]) - mx);
    const double lse = mx + std::log(s);
    for (std::int64_t j = 0; j < d; ++j) out[i * d + j] = static_cast<float>(row[j] - lse);
  }
  return make_result("log_softmax", x.shape(), std::move(out), {x}, [x, n, d](const TensorImpl& o) {
    if (auto* g = grad_of(x))
      for (std::int64_t i = 0; i < n; ++i) {
        double gs = 0.0;
        for (std::int64_t j = 0; j < d; ++j) gs += o.grad[i * d + j];
        for (std::int64_t j = 0; j < d; ++j)
          (*g)[i * d + j] += static_cast<float>(o.grad[i * d + j] - std::exp(static_cast<double>(o.data[i * d + j])) * gs);
      }
  });
}

Tensor contrastive_cross_entropy(const Tensor& q, const Tensor& pos, const Tensor& keys,
                                 std::span<const double> targets, float tau) {
  if (!(tau > 0.0f)) throw ValueError("contrastive_cross_entropy: temperature must be > 0");
  require_rank("contrastive_cross_entropy", q, 2);
  if (!pos.defined() && !keys.defined()) throw ValueError("contrastive_cross_entropy: no logits");
  const auto n = q.dim(0), d = q.dim(1);
  if (pos.defined() && pos.shape() != q.shape())
    throw ShapeError("contrastive_cross_entropy: positives " + to_string(pos.shape()) + " vs queries " +
                     to_string(q.shape()));
  const auto m = keys.defined() ? keys.dim(0) : 0;
  if (keys.defined() && (keys.rank() != 2 || keys.dim(1) != d))
    throw ShapeError("contrastive_cross_entropy: keys " + to_string(keys.shape()) + " vs queries " +
                     to_string(q.shape()));
  const std::int64_t off = pos.defined() ? 1 : 0;
  const std::int64_t cols = off + m;
  if (static_cast<std::int64_t>(targets.size()) != n * cols)
    throw ShapeError("contrastive_cross_entropy: expected " + std::to_string(n * cols) + " targets, got " +
                     std::to_string(targets.size()));

  const auto qd = q.data();
  const auto pd = pos.defined() ? pos.data() : std::span<const float>{};
  const auto kd = keys.defined() ? keys.data() : std::span<const float>{};
  const double inv_tau = 1.0 / static_cast<double>(tau);
  auto dot = [d](const float* a, const float* b) {
    double s = 0.0;
    for (std::int64_t t = 0; t < d; ++t) s += static_cast<double>(a[t]) * static_cast<double>(b[t]);
    return s;
  };

  // Softmax probabilities are kept for backward.
  std::vector<double> prob(static_cast<std::size_t>(n * cols));
  double loss = 0.0;
  std::vector<double> logits(static_cast<std::size_t>(cols));
  for (std::int64_t i = 0; i < n; ++i) {
    const float* qi = qd.data() + i * d;
    if (off) logits[0] = dot(qi, pd.data() + i * d) * inv_tau;
    for (std::int64_t j = 0; j < m; ++j) logits[static_cast<std::size_t>(off + j)] = dot(qi, kd.data() + j * d) * inv_tau;
    const double mx = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (double l : logits) s += std::exp(l - mx);
    const double lse = mx + std::log(s);
    for (std::int64_t j = 0; j < cols; ++j) {
      const double t = targets[static_cast<std::size_t>(i * cols + j)];
      if (t != 0.0) loss -= t * (logits[static_cast<std::size_t>(j)] - lse);
      prob[static_cast<std::size_t>(i * cols + j)] = std::exp(logits[static_cast<std::size_t>(j)] - lse);
    }
  }
  loss /= static_cast<double>(n);

  std::vector<double> tgt(targets.begin(), targets.end());
  return make_result(
      "contrastive_cross_entropy", {1}, {static_cast<float>(loss)}, {q, pos, keys},
      [q, pos, keys, n, d, m, off, cols, inv_tau, prob = std::move(prob), tgt = std::move(tgt)](const TensorImpl& o) {
        const double g = static_cast<double>(o.grad[0]) / static_cast<double>(n);
        auto* gq = grad_of(q);
        auto* gp = pos.defined() ? grad_of(pos) : nullptr;
        auto* gk = keys.defined() ? grad_of(keys) : nullptr;
        const auto qd = q.data();
        const auto pd = pos.defined() ? pos.data() : std::span<const float>{};
        const auto kd = keys.defined() ? keys.data() : std::span<const float>{};
        std::vector<double> dq(static_cast<std::size_t>(d));
        std::vector<double> dk(gk ? static_cast<std::size_t>(m * d) : 0, 0.0);
        for (std::int64_t i = 0; i < n; ++i) {
          double row_t = 0.0;
          for (std::int64_t j = 0; j < cols; ++j) row_t += tgt[static_cast<std::size_t>(i * cols + j)];
          std::fill(dq.begin(), dq.end(), 0.0);
          const float* qi = qd.data() + i * d;
          for (std::int64_t j = 0; j < cols; ++j) {
            const auto idx = static_cast<std::size_t>(i * cols + j);
            const double dl = g * inv_tau * (prob[idx] * row_t - tgt[idx]);
            if (dl == 0.0) continue;
            const float* other = j < off ? pd.data() + i * d : kd.data() + (j - off) * d;
            for (std::int64_t t = 0; t < d; ++t) dq[static_cast<std::size_t>(t)] += dl * other[t];
            if (j < off) {
              if (gp)
                for (std::int64_t t = 0; t < d; ++t) (*gp)[static_cast<std::size_t>(i * d + t)] += static_cast<float>(dl * qi[t]);
            } else if (gk) {
              double* row = dk.data() + (j - off) * d;
              for (std::int64_t t = 0; t < d; ++t) row[t] += dl * qi[t];
            }
          }
          if (gq)
            for (std::int64_t t = 0; t < d; ++t) (*gq)[static_cast<std::size_t>(i * d + t)] += static_cast<float>(dq[static_cast<std::size_t>(t)]);
        }
        if (gk)
          for (std::size_t t = 0; t < dk.size(); ++t) (*gk)[t] += static_cast<float>(dk[t]);
      });
}

Tensor global_avg_pool(const Tensor& x) {
  require_rank("global_avg_pool", x, 4);
  const auto n = x.dim(0), c = x.dim(1), spatial = x.dim(2) * x.dim(3);
  auto xd = x.data();
  std::vector<float> out(static_cast<std::size_t>(n * c));
  for (std::int64_t i = 0; i < n * c; ++i) {
    double s = 0.0;
    for (std::int64_t j = 0; j < spatial; ++j) s += xd[i * spatial + j];
    out[i] = static_cast<float>(s / static_cast<double>(spatial));
  }
  return make_result("global_avg_pool", {n, c}, std::move(out), {x}, [x, n, c, spatial](const TensorImpl& o) {
    if (auto* g = grad_of(x)) {
      const float inv = 1.0f / static_cast<float>(spatial);
      for (std::int64_t i = 0; i < n * c; ++i)
        for (std::int64_t j = 0; j < spatial; ++j) (*g)[i * spatial + j] += o.grad[i] * inv;
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank("add_bias", x, 2);
  const auto n = x.dim(0), d = x.dim(1);
  if (bias.shape() != Shape{d})
    throw ShapeError("add_bias: bias " + to_string(bias.shape()) + " does not match " + to_string(x.shape()));
  std::vector<float> out(x.data().begin(), x.data().end());
  auto bd = bias.data();
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t j = 0; j < d; ++j) out[i * d + j] += bd[j];
  return make_result("add_bias", x.shape(), std::move(out), {x, bias}, [x, bias, n, d](const TensorImpl& o) {
    if (auto* g = grad_of(x))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += o.grad[i];
    if (auto* g = grad_of(bias))
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j) (*g)[j] += o.grad[i * d + j];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (numel(shape) != x.numel())
    throw ShapeError("reshape: " + to_string(x.shape()) + " cannot become " + to_string(shape));
  std::vector<float> out(x.data().begin(), x.data().end());
  return make_result("reshape", std::move(shape), std::move(out), {x}, [x](const TensorImpl& o) {
    if (auto* g = grad_of(x))
      for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += o.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (float v : x.data()) s += v;
  return make_result("sum", {1}, {static_cast<float>(s)}, {x}, [x](const TensorImpl& o) {
    if (auto* g = grad_of(x))
      for (auto& v : *g) v += o.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  double s = 0.0;
  for (float v : x.data()) s += v;
  const auto count = static_cast<double>(x.numel());
  return make_result("mean", {1}, {static_cast<float>(s / count)}, {x}, [x, count](const TensorImpl& o) {
    if (auto* g = grad_of(x)) {
      const float share = static_cast<float>(o.grad[0] / count);
      for (auto& v : *g) v += share;
    }
  });
}

Tensor rowwise_dot(const Tensor& a, const Tensor& b) {
  require_rank("rowwise_dot", a, 2);
  require_same_shape("rowwise_dot", a, b);
  const auto n = a.dim(0), d = a.dim(1);
  auto ad = a.data();
  auto bd = b.data();
  std::vector<float> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::int64_t j = 0; j < d; ++j) s += static_cast<double>(ad[i * d + j]) * bd[i * d + j];
    out[i] = static_cast<float>(s);
  }
  return make_result("rowwise_dot", {n}, std::move(out), {a, b}, [a, b, n, d](const TensorImpl& o) {
    auto ad = a.data();
    auto bd = b.data();
    if (auto* g = grad_of(a))
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j) (*g)[i * d + j] += o.grad[i] * bd[i * d + j];
    if (auto* g = grad_of(b))
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < d; ++j) (*g)[i * d + j] += o.grad[i] * ad[i * d + j];
  });
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  require_rank("concat_cols", a, 2);
  require_rank("concat_cols", b, 2);
  const auto n = a.dim(0), p = a.dim(1), q = b.dim(1);
  if (b.dim(0) != n)
    throw ShapeError("concat_cols: row counts differ " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  std::vector<float> out(static_cast<std::size_t>(n * (p + q)));
  auto ad = a.data();
  auto bd = b.data();
  for (std::int64_t i = 0; i < n; ++i) {
    std::copy_n(ad.data() + i * p, p, out.data() + i * (p + q));
    std::copy_n(bd.data() + i * q, q, out.data() + i * (p + q) + p);
  }
  return make_result("concat_cols", {n, p + q}, std::move(out), {a, b}, [a, b, n, p, q](const TensorImpl& o) {
    if (auto* g = grad_of(a))
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < p; ++j) (*g)[i * p + j] += o.grad[i * (p + q) + j];
    if (auto* g = grad_of(b))
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < q; ++j) (*g)[i * q + j] += o.grad[i * (p + q) + p + j];
  });
}

Tensor pick(const Tensor& x, std::span<const std::int64_t> index) {
  require_rank("pick", x, 2);
  const auto n = x.dim(0), d = x.dim(1);
  if (static_cast<std::int64_t>(index.size()) != n)
    throw ShapeError("pick: " + std::to_string(index.size()) + " indices for " + to_string(x.shape()));
  std::vector<std::int64_t> idx(index.begin(), index.end());
  std::vector<float> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    if (idx[i] < 0 || idx[i] >= d) throw ShapeError("pick: column index out of range");
    out[i] = x.data()[i * d + idx[i]];
  }
  return make_result("pick", {n}, std::move(out), {x}, [x, idx, d](const TensorImpl& o) {
    if (auto* g = grad_of(x))
      for (std::size_t i = 0; i < idx.size(); ++i) (*g)[i * d + idx[i]] += o.grad[i];
  });
}

Tensor reverse_rows(const Tensor& x) {
  const auto n = x.dim(0);
  const auto row = x.numel() / n;
  auto xd = x.data();
  std::vector<float> out(xd.size());
  for (std::int64_t i = 0; i < n; ++i) std::copy_n(xd.data() + (n - 1 - i) * row, row, out.data() + i * row);
  return make_result("reverse_rows", x.shape(), std::move(out), {x}, [x, n, row](const TensorImpl& o) {
    if (auto* g = grad_of(x))
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < row; ++j) (*g)[(n - 1 - i) * row + j] += o.grad[i * row + j];
  });
}

Tensor slice_rows(const Tensor& x, std::int64_t begin, std::int64_t end) {
  const auto n = x.dim(0);
  if (begin < 0 || end > n || begin >= end)
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for " + to_string(x.shape()));
  const auto row = x.numel() / n;
  Shape shape = x.shape();
  shape[0] = end - begin;
  std::vector<float> out(x.data().begin() + begin * row, x.data().begin() + end * row);
  return make_result("slice_rows", std::move(shape), std::move(out), {x}, [x, begin, row](const TensorImpl& o) {
    if (auto* g = grad_of(x))
      for (std::size_t i = 0; i < o.grad.size(); ++i) (*g)[begin * row + i] += o.grad[i];
  });
}

}  // namespace unmix
