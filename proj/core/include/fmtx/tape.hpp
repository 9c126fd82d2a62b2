#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "fmtx/tensor.hpp"

#ifdef FMTX_HAVE_EIGEN
#include <Eigen/Dense>
#endif

namespace fmtx {

template <class T>
using GradMap = std::unordered_map<const void*, Tensor<T>>;

// Reverse-mode autodiff over a per-step tape. Primitives record a backward
// closure when any input requires grad; backward() replays the closures in
// reverse execution order, which is a valid topological order because nodes
// are appended as they execute. Tapes are cheap and meant to be discarded
// after each step.
template <class T>
class Tape {
 public:
  explicit Tape(bool recording = true) : recording_(recording) {}

  // Every primitive asserts its output is finite; NaN/Inf surfaces as an
  // exception rather than propagating silently.
  static inline bool finite_checks = true;

  size_t node_count() const { return nodes_.size(); }
  bool recording() const { return recording_; }
  void clear() {
    nodes_.clear();
    produced_.clear();
    leaves_.clear();
  }

  // ---- elementwise with limited broadcasting --------------------------
  // Allowed forms: same shape; b scalar; b covering the trailing dimension
  // of a 2-D a (bias-style row broadcast).

  Tensor<T> add(Tensor<T> a, Tensor<T> b) { return ew(a, b, Ew::Add); }
  Tensor<T> sub(Tensor<T> a, Tensor<T> b) { return ew(a, b, Ew::Sub); }
  Tensor<T> mul(Tensor<T> a, Tensor<T> b) { return ew(a, b, Ew::Mul); }

  Tensor<T> scale(Tensor<T> a, T c) {
    Tensor<T> out(a.shape());
    const auto& x = a.values();
    auto& y = out.values();
    for (size_t i = 0; i < x.size(); ++i) y[i] = x[i] * c;
    finish("scale", out, {a});
    if (out.requires_grad())
      push([a, out, c]() mutable {
        const auto& g = out.grad();
        auto& ga = a.grad();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
      });
    return out;
  }

  Tensor<T> add_const(Tensor<T> a, T c) {
    Tensor<T> out(a.shape());
    for (long i = 0; i < a.size(); ++i) out.values()[i] = a.values()[i] + c;
    finish("add_const", out, {a});
    if (out.requires_grad())
      push([a, out]() mutable {
        const auto& g = out.grad();
        auto& ga = a.grad();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      });
    return out;
  }

  // ---- matmul ---------------------------------------------------------

  Tensor<T> matmul(Tensor<T> a, Tensor<T> b, bool trans_a = false,
                   bool trans_b = false) {
    if (a.shape().size() != 2 || b.shape().size() != 2)
      shape_error("matmul", a.shape(), b.shape());
    long m = trans_a ? a.shape()[1] : a.shape()[0];
    long ka = trans_a ? a.shape()[0] : a.shape()[1];
    long kb = trans_b ? b.shape()[1] : b.shape()[0];
    long n = trans_b ? b.shape()[0] : b.shape()[1];
    if (ka != kb) shape_error("matmul", a.shape(), b.shape());
    Tensor<T> out({m, n});
    gemm(a.ptr(), b.ptr(), out.ptr(), m, ka, n, a.shape()[1], b.shape()[1],
         trans_a, trans_b, false);
    finish("matmul", out, {a, b});
    if (out.requires_grad()) {
      push([a, b, out, trans_a, trans_b]() mutable {
        // dA and dB for each transpose configuration.
        const long m = out.shape()[0], n = out.shape()[1];
        long k = trans_a ? a.shape()[0] : a.shape()[1];
        const T* g = out.grad().data();
        if (a.requires_grad()) {
          if (!trans_a)
            gemm(g, b.ptr(), a.grad().data(), m, n, k, n, b.shape()[1],
                 false, !trans_b, true);
          else
            gemm(b.ptr(), g, a.grad().data(), k, n, m, b.shape()[1], n,
                 trans_b, true, true);
        }
        if (b.requires_grad()) {
          if (!trans_b)
            gemm(a.ptr(), g, b.grad().data(), k, m, n, a.shape()[1], n,
                 !trans_a, false, true);
          else
            gemm(g, a.ptr(), b.grad().data(), n, m, k, n, a.shape()[1],
                 true, trans_a, true);
        }
      });
    }
    return out;
  }

  // ---- shape ops --------------------------------------------------------

  Tensor<T> concat(Tensor<T> a, Tensor<T> b, int axis) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || axis < 0 || axis > 1)
      shape_error("concat", a.shape(), b.shape());
    long ar = a.shape()[0], ac = a.shape()[1];
    long br = b.shape()[0], bc = b.shape()[1];
    if (axis == 0 ? ac != bc : ar != br) shape_error("concat", a.shape(), b.shape());
    Tensor<T> out(axis == 0 ? Shape{ar + br, ac} : Shape{ar, ac + bc});
    if (axis == 0) {
      std::copy(a.values().begin(), a.values().end(), out.values().begin());
      std::copy(b.values().begin(), b.values().end(), out.values().begin() + a.size());
    } else {
      for (long r = 0; r < ar; ++r) {
        std::copy(a.ptr() + r * ac, a.ptr() + (r + 1) * ac, out.ptr() + r * (ac + bc));
        std::copy(b.ptr() + r * bc, b.ptr() + (r + 1) * bc, out.ptr() + r * (ac + bc) + ac);
      }
    }
    finish("concat", out, {a, b});
    if (out.requires_grad())
      push([a, b, out, axis]() mutable {
        const auto& g = out.grad();
        long ar = a.shape()[0], ac = a.shape()[1], bc = b.shape()[1];
        if (axis == 0) {
          if (a.requires_grad()) {
            auto& ga = a.grad();
            for (long i = 0; i < a.size(); ++i) ga[i] += g[i];
          }
          if (b.requires_grad()) {
            auto& gb = b.grad();
            for (long i = 0; i < b.size(); ++i) gb[i] += g[a.size() + i];
          }
        } else {
          for (long r = 0; r < ar; ++r) {
            if (a.requires_grad()) {
              auto& ga = a.grad();
              for (long c = 0; c < ac; ++c) ga[r * ac + c] += g[r * (ac + bc) + c];
            }
            if (b.requires_grad()) {
              auto& gb = b.grad();
              for (long c = 0; c < bc; ++c) gb[r * bc + c] += g[r * (ac + bc) + ac + c];
            }
          }
        }
      });
    return out;
  }

  std::vector<Tensor<T>> split(Tensor<T> x, int axis,
                               const std::vector<long>& sizes) {
    if (x.shape().size() != 2 || axis < 0 || axis > 1)
      throw std::invalid_argument("split: expects 2-D tensor");
    long total = 0;
    for (long s : sizes) total += s;
    if (total != x.shape()[axis]) shape_error("split", x.shape(), {total});
    std::vector<Tensor<T>> parts;
    long off = 0;
    for (long s : sizes) {
      parts.push_back(axis == 0 ? slice_rows(x, off, off + s)
                                : slice_cols(x, off, off + s));
      off += s;
    }
    return parts;
  }

  Tensor<T> slice_rows(Tensor<T> x, long r0, long r1) {
    if (x.shape().size() != 2 || r0 < 0 || r1 > x.shape()[0] || r0 >= r1)
      throw std::invalid_argument("slice_rows: bad range on " + shape_str(x.shape()));
    long c = x.shape()[1];
    Tensor<T> out({r1 - r0, c});
    std::copy(x.ptr() + r0 * c, x.ptr() + r1 * c, out.ptr());
    finish("slice_rows", out, {x});
    if (out.requires_grad())
      push([x, out, r0, c]() mutable {
        const auto& g = out.grad();
        auto& gx = x.grad();
        for (size_t i = 0; i < g.size(); ++i) gx[r0 * c + i] += g[i];
      });
    return out;
  }

  Tensor<T> slice_cols(Tensor<T> x, long c0, long c1) {
    if (x.shape().size() != 2 || c0 < 0 || c1 > x.shape()[1] || c0 >= c1)
      throw std::invalid_argument("slice_cols: bad range on " + shape_str(x.shape()));
    long n = x.shape()[0], c = x.shape()[1], w = c1 - c0;
    Tensor<T> out({n, w});
    for (long r = 0; r < n; ++r)
      std::copy(x.ptr() + r * c + c0, x.ptr() + r * c + c1, out.ptr() + r * w);
    finish("slice_cols", out, {x});
    if (out.requires_grad())
      push([x, out, c0, c, w]() mutable {
        const auto& g = out.grad();
        auto& gx = x.grad();
        long n = out.shape()[0];
        for (long r = 0; r < n; ++r)
          for (long j = 0; j < w; ++j) gx[r * c + c0 + j] += g[r * w + j];
      });
    return out;
  }

  Tensor<T> transpose(Tensor<T> x) {
    if (x.shape().size() != 2) throw std::invalid_argument("transpose: 2-D only");
    long n = x.shape()[0], c = x.shape()[1];
    Tensor<T> out({c, n});
    for (long r = 0; r < n; ++r)
      for (long j = 0; j < c; ++j) out.ptr()[j * n + r] = x.ptr()[r * c + j];
    finish("transpose", out, {x});
    if (out.requires_grad())
      push([x, out, n, c]() mutable {
        const auto& g = out.grad();
        auto& gx = x.grad();
        for (long r = 0; r < n; ++r)
          for (long j = 0; j < c; ++j) gx[r * c + j] += g[j * n + r];
      });
    return out;
  }

  // Repeat a [1,d] (or [d]) vector n times into [n,d].
  Tensor<T> row_broadcast(Tensor<T> v, long n) {
    long d = v.size();
    Tensor<T> out({n, d});
    for (long r = 0; r < n; ++r)
      std::copy(v.ptr(), v.ptr() + d, out.ptr() + r * d);
    finish("row_broadcast", out, {v});
    if (out.requires_grad())
      push([v, out, n, d]() mutable {
        const auto& g = out.grad();
        auto& gv = v.grad();
        for (long r = 0; r < n; ++r)
          for (long j = 0; j < d; ++j) gv[j] += g[r * d + j];
      });
    return out;
  }

  // ---- unary ----------------------------------------------------------

  Tensor<T> sigmoid(Tensor<T> x) {
    return unary("sigmoid", x,
                 [](T v) { return T(1) / (T(1) + std::exp(-v)); },
                 [](T /*v*/, T y) { return y * (T(1) - y); });
  }
  Tensor<T> tanh_(Tensor<T> x) {
    return unary("tanh", x, [](T v) { return std::tanh(v); },
                 [](T /*v*/, T y) { return T(1) - y * y; });
  }
  Tensor<T> exp_(Tensor<T> x) {
    return unary("exp", x, [](T v) { return std::exp(v); },
                 [](T /*v*/, T y) { return y; });
  }
  Tensor<T> log_(Tensor<T> x) {
    return unary("log", x, [](T v) { return std::log(v); },
                 [](T v, T /*y*/) { return T(1) / v; });
  }
  Tensor<T> relu(Tensor<T> x) {
    return unary("relu", x, [](T v) { return v > T(0) ? v : T(0); },
                 [](T v, T /*y*/) { return v > T(0) ? T(1) : T(0); });
  }

  // ---- reductions / rows ------------------------------------------------

  Tensor<T> sum_all(Tensor<T> x) {
    T s = 0;
    for (long i = 0; i < x.size(); ++i) s += x.values()[i];
    Tensor<T> out = Tensor<T>::scalar(s);
    finish("sum", out, {x});
    if (out.requires_grad())
      push([x, out]() mutable {
        T g = out.grad()[0];
        auto& gx = x.grad();
        for (auto& v : gx) v += g;
      });
    return out;
  }

  Tensor<T> row_sum(Tensor<T> x) {
    if (x.shape().size() != 2) throw std::invalid_argument("row_sum: 2-D only");
    long n = x.shape()[0], c = x.shape()[1];
    Tensor<T> out({n, 1});
    for (long r = 0; r < n; ++r) {
      T s = 0;
      for (long j = 0; j < c; ++j) s += x.ptr()[r * c + j];
      out.ptr()[r] = s;
    }
    finish("row_sum", out, {x});
    if (out.requires_grad())
      push([x, out, n, c]() mutable {
        const auto& g = out.grad();
        auto& gx = x.grad();
        for (long r = 0; r < n; ++r)
          for (long j = 0; j < c; ++j) gx[r * c + j] += g[r];
      });
    return out;
  }

  Tensor<T> softmax_rows(Tensor<T> x) {
    if (x.shape().size() != 2) throw std::invalid_argument("softmax: 2-D only");
    long n = x.shape()[0], c = x.shape()[1];
    Tensor<T> out(x.shape());
    for (long r = 0; r < n; ++r) {
      const T* row = x.ptr() + r * c;
      T* orow = out.ptr() + r * c;
      T mx = row[0];
      for (long j = 1; j < c; ++j) mx = std::max(mx, row[j]);
      T z = 0;
      for (long j = 0; j < c; ++j) {
        orow[j] = std::exp(row[j] - mx);
        z += orow[j];
      }
      for (long j = 0; j < c; ++j) orow[j] /= z;
    }
    finish("softmax", out, {x});
    if (out.requires_grad())
      push([x, out, n, c]() mutable {
        const auto& g = out.grad();
        const auto& p = out.values();
        auto& gx = x.grad();
        for (long r = 0; r < n; ++r) {
          T dot = 0;
          for (long j = 0; j < c; ++j) dot += g[r * c + j] * p[r * c + j];
          for (long j = 0; j < c; ++j)
            gx[r * c + j] += p[r * c + j] * (g[r * c + j] - dot);
        }
      });
    return out;
  }

  Tensor<T> layer_norm(Tensor<T> x, Tensor<T> gamma,
                       Tensor<T> beta, T eps = T(1e-5)) {
    if (x.shape().size() != 2) throw std::invalid_argument("layer_norm: 2-D only");
    long n = x.shape()[0], d = x.shape()[1];
    if (gamma.size() != d || beta.size() != d)
      shape_error("layer_norm", x.shape(), gamma.shape());
    Tensor<T> out(x.shape());
    auto xhat = std::make_shared<std::vector<T>>(x.size());
    auto ivar = std::make_shared<std::vector<T>>(n);
    for (long r = 0; r < n; ++r) {
      const T* row = x.ptr() + r * d;
      T mu = 0;
      for (long j = 0; j < d; ++j) mu += row[j];
      mu /= static_cast<T>(d);
      T var = 0;
      for (long j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
      var /= static_cast<T>(d);
      T iv = T(1) / std::sqrt(var + eps);
      (*ivar)[r] = iv;
      for (long j = 0; j < d; ++j) {
        T xh = (row[j] - mu) * iv;
        (*xhat)[r * d + j] = xh;
        out.ptr()[r * d + j] = gamma.ptr()[j] * xh + beta.ptr()[j];
      }
    }
    finish("layer_norm", out, {x, gamma, beta});
    if (out.requires_grad())
      push([x, gamma, beta, out, xhat, ivar, n, d]() mutable {
        const auto& g = out.grad();
        for (long r = 0; r < n; ++r) {
          T iv = (*ivar)[r];
          T sum_dxhat = 0, sum_dxhat_xhat = 0;
          for (long j = 0; j < d; ++j) {
            T dxh = g[r * d + j] * gamma.ptr()[j];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * (*xhat)[r * d + j];
          }
          if (x.requires_grad()) {
            auto& gx = x.grad();
            for (long j = 0; j < d; ++j) {
              T dxh = g[r * d + j] * gamma.ptr()[j];
              gx[r * d + j] += iv * (dxh - sum_dxhat / static_cast<T>(d) -
                                     (*xhat)[r * d + j] * sum_dxhat_xhat / static_cast<T>(d));
            }
          }
          if (gamma.requires_grad()) {
            auto& gg = gamma.grad();
            for (long j = 0; j < d; ++j) gg[j] += g[r * d + j] * (*xhat)[r * d + j];
          }
          if (beta.requires_grad()) {
            auto& gb = beta.grad();
            for (long j = 0; j < d; ++j) gb[j] += g[r * d + j];
          }
        }
      });
    return out;
  }

  // ---- lookup / loss ----------------------------------------------------

  Tensor<T> embedding_lookup(Tensor<T> table, const std::vector<long>& ids) {
    if (table.shape().size() != 2) throw std::invalid_argument("embedding: 2-D table");
    long v = table.shape()[0], d = table.shape()[1];
    for (long id : ids)
      if (id < 0 || id >= v)
        throw std::out_of_range("embedding: id " + std::to_string(id) +
                                " outside table " + shape_str(table.shape()));
    Tensor<T> out({static_cast<long>(ids.size()), d});
    for (size_t r = 0; r < ids.size(); ++r)
      std::copy(table.ptr() + ids[r] * d, table.ptr() + (ids[r] + 1) * d,
                out.ptr() + r * d);
    finish("embedding", out, {table});
    if (out.requires_grad())
      push([table, out, ids, d]() mutable {
        const auto& g = out.grad();
        auto& gt = table.grad();
        for (size_t r = 0; r < ids.size(); ++r)
          for (long j = 0; j < d; ++j) gt[ids[r] * d + j] += g[r * d + j];
      });
    return out;
  }

  // Mean token cross-entropy over rows with per-row weights (0 drops a row).
  Tensor<T> cross_entropy(Tensor<T> logits, const std::vector<long>& targets,
                          const std::vector<T>& weights = {}) {
    if (logits.shape().size() != 2) throw std::invalid_argument("cross_entropy: 2-D logits");
    long n = logits.shape()[0], v = logits.shape()[1];
    if (static_cast<long>(targets.size()) != n)
      throw std::invalid_argument("cross_entropy: " + std::to_string(targets.size()) +
                                  " targets for " + shape_str(logits.shape()));
    std::vector<T> w = weights.empty() ? std::vector<T>(n, T(1)) : weights;
    T wsum = 0;
    for (T x : w) wsum += x;
    if (wsum <= T(0)) throw std::invalid_argument("cross_entropy: no weighted rows");
    auto probs = std::make_shared<std::vector<T>>(logits.size());
    T loss = 0;
    for (long r = 0; r < n; ++r) {
      const T* row = logits.ptr() + r * v;
      T mx = row[0];
      for (long j = 1; j < v; ++j) mx = std::max(mx, row[j]);
      T z = 0;
      for (long j = 0; j < v; ++j) z += std::exp(row[j] - mx);
      T logz = std::log(z) + mx;
      for (long j = 0; j < v; ++j) (*probs)[r * v + j] = std::exp(row[j] - logz);
      long t = targets[r];
      if (t < 0 || t >= v) throw std::out_of_range("cross_entropy: bad target");
      loss += w[r] * (logz - row[t]);
    }
    Tensor<T> out = Tensor<T>::scalar(loss / wsum);
    finish("cross_entropy", out, {logits});
    if (out.requires_grad())
      push([logits, out, targets, probs, w, wsum, n, v]() mutable {
        T g = out.grad()[0];
        auto& gl = logits.grad();
        for (long r = 0; r < n; ++r) {
          if (w[r] == T(0)) continue;
          T scale = g * w[r] / wsum;
          for (long j = 0; j < v; ++j) gl[r * v + j] += scale * (*probs)[r * v + j];
          gl[r * v + targets[r]] -= scale;
        }
      });
    return out;
  }

  // ---- pooling over rows (token axis) ------------------------------------

  Tensor<T> masked_max_pool(Tensor<T> x, const std::vector<uint8_t>& valid) {
    check_pool(x, valid);
    long n = x.shape()[0], d = x.shape()[1];
    Tensor<T> out({1, d});
    auto amax = std::make_shared<std::vector<long>>(d, -1);
    for (long j = 0; j < d; ++j) {
      T best = 0;
      long bi = -1;
      for (long r = 0; r < n; ++r) {
        if (!valid[r]) continue;
        T val = x.ptr()[r * d + j];
        if (bi < 0 || val > best) {
          best = val;
          bi = r;
        }
      }
      (*amax)[j] = bi;
      out.ptr()[j] = best;
    }
    finish("max_pool", out, {x});
    if (out.requires_grad())
      push([x, out, amax, d]() mutable {
        const auto& g = out.grad();
        auto& gx = x.grad();
        for (long j = 0; j < d; ++j) gx[(*amax)[j] * d + j] += g[j];
      });
    return out;
  }

  Tensor<T> masked_mean_pool(Tensor<T> x, const std::vector<uint8_t>& valid) {
    check_pool(x, valid);
    long n = x.shape()[0], d = x.shape()[1];
    long cnt = 0;
    for (auto v : valid) cnt += v ? 1 : 0;
    Tensor<T> out({1, d});
    for (long j = 0; j < d; ++j) {
      T s = 0;
      for (long r = 0; r < n; ++r)
        if (valid[r]) s += x.ptr()[r * d + j];
      out.ptr()[j] = s / static_cast<T>(cnt);
    }
    finish("mean_pool", out, {x});
    if (out.requires_grad())
      push([x, out, valid, cnt, n, d]() mutable {
        const auto& g = out.grad();
        auto& gx = x.grad();
        for (long r = 0; r < n; ++r) {
          if (!valid[r]) continue;
          for (long j = 0; j < d; ++j) gx[r * d + j] += g[j] / static_cast<T>(cnt);
        }
      });
    return out;
  }

  // ---- fused multi-head attention ----------------------------------------
  // q,k,v: post-projection activations [nq,d] / [nk,d]. mask (optional) is an
  // additive [nq,nk] bias (large negative to block). attn_drop (optional) is a
  // precomputed inverted-dropout multiplier applied to the probabilities.
  // If probs_out is non-null the per-head attention rows are exported
  // (heads stacked: [nheads*nq, nk]).
  Tensor<T> attention(Tensor<T> q, Tensor<T> k, Tensor<T> v,
                      long nheads, const Tensor<T>* mask = nullptr,
                      const Tensor<T>* attn_drop = nullptr,
                      Tensor<T>* probs_out = nullptr) {
    if (q.shape().size() != 2 || k.shape().size() != 2 || v.shape().size() != 2)
      throw std::invalid_argument("attention: 2-D inputs");
    long nq = q.shape()[0], d = q.shape()[1], nk = k.shape()[0];
    if (k.shape()[1] != d || v.shape()[0] != nk || v.shape()[1] != d || d % nheads != 0)
      shape_error("attention", q.shape(), k.shape());
    if (mask && (mask->shape()[0] != nq || mask->shape()[1] != nk))
      shape_error("attention mask", mask->shape(), {nq, nk});
    long hd = d / nheads;
    T inv_sqrt = T(1) / std::sqrt(static_cast<T>(hd));
    auto probs = std::make_shared<std::vector<T>>(static_cast<size_t>(nheads * nq * nk));
    Tensor<T> out({nq, d});
    std::vector<T> row(nk);
    for (long h = 0; h < nheads; ++h) {
      long hoff = h * hd;
      for (long i = 0; i < nq; ++i) {
        const T* qi = q.ptr() + i * d + hoff;
        for (long j = 0; j < nk; ++j) {
          const T* kj = k.ptr() + j * d + hoff;
          T s = 0;
          for (long c = 0; c < hd; ++c) s += qi[c] * kj[c];
          row[j] = s * inv_sqrt + (mask ? mask->ptr()[i * nk + j] : T(0));
        }
        T mx = row[0];
        for (long j = 1; j < nk; ++j) mx = std::max(mx, row[j]);
        T z = 0;
        for (long j = 0; j < nk; ++j) {
          row[j] = std::exp(row[j] - mx);
          z += row[j];
        }
        T* prow = probs->data() + (h * nq + i) * nk;
        for (long j = 0; j < nk; ++j) {
          prow[j] = row[j] / z;
          if (attn_drop) prow[j] *= attn_drop->ptr()[i * nk + j];
        }
        T* oi = out.ptr() + i * d + hoff;
        for (long c = 0; c < hd; ++c) oi[c] = 0;
        for (long j = 0; j < nk; ++j) {
          const T* vj = v.ptr() + j * d + hoff;
          T p = prow[j];
          for (long c = 0; c < hd; ++c) oi[c] += p * vj[c];
        }
      }
    }
    if (probs_out)
      *probs_out = Tensor<T>({nheads * nq, nk}, std::vector<T>(*probs));
    finish("attention", out, {q, k, v});
    if (out.requires_grad()) {
      Tensor<T> dropc = attn_drop ? *attn_drop : Tensor<T>();
      push([q, k, v, out, probs, nheads, dropc, nq, nk, d, hd, inv_sqrt]() mutable {
        const auto& g = out.grad();
        std::vector<T> dp(nk), ds(nk);
        for (long h = 0; h < nheads; ++h) {
          long hoff = h * hd;
          for (long i = 0; i < nq; ++i) {
            const T* gi = g.data() + i * d + hoff;
            const T* prow = probs->data() + (h * nq + i) * nk;
            // dP = dO . V^T ; dropout multiplier folds into dP before the
            // softmax backward because probs were scaled after softmax.
            for (long j = 0; j < nk; ++j) {
              const T* vj = v.ptr() + j * d + hoff;
              T s = 0;
              for (long c = 0; c < hd; ++c) s += gi[c] * vj[c];
              dp[j] = s;
            }
            if (v.requires_grad()) {
              auto& gv = v.grad();
              for (long j = 0; j < nk; ++j) {
                T p = prow[j];
                T* gvj = gv.data() + j * d + hoff;
                for (long c = 0; c < hd; ++c) gvj[c] += p * gi[c];
              }
            }
            // Undo dropout scaling to recover softmax outputs, then the
            // usual softmax Jacobian.
            T dot = 0;
            for (long j = 0; j < nk; ++j) {
              T drop = dropc.defined() ? dropc.ptr()[i * nk + j] : T(1);
              T psm = drop != T(0) ? prow[j] / drop : T(0);
              T dpj = dp[j] * drop;
              ds[j] = psm * dpj;
              dot += psm * dpj;
            }
            for (long j = 0; j < nk; ++j) {
              T drop = dropc.defined() ? dropc.ptr()[i * nk + j] : T(1);
              T psm = drop != T(0) ? prow[j] / drop : T(0);
              ds[j] -= psm * dot;
              ds[j] *= inv_sqrt;
            }
            if (q.requires_grad()) {
              auto& gq = q.grad();
              T* gqi = gq.data() + i * d + hoff;
              for (long j = 0; j < nk; ++j) {
                const T* kj = k.ptr() + j * d + hoff;
                for (long c = 0; c < hd; ++c) gqi[c] += ds[j] * kj[c];
              }
            }
            if (k.requires_grad()) {
              auto& gk = k.grad();
              const T* qi = q.ptr() + i * d + hoff;
              for (long j = 0; j < nk; ++j) {
                T* gkj = gk.data() + j * d + hoff;
                for (long c = 0; c < hd; ++c) gkj[c] += ds[j] * qi[c];
              }
            }
          }
        }
      });
    }
    return out;
  }

  // ---- small dense inverse (used by invertible linear flow layers) -------

  Tensor<T> mat_inverse(Tensor<T> x) {
    if (x.shape().size() != 2 || x.shape()[0] != x.shape()[1])
      throw std::invalid_argument("mat_inverse: square 2-D only");
    long d = x.shape()[0];
    Tensor<T> out({d, d});
    invert(x.ptr(), out.ptr(), d);
    finish("mat_inverse", out, {x});
    if (out.requires_grad()) {
      push([x, out, d]() mutable {
        // dX = -Y^T dY Y^T with Y = X^{-1}.
        const auto& g = out.grad();
        std::vector<T> tmp(d * d), dx(d * d);
        gemm(out.ptr(), g.data(), tmp.data(), d, d, d, d, d, true, false, false);
        gemm(tmp.data(), out.ptr(), dx.data(), d, d, d, d, d, false, true, false);
        auto& gx = x.grad();
        for (long i = 0; i < d * d; ++i) gx[i] -= dx[i];
      });
    }
    return out;
  }

  // ---- backward -----------------------------------------------------------

  GradMap<T> backward(Tensor<T> loss) {
    if (loss.size() != 1)
      throw std::invalid_argument("backward: loss must be scalar, got " +
                                  shape_str(loss.shape()));
    if (!loss.requires_grad())
      throw std::invalid_argument("backward: loss does not require grad");
    loss.grad()[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    GradMap<T> grads;
    for (auto& leaf : leaves_)
      if (leaf.has_grad()) grads.emplace(leaf.id(), leaf);
    clear();
    return grads;
  }

 private:
  enum class Ew { Add, Sub, Mul };

  // b broadcast modes: 0 = same shape, 1 = scalar, 2 = trailing dim of 2-D a.
  static int broadcast_mode(Tensor<T> a, Tensor<T> b) {
    if (a.shape() == b.shape()) return 0;
    if (b.size() == 1) return 1;
    if (a.shape().size() == 2 && b.size() == a.shape()[1]) return 2;
    return -1;
  }

  Tensor<T> ew(Tensor<T> a, Tensor<T> b, Ew op) {
    int mode = broadcast_mode(a, b);
    if (mode < 0) shape_error(op == Ew::Add ? "add" : op == Ew::Sub ? "sub" : "mul",
                              a.shape(), b.shape());
    long n = a.size(), c = mode == 2 ? a.shape()[1] : 0;
    Tensor<T> out(a.shape());
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    T* po = out.ptr();
    for (long i = 0; i < n; ++i) {
      T bv = mode == 0 ? pb[i] : mode == 1 ? pb[0] : pb[i % c];
      po[i] = op == Ew::Add ? pa[i] + bv : op == Ew::Sub ? pa[i] - bv : pa[i] * bv;
    }
    finish(op == Ew::Add ? "add" : op == Ew::Sub ? "sub" : "mul", out, {a, b});
    if (out.requires_grad())
      push([a, b, out, op, mode, n, c]() mutable {
        const auto& g = out.grad();
        const T* pa = a.ptr();
        const T* pb = b.ptr();
        if (a.requires_grad()) {
          auto& ga = a.grad();
          for (long i = 0; i < n; ++i) {
            T bv = mode == 0 ? pb[i] : mode == 1 ? pb[0] : pb[i % c];
            ga[i] += op == Ew::Mul ? g[i] * bv : g[i];
          }
        }
        if (b.requires_grad()) {
          auto& gb = b.grad();
          for (long i = 0; i < n; ++i) {
            T gv = op == Ew::Sub ? -g[i] : op == Ew::Mul ? g[i] * pa[i] : g[i];
            long bi = mode == 0 ? i : mode == 1 ? 0 : i % c;
            gb[bi] += gv;
          }
        }
      });
    return out;
  }

  template <class F, class G>
  Tensor<T> unary(const char* name, Tensor<T> x, F fwd, G bwd) {
    Tensor<T> out(x.shape());
    for (long i = 0; i < x.size(); ++i) out.values()[i] = fwd(x.values()[i]);
    finish(name, out, {x});
    if (out.requires_grad())
      push([x, out, bwd]() mutable {
        const auto& g = out.grad();
        auto& gx = x.grad();
        for (size_t i = 0; i < g.size(); ++i)
          gx[i] += g[i] * bwd(x.values()[i], out.values()[i]);
      });
    return out;
  }

  static void check_pool(const Tensor<T>& x, const std::vector<uint8_t>& valid) {
    if (x.shape().size() != 2) throw std::invalid_argument("pool: 2-D only");
    if (static_cast<long>(valid.size()) != x.shape()[0])
      throw std::invalid_argument("pool: mask length " + std::to_string(valid.size()) +
                                  " for " + shape_str(x.shape()));
    if (std::none_of(valid.begin(), valid.end(), [](uint8_t v) { return v != 0; }))
      throw std::invalid_argument("pool: empty mask");
  }

  void finish(const char* name, Tensor<T>& out,
              std::initializer_list<Tensor<T>> inputs) {
    if (finite_checks && !out.all_finite())
      throw std::runtime_error(std::string(name) + ": non-finite output");
    bool rg = false;
    for (const auto& in : inputs) {
      if (!in.requires_grad()) continue;
      rg = true;
      if (recording_ && !produced_.count(in.id()) && !leaf_set_.count(in.id())) {
        leaf_set_.insert(in.id());
        leaves_.push_back(in);
      }
    }
    if (recording_ && rg) {
      out.set_requires_grad(true);
      out.grad();  // pre-allocate so closures can accumulate
      produced_.insert(out.id());
    }
  }

  void push(std::function<void()> fn) {
    if (recording_) nodes_.push_back(std::move(fn));
  }

 public:
  // Plain GEMM helper shared by forward and backward passes.
  // Computes C (+)= op(A)*op(B) where A is lda-strided with m*k logical
  // shape after transposition, etc.
  static void gemm(const T* a, const T* b, T* c, long m, long k, long n, long lda,
                   long ldb, bool ta, bool tb, bool accumulate) {
#ifdef FMTX_HAVE_EIGEN
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using CMap = Eigen::Map<const Mat, 0, Eigen::OuterStride<>>;
    Eigen::Map<Mat> C(c, m, n);
    CMap A(a, ta ? k : m, ta ? m : k, Eigen::OuterStride<>(lda));
    CMap B(b, tb ? n : k, tb ? k : n, Eigen::OuterStride<>(ldb));
    if (!ta && !tb) {
      if (accumulate) C.noalias() += A * B; else C.noalias() = A * B;
    } else if (ta && !tb) {
      if (accumulate) C.noalias() += A.transpose() * B; else C.noalias() = A.transpose() * B;
    } else if (!ta && tb) {
      if (accumulate) C.noalias() += A * B.transpose(); else C.noalias() = A * B.transpose();
    } else {
      if (accumulate) C.noalias() += A.transpose() * B.transpose(); else C.noalias() = A.transpose() * B.transpose();
    }
#else
    for (long i = 0; i < m; ++i)
      for (long j = 0; j < n; ++j) {
        T s = accumulate ? c[i * n + j] : T(0);
        for (long t = 0; t < k; ++t) {
          T av = ta ? a[t * lda + i] : a[i * lda + t];
          T bv = tb ? b[j * ldb + t] : b[t * ldb + j];
          s += av * bv;
        }
        c[i * n + j] = s;
      }
#endif
  }

 private:
  static void invert(const T* in, T* out, long d) {
#ifdef FMTX_HAVE_EIGEN
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const Mat> A(in, d, d);
    Eigen::Map<Mat> Y(out, d, d);
    Y = A.fullPivLu().inverse();
#else
    // Gauss-Jordan with partial pivoting.
    std::vector<T> a(in, in + d * d);
    std::vector<T> y(d * d, T(0));
    for (long i = 0; i < d; ++i) y[i * d + i] = T(1);
    for (long col = 0; col < d; ++col) {
      long piv = col;
      for (long r = col + 1; r < d; ++r)
        if (std::abs(a[r * d + col]) > std::abs(a[piv * d + col])) piv = r;
      for (long j = 0; j < d; ++j) {
        std::swap(a[col * d + j], a[piv * d + j]);
        std::swap(y[col * d + j], y[piv * d + j]);
      }
      T p = a[col * d + col];
      for (long j = 0; j < d; ++j) {
        a[col * d + j] /= p;
        y[col * d + j] /= p;
      }
      for (long r = 0; r < d; ++r) {
        if (r == col) continue;
        T f = a[r * d + col];
        for (long j = 0; j < d; ++j) {
          a[r * d + j] -= f * a[col * d + j];
          y[r * d + j] -= f * y[col * d + j];
        }
      }
    }
    std::copy(y.begin(), y.end(), out);
#endif
  }

  bool recording_;
  std::vector<std::function<void()>> nodes_;
  std::unordered_set<const void*> produced_;
  std::unordered_set<const void*> leaf_set_;
  std::vector<Tensor<T>> leaves_;
};

}  // namespace fmtx
