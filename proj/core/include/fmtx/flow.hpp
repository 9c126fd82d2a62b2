#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "fmtx/rng.hpp"
#include "fmtx/tape.hpp"
#include "fmtx/tensor.hpp"

namespace fmtx::flow {

enum class Variant { Scf, Glow, None };

inline Variant variant_from_string(const std::string& s) {
  if (s == "scf") return Variant::Scf;
  if (s == "glow") return Variant::Glow;
  if (s == "none") return Variant::None;
  throw std::invalid_argument("unknown flow variant: " + s);
}

inline std::string variant_to_string(Variant v) {
  switch (v) {
    case Variant::Scf: return "scf";
    case Variant::Glow: return "glow";
    default: return "none";
  }
}

// Affine coupling over alternating binary masks. The scale/translate nets
// are 2-layer perceptrons over the masked half; their last layers start at
// zero so a fresh layer is the identity map.
template <class T>
struct CouplingLayer {
  Tensor<T> mask;  // [d] of 0/1, constant
  Tensor<T> s_w1, s_b1, s_w2, s_b2;
  Tensor<T> t_w1, t_b1, t_w2, t_b2;
};

// Glow-style extras preceding each coupling: activation normalization and an
// LU-parameterized invertible linear map (adapted from the image form to
// flat vectors).
template <class T>
struct GlowExtras {
  Tensor<T> act_logs, act_bias;  // [d]
  Tensor<T> perm;                // [d,d] fixed permutation matrix
  Tensor<T> lu_lower;            // [d,d], strictly-lower part learned
  Tensor<T> lu_upper;            // [d,d], strictly-upper part learned
  Tensor<T> lu_logs;             // [d], log of the diagonal magnitudes
};

template <class T>
struct FlowStack {
  long dim = 0;
  Variant variant = Variant::Scf;
  std::string direction_tag;  // "source-flow" | "target-flow"
  std::vector<CouplingLayer<T>> couplings;
  std::vector<GlowExtras<T>> glow;  // parallel to couplings when Glow

  long depth() const { return static_cast<long>(couplings.size()); }
};

template <class T>
struct FlowOut {
  Tensor<T> eps;      // [n,d]
  Tensor<T> log_det;  // [n,1], log|det d(eps)/d(z)|
  std::vector<Tensor<T>> layer_log_dets;
};

inline constexpr double kScaleClamp = 4.0;  // scale = clamp * tanh(raw / clamp)

template <class T>
FlowStack<T> make_flow_stack(long d, long k, Variant variant,
                             const std::string& direction_tag, Rng& rng) {
  if (d < 2) throw std::invalid_argument("flow: dim must be >= 2");
  FlowStack<T> st;
  st.dim = d;
  st.variant = variant;
  st.direction_tag = direction_tag;
  if (variant == Variant::None) return st;
  T w1_std = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
  for (long i = 0; i < k; ++i) {
    CouplingLayer<T> c;
    c.mask = Tensor<T>({d});
    for (long j = 0; j < d; ++j) c.mask.values()[j] = static_cast<T>((j + i) % 2);
    c.s_w1 = Tensor<T>::randn({d, d}, rng, w1_std, true);
    c.s_b1 = Tensor<T>({d}, T(0), true);
    c.s_w2 = Tensor<T>({d, d}, T(0), true);
    c.s_b2 = Tensor<T>({d}, T(0), true);
    c.t_w1 = Tensor<T>::randn({d, d}, rng, w1_std, true);
    c.t_b1 = Tensor<T>({d}, T(0), true);
    c.t_w2 = Tensor<T>({d, d}, T(0), true);
    c.t_b2 = Tensor<T>({d}, T(0), true);
    st.couplings.push_back(std::move(c));
    if (variant == Variant::Glow) {
      GlowExtras<T> g;
      g.act_logs = Tensor<T>({d}, T(0), true);
      g.act_bias = Tensor<T>({d}, T(0), true);
      g.perm = Tensor<T>({d, d});
      std::vector<long> idx(d);
      for (long j = 0; j < d; ++j) idx[j] = j;
      for (long j = d - 1; j > 0; --j)
        std::swap(idx[j], idx[rng.uniform_int(static_cast<uint64_t>(j + 1))]);
      for (long j = 0; j < d; ++j) g.perm.values()[j * d + idx[j]] = T(1);
      g.lu_lower = Tensor<T>({d, d}, T(0), true);
      g.lu_upper = Tensor<T>({d, d}, T(0), true);
      g.lu_logs = Tensor<T>({d}, T(0), true);
      st.glow.push_back(std::move(g));
    }
  }
  return st;
}

template <class T>
void collect_flow_params(FlowStack<T>& st, const std::string& prefix,
                         std::vector<std::pair<std::string, Tensor<T>>>& out,
                         bool trainable_only = true) {
  for (long i = 0; i < st.depth(); ++i) {
    std::string base = prefix + std::to_string(i) + "/";
    auto& c = st.couplings[i];
    if (!trainable_only) out.emplace_back(base + "mask", c.mask);
    out.emplace_back(base + "s_w1", c.s_w1);
    out.emplace_back(base + "s_b1", c.s_b1);
    out.emplace_back(base + "s_w2", c.s_w2);
    out.emplace_back(base + "s_b2", c.s_b2);
    out.emplace_back(base + "t_w1", c.t_w1);
    out.emplace_back(base + "t_b1", c.t_b1);
    out.emplace_back(base + "t_w2", c.t_w2);
    out.emplace_back(base + "t_b2", c.t_b2);
    if (st.variant == Variant::Glow) {
      auto& g = st.glow[i];
      out.emplace_back(base + "act_logs", g.act_logs);
      out.emplace_back(base + "act_bias", g.act_bias);
      if (!trainable_only) out.emplace_back(base + "perm", g.perm);
      out.emplace_back(base + "lu_lower", g.lu_lower);
      out.emplace_back(base + "lu_upper", g.lu_upper);
      out.emplace_back(base + "lu_logs", g.lu_logs);
    }
  }
}

namespace detail {

// Clamped scale keeps exp() well-behaved: s = c * tanh(raw / c).
template <class T>
Tensor<T> clamp_scale(Tape<T>& tape, Tensor<T> raw) {
  T c = static_cast<T>(kScaleClamp);
  return tape.scale(tape.tanh_(tape.scale(raw, T(1) / c)), c);
}

template <class T>
Tensor<T> mlp2(Tape<T>& tape, Tensor<T> x, const Tensor<T>& w1, const Tensor<T>& b1,
               const Tensor<T>& w2, const Tensor<T>& b2) {
  Tensor<T> h = tape.relu(tape.add(tape.matmul(x, w1, false, true), b1));
  return tape.add(tape.matmul(h, w2, false, true), b2);
}

// Scale/translate conditioned on the masked half of x.
template <class T>
void coupling_nets(Tape<T>& tape, const CouplingLayer<T>& c, Tensor<T> x,
                   Tensor<T>& s, Tensor<T>& t) {
  Tensor<T> xm = tape.mul(x, c.mask);
  s = clamp_scale(tape, mlp2(tape, xm, c.s_w1, c.s_b1, c.s_w2, c.s_b2));
  t = mlp2(tape, xm, c.t_w1, c.t_b1, c.t_w2, c.t_b2);
}

template <class T>
Tensor<T> inv_mask(const CouplingLayer<T>& c) {
  Tensor<T> inv(c.mask.shape());
  for (long j = 0; j < c.mask.size(); ++j)
    inv.values()[j] = T(1) - c.mask.values()[j];
  return inv;
}

// y = mask*x + (1-mask)*(x*exp(s) + t); log-det contribution sum((1-mask)*s).
template <class T>
Tensor<T> coupling_forward(Tape<T>& tape, const CouplingLayer<T>& c, Tensor<T> x,
                           Tensor<T>& log_det_rows) {
  Tensor<T> s, t;
  coupling_nets(tape, c, x, s, t);
  Tensor<T> im = inv_mask(c);
  Tensor<T> moved = tape.mul(tape.add(tape.mul(x, tape.exp_(s)), t), im);
  Tensor<T> y = tape.add(tape.mul(x, c.mask), moved);
  log_det_rows = tape.row_sum(tape.mul(s, im));
  return y;
}

template <class T>
Tensor<T> coupling_inverse(Tape<T>& tape, const CouplingLayer<T>& c, Tensor<T> y) {
  Tensor<T> s, t;
  coupling_nets(tape, c, y, s, t);  // masked half is unchanged by forward
  Tensor<T> im = inv_mask(c);
  Tensor<T> restored = tape.mul(tape.mul(tape.sub(y, t), tape.exp_(tape.scale(s, T(-1)))), im);
  return tape.add(tape.mul(y, c.mask), restored);
}

// W = P * L * (strict_upper + diag(exp(logs))), assembled on-tape so MLE and
// back-translation gradients reach the LU parameters.
template <class T>
Tensor<T> assemble_linear(Tape<T>& tape, const GlowExtras<T>& g) {
  long d = g.perm.shape()[0];
  Tensor<T> eye({d, d});
  Tensor<T> slo({d, d});
  Tensor<T> sup({d, d});
  for (long i = 0; i < d; ++i) {
    eye.values()[i * d + i] = T(1);
    for (long j = 0; j < i; ++j) slo.values()[i * d + j] = T(1);
    for (long j = i + 1; j < d; ++j) sup.values()[i * d + j] = T(1);
  }
  Tensor<T> lower = tape.add(eye, tape.mul(g.lu_lower, slo));
  Tensor<T> diag = tape.mul(eye, tape.row_broadcast(tape.exp_(g.lu_logs), d));
  Tensor<T> upper = tape.add(tape.mul(g.lu_upper, sup), diag);
  return tape.matmul(g.perm, tape.matmul(lower, upper));
}

}  // namespace detail

// Maps data-space z to base-space eps; log_det is log|det d(eps)/d(z)| per row.
template <class T>
FlowOut<T> flow_forward(Tape<T>& tape, const FlowStack<T>& st, Tensor<T> z) {
  if (z.shape().size() != 2 || z.shape()[1] != st.dim)
    throw std::invalid_argument("flow_forward: expected [n," + std::to_string(st.dim) +
                                "], got " + shape_str(z.shape()));
  long n = z.shape()[0];
  FlowOut<T> out;
  Tensor<T> x = z;
  Tensor<T> total({n, 1});
  for (long i = 0; i < st.depth(); ++i) {
    if (st.variant == Variant::Glow) {
      const auto& g = st.glow[i];
      // actnorm
      x = tape.add(tape.mul(x, tape.exp_(g.act_logs)), g.act_bias);
      Tensor<T> act_ld = tape.row_broadcast(tape.sum_all(g.act_logs), n);
      // invertible linear
      Tensor<T> w = detail::assemble_linear(tape, g);
      x = tape.matmul(x, w, false, true);
      Tensor<T> lin_ld = tape.row_broadcast(tape.sum_all(g.lu_logs), n);
      out.layer_log_dets.push_back(act_ld);
      out.layer_log_dets.push_back(lin_ld);
      total = tape.add(tape.add(total, act_ld), lin_ld);
    }
    Tensor<T> ld;
    x = detail::coupling_forward(tape, st.couplings[i], x, ld);
    out.layer_log_dets.push_back(ld);
    total = tape.add(total, ld);
  }
  out.eps = x;
  out.log_det = total;
  return out;
}

template <class T>
Tensor<T> flow_inverse(Tape<T>& tape, const FlowStack<T>& st, Tensor<T> eps) {
  if (eps.shape().size() != 2 || eps.shape()[1] != st.dim)
    throw std::invalid_argument("flow_inverse: expected [n," + std::to_string(st.dim) +
                                "], got " + shape_str(eps.shape()));
  Tensor<T> x = eps;
  for (long i = st.depth() - 1; i >= 0; --i) {
    x = detail::coupling_inverse(tape, st.couplings[i], x);
    if (st.variant == Variant::Glow) {
      const auto& g = st.glow[i];
      Tensor<T> w = detail::assemble_linear(tape, g);
      Tensor<T> winv = tape.mat_inverse(w);
      x = tape.matmul(x, winv, false, true);
      x = tape.mul(tape.sub(x, g.act_bias),
                   tape.exp_(tape.scale(g.act_logs, T(-1))));
    }
  }
  return x;
}

// z_tgt = G^{-1}_{tgt}(G_{src}(z_src)): through the source flow into the base
// space, then through the inverse target flow.
template <class T>
Tensor<T> transform_latent(Tape<T>& tape, Tensor<T> z_src, const FlowStack<T>& src,
                           const FlowStack<T>& tgt) {
  if (src.dim != tgt.dim)
    throw std::invalid_argument("transform_latent: dim mismatch " +
                                std::to_string(src.dim) + " vs " + std::to_string(tgt.dim));
  return flow_inverse(tape, tgt, flow_forward(tape, src, z_src).eps);
}

// Negative mean log-likelihood of a latent batch under the flow density.
template <class T>
Tensor<T> nll_loss(Tape<T>& tape, const FlowStack<T>& st, Tensor<T> z_batch) {
  if (z_batch.shape().size() != 2 || z_batch.shape()[0] < 1)
    throw std::invalid_argument("nll_loss: nonempty [n,d] batch required");
  long n = z_batch.shape()[0];
  long d = st.dim;
  FlowOut<T> fo = flow_forward(tape, st, z_batch);
  Tensor<T> sq = tape.row_sum(tape.mul(fo.eps, fo.eps));  // [n,1]
  T log2pi = static_cast<T>(std::log(2.0 * 3.14159265358979323846));
  Tensor<T> logp = tape.add_const(tape.scale(sq, T(-0.5)),
                                  static_cast<T>(-0.5 * d) * log2pi);
  Tensor<T> total = tape.add(logp, fo.log_det);
  return tape.scale(tape.sum_all(total), T(-1) / static_cast<T>(n));
}

}  // namespace fmtx::flow
