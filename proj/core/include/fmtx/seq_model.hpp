#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fmtx/checkpoint.hpp"
#include "fmtx/flow.hpp"
#include "fmtx/rng.hpp"
#include "fmtx/tape.hpp"
#include "fmtx/tensor.hpp"

namespace fmtx::model {

inline constexpr long kMaxLen = 512;

struct ModelConfig {
  long d = 64;
  long nheads = 4;
  long nlayers = 4;
  long ffn_mult = 4;
  double dropout = 0.1;
  double attn_dropout = 0.1;
  std::string isa_src = "TOY-A";
  std::string isa_tgt = "TOY-B";
  flow::Variant flow_variant = flow::Variant::Scf;
  long flow_depth = 3;
};

template <class T>
struct LayerParams {
  Tensor<T> ln1_g, ln1_b;
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;
  bool has_cross = false;
  Tensor<T> lnc_g, lnc_b;
  Tensor<T> cwq, cbq, cwk, cbk, cwv, cbv, cwo, cbo;
  Tensor<T> ln2_g, ln2_b;
  Tensor<T> w1, b1, w2, b2;
};

template <class T>
struct Stack {
  std::vector<LayerParams<T>> layers;
  Tensor<T> lnf_g, lnf_b;
  bool causal = false;
};

// Forward-pass context: training enables dropout, whose masks are drawn from
// the supplied stream so a step is reproducible from (seed, step).
template <class T>
struct RunCtx {
  bool train = false;
  Rng* rng = nullptr;
  double dropout = 0.0;
  double attn_dropout = 0.0;
};

template <class T>
struct ModelBundle {
  ModelConfig cfg;
  long vocab_size = 0;
  Tensor<T> tok_emb;   // [V,d] shared across both ISAs
  Tensor<T> pos_emb;   // [kMaxLen,d]
  Tensor<T> arch_emb;  // [2,d]
  Stack<T> enc_src, enc_tgt, dec_src, dec_tgt;
  Tensor<T> pool_w;            // [d,d]
  Tensor<T> gate_u, gate_b;    // [d,2d], [d]
  Tensor<T> out_w, out_b;      // [V,d], [V]
  flow::FlowStack<T> flow_src, flow_tgt;

  long isa_index(const std::string& isa) const {
    if (isa == cfg.isa_src) return 0;
    if (isa == cfg.isa_tgt) return 1;
    throw std::invalid_argument("unknown isa for this pair: " + isa);
  }
  bool is_src(const std::string& isa) const { return isa_index(isa) == 0; }
  const Stack<T>& encoder(const std::string& isa) const {
    return is_src(isa) ? enc_src : enc_tgt;
  }
  const Stack<T>& decoder(const std::string& isa) const {
    return is_src(isa) ? dec_src : dec_tgt;
  }
  const flow::FlowStack<T>& flow_of(const std::string& isa) const {
    return is_src(isa) ? flow_src : flow_tgt;
  }
};

namespace detail {

template <class T>
Tensor<T> linear_w(long out, long in, Rng& rng) {
  return Tensor<T>::randn({out, in}, rng, static_cast<T>(0.02), true);
}

template <class T>
LayerParams<T> make_layer(long d, long ffn, bool cross, Rng& rng) {
  LayerParams<T> l;
  l.ln1_g = Tensor<T>({d}, T(1), true);
  l.ln1_b = Tensor<T>({d}, T(0), true);
  l.wq = linear_w<T>(d, d, rng); l.bq = Tensor<T>({d}, T(0), true);
  l.wk = linear_w<T>(d, d, rng); l.bk = Tensor<T>({d}, T(0), true);
  l.wv = linear_w<T>(d, d, rng); l.bv = Tensor<T>({d}, T(0), true);
  l.wo = linear_w<T>(d, d, rng); l.bo = Tensor<T>({d}, T(0), true);
  l.has_cross = cross;
  if (cross) {
    l.lnc_g = Tensor<T>({d}, T(1), true);
    l.lnc_b = Tensor<T>({d}, T(0), true);
    l.cwq = linear_w<T>(d, d, rng); l.cbq = Tensor<T>({d}, T(0), true);
    l.cwk = linear_w<T>(d, d, rng); l.cbk = Tensor<T>({d}, T(0), true);
    l.cwv = linear_w<T>(d, d, rng); l.cbv = Tensor<T>({d}, T(0), true);
    l.cwo = linear_w<T>(d, d, rng); l.cbo = Tensor<T>({d}, T(0), true);
  }
  l.ln2_g = Tensor<T>({d}, T(1), true);
  l.ln2_b = Tensor<T>({d}, T(0), true);
  l.w1 = linear_w<T>(ffn, d, rng); l.b1 = Tensor<T>({ffn}, T(0), true);
  l.w2 = linear_w<T>(d, ffn, rng); l.b2 = Tensor<T>({d}, T(0), true);
  return l;
}

template <class T>
Stack<T> make_stack(long d, long ffn, long layers, bool causal, bool cross, Rng& rng) {
  Stack<T> s;
  s.causal = causal;
  for (long i = 0; i < layers; ++i) s.layers.push_back(make_layer<T>(d, ffn, cross, rng));
  s.lnf_g = Tensor<T>({d}, T(1), true);
  s.lnf_b = Tensor<T>({d}, T(0), true);
  return s;
}

// Inverted-dropout multiplier, drawn deterministically from the ctx stream.
template <class T>
Tensor<T> dropout_mask(Shape shape, double rate, Rng& rng) {
  Tensor<T> m(shape);
  T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  for (auto& v : m.values()) v = rng.uniform() < rate ? T(0) : keep_scale;
  return m;
}

template <class T>
Tensor<T> maybe_dropout(Tape<T>& tape, Tensor<T> x, const RunCtx<T>& ctx) {
  if (!ctx.train || ctx.dropout <= 0) return x;
  return tape.mul(x, dropout_mask<T>(x.shape(), ctx.dropout, *ctx.rng));
}

template <class T>
Tensor<T> attn_block(Tape<T>& tape, const LayerParams<T>& l, Tensor<T> q_in,
                     Tensor<T> kv_in, long nheads, const Tensor<T>* mask,
                     const RunCtx<T>& ctx, bool cross) {
  const Tensor<T>& wq = cross ? l.cwq : l.wq;
  const Tensor<T>& bq = cross ? l.cbq : l.bq;
  const Tensor<T>& wk = cross ? l.cwk : l.wk;
  const Tensor<T>& bk = cross ? l.cbk : l.bk;
  const Tensor<T>& wv = cross ? l.cwv : l.wv;
  const Tensor<T>& bv = cross ? l.cbv : l.bv;
  const Tensor<T>& wo = cross ? l.cwo : l.wo;
  const Tensor<T>& bo = cross ? l.cbo : l.bo;
  Tensor<T> q = tape.add(tape.matmul(q_in, wq, false, true), bq);
  Tensor<T> k = tape.add(tape.matmul(kv_in, wk, false, true), bk);
  Tensor<T> v = tape.add(tape.matmul(kv_in, wv, false, true), bv);
  std::optional<Tensor<T>> drop;
  if (ctx.train && ctx.attn_dropout > 0)
    drop = dropout_mask<T>({q_in.shape()[0], kv_in.shape()[0]}, ctx.attn_dropout,
                           *ctx.rng);
  Tensor<T> o = tape.attention(q, k, v, nheads, mask, drop ? &*drop : nullptr);
  return maybe_dropout(tape, tape.add(tape.matmul(o, wo, false, true), bo), ctx);
}

template <class T>
Tensor<T> causal_mask_for(long n) {
  Tensor<T> m({n, n});
  for (long i = 0; i < n; ++i)
    for (long j = i + 1; j < n; ++j) m.values()[i * n + j] = T(-1e9);
  return m;
}

}  // namespace detail

template <class T>
ModelBundle<T> make_bundle(const ModelConfig& cfg, long vocab_size, Rng& rng) {
  if (cfg.d % cfg.nheads != 0)
    throw std::invalid_argument("model: d must be divisible by nheads");
  ModelBundle<T> b;
  b.cfg = cfg;
  b.vocab_size = vocab_size;
  b.tok_emb = detail::linear_w<T>(vocab_size, cfg.d, rng);
  b.pos_emb = detail::linear_w<T>(kMaxLen, cfg.d, rng);
  b.arch_emb = detail::linear_w<T>(2, cfg.d, rng);
  long ffn = cfg.ffn_mult * cfg.d;
  b.enc_src = detail::make_stack<T>(cfg.d, ffn, cfg.nlayers, false, false, rng);
  b.enc_tgt = detail::make_stack<T>(cfg.d, ffn, cfg.nlayers, false, false, rng);
  b.dec_src = detail::make_stack<T>(cfg.d, ffn, cfg.nlayers, true, true, rng);
  b.dec_tgt = detail::make_stack<T>(cfg.d, ffn, cfg.nlayers, true, true, rng);
  b.pool_w = detail::linear_w<T>(cfg.d, cfg.d, rng);
  b.gate_u = detail::linear_w<T>(cfg.d, 2 * cfg.d, rng);
  b.gate_b = Tensor<T>({cfg.d}, T(0), true);
  b.out_w = detail::linear_w<T>(vocab_size, cfg.d, rng);
  b.out_b = Tensor<T>({vocab_size}, T(0), true);
  b.flow_src = flow::make_flow_stack<T>(cfg.d, cfg.flow_depth, cfg.flow_variant,
                                        "source-flow", rng);
  b.flow_tgt = flow::make_flow_stack<T>(cfg.d, cfg.flow_depth, cfg.flow_variant,
                                        "target-flow", rng);
  return b;
}

// input vector t = tok_emb[id_t] + pos_emb[t] + arch_emb[isa]
template <class T>
Tensor<T> embed_inputs(Tape<T>& tape, const std::vector<long>& ids,
                       const std::string& isa, const ModelBundle<T>& bundle,
                       const RunCtx<T>& ctx = {}) {
  if (ids.empty()) throw std::invalid_argument("embed_inputs: empty ids");
  if (static_cast<long>(ids.size()) > kMaxLen)
    throw std::invalid_argument("embed_inputs: length " + std::to_string(ids.size()) +
                                " exceeds " + std::to_string(kMaxLen));
  long n = static_cast<long>(ids.size());
  long arch = bundle.isa_index(isa);
  std::vector<long> positions(n);
  for (long i = 0; i < n; ++i) positions[i] = i;
  Tensor<T> x = tape.embedding_lookup(bundle.tok_emb, ids);
  x = tape.add(x, tape.embedding_lookup(bundle.pos_emb, positions));
  x = tape.add(x, tape.embedding_lookup(bundle.arch_emb, std::vector<long>(n, arch)));
  return detail::maybe_dropout(tape, x, ctx);
}

// Pre-norm transformer pass; memory enables cross-attention for decoders.
template <class T>
Tensor<T> run_stack(Tape<T>& tape, const Stack<T>& stack, Tensor<T> x,
                    const ModelBundle<T>& bundle, const Tensor<T>* memory,
                    const RunCtx<T>& ctx = {}) {
  long n = x.shape()[0];
  std::optional<Tensor<T>> causal;
  if (stack.causal) causal = detail::causal_mask_for<T>(n);
  for (const auto& l : stack.layers) {
    Tensor<T> h = tape.layer_norm(x, l.ln1_g, l.ln1_b);
    x = tape.add(x, detail::attn_block(tape, l, h, h, bundle.cfg.nheads,
                                       causal ? &*causal : nullptr, ctx, false));
    if (l.has_cross && memory) {
      Tensor<T> hc = tape.layer_norm(x, l.lnc_g, l.lnc_b);
      x = tape.add(x, detail::attn_block(tape, l, hc, *memory, bundle.cfg.nheads,
                                         static_cast<const Tensor<T>*>(nullptr),
                                         ctx, true));
    }
    Tensor<T> hf = tape.layer_norm(x, l.ln2_g, l.ln2_b);
    Tensor<T> ff = tape.add(tape.matmul(tape.relu(tape.add(
                                tape.matmul(hf, l.w1, false, true), l.b1)),
                            l.w2, false, true), l.b2);
    x = tape.add(x, detail::maybe_dropout(tape, ff, ctx));
  }
  return tape.layer_norm(x, stack.lnf_g, stack.lnf_b);
}

template <class T>
struct EncodeOut {
  Tensor<T> hidden;  // [S,d], for cross-attention
  Tensor<T> z;       // [1,d], pooled block representation
};

// z = W (max-pool(h) + mean-pool(h) + h_0)
template <class T>
EncodeOut<T> encode_block(Tape<T>& tape, const std::vector<long>& ids,
                          const std::string& isa, const ModelBundle<T>& bundle,
                          const RunCtx<T>& ctx = {}) {
  Tensor<T> x = embed_inputs(tape, ids, isa, bundle, ctx);
  Tensor<T> hs = run_stack(tape, bundle.encoder(isa), x, bundle,
                           static_cast<const Tensor<T>*>(nullptr), ctx);
  std::vector<uint8_t> valid(ids.size(), 1);
  Tensor<T> pooled = tape.add(tape.add(tape.masked_max_pool(hs, valid),
                                       tape.masked_mean_pool(hs, valid)),
                              tape.slice_rows(hs, 0, 1));
  EncodeOut<T> out;
  out.hidden = hs;
  out.z = tape.matmul(pooled, bundle.pool_w, false, true);
  return out;
}

// o_i = (1 - g_i) * s_i + g_i * z with g_i = sigmoid(U [s_i; z] + b),
// computed here in the equivalent form s + g * (z - s).
template <class T>
Tensor<T> gate_states(Tape<T>& tape, Tensor<T> states, Tensor<T> z,
                      const ModelBundle<T>& bundle) {
  long n = states.shape()[0];
  Tensor<T> zb = tape.row_broadcast(z, n);
  Tensor<T> g = tape.sigmoid(tape.add(
      tape.matmul(tape.concat(states, zb, 1), bundle.gate_u, false, true),
      bundle.gate_b));
  return tape.add(states, tape.mul(g, tape.sub(zb, states)));
}

// Teacher-forced decoder logits over prev_ids. z gates the decoder output
// (skipped when null, e.g. causal-LM pretraining); memory enables
// cross-attention over encoder states.
template <class T>
Tensor<T> decoder_logits(Tape<T>& tape, const std::vector<long>& prev_ids,
                         const std::string& isa, const ModelBundle<T>& bundle,
                         const Tensor<T>* z, const Tensor<T>* memory,
                         const RunCtx<T>& ctx = {}) {
  Tensor<T> x = embed_inputs(tape, prev_ids, isa, bundle, ctx);
  Tensor<T> s = run_stack(tape, bundle.decoder(isa), x, bundle, memory, ctx);
  Tensor<T> o = z ? gate_states(tape, s, *z, bundle) : s;
  return tape.add(tape.matmul(o, bundle.out_w, false, true), bundle.out_b);
}

// Next-token distribution after prev_ids (softmax of the last position).
template <class T>
Tensor<T> decode_step(Tape<T>& tape, const std::vector<long>& prev_ids,
                      const Tensor<T>& z, const Tensor<T>& hs,
                      const std::string& isa, const ModelBundle<T>& bundle) {
  Tensor<T> logits = decoder_logits(tape, prev_ids, isa, bundle, &z, &hs);
  long n = logits.shape()[0];
  return tape.softmax_rows(tape.slice_rows(logits, n - 1, n));
}

struct GenOptions {
  long beam_width = 1;  // 1 = greedy
  long max_len = kMaxLen;
  bool force_beam = false;  // run the beam path even at width 1
};

// Autoregressive generation: starts at [/s] (bos), stops at bos or max_len.
// The decoder is re-run over the full prefix each step.
template <class T>
std::vector<long> generate_block(const Tensor<T>& z, const Tensor<T>& hs,
                                 const std::string& isa, const ModelBundle<T>& bundle,
                                 long bos_id, GenOptions opts = {}) {
  Tape<T> tape(false);
  long max_len = std::min(opts.max_len, kMaxLen);
  if (opts.beam_width <= 1 && !opts.force_beam) {
    std::vector<long> ids{bos_id};
    while (static_cast<long>(ids.size()) < max_len) {
      Tensor<T> dist = decode_step(tape, ids, z, hs, isa, bundle);
      long best = 0;
      for (long j = 1; j < dist.size(); ++j)
        if (dist.values()[j] > dist.values()[best]) best = j;
      ids.push_back(best);
      if (best == bos_id) break;
    }
    return ids;
  }

  struct Beam {
    std::vector<long> ids;
    double logp = 0;
    bool done = false;
  };
  std::vector<Beam> beams{{{bos_id}, 0, false}};
  for (long step = 1; step < max_len; ++step) {
    std::vector<Beam> next;
    bool all_done = true;
    for (const auto& b : beams) {
      if (b.done) {
        next.push_back(b);
        continue;
      }
      all_done = false;
      Tensor<T> dist = decode_step(tape, b.ids, z, hs, isa, bundle);
      // top beam_width extensions of this beam
      std::vector<long> order(dist.size());
      for (long j = 0; j < dist.size(); ++j) order[j] = j;
      std::partial_sort(order.begin(), order.begin() + std::min<long>(opts.beam_width, dist.size()),
                        order.end(), [&](long a, long c) {
                          if (dist.values()[a] != dist.values()[c])
                            return dist.values()[a] > dist.values()[c];
                          return a < c;
                        });
      for (long k = 0; k < std::min<long>(opts.beam_width, dist.size()); ++k) {
        Beam nb = b;
        nb.ids.push_back(order[k]);
        nb.logp += std::log(std::max(static_cast<double>(dist.values()[order[k]]), 1e-300));
        nb.done = order[k] == bos_id;
        next.push_back(std::move(nb));
      }
    }
    std::stable_sort(next.begin(), next.end(),
                     [](const Beam& a, const Beam& b) { return a.logp > b.logp; });
    if (static_cast<long>(next.size()) > opts.beam_width) next.resize(opts.beam_width);
    beams = std::move(next);
    if (all_done) break;
  }
  return beams.front().ids;
}

// ---- parameter registry and checkpoints ----------------------------------

template <class T>
void collect_stack_params(Stack<T>& s, const std::string& prefix,
                          std::vector<std::pair<std::string, Tensor<T>>>& out) {
  for (size_t i = 0; i < s.layers.size(); ++i) {
    auto& l = s.layers[i];
    std::string base = prefix + "l" + std::to_string(i) + "/";
    out.emplace_back(base + "ln1_g", l.ln1_g);
    out.emplace_back(base + "ln1_b", l.ln1_b);
    out.emplace_back(base + "wq", l.wq); out.emplace_back(base + "bq", l.bq);
    out.emplace_back(base + "wk", l.wk); out.emplace_back(base + "bk", l.bk);
    out.emplace_back(base + "wv", l.wv); out.emplace_back(base + "bv", l.bv);
    out.emplace_back(base + "wo", l.wo); out.emplace_back(base + "bo", l.bo);
    if (l.has_cross) {
      out.emplace_back(base + "lnc_g", l.lnc_g);
      out.emplace_back(base + "lnc_b", l.lnc_b);
      out.emplace_back(base + "cwq", l.cwq); out.emplace_back(base + "cbq", l.cbq);
      out.emplace_back(base + "cwk", l.cwk); out.emplace_back(base + "cbk", l.cbk);
      out.emplace_back(base + "cwv", l.cwv); out.emplace_back(base + "cbv", l.cbv);
      out.emplace_back(base + "cwo", l.cwo); out.emplace_back(base + "cbo", l.cbo);
    }
    out.emplace_back(base + "ln2_g", l.ln2_g);
    out.emplace_back(base + "ln2_b", l.ln2_b);
    out.emplace_back(base + "w1", l.w1); out.emplace_back(base + "b1", l.b1);
    out.emplace_back(base + "w2", l.w2); out.emplace_back(base + "b2", l.b2);
  }
  out.emplace_back(prefix + "lnf_g", s.lnf_g);
  out.emplace_back(prefix + "lnf_b", s.lnf_b);
}

// Trainable parameters in deterministic order.
template <class T>
std::vector<std::pair<std::string, Tensor<T>>> named_params(ModelBundle<T>& b) {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  out.emplace_back("emb/token", b.tok_emb);
  out.emplace_back("emb/pos", b.pos_emb);
  out.emplace_back("emb/arch", b.arch_emb);
  collect_stack_params(b.enc_src, "enc/src/", out);
  collect_stack_params(b.enc_tgt, "enc/tgt/", out);
  collect_stack_params(b.dec_src, "dec/src/", out);
  collect_stack_params(b.dec_tgt, "dec/tgt/", out);
  out.emplace_back("pool/w", b.pool_w);
  out.emplace_back("gate/u", b.gate_u);
  out.emplace_back("gate/b", b.gate_b);
  out.emplace_back("out/w", b.out_w);
  out.emplace_back("out/b", b.out_b);
  flow::collect_flow_params(b.flow_src, "flow/src/", out);
  flow::collect_flow_params(b.flow_tgt, "flow/tgt/", out);
  return out;
}

// Fixed tensors that still belong in the checkpoint (masks, permutations).
template <class T>
std::vector<std::pair<std::string, Tensor<T>>> named_constants(ModelBundle<T>& b) {
  std::vector<std::pair<std::string, Tensor<T>>> all, consts;
  flow::collect_flow_params(b.flow_src, "flow/src/", all, false);
  flow::collect_flow_params(b.flow_tgt, "flow/tgt/", all, false);
  for (auto& [name, t] : all)
    if (!t.requires_grad()) consts.emplace_back(name, t);
  return consts;
}

template <class T>
ckpt::Blobs bundle_to_blobs(ModelBundle<T>& b) {
  ckpt::Blobs blobs;
  auto put = [&](const std::string& name, const Tensor<T>& t) {
    ckpt::TensorBlob blob;
    blob.shape = t.shape();
    blob.data.reserve(t.size());
    for (long i = 0; i < t.size(); ++i)
      blob.data.push_back(static_cast<float>(t.values()[i]));
    blobs.emplace(name, std::move(blob));
  };
  for (auto& [name, t] : named_params(b)) put(name, t);
  for (auto& [name, t] : named_constants(b)) put(name, t);
  blobs.emplace("meta/isa_src", ckpt::string_blob(b.cfg.isa_src));
  blobs.emplace("meta/isa_tgt", ckpt::string_blob(b.cfg.isa_tgt));
  blobs.emplace("meta/flow_variant",
                ckpt::string_blob(flow::variant_to_string(b.cfg.flow_variant)));
  ckpt::TensorBlob dims;
  dims.shape = {6};
  dims.data = {static_cast<float>(b.cfg.d), static_cast<float>(b.cfg.nheads),
               static_cast<float>(b.cfg.nlayers), static_cast<float>(b.cfg.ffn_mult),
               static_cast<float>(b.cfg.flow_depth), static_cast<float>(b.vocab_size)};
  blobs.emplace("meta/dims", dims);
  return blobs;
}

template <class T>
ModelBundle<T> bundle_from_blobs(const ckpt::Blobs& blobs) {
  auto need = [&](const std::string& name) -> const ckpt::TensorBlob& {
    auto it = blobs.find(name);
    if (it == blobs.end()) throw std::runtime_error("checkpoint missing " + name);
    return it->second;
  };
  const auto& dims = need("meta/dims").data;
  ModelConfig cfg;
  cfg.d = static_cast<long>(dims[0]);
  cfg.nheads = static_cast<long>(dims[1]);
  cfg.nlayers = static_cast<long>(dims[2]);
  cfg.ffn_mult = static_cast<long>(dims[3]);
  cfg.flow_depth = static_cast<long>(dims[4]);
  cfg.isa_src = ckpt::blob_string(need("meta/isa_src"));
  cfg.isa_tgt = ckpt::blob_string(need("meta/isa_tgt"));
  cfg.flow_variant = flow::variant_from_string(ckpt::blob_string(need("meta/flow_variant")));
  long vocab = static_cast<long>(dims[5]);
  Rng rng(0, "bundle-load");
  ModelBundle<T> b = make_bundle<T>(cfg, vocab, rng);
  auto fill = [&](const std::string& name, Tensor<T>& t) {
    const auto& blob = need(name);
    if (blob.shape != t.shape())
      throw std::runtime_error("checkpoint tensor " + name + " has shape " +
                               shape_str(blob.shape) + ", expected " + shape_str(t.shape()));
    for (long i = 0; i < t.size(); ++i) t.values()[i] = static_cast<T>(blob.data[i]);
  };
  for (auto& [name, t] : named_params(b)) fill(name, t);
  for (auto& [name, t] : named_constants(b)) fill(name, t);
  return b;
}

// Independent copy with fresh parameter storage (used by data-parallel
// training replicas; gradients accumulate per copy and merge by name order).
template <class T>
ModelBundle<T> deep_copy_bundle(ModelBundle<T>& b) {
  Rng rng(0, "bundle-copy");
  ModelBundle<T> out = make_bundle<T>(b.cfg, b.vocab_size, rng);
  auto src_params = named_params(b);
  auto dst_params = named_params(out);
  for (size_t i = 0; i < src_params.size(); ++i)
    dst_params[i].second.values() = src_params[i].second.values();
  auto src_consts = named_constants(b);
  auto dst_consts = named_constants(out);
  for (size_t i = 0; i < src_consts.size(); ++i)
    dst_consts[i].second.values() = src_consts[i].second.values();
  return out;
}

template <class T>
void save_bundle(const std::string& path, ModelBundle<T>& b) {
  ckpt::save(path, bundle_to_blobs(b));
}

template <class T>
ModelBundle<T> load_bundle(const std::string& path) {
  return bundle_from_blobs<T>(ckpt::load(path));
}

}  // namespace fmtx::model
