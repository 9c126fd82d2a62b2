#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "fmtx/bpe.hpp"
#include "fmtx/checkpoint.hpp"
#include "fmtx/config.hpp"
#include "fmtx/optim.hpp"
#include "fmtx/seq_model.hpp"

namespace fmtx::train {

struct TrainingConfig {
  long batch_size = 256;
  long grad_accum = 8;
  long max_steps = 20000;
  long pretrain_steps = 5000;
  double loss_stop = 0.3;   // stop when the loss EMA drops below this
  double ema_decay = 0.99;
  double lambda_dae = 1.0, lambda_bt = 1.0, lambda_mle = 1.0;
  double swap_fraction = 0.1;  // DAE token-swap noise
  double mask_rate = 0.15;
  double mask_p_mask = 0.8, mask_p_rand = 0.1, mask_p_keep = 0.1;
  uint64_t seed = 1;
  long checkpoint_every = 1000;
  long bt_refresh_every = 1;   // synthetic pairs regenerate every N steps
  long bt_gen_slack = 16;      // generation cap: source length + slack
  bool dae_cross_encoder = false;
  double lr = 3e-4;
  long warmup = 200;
  double clip_norm = 5.0;
  double dropout = 0.1;
  double attn_dropout = 0.1;
  long threads = 1;  // data-parallel replicas (deterministic merge order)

  void validate() const {
    if (mask_rate < 0 || mask_rate > 1 || swap_fraction < 0 || swap_fraction > 1)
      throw std::invalid_argument("training config: rates must lie in [0,1]");
    double s = mask_p_mask + mask_p_rand + mask_p_keep;
    if (std::fabs(s - 1.0) > 1e-9)
      throw std::invalid_argument("training config: mask splits must sum to 1");
    if (lambda_dae < 0 || lambda_bt < 0 || lambda_mle < 0)
      throw std::invalid_argument("training config: objective weights must be >= 0");
    if (batch_size < 1 || grad_accum < 1)
      throw std::invalid_argument("training config: batch and accumulation >= 1");
  }
};

struct MaskedSample {
  std::vector<long> input;      // ids with replacements applied
  std::vector<long> labels;     // original ids, defined at mask positions
  std::vector<uint8_t> is_masked;
};

// 15%-style masking with the 80/10/10 replacement split over non-special
// positions. Labels are recorded exactly at the selected positions.
inline MaskedSample make_mlm_sample(const std::vector<long>& ids,
                                    const bpe::JointVocabulary& vocab, Rng& rng,
                                    double rate = 0.15, double p_mask = 0.8,
                                    double p_rand = 0.1) {
  if (ids.empty()) throw std::invalid_argument("make_mlm_sample: empty ids");
  MaskedSample out;
  out.input = ids;
  out.labels.assign(ids.size(), -1);
  out.is_masked.assign(ids.size(), 0);
  for (size_t i = 0; i < ids.size(); ++i) {
    if (vocab.is_special(ids[i])) continue;
    if (rng.uniform() >= rate) continue;
    out.is_masked[i] = 1;
    out.labels[i] = ids[i];
    double u = rng.uniform();
    if (u < p_mask)
      out.input[i] = vocab.mask_id;
    else if (u < p_mask + p_rand)
      out.input[i] = static_cast<long>(rng.uniform_int(vocab.size()));
    // else keep unchanged
  }
  return out;
}

// ceil(fraction*len) random adjacent transpositions; the token multiset is
// preserved by construction.
inline std::vector<long> add_noise(const std::vector<long>& ids, double fraction,
                                   Rng& rng) {
  std::vector<long> out = ids;
  if (out.size() < 2 || fraction <= 0) return out;
  long swaps = static_cast<long>(std::ceil(fraction * static_cast<double>(out.size())));
  for (long s = 0; s < swaps; ++s) {
    size_t i = rng.uniform_int(out.size() - 1);
    std::swap(out[i], out[i + 1]);
  }
  return out;
}

// ---- per-objective losses -------------------------------------------------

// Causal language modeling over a framed id sequence (length >= 2): the
// decoder in LM mode (no cross-attention, no gate) predicts each next token.
template <class T>
Tensor<T> clm_loss(Tape<T>& tape, const std::vector<long>& ids,
                   const std::string& isa, const model::ModelBundle<T>& bundle,
                   const model::RunCtx<T>& ctx = {}) {
  if (ids.size() < 2) throw std::invalid_argument("clm_loss: need >= 2 ids");
  std::vector<long> prev(ids.begin(), ids.end() - 1);
  std::vector<long> next(ids.begin() + 1, ids.end());
  Tensor<T> logits = model::decoder_logits(tape, prev, isa, bundle,
                                           static_cast<const Tensor<T>*>(nullptr),
                                           static_cast<const Tensor<T>*>(nullptr), ctx);
  return tape.cross_entropy(logits, next);
}

// Masked language modeling: encoder logits scored at masked positions only.
// Returns nothing when the sample has no masked position.
template <class T>
std::optional<Tensor<T>> mlm_loss(Tape<T>& tape, const MaskedSample& sample,
                                  const std::string& isa,
                                  const model::ModelBundle<T>& bundle,
                                  const model::RunCtx<T>& ctx = {}) {
  long n = static_cast<long>(sample.input.size());
  std::vector<T> weights(n, T(0));
  std::vector<long> targets(n, 0);
  bool any = false;
  for (long i = 0; i < n; ++i)
    if (sample.is_masked[i]) {
      weights[i] = T(1);
      targets[i] = sample.labels[i];
      any = true;
    }
  if (!any) return std::nullopt;
  Tensor<T> x = model::embed_inputs(tape, sample.input, isa, bundle, ctx);
  Tensor<T> hs = model::run_stack(tape, bundle.encoder(isa), x, bundle,
                                  static_cast<const Tensor<T>*>(nullptr), ctx);
  Tensor<T> logits = tape.add(tape.matmul(hs, bundle.out_w, false, true), bundle.out_b);
  return tape.cross_entropy(logits, targets, weights);
}

// Denoising auto-encoding: reconstruct the clean block from its token-swapped
// version. The default uses the block's own encoder; dae_cross_encoder routes
// the noised block through the opposite encoder instead (both sides share the
// joint vocabulary, so the input embeds either way).
template <class T>
Tensor<T> dae_step(Tape<T>& tape, const std::vector<long>& clean_ids,
                   const std::string& isa, const model::ModelBundle<T>& bundle,
                   const TrainingConfig& cfg, Rng& rng,
                   const model::RunCtx<T>& ctx = {}) {
  if (clean_ids.size() < 3) throw std::invalid_argument("dae_step: block too short");
  // Noise the interior, keep the frame tokens in place.
  std::vector<long> interior(clean_ids.begin() + 1, clean_ids.end() - 1);
  std::vector<long> noised = add_noise(interior, cfg.swap_fraction, rng);
  noised.insert(noised.begin(), clean_ids.front());
  noised.push_back(clean_ids.back());

  std::string enc_isa = isa;
  if (cfg.dae_cross_encoder)
    enc_isa = bundle.is_src(isa) ? bundle.cfg.isa_tgt : bundle.cfg.isa_src;
  Tensor<T> x = model::embed_inputs(tape, noised, enc_isa, bundle, ctx);
  Tensor<T> hs = model::run_stack(tape, bundle.encoder(enc_isa), x, bundle,
                                  static_cast<const Tensor<T>*>(nullptr), ctx);
  std::vector<uint8_t> valid(noised.size(), 1);
  Tensor<T> pooled = tape.add(tape.add(tape.masked_max_pool(hs, valid),
                                       tape.masked_mean_pool(hs, valid)),
                              tape.slice_rows(hs, 0, 1));
  Tensor<T> z = tape.matmul(pooled, bundle.pool_w, false, true);

  std::vector<long> prev(clean_ids.begin(), clean_ids.end() - 1);
  std::vector<long> next(clean_ids.begin() + 1, clean_ids.end());
  Tensor<T> logits = model::decoder_logits(tape, prev, isa, bundle, &z, &hs, ctx);
  return tape.cross_entropy(logits, next);
}

// Inference-mode synthetic translation for back-translation. Runs on a
// non-recording tape: no gradients reach any parameter here.
template <class T>
std::vector<long> bt_synthesize(const std::vector<long>& ids, const std::string& from_isa,
                                const model::ModelBundle<T>& bundle, long bos_id,
                                long gen_slack) {
  Tape<T> eval(false);
  auto enc = model::encode_block(eval, ids, from_isa, bundle);
  const std::string to_isa =
      bundle.is_src(from_isa) ? bundle.cfg.isa_tgt : bundle.cfg.isa_src;
  Tensor<T> z_to = flow::transform_latent(eval, enc.z, bundle.flow_of(from_isa),
                                          bundle.flow_of(to_isa));
  model::GenOptions opts;
  opts.max_len = std::min<long>(model::kMaxLen,
                                static_cast<long>(ids.size()) + gen_slack);
  return model::generate_block(z_to, enc.hidden, to_isa, bundle, bos_id, opts);
}

// Back-translation training pass: encode the synthetic block with the other
// side's encoder, transform the latent back, and teacher-force the original.
template <class T>
Tensor<T> bt_reconstruct(Tape<T>& tape, const std::vector<long>& synthetic,
                         const std::vector<long>& original,
                         const std::string& original_isa,
                         const model::ModelBundle<T>& bundle,
                         const model::RunCtx<T>& ctx = {}) {
  const std::string synth_isa =
      bundle.is_src(original_isa) ? bundle.cfg.isa_tgt : bundle.cfg.isa_src;
  Tensor<T> x = model::embed_inputs(tape, synthetic, synth_isa, bundle, ctx);
  Tensor<T> hs = model::run_stack(tape, bundle.encoder(synth_isa), x, bundle,
                                  static_cast<const Tensor<T>*>(nullptr), ctx);
  std::vector<uint8_t> valid(synthetic.size(), 1);
  Tensor<T> pooled = tape.add(tape.add(tape.masked_max_pool(hs, valid),
                                       tape.masked_mean_pool(hs, valid)),
                              tape.slice_rows(hs, 0, 1));
  Tensor<T> z_synth = tape.matmul(pooled, bundle.pool_w, false, true);
  Tensor<T> z_back = flow::transform_latent(tape, z_synth, bundle.flow_of(synth_isa),
                                            bundle.flow_of(original_isa));
  std::vector<long> prev(original.begin(), original.end() - 1);
  std::vector<long> next(original.begin() + 1, original.end());
  Tensor<T> logits = model::decoder_logits(tape, prev, original_isa, bundle,
                                           &z_back, &hs, ctx);
  return tape.cross_entropy(logits, next);
}

// ---- the training loop ------------------------------------------------------

struct StepMetrics {
  long step = 0;
  double dae_src = 0, dae_tgt = 0, bt_s2t = 0, bt_t2s = 0;
  double mle_src = 0, mle_tgt = 0;
  double total = 0, ema = 0;
};

inline std::string metrics_line(const StepMetrics& m) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%ld %.6f %.6f %.6f %.6f %.6f %.6f %.6f %.6f",
                m.step, m.dae_src, m.dae_tgt, m.bt_s2t, m.bt_t2s, m.mle_src,
                m.mle_tgt, m.total, m.ema);
  return buf;
}

struct TrainResult {
  long steps_run = 0;
  double final_ema = 0;
  bool reached_threshold = false;
  long bt_skipped = 0;  // degenerate synthetic translations
  std::vector<std::string> metrics;   // one line per step
};

template <class T>
class Trainer {
 public:
  using T2 = T;  // scalar type alias used inside the step lambdas

  Trainer(model::ModelBundle<T>& bundle, const bpe::JointVocabulary& vocab,
          std::vector<std::vector<long>> corpus_src,
          std::vector<std::vector<long>> corpus_tgt, TrainingConfig cfg)
      : bundle_(bundle),
        vocab_(vocab),
        corpus_src_(std::move(corpus_src)),
        corpus_tgt_(std::move(corpus_tgt)),
        cfg_(cfg) {
    cfg_.validate();
    if (corpus_src_.empty() || corpus_tgt_.empty())
      throw std::invalid_argument("trainer: empty corpus");
    AdamConfig<T> ac;
    ac.lr = static_cast<T>(cfg_.lr);
    ac.warmup = cfg_.warmup;
    ac.clip_norm = static_cast<T>(cfg_.clip_norm);
    opt_ = Adam<T>(ac);
    for (auto& [name, t] : model::named_params(bundle_)) params_.push_back(t);
  }

  Adam<T>& optimizer() { return opt_; }
  long train_step() const { return train_step_; }
  double ema() const { return ema_; }
  void set_resume_state(long step, double ema) {
    train_step_ = step;
    ema_ = ema;
    have_ema_ = step > 0;
  }

  // Phase 1: interleaved CLM+MLM pretraining over both ISAs.
  std::vector<std::string> pretrain(const std::function<void(long)>& on_step = {}) {
    std::vector<std::string> log;
    for (long step = 0; step < cfg_.pretrain_steps; ++step) {
      Tape<T> tape;
      model::RunCtx<T> ctx = run_ctx(step, "pre");
      Rng pick(cfg_.seed, "pretrain/pick", step);
      Rng mask_rng(cfg_.seed, "pretrain/mask", step);
      double clm_sum = 0, mlm_sum = 0;
      long clm_n = 0, mlm_n = 0;
      std::vector<Tensor<T>> losses;
      for (long b = 0; b < cfg_.batch_size; ++b) {
        bool src_side = b % 2 == 0;
        const auto& corpus = src_side ? corpus_src_ : corpus_tgt_;
        const std::string& isa = src_side ? bundle_.cfg.isa_src : bundle_.cfg.isa_tgt;
        const auto& ids = corpus[pick.uniform_int(corpus.size())];
        if (b % 2 == 0) {
          Tensor<T> l = clm_loss(tape, ids, isa, bundle_, ctx);
          clm_sum += static_cast<double>(l.item());
          ++clm_n;
          losses.push_back(l);
        } else {
          MaskedSample s = make_mlm_sample(ids, vocab_, mask_rng, cfg_.mask_rate,
                                           cfg_.mask_p_mask, cfg_.mask_p_rand);
          auto l = mlm_loss(tape, s, isa, bundle_, ctx);
          if (l) {
            mlm_sum += static_cast<double>(l->item());
            ++mlm_n;
            losses.push_back(*l);
          }
        }
      }
      Tensor<T> total = mean_of(tape, losses);
      tape.backward(total);
      opt_.step(params_);
      char buf[128];
      std::snprintf(buf, sizeof buf, "%ld %.6f %.6f", step,
                    clm_n ? clm_sum / clm_n : 0.0, mlm_n ? mlm_sum / mlm_n : 0.0);
      log.emplace_back(buf);
      if (on_step) on_step(step);
    }
    return log;
  }

  // Phase 2: DAE both ISAs + BT both directions + MLE both stacks per step.
  // With threads > 1 the batch splits into contiguous slices; each worker
  // runs on its own parameter replica and gradients merge in slice order,
  // so results are deterministic for a fixed thread count.
  TrainResult train(const std::function<void(const StepMetrics&)>& on_step = {}) {
    TrainResult result;
    bool use_mle = cfg_.lambda_mle > 0 && bundle_.flow_src.depth() > 0;
    long nthreads = std::max<long>(1, cfg_.threads);
    while (train_step_ < cfg_.max_steps) {
      long step = train_step_;
      StepMetrics m;
      m.step = step;
      Rng pick(cfg_.seed, "train/pick", step);

      // DAE batches resample every step; BT batches are pinned to the
      // refresh epoch so cached synthetic pairs actually get reused for
      // bt_refresh_every consecutive steps (offline-style iteration).
      std::vector<const std::vector<long>*> batch_src, batch_tgt;
      for (long b = 0; b < cfg_.batch_size; ++b) {
        batch_src.push_back(&corpus_src_[pick.uniform_int(corpus_src_.size())]);
        batch_tgt.push_back(&corpus_tgt_[pick.uniform_int(corpus_tgt_.size())]);
      }
      long epoch = cfg_.bt_refresh_every > 1 ? step / cfg_.bt_refresh_every : step;
      Rng bt_pick(cfg_.seed, "train/btpick", epoch);
      std::vector<const std::vector<long>*> bt_src, bt_tgt;
      for (long b = 0; b < cfg_.batch_size; ++b) {
        bt_src.push_back(&corpus_src_[bt_pick.uniform_int(corpus_src_.size())]);
        bt_tgt.push_back(&corpus_tgt_[bt_pick.uniform_int(corpus_tgt_.size())]);
      }

      // Synthetic pairs for back-translation, generated read-only against the
      // current parameters and cached per refresh epoch.
      std::vector<std::vector<long>> synth_src(bt_src.size()), synth_tgt(bt_tgt.size());
      if (cfg_.lambda_bt > 0) {
        std::vector<long> todo_src, todo_tgt;
        for (size_t i = 0; i < bt_src.size(); ++i)
          if (!cache_lookup(*bt_src[i], bundle_.cfg.isa_src, step, &synth_src[i]))
            todo_src.push_back(static_cast<long>(i));
        for (size_t i = 0; i < bt_tgt.size(); ++i)
          if (!cache_lookup(*bt_tgt[i], bundle_.cfg.isa_tgt, step, &synth_tgt[i]))
            todo_tgt.push_back(static_cast<long>(i));
        auto gen_range = [&](long lo, long hi) {
          for (long j = lo; j < hi; ++j) {
            if (j < static_cast<long>(todo_src.size())) {
              long i = todo_src[j];
              synth_src[i] = bt_synthesize(*bt_src[i], bundle_.cfg.isa_src, bundle_,
                                           vocab_.bos_id, cfg_.bt_gen_slack);
            } else {
              long i = todo_tgt[j - todo_src.size()];
              synth_tgt[i] = bt_synthesize(*bt_tgt[i], bundle_.cfg.isa_tgt, bundle_,
                                           vocab_.bos_id, cfg_.bt_gen_slack);
            }
          }
        };
        long total = static_cast<long>(todo_src.size() + todo_tgt.size());
        if (nthreads > 1 && total > 1) {
          long half = total / 2;
          std::thread worker([&] { gen_range(0, half); });
          gen_range(half, total);
          worker.join();
        } else {
          gen_range(0, total);
        }
        for (long i : todo_src)
          cache_store(*bt_src[i], bundle_.cfg.isa_src, step, synth_src[i]);
        for (long i : todo_tgt)
          cache_store(*bt_tgt[i], bundle_.cfg.isa_tgt, step, synth_tgt[i]);
        // the cache only needs the current epoch's pairs
        if (bt_cache_.size() > 4 * static_cast<size_t>(cfg_.batch_size)) {
          for (auto it = bt_cache_.begin(); it != bt_cache_.end();) {
            if (it->second.first != epoch) it = bt_cache_.erase(it);
            else ++it;
          }
        }
      }

      // Per-slice loss construction on parameter replicas.
      struct SliceOut {
        double dae_src = 0, dae_tgt = 0, bt_s2t = 0, bt_t2s = 0;
        double mle_src = 0, mle_tgt = 0;
        long n_dae_src = 0, n_dae_tgt = 0, n_bt_s2t = 0, n_bt_t2s = 0;
        long skipped = 0;
        bool ok = true;
        std::string error;
      };
      long B = cfg_.batch_size;
      std::vector<SliceOut> outs(nthreads);
      std::vector<model::ModelBundle<T2>> replicas;
      replicas.reserve(nthreads > 1 ? nthreads - 1 : 0);
      for (long t = 1; t < nthreads; ++t) replicas.push_back(model::deep_copy_bundle(bundle_));

      auto run_slice = [&](long t) {
        SliceOut& so = outs[t];
        try {
          model::ModelBundle<T2>& mb = t == 0 ? bundle_ : replicas[t - 1];
          Tape<T2> tape;
          std::vector<Tensor<T2>> pieces;
          long lo = B * t / nthreads, hi = B * (t + 1) / nthreads;
          auto item_ctx = [&](long idx, Rng& storage) {
            storage = Rng(cfg_.seed, "train/dropout", step * (1 << 20) + idx);
            model::RunCtx<T2> ctx;
            ctx.train = true;
            ctx.rng = &storage;
            ctx.dropout = cfg_.dropout;
            ctx.attn_dropout = cfg_.attn_dropout;
            return ctx;
          };
          for (long i = lo; i < hi; ++i) {
            Rng drop_rng(0, "unset");
            auto ctx = item_ctx(i, drop_rng);
            Rng noise_rng(cfg_.seed, "train/noise", step * (1 << 20) + i);
            Tensor<T2> l = dae_step(tape, *batch_src[i], mb.cfg.isa_src, mb, cfg_,
                                    noise_rng, ctx);
            so.dae_src += l.item();
            ++so.n_dae_src;
            pieces.push_back(tape.scale(l, static_cast<T2>(cfg_.lambda_dae / B)));
          }
          for (long i = lo; i < hi; ++i) {
            Rng drop_rng(0, "unset");
            auto ctx = item_ctx(B + i, drop_rng);
            Rng noise_rng(cfg_.seed, "train/noise", step * (1 << 20) + B + i);
            Tensor<T2> l = dae_step(tape, *batch_tgt[i], mb.cfg.isa_tgt, mb, cfg_,
                                    noise_rng, ctx);
            so.dae_tgt += l.item();
            ++so.n_dae_tgt;
            pieces.push_back(tape.scale(l, static_cast<T2>(cfg_.lambda_dae / B)));
          }
          for (long i = lo; cfg_.lambda_bt > 0 && i < hi; ++i) {
            if (synth_src[i].size() <= 2) {
              ++so.skipped;
              continue;
            }
            Rng drop_rng(0, "unset");
            auto ctx = item_ctx(2 * B + i, drop_rng);
            Tensor<T2> l = bt_reconstruct(tape, synth_src[i], *bt_src[i],
                                          mb.cfg.isa_src, mb, ctx);
            so.bt_s2t += l.item();
            ++so.n_bt_s2t;
            pieces.push_back(tape.scale(l, static_cast<T2>(cfg_.lambda_bt / B)));
          }
          for (long i = lo; cfg_.lambda_bt > 0 && i < hi; ++i) {
            if (synth_tgt[i].size() <= 2) {
              ++so.skipped;
              continue;
            }
            Rng drop_rng(0, "unset");
            auto ctx = item_ctx(3 * B + i, drop_rng);
            Tensor<T2> l = bt_reconstruct(tape, synth_tgt[i], *bt_tgt[i],
                                          mb.cfg.isa_tgt, mb, ctx);
            so.bt_t2s += l.item();
            ++so.n_bt_t2s;
            pieces.push_back(tape.scale(l, static_cast<T2>(cfg_.lambda_bt / B)));
          }
          if (use_mle && hi > lo) {
            std::vector<const std::vector<long>*> slice_src(batch_src.begin() + lo,
                                                            batch_src.begin() + hi);
            std::vector<const std::vector<long>*> slice_tgt(batch_tgt.begin() + lo,
                                                            batch_tgt.begin() + hi);
            Tensor<T2> z_src = detached_latents_of(mb, slice_src, mb.cfg.isa_src);
            Tensor<T2> z_tgt = detached_latents_of(mb, slice_tgt, mb.cfg.isa_tgt);
            Tensor<T2> nll_src = flow::nll_loss(tape, mb.flow_src, z_src);
            Tensor<T2> nll_tgt = flow::nll_loss(tape, mb.flow_tgt, z_tgt);
            so.mle_src = nll_src.item() * (hi - lo);
            so.mle_tgt = nll_tgt.item() * (hi - lo);
            double w = cfg_.lambda_mle * static_cast<double>(hi - lo) / B;
            pieces.push_back(tape.scale(nll_src, static_cast<T2>(w)));
            pieces.push_back(tape.scale(nll_tgt, static_cast<T2>(w)));
          }
          if (!pieces.empty()) {
            Tensor<T2> total = pieces[0];
            for (size_t i = 1; i < pieces.size(); ++i) total = tape.add(total, pieces[i]);
            tape.backward(total);
          }
        } catch (const std::exception& e) {
          so.ok = false;
          so.error = e.what();
        }
      };

      if (nthreads > 1) {
        std::vector<std::thread> workers;
        for (long t = 1; t < nthreads; ++t) workers.emplace_back(run_slice, t);
        run_slice(0);
        for (auto& w : workers) w.join();
      } else {
        run_slice(0);
      }
      for (const auto& so : outs)
        if (!so.ok)
          throw std::runtime_error("training aborted at step " + std::to_string(step) +
                                   ": " + so.error);

      // Merge replica gradients into the primary parameters, slice order.
      if (nthreads > 1) {
        auto main_params = model::named_params(bundle_);
        for (long t = 1; t < nthreads; ++t) {
          auto rep_params = model::named_params(replicas[t - 1]);
          for (size_t i = 0; i < main_params.size(); ++i) {
            if (!rep_params[i].second.has_grad()) continue;
            auto& dst = main_params[i].second.grad();
            const auto& src = rep_params[i].second.grad();
            for (size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
          }
        }
      }
      opt_.step(params_);

      long n_dae_src = 0, n_dae_tgt = 0, n_bt_s2t = 0, n_bt_t2s = 0;
      for (const auto& so : outs) {
        m.dae_src += so.dae_src;
        m.dae_tgt += so.dae_tgt;
        m.bt_s2t += so.bt_s2t;
        m.bt_t2s += so.bt_t2s;
        m.mle_src += so.mle_src;
        m.mle_tgt += so.mle_tgt;
        n_dae_src += so.n_dae_src;
        n_dae_tgt += so.n_dae_tgt;
        n_bt_s2t += so.n_bt_s2t;
        n_bt_t2s += so.n_bt_t2s;
        result.bt_skipped += so.skipped;
      }
      m.dae_src /= std::max<long>(1, n_dae_src);
      m.dae_tgt /= std::max<long>(1, n_dae_tgt);
      m.bt_s2t /= std::max<long>(1, n_bt_s2t);
      m.bt_t2s /= std::max<long>(1, n_bt_t2s);
      m.mle_src /= B;
      m.mle_tgt /= B;
      m.total = cfg_.lambda_dae * (m.dae_src + m.dae_tgt) +
                cfg_.lambda_bt * (m.bt_s2t + m.bt_t2s) +
                (use_mle ? cfg_.lambda_mle * (m.mle_src + m.mle_tgt) : 0.0);
      if (!std::isfinite(m.total))
        throw std::runtime_error("training aborted: non-finite loss at step " +
                                 std::to_string(step));

      ema_ = have_ema_ ? cfg_.ema_decay * ema_ + (1 - cfg_.ema_decay) * m.total
                       : m.total;
      have_ema_ = true;
      m.ema = ema_;
      result.metrics.push_back(metrics_line(m));
      if (on_step) on_step(m);
      ++train_step_;
      ++result.steps_run;
      if (ema_ < cfg_.loss_stop) {
        result.reached_threshold = true;
        break;
      }
    }
    result.final_ema = ema_;
    return result;
  }

  // Optimizer + loop counters serialized next to the model so a resumed run
  // replays the exact trajectory.
  ckpt::Blobs state_blobs() {
    ckpt::Blobs blobs = model::bundle_to_blobs(bundle_);
    auto named = model::named_params(bundle_);
    for (auto& [name, t] : named) {
      auto& mo = opt_.state()[t.id()];
      if (mo.m.empty()) {
        mo.m.assign(t.size(), T(0));
        mo.v.assign(t.size(), T(0));
      }
      ckpt::TensorBlob mb, vb;
      mb.shape = t.shape();
      vb.shape = t.shape();
      for (long i = 0; i < t.size(); ++i) {
        mb.data.push_back(static_cast<float>(mo.m[i]));
        vb.data.push_back(static_cast<float>(mo.v[i]));
      }
      blobs.emplace("opt/m/" + name, std::move(mb));
      blobs.emplace("opt/v/" + name, std::move(vb));
    }
    ckpt::TensorBlob st;
    st.shape = {3};
    st.data = {static_cast<float>(opt_.step_count()), static_cast<float>(train_step_),
               have_ema_ ? 1.0f : 0.0f};
    blobs.emplace("opt/state", st);
    // The EMA is a double; a 17-digit text rendering round-trips its bits.
    char ema_text[64];
    std::snprintf(ema_text, sizeof ema_text, "%.17g", ema_);
    blobs.emplace("opt/ema", ckpt::string_blob(ema_text));
    return blobs;
  }

  void load_state_blobs(const ckpt::Blobs& blobs) {
    auto named = model::named_params(bundle_);
    for (auto& [name, t] : named) {
      auto mit = blobs.find("opt/m/" + name);
      auto vit = blobs.find("opt/v/" + name);
      if (mit == blobs.end() || vit == blobs.end())
        throw std::runtime_error("resume: missing optimizer state for " + name);
      auto& mo = opt_.state()[t.id()];
      mo.m.resize(t.size());
      mo.v.resize(t.size());
      for (long i = 0; i < t.size(); ++i) {
        mo.m[i] = static_cast<T>(mit->second.data[i]);
        mo.v[i] = static_cast<T>(vit->second.data[i]);
      }
    }
    auto st = blobs.find("opt/state");
    if (st == blobs.end()) throw std::runtime_error("resume: missing opt/state");
    opt_.set_step_count(static_cast<long>(st->second.data[0]));
    train_step_ = static_cast<long>(st->second.data[1]);
    have_ema_ = st->second.data[2] != 0;
    auto ema = blobs.find("opt/ema");
    if (ema == blobs.end()) throw std::runtime_error("resume: missing opt/ema");
    ema_ = std::stod(ckpt::blob_string(ema->second));
  }

 private:
  model::RunCtx<T> run_ctx(long step, const char* phase) {
    rng_storage_ = Rng(cfg_.seed, std::string(phase) + "/dropout", step);
    model::RunCtx<T> ctx;
    ctx.train = true;
    ctx.rng = &rng_storage_;
    ctx.dropout = cfg_.dropout;
    ctx.attn_dropout = cfg_.attn_dropout;
    return ctx;
  }

  Tensor<T> mean_of(Tape<T>& tape, std::vector<Tensor<T>>& losses) {
    if (losses.empty()) return Tensor<T>::scalar(T(0));
    Tensor<T> sum = losses[0];
    for (size_t i = 1; i < losses.size(); ++i) sum = tape.add(sum, losses[i]);
    return tape.scale(sum, T(1) / static_cast<T>(losses.size()));
  }

  bool cache_lookup(const std::vector<long>& ids, const std::string& isa, long step,
                    std::vector<long>* out) {
    long epoch = cfg_.bt_refresh_every > 1 ? step / cfg_.bt_refresh_every : step;
    auto it = bt_cache_.find(std::make_pair(isa, ids));
    if (it != bt_cache_.end() && it->second.first == epoch) {
      *out = it->second.second;
      return true;
    }
    return false;
  }

  void cache_store(const std::vector<long>& ids, const std::string& isa, long step,
                   const std::vector<long>& synth) {
    long epoch = cfg_.bt_refresh_every > 1 ? step / cfg_.bt_refresh_every : step;
    bt_cache_[std::make_pair(isa, ids)] = {epoch, synth};
  }

  static Tensor<T> detached_latents_of(model::ModelBundle<T>& mb,
                                       const std::vector<const std::vector<long>*>& batch,
                                       const std::string& isa) {
    Tape<T> eval(false);
    std::vector<T> rows;
    rows.reserve(batch.size() * mb.cfg.d);
    for (auto* ids : batch) {
      auto enc = model::encode_block(eval, *ids, isa, mb);
      rows.insert(rows.end(), enc.z.values().begin(), enc.z.values().end());
    }
    return Tensor<T>({static_cast<long>(batch.size()), mb.cfg.d}, std::move(rows));
  }

  model::ModelBundle<T>& bundle_;
  const bpe::JointVocabulary& vocab_;
  std::vector<std::vector<long>> corpus_src_, corpus_tgt_;
  TrainingConfig cfg_;
  Adam<T> opt_{AdamConfig<T>{}};
  std::vector<Tensor<T>> params_;
  long train_step_ = 0;
  double ema_ = 0;
  bool have_ema_ = false;
  Rng rng_storage_{0, "unset"};
  std::map<std::pair<std::string, std::vector<long>>,
           std::pair<long, std::vector<long>>> bt_cache_;
};

}  // namespace fmtx::train
