#pragma once

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "fmtx/checkpoint.hpp"
#include "fmtx/optim.hpp"
#include "fmtx/tape.hpp"

namespace fmtx::detect {

struct DetectorConfig {
  long hidden = 16;
  long layers = 2;       // 3 available as a config override
  long batch = 36;
  long epochs = 12;
  double lr = 1e-3;
  uint64_t seed = 1;
  long max_window = 4096;  // longer sequences are windowed, logits max-pooled
};

struct LabeledSample {
  std::vector<long> ids;
  int label = 0;  // 1 = malicious
};

template <class T>
struct LstmLayer {
  Tensor<T> w_ih;  // [4H, in]
  Tensor<T> w_hh;  // [4H, H]
  Tensor<T> bias;  // [4H]
};

// Sequence classifier over frozen token embeddings: stacked LSTM, max-pooling
// across the temporal dimension, single-logit head.
template <class T>
struct DetectorModel {
  DetectorConfig cfg;
  Tensor<T> embedding;  // [V,d], frozen (never requires grad here)
  std::vector<LstmLayer<T>> lstm;
  Tensor<T> head_w;  // [1,H]
  Tensor<T> head_b;  // [1]
  std::string train_isa;  // provenance: the ISA this detector was trained on
};

template <class T>
DetectorModel<T> make_detector(const Tensor<T>& embedding, DetectorConfig cfg,
                               const std::string& train_isa, Rng& rng) {
  DetectorModel<T> m;
  m.cfg = cfg;
  m.embedding = embedding;
  m.embedding.set_requires_grad(false);
  m.train_isa = train_isa;
  long in = embedding.shape()[1];
  for (long l = 0; l < cfg.layers; ++l) {
    LstmLayer<T> layer;
    long input = l == 0 ? in : cfg.hidden;
    T std_ih = static_cast<T>(1.0 / std::sqrt(static_cast<double>(input)));
    T std_hh = static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg.hidden)));
    layer.w_ih = Tensor<T>::randn({4 * cfg.hidden, input}, rng, std_ih, true);
    layer.w_hh = Tensor<T>::randn({4 * cfg.hidden, cfg.hidden}, rng, std_hh, true);
    layer.bias = Tensor<T>({4 * cfg.hidden}, T(0), true);
    m.lstm.push_back(std::move(layer));
  }
  m.head_w = Tensor<T>::randn({1, cfg.hidden}, rng, static_cast<T>(0.1), true);
  m.head_b = Tensor<T>({1}, T(0), true);
  return m;
}

template <class T>
std::vector<Tensor<T>> detector_params(DetectorModel<T>& m) {
  std::vector<Tensor<T>> out;
  for (auto& l : m.lstm) {
    out.push_back(l.w_ih);
    out.push_back(l.w_hh);
    out.push_back(l.bias);
  }
  out.push_back(m.head_w);
  out.push_back(m.head_b);
  return out;
}

// Runs the LSTM stack over one window of ids and returns the logit [1,1].
template <class T>
Tensor<T> window_logit(Tape<T>& tape, const std::vector<long>& ids,
                       const DetectorModel<T>& m) {
  if (ids.empty()) throw std::invalid_argument("detector: empty input");
  long H = m.cfg.hidden;
  Tensor<T> x = tape.embedding_lookup(m.embedding, ids);  // [Tm,in]
  for (const auto& layer : m.lstm) {
    long n = x.shape()[0];
    Tensor<T> gates_x = tape.add(tape.matmul(x, layer.w_ih, false, true), layer.bias);
    Tensor<T> h({1, H}), c({1, H});
    std::vector<Tensor<T>> hs;
    hs.reserve(n);
    for (long t = 0; t < n; ++t) {
      Tensor<T> g = tape.add(tape.slice_rows(gates_x, t, t + 1),
                             tape.matmul(h, layer.w_hh, false, true));
      auto parts = tape.split(g, 1, {H, H, H, H});
      Tensor<T> i_g = tape.sigmoid(parts[0]);
      Tensor<T> f_g = tape.sigmoid(parts[1]);
      Tensor<T> g_g = tape.tanh_(parts[2]);
      Tensor<T> o_g = tape.sigmoid(parts[3]);
      c = tape.add(tape.mul(f_g, c), tape.mul(i_g, g_g));
      h = tape.mul(o_g, tape.tanh_(c));
      hs.push_back(h);
    }
    Tensor<T> stacked = hs[0];
    for (long t = 1; t < n; ++t) stacked = tape.concat(stacked, hs[t], 0);
    x = stacked;  // [Tm,H] feeds the next layer
  }
  std::vector<uint8_t> valid(x.shape()[0], 1);
  Tensor<T> pooled = tape.masked_max_pool(x, valid);  // max across time
  return tape.add(tape.matmul(pooled, m.head_w, false, true), m.head_b);
}

// Per-sample logit with windowing: windows longer than max_window are scored
// separately and max-pooled.
template <class T>
Tensor<T> sample_logit(Tape<T>& tape, const std::vector<long>& ids,
                       const DetectorModel<T>& m) {
  if (ids.empty()) throw std::invalid_argument("detector: empty input");
  long w = m.cfg.max_window;
  if (static_cast<long>(ids.size()) <= w) return window_logit(tape, ids, m);
  Tensor<T> best;
  for (size_t off = 0; off < ids.size(); off += w) {
    std::vector<long> window(ids.begin() + off,
                             ids.begin() + std::min(ids.size(), off + w));
    Tensor<T> l = window_logit(tape, window, m);
    best = best.defined() ? tape.concat(best, l, 0) : l;
  }
  std::vector<uint8_t> valid(best.shape()[0], 1);
  return tape.masked_max_pool(best, valid);
}

template <class T>
double score_sample(const std::vector<long>& ids, const DetectorModel<T>& m) {
  Tape<T> eval(false);
  double logit = static_cast<double>(sample_logit(eval, ids, m).item());
  return 1.0 / (1.0 + std::exp(-logit));
}

struct TrainDetectorResult {
  std::vector<std::string> epoch_log;  // "epoch loss" lines
  std::vector<std::string> warnings;
};

// Binary cross-entropy with logits, Adam, fixed batch size; the embedding
// table stays frozen throughout.
template <class T>
TrainDetectorResult train_detector(DetectorModel<T>& m,
                                   const std::vector<LabeledSample>& train_set) {
  TrainDetectorResult result;
  long pos = 0, neg = 0;
  for (const auto& s : train_set) (s.label ? pos : neg)++;
  if (pos == 0 || neg == 0)
    throw std::invalid_argument("train_detector: both classes required");
  double imbalance = std::fabs(static_cast<double>(pos) - neg) /
                     std::max<double>(1.0, std::max(pos, neg));
  if (imbalance > 0.1)
    result.warnings.push_back("class imbalance " + std::to_string(imbalance));

  AdamConfig<T> ac;
  ac.lr = static_cast<T>(m.cfg.lr);
  ac.warmup = 0;
  ac.sqrt_decay = false;
  ac.beta2 = static_cast<T>(0.999);
  ac.eps = static_cast<T>(1e-8);
  Adam<T> opt(ac);
  auto params = detector_params(m);

  long n = static_cast<long>(train_set.size());
  for (long epoch = 0; epoch < m.cfg.epochs; ++epoch) {
    Rng shuffle(m.cfg.seed, "detector/shuffle", epoch);
    std::vector<long> order(n);
    for (long i = 0; i < n; ++i) order[i] = i;
    for (long i = n - 1; i > 0; --i)
      std::swap(order[i], order[shuffle.uniform_int(static_cast<uint64_t>(i + 1))]);
    double epoch_loss = 0;
    long batches = 0;
    for (long start = 0; start < n; start += m.cfg.batch) {
      Tape<T> tape;
      std::vector<Tensor<T>> losses;
      for (long i = start; i < std::min(n, start + m.cfg.batch); ++i) {
        const auto& s = train_set[order[i]];
        Tensor<T> logit = sample_logit(tape, s.ids, m);
        // bce-with-logits: softplus(l) - y*l
        Tensor<T> softplus = tape.log_(tape.add_const(tape.exp_(logit), T(1)));
        Tensor<T> loss = s.label
                             ? tape.sub(softplus, logit)
                             : softplus;
        losses.push_back(loss);
      }
      Tensor<T> sum = losses[0];
      for (size_t i = 1; i < losses.size(); ++i) sum = tape.add(sum, losses[i]);
      Tensor<T> mean = tape.scale(sum, T(1) / static_cast<T>(losses.size()));
      epoch_loss += static_cast<double>(mean.item());
      ++batches;
      tape.backward(mean);
      opt.step(params);
    }
    char buf[64];
    std::snprintf(buf, sizeof buf, "%ld %.6f", epoch, epoch_loss / batches);
    result.epoch_log.emplace_back(buf);
  }
  return result;
}

// Mann-Whitney AUC by pair counting; ties contribute one half.
inline double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw std::invalid_argument("auc: size mismatch");
  long pos = 0, neg = 0;
  for (int l : labels) (l ? pos : neg)++;
  if (pos == 0 || neg == 0)
    throw std::invalid_argument("auc: both classes required");
  double wins = 0;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      if (scores[i] > scores[j]) wins += 1;
      else if (scores[i] == scores[j]) wins += 0.5;
    }
  }
  return wins / (static_cast<double>(pos) * static_cast<double>(neg));
}

// ---- checkpoint (same container, det/ prefix) -----------------------------

template <class T>
ckpt::Blobs detector_to_blobs(const DetectorModel<T>& m) {
  ckpt::Blobs blobs;
  auto put = [&](const std::string& name, const Tensor<T>& t) {
    ckpt::TensorBlob b;
    b.shape = t.shape();
    for (long i = 0; i < t.size(); ++i)
      b.data.push_back(static_cast<float>(t.values()[i]));
    blobs.emplace(name, std::move(b));
  };
  put("det/embedding", m.embedding);
  for (size_t l = 0; l < m.lstm.size(); ++l) {
    std::string base = "det/lstm" + std::to_string(l) + "/";
    put(base + "w_ih", m.lstm[l].w_ih);
    put(base + "w_hh", m.lstm[l].w_hh);
    put(base + "bias", m.lstm[l].bias);
  }
  put("det/head_w", m.head_w);
  put("det/head_b", m.head_b);
  blobs.emplace("det/train_isa", ckpt::string_blob(m.train_isa));
  ckpt::TensorBlob cfg;
  cfg.shape = {3};
  cfg.data = {static_cast<float>(m.cfg.hidden), static_cast<float>(m.cfg.layers),
              static_cast<float>(m.cfg.max_window)};
  blobs.emplace("det/config", cfg);
  return blobs;
}

template <class T>
DetectorModel<T> detector_from_blobs(const ckpt::Blobs& blobs) {
  auto need = [&](const std::string& name) -> const ckpt::TensorBlob& {
    auto it = blobs.find(name);
    if (it == blobs.end()) throw std::runtime_error("detector checkpoint missing " + name);
    return it->second;
  };
  DetectorModel<T> m;
  const auto& cfg = need("det/config").data;
  m.cfg.hidden = static_cast<long>(cfg[0]);
  m.cfg.layers = static_cast<long>(cfg[1]);
  m.cfg.max_window = static_cast<long>(cfg[2]);
  m.train_isa = ckpt::blob_string(need("det/train_isa"));
  auto take = [&](const std::string& name) {
    const auto& b = need(name);
    Tensor<T> t(b.shape);
    for (long i = 0; i < t.size(); ++i) t.values()[i] = static_cast<T>(b.data[i]);
    return t;
  };
  m.embedding = take("det/embedding");
  for (long l = 0; l < m.cfg.layers; ++l) {
    std::string base = "det/lstm" + std::to_string(l) + "/";
    LstmLayer<T> layer;
    layer.w_ih = take(base + "w_ih");
    layer.w_hh = take(base + "w_hh");
    layer.bias = take(base + "bias");
    m.lstm.push_back(std::move(layer));
  }
  m.head_w = take("det/head_w");
  m.head_b = take("det/head_b");
  return m;
}

}  // namespace fmtx::detect
