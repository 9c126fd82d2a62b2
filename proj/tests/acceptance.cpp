// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Artifacts land under ./acceptance_artifacts.
//
//  1  flow correctness (round-trip + Jacobian determinant)
//  2  MLE sanity on a shifted Gaussian
//  3  gradient suite (primitives + composite losses, 64-bit)
//  4  pooling and gating equation oracles
//  5  normalizer golden suite (7 ISA profiles)
//  6  BPE round-trip, merge-order oracle, merge-count selection rules
//  7  MLM masking statistics
//  8  end-to-end toy translation BLEU
//  9  end-to-end detection transfer AUC
// 10  ablation harness (flow variants, normalization-rule subsets)
// 11  determinism of 5-9 artifacts

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fmtx/bpe.hpp"
#include "fmtx/config.hpp"
#include "fmtx/detector.hpp"
#include "fmtx/evalkit.hpp"
#include "fmtx/flow.hpp"
#include "fmtx/frontend.hpp"
#include "fmtx/optim.hpp"
#include "fmtx/seq_model.hpp"
#include "fmtx/toyisa.hpp"
#include "fmtx/trainer.hpp"
#include "golden_rows.hpp"
#include "testutil.hpp"

using namespace fmtx;
using testutil::DTape;
using testutil::DTensor;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
  void fail(const std::string& why) {
    pass = false;
    detail += (detail.empty() ? "" : "; ") + why;
  }
  void note(const std::string& what) {
    detail += (detail.empty() ? "" : "; ") + what;
  }
};

std::filesystem::path g_artifacts = "acceptance_artifacts";

std::vector<std::string> tokens_of(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  std::string w;
  while (ss >> w) out.push_back(w);
  return out;
}

std::string join(const std::vector<std::string>& toks) {
  std::string out;
  for (size_t i = 0; i < toks.size(); ++i) {
    if (i) out += ' ';
    out += toks[i];
  }
  return out;
}

// ---------------------------------------------------------------- criterion 1

template <class T>
void randomize_stack(flow::FlowStack<T>& st, Rng& rng, double scale = 0.3) {
  for (auto& c : st.couplings) {
    for (auto* w : {&c.s_w2, &c.t_w2})
      for (auto& v : w->values()) v = static_cast<T>(rng.normal() * scale / st.dim);
    for (auto* b : {&c.s_b2, &c.t_b2})
      for (auto& v : b->values()) v = static_cast<T>(rng.normal() * scale * 0.1);
  }
  for (auto& g : st.glow) {
    for (auto& v : g.act_logs.values()) v = static_cast<T>(rng.normal() * 0.1);
    for (auto& v : g.act_bias.values()) v = static_cast<T>(rng.normal() * 0.1);
    for (auto& v : g.lu_lower.values()) v = static_cast<T>(rng.normal() * 0.1);
    for (auto& v : g.lu_upper.values()) v = static_cast<T>(rng.normal() * 0.1);
    for (auto& v : g.lu_logs.values()) v = static_cast<T>(rng.normal() * 0.1);
  }
}

double det_lu(std::vector<double> a, long d) {
  double det = 1.0;
  for (long c = 0; c < d; ++c) {
    long piv = c;
    for (long r = c + 1; r < d; ++r)
      if (std::fabs(a[r * d + c]) > std::fabs(a[piv * d + c])) piv = r;
    if (piv != c) {
      for (long j = 0; j < d; ++j) std::swap(a[c * d + j], a[piv * d + j]);
      det = -det;
    }
    if (a[c * d + c] == 0) return 0;
    det *= a[c * d + c];
    for (long r = c + 1; r < d; ++r) {
      double f = a[r * d + c] / a[c * d + c];
      for (long j = c; j < d; ++j) a[r * d + j] -= f * a[c * d + j];
    }
  }
  return det;
}

Outcome criterion1() {
  Outcome out;
  Rng rng(1001, "acc1");
  DTape eval(false);
  for (flow::Variant v : {flow::Variant::Scf, flow::Variant::Glow})
    for (long k : {3L, 5L})
      for (long d : {8L, 64L}) {
        auto st = flow::make_flow_stack<double>(d, k, v, "source-flow", rng);
        randomize_stack(st, rng);
        double worst = 0;
        for (int i = 0; i < 1000; ++i) {
          DTensor z = testutil::random_tensor({1, d}, rng, false);
          DTensor eps = flow::flow_forward(eval, st, z).eps;
          DTensor back = flow::flow_inverse(eval, st, eps);
          for (long j = 0; j < d; ++j)
            worst = std::max(worst, std::fabs(back.values()[j] - z.values()[j]));
        }
        if (worst >= 1e-5)
          out.fail(flow::variant_to_string(v) + " K=" + std::to_string(k) +
                   " d=" + std::to_string(d) + " round-trip " + std::to_string(worst));
      }
  // Jacobian determinant oracle at d=6
  for (flow::Variant v : {flow::Variant::Scf, flow::Variant::Glow}) {
    auto st = flow::make_flow_stack<double>(6, 3, v, "source-flow", rng);
    randomize_stack(st, rng);
    DTensor z = testutil::random_tensor({1, 6}, rng, false);
    auto fo = flow::flow_forward(eval, st, z);
    const double h = 1e-6;
    std::vector<double> jac(36);
    for (long j = 0; j < 6; ++j) {
      DTensor zp({1, 6}, std::vector<double>(z.values()));
      DTensor zm({1, 6}, std::vector<double>(z.values()));
      zp.values()[j] += h;
      zm.values()[j] -= h;
      auto up = flow::flow_forward(eval, st, zp).eps;
      auto dn = flow::flow_forward(eval, st, zm).eps;
      for (long i = 0; i < 6; ++i)
        jac[i * 6 + j] = (up.values()[i] - dn.values()[i]) / (2 * h);
    }
    double num_det = std::fabs(det_lu(jac, 6));
    double ana_det = std::exp(fo.log_det.values()[0]);
    double rel = std::fabs(num_det - ana_det) / std::max(1e-12, ana_det);
    if (rel >= 1e-3)
      out.fail(flow::variant_to_string(v) + " |det| rel err " + std::to_string(rel));
  }
  return out;
}

// ---------------------------------------------------------------- criterion 2

Outcome criterion2() {
  Outcome out;
  const long d = 8, n_samples = 10000;
  Rng rng(1002, "acc2");
  auto st = flow::make_flow_stack<double>(d, 3, flow::Variant::Scf, "source-flow", rng);
  std::vector<std::pair<std::string, DTensor>> named;
  flow::collect_flow_params(st, "flow/", named);
  std::vector<DTensor> params;
  for (auto& [_, t] : named) params.push_back(t);
  DTensor data({n_samples, d}, 0.0);
  for (auto& v : data.values()) v = 3.0 + rng.normal();
  AdamConfig<double> ac;
  ac.lr = 5e-3;
  ac.warmup = 50;
  Adam<double> opt(ac);
  double entropy = 0.5 * d * (1.0 + std::log(2 * 3.14159265358979323846));
  double nll = 1e9;
  long batch = 256, steps = 0;
  for (; steps < 4000; ++steps) {
    std::vector<double> rows;
    Rng pick(1003, "acc2-batch", steps);
    for (long b = 0; b < batch; ++b) {
      long i = pick.uniform_int(n_samples);
      rows.insert(rows.end(), data.values().begin() + i * d,
                  data.values().begin() + (i + 1) * d);
    }
    DTensor z({batch, d}, std::move(rows));
    DTape tape;
    DTensor loss = flow::nll_loss(tape, st, z);
    nll = loss.item();
    tape.backward(loss);
    opt.step(params);
    if (steps > 200 && std::fabs(nll - entropy) / entropy < 0.04) break;
  }
  // full-data NLL for the final check
  DTape eval(false);
  nll = flow::nll_loss(eval, st, data).item();
  char buf[128];
  std::snprintf(buf, sizeof buf, "nll %.4f vs entropy %.4f after %ld steps", nll,
                entropy, steps);
  out.note(buf);
  if (std::fabs(nll - entropy) / entropy >= 0.05) out.fail("outside 5%");
  return out;
}

// ---------------------------------------------------------------- criterion 3

Outcome criterion3() {
  Outcome out;
  Rng rng(1004, "acc3");
  constexpr double tol = 1e-4;
  auto check = [&](const char* what, double err) {
    if (err >= tol) out.fail(std::string(what) + " rel err " + std::to_string(err));
  };

  // primitives (one representative random case each; the unit suite runs 20)
  for (int it = 0; it < 5; ++it) {
    DTensor a = testutil::random_tensor({3, 4}, rng);
    DTensor b = testutil::random_tensor({3, 4}, rng);
    DTensor row = testutil::random_tensor({4}, rng);
    DTensor matb = testutil::random_tensor({4, 5}, rng);
    DTensor gamma = testutil::random_tensor({4}, rng);
    DTensor beta = testutil::random_tensor({4}, rng);
    DTensor offz = testutil::random_tensor_offzero({3, 4}, rng);
    DTensor pos(fmtx::Shape{6}, 0.0, true);
    for (auto& v : pos.values()) v = 0.2 + rng.uniform() * 2;
    DTensor table = testutil::random_tensor({5, 3}, rng);
    DTensor logits = testutil::random_tensor({4, 6}, rng);
    std::vector<long> ids{0, 3, 1, 4};
    std::vector<long> targets{1, 5, 0, 2};
    std::vector<uint8_t> valid{1, 1, 0};
    auto sq = [](DTape& t, DTensor y) { return t.sum_all(t.mul(y, y)); };
    check("add", testutil::max_grad_rel_err(
                     [&](DTape& t) { return sq(t, t.add(a, b)); }, {a, b}));
    check("mul-row", testutil::max_grad_rel_err(
                         [&](DTape& t) { return sq(t, t.mul(a, row)); }, {a, row}));
    check("matmul", testutil::max_grad_rel_err(
                        [&](DTape& t) { return sq(t, t.matmul(a, matb)); }, {a, matb}));
    check("softmax", testutil::max_grad_rel_err(
                         [&](DTape& t) { return sq(t, t.softmax_rows(a)); }, {a}));
    check("sigmoid", testutil::max_grad_rel_err(
                         [&](DTape& t) { return sq(t, t.sigmoid(a)); }, {a}));
    check("tanh", testutil::max_grad_rel_err(
                      [&](DTape& t) { return sq(t, t.tanh_(a)); }, {a}));
    check("exp", testutil::max_grad_rel_err(
                     [&](DTape& t) { return sq(t, t.exp_(a)); }, {a}));
    check("log", testutil::max_grad_rel_err(
                     [&](DTape& t) { return sq(t, t.log_(pos)); }, {pos}));
    check("relu", testutil::max_grad_rel_err(
                      [&](DTape& t) { return sq(t, t.relu(offz)); }, {offz}));
    check("layer_norm",
          testutil::max_grad_rel_err(
              [&](DTape& t) { return sq(t, t.layer_norm(a, gamma, beta)); },
              {a, gamma, beta}));
    check("embedding",
          testutil::max_grad_rel_err(
              [&](DTape& t) { return sq(t, t.embedding_lookup(table, ids)); }, {table}));
    check("cross_entropy",
          testutil::max_grad_rel_err(
              [&](DTape& t) { return t.cross_entropy(logits, targets); }, {logits}));
    check("max_pool",
          testutil::max_grad_rel_err(
              [&](DTape& t) { return sq(t, t.masked_max_pool(offz, valid)); }, {offz}));
    check("mean_pool",
          testutil::max_grad_rel_err(
              [&](DTape& t) { return sq(t, t.masked_mean_pool(a, valid)); }, {a}));
    DTensor q = testutil::random_tensor({3, 4}, rng);
    DTensor k = testutil::random_tensor({2, 4}, rng);
    DTensor v = testutil::random_tensor({2, 4}, rng);
    check("attention",
          testutil::max_grad_rel_err(
              [&](DTape& t) { return sq(t, t.attention(q, k, v, 2)); }, {q, k, v}));
  }

  // composite losses at d <= 8
  auto corpus = toy::gen_corpus(8, 1005, 0);
  auto learned = bpe::learn_merges(corpus.train_a, corpus.train_b, 40);
  bpe::Encoder enc(learned.merges, learned.vocab);
  model::ModelConfig mc;
  mc.d = 8;
  mc.nheads = 2;
  mc.nlayers = 1;
  mc.flow_depth = 2;
  mc.dropout = 0;
  mc.attn_dropout = 0;
  auto bundle = model::make_bundle<double>(mc, learned.vocab.size(), rng);
  auto ids = enc.encode(tokens_of(corpus.train_a[0]));
  std::vector<DTensor> probe{bundle.tok_emb, bundle.gate_u, bundle.pool_w,
                             bundle.enc_src.layers[0].wq,
                             bundle.dec_tgt.layers[0].cwv,
                             bundle.flow_src.couplings[0].s_w1,
                             bundle.flow_tgt.couplings[0].t_w2};
  train::TrainingConfig tc;
  check("clm", testutil::max_grad_rel_err(
                   [&](DTape& t) { return train::clm_loss(t, ids, "TOY-A", bundle); },
                   probe));
  Rng mrng(1006, "acc3-mlm");
  auto sample = train::make_mlm_sample(ids, learned.vocab, mrng, 0.4);
  check("mlm", testutil::max_grad_rel_err(
                   [&](DTape& t) {
                     return *train::mlm_loss(t, sample, "TOY-A", bundle);
                   },
                   probe));
  check("dae", testutil::max_grad_rel_err(
                   [&](DTape& t) {
                     Rng nrng(1007, "acc3-dae");
                     return train::dae_step(t, ids, "TOY-A", bundle, tc, nrng);
                   },
                   probe));
  auto synth = train::bt_synthesize(ids, "TOY-A", bundle, learned.vocab.bos_id, 8);
  if (synth.size() > 2)
    check("bt", testutil::max_grad_rel_err(
                    [&](DTape& t) {
                      return train::bt_reconstruct(t, synth, ids, "TOY-A", bundle);
                    },
                    probe));
  DTensor zb = testutil::random_tensor({4, 8}, rng, false);
  check("flow-nll",
        testutil::max_grad_rel_err(
            [&](DTape& t) { return flow::nll_loss(t, bundle.flow_src, zb); }, probe));
  return out;
}

// ---------------------------------------------------------------- criterion 4

Outcome criterion4() {
  Outcome out;
  Rng rng(1008, "acc4");
  model::ModelConfig mc;
  mc.d = 8;
  mc.nheads = 2;
  mc.nlayers = 2;
  mc.flow_depth = 2;
  mc.dropout = 0;
  mc.attn_dropout = 0;
  auto b = model::make_bundle<double>(mc, 16, rng);
  DTape t(false);

  // pooling: z = W(max + mean + h0), against an independent scalar trace
  auto enc = model::encode_block(t, {3, 1, 7, 2, 9}, "TOY-A", b);
  long S = 5, d = 8;
  for (long j = 0; j < d; ++j) {
    double mx = enc.hidden.values()[j], mean = 0;
    for (long r = 0; r < S; ++r) {
      mx = std::max(mx, enc.hidden.values()[r * d + j]);
      mean += enc.hidden.values()[r * d + j];
    }
    double pooled = mx + mean / S + enc.hidden.values()[j];
    (void)pooled;
  }
  std::vector<double> pooled(d);
  for (long j = 0; j < d; ++j) {
    double mx = enc.hidden.values()[j], mean = 0;
    for (long r = 0; r < S; ++r) {
      mx = std::max(mx, enc.hidden.values()[r * d + j]);
      mean += enc.hidden.values()[r * d + j];
    }
    pooled[j] = mx + mean / S + enc.hidden.values()[j];
  }
  for (long j = 0; j < d; ++j) {
    double z = 0;
    for (long k = 0; k < d; ++k) z += b.pool_w.values()[j * d + k] * pooled[k];
    if (std::fabs(z - enc.z.values()[j]) >= 1e-10) out.fail("pooling oracle mismatch");
  }
  // single-token block with identity W: z = 3 h0
  auto b2 = b;
  for (auto& v : b2.pool_w.values()) v = 0;
  for (long i = 0; i < d; ++i) b2.pool_w.values()[i * d + i] = 1;
  auto enc1 = model::encode_block(t, {5}, "TOY-A", b2);
  for (long j = 0; j < d; ++j)
    if (std::fabs(enc1.z.values()[j] - 3 * enc1.hidden.values()[j]) > 1e-12)
      out.fail("single-token pooling z != 3 h0");

  // gating oracle
  DTensor s = testutil::random_tensor({3, d}, rng, false);
  DTensor zv = testutil::random_tensor({1, d}, rng, false);
  DTensor o = model::gate_states(t, s, zv, b);
  for (long r = 0; r < 3; ++r)
    for (long j = 0; j < d; ++j) {
      double acc = b.gate_b.values()[j];
      for (long k = 0; k < d; ++k)
        acc += b.gate_u.values()[j * 2 * d + k] * s.values()[r * d + k];
      for (long k = 0; k < d; ++k)
        acc += b.gate_u.values()[j * 2 * d + d + k] * zv.values()[k];
      double g = 1.0 / (1.0 + std::exp(-acc));
      double want = (1 - g) * s.values()[r * d + j] + g * zv.values()[j];
      if (std::fabs(want - o.values()[r * d + j]) >= 1e-10)
        out.fail("gate oracle mismatch");
    }
  // s == z fixed point
  DTensor srep = t.row_broadcast(zv, 4);
  DTensor o2 = model::gate_states(t, srep, zv, b);
  for (long i = 0; i < o2.size(); ++i)
    if (std::fabs(o2.values()[i] - srep.values()[i]) > 1e-12)
      out.fail("s==z does not hold exactly");
  return out;
}

// ---------------------------------------------------------------- criterion 5

Outcome criterion5() {
  Outcome out;
  long exact = 0, errata = 0;
  for (const auto& row : testdata::golden_rows()) {
    frontend::RawInstruction ins;
    std::istringstream ss(row.raw);
    ss >> ins.opcode;
    std::string w;
    while (ss >> w) ins.operands.push_back(w);
    std::string got =
        join(frontend::normalize_instruction(ins, frontend::builtin_profile(row.isa)));
    if (got != row.expected) {
      out.fail(std::string(row.isa) + " '" + row.raw + "' -> '" + got + "'");
      continue;
    }
    if (row.erratum) ++errata;
    else ++exact;
  }
  char buf[128];
  std::snprintf(buf, sizeof buf,
                "%ld/35 rows byte-exact, %ld published with an elided register "
                "(fixture documents the erratum)",
                exact, errata);
  out.note(buf);
  if (exact != 34 || errata != 1) out.fail("row census mismatch");
  return out;
}

// ---------------------------------------------------------------- criterion 6

Outcome criterion6() {
  Outcome out;
  // round-trip on 10^4 toy blocks
  auto corpus = toy::gen_corpus(5000, 1010, 0);
  auto learned = bpe::learn_merges(corpus.train_a, corpus.train_b, 200);
  bpe::Encoder enc(learned.merges, learned.vocab);
  long checked = 0;
  for (const auto* side : {&corpus.train_a, &corpus.train_b})
    for (const auto& line : *side) {
      auto toks = tokens_of(line);
      auto ids = enc.encode(toks);
      if (static_cast<long>(ids.size()) > bpe::kMaxEncodedLen) continue;
      if (bpe::decode_tokens(ids, learned.vocab) != toks) {
        out.fail("round-trip mismatch: " + line.substr(0, 40));
        break;
      }
      ++checked;
    }
  if (checked < 10000) out.fail("only " + std::to_string(checked) + " blocks checked");

  // merge order vs counting oracle on a <=1000-line corpus
  {
    std::vector<std::string> small_a(corpus.train_a.begin(), corpus.train_a.begin() + 500);
    std::vector<std::string> small_b(corpus.train_b.begin(), corpus.train_b.begin() + 500);
    auto got = bpe::learn_merges(small_a, small_b, 50);
    // oracle: recount pair frequencies independently
    std::map<std::vector<std::string>, long> words;
    auto symbolize = [&](const std::string& word) {
      std::vector<std::string> syms;
      size_t i = 0;
      while (i < word.size()) {
        if (word[i] == '<') {
          size_t c = word.find('>', i);
          if (c != std::string::npos &&
              frontend::is_placeholder(word.substr(i, c - i + 1))) {
            syms.push_back(word.substr(i, c - i + 1));
            i = c + 1;
            continue;
          }
        }
        syms.push_back(std::string(1, word[i++]));
      }
      return syms;
    };
    for (const auto* side : {&small_a, &small_b})
      for (const auto& line : *side)
        for (const auto& wd : tokens_of(line)) ++words[symbolize(wd)];
    for (long step = 0; step < got.merges.merge_count(); ++step) {
      std::map<std::pair<std::string, std::string>, long> freq;
      for (const auto& [syms, c] : words)
        for (size_t i = 0; i + 1 < syms.size(); ++i)
          freq[{syms[i], syms[i + 1]}] += c;
      if (freq.empty()) break;
      std::pair<std::string, std::string> best;
      long best_count = -1;
      for (const auto& [pr, c] : freq)
        if (c > best_count) {
          best = pr;
          best_count = c;
        }
      if (got.merges.merges[step] != best) {
        out.fail("merge " + std::to_string(step) + " differs from oracle");
        break;
      }
      std::map<std::vector<std::string>, long> next;
      for (const auto& [syms, c] : words) {
        std::vector<std::string> ns;
        for (size_t i = 0; i < syms.size();) {
          if (i + 1 < syms.size() && syms[i] == best.first && syms[i + 1] == best.second) {
            ns.push_back(best.first + best.second);
            i += 2;
          } else {
            ns.push_back(syms[i++]);
          }
        }
        next[ns] += c;
      }
      words = std::move(next);
    }
  }

  // the published vocabulary pairs all satisfy the sizing constraints
  const std::pair<long, long> published[] = {{7135, 7104},  {9416, 9236},
                                             {5142, 4455},  {10995, 11620},
                                             {8691, 9504},  {7148, 6484}};
  for (auto [s, t] : published) {
    double disc = 0;
    if (!bpe::check_size_constraints(s, t, &disc))
      out.fail("published sizes rejected: " + std::to_string(s) + "/" + std::to_string(t));
    if (disc >= 0.15) out.fail("discrepancy arithmetic wrong");
  }
  if (bpe::check_size_constraints(12500, 12400))
    out.fail("12k cap not enforced");
  // the selector picks the same candidate as exhaustive evaluation
  {
    std::vector<std::string> a(corpus.train_a.begin(), corpus.train_a.begin() + 300);
    std::vector<std::string> b(corpus.train_b.begin(), corpus.train_b.begin() + 300);
    auto sel = bpe::select_merge_count(a, b, {20, 60, 120});
    long best = -1;
    for (long c : {20L, 60L, 120L}) {
      auto r = bpe::learn_merges(a, b, c);
      if (bpe::check_size_constraints(r.vocab.src_vocab_size, r.vocab.tgt_vocab_size))
        best = std::max(best, c);
    }
    if (sel.chosen != best) out.fail("selector disagrees with exhaustive evaluation");
  }
  return out;
}

// ---------------------------------------------------------------- criterion 7

Outcome criterion7() {
  Outcome out;
  auto corpus = toy::gen_corpus(300, 1011, 0);
  auto learned = bpe::learn_merges(corpus.train_a, corpus.train_b, 100);
  bpe::Encoder enc(learned.merges, learned.vocab);
  Rng rng(1012, "acc7");
  long total = 0, selected = 0, to_mask = 0, to_rand = 0, kept = 0;
  size_t block = 0;
  while (total < 100000) {
    auto ids = enc.encode(tokens_of(corpus.train_a[block % corpus.train_a.size()]));
    ++block;
    auto s = train::make_mlm_sample(ids, learned.vocab, rng);
    for (size_t i = 0; i < ids.size(); ++i) {
      if (learned.vocab.is_special(ids[i])) continue;
      ++total;
      if (!s.is_masked[i]) continue;
      ++selected;
      if (s.input[i] == learned.vocab.mask_id) ++to_mask;
      else if (s.input[i] == ids[i]) ++kept;
      else ++to_rand;
    }
  }
  double rate = static_cast<double>(selected) / total;
  double pm = static_cast<double>(to_mask) / selected;
  double pr = static_cast<double>(to_rand) / selected;
  double pk = static_cast<double>(kept) / selected;
  char buf[160];
  std::snprintf(buf, sizeof buf, "rate %.4f splits %.3f/%.3f/%.3f over %ld tokens",
                rate, pm, pr, pk, total);
  out.note(buf);
  if (rate < 0.14 || rate > 0.16) out.fail("selection rate outside [0.14,0.16]");
  if (std::fabs(pm - 0.8) >= 0.02 || std::fabs(pr - 0.1) >= 0.02 ||
      std::fabs(pk - 0.1) >= 0.02)
    out.fail("replacement splits outside +-0.02");
  return out;
}

// ------------------------------------------------------- criteria 8 and 9

struct PipelineArtifacts {
  bpe::LearnResult learned;
  model::ModelBundle<float> bundle{};
  toy::ToyCorpus corpus;
  double bleu_trained = 0, bleu_untrained = 0;
  bool trained = false;
};

struct ToyRecipe {
  long corpus_blocks = 20000;
  long heldout = 500;
  uint64_t seed = 7;
  long merges = 250;
  long d = 64, nheads = 4, nlayers = 2, flow_depth = 3;
  long pretrain_steps = 1500;
  long train_steps = 700;
  long batch = 8;
  long bt_refresh = 4;
  long bt_slack = 8;
  double lr_pre = 3e-3, lr_train = 1e-3;
  long warmup_pre = 300, warmup_train = 150;
  double lambda_mle = 0.1;
};

std::vector<std::vector<long>> encode_lines(const std::vector<std::string>& lines,
                                            bpe::Encoder& enc) {
  std::vector<std::vector<long>> out;
  out.reserve(lines.size());
  for (const auto& line : lines) out.push_back(enc.encode(tokens_of(line)));
  return out;
}

double bleu_of_model(model::ModelBundle<float>& bundle, const bpe::LearnResult& learned,
                     const toy::ToyCorpus& corpus, long slack) {
  std::vector<std::string> hyp_lines, ref_lines;
  std::vector<std::string> a_lines;
  for (const auto& [a, b] : corpus.heldout) {
    a_lines.push_back(a);
    ref_lines.push_back(b);
  }
  auto result = eval::translate_binary(a_lines, "TOY-A", bundle, learned.merges,
                                       learned.vocab, slack);
  return eval::corpus_bleu(result.lines, ref_lines).bleu;
}

Outcome criterion8(PipelineArtifacts& art, const ToyRecipe& r) {
  Outcome out;
  art.corpus = toy::gen_corpus(r.corpus_blocks, r.seed, r.heldout);
  art.learned = bpe::learn_merges(art.corpus.train_a, art.corpus.train_b, r.merges);
  bpe::Encoder enc(art.learned.merges, art.learned.vocab);
  auto ids_a = encode_lines(art.corpus.train_a, enc);
  auto ids_b = encode_lines(art.corpus.train_b, enc);

  model::ModelConfig mc;
  mc.d = r.d;
  mc.nheads = r.nheads;
  mc.nlayers = r.nlayers;
  mc.flow_depth = r.flow_depth;
  Rng init_rng(r.seed, "model-init");
  art.bundle = model::make_bundle<float>(mc, art.learned.vocab.size(), init_rng);

  art.bleu_untrained = bleu_of_model(art.bundle, art.learned, art.corpus, r.bt_slack);

  train::TrainingConfig tc;
  tc.batch_size = r.batch;
  tc.pretrain_steps = r.pretrain_steps;
  tc.max_steps = r.train_steps;
  tc.bt_refresh_every = r.bt_refresh;
  tc.bt_gen_slack = r.bt_slack;
  tc.lambda_mle = r.lambda_mle;
  tc.loss_stop = 0.05;
  tc.seed = r.seed;
  tc.lr = r.lr_pre;
  tc.warmup = r.warmup_pre;
  train::Trainer<float> trainer(art.bundle, art.learned.vocab, ids_a, ids_b, tc);
  auto pre_log = trainer.pretrain();
  cfg::write_lines((g_artifacts / "pretrain.log").string(), pre_log);

  // fresh optimizer schedule for the unsupervised phase
  tc.lr = r.lr_train;
  tc.warmup = r.warmup_train;
  train::Trainer<float> trainer2(art.bundle, art.learned.vocab, ids_a, ids_b, tc);
  std::vector<std::string> metric_lines;
  auto result = trainer2.train([&](const train::StepMetrics& m) {
    metric_lines.push_back(train::metrics_line(m));
  });
  cfg::write_lines((g_artifacts / "train.log").string(), metric_lines);
  model::save_bundle((g_artifacts / "model.fmtx").string(), art.bundle);
  art.trained = true;

  art.bleu_trained = bleu_of_model(art.bundle, art.learned, art.corpus, r.bt_slack);
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "bleu %.4f (untrained %.6f) after %ld+%ld steps on %ld held-out pairs",
                art.bleu_trained, art.bleu_untrained, r.pretrain_steps,
                result.steps_run, static_cast<long>(art.corpus.heldout.size()));
  out.note(buf);
  if (art.bleu_trained < 0.50) out.fail("bleu below 0.50");
  if (art.bleu_trained < 2 * art.bleu_untrained)
    out.fail("bleu not >= 2x untrained baseline");
  return out;
}

Outcome criterion9(PipelineArtifacts& art, const ToyRecipe& r) {
  Outcome out;
  if (!art.trained) {
    out.fail("criterion 8 artifacts unavailable");
    return out;
  }
  bpe::Encoder enc(art.learned.merges, art.learned.vocab);

  auto train_set_b = toy::gen_detection(250, r.seed + 101, true);
  detect::DetectorConfig dc;
  dc.hidden = 16;
  dc.layers = 2;
  dc.batch = 36;
  dc.epochs = 10;
  dc.lr = 2e-3;
  dc.seed = r.seed;
  Rng det_rng(r.seed, "detector-init");
  auto detector = detect::make_detector<float>(art.bundle.tok_emb, dc, "TOY-B", det_rng);
  std::vector<detect::LabeledSample> train_set;
  for (const auto& s : train_set_b.samples) {
    detect::LabeledSample ls;
    for (const auto& line : s.blocks) {
      auto ids = enc.encode(tokens_of(line));
      ls.ids.insert(ls.ids.end(), ids.begin(), ids.end());
    }
    ls.label = s.label;
    train_set.push_back(std::move(ls));
  }
  auto tres = detect::train_detector(detector, train_set);
  cfg::write_lines((g_artifacts / "detector.log").string(), tres.epoch_log);
  ckpt::save((g_artifacts / "detector.fmtx").string(),
             detect::detector_to_blobs(detector));

  // test on TOY-A binaries: translated vs raw
  auto test_set_a = toy::gen_detection(100, r.seed + 202, false);
  std::vector<double> scores_translated, scores_raw;
  std::vector<int> labels;
  std::vector<std::string> score_lines;
  for (const auto& s : test_set_a.samples) {
    auto translated = eval::translate_binary(s.blocks, "TOY-A", art.bundle,
                                             art.learned.merges, art.learned.vocab,
                                             r.bt_slack);
    std::vector<long> ids_t, ids_r;
    for (const auto& line : translated.lines) {
      auto ids = enc.encode(tokens_of(line));
      ids_t.insert(ids_t.end(), ids.begin(), ids.end());
    }
    for (const auto& line : s.blocks) {
      auto ids = enc.encode(tokens_of(line));
      ids_r.insert(ids_r.end(), ids.begin(), ids.end());
    }
    double st = detect::score_sample(ids_t, detector);
    double sr = detect::score_sample(ids_r, detector);
    scores_translated.push_back(st);
    scores_raw.push_back(sr);
    labels.push_back(s.label);
    char buf[96];
    std::snprintf(buf, sizeof buf, "%ld %.6f %d", s.id, st, s.label);
    score_lines.emplace_back(buf);
  }
  cfg::write_lines((g_artifacts / "scores_translated.txt").string(), score_lines);
  double auc_translated = detect::auc(scores_translated, labels);
  double auc_raw = detect::auc(scores_raw, labels);
  char buf[128];
  std::snprintf(buf, sizeof buf, "auc translated %.4f, raw %.4f over %zu binaries",
                auc_translated, auc_raw, labels.size());
  out.note(buf);
  if (auc_translated < 0.90) out.fail("translated AUC below 0.90");
  if (auc_raw > 0.65) out.fail("raw AUC above 0.65 (transfer not via translation)");
  return out;
}

// ---------------------------------------------------------------- criterion 10

struct AblationRow {
  std::string name;
  double bleu = 0, auc = 0;
};

AblationRow micro_pipeline(const std::string& name,
                           const std::vector<std::string>& train_a,
                           const std::vector<std::string>& train_b,
                           const std::vector<std::pair<std::string, std::string>>& heldout,
                           const std::vector<toy::DetectionSample>& det_train_b,
                           const std::vector<toy::DetectionSample>& det_test_a,
                           flow::Variant variant, long flow_depth, uint64_t seed) {
  AblationRow row;
  row.name = name;
  auto learned = bpe::learn_merges(train_a, train_b, 80);
  bpe::Encoder enc(learned.merges, learned.vocab);
  auto ids_a = encode_lines(train_a, enc);
  auto ids_b = encode_lines(train_b, enc);
  model::ModelConfig mc;
  mc.d = 16;
  mc.nheads = 2;
  mc.nlayers = 1;
  mc.flow_variant = variant;
  mc.flow_depth = variant == flow::Variant::None ? 0 : flow_depth;
  Rng rng(seed, "ablate-init");
  auto bundle = model::make_bundle<float>(mc, learned.vocab.size(), rng);
  train::TrainingConfig tc;
  tc.batch_size = 4;
  tc.pretrain_steps = 60;
  tc.max_steps = 60;
  tc.bt_refresh_every = 4;
  tc.bt_gen_slack = 6;
  tc.lambda_mle = variant == flow::Variant::None ? 0.0 : 0.1;
  tc.loss_stop = 0.01;
  tc.seed = seed;
  tc.lr = 3e-3;
  tc.warmup = 30;
  train::Trainer<float> trainer(bundle, learned.vocab, ids_a, ids_b, tc);
  trainer.pretrain();
  trainer.train();

  std::vector<std::string> a_lines, ref_lines;
  for (const auto& [a, b] : heldout) {
    a_lines.push_back(a);
    ref_lines.push_back(b);
  }
  auto tr = eval::translate_binary(a_lines, "TOY-A", bundle, learned.merges,
                                   learned.vocab, 6);
  row.bleu = eval::corpus_bleu(tr.lines, ref_lines).bleu;

  detect::DetectorConfig dc;
  dc.hidden = 8;
  dc.layers = 2;
  dc.batch = 12;
  dc.epochs = 4;
  dc.lr = 5e-3;
  dc.seed = seed;
  Rng det_rng(seed, "ablate-det");
  auto detector = detect::make_detector<float>(bundle.tok_emb, dc, "TOY-B", det_rng);
  std::vector<detect::LabeledSample> train_set;
  for (const auto& s : det_train_b) {
    detect::LabeledSample ls;
    for (const auto& line : s.blocks) {
      auto ids = enc.encode(tokens_of(line));
      ls.ids.insert(ls.ids.end(), ids.begin(), ids.end());
    }
    ls.label = s.label;
    train_set.push_back(std::move(ls));
  }
  detect::train_detector(detector, train_set);
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& s : det_test_a) {
    auto translated = eval::translate_binary(s.blocks, "TOY-A", bundle,
                                             learned.merges, learned.vocab, 6);
    std::vector<long> ids;
    for (const auto& line : translated.lines) {
      auto one = enc.encode(tokens_of(line));
      ids.insert(ids.end(), one.begin(), one.end());
    }
    scores.push_back(detect::score_sample(ids, detector));
    labels.push_back(s.label);
  }
  row.auc = detect::auc(scores, labels);
  return row;
}

Outcome criterion10() {
  Outcome out;
  const uint64_t seed = 1013;
  auto corpus = toy::gen_corpus(400, seed, 40);
  auto det_train = toy::gen_detection(20, seed + 1, true);
  auto det_test = toy::gen_detection(12, seed + 2, false);

  // flow-variant sweep
  std::vector<AblationRow> rows;
  struct Vc {
    const char* name;
    flow::Variant v;
    long k;
  };
  for (const Vc& vc : std::initializer_list<Vc>{{"3-scf", flow::Variant::Scf, 3},
                                                {"3-glow", flow::Variant::Glow, 3},
                                                {"5-scf", flow::Variant::Scf, 5},
                                                {"5-glow", flow::Variant::Glow, 5},
                                                {"none", flow::Variant::None, 0}}) {
    rows.push_back(micro_pipeline(vc.name, corpus.train_a, corpus.train_b,
                                  corpus.heldout, det_train.samples, det_test.samples,
                                  vc.v, vc.k, seed));
  }
  std::vector<std::string> lines{"variant bleu auc"};
  for (const auto& r : rows) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s %.4f %.4f", r.name.c_str(), r.bleu, r.auc);
    lines.emplace_back(buf);
    if (!std::isfinite(r.bleu) || !std::isfinite(r.auc) || r.bleu < 0 || r.bleu > 1 ||
        r.auc < 0 || r.auc > 1)
      out.fail("malformed row for " + r.name);
  }
  cfg::write_lines((g_artifacts / "ablation_flows.txt").string(), lines);

  // normalization-rule sweep: C1 all, C2 no R1, C3 no R2, C4 no R3, C5 none
  struct Rc {
    const char* name;
    frontend::Rules rules;
  };
  const Rc rule_cases[] = {{"C1", {true, true, true}},
                           {"C2", {false, true, true}},
                           {"C3", {true, false, true}},
                           {"C4", {true, true, false}},
                           {"C5", {false, false, false}}};
  // raw programs rendered once, re-normalized per case
  std::vector<toy::NeutralProgram> progs_a, progs_b, progs_h;
  for (long i = 0; i < 400; ++i) progs_a.push_back(toy::sample_program(i, seed + 3));
  for (long i = 400; i < 800; ++i) progs_b.push_back(toy::sample_program(i, seed + 3));
  for (long i = 800; i < 840; ++i) progs_h.push_back(toy::sample_program(i, seed + 3));
  auto normalize_side = [&](const std::vector<toy::NeutralProgram>& progs, bool toy_b,
                            const frontend::Rules& rules) {
    const auto& profile = frontend::builtin_profile(toy_b ? "TOY-B" : "TOY-A");
    auto parsed = frontend::parse_disassembly(
        toy::render_raw_dump(progs, toy_b, "ablate"), profile);
    std::vector<std::string> lines;
    for (const auto& block : parsed.blocks) {
      auto seq = frontend::normalize_block(block, profile, rules);
      lines.push_back(join(seq.tokens));
    }
    return lines;
  };
  std::vector<std::string> rlines{"case bleu auc"};
  for (const auto& rc : rule_cases) {
    auto ta = normalize_side(progs_a, false, rc.rules);
    auto tb = normalize_side(progs_b, true, rc.rules);
    auto ha = normalize_side(progs_h, false, rc.rules);
    auto hb = normalize_side(progs_h, true, rc.rules);
    std::vector<std::pair<std::string, std::string>> heldout;
    for (size_t i = 0; i < ha.size(); ++i) heldout.emplace_back(ha[i], hb[i]);
    // detection sets re-normalized under the same rules are approximated by
    // the standard sets here; the sweep only asserts completion + format.
    auto row = micro_pipeline(rc.name, ta, tb, heldout, det_train.samples,
                              det_test.samples, flow::Variant::Scf, 3, seed + 4);
    char buf[96];
    std::snprintf(buf, sizeof buf, "%s %.4f %.4f", rc.name, row.bleu, row.auc);
    rlines.emplace_back(buf);
    if (!std::isfinite(row.bleu) || !std::isfinite(row.auc))
      out.fail("malformed row for " + std::string(rc.name));
  }
  cfg::write_lines((g_artifacts / "ablation_rules.txt").string(), rlines);
  out.note("flow and rule sweeps completed, tables written");
  return out;
}

// ---------------------------------------------------------------- criterion 11

Outcome criterion11() {
  Outcome out;

  // 5: normalizer output is a pure function of its input (run twice)
  for (const auto& row : testdata::golden_rows()) {
    frontend::RawInstruction ins;
    std::istringstream ss(row.raw);
    ss >> ins.opcode;
    std::string w;
    while (ss >> w) ins.operands.push_back(w);
    auto a = frontend::normalize_instruction(ins, frontend::builtin_profile(row.isa));
    auto b = frontend::normalize_instruction(ins, frontend::builtin_profile(row.isa));
    if (a != b) out.fail("normalizer rerun differs");
  }

  // 6/7 upstream: corpora, BPE files and masking streams are seed-stable
  auto c1 = toy::gen_corpus(300, 4242, 20);
  auto c2 = toy::gen_corpus(300, 4242, 20);
  if (c1.train_a != c2.train_a || c1.train_b != c2.train_b || c1.heldout != c2.heldout)
    out.fail("gen_corpus rerun differs");
  auto l1 = bpe::learn_merges(c1.train_a, c1.train_b, 80);
  auto l2 = bpe::learn_merges(c2.train_a, c2.train_b, 80);
  if (bpe::merges_to_text(l1.merges) != bpe::merges_to_text(l2.merges) ||
      bpe::vocab_to_text(l1.vocab) != bpe::vocab_to_text(l2.vocab))
    out.fail("bpe rerun differs");

  // 8/9 path at reduced step count: two identical runs must produce
  // byte-identical checkpoints, metrics and downstream artifacts.
  auto run_once = [&](std::string tag) {
    bpe::Encoder enc(l1.merges, l1.vocab);
    auto ids_a = encode_lines(c1.train_a, enc);
    auto ids_b = encode_lines(c1.train_b, enc);
    model::ModelConfig mc;
    mc.d = 16;
    mc.nheads = 2;
    mc.nlayers = 1;
    mc.flow_depth = 2;
    Rng rng(4242, "model-init");
    auto bundle = model::make_bundle<float>(mc, l1.vocab.size(), rng);
    train::TrainingConfig tc;
    tc.batch_size = 2;
    tc.pretrain_steps = 5;
    tc.max_steps = 20;
    tc.bt_refresh_every = 1;
    tc.bt_gen_slack = 6;
    tc.loss_stop = 0.001;
    tc.seed = 4242;
    tc.lr = 1e-3;
    tc.warmup = 10;
    train::Trainer<float> trainer(bundle, l1.vocab, ids_a, ids_b, tc);
    trainer.pretrain();
    std::vector<std::string> metrics;
    trainer.train([&](const train::StepMetrics& m) {
      metrics.push_back(train::metrics_line(m));
    });
    std::string ckpt_bytes = ckpt::to_bytes(model::bundle_to_blobs(bundle));
    std::vector<std::string> a_lines;
    for (const auto& [a, b] : c1.heldout) a_lines.push_back(a);
    auto tr = eval::translate_binary(a_lines, "TOY-A", bundle, l1.merges, l1.vocab, 6);
    // detector over a small planted set
    auto det_set = toy::gen_detection(8, 4243, true);
    detect::DetectorConfig dc;
    dc.hidden = 8;
    dc.layers = 2;
    dc.batch = 8;
    dc.epochs = 3;
    dc.seed = 4242;
    Rng det_rng(4242, "det-init");
    auto detector = detect::make_detector<float>(bundle.tok_emb, dc, "TOY-B", det_rng);
    std::vector<detect::LabeledSample> train_set;
    for (const auto& s : det_set.samples) {
      detect::LabeledSample ls;
      for (const auto& line : s.blocks) {
        auto ids = enc.encode(tokens_of(line));
        ls.ids.insert(ls.ids.end(), ids.begin(), ids.end());
      }
      ls.label = s.label;
      train_set.push_back(std::move(ls));
    }
    auto dres = detect::train_detector(detector, train_set);
    std::string det_bytes = ckpt::to_bytes(detect::detector_to_blobs(detector));
    std::string all;
    for (const auto& m : metrics) all += m + "\n";
    all += ckpt_bytes;
    for (const auto& line : tr.lines) all += line + "\n";
    for (const auto& line : dres.epoch_log) all += line + "\n";
    all += det_bytes;
    (void)tag;
    return all;
  };
  std::string r1 = run_once("one");
  std::string r2 = run_once("two");
  if (r1 != r2) out.fail("training/translation/detector rerun differs");
  else out.note("repeated pipeline runs byte-identical");
  return out;
}

}  // namespace

int main() {
  std::filesystem::create_directories(g_artifacts);
  PipelineArtifacts art;
  ToyRecipe recipe;

  struct Entry {
    int id;
    const char* title;
    std::function<Outcome()> fn;
  };
  std::vector<Entry> entries = {
      {1, "flow correctness (round-trip, Jacobian determinant)", criterion1},
      {2, "MLE sanity on shifted Gaussian (d=8)", criterion2},
      {3, "gradient suite (primitives + composite losses)", criterion3},
      {4, "pooling and gating equation oracles", criterion4},
      {5, "normalizer golden suite (7 ISA profiles)", criterion5},
      {6, "BPE round-trip, merge oracle, size constraints", criterion6},
      {7, "MLM masking statistics", criterion7},
      {8, "end-to-end toy translation BLEU",
       [&] { return criterion8(art, recipe); }},
      {9, "end-to-end detection transfer AUC",
       [&] { return criterion9(art, recipe); }},
      {10, "ablation harness (flow variants, rule subsets)", criterion10},
      {11, "determinism of repeated runs", criterion11},
  };

  int failures = 0;
  for (auto& e : entries) {
    auto t0 = Clock::now();
    Outcome o;
    try {
      o = e.fn();
    } catch (const std::exception& ex) {
      o.fail(std::string("exception: ") + ex.what());
    }
    double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    std::printf("%s criterion-%d: %s [%.1fs]%s%s\n", o.pass ? "PASS" : "FAIL", e.id,
                e.title, secs, o.detail.empty() ? "" : " -- ", o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failures;
  }
  if (failures) std::printf("%d criterion(s) FAILED\n", failures);
  else std::printf("all 11 criteria PASSED\n");
  return failures == 0 ? 0 : 1;
}
