#pragma once

#include <sstream>
#include <string>
#include <vector>

#include "fmtx/bpe.hpp"
#include "fmtx/frontend.hpp"
#include "fmtx/seq_model.hpp"
#include "fmtx/trainer.hpp"

namespace fmtx::eval {

struct BleuReport {
  double bleu = 0;            // geometric mean of p1..p4 times brevity penalty
  double arith_mean = 0;      // plain average of p1..p4 (no brevity penalty)
  double precisions[4] = {0, 0, 0, 0};
  double brevity_penalty = 1;
  long hyp_tokens = 0, ref_tokens = 0;
  bool empty_hypothesis = false;
};

// Corpus-level BLEU with clipped modified n-gram precisions for n=1..4.
// Zero precisions are smoothed with 1e-9; an all-empty hypothesis corpus
// scores 0 with the flag set.
BleuReport corpus_bleu(const std::vector<std::string>& hypotheses,
                       const std::vector<std::string>& references);

std::string bleu_report_text(const BleuReport& r);

struct TranslateResult {
  std::vector<std::string> lines;  // one translated block per input block
  long failures = 0;               // blocks that produced no usable output
};

// Whole-binary translation: each block is encoded, its latent moved through
// the flow pair, and decoded in the other ISA; order is preserved and the
// concatenation of lines forms the translated binary.
template <class T>
TranslateResult translate_binary(const std::vector<std::string>& block_lines,
                                 const std::string& from_isa,
                                 const model::ModelBundle<T>& bundle,
                                 const bpe::MergeTable& merges,
                                 const bpe::JointVocabulary& vocab,
                                 long gen_slack = 32) {
  TranslateResult out;
  bpe::Encoder enc(merges, vocab);
  const std::string to_isa =
      bundle.is_src(from_isa) ? bundle.cfg.isa_tgt : bundle.cfg.isa_src;
  for (const auto& line : block_lines) {
    std::istringstream ss(line);
    std::vector<std::string> toks;
    std::string w;
    while (ss >> w) toks.push_back(w);
    try {
      auto ids = enc.encode(toks);
      auto synth = train::bt_synthesize(ids, from_isa, bundle, vocab.bos_id, gen_slack);
      auto words = bpe::decode_tokens(synth, vocab);
      std::string joined;
      for (size_t i = 0; i < words.size(); ++i) {
        if (i) joined += ' ';
        joined += words[i];
      }
      if (joined.empty()) ++out.failures;
      out.lines.push_back(std::move(joined));
    } catch (const std::exception&) {
      ++out.failures;
      out.lines.emplace_back();
    }
  }
  return out;
}

// One line per token: the token followed by its d embedding components,
// printed with enough digits to reproduce the float bits.
template <class T>
std::vector<std::string> export_embeddings(const model::ModelBundle<T>& bundle,
                                           const bpe::JointVocabulary& vocab,
                                           bool opcode_only,
                                           const std::vector<const frontend::IsaProfile*>&
                                               profiles = {}) {
  std::vector<std::string> lines;
  long d = bundle.cfg.d;
  for (long id = 0; id < vocab.size(); ++id) {
    const std::string& tok = vocab.id_to_symbol[id];
    if (opcode_only) {
      bool is_opcode = false;
      for (const auto* p : profiles)
        if (p && p->mnemonics.count(tok)) is_opcode = true;
      if (!is_opcode) continue;
    }
    std::string line = tok;
    char buf[32];
    for (long j = 0; j < d; ++j) {
      std::snprintf(buf, sizeof buf, " %.9g",
                    static_cast<double>(bundle.tok_emb.values()[id * d + j]));
      line += buf;
    }
    lines.push_back(std::move(line));
  }
  return lines;
}

}  // namespace fmtx::eval
