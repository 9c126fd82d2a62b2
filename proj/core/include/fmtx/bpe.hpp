#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace fmtx::bpe {

inline constexpr long kMaxEncodedLen = 512;

inline constexpr const char* kBos = "[/s]";
inline constexpr const char* kMask = "[MASK]";
inline constexpr const char* kPad = "[PAD]";
inline constexpr const char* kUnk = "[UNK]";
inline constexpr const char* kSep = "<sep>";  // word boundary inside encoded blocks

struct MergeTable {
  std::vector<std::pair<std::string, std::string>> merges;  // applied in order
  long merge_count() const { return static_cast<long>(merges.size()); }
};

struct JointVocabulary {
  std::unordered_map<std::string, long> symbol_to_id;
  std::vector<std::string> id_to_symbol;
  long bos_id = -1, mask_id = -1, pad_id = -1, unk_id = -1, sep_id = -1;
  long src_vocab_size = 0;  // distinct corpus symbols per side, specials excluded
  long tgt_vocab_size = 0;
  long joint_size = 0;

  long size() const { return static_cast<long>(id_to_symbol.size()); }
  long id_of(const std::string& symbol) const {
    auto it = symbol_to_id.find(symbol);
    return it == symbol_to_id.end() ? unk_id : it->second;
  }
  bool is_special(long id) const {
    return id == bos_id || id == mask_id || id == pad_id || id == unk_id ||
           id == sep_id;
  }
};

struct LearnResult {
  MergeTable merges;
  JointVocabulary vocab;
};

// Joint BPE over the concatenation of both corpora (one merge table, one
// vocabulary per ISA pair). Placeholder tokens and specials are atomic.
// Frequency ties break lexicographically on (left, right).
LearnResult learn_merges(const std::vector<std::string>& corpus_src,
                         const std::vector<std::string>& corpus_tgt,
                         long merge_count);

struct CandidateReport {
  long candidate = 0;
  long v_src = 0, v_tgt = 0, joint = 0;
  double discrepancy = 0;
  bool pass_discrepancy = false;
  bool pass_cap = false;
};

struct MergeSelection {
  long chosen = -1;
  std::vector<CandidateReport> rows;
  std::string report() const;
};

// Evaluates the vocabulary-size constraints (<15% discrepancy between the
// two sides, each side <12k) per candidate and returns the largest candidate
// satisfying both; throws with the full report when none does.
MergeSelection select_merge_count(const std::vector<std::string>& corpus_src,
                                  const std::vector<std::string>& corpus_tgt,
                                  std::vector<long> candidates);

bool check_size_constraints(long v_src, long v_tgt, double* discrepancy_out = nullptr);

// [/s] framed, split per merges, unknown symbols -> [UNK]; results longer
// than kMaxEncodedLen are truncated with the final [/s] preserved.
std::vector<long> encode_block(const std::vector<std::string>& tokens,
                               const MergeTable& merges,
                               const JointVocabulary& vocab);

// Inverse of encode: rejoins subwords, strips [/s]/[PAD]. Out-of-range ids.
// are rejected.
std::vector<std::string> decode_tokens(const std::vector<long>& ids,
                                       const JointVocabulary& vocab);

// Stateful encoder caching per-word splits (encoding is pure; the cache is
// an optimization for corpus-scale encoding).
class Encoder {
 public:
  Encoder(const MergeTable& merges, const JointVocabulary& vocab)
      : merges_(&merges), vocab_(&vocab) {}
  std::vector<long> encode(const std::vector<std::string>& tokens);

 private:
  const MergeTable* merges_;
  const JointVocabulary* vocab_;
  std::unordered_map<std::string, std::vector<long>> word_cache_;
};

// File formats: merge table is "left right" per line (order significant);
// vocabulary is "symbol id" per line. UTF-8, LF.
std::string merges_to_text(const MergeTable& m);
MergeTable merges_from_text(const std::string& text);
std::string vocab_to_text(const JointVocabulary& v);
JointVocabulary vocab_from_text(const std::string& text);

}  // namespace fmtx::bpe
