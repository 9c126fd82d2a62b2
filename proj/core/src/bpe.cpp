#include "fmtx/bpe.hpp"

#include <algorithm>
#include <map>
#include <sstream>
#include <stdexcept>

#include "fmtx/frontend.hpp"

namespace fmtx::bpe {

namespace {

bool is_atomic_symbol(const std::string& w) {
  return frontend::is_placeholder(w) || w == kBos || w == kMask || w == kPad ||
         w == kUnk || w == kSep;
}

// Initial symbolization of one word: placeholders embedded in compound
// operand tokens stay atomic, everything else splits into characters.
std::vector<std::string> symbolize(const std::string& word) {
  if (is_atomic_symbol(word)) return {word};
  std::vector<std::string> out;
  size_t i = 0;
  while (i < word.size()) {
    if (word[i] == '<') {
      size_t close = word.find('>', i);
      if (close != std::string::npos &&
          frontend::is_placeholder(word.substr(i, close - i + 1))) {
        out.push_back(word.substr(i, close - i + 1));
        i = close + 1;
        continue;
      }
    }
    out.push_back(std::string(1, word[i]));
    ++i;
  }
  return out;
}

void apply_merge(std::vector<std::string>& syms, const std::string& left,
                 const std::string& right) {
  size_t w = 0;
  for (size_t r = 0; r < syms.size();) {
    if (r + 1 < syms.size() && syms[r] == left && syms[r + 1] == right) {
      syms[w++] = left + right;
      r += 2;
    } else {
      if (w != r) syms[w] = std::move(syms[r]);
      ++w;
      ++r;
    }
  }
  syms.resize(w);
}

std::vector<std::string> split_words(const std::string& line) {
  std::vector<std::string> words;
  std::istringstream ss(line);
  std::string w;
  while (ss >> w) words.push_back(w);
  return words;
}

// Distinct words with occurrence counts over a corpus.
std::map<std::string, long> word_counts(const std::vector<std::string>& corpus) {
  std::map<std::string, long> counts;
  for (const auto& line : corpus)
    for (const auto& w : split_words(line)) ++counts[w];
  return counts;
}

std::vector<std::string> apply_merges_prefix(const std::string& word,
                                             const MergeTable& table, long count) {
  auto syms = symbolize(word);
  for (long i = 0; i < count && i < table.merge_count(); ++i)
    apply_merge(syms, table.merges[i].first, table.merges[i].second);
  return syms;
}

}  // namespace

LearnResult learn_merges(const std::vector<std::string>& corpus_src,
                         const std::vector<std::string>& corpus_tgt,
                         long merge_count) {
  if (merge_count < 0) throw std::invalid_argument("learn_merges: negative count");
  if (corpus_src.empty() || corpus_tgt.empty())
    throw std::invalid_argument("learn_merges: empty corpus");

  auto src_counts = word_counts(corpus_src);
  auto tgt_counts = word_counts(corpus_tgt);

  // Joint learning over the concatenation: distinct words with summed counts.
  struct Word {
    std::vector<std::string> syms;
    long count;
  };
  std::map<std::string, long> joint;
  for (auto& [w, c] : src_counts) joint[w] += c;
  for (auto& [w, c] : tgt_counts) joint[w] += c;
  std::vector<Word> words;
  words.reserve(joint.size());
  for (auto& [w, c] : joint) words.push_back({symbolize(w), c});

  LearnResult out;
  for (long step = 0; step < merge_count; ++step) {
    std::map<std::pair<std::string, std::string>, long> pairs;
    for (const auto& w : words)
      for (size_t i = 0; i + 1 < w.syms.size(); ++i)
        pairs[{w.syms[i], w.syms[i + 1]}] += w.count;
    if (pairs.empty()) break;
    // Highest count; ties resolve to the lexicographically smallest pair,
    // which std::map iteration order provides for free.
    auto best = pairs.begin();
    for (auto it = pairs.begin(); it != pairs.end(); ++it)
      if (it->second > best->second) best = it;
    out.merges.merges.push_back(best->first);
    for (auto& w : words) apply_merge(w.syms, best->first.first, best->first.second);
  }

  // Vocabulary: specials, then every merge product and every symbol observed
  // in either merged corpus (sorted for dense deterministic ids). Merge
  // products are kept even when later merges absorb them, since encoding
  // unseen words can still produce them.
  std::map<std::string, bool> observed;  // symbol -> seen in src/tgt pass below
  std::vector<std::string> symbols;
  auto note = [&](const std::string& s) {
    if (!observed.count(s)) observed[s] = true;
  };
  for (const auto& w : words)
    for (const auto& s : w.syms) note(s);
  for (const auto& [l, r] : out.merges.merges) note(l + r);

  JointVocabulary& v = out.vocab;
  auto add = [&](const std::string& s) {
    long id = v.size();
    v.symbol_to_id.emplace(s, id);
    v.id_to_symbol.push_back(s);
    return id;
  };
  v.bos_id = add(kBos);
  v.mask_id = add(kMask);
  v.pad_id = add(kPad);
  v.unk_id = add(kUnk);
  v.sep_id = add(kSep);
  for (const auto& [s, _] : observed)
    if (!v.symbol_to_id.count(s)) add(s);

  // Per-side sizes: distinct symbols in each side's corpus after all merges.
  auto side_size = [&](const std::map<std::string, long>& counts) {
    std::map<std::string, bool> seen;
    for (const auto& [w, _] : counts)
      for (const auto& s : apply_merges_prefix(w, out.merges, out.merges.merge_count()))
        seen[s] = true;
    return static_cast<long>(seen.size());
  };
  v.src_vocab_size = side_size(src_counts);
  v.tgt_vocab_size = side_size(tgt_counts);
  v.joint_size = static_cast<long>(observed.size());
  return out;
}

bool check_size_constraints(long v_src, long v_tgt, double* discrepancy_out) {
  long mx = std::max(v_src, v_tgt);
  double disc = mx == 0 ? 0.0 : static_cast<double>(std::abs(v_src - v_tgt)) / mx;
  if (discrepancy_out) *discrepancy_out = disc;
  return disc < 0.15 && mx < 12000;
}

std::string MergeSelection::report() const {
  std::ostringstream os;
  for (const auto& r : rows) {
    os << "candidate=" << r.candidate << " v_src=" << r.v_src
       << " v_tgt=" << r.v_tgt << " joint=" << r.joint << " discrepancy=";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", r.discrepancy);
    os << buf;
    if (r.pass_discrepancy && r.pass_cap)
      os << " result=pass";
    else
      os << " result=fail(" << (!r.pass_discrepancy ? "discrepancy" : "")
         << (!r.pass_discrepancy && !r.pass_cap ? "," : "")
         << (!r.pass_cap ? "cap" : "") << ")";
    os << "\n";
  }
  os << "chosen=" << chosen << "\n";
  return os.str();
}

MergeSelection select_merge_count(const std::vector<std::string>& corpus_src,
                                  const std::vector<std::string>& corpus_tgt,
                                  std::vector<long> candidates) {
  if (candidates.empty())
    throw std::invalid_argument("select_merge_count: no candidates");
  std::sort(candidates.begin(), candidates.end());
  long max_c = candidates.back();
  // The first N merges of a larger table equal the N-merge table, so learn
  // once at the largest candidate and evaluate prefixes.
  LearnResult full = learn_merges(corpus_src, corpus_tgt, max_c);

  auto src_counts = word_counts(corpus_src);
  auto tgt_counts = word_counts(corpus_tgt);
  auto side_size = [&](const std::map<std::string, long>& counts, long c) {
    std::map<std::string, bool> seen;
    for (const auto& [w, _] : counts)
      for (const auto& s : apply_merges_prefix(w, full.merges, c)) seen[s] = true;
    return static_cast<long>(seen.size());
  };

  MergeSelection sel;
  for (long c : candidates) {
    CandidateReport r;
    r.candidate = c;
    r.v_src = side_size(src_counts, c);
    r.v_tgt = side_size(tgt_counts, c);
    std::map<std::string, bool> joint;
    for (const auto& [w, _] : src_counts)
      for (const auto& s : apply_merges_prefix(w, full.merges, c)) joint[s] = true;
    for (const auto& [w, _] : tgt_counts)
      for (const auto& s : apply_merges_prefix(w, full.merges, c)) joint[s] = true;
    r.joint = static_cast<long>(joint.size());
    check_size_constraints(r.v_src, r.v_tgt, &r.discrepancy);
    r.pass_discrepancy = r.discrepancy < 0.15;
    r.pass_cap = std::max(r.v_src, r.v_tgt) < 12000;
    if (r.pass_discrepancy && r.pass_cap) sel.chosen = c;
    sel.rows.push_back(r);
  }
  if (sel.chosen < 0)
    throw std::runtime_error("select_merge_count: no candidate satisfies the "
                             "size constraints\n" + sel.report());
  return sel;
}

std::vector<long> encode_block(const std::vector<std::string>& tokens,
                               const MergeTable& merges,
                               const JointVocabulary& vocab) {
  Encoder enc(merges, vocab);
  return enc.encode(tokens);
}

std::vector<long> Encoder::encode(const std::vector<std::string>& tokens) {
  std::vector<long> ids;
  ids.push_back(vocab_->bos_id);
  bool first = true;
  for (const auto& word : tokens) {
    if (!first) ids.push_back(vocab_->sep_id);
    first = false;
    auto it = word_cache_.find(word);
    if (it == word_cache_.end()) {
      std::vector<long> wids;
      auto syms = symbolize(word);
      for (const auto& [l, r] : merges_->merges) apply_merge(syms, l, r);
      for (const auto& s : syms) wids.push_back(vocab_->id_of(s));
      it = word_cache_.emplace(word, std::move(wids)).first;
    }
    ids.insert(ids.end(), it->second.begin(), it->second.end());
  }
  ids.push_back(vocab_->bos_id);
  if (static_cast<long>(ids.size()) > kMaxEncodedLen) {
    ids.resize(kMaxEncodedLen);
    ids.back() = vocab_->bos_id;
  }
  return ids;
}

std::vector<std::string> decode_tokens(const std::vector<long>& ids,
                                       const JointVocabulary& vocab) {
  std::vector<std::string> tokens;
  std::string word;
  bool word_open = false;
  auto flush = [&]() {
    if (word_open && !word.empty()) tokens.push_back(word);
    word.clear();
    word_open = false;
  };
  for (long id : ids) {
    if (id < 0 || id >= vocab.size())
      throw std::out_of_range("decode: id " + std::to_string(id) +
                              " outside vocabulary of " + std::to_string(vocab.size()));
    if (id == vocab.bos_id || id == vocab.pad_id) continue;
    if (id == vocab.sep_id) {
      flush();
      continue;
    }
    word += vocab.id_to_symbol[id];
    word_open = true;
  }
  flush();
  return tokens;
}

std::string merges_to_text(const MergeTable& m) {
  std::ostringstream os;
  for (const auto& [l, r] : m.merges) os << l << ' ' << r << '\n';
  return os.str();
}

MergeTable merges_from_text(const std::string& text) {
  MergeTable m;
  std::istringstream in(text);
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string l, r, extra;
    if (!(ls >> l >> r) || (ls >> extra))
      throw std::runtime_error("merge table line " + std::to_string(lineno) +
                               ": expected 'left right'");
    m.merges.emplace_back(l, r);
  }
  return m;
}

std::string vocab_to_text(const JointVocabulary& v) {
  std::ostringstream os;
  for (long id = 0; id < v.size(); ++id) os << v.id_to_symbol[id] << ' ' << id << '\n';
  return os.str();
}

JointVocabulary vocab_from_text(const std::string& text) {
  JointVocabulary v;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string sym;
    long id;
    if (!(ls >> sym >> id))
      throw std::runtime_error("vocab line malformed: " + line);
    if (id != v.size())
      throw std::runtime_error("vocab ids must be dense from 0, got " + line);
    v.symbol_to_id.emplace(sym, id);
    v.id_to_symbol.push_back(sym);
    if (sym == kBos) v.bos_id = id;
    else if (sym == kMask) v.mask_id = id;
    else if (sym == kPad) v.pad_id = id;
    else if (sym == kUnk) v.unk_id = id;
    else if (sym == kSep) v.sep_id = id;
  }
  for (long special : {v.bos_id, v.mask_id, v.pad_id, v.unk_id, v.sep_id})
    if (special < 0)
      throw std::runtime_error("vocab file is missing a special token");
  return v;
}

}  // namespace fmtx::bpe
