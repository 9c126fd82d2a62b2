#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include "fmtx/evalkit.hpp"

namespace fmtx::eval {

namespace {

std::vector<std::string> tokens_of(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  std::string w;
  while (ss >> w) out.push_back(w);
  return out;
}

std::map<std::string, long> ngram_counts(const std::vector<std::string>& toks, int n) {
  std::map<std::string, long> counts;
  if (static_cast<int>(toks.size()) < n) return counts;
  for (size_t i = 0; i + n <= toks.size(); ++i) {
    std::string key;
    for (int j = 0; j < n; ++j) {
      if (j) key += '\x1f';
      key += toks[i + j];
    }
    ++counts[key];
  }
  return counts;
}

}  // namespace

BleuReport corpus_bleu(const std::vector<std::string>& hypotheses,
                       const std::vector<std::string>& references) {
  if (hypotheses.size() != references.size())
    throw std::invalid_argument("bleu: " + std::to_string(hypotheses.size()) +
                                " hypotheses vs " + std::to_string(references.size()) +
                                " references");
  BleuReport r;
  long matched[4] = {0, 0, 0, 0};
  long total[4] = {0, 0, 0, 0};
  for (size_t i = 0; i < hypotheses.size(); ++i) {
    auto hyp = tokens_of(hypotheses[i]);
    auto ref = tokens_of(references[i]);
    r.hyp_tokens += static_cast<long>(hyp.size());
    r.ref_tokens += static_cast<long>(ref.size());
    for (int n = 1; n <= 4; ++n) {
      auto hc = ngram_counts(hyp, n);
      auto rc = ngram_counts(ref, n);
      for (const auto& [gram, count] : hc) {
        total[n - 1] += count;
        auto it = rc.find(gram);
        if (it != rc.end()) matched[n - 1] += std::min(count, it->second);
      }
    }
  }
  if (r.hyp_tokens == 0) {
    r.empty_hypothesis = true;
    r.bleu = 0;
    r.arith_mean = 0;
    r.brevity_penalty = 0;
    return r;
  }
  // Orders with no hypothesis n-grams at all (every line shorter than n) are
  // excluded; zero matches at a populated order smooth to 1e-9.
  double log_sum = 0, arith = 0;
  int orders = 0;
  for (int n = 0; n < 4; ++n) {
    if (total[n] == 0) continue;
    double p = static_cast<double>(matched[n]) / total[n];
    if (p <= 0) p = 1e-9;
    r.precisions[n] = p;
    log_sum += std::log(p);
    arith += p;
    ++orders;
  }
  r.brevity_penalty =
      r.hyp_tokens < r.ref_tokens
          ? std::exp(1.0 - static_cast<double>(r.ref_tokens) / r.hyp_tokens)
          : 1.0;
  r.bleu = orders ? r.brevity_penalty * std::exp(log_sum / orders) : 0.0;
  r.arith_mean = orders ? arith / orders : 0.0;
  return r;
}

std::string bleu_report_text(const BleuReport& r) {
  std::ostringstream os;
  char buf[64];
  auto put = [&](const char* k, double v) {
    std::snprintf(buf, sizeof buf, "%s=%.6f\n", k, v);
    os << buf;
  };
  put("bleu", r.bleu);
  put("arith_mean_precisions", r.arith_mean);
  put("p1", r.precisions[0]);
  put("p2", r.precisions[1]);
  put("p3", r.precisions[2]);
  put("p4", r.precisions[3]);
  put("brevity_penalty", r.brevity_penalty);
  os << "hyp_tokens=" << r.hyp_tokens << "\n";
  os << "ref_tokens=" << r.ref_tokens << "\n";
  os << "empty_hypothesis=" << (r.empty_hypothesis ? 1 : 0) << "\n";
  return os.str();
}

}  // namespace fmtx::eval
