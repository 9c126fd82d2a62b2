#include "fmtx/toyisa.hpp"

#include <sstream>
#include <stdexcept>

#include "fmtx/frontend.hpp"
#include "fmtx/rng.hpp"

namespace fmtx::toy {

namespace {

const char* kSymbols[] = {"crc32_update", "gz_open", "buf_fill",
                          "log_emit",     "sum_fold", "tbl_scan"};
constexpr int kSymbolCount = 6;

std::string areg(int r) { return "a" + std::to_string(r); }
std::string breg(int r) { return "b" + std::to_string(r); }

std::string hex_of(int v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "0x%X", v);
  return buf;
}

// Raw instruction forms (literals intact). One op may render to two
// instructions in TOY-B.
std::vector<frontend::RawInstruction> raw_ops(const NeutralOp& op, bool toy_b) {
  using RI = frontend::RawInstruction;
  auto reg = [&](int r) { return toy_b ? breg(r) : areg(r); };
  std::vector<RI> out;
  switch (op.kind) {
    case NeutralOp::Kind::Move:
      out.push_back({toy_b ? "copy" : "mv", {reg(op.rd), reg(op.ra)}});
      break;
    case NeutralOp::Kind::LoadImm:
      out.push_back({toy_b ? "set" : "li", {reg(op.rd), std::to_string(op.imm)}});
      break;
    case NeutralOp::Kind::Add:
      if (toy_b) {
        out.push_back({"copy", {reg(op.rd), reg(op.ra)}});
        out.push_back({"acc", {reg(op.rd), reg(op.rb)}});
      } else {
        out.push_back({"add", {reg(op.rd), reg(op.ra), reg(op.rb)}});
      }
      break;
    case NeutralOp::Kind::Load:
      out.push_back({toy_b ? "fetch" : "ld",
                     {reg(op.rd), toy_b ? "(" + reg(op.ra) + "+" + hex_of(op.off) + ")"
                                        : "[" + reg(op.ra) + "+" + hex_of(op.off) + "]"}});
      break;
    case NeutralOp::Kind::Store:
      out.push_back({toy_b ? "stash" : "st",
                     {reg(op.rd), toy_b ? "(" + reg(op.ra) + "+" + hex_of(op.off) + ")"
                                        : "[" + reg(op.ra) + "+" + hex_of(op.off) + "]"}});
      break;
    case NeutralOp::Kind::Call:
      out.push_back({toy_b ? "invoke" : "call", {kSymbols[op.sym]}});
      break;
    case NeutralOp::Kind::Jump: {
      char buf[16];
      std::snprintf(buf, sizeof buf, "loc_%X", op.label);
      out.push_back({toy_b ? "go" : "jmp", {buf}});
      break;
    }
    case NeutralOp::Kind::Guard:
      out.push_back({toy_b ? "probe" : "xchk", {reg(op.rd)}});
      break;
  }
  return out;
}

}  // namespace

NeutralProgram sample_program(long id, uint64_t seed, double guard_rate,
                              long min_ops, long max_ops) {
  Rng rng(seed, "toy/program", static_cast<uint64_t>(id));
  NeutralProgram p;
  p.id = id;
  long n = min_ops + static_cast<long>(rng.uniform_int(max_ops - min_ops + 1));
  for (long i = 0; i < n; ++i) {
    NeutralOp op;
    double u = rng.uniform();
    if (guard_rate > 0 && u < guard_rate) {
      op.kind = NeutralOp::Kind::Guard;
    } else {
      double v = rng.uniform();
      if (v < 0.22) op.kind = NeutralOp::Kind::Move;
      else if (v < 0.44) op.kind = NeutralOp::Kind::LoadImm;
      else if (v < 0.60) op.kind = NeutralOp::Kind::Add;
      else if (v < 0.74) op.kind = NeutralOp::Kind::Load;
      else if (v < 0.86) op.kind = NeutralOp::Kind::Store;
      else if (v < 0.94) op.kind = NeutralOp::Kind::Call;
      else op.kind = NeutralOp::Kind::Jump;
    }
    op.rd = static_cast<int>(rng.uniform_int(8));
    op.ra = static_cast<int>(rng.uniform_int(8));
    op.rb = static_cast<int>(rng.uniform_int(8));
    op.imm = static_cast<int>(rng.uniform_int(100));
    op.off = 8 + static_cast<int>(rng.uniform_int(248));
    op.sym = static_cast<int>(rng.uniform_int(kSymbolCount));
    op.label = 0x100 + static_cast<int>(rng.uniform_int(0xF00));
    p.ops.push_back(op);
  }
  return p;
}

std::vector<std::string> render_normalized(const NeutralProgram& p, bool toy_b) {
  const auto& profile = frontend::builtin_profile(toy_b ? kToyB : kToyA);
  std::vector<std::string> tokens;
  for (const auto& op : p.ops)
    for (const auto& ins : raw_ops(op, toy_b)) {
      auto toks = frontend::normalize_instruction(ins, profile);
      tokens.insert(tokens.end(), toks.begin(), toks.end());
    }
  return tokens;
}

std::string render_line(const NeutralProgram& p, bool toy_b) {
  auto toks = render_normalized(p, toy_b);
  std::string line;
  for (size_t i = 0; i < toks.size(); ++i) {
    if (i) line += ' ';
    line += toks[i];
  }
  return line;
}

std::string render_raw_dump(const std::vector<NeutralProgram>& programs, bool toy_b,
                            const std::string& binary_name) {
  std::ostringstream os;
  os << "## binary " << binary_name << ' ' << (toy_b ? kToyB : kToyA) << '\n';
  for (size_t i = 0; i < programs.size(); ++i) {
    os << "## block " << i << '\n';
    for (const auto& op : programs[i].ops)
      for (const auto& ins : raw_ops(op, toy_b)) {
        os << ins.opcode;
        for (size_t j = 0; j < ins.operands.size(); ++j)
          os << (j ? ", " : " ") << ins.operands[j];
        os << '\n';
      }
  }
  return os.str();
}

ToyCorpus gen_corpus(long count_per_side, uint64_t seed, long heldout_count) {
  if (count_per_side <= 0) throw std::invalid_argument("gen_corpus: count must be > 0");
  ToyCorpus out;
  for (long i = 0; i < count_per_side; ++i) {
    NeutralProgram p = sample_program(i, seed);
    out.train_a.push_back(render_line(p, false));
    out.ids_a.push_back(i);
  }
  for (long i = count_per_side; i < 2 * count_per_side; ++i) {
    NeutralProgram p = sample_program(i, seed);
    out.train_b.push_back(render_line(p, true));
    out.ids_b.push_back(i);
  }
  for (long i = 2 * count_per_side; i < 2 * count_per_side + heldout_count; ++i) {
    NeutralProgram p = sample_program(i, seed);
    out.heldout.emplace_back(render_line(p, false), render_line(p, true));
  }
  return out;
}

namespace {

[[noreturn]] void reject(const std::string& what) {
  throw std::runtime_error("oracle_translate: unparseable block: " + what);
}

int parse_reg(const std::string& tok) {
  if (tok.size() != 2 || tok[0] != 'a' || tok[1] < '0' || tok[1] > '7')
    reject("bad register " + tok);
  return tok[1] - '0';
}

// "[aN+<HEX>]" -> base register
int parse_mem(const std::string& tok) {
  if (tok.size() != 10 || tok.front() != '[' || tok.back() != ']' ||
      tok.compare(3, 6, "+<HEX>") != 0)
    reject("bad memory operand " + tok);
  return parse_reg(tok.substr(1, 2));
}

}  // namespace

std::vector<std::string> oracle_translate(const std::vector<std::string>& a) {
  std::vector<NeutralOp> ops;
  size_t i = 0;
  auto need = [&](size_t k) {
    if (i + k > a.size()) reject("truncated at token " + std::to_string(i));
  };
  while (i < a.size()) {
    const std::string& op = a[i];
    NeutralOp n;
    if (op == "mv") {
      need(3);
      n.kind = NeutralOp::Kind::Move;
      n.rd = parse_reg(a[i + 1]);
      n.ra = parse_reg(a[i + 2]);
      i += 3;
    } else if (op == "li") {
      need(3);
      if (a[i + 2] != "<VALUE>") reject(a[i + 2]);
      n.kind = NeutralOp::Kind::LoadImm;
      n.rd = parse_reg(a[i + 1]);
      i += 3;
    } else if (op == "add") {
      need(4);
      n.kind = NeutralOp::Kind::Add;
      n.rd = parse_reg(a[i + 1]);
      n.ra = parse_reg(a[i + 2]);
      n.rb = parse_reg(a[i + 3]);
      i += 4;
    } else if (op == "ld" || op == "st") {
      need(3);
      n.kind = op == "ld" ? NeutralOp::Kind::Load : NeutralOp::Kind::Store;
      n.rd = parse_reg(a[i + 1]);
      n.ra = parse_mem(a[i + 2]);
      i += 3;
    } else if (op == "call") {
      need(2);
      if (a[i + 1] != "<FUNC>") reject(a[i + 1]);
      n.kind = NeutralOp::Kind::Call;
      i += 2;
    } else if (op == "jmp") {
      need(2);
      if (a[i + 1] != "<LOC>") reject(a[i + 1]);
      n.kind = NeutralOp::Kind::Jump;
      i += 2;
    } else if (op == "xchk") {
      need(2);
      n.kind = NeutralOp::Kind::Guard;
      n.rd = parse_reg(a[i + 1]);
      i += 2;
    } else {
      reject(op);
    }
    ops.push_back(n);
  }
  if (ops.empty()) reject("empty block");

  // Re-render in TOY-B at the normalized level (literals are placeholders).
  std::vector<std::string> out;
  auto emit = [&](std::initializer_list<std::string> toks) {
    out.insert(out.end(), toks.begin(), toks.end());
  };
  for (const auto& n : ops) {
    switch (n.kind) {
      case NeutralOp::Kind::Move: emit({"copy", breg(n.rd), breg(n.ra)}); break;
      case NeutralOp::Kind::LoadImm: emit({"set", breg(n.rd), "<VALUE>"}); break;
      case NeutralOp::Kind::Add:
        emit({"copy", breg(n.rd), breg(n.ra)});
        emit({"acc", breg(n.rd), breg(n.rb)});
        break;
      case NeutralOp::Kind::Load:
        emit({"fetch", breg(n.rd), "(" + breg(n.ra) + "+<HEX>)"});
        break;
      case NeutralOp::Kind::Store:
        emit({"stash", breg(n.rd), "(" + breg(n.ra) + "+<HEX>)"});
        break;
      case NeutralOp::Kind::Call: emit({"invoke", "<FUNC>"}); break;
      case NeutralOp::Kind::Jump: emit({"go", "<LOC>"}); break;
      case NeutralOp::Kind::Guard: emit({"probe", breg(n.rd)}); break;
    }
  }
  return out;
}

std::string oracle_translate_line(const std::string& a_line) {
  std::istringstream ss(a_line);
  std::vector<std::string> toks;
  std::string w;
  while (ss >> w) toks.push_back(w);
  auto out = oracle_translate(toks);
  std::string line;
  for (size_t i = 0; i < out.size(); ++i) {
    if (i) line += ' ';
    line += out[i];
  }
  return line;
}

DetectionSet gen_detection(long per_class, uint64_t seed, bool toy_b) {
  DetectionSet set;
  Rng layout(seed, "toy/detect-layout");
  long next_id = 5000000;  // clear of translation-corpus program ids
  for (long s = 0; s < 2 * per_class; ++s) {
    bool malicious = s % 2 == 1;
    DetectionSample sample;
    sample.label = malicious ? 1 : 0;
    sample.id = s;
    long blocks = 4 + static_cast<long>(layout.uniform_int(7));
    for (long b = 0; b < blocks; ++b) {
      NeutralProgram p = sample_program(next_id++, seed, /*guard_rate=*/0.0);
      sample.blocks.push_back(render_line(p, toy_b));
    }
    if (malicious) {
      long hot = 2 + static_cast<long>(layout.uniform_int(3));
      for (long b = 0; b < hot; ++b) {
        NeutralProgram p = sample_program(next_id++, seed, /*guard_rate=*/0.45,
                                          /*min_ops=*/6, /*max_ops=*/20);
        bool has_guard = false;
        for (const auto& op : p.ops)
          if (op.kind == NeutralOp::Kind::Guard) has_guard = true;
        if (!has_guard) {
          NeutralOp g;
          g.kind = NeutralOp::Kind::Guard;
          g.rd = static_cast<int>(layout.uniform_int(8));
          p.ops.push_back(g);
        }
        long pos = static_cast<long>(layout.uniform_int(sample.blocks.size() + 1));
        sample.blocks.insert(sample.blocks.begin() + pos, render_line(p, toy_b));
      }
    }
    set.samples.push_back(std::move(sample));
  }
  return set;
}

}  // namespace fmtx::toy
