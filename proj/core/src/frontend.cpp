#include "fmtx/frontend.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace fmtx::frontend {

namespace {

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

bool is_ident_start(char c) {
  return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '$' || c == '.';
}
bool is_ident_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '$' || c == '.';
}
bool is_hex_digit(char c) { return std::isxdigit(static_cast<unsigned char>(c)); }
bool is_dec_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)); }

}  // namespace

const std::unordered_set<std::string>& placeholder_set() {
  static const std::unordered_set<std::string> kSet = {
      "<FUNC>", "<VALUE>", "<HEX>", "<LOC>", "<OFF>",
      "<SEG>",  "<VAR>",   "<STR>", "<TAG>", "<ADDR>"};
  return kSet;
}

bool is_placeholder(const std::string& token) {
  return placeholder_set().count(token) > 0;
}

void IsaProfile::validate() const {
  std::unordered_set<std::string> keys;
  for (const auto& [prefix, ph] : dummy_prefixes) {
    if (!is_placeholder(ph))
      throw std::invalid_argument("profile " + isa + ": prefix " + prefix +
                                  " maps outside the placeholder set: " + ph);
    if (!keys.insert(prefix).second)
      throw std::invalid_argument("profile " + isa + ": duplicate prefix " + prefix);
  }
}

Rules parse_rules(const std::string& spec) {
  if (spec.empty() || lower(spec) == "all") return Rules::all();
  Rules r = Rules::none();
  if (lower(spec) == "none") return r;
  std::stringstream ss(spec);
  std::string part;
  while (std::getline(ss, part, ',')) {
    std::string p = lower(part);
    if (p == "r1") r.r1 = true;
    else if (p == "r2") r.r2 = true;
    else if (p == "r3") r.r3 = true;
    else throw std::invalid_argument("unknown rule: " + part);
  }
  return r;
}

namespace {

struct Lit {
  size_t len = 0;
  bool hex = false;
};

// Attempts to read a numeric literal at s[pos] under the profile's syntax.
Lit match_literal(const std::string& s, size_t pos, const IsaProfile& p) {
  size_t i = pos;
  bool hashed = false;
  if (i < s.size() && s[i] == '#' && (p.allow_hash_prefix || p.hash_imm_is_hex ||
                                      p.hash_imm_is_value)) {
    hashed = true;
    ++i;
  }
  if (i >= s.size()) return {};
  // $-prefixed hex (m68k style)
  if (p.hex_dollar && s[i] == '$') {
    size_t j = i + 1;
    while (j < s.size() && is_hex_digit(s[j])) ++j;
    if (j > i + 1) return {j - pos, true};
  }
  // 0x-prefixed hex, optional trailing h
  if (p.hex_prefix_0x && s[i] == '0' && i + 1 < s.size() &&
      (s[i + 1] == 'x' || s[i + 1] == 'X')) {
    size_t j = i + 2;
    while (j < s.size() && is_hex_digit(s[j])) ++j;
    if (j > i + 2) {
      if (j < s.size() && (s[j] == 'h' || s[j] == 'H')) ++j;
      return {j - pos, true};
    }
  }
  // suffix-h hex: leading digit, hex digits, then h
  if (!hashed && p.hex_suffix_h && is_dec_digit(s[i])) {
    size_t j = i;
    while (j < s.size() && is_hex_digit(s[j])) ++j;
    if (j > i && j < s.size() && (s[j] == 'h' || s[j] == 'H'))
      return {j + 1 - pos, true};
  }
  // plain decimal (or a bare # immediate)
  if (is_dec_digit(s[i])) {
    size_t j = i;
    while (j < s.size() && is_dec_digit(s[j])) ++j;
    if (hashed && !(p.hash_imm_is_hex || p.hash_imm_is_value)) return {};
    return {j - pos, hashed && p.hash_imm_is_hex};
  }
  return {};
}

std::string classify_identifier(const std::string& word, const IsaProfile& p,
                                const Rules& rules, bool call_position) {
  std::string lo = lower(word);
  if (p.registers.count(lo) || p.keywords.count(lo)) return word;
  if (rules.r1)
    for (const auto& [prefix, ph] : p.dummy_prefixes)
      if (word.rfind(prefix, 0) == 0) return ph;
  if (rules.r2 && call_position) return "<FUNC>";
  if (rules.r1) return "<TAG>";
  return word;
}

// Rewrites one whitespace token sub-token by sub-token, keeping structure.
std::string normalize_token(const std::string& tok, const IsaProfile& p,
                            const Rules& rules, bool call_position) {
  std::string out;
  size_t i = 0;
  while (i < tok.size()) {
    // Already-normalized placeholders pass through untouched.
    if (tok[i] == '<') {
      size_t close = tok.find('>', i);
      if (close != std::string::npos &&
          is_placeholder(tok.substr(i, close - i + 1))) {
        out += tok.substr(i, close - i + 1);
        i = close + 1;
        continue;
      }
    }
    Lit lit = match_literal(tok, i, p);
    if (lit.len > 0) {
      if (rules.r3)
        out += lit.hex ? "<HEX>" : "<VALUE>";
      else
        out += tok.substr(i, lit.len);
      i += lit.len;
      continue;
    }
    if (is_ident_start(tok[i])) {
      size_t j = i;
      while (j < tok.size() && is_ident_char(tok[j])) ++j;
      out += classify_identifier(tok.substr(i, j - i), p, rules, call_position);
      i = j;
      continue;
    }
    out += tok[i];
    ++i;
  }
  return out;
}

}  // namespace

std::vector<std::string> normalize_instruction(const RawInstruction& ins,
                                               const IsaProfile& profile,
                                               const Rules& rules) {
  bool call_position = false;
  if (profile.call_opcodes.count(lower(ins.opcode))) call_position = true;
  if (!profile.pc_registers.empty())
    for (const auto& op : ins.operands)
      if (profile.pc_registers.count(lower(op))) call_position = true;

  std::vector<std::string> tokens;
  tokens.push_back(ins.opcode);
  for (const auto& op : ins.operands)
    tokens.push_back(normalize_token(op, profile, rules, call_position));
  return tokens;
}

ParseResult parse_disassembly(const std::string& text, const IsaProfile& profile) {
  ParseResult result;
  std::istringstream in(text);
  std::string line;
  long lineno = 0;
  std::string binary_id = "-";
  bool in_block = false;
  Block current;

  auto flush = [&]() {
    if (!in_block) return;
    if (current.instructions.empty())
      result.warnings.push_back("block " + std::to_string(current.block_id) +
                                " in " + current.binary_id + " is empty, skipped");
    else
      result.blocks.push_back(std::move(current));
    current = Block{};
    in_block = false;
  };

  while (std::getline(in, line)) {
    ++lineno;
    while (!line.empty() && (line.back() == '\r' || line.back() == '\n')) line.pop_back();
    std::istringstream ls(line);
    std::vector<std::string> parts;
    std::string w;
    while (ls >> w) parts.push_back(w);
    if (parts.empty()) continue;

    if (parts[0] == "##") {
      if (parts.size() >= 2 && parts[1] == "block") {
        if (parts.size() != 3 ||
            parts[2].find_first_not_of("0123456789") != std::string::npos)
          throw std::runtime_error("line " + std::to_string(lineno) +
                                   ": malformed block header: " + line);
        flush();
        in_block = true;
        current.binary_id = binary_id;
        current.block_id = std::stol(parts[2]);
      } else if (parts.size() >= 2 && parts[1] == "binary") {
        if (parts.size() != 4)
          throw std::runtime_error("line " + std::to_string(lineno) +
                                   ": malformed binary header: " + line);
        if (parts[3] != profile.isa)
          result.warnings.push_back("line " + std::to_string(lineno) + ": binary " +
                                    parts[2] + " declares isa " + parts[3] +
                                    " but profile is " + profile.isa);
        flush();
        binary_id = parts[2];
      } else {
        throw std::runtime_error("line " + std::to_string(lineno) +
                                 ": unknown directive: " + line);
      }
      continue;
    }

    if (!in_block)
      throw std::runtime_error("line " + std::to_string(lineno) +
                               ": instruction outside any block: " + line);
    RawInstruction ins;
    ins.source_line = lineno;
    ins.opcode = parts[0];
    for (size_t i = 1; i < parts.size(); ++i) {
      std::string op = parts[i];
      op.erase(std::remove(op.begin(), op.end(), ','), op.end());
      if (!op.empty()) ins.operands.push_back(op);
    }
    current.instructions.push_back(std::move(ins));
  }
  flush();
  return result;
}

TokenSequence normalize_block(const Block& block, const IsaProfile& profile,
                              const Rules& rules) {
  TokenSequence seq;
  seq.isa = profile.isa;
  seq.binary_id = block.binary_id;
  seq.block_id = block.block_id;
  for (const auto& ins : block.instructions) {
    auto toks = normalize_instruction(ins, profile, rules);
    seq.tokens.insert(seq.tokens.end(), toks.begin(), toks.end());
  }
  return seq;
}

CorpusResult build_corpus(const std::vector<TokenSequence>& blocks) {
  CorpusResult out;
  std::unordered_set<std::string> seen_lines;
  std::unordered_set<std::string> vocab;
  std::vector<std::string> binary_order;
  std::unordered_map<std::string, size_t> binary_index;
  std::string isa;

  // Vocabulary growth is reported per binary in first-seen order; blocks of
  // the same binary may be interleaved in the input.
  std::map<size_t, std::vector<const TokenSequence*>> by_binary;
  for (const auto& b : blocks) {
    if (isa.empty()) isa = b.isa;
    else if (isa != b.isa)
      throw std::invalid_argument("build_corpus: mixed ISAs " + isa + " and " + b.isa);
    auto [it, inserted] = binary_index.try_emplace(b.binary_id, binary_order.size());
    if (inserted) binary_order.push_back(b.binary_id);
    by_binary[it->second].push_back(&b);
  }

  for (size_t bi = 0; bi < binary_order.size(); ++bi) {
    for (const TokenSequence* seq : by_binary[bi]) {
      ++out.total_blocks;
      std::string line;
      for (size_t i = 0; i < seq->tokens.size(); ++i) {
        if (i) line += ' ';
        line += seq->tokens[i];
      }
      for (const auto& t : seq->tokens) vocab.insert(t);
      if (seen_lines.insert(line).second) out.lines.push_back(std::move(line));
    }
    out.growth.emplace_back(binary_order[bi], static_cast<long>(vocab.size()));
  }
  out.vocab_size = static_cast<long>(vocab.size());
  return out;
}

std::string corpus_report(const CorpusResult& corpus, const std::string& isa) {
  std::ostringstream os;
  os << "isa=" << isa << "\n";
  os << "blocks=" << corpus.total_blocks << "\n";
  os << "unique_blocks=" << corpus.lines.size() << "\n";
  os << "vocab_size=" << corpus.vocab_size << "\n";
  for (const auto& [binary, size] : corpus.growth)
    os << "vocab_after." << binary << "=" << size << "\n";
  return os.str();
}

namespace {

std::unordered_set<std::string> range_regs(const std::string& stem, int lo, int hi) {
  std::unordered_set<std::string> out;
  for (int i = lo; i <= hi; ++i) out.insert(stem + std::to_string(i));
  return out;
}

void merge(std::unordered_set<std::string>& into,
           const std::unordered_set<std::string>& from) {
  into.insert(from.begin(), from.end());
}

const std::vector<std::pair<std::string, std::string>> kCommonPrefixes = {
    {"loc_", "<LOC>"}, {"off_", "<OFF>"}, {"seg_", "<SEG>"}, {"var_", "<VAR>"},
    {"str_", "<STR>"}, {"sub_", "<FUNC>"}, {"addr_", "<ADDR>"}};

IsaProfile make_x86_64() {
  IsaProfile p;
  p.isa = "X86-64";
  merge(p.registers, {"rax", "rbx", "rcx", "rdx", "rsi", "rdi", "rbp", "rsp",
                      "eax", "ebx", "ecx", "edx", "esi", "edi", "ebp", "esp",
                      "ax", "bx", "cx", "dx", "si", "di", "bp", "sp",
                      "al", "ah", "bl", "bh", "cl", "ch", "dl", "dh",
                      "sil", "dil", "bpl", "spl", "rip",
                      "cs", "ds", "es", "fs", "gs", "ss"});
  merge(p.registers, range_regs("r", 8, 15));
  for (int i = 8; i <= 15; ++i) {
    p.registers.insert("r" + std::to_string(i) + "d");
    p.registers.insert("r" + std::to_string(i) + "w");
    p.registers.insert("r" + std::to_string(i) + "b");
  }
  merge(p.registers, range_regs("xmm", 0, 15));
  merge(p.registers, range_regs("ymm", 0, 15));
  merge(p.registers, range_regs("st", 0, 7));
  p.call_opcodes = {"call", "callq"};
  p.branch_opcodes = {"jmp", "je", "jne", "jz", "jnz", "ja", "jb", "jg", "jl",
                      "jge", "jle", "jae", "jbe", "js", "jns", "jo", "jno", "loop"};
  p.keywords = {"short", "near", "far", "ptr", "byte", "word", "dword",
                "qword", "tbyte", "xmmword", "offset"};
  p.dummy_prefixes = kCommonPrefixes;
  p.hex_suffix_h = true;
  p.hex_prefix_0x = true;
  return p;
}

IsaProfile make_i386() {
  IsaProfile p = make_x86_64();
  p.isa = "i386";
  for (int i = 8; i <= 15; ++i) {
    p.registers.erase("r" + std::to_string(i));
    p.registers.erase("r" + std::to_string(i) + "d");
    p.registers.erase("r" + std::to_string(i) + "w");
    p.registers.erase("r" + std::to_string(i) + "b");
  }
  for (const char* r : {"rax", "rbx", "rcx", "rdx", "rsi", "rdi", "rbp", "rsp", "rip"})
    p.registers.erase(r);
  return p;
}

IsaProfile make_arm32() {
  IsaProfile p;
  p.isa = "ARM32";
  merge(p.registers, range_regs("r", 0, 15));
  merge(p.registers, {"sp", "lr", "pc", "fp", "ip", "sl", "sb", "cpsr", "apsr"});
  merge(p.registers, range_regs("s", 0, 31));
  merge(p.registers, range_regs("d", 0, 15));
  p.call_opcodes = {"bl", "blx"};
  p.branch_opcodes = {"b", "bx", "beq", "bne", "bgt", "blt", "bge", "ble",
                      "bcc", "bcs", "bhi", "bls", "bmi", "bpl", "beq.w", "bne.w"};
  p.pc_registers = {"pc"};
  p.dummy_prefixes = kCommonPrefixes;
  p.hex_prefix_0x = true;
  p.allow_hash_prefix = true;
  p.hash_imm_is_value = true;
  return p;
}

IsaProfile make_arm64() {
  IsaProfile p;
  p.isa = "ARM64";
  merge(p.registers, range_regs("x", 0, 30));
  merge(p.registers, range_regs("w", 0, 30));
  merge(p.registers, range_regs("q", 0, 31));
  merge(p.registers, range_regs("v", 0, 31));
  merge(p.registers, range_regs("d", 0, 31));
  merge(p.registers, range_regs("s", 0, 31));
  merge(p.registers, {"sp", "xzr", "wzr", "lr", "pc"});
  p.call_opcodes = {"bl", "blr", "b"};
  p.branch_opcodes = {"b", "br", "cbz", "cbnz", "tbz", "tbnz", "b.eq", "b.ne",
                      "b.lt", "b.gt", "b.le", "b.ge", "beq", "bne"};
  p.dummy_prefixes = kCommonPrefixes;
  p.hex_prefix_0x = true;
  p.allow_hash_prefix = true;
  p.hash_imm_is_hex = true;  // disassembly prints bare immediates as #N hex
  return p;
}

IsaProfile make_mips32() {
  IsaProfile p;
  p.isa = "MIPS32";
  merge(p.registers, {"$zero", "$at", "$v0", "$v1", "$gp", "$sp", "$fp", "$ra",
                      "$k0", "$k1"});
  merge(p.registers, range_regs("$a", 0, 3));
  merge(p.registers, range_regs("$t", 0, 9));
  merge(p.registers, range_regs("$s", 0, 8));
  merge(p.registers, range_regs("$f", 0, 31));
  merge(p.registers, range_regs("$", 0, 31));
  p.call_opcodes = {"jal", "jalr", "bal"};
  p.branch_opcodes = {"b", "j", "jr", "beq", "bne", "beqz", "bnez", "bgez",
                      "blez", "bgtz", "bltz"};
  p.dummy_prefixes = kCommonPrefixes;
  p.hex_prefix_0x = true;
  return p;
}

IsaProfile make_ppc32() {
  IsaProfile p;
  p.isa = "PPC32";
  merge(p.registers, range_regs("r", 0, 31));
  merge(p.registers, range_regs("f", 0, 31));
  merge(p.registers, range_regs("cr", 0, 7));
  merge(p.registers, {"lr", "ctr", "xer", "msr"});
  p.call_opcodes = {"bl", "bla"};
  p.branch_opcodes = {"b", "ba", "beq", "bne", "blt", "bgt", "ble", "bge",
                      "bdnz", "blr", "bctr"};
  p.keywords = {"ha", "l", "h"};  // relocation suffixes after '@'
  p.dummy_prefixes = kCommonPrefixes;
  p.hex_prefix_0x = true;
  return p;
}

IsaProfile make_m68k() {
  IsaProfile p;
  p.isa = "M68K";
  merge(p.registers, range_regs("d", 0, 7));
  merge(p.registers, range_regs("a", 0, 7));
  merge(p.registers, range_regs("fp", 0, 7));
  merge(p.registers, {"sp", "pc", "sr", "ccr", "usp"});
  p.call_opcodes = {"jsr", "bsr"};
  p.branch_opcodes = {"bra", "beq", "bne", "bgt", "blt", "bge", "ble", "jmp", "bne.s"};
  p.dummy_prefixes = kCommonPrefixes;
  p.hex_dollar = true;
  p.allow_hash_prefix = true;
  p.hash_imm_is_value = true;
  return p;
}

IsaProfile make_toy_a() {
  IsaProfile p;
  p.isa = "TOY-A";
  merge(p.registers, range_regs("a", 0, 7));
  p.call_opcodes = {"call"};
  p.branch_opcodes = {"jmp"};
  p.mnemonics = {"mv", "li", "add", "ld", "st", "call", "jmp", "xchk"};
  p.dummy_prefixes = kCommonPrefixes;
  p.hex_prefix_0x = true;
  return p;
}

IsaProfile make_toy_b() {
  IsaProfile p;
  p.isa = "TOY-B";
  merge(p.registers, range_regs("b", 0, 7));
  p.call_opcodes = {"invoke"};
  p.branch_opcodes = {"go"};
  p.mnemonics = {"copy", "set", "acc", "fetch", "stash", "invoke", "go", "probe"};
  p.dummy_prefixes = kCommonPrefixes;
  p.hex_prefix_0x = true;
  return p;
}

}  // namespace

const IsaProfile& builtin_profile(const std::string& isa) {
  static const std::map<std::string, IsaProfile> kProfiles = [] {
    std::map<std::string, IsaProfile> m;
    for (auto p : {make_x86_64(), make_i386(), make_arm32(), make_arm64(),
                   make_mips32(), make_ppc32(), make_m68k(), make_toy_a(),
                   make_toy_b()}) {
      p.validate();
      m.emplace(p.isa, std::move(p));
    }
    return m;
  }();
  auto it = kProfiles.find(isa);
  if (it == kProfiles.end())
    throw std::invalid_argument("unknown ISA profile: " + isa);
  return it->second;
}

std::vector<std::string> builtin_profile_names() {
  std::vector<std::string> names;
  for (const char* n : {"X86-64", "i386", "ARM32", "ARM64", "MIPS32", "PPC32",
                        "M68K", "TOY-A", "TOY-B"})
    names.emplace_back(n);
  return names;
}

}  // namespace fmtx::frontend
