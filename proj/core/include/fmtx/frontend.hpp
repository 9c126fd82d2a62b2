#pragma once

#include <map>
#include <string>
#include <unordered_set>
#include <vector>

namespace fmtx::frontend {

// The fixed placeholder vocabulary produced by normalization.
const std::unordered_set<std::string>& placeholder_set();
bool is_placeholder(const std::string& token);

struct RawInstruction {
  std::string opcode;
  std::vector<std::string> operands;  // commas stripped, no whitespace
  long source_line = 0;
};

struct TokenSequence {
  std::string isa;
  std::vector<std::string> tokens;
  std::string binary_id;
  long block_id = 0;
};

// Per-ISA syntax description driving the normalization rules. Register and
// opcode lookups are case-insensitive; emitted tokens keep their original
// spelling.
struct IsaProfile {
  std::string isa;
  std::unordered_set<std::string> registers;
  std::unordered_set<std::string> call_opcodes;
  std::unordered_set<std::string> branch_opcodes;
  std::unordered_set<std::string> keywords;  // size/branch hints etc., pass through
  std::vector<std::pair<std::string, std::string>> dummy_prefixes;
  // Operands equal to one of these make the instruction call-like even when
  // the opcode itself is a plain load (the "load into pc" idiom).
  std::unordered_set<std::string> pc_registers;
  std::unordered_set<std::string> mnemonics;  // optional; used by opcode filters

  // Literal syntax switches.
  bool hex_suffix_h = false;      // 5D40h
  bool hex_prefix_0x = false;     // 0x1B000, optional trailing h
  bool hex_dollar = false;        // $DB3EF
  bool allow_hash_prefix = false; // leading # permitted on literals
  bool hash_imm_is_hex = false;   // bare #N reads as a hex immediate
  bool hash_imm_is_value = false; // bare #N reads as a decimal immediate

  void validate() const;  // throws on malformed profile
};

// Shipped profiles: X86-64, i386, ARM32, ARM64, MIPS32, PPC32, M68K,
// TOY-A, TOY-B.
const IsaProfile& builtin_profile(const std::string& isa);
std::vector<std::string> builtin_profile_names();

struct Rules {
  bool r1 = true;  // dummy-name prefixes + unresolved symbols -> <TAG>
  bool r2 = true;  // call-target symbols -> <FUNC>
  bool r3 = true;  // decimal -> <VALUE>, hex -> <HEX>
  static Rules all() { return {}; }
  static Rules none() { return {false, false, false}; }
};

Rules parse_rules(const std::string& spec);  // e.g. "R1,R3" or "none"

// Total: never throws, never emits tokens outside
// mnemonics + registers + keywords + placeholders + structural text.
std::vector<std::string> normalize_instruction(const RawInstruction& ins,
                                               const IsaProfile& profile,
                                               const Rules& rules = Rules::all());

struct Block {
  std::string binary_id;
  long block_id = 0;
  std::vector<RawInstruction> instructions;
};

struct ParseResult {
  std::vector<Block> blocks;
  std::vector<std::string> warnings;
};

// Line-oriented dump format:
//   ## binary <name> <isa-id>
//   ## block <decimal-id>
//   opcode op1, op2, ...
// Malformed lines throw with the offending line number; empty blocks are
// skipped with a warning.
ParseResult parse_disassembly(const std::string& text, const IsaProfile& profile);

TokenSequence normalize_block(const Block& block, const IsaProfile& profile,
                              const Rules& rules = Rules::all());

struct CorpusResult {
  std::vector<std::string> lines;   // deduplicated, one block per line
  long total_blocks = 0;
  long vocab_size = 0;
  // Cumulative vocabulary size after each binary, in first-seen order.
  std::vector<std::pair<std::string, long>> growth;
};

// All blocks must share one ISA (mixed input is rejected).
CorpusResult build_corpus(const std::vector<TokenSequence>& blocks);

std::string corpus_report(const CorpusResult& corpus, const std::string& isa);

}  // namespace fmtx::frontend
