#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fmtx::toy {

// Abstract operations over virtual registers v0..v7. TOY-A renders each op
// as one instruction; TOY-B renders Add as two (copy + acc), so translation
// is not token-bijective.
struct NeutralOp {
  enum class Kind { Move, LoadImm, Add, Load, Store, Call, Jump, Guard };
  Kind kind = Kind::Move;
  int rd = 0, ra = 0, rb = 0;
  int imm = 0;       // LoadImm
  int off = 0;       // Load/Store displacement (rendered as hex)
  int sym = 0;       // Call target index into the symbol pool
  int label = 0;     // Jump target (rendered as a loc_ dummy name)
};

struct NeutralProgram {
  long id = 0;
  std::vector<NeutralOp> ops;  // length in [3,20]
};

inline constexpr const char* kToyA = "TOY-A";
inline constexpr const char* kToyB = "TOY-B";

// Deterministic program sampler. guard_rate is the per-op probability of the
// planted Guard operation (0 disables it).
NeutralProgram sample_program(long id, uint64_t seed, double guard_rate = 0.05,
                              long min_ops = 3, long max_ops = 20);

// Rendered and frontend-normalized token sequence for one program.
std::vector<std::string> render_normalized(const NeutralProgram& p, bool toy_b);
std::string render_line(const NeutralProgram& p, bool toy_b);  // space-joined

// Raw disassembly-style text (literals intact), for pipeline exercises.
std::string render_raw_dump(const std::vector<NeutralProgram>& programs, bool toy_b,
                            const std::string& binary_name);

struct ToyCorpus {
  std::vector<std::string> train_a;  // normalized, one block per line
  std::vector<std::string> train_b;
  std::vector<long> ids_a, ids_b;    // program ids behind each split
  std::vector<std::pair<std::string, std::string>> heldout;  // aligned (A,B)
};

// Nonparallel training corpora (disjoint program sets) plus a held-out
// parallel set rendered to both ISAs.
ToyCorpus gen_corpus(long count_per_side, uint64_t seed, long heldout_count = 500);

// Ground truth: parse a normalized TOY-A block back to the neutral form and
// re-render it in TOY-B. Rejects blocks that are not generatable output.
std::vector<std::string> oracle_translate(const std::vector<std::string>& a_tokens);
std::string oracle_translate_line(const std::string& a_line);

// Desk-scale detection task: a binary is a handful of blocks; malicious
// binaries additionally contain blocks rich in the planted Guard op.
struct DetectionSample {
  std::vector<std::string> blocks;  // normalized lines in one ISA
  int label = 0;                    // 1 = malicious
  long id = 0;
};

struct DetectionSet {
  std::vector<DetectionSample> samples;
};

DetectionSet gen_detection(long per_class, uint64_t seed, bool toy_b);

}  // namespace fmtx::toy
