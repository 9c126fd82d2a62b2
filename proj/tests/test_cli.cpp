// End-to-end checks that drive the installed CLI binary.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>

#include "fmtx/config.hpp"
#include "testutil.hpp"

namespace fs = std::filesystem;
using fmtx::cfg::read_file;
using fmtx::cfg::read_lines;

namespace {

#ifndef FMTX_BIN
#error "FMTX_BIN must point at the CLI binary"
#endif

int run(const std::string& args) {
  std::string cmd = std::string(FMTX_BIN) + " " + args + " >/dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("unknown flags exit with usage status 2") {
  CHECK(run("definitely-not-a-subcommand") == 2);
  CHECK(run("gen-toy --bogus-flag 1") == 2);
}

TEST_CASE("gen-toy is byte-identical under a fixed seed") {
  testutil::TmpDir dir("cli_gentoy");
  std::string d1 = dir.file("run1"), d2 = dir.file("run2");
  std::string m = " --manifest " + dir.file("run.manifest");
  REQUIRE(run("gen-toy --count 200 --seed 7 --heldout 20 --out-dir " + d1 + m) == 0);
  REQUIRE(run("gen-toy --count 200 --seed 7 --heldout 20 --out-dir " + d2 + m) == 0);
  for (const char* f : {"train_a.txt", "train_b.txt", "heldout_a.txt", "heldout_b.txt"})
    CHECK(read_file(d1 + "/" + f) == read_file(d2 + "/" + f));
  std::string d3 = dir.file("run3");
  REQUIRE(run("gen-toy --count 200 --seed 8 --heldout 20 --out-dir " + d3 + m) == 0);
  CHECK(read_file(d1 + "/train_a.txt") != read_file(d3 + "/train_a.txt"));
}

TEST_CASE("eval-bleu on identical files reports 1.0") {
  testutil::TmpDir dir("cli_bleu");
  std::string corpus = dir.file("corpus.txt");
  fmtx::cfg::write_lines(corpus, {"mv a1 a2 li a0 <VALUE>", "call <FUNC> jmp <LOC>"});
  std::string report = dir.file("bleu.txt");
  std::string m = " --manifest " + dir.file("run.manifest");
  REQUIRE(run("eval-bleu --hyp " + corpus + " --ref " + corpus + " --report " +
              report + m) == 0);
  CHECK(read_file(report).find("bleu=1.000000") != std::string::npos);
}

TEST_CASE("normalize and build-corpus work over a dump file") {
  testutil::TmpDir dir("cli_norm");
  std::string dump = dir.file("dump.txt");
  fmtx::cfg::atomic_write_file(dump,
      "## binary demo X86-64\n"
      "## block 0\n"
      "mov eax, ebx\n"
      "call _gpgrt_log_info\n"
      "## block 1\n"
      "sbb al, 0\n");
  std::string out = dir.file("blocks.txt");
  std::string report = dir.file("report.txt");
  std::string m = " --manifest " + dir.file("run.manifest");
  REQUIRE(run("normalize --in " + dump + " --isa X86-64 --out " + out + m) == 0);
  auto lines = read_lines(out);
  REQUIRE(lines.size() == 2);
  CHECK(lines[0] == "mov eax ebx call <FUNC>");
  CHECK(lines[1] == "sbb al <VALUE>");

  std::string corpus = dir.file("corpus.txt");
  REQUIRE(run("build-corpus --in " + dump + " --isa X86-64 --out " + corpus +
              " --report " + report + m) == 0);
  CHECK(read_file(report).find("vocab_size=") != std::string::npos);
  CHECK(read_file(report).find("vocab_after.demo=") != std::string::npos);
}

TEST_CASE("learn-bpe and select-merges produce the pinned file formats") {
  testutil::TmpDir dir("cli_bpe");
  std::string m = " --manifest " + dir.file("run.manifest");
  REQUIRE(run("gen-toy --count 150 --seed 5 --heldout 5 --out-dir " + dir.file("toy") +
              m) == 0);
  std::string a = dir.file("toy/train_a.txt"), b = dir.file("toy/train_b.txt");
  std::string merges = dir.file("merges.txt"), vocab = dir.file("vocab.txt");
  REQUIRE(run("learn-bpe --src " + a + " --tgt " + b +
              " --merges 50 --out-merges " + merges + " --out-vocab " + vocab + m) == 0);
  auto merge_lines = read_lines(merges);
  CHECK(merge_lines.size() == 50);
  for (const auto& line : merge_lines) {
    std::istringstream ss(line);
    std::string l, r, extra;
    CHECK((ss >> l >> r));
    CHECK_FALSE((ss >> extra));
  }
  auto vocab_lines = read_lines(vocab);
  CHECK(vocab_lines[0] == "[/s] 0");
  CHECK(vocab_lines[2] == "[PAD] 2");

  std::string report = dir.file("select.txt");
  REQUIRE(run("select-merges --src " + a + " --tgt " + b +
              " --candidates 10,30,50 --report " + report + m) == 0);
  CHECK(read_file(report).find("chosen=") != std::string::npos);
}

TEST_CASE("manifest accumulates one record per run") {
  testutil::TmpDir dir("cli_manifest");
  std::string manifest = dir.file("run.manifest");
  REQUIRE(run("gen-toy --count 50 --seed 3 --heldout 2 --out-dir " + dir.file("t") +
              " --manifest " + manifest) == 0);
  REQUIRE(run("gen-toy --count 50 --seed 3 --heldout 2 --out-dir " + dir.file("t2") +
              " --manifest " + manifest) == 0);
  auto lines = read_lines(manifest);
  REQUIRE(lines.size() == 2);
  CHECK(lines[0].find("cmd=gen-toy") != std::string::npos);
  CHECK(lines[0].find("seed=3") != std::string::npos);
}

TEST_CASE("tiny end-to-end pipeline through the CLI") {
  // Miniature everything: proves the subcommands compose, not that the model
  // is good (the acceptance suite owns quality).
  testutil::TmpDir dir("cli_e2e");
  std::string m = " --manifest " + dir.file("run.manifest");
  std::string toy = dir.file("toy");
  REQUIRE(run("gen-toy --count 120 --seed 11 --heldout 10 --detect-train 6 "
              "--detect-test 6 --out-dir " + toy + m) == 0);
  std::string a = toy + "/train_a.txt", b = toy + "/train_b.txt";
  std::string merges = dir.file("merges.txt"), vocab = dir.file("vocab.txt");
  REQUIRE(run("learn-bpe --src " + a + " --tgt " + b + " --merges 60 --out-merges " +
              merges + " --out-vocab " + vocab + m) == 0);
  std::string model = dir.file("model.fmtx");
  std::string small = " --set d=16 --set nheads=2 --set nlayers=1 --set flow_depth=2"
                      " --set batch_size=2 --set warmup=5 --set lr=0.003";
  REQUIRE(run("pretrain --src " + a + " --tgt " + b + " --merges " + merges +
              " --vocab " + vocab + " --out " + model + small +
              " --set pretrain_steps=3" + m) == 0);
  std::string metrics = dir.file("train.log");
  REQUIRE(run("train --src " + a + " --tgt " + b + " --merges " + merges +
              " --vocab " + vocab + " --init " + model + " --out " + model +
              " --metrics " + metrics + small +
              " --set max_steps=3 --set bt_gen_slack=6" + m) == 0);
  auto metric_lines = read_lines(metrics);
  REQUIRE(metric_lines.size() == 3);
  // metrics format: step + 8 numeric fields
  std::istringstream ms(metric_lines[0]);
  double field;
  long step;
  ms >> step;
  int fields = 0;
  while (ms >> field) ++fields;
  CHECK(step == 0);
  CHECK(fields == 8);

  std::string translated = dir.file("translated.txt");
  REQUIRE(run("translate --model " + model + " --merges " + merges + " --vocab " +
              vocab + " --in " + toy + "/heldout_a.txt --from-isa TOY-A --out " +
              translated + " --set bt_gen_slack=6" + m) == 0);
  CHECK(read_lines(translated).size() == 10);

  std::string bleu = dir.file("bleu.txt");
  REQUIRE(run("eval-bleu --hyp " + translated + " --ref " + toy +
              "/heldout_b.txt --report " + bleu + m) == 0);
  CHECK(read_file(bleu).find("bleu=") != std::string::npos);

  std::string det = dir.file("det.fmtx");
  REQUIRE(run("train-detector --model " + model + " --merges " + merges +
              " --vocab " + vocab + " --train " + toy + "/detect_train_b.json" +
              " --train-isa TOY-B --out " + det +
              " --set det_epochs=2 --set det_hidden=8" + m) == 0);
  std::string scores = dir.file("scores.txt");
  REQUIRE(run("score --detector " + det + " --merges " + merges + " --vocab " + vocab +
              " --in " + toy + "/detect_test_b.json --out " + scores + m) == 0);
  auto score_lines = read_lines(scores);
  REQUIRE(score_lines.size() == 12);
  {
    std::istringstream ss(score_lines[0]);
    long id;
    double s;
    int label;
    REQUIRE((ss >> id >> s >> label));
    CHECK(s >= 0.0);
    CHECK(s <= 1.0);
  }
  std::string auc_report = dir.file("auc.txt");
  REQUIRE(run("eval-auc --scores " + scores + " --report " + auc_report + m) == 0);
  CHECK(read_file(auc_report).find("auc=") != std::string::npos);

  std::string emb = dir.file("emb.txt");
  REQUIRE(run("export-embeddings --model " + model + " --vocab " + vocab + " --out " +
              emb + " --opcode-only --profiles TOY-A,TOY-B" + m) == 0);
  CHECK(!read_lines(emb).empty());
}

TEST_CASE("translate artifacts are byte-identical across reruns") {
  testutil::TmpDir dir("cli_det");
  std::string m = " --manifest " + dir.file("run.manifest");
  std::string toy = dir.file("toy");
  REQUIRE(run("gen-toy --count 80 --seed 19 --heldout 6 --out-dir " + toy + m) == 0);
  std::string a = toy + "/train_a.txt", b = toy + "/train_b.txt";
  std::string merges = dir.file("merges.txt"), vocab = dir.file("vocab.txt");
  REQUIRE(run("learn-bpe --src " + a + " --tgt " + b + " --merges 40 --out-merges " +
              merges + " --out-vocab " + vocab + m) == 0);
  std::string model = dir.file("model.fmtx");
  std::string small = " --set d=16 --set nheads=2 --set nlayers=1 --set flow_depth=2"
                      " --set batch_size=2 --set pretrain_steps=2";
  REQUIRE(run("pretrain --src " + a + " --tgt " + b + " --merges " + merges +
              " --vocab " + vocab + " --out " + model + small + m) == 0);
  std::string t1 = dir.file("t1.txt"), t2 = dir.file("t2.txt");
  for (const auto& out : {t1, t2})
    REQUIRE(run("translate --model " + model + " --merges " + merges + " --vocab " +
                vocab + " --in " + toy + "/heldout_a.txt --from-isa TOY-A --out " +
                out + " --set bt_gen_slack=6" + m) == 0);
  CHECK(read_file(t1) == read_file(t2));
}
