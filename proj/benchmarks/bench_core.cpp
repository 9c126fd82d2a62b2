#include <benchmark/benchmark.h>

#include <sstream>

#include "fmtx/bpe.hpp"
#include "fmtx/flow.hpp"
#include "fmtx/seq_model.hpp"
#include "fmtx/toyisa.hpp"
#include "fmtx/trainer.hpp"

using namespace fmtx;

namespace {

std::vector<std::string> tokens_of(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  std::string w;
  while (ss >> w) out.push_back(w);
  return out;
}

void BM_Matmul64(benchmark::State& state) {
  Rng rng(1, "bm");
  Tensor<float> a = Tensor<float>::randn({64, 64}, rng);
  Tensor<float> b = Tensor<float>::randn({64, 64}, rng);
  Tape<float> tape(false);
  for (auto _ : state) {
    auto c = tape.matmul(a, b);
    benchmark::DoNotOptimize(c.ptr());
  }
}
BENCHMARK(BM_Matmul64);

void BM_FlowForward(benchmark::State& state) {
  Rng rng(2, "bm");
  auto st = flow::make_flow_stack<float>(64, state.range(0), flow::Variant::Scf,
                                         "source-flow", rng);
  Tensor<float> z = Tensor<float>::randn({8, 64}, rng);
  Tape<float> tape(false);
  for (auto _ : state) {
    auto out = flow::flow_forward(tape, st, z);
    benchmark::DoNotOptimize(out.eps.ptr());
  }
}
BENCHMARK(BM_FlowForward)->Arg(3)->Arg(5);

void BM_EncodeBlock(benchmark::State& state) {
  Rng rng(3, "bm");
  model::ModelConfig cfg;
  cfg.d = 64;
  cfg.nlayers = state.range(0);
  auto bundle = model::make_bundle<float>(cfg, 128, rng);
  std::vector<long> ids(48);
  for (size_t i = 0; i < ids.size(); ++i) ids[i] = 1 + (i * 7) % 120;
  Tape<float> tape(false);
  for (auto _ : state) {
    auto enc = model::encode_block(tape, ids, "TOY-A", bundle);
    benchmark::DoNotOptimize(enc.z.ptr());
  }
}
BENCHMARK(BM_EncodeBlock)->Arg(2)->Arg(4);

void BM_TrainStepLoss(benchmark::State& state) {
  Rng rng(4, "bm");
  auto corpus = toy::gen_corpus(32, 5, 0);
  auto learned = bpe::learn_merges(corpus.train_a, corpus.train_b, 80);
  bpe::Encoder enc(learned.merges, learned.vocab);
  auto ids = enc.encode(tokens_of(corpus.train_a[0]));
  model::ModelConfig cfg;
  cfg.d = 64;
  cfg.nlayers = 2;
  auto bundle = model::make_bundle<float>(cfg, learned.vocab.size(), rng);
  train::TrainingConfig tc;
  long step = 0;
  for (auto _ : state) {
    Tape<float> tape;
    Rng nrng(6, "bm-noise", step++);
    auto loss = train::dae_step(tape, ids, "TOY-A", bundle, tc, nrng);
    tape.backward(loss);
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(BM_TrainStepLoss);

void BM_BpeEncode(benchmark::State& state) {
  auto corpus = toy::gen_corpus(256, 7, 0);
  auto learned = bpe::learn_merges(corpus.train_a, corpus.train_b, 150);
  bpe::Encoder enc(learned.merges, learned.vocab);
  size_t i = 0;
  for (auto _ : state) {
    auto ids = enc.encode(tokens_of(corpus.train_a[i++ % corpus.train_a.size()]));
    benchmark::DoNotOptimize(ids.data());
  }
}
BENCHMARK(BM_BpeEncode);

}  // namespace

BENCHMARK_MAIN();
