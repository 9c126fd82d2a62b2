// fmtx: unsupervised cross-ISA binary code translation pipeline.
//
// Subcommands cover the whole flow: normalize disassembly dumps, build
// corpora, learn joint BPE, pretrain and train the translator, translate
// blocks, score BLEU, train/evaluate the downstream sequence detector, and
// export token embeddings. All artifacts are written atomically and every
// run appends one record to an append-only manifest.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>
#include <sstream>

#include "fmtx/bpe.hpp"
#include "fmtx/config.hpp"
#include "fmtx/detector.hpp"
#include "fmtx/evalkit.hpp"
#include "fmtx/frontend.hpp"
#include "fmtx/seq_model.hpp"
#include "fmtx/toyisa.hpp"
#include "fmtx/trainer.hpp"

using json = nlohmann::json;
using Real = float;  // training precision

namespace {

using namespace fmtx;

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string manifest = "run.manifest";
  uint64_t seed = 1;

  cfg::Config resolve() const {
    cfg::Config c;
    if (!config_path.empty()) c.merge_text(cfg::read_file(config_path));
    for (const auto& kv : overrides) c.merge_text(kv + "\n");
    if (c.has("seed")) {
      // config-file seed applies unless the flag was set explicitly
    }
    return c;
  }
};

void add_common(CLI::App* app, Common& common) {
  app->add_option("--config", common.config_path, "key=value config file");
  app->add_option("--set", common.overrides, "config override key=value")
      ->take_all();
  app->add_option("--seed", common.seed, "master random seed");
  app->add_option("--manifest", common.manifest, "manifest file to append to");
}

void record(const Common& common, const std::string& cmd, const cfg::Config& conf,
            const std::vector<std::string>& inputs,
            const std::vector<std::string>& outputs) {
  cfg::manifest_append(common.manifest, cmd, conf, common.seed, inputs, outputs);
}

std::vector<std::string> tokens_of(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  std::string w;
  while (ss >> w) out.push_back(w);
  return out;
}

std::vector<std::vector<long>> encode_corpus(const std::vector<std::string>& lines,
                                             const bpe::MergeTable& merges,
                                             const bpe::JointVocabulary& vocab) {
  bpe::Encoder enc(merges, vocab);
  std::vector<std::vector<long>> out;
  out.reserve(lines.size());
  for (const auto& line : lines) out.push_back(enc.encode(tokens_of(line)));
  return out;
}

model::ModelConfig model_config_from(const cfg::Config& c) {
  model::ModelConfig mc;
  mc.d = c.integer("d", 64);
  mc.nheads = c.integer("nheads", 4);
  mc.nlayers = c.integer("nlayers", 4);
  mc.ffn_mult = c.integer("ffn_mult", 4);
  mc.dropout = c.real("dropout", 0.1);
  mc.attn_dropout = c.real("attn_dropout", 0.1);
  mc.isa_src = c.str("isa_src", "TOY-A");
  mc.isa_tgt = c.str("isa_tgt", "TOY-B");
  mc.flow_variant = flow::variant_from_string(c.str("flow_variant", "scf"));
  mc.flow_depth = c.integer("flow_depth", 3);
  return mc;
}

train::TrainingConfig train_config_from(const cfg::Config& c, uint64_t seed) {
  train::TrainingConfig tc;
  tc.batch_size = c.integer("batch_size", 256);
  tc.grad_accum = c.integer("grad_accum", 8);
  tc.max_steps = c.integer("max_steps", 20000);
  tc.pretrain_steps = c.integer("pretrain_steps", 5000);
  tc.loss_stop = c.real("loss_stop", 0.3);
  tc.ema_decay = c.real("ema_decay", 0.99);
  tc.lambda_dae = c.real("lambda_dae", 1.0);
  tc.lambda_bt = c.real("lambda_bt", 1.0);
  tc.lambda_mle = c.real("lambda_mle", 1.0);
  tc.swap_fraction = c.real("swap_fraction", 0.1);
  tc.mask_rate = c.real("mask_rate", 0.15);
  tc.mask_p_mask = c.real("mask_p_mask", 0.8);
  tc.mask_p_rand = c.real("mask_p_rand", 0.1);
  tc.mask_p_keep = c.real("mask_p_keep", 0.1);
  tc.seed = seed;
  tc.checkpoint_every = c.integer("checkpoint_every", 1000);
  tc.bt_refresh_every = c.integer("bt_refresh_every", 1);
  tc.bt_gen_slack = c.integer("bt_gen_slack", 16);
  tc.dae_cross_encoder = c.boolean("dae_cross_encoder", false);
  tc.lr = c.real("lr", 3e-4);
  tc.warmup = c.integer("warmup", 200);
  tc.clip_norm = c.real("clip_norm", 5.0);
  tc.dropout = c.real("dropout", 0.1);
  tc.attn_dropout = c.real("attn_dropout", 0.1);
  tc.threads = c.integer("threads", 1);
  return tc;
}

// Detection set files are JSON: [{"id":0,"label":1,"blocks":["..."]}].
std::vector<toy::DetectionSample> load_detection_json(const std::string& path) {
  json j = json::parse(cfg::read_file(path));
  std::vector<toy::DetectionSample> out;
  for (const auto& item : j) {
    toy::DetectionSample s;
    s.id = item.at("id").get<long>();
    s.label = item.at("label").get<int>();
    for (const auto& b : item.at("blocks")) s.blocks.push_back(b.get<std::string>());
    out.push_back(std::move(s));
  }
  return out;
}

void save_detection_json(const std::string& path,
                         const std::vector<toy::DetectionSample>& samples) {
  json j = json::array();
  for (const auto& s : samples)
    j.push_back({{"id", s.id}, {"label", s.label}, {"blocks", s.blocks}});
  cfg::atomic_write_file(path, j.dump(1) + "\n");
}

std::vector<long> encode_concat_blocks(const std::vector<std::string>& blocks,
                                       bpe::Encoder& enc) {
  std::vector<long> ids;
  for (const auto& line : blocks) {
    auto one = enc.encode(tokens_of(line));
    ids.insert(ids.end(), one.begin(), one.end());
  }
  return ids;
}

// ---- subcommand bodies ----------------------------------------------------

int cmd_normalize(const Common& common, const std::string& in,
                  const std::string& isa, const std::string& out,
                  const std::string& rules_spec) {
  cfg::Config conf = common.resolve();
  const auto& profile = frontend::builtin_profile(isa);
  auto rules = frontend::parse_rules(rules_spec);
  auto parsed = frontend::parse_disassembly(cfg::read_file(in), profile);
  for (const auto& w : parsed.warnings) std::cerr << "warning: " << w << "\n";
  std::vector<std::string> lines;
  for (const auto& block : parsed.blocks) {
    auto seq = frontend::normalize_block(block, profile, rules);
    std::string line;
    for (size_t i = 0; i < seq.tokens.size(); ++i) {
      if (i) line += ' ';
      line += seq.tokens[i];
    }
    lines.push_back(std::move(line));
  }
  cfg::write_lines(out, lines);
  record(common, "normalize", conf, {in}, {out});
  std::cout << "normalized " << lines.size() << " blocks\n";
  return 0;
}

int cmd_build_corpus(const Common& common, const std::string& in,
                     const std::string& isa, const std::string& out,
                     const std::string& report_path, const std::string& rules_spec) {
  cfg::Config conf = common.resolve();
  const auto& profile = frontend::builtin_profile(isa);
  auto rules = frontend::parse_rules(rules_spec);
  auto parsed = frontend::parse_disassembly(cfg::read_file(in), profile);
  for (const auto& w : parsed.warnings) std::cerr << "warning: " << w << "\n";
  std::vector<frontend::TokenSequence> seqs;
  for (const auto& block : parsed.blocks)
    seqs.push_back(frontend::normalize_block(block, profile, rules));
  auto corpus = frontend::build_corpus(seqs);
  cfg::write_lines(out, corpus.lines);
  std::vector<std::string> outputs{out};
  if (!report_path.empty()) {
    cfg::atomic_write_file(report_path, frontend::corpus_report(corpus, isa));
    outputs.push_back(report_path);
  }
  record(common, "build-corpus", conf, {in}, outputs);
  std::cout << "corpus " << corpus.lines.size() << " unique blocks, vocab "
            << corpus.vocab_size << "\n";
  return 0;
}

int cmd_learn_bpe(const Common& common, const std::string& src, const std::string& tgt,
                  long merge_count, const std::string& out_merges,
                  const std::string& out_vocab) {
  cfg::Config conf = common.resolve();
  auto learned = bpe::learn_merges(cfg::read_lines(src), cfg::read_lines(tgt),
                                   merge_count);
  cfg::atomic_write_file(out_merges, bpe::merges_to_text(learned.merges));
  cfg::atomic_write_file(out_vocab, bpe::vocab_to_text(learned.vocab));
  record(common, "learn-bpe", conf, {src, tgt}, {out_merges, out_vocab});
  std::cout << "merges " << learned.merges.merge_count() << " joint vocab "
            << learned.vocab.joint_size << " (src " << learned.vocab.src_vocab_size
            << ", tgt " << learned.vocab.tgt_vocab_size << ")\n";
  return 0;
}

int cmd_select_merges(const Common& common, const std::string& src,
                      const std::string& tgt, const std::string& candidates_csv,
                      const std::string& report_path) {
  cfg::Config conf = common.resolve();
  std::vector<long> candidates;
  std::stringstream ss(candidates_csv);
  std::string part;
  while (std::getline(ss, part, ',')) candidates.push_back(std::stol(part));
  auto sel = bpe::select_merge_count(cfg::read_lines(src), cfg::read_lines(tgt),
                                     candidates);
  if (!report_path.empty()) {
    cfg::atomic_write_file(report_path, sel.report());
    record(common, "select-merges", conf, {src, tgt}, {report_path});
  } else {
    record(common, "select-merges", conf, {src, tgt}, {});
  }
  std::cout << sel.report();
  return 0;
}

int cmd_gen_toy(const Common& common, long count, const std::string& out_dir,
                long heldout, long detect_train, long detect_test) {
  cfg::Config conf = common.resolve();
  std::filesystem::create_directories(out_dir);
  auto corpus = toy::gen_corpus(count, common.seed, heldout);
  auto path = [&](const std::string& name) { return out_dir + "/" + name; };
  cfg::write_lines(path("train_a.txt"), corpus.train_a);
  cfg::write_lines(path("train_b.txt"), corpus.train_b);
  std::vector<std::string> ha, hb;
  for (const auto& [a, b] : corpus.heldout) {
    ha.push_back(a);
    hb.push_back(b);
  }
  cfg::write_lines(path("heldout_a.txt"), ha);
  cfg::write_lines(path("heldout_b.txt"), hb);
  std::vector<std::string> outputs{path("train_a.txt"), path("train_b.txt"),
                                   path("heldout_a.txt"), path("heldout_b.txt")};
  if (detect_train > 0) {
    auto set = toy::gen_detection(detect_train, common.seed + 101, true);
    save_detection_json(path("detect_train_b.json"), set.samples);
    outputs.push_back(path("detect_train_b.json"));
  }
  if (detect_test > 0) {
    auto set_a = toy::gen_detection(detect_test, common.seed + 202, false);
    save_detection_json(path("detect_test_a.json"), set_a.samples);
    auto set_b = toy::gen_detection(detect_test, common.seed + 202, true);
    save_detection_json(path("detect_test_b.json"), set_b.samples);
    outputs.push_back(path("detect_test_a.json"));
    outputs.push_back(path("detect_test_b.json"));
  }
  record(common, "gen-toy", conf, {}, outputs);
  std::cout << "toy corpora: " << corpus.train_a.size() << " + "
            << corpus.train_b.size() << " blocks, " << corpus.heldout.size()
            << " held-out pairs\n";
  return 0;
}

int cmd_pretrain(const Common& common, const std::string& src, const std::string& tgt,
                 const std::string& merges_path, const std::string& vocab_path,
                 const std::string& out_model, const std::string& metrics_path) {
  cfg::Config conf = common.resolve();
  auto merges = bpe::merges_from_text(cfg::read_file(merges_path));
  auto vocab = bpe::vocab_from_text(cfg::read_file(vocab_path));
  auto ids_src = encode_corpus(cfg::read_lines(src), merges, vocab);
  auto ids_tgt = encode_corpus(cfg::read_lines(tgt), merges, vocab);
  Rng init_rng(common.seed, "model-init");
  auto bundle = model::make_bundle<Real>(model_config_from(conf), vocab.size(), init_rng);
  train::TrainingConfig tc = train_config_from(conf, common.seed);
  train::Trainer<Real> trainer(bundle, vocab, ids_src, ids_tgt, tc);
  auto log = trainer.pretrain();
  ckpt::save(out_model, trainer.state_blobs());
  std::vector<std::string> outputs{out_model};
  if (!metrics_path.empty()) {
    cfg::write_lines(metrics_path, log);
    outputs.push_back(metrics_path);
  }
  record(common, "pretrain", conf, {src, tgt, merges_path, vocab_path}, outputs);
  std::cout << "pretrained " << tc.pretrain_steps << " steps -> " << out_model << "\n";
  return 0;
}

int cmd_train(const Common& common, const std::string& src, const std::string& tgt,
              const std::string& merges_path, const std::string& vocab_path,
              const std::string& init_model, const std::string& out_model,
              const std::string& metrics_path, bool resume) {
  cfg::Config conf = common.resolve();
  auto merges = bpe::merges_from_text(cfg::read_file(merges_path));
  auto vocab = bpe::vocab_from_text(cfg::read_file(vocab_path));
  auto ids_src = encode_corpus(cfg::read_lines(src), merges, vocab);
  auto ids_tgt = encode_corpus(cfg::read_lines(tgt), merges, vocab);
  train::TrainingConfig tc = train_config_from(conf, common.seed);

  model::ModelBundle<Real> bundle = [&] {
    if (!init_model.empty()) return model::load_bundle<Real>(init_model);
    Rng init_rng(common.seed, "model-init");
    return model::make_bundle<Real>(model_config_from(conf), vocab.size(), init_rng);
  }();
  if (bundle.vocab_size != vocab.size())
    throw std::runtime_error("model vocabulary (" + std::to_string(bundle.vocab_size) +
                             ") does not match vocab file (" +
                             std::to_string(vocab.size()) + ")");
  train::Trainer<Real> trainer(bundle, vocab, ids_src, ids_tgt, tc);
  if (resume && !init_model.empty())
    trainer.load_state_blobs(ckpt::load(init_model));

  std::vector<std::string> metric_lines;
  long ckpt_every = std::max<long>(1, tc.checkpoint_every);
  auto on_step = [&](const train::StepMetrics& m) {
    metric_lines.push_back(train::metrics_line(m));
    if ((m.step + 1) % ckpt_every == 0) ckpt::save(out_model, trainer.state_blobs());
  };
  train::TrainResult result;
  std::string failure;
  try {
    result = trainer.train(on_step);
  } catch (const std::exception& e) {
    failure = e.what();
  }
  ckpt::save(out_model, trainer.state_blobs());
  std::vector<std::string> outputs{out_model};
  if (!metrics_path.empty()) {
    cfg::write_lines(metrics_path, metric_lines);
    outputs.push_back(metrics_path);
  }
  record(common, "train", conf, {src, tgt, merges_path, vocab_path}, outputs);
  if (!failure.empty()) {
    std::cerr << "error: " << failure << " (checkpoint retained at " << out_model
              << ")\n";
    return 1;
  }
  std::cout << "trained " << result.steps_run << " steps, ema "
            << result.final_ema
            << (result.reached_threshold ? " (threshold reached)" : "")
            << ", bt skipped " << result.bt_skipped << "\n";
  return 0;
}

int cmd_translate(const Common& common, const std::string& model_path,
                  const std::string& merges_path, const std::string& vocab_path,
                  const std::string& in, const std::string& from_isa,
                  const std::string& out, long beam) {
  cfg::Config conf = common.resolve();
  auto merges = bpe::merges_from_text(cfg::read_file(merges_path));
  auto vocab = bpe::vocab_from_text(cfg::read_file(vocab_path));
  auto bundle = model::load_bundle<Real>(model_path);
  auto blocks = cfg::read_lines(in);
  long slack = conf.integer("bt_gen_slack", 32);
  (void)beam;  // greedy is the default decoding mode
  auto result = eval::translate_binary(blocks, from_isa, bundle, merges, vocab, slack);
  cfg::write_lines(out, result.lines);
  record(common, "translate", conf, {model_path, in}, {out});
  std::cout << "translated " << result.lines.size() << " blocks ("
            << result.failures << " failures)\n";
  return 0;
}

int cmd_eval_bleu(const Common& common, const std::string& hyp, const std::string& ref,
                  const std::string& report_path) {
  cfg::Config conf = common.resolve();
  auto r = eval::corpus_bleu(cfg::read_lines(hyp), cfg::read_lines(ref));
  std::string text = eval::bleu_report_text(r);
  std::vector<std::string> outputs;
  if (!report_path.empty()) {
    cfg::atomic_write_file(report_path, text);
    outputs.push_back(report_path);
  }
  record(common, "eval-bleu", conf, {hyp, ref}, outputs);
  std::cout << text;
  return 0;
}

int cmd_export_embeddings(const Common& common, const std::string& model_path,
                          const std::string& vocab_path, const std::string& out,
                          bool opcode_only, const std::string& profiles_csv) {
  cfg::Config conf = common.resolve();
  auto vocab = bpe::vocab_from_text(cfg::read_file(vocab_path));
  auto bundle = model::load_bundle<Real>(model_path);
  std::vector<const frontend::IsaProfile*> profiles;
  std::stringstream ss(profiles_csv);
  std::string part;
  while (std::getline(ss, part, ','))
    if (!part.empty()) profiles.push_back(&frontend::builtin_profile(part));
  auto lines = eval::export_embeddings(bundle, vocab, opcode_only, profiles);
  cfg::write_lines(out, lines);
  record(common, "export-embeddings", conf, {model_path, vocab_path}, {out});
  std::cout << "exported " << lines.size() << " embeddings\n";
  return 0;
}

int cmd_train_detector(const Common& common, const std::string& model_path,
                       const std::string& merges_path, const std::string& vocab_path,
                       const std::string& train_json, const std::string& train_isa,
                       const std::string& out_detector, const std::string& log_path) {
  cfg::Config conf = common.resolve();
  auto merges = bpe::merges_from_text(cfg::read_file(merges_path));
  auto vocab = bpe::vocab_from_text(cfg::read_file(vocab_path));
  auto bundle = model::load_bundle<Real>(model_path);
  auto samples = load_detection_json(train_json);

  detect::DetectorConfig dc;
  dc.hidden = conf.integer("det_hidden", 16);
  dc.layers = conf.integer("det_layers", 2);
  dc.batch = conf.integer("det_batch", 36);
  dc.epochs = conf.integer("det_epochs", 12);
  dc.lr = conf.real("det_lr", 1e-3);
  dc.seed = common.seed;
  dc.max_window = conf.integer("det_max_window", 4096);

  Rng rng(common.seed, "detector-init");
  auto detector = detect::make_detector<Real>(bundle.tok_emb, dc, train_isa, rng);
  std::vector<detect::LabeledSample> train_set;
  bpe::Encoder enc(merges, vocab);
  for (const auto& s : samples) {
    detect::LabeledSample ls;
    ls.ids = encode_concat_blocks(s.blocks, enc);
    ls.label = s.label;
    train_set.push_back(std::move(ls));
  }
  auto result = detect::train_detector(detector, train_set);
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
  ckpt::save(out_detector, detect::detector_to_blobs(detector));
  std::vector<std::string> outputs{out_detector};
  if (!log_path.empty()) {
    cfg::write_lines(log_path, result.epoch_log);
    outputs.push_back(log_path);
  }
  record(common, "train-detector", conf, {model_path, train_json}, outputs);
  std::cout << "detector trained on " << train_set.size() << " samples ("
            << train_isa << ") -> " << out_detector << "\n";
  return 0;
}

int cmd_score(const Common& common, const std::string& detector_path,
              const std::string& merges_path, const std::string& vocab_path,
              const std::string& in_json, const std::string& out) {
  cfg::Config conf = common.resolve();
  auto merges = bpe::merges_from_text(cfg::read_file(merges_path));
  auto vocab = bpe::vocab_from_text(cfg::read_file(vocab_path));
  auto detector = detect::detector_from_blobs<Real>(ckpt::load(detector_path));
  auto samples = load_detection_json(in_json);
  bpe::Encoder enc(merges, vocab);
  std::vector<std::string> lines;
  for (const auto& s : samples) {
    auto ids = encode_concat_blocks(s.blocks, enc);
    double score = detect::score_sample(ids, detector);
    char buf[96];
    std::snprintf(buf, sizeof buf, "%ld %.6f %d", s.id, score, s.label);
    lines.emplace_back(buf);
  }
  cfg::write_lines(out, lines);
  record(common, "score", conf, {detector_path, in_json}, {out});
  std::cout << "scored " << lines.size() << " samples\n";
  return 0;
}

int cmd_eval_auc(const Common& common, const std::string& scores_path,
                 const std::string& report_path) {
  cfg::Config conf = common.resolve();
  std::vector<double> scores;
  std::vector<int> labels;
  for (const auto& line : cfg::read_lines(scores_path)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    long id;
    double score;
    int label;
    if (!(ss >> id >> score >> label))
      throw std::runtime_error("bad score line: " + line);
    scores.push_back(score);
    labels.push_back(label);
  }
  double a = detect::auc(scores, labels);
  char buf[64];
  std::snprintf(buf, sizeof buf, "auc=%.6f\nsamples=%zu\n", a, scores.size());
  std::vector<std::string> outputs;
  if (!report_path.empty()) {
    cfg::atomic_write_file(report_path, buf);
    outputs.push_back(report_path);
  }
  record(common, "eval-auc", conf, {scores_path}, outputs);
  std::cout << buf;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fmtx: unsupervised cross-ISA binary code translation"};
  app.require_subcommand(1);
  Common common;

  // normalize
  std::string in, isa, out, rules = "all";
  auto* normalize = app.add_subcommand("normalize", "normalize a disassembly dump");
  add_common(normalize, common);
  normalize->add_option("--in", in)->required();
  normalize->add_option("--isa", isa)->required();
  normalize->add_option("--out", out)->required();
  normalize->add_option("--rules", rules, "subset like R1,R3 (default all)");

  // build-corpus
  std::string report;
  auto* build_corpus = app.add_subcommand("build-corpus",
                                          "normalize, deduplicate and report");
  add_common(build_corpus, common);
  build_corpus->add_option("--in", in)->required();
  build_corpus->add_option("--isa", isa)->required();
  build_corpus->add_option("--out", out)->required();
  build_corpus->add_option("--report", report);
  build_corpus->add_option("--rules", rules);

  // learn-bpe
  std::string src, tgt, out_merges, out_vocab;
  long merge_count = 0;
  auto* learn_bpe = app.add_subcommand("learn-bpe", "learn joint BPE merges");
  add_common(learn_bpe, common);
  learn_bpe->add_option("--src", src)->required();
  learn_bpe->add_option("--tgt", tgt)->required();
  learn_bpe->add_option("--merges", merge_count)->required();
  learn_bpe->add_option("--out-merges", out_merges)->required();
  learn_bpe->add_option("--out-vocab", out_vocab)->required();

  // select-merges
  std::string candidates;
  auto* select_merges = app.add_subcommand("select-merges",
                                           "pick a merge count by the size rules");
  add_common(select_merges, common);
  select_merges->add_option("--src", src)->required();
  select_merges->add_option("--tgt", tgt)->required();
  select_merges->add_option("--candidates", candidates, "comma separated")->required();
  select_merges->add_option("--report", report);

  // gen-toy
  long count = 2000, heldout = 500, detect_train = 0, detect_test = 0;
  std::string out_dir;
  auto* gen_toy = app.add_subcommand("gen-toy", "generate the toy ISA pair corpora");
  add_common(gen_toy, common);
  gen_toy->add_option("--count", count, "training blocks per side");
  gen_toy->add_option("--out-dir", out_dir)->required();
  gen_toy->add_option("--heldout", heldout);
  gen_toy->add_option("--detect-train", detect_train, "detection samples per class");
  gen_toy->add_option("--detect-test", detect_test, "detection samples per class");

  // pretrain
  std::string merges_path, vocab_path, model_out, metrics;
  auto* pretrain = app.add_subcommand("pretrain", "CLM+MLM pretraining");
  add_common(pretrain, common);
  pretrain->add_option("--src", src)->required();
  pretrain->add_option("--tgt", tgt)->required();
  pretrain->add_option("--merges", merges_path)->required();
  pretrain->add_option("--vocab", vocab_path)->required();
  pretrain->add_option("--out", model_out)->required();
  pretrain->add_option("--metrics", metrics);

  // train
  std::string init_model;
  bool resume = false;
  auto* train_cmd = app.add_subcommand("train", "DAE+BT+MLE training");
  add_common(train_cmd, common);
  train_cmd->add_option("--src", src)->required();
  train_cmd->add_option("--tgt", tgt)->required();
  train_cmd->add_option("--merges", merges_path)->required();
  train_cmd->add_option("--vocab", vocab_path)->required();
  train_cmd->add_option("--init", init_model, "checkpoint to start from");
  train_cmd->add_option("--out", model_out)->required();
  train_cmd->add_option("--metrics", metrics);
  train_cmd->add_flag("--resume", resume, "restore optimizer state from --init");

  // translate
  std::string model_path, from_isa;
  long beam = 1;
  auto* translate = app.add_subcommand("translate", "translate blocks to the other ISA");
  add_common(translate, common);
  translate->add_option("--model", model_path)->required();
  translate->add_option("--merges", merges_path)->required();
  translate->add_option("--vocab", vocab_path)->required();
  translate->add_option("--in", in)->required();
  translate->add_option("--from-isa", from_isa)->required();
  translate->add_option("--out", out)->required();
  translate->add_option("--beam", beam);

  // eval-bleu
  std::string hyp, ref;
  auto* eval_bleu = app.add_subcommand("eval-bleu", "corpus BLEU");
  add_common(eval_bleu, common);
  eval_bleu->add_option("--hyp", hyp)->required();
  eval_bleu->add_option("--ref", ref)->required();
  eval_bleu->add_option("--report", report);

  // export-embeddings
  bool opcode_only = false;
  std::string profiles_csv;
  auto* export_emb = app.add_subcommand("export-embeddings", "dump token embeddings");
  add_common(export_emb, common);
  export_emb->add_option("--model", model_path)->required();
  export_emb->add_option("--vocab", vocab_path)->required();
  export_emb->add_option("--out", out)->required();
  export_emb->add_flag("--opcode-only", opcode_only);
  export_emb->add_option("--profiles", profiles_csv, "comma separated ISA names");

  // train-detector
  std::string train_json, train_isa, detector_out, det_log;
  auto* train_det = app.add_subcommand("train-detector",
                                       "train the sequence classifier");
  add_common(train_det, common);
  train_det->add_option("--model", model_path)->required();
  train_det->add_option("--merges", merges_path)->required();
  train_det->add_option("--vocab", vocab_path)->required();
  train_det->add_option("--train", train_json)->required();
  train_det->add_option("--train-isa", train_isa)->required();
  train_det->add_option("--out", detector_out)->required();
  train_det->add_option("--log", det_log);

  // score
  std::string detector_path;
  auto* score = app.add_subcommand("score", "score samples with a detector");
  add_common(score, common);
  score->add_option("--detector", detector_path)->required();
  score->add_option("--merges", merges_path)->required();
  score->add_option("--vocab", vocab_path)->required();
  score->add_option("--in", in)->required();
  score->add_option("--out", out)->required();

  // eval-auc
  std::string scores_path;
  auto* eval_auc = app.add_subcommand("eval-auc", "AUC from a score report");
  add_common(eval_auc, common);
  eval_auc->add_option("--scores", scores_path)->required();
  eval_auc->add_option("--report", report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (normalize->parsed()) return cmd_normalize(common, in, isa, out, rules);
    if (build_corpus->parsed())
      return cmd_build_corpus(common, in, isa, out, report, rules);
    if (learn_bpe->parsed())
      return cmd_learn_bpe(common, src, tgt, merge_count, out_merges, out_vocab);
    if (select_merges->parsed())
      return cmd_select_merges(common, src, tgt, candidates, report);
    if (gen_toy->parsed())
      return cmd_gen_toy(common, count, out_dir, heldout, detect_train, detect_test);
    if (pretrain->parsed())
      return cmd_pretrain(common, src, tgt, merges_path, vocab_path, model_out, metrics);
    if (train_cmd->parsed())
      return cmd_train(common, src, tgt, merges_path, vocab_path, init_model,
                       model_out, metrics, resume);
    if (translate->parsed())
      return cmd_translate(common, model_path, merges_path, vocab_path, in, from_isa,
                           out, beam);
    if (eval_bleu->parsed()) return cmd_eval_bleu(common, hyp, ref, report);
    if (export_emb->parsed())
      return cmd_export_embeddings(common, model_path, vocab_path, out, opcode_only,
                                   profiles_csv);
    if (train_det->parsed())
      return cmd_train_detector(common, model_path, merges_path, vocab_path,
                                train_json, train_isa, detector_out, det_log);
    if (score->parsed())
      return cmd_score(common, detector_path, merges_path, vocab_path, in, out);
    if (eval_auc->parsed()) return cmd_eval_auc(common, scores_path, report);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
