// hcscl: generate synthetic corpora, train, and evaluate.
//
//   hcscl generate --n-samples 600 --seed 7 --out data/
//   hcscl train --train data/train.jsonl --valid data/valid.jsonl --out model.ckpt
//   hcscl eval --checkpoint model.ckpt --test data/test.jsonl --predictions preds.jsonl
//
// Every flag can also come from `--config FILE` (one `key = value` per line,
// keys are flag names without the dashes, `#` starts a comment). Flags on the
// command line win over the file; HCSCL_SEED is the seed fallback.

#include "hcscl/errors.hpp"
#include "hcscl/synthdata.hpp"
#include "hcscl/trainer.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

using namespace hcscl;
using nlohmann::json;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Turns the config file into `--key=value` arguments.
std::vector<std::string> config_file_args(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read config file: " + path);
  std::vector<std::string> args;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw UsageError(path + ":" + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw UsageError(path + ":" + std::to_string(line_no) + ": empty key");
    args.push_back("--" + key + "=" + value);
  }
  return args;
}

// Config-file arguments go right after the subcommand so that anything on
// the command line is parsed later and wins.
std::vector<std::string> expand_args(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::string config;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) config = args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) config = args[i].substr(9);
  }
  if (config.empty() || args.empty()) return args;
  auto extra = config_file_args(config);
  args.insert(args.begin() + 1, extra.begin(), extra.end());
  return args;
}

struct ModelFlags {
  std::vector<std::string> ablate;
  std::string graph_activation = "relu";
  std::string ff_activation = "relu";
  std::string selector_input = "product";
};

void add_model_flags(CLI::App* cmd, TrainConfig& tc, ModelFlags& mf) {
  auto& m = tc.model;
  cmd->add_option("--epochs", tc.epochs, "Training epochs")->capture_default_str();
  cmd->add_option("--lr", tc.lr, "Initial learning rate")->capture_default_str();
  cmd->add_option("--lr-decay", tc.lr_decay, "Learning-rate decay factor")->capture_default_str();
  cmd->add_option("--decay-every", tc.decay_every, "Epochs between decays")->capture_default_str();
  cmd->add_option("--batch-size", tc.batch_size, "Samples per batch")->capture_default_str();
  cmd->add_option("--lambda", tc.lambda_image, "Weight of the image loss")->capture_default_str();
  cmd->add_option("--clip-norm", tc.clip_norm, "Global gradient-norm clip")->capture_default_str();
  cmd->add_option("--seed", tc.seed, "Random seed")->envname("HCSCL_SEED")->capture_default_str();
  cmd->add_option("--d-emb", m.d_emb, "Word embedding width")->capture_default_str();
  cmd->add_option("--d-h", m.d_h, "Hidden width (even)")->capture_default_str();
  cmd->add_option("--d-l", m.d_l, "Box embedding width")->capture_default_str();
  cmd->add_option("--d-a", m.d_a, "Attribute embedding width")->capture_default_str();
  cmd->add_option("--d-ff", m.d_ff, "CME feed-forward width")->capture_default_str();
  cmd->add_option("--d-edge", m.d_edge, "Edge scorer width")->capture_default_str();
  cmd->add_option("--layers", m.n_layers, "CME layers")->capture_default_str();
  cmd->add_flag("--scaled-scores", m.scaled_scores, "Scale attention scores by 1/sqrt(d)");
  cmd->add_option("--iou-threshold", m.iou_threshold, "IOU edge threshold")->capture_default_str();
  cmd->add_option("--canvas", m.canvas, "Box normalization canvas")->capture_default_str();
  cmd->add_option("--graph-activation", mf.graph_activation, "identity|relu|tanh|sigmoid")->capture_default_str();
  cmd->add_option("--ff-activation", mf.ff_activation, "identity|relu|tanh|sigmoid")->capture_default_str();
  cmd->add_option("--selector-input", mf.selector_input, "product|concat")->capture_default_str();
  cmd->add_flag("--selector-normalize", m.selector_normalize, "Average object and scene scores per image");
  cmd->add_flag("!--no-share-target-embedding", m.share_target_embedding, "Separate decoder input embedding");
  cmd->add_option("--max-sentences", m.max_sentences)->capture_default_str();
  cmd->add_option("--max-words", m.max_words)->capture_default_str();
  cmd->add_option("--max-images", m.max_images)->capture_default_str();
  cmd->add_option("--max-objects", m.max_objects)->capture_default_str();
  cmd->add_option("--max-summary-len", m.max_summary_len)->capture_default_str();
  cmd->add_option("--ablate", mf.ablate,
                  "no-scene | no-word-object | no-image | no-text-encoder | no-scene-encoder (repeatable)")
      ->check(CLI::IsMember({"no-scene", "no-sentence-scene", "no-word-object", "no-image", "no-text-encoder",
                             "no-scene-encoder"}))
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
}

void apply_model_flags(TrainConfig& tc, const ModelFlags& mf) {
  try {
    tc.model.graph_activation = ad::parse_activation(mf.graph_activation);
    tc.model.ff_activation = ad::parse_activation(mf.ff_activation);
    tc.model.selector_input = parse_selector_input(mf.selector_input);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  for (const auto& a : mf.ablate) {
    auto& f = tc.model.ablation;
    if (a == "no-scene" || a == "no-sentence-scene") f.sentence_scene_fusion = false;
    if (a == "no-word-object") f.word_object_fusion = false;
    if (a == "no-image") f.image_branch = false;
    if (a == "no-text-encoder") f.text_encoder = false;
    if (a == "no-scene-encoder") {
      f.scene_encoder = false;
      f.sentence_scene_fusion = false;
    }
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// generate

struct GenerateArgs {
  synth::SynthConfig synth;
  double train_frac = 0.8, valid_frac = 0.1, test_frac = 0.1;
  std::uint64_t split_seed = 0;
  std::string out;
};

json truth_json(const synth::SampleTruth& t) {
  json images = json::array();
  for (const auto& img : t.images) {
    json pairs = json::array();
    for (const auto& [a, b] : img.planted_pairs) pairs.push_back({a, b});
    images.push_back(
        {{"object_concept", img.object_concept}, {"planted_pairs", pairs}, {"component_count", img.component_count}});
  }
  return json{{"concepts", t.concepts}, {"images", images}};
}

int run_generate(const GenerateArgs& a) {
  try {
    a.synth.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  const synth::SynthResult result = synth::generate_with_truth(a.synth);
  const auto parts = split_indices(result.corpus.samples.size(), {a.train_frac, a.valid_frac, a.test_frac}, a.split_seed);

  const std::filesystem::path dir(a.out);
  std::filesystem::create_directories(dir);
  const char* names[3] = {"train", "valid", "test"};
  json manifest{{"synth_config", a.synth},
                {"split", {{"fractions", {a.train_frac, a.valid_frac, a.test_frac}}, {"seed", a.split_seed}}},
                {"concept_tokens_start", kNumSpecialTokens},
                {"concept_latents", result.concept_latents},
                {"projection", result.projection}};
  for (int k = 0; k < 3; ++k) {
    Corpus part;
    part.vocab = result.corpus.vocab;
    part.d_obj = result.corpus.d_obj;
    part.n_attr = result.corpus.n_attr;
    json truth = json::array();
    for (std::size_t i : parts[static_cast<std::size_t>(k)]) {
      part.samples.push_back(result.corpus.samples[i]);
      json t = truth_json(result.truth[i]);
      t["source_index"] = i;
      truth.push_back(std::move(t));
    }
    const auto file = std::string(names[k]) + ".jsonl";
    // Empty splits are still written (header only) so the layout is fixed.
    write_text(dir / file, corpus_to_jsonl(part));
    manifest["files"][names[k]] = {{"path", file}, {"samples", part.samples.size()}};
    manifest["truth"][names[k]] = std::move(truth);
  }
  write_text(dir / "manifest.json", manifest.dump(1) + "\n");
  std::cout << "wrote " << parts[0].size() << "/" << parts[1].size() << "/" << parts[2].size()
            << " train/valid/test samples to " << dir.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  TrainConfig config;
  ModelFlags model_flags;
  std::string train_path, valid_path, out = "model.ckpt", log_path, resume;
};

int run_train(TrainArgs& a) {
  apply_model_flags(a.config, a.model_flags);
  try {
    a.config.validate();
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
  const Corpus train_set = load_corpus(a.train_path);
  std::optional<Corpus> valid_set;
  if (!a.valid_path.empty()) {
    valid_set = load_corpus(a.valid_path);
    if (valid_set->samples.empty()) valid_set.reset();
  }
  const std::string log_path = a.log_path.empty() ? a.out + ".log.jsonl" : a.log_path;
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw IoError("cannot write " + log_path);

  TrainState state;
  if (!a.resume.empty()) {
    state = load_checkpoint(a.resume);
    state.config.epochs = a.config.epochs;
  } else {
    TrainConfig cfg = a.config;
    cfg.model = config_for_corpus(cfg.model, train_set);
    try {
      cfg.model.validate();
    } catch (const ConfigError& e) {
      throw UsageError(e.what());
    }
    state = init_train_state(cfg);
  }
  std::cout << "parameters: " << state.model.store.scalar_count() << "\n";
  const TrainResult r = train_from(std::move(state), train_set, valid_set ? &*valid_set : nullptr,
                                   [&](const EpochLog& e, const TrainState&) {
                                     const json j = epoch_log_json(e);
                                     log << j.dump() << "\n" << std::flush;
                                     std::cout << j.dump() << "\n" << std::flush;
                                   });
  save_checkpoint(r.final_state, a.out);
  if (valid_set && r.best_epoch > 0) {
    TrainState best = r.final_state;
    best.model = r.best_model;
    save_checkpoint(best, a.out + ".best");
    std::cout << "best validation epoch " << r.best_epoch << " -> " << a.out << ".best\n";
  }
  std::cout << "checkpoint -> " << a.out << "\nlog -> " << log_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string checkpoint, test_path, train_path, predictions = "predictions.jsonl", table_path;
  bool ablation_table = false;
  TrainConfig config;
  ModelFlags model_flags;
};

std::string fmt(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << v;
  return s.str();
}

std::string metrics_table(const metrics::Report& r) {
  std::ostringstream s;
  s << "R-1\tR-2\tR-L\tB-1\tB-2\tB-3\tB-4\tIP\n";
  s << fmt(r.rouge1) << '\t' << fmt(r.rouge2) << '\t' << fmt(r.rougel) << '\t' << fmt(r.bleu1) << '\t' << fmt(r.bleu2)
    << '\t' << fmt(r.bleu3) << '\t' << fmt(r.bleu4) << '\t' << fmt(r.ip) << '\n';
  return s.str();
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream s;
  s << "Model\tR-1\tR-2\tB-1\tIP\tparams\treference\n";
  for (const auto& r : rows)
    s << r.name << '\t' << fmt(r.report.rouge1) << '\t' << fmt(r.report.rouge2) << '\t' << fmt(r.report.bleu1) << '\t'
      << fmt(r.report.ip) << '\t' << r.parameter_count << '\t' << (r.reference ? "yes" : "no") << '\n';
  return s.str();
}

int run_eval(EvalArgs& a, bool training_flags_given) {
  const Corpus test_set = load_corpus(a.test_path);
  std::string table;
  if (a.ablation_table) {
    if (a.train_path.empty()) throw UsageError("--ablation-table needs --train");
    TrainConfig base = a.config;
    if (!a.checkpoint.empty() && !training_flags_given) base = load_checkpoint(a.checkpoint).config;
    apply_model_flags(base, a.model_flags);
    const Corpus train_set = load_corpus(a.train_path);
    table = ablation_table(run_ablation_suite(train_set, test_set, base));
  } else {
    if (a.checkpoint.empty()) throw UsageError("--checkpoint is required");
    const TrainState state = load_checkpoint(a.checkpoint);
    const Evaluation ev = evaluate_model(state.model, test_set);
    metrics::write_predictions(ev.predictions, a.predictions);
    table = metrics_table(ev.report);
    std::cout << "predictions -> " << a.predictions << "\n";
  }
  std::cout << table;
  if (!a.table_path.empty()) write_text(a.table_path, table);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HCSCL multimodal summarization: synthetic data, training, evaluation", "hcscl"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  std::string config_path;
  app.add_option("--config", config_path, "key = value config file; command-line flags win");

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Write a synthetic corpus split into train/valid/test");
  g->add_option("--config", config_path, "key = value config file");
  auto& s = gen.synth;
  g->add_option("--n-samples", s.n_samples)->capture_default_str();
  g->add_option("--vocab-size", s.vocab_size)->capture_default_str();
  g->add_option("--n-concepts", s.n_concepts)->capture_default_str();
  g->add_option("--sentences-per-doc", s.sentences_per_doc)->capture_default_str();
  g->add_option("--words-per-sentence", s.words_per_sentence)->capture_default_str();
  g->add_option("--images-per-doc", s.images_per_doc)->capture_default_str();
  g->add_option("--objects-per-image", s.objects_per_image)->capture_default_str();
  g->add_option("--d-obj", s.d_obj)->capture_default_str();
  g->add_option("--n-attr", s.n_attr)->capture_default_str();
  g->add_option("--noise-std", s.noise_std)->capture_default_str();
  g->add_option("--seed", s.seed)->envname("HCSCL_SEED")->capture_default_str();
  g->add_option("--train-frac", gen.train_frac)->capture_default_str();
  g->add_option("--valid-frac", gen.valid_frac)->capture_default_str();
  g->add_option("--test-frac", gen.test_frac)->capture_default_str();
  g->add_option("--split-seed", gen.split_seed, "Shuffle seed for the split (default: --seed)");
  g->add_option("--out", gen.out, "Output directory")->required();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model and write a checkpoint plus a JSONL epoch log");
  t->add_option("--config", config_path, "key = value config file");
  t->add_option("--train", tr.train_path, "Training corpus (JSONL)")->required();
  t->add_option("--valid", tr.valid_path, "Validation corpus (JSONL)");
  t->add_option("--out", tr.out, "Checkpoint path")->capture_default_str();
  t->add_option("--log", tr.log_path, "Epoch log path (default: <out>.log.jsonl)");
  t->add_option("--resume", tr.resume, "Continue from a checkpoint up to --epochs");
  add_model_flags(t, tr.config, tr.model_flags);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Decode a test corpus and report R-1/R-2/R-L/B-1..4/IP");
  e->add_option("--config", config_path, "key = value config file");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint to evaluate");
  e->add_option("--test", ev.test_path, "Test corpus (JSONL)")->required();
  e->add_option("--predictions", ev.predictions, "Predictions output (JSONL)")->capture_default_str();
  e->add_option("--table", ev.table_path, "Also write the metrics table here");
  e->add_flag("--ablation-table", ev.ablation_table, "Train and score the five ablation configurations");
  e->add_option("--train", ev.train_path, "Training corpus for --ablation-table");
  add_model_flags(e, ev.config, ev.model_flags);

  std::vector<std::string> args;
  try {
    args = expand_args(argc, argv);
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitUsage;
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  }

  try {
    if (g->parsed()) {
      if (g->count("--split-seed") == 0) gen.split_seed = gen.synth.seed;
      return run_generate(gen);
    }
    if (t->parsed()) return run_train(tr);
    bool training_flags = false;
    for (const auto* opt : e->get_options())
      if (opt->count() > 0 && opt->get_name() != "--checkpoint" && opt->get_name() != "--test" &&
          opt->get_name() != "--predictions" && opt->get_name() != "--table" && opt->get_name() != "--ablation-table" &&
          opt->get_name() != "--train" && opt->get_name() != "--config")
        training_flags = true;
    return run_eval(ev, training_flags);
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kExitRuntime;
  }
}
