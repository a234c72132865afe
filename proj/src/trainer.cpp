#include "hcscl/trainer.hpp"

#include "hcscl/errors.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace hcscl {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr_decay must lie in (0, 1]");
  if (decay_every < 1) throw ConfigError("decay_every must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (epochs < 0) throw ConfigError("epochs must be non-negative");
  if (!(lambda_image >= 0.0)) throw ConfigError("lambda_image must be non-negative");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"model", c.model},       {"lambda_image", c.lambda_image}, {"lr", c.lr},
           {"lr_decay", c.lr_decay}, {"decay_every", c.decay_every},   {"batch_size", c.batch_size},
           {"epochs", c.epochs},     {"seed", c.seed},                 {"clip_norm", c.clip_norm}};
}

void from_json(const json& j, TrainConfig& c) {
  if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
  c.lambda_image = j.value("lambda_image", c.lambda_image);
  c.lr = j.value("lr", c.lr);
  c.lr_decay = j.value("lr_decay", c.lr_decay);
  c.decay_every = j.value("decay_every", c.decay_every);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
}

double learning_rate(const TrainConfig& c, int epoch) {
  return c.lr * std::pow(c.lr_decay, static_cast<double>(epoch / c.decay_every));
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(const ad::ParameterStore& store, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps), m_(store), v_(store) {}

void Adam::step(ad::ParameterStore& store, const ad::Gradients& grads, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  int index = 0;
  for (auto& p : store) {
    const ad::ParamId id{index++};
    const ad::Matrix& g = grads[id];
    ad::Matrix& m = m_[id];
    ad::Matrix& v = v_[id];
    m = beta1_ * m + (1.0 - beta1_) * g;
    v = beta2_ * v + (1.0 - beta2_) * g.cwiseProduct(g);
    p.value.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
  }
}

// ---------------------------------------------------------------------------
// Training

json epoch_log_json(const EpochLog& e) {
  json j{{"epoch", e.epoch},
         {"lr", e.lr},
         {"train_loss", e.train_loss},
         {"train_text_loss", e.train_text_loss},
         {"train_image_loss", e.train_image_loss},
         {"train_ip", e.train_ip},
         {"train_token_accuracy", e.train_token_accuracy}};
  j["valid_loss"] = e.valid_loss ? json(*e.valid_loss) : json(nullptr);
  j["valid_ip"] = e.valid_ip ? json(*e.valid_ip) : json(nullptr);
  j["valid_token_accuracy"] = e.valid_token_accuracy ? json(*e.valid_token_accuracy) : json(nullptr);
  return j;
}

TrainState init_train_state(const TrainConfig& config) {
  config.validate();
  TrainState s;
  s.config = config;
  s.model = build_model(config.model, config.seed);
  s.optimizer = Adam(s.model.store);
  s.rng.seed(config.seed ^ 0x9e3779b97f4a7c15ULL);
  return s;
}

namespace {

void check_corpus_fits(const Corpus& corpus, const ModelConfig& mc, const char* which) {
  if (corpus.vocab.size() != mc.vocab_size || corpus.d_obj != mc.d_obj || corpus.n_attr != mc.n_attr)
    throw ConfigError(std::string(which) + " corpus does not match the model dimensions (vocab " +
                      std::to_string(corpus.vocab.size()) + "/" + std::to_string(mc.vocab_size) + ", d_obj " +
                      std::to_string(corpus.d_obj) + "/" + std::to_string(mc.d_obj) + ", n_attr " +
                      std::to_string(corpus.n_attr) + "/" + std::to_string(mc.n_attr) + ")");
  for (std::size_t i = 0; i < corpus.samples.size(); ++i) check_limits(mc, corpus.samples[i], i);
}

struct SampleStats {
  double total = 0, text = 0, image = 0;
  bool image_hit = false;
  int tokens = 0, correct = 0;
};

SampleStats stats_of(const SampleLoss& sl, const Sample& sample) {
  SampleStats s;
  s.total = sl.total.scalar();
  s.text = sl.text.scalar();
  s.image = sl.image.valid() ? sl.image.scalar() : 0.0;
  if (sl.scores) s.image_hit = select_image(ad::Vector(sl.scores->images.value().col(0))) == sample.gold_image;
  const auto& targets = sl.text_detail.targets;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    ad::Index best = 0;
    sl.text_detail.log_probs[t].value().col(0).maxCoeff(&best);
    s.correct += static_cast<int>(best) == targets[t] ? 1 : 0;
    ++s.tokens;
  }
  return s;
}

struct ValidStats {
  double loss = 0, ip = 0, token_accuracy = 0;
};

ValidStats validate_model(const Model& model, const Corpus& valid, double lambda_image) {
  ValidStats v;
  int tokens = 0, correct = 0;
  std::vector<int> gold, chosen;
  for (const auto& sample : valid.samples) {
    ad::Graph g(&model.store);
    const SampleStats s = stats_of(total_loss(g, model, sample, lambda_image), sample);
    v.loss += s.total;
    tokens += s.tokens;
    correct += s.correct;
    gold.push_back(sample.gold_image);
    chosen.push_back(predict(model, sample).image);
  }
  const double n = static_cast<double>(valid.samples.size());
  v.loss /= n;
  v.token_accuracy = tokens > 0 ? static_cast<double>(correct) / tokens : 0.0;
  v.ip = metrics::image_precision(gold, chosen);
  return v;
}

}  // namespace

TrainResult train(const Corpus& train_set, const Corpus* valid_set, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  TrainConfig c = config;
  c.model = config_for_corpus(config.model, train_set);
  return train_from(init_train_state(c), train_set, valid_set, on_epoch);
}

TrainResult train_from(TrainState state, const Corpus& train_set, const Corpus* valid_set,
                       const EpochCallback& on_epoch) {
  const TrainConfig& cfg = state.config;
  cfg.validate();
  check_corpus_fits(train_set, cfg.model, "training");
  if (valid_set != nullptr && valid_set->samples.empty()) valid_set = nullptr;
  if (valid_set != nullptr) check_corpus_fits(*valid_set, cfg.model, "validation");
  if (train_set.samples.empty() && state.epoch < cfg.epochs) throw ValidationError("training split is empty");

  TrainResult result;
  result.best_model = state.model;
  double best_valid = std::numeric_limits<double>::infinity();
  const std::size_t n = train_set.samples.size();
  std::vector<std::size_t> order(n);

  for (int epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
    EpochLog log;
    log.epoch = epoch + 1;
    log.lr = learning_rate(cfg, epoch);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), state.rng);

    int tokens = 0, correct = 0, hits = 0;
    long step = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(n, start + static_cast<std::size_t>(cfg.batch_size));
      ad::Gradients grads(state.model.store);
      for (std::size_t k = start; k < end; ++k) {
        const Sample& sample = train_set.samples[order[k]];
        ad::Graph g(&state.model.store);
        SampleLoss sl = total_loss(g, state.model, sample, cfg.lambda_image);
        const SampleStats s = stats_of(sl, sample);
        if (!std::isfinite(s.total))
          throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", step " +
                                std::to_string(step + 1) + ", sample " + std::to_string(order[k]));
        g.backward(sl.total);
        g.accumulate(grads);
        log.train_loss += s.total;
        log.train_text_loss += s.text;
        log.train_image_loss += s.image;
        hits += s.image_hit ? 1 : 0;
        tokens += s.tokens;
        correct += s.correct;
      }
      grads.scale(1.0 / static_cast<double>(end - start));
      const double norm = std::sqrt(grads.squared_norm());
      if (!std::isfinite(norm))
        throw DivergenceError("non-finite gradient at epoch " + std::to_string(epoch + 1) + ", step " +
                              std::to_string(step + 1));
      if (norm > cfg.clip_norm) grads.scale(cfg.clip_norm / norm);
      state.optimizer.step(state.model.store, grads, log.lr);
      ++step;
    }
    const double count = static_cast<double>(n);
    log.train_loss /= count;
    log.train_text_loss /= count;
    log.train_image_loss /= count;
    log.train_ip = state.model.selector ? static_cast<double>(hits) / count : 0.0;
    log.train_token_accuracy = tokens > 0 ? static_cast<double>(correct) / tokens : 0.0;

    state.epoch = epoch + 1;
    if (valid_set != nullptr) {
      const ValidStats v = validate_model(state.model, *valid_set, cfg.lambda_image);
      log.valid_loss = v.loss;
      log.valid_ip = v.ip;
      log.valid_token_accuracy = v.token_accuracy;
      if (v.loss < best_valid) {
        best_valid = v.loss;
        result.best_model = state.model;
        result.best_epoch = state.epoch;
      }
    }
    result.log.push_back(log);
    if (on_epoch) on_epoch(log, state);
  }
  if (valid_set == nullptr) {
    result.best_model = state.model;
    result.best_epoch = state.epoch;
  }
  result.final_state = std::move(state);
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'H', 'C', 'S', 'C', 'L', 'C', 'K', '1'};

void write_u64(std::ostream& out, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8)) throw ParseError("checkpoint truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_string(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in) {
  const auto len = read_u64(in);
  if (len > (1ULL << 32)) throw ParseError("checkpoint string length is implausible");
  std::string s(len, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(len))) throw ParseError("checkpoint truncated");
  return s;
}

void write_tensor(std::ostream& out, const std::string& name, const ad::Matrix& m) {
  write_string(out, name);
  write_u64(out, static_cast<std::uint64_t>(m.rows()));
  write_u64(out, static_cast<std::uint64_t>(m.cols()));
  for (ad::Index c = 0; c < m.cols(); ++c) {
    for (ad::Index r = 0; r < m.rows(); ++r) {
      std::uint64_t bits = 0;
      const double v = m(r, c);
      std::memcpy(&bits, &v, sizeof bits);
      write_u64(out, bits);
    }
  }
}

void read_tensor_into(std::istream& in, const std::string& expected_name, ad::Matrix& m) {
  const std::string name = read_string(in);
  if (name != expected_name) throw ParseError("checkpoint tensor '" + name + "' where '" + expected_name + "' expected");
  const auto rows = static_cast<ad::Index>(read_u64(in));
  const auto cols = static_cast<ad::Index>(read_u64(in));
  if (rows != m.rows() || cols != m.cols())
    throw ParseError("checkpoint tensor '" + name + "' has shape " + std::to_string(rows) + "x" +
                     std::to_string(cols) + ", model expects " + std::to_string(m.rows()) + "x" +
                     std::to_string(m.cols()));
  for (ad::Index c = 0; c < cols; ++c) {
    for (ad::Index r = 0; r < rows; ++r) {
      const std::uint64_t bits = read_u64(in);
      double v = 0;
      std::memcpy(&v, &bits, sizeof v);
      m(r, c) = v;
    }
  }
}

}  // namespace

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  std::ostringstream rng_state;
  rng_state << state.rng;
  const json meta{{"config", state.config},
                  {"epoch", state.epoch},
                  {"optimizer_steps", state.optimizer.steps()},
                  {"rng", rng_state.str()},
                  {"tensors", state.model.store.size()}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint: " + path.string());
  out.write(kMagic, sizeof kMagic);
  write_string(out, meta.dump());
  int index = 0;
  for (const auto& p : state.model.store) {
    const ad::ParamId id{index++};
    write_tensor(out, p.name, p.value);
    write_tensor(out, p.name + "#m", state.optimizer.first_moment()[id]);
    write_tensor(out, p.name + "#v", state.optimizer.second_moment()[id]);
  }
  if (!out) throw IoError("write failed: " + path.string());
}

TrainState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  char magic[sizeof kMagic];
  if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw ParseError("not a checkpoint file: " + path.string());
  json meta;
  try {
    meta = json::parse(read_string(in));
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint metadata: ") + e.what());
  }
  TrainState state = init_train_state(meta.at("config").get<TrainConfig>());
  if (meta.at("tensors").get<std::size_t>() != state.model.store.size())
    throw ParseError("checkpoint tensor count does not match its configuration");
  state.epoch = meta.at("epoch").get<int>();
  state.optimizer.set_steps(meta.at("optimizer_steps").get<long>());
  std::istringstream rng_state(meta.at("rng").get<std::string>());
  rng_state >> state.rng;
  int index = 0;
  for (auto& p : state.model.store) {
    const ad::ParamId id{index++};
    read_tensor_into(in, p.name, p.value);
    read_tensor_into(in, p.name + "#m", state.optimizer.first_moment()[id]);
    read_tensor_into(in, p.name + "#v", state.optimizer.second_moment()[id]);
  }
  return state;
}

// ---------------------------------------------------------------------------
// Evaluation

Evaluation evaluate_model(const Model& model, const Corpus& test_set) {
  check_corpus_fits(test_set, model.config, "test");
  Evaluation out;
  std::vector<std::vector<TokenId>> refs, hyps;
  std::vector<int> gold, chosen;
  for (std::size_t i = 0; i < test_set.samples.size(); ++i) {
    const Sample& sample = test_set.samples[i];
    Prediction p = predict(model, sample);
    refs.push_back(strip_framing(sample.summary));
    hyps.push_back(strip_framing(p.summary));
    gold.push_back(sample.gold_image);
    chosen.push_back(p.image);
    out.predictions.push_back(metrics::PredictionRecord{static_cast<int>(i), p.summary, p.image});
  }
  out.report = metrics::evaluate(refs, hyps, gold, chosen);
  return out;
}

std::vector<std::pair<std::string, AblationFlags>> ablation_configurations() {
  AblationFlags word_object_only;
  word_object_only.sentence_scene_fusion = false;
  word_object_only.scene_encoder = false;

  AblationFlags sentence_scene_only;
  sentence_scene_only.word_object_fusion = false;
  sentence_scene_only.text_encoder = false;

  AblationFlags no_sentence_scene;
  no_sentence_scene.sentence_scene_fusion = false;

  AblationFlags no_word_object;
  no_word_object.word_object_fusion = false;

  return {{"HCSCL Word-Object only", word_object_only},
          {"HCSCL Sentence-Scene only", sentence_scene_only},
          {"HCSCL w/o Sentence-Scene Fusion", no_sentence_scene},
          {"HCSCL w/o Word-Object Fusion", no_word_object},
          {"HCSCL", AblationFlags{}}};
}

std::vector<AblationRow> run_ablation_suite(const Corpus& train_set, const Corpus& test_set, const TrainConfig& base) {
  std::vector<AblationRow> rows;
  for (const auto& [name, flags] : ablation_configurations()) {
    TrainConfig cfg = base;
    cfg.model.ablation = flags;
    cfg.model.ablation.image_branch = base.model.ablation.image_branch;
    TrainResult r = train(train_set, nullptr, cfg);
    AblationRow row;
    row.name = name;
    row.flags = cfg.model.ablation;
    row.reference = flags == AblationFlags{};
    row.parameter_count = r.final_state.model.store.scalar_count();
    row.report = evaluate_model(r.final_state.model, test_set).report;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace hcscl
