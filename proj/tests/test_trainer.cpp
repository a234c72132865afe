#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"

#include "hcscl/errors.hpp"
#include "hcscl/synthdata.hpp"
#include "hcscl/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <cstring>
#include <fstream>

using namespace hcscl;
using ad::Matrix;

namespace {

TrainConfig small_training(int epochs) {
  TrainConfig c;
  c.model = testing::minimal_config();
  c.model.d_emb = c.model.d_h = 8;
  c.model.d_ff = 16;
  c.epochs = epochs;
  c.batch_size = 2;
  c.lr = 5e-3;
  c.seed = 21;
  return c;
}

Corpus tiny_corpus(int n = 6, std::uint64_t seed = 3) { return synth::generate(testing::tiny_synth(n, seed)); }

std::filesystem::path temp_path(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

TEST_CASE("joint loss combines the two terms with lambda") {
  const Model m = build_model(testing::minimal_config(), 1);
  const Sample s = testing::cluster_sample();
  ad::Graph g(&m.store);
  const SampleLoss zero = total_loss(g, m, s, 0.0);
  CHECK(zero.total.scalar() == zero.text.scalar());
  const SampleLoss one = total_loss(g, m, s, 1.0);
  CHECK(one.total.scalar() == one.text.scalar() + one.image.scalar());
  const SampleLoss two = total_loss(g, m, s, 2.0);
  CHECK(two.total.scalar() == doctest::Approx(two.text.scalar() + 2.0 * two.image.scalar()).epsilon(1e-14));

  // The sum itself, on probed values: 2.0 + 1 * 0.5.
  const ad::Expr text = g.constant(Matrix::Constant(1, 1, 2.0));
  const ad::Expr image = g.constant(Matrix::Constant(1, 1, 0.5));
  CHECK((text + ad::scale(image, 1.0)).scalar() == 2.5);

  Sample single = s;
  single.images.resize(1);
  const SampleLoss l = total_loss(g, m, single, 3.0);
  CHECK(std::abs(l.image.scalar()) < 1e-15);
  CHECK(l.total.scalar() == doctest::Approx(l.text.scalar()).epsilon(1e-14));

  ModelConfig text_only = testing::minimal_config();
  text_only.ablation.image_branch = false;
  const Model t = build_model(text_only, 1);
  ad::Graph g2(&t.store);
  const SampleLoss lt = total_loss(g2, t, s, 1.0);
  CHECK_FALSE(lt.image.valid());
  CHECK(lt.total.scalar() == lt.text.scalar());
}

TEST_CASE("learning-rate schedule") {
  TrainConfig c;
  CHECK(c.lr == 5e-4);
  CHECK(c.lr_decay == 0.8);
  CHECK(c.decay_every == 6);
  CHECK(c.batch_size == 16);
  CHECK(learning_rate(c, 0) == c.lr);
  CHECK(learning_rate(c, 5) == c.lr);
  CHECK(learning_rate(c, 6) == doctest::Approx(c.lr * 0.8).epsilon(1e-15));
  CHECK(std::abs(learning_rate(c, 12) - c.lr * 0.64) < 1e-12);
  CHECK(std::abs(learning_rate(c, 17) - c.lr * 0.64) < 1e-12);
}

TEST_CASE("train config validation and json round trip") {
  TrainConfig c = small_training(3);
  c.model.ablation.sentence_scene_fusion = false;
  nlohmann::json j = c;
  CHECK(j.get<TrainConfig>() == c);
  for (auto mutate : std::vector<std::function<void(TrainConfig&)>>{
           [](TrainConfig& x) { x.lr = 0; },
           [](TrainConfig& x) { x.lr_decay = 1.5; },
           [](TrainConfig& x) { x.lr_decay = 0; },
           [](TrainConfig& x) { x.batch_size = 0; },
           [](TrainConfig& x) { x.epochs = -1; },
           [](TrainConfig& x) { x.lambda_image = -1; },
       }) {
    TrainConfig bad = c;
    mutate(bad);
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
}

TEST_CASE("Adam with zero gradients leaves parameters unchanged") {
  Model m = build_model(testing::minimal_config(), 2);
  const ad::ParameterStore before = m.store;
  Adam adam(m.store);
  const ad::Gradients zero(m.store);
  for (int k = 0; k < 3; ++k) adam.step(m.store, zero, 1e-2);
  CHECK(adam.steps() == 3);
  for (std::size_t i = 0; i < m.store.size(); ++i) {
    const ad::ParamId id{static_cast<int>(i)};
    CHECK(m.store.at(id).value == before.at(id).value);
  }
}

TEST_CASE("Adam's first step moves each coordinate by lr against the gradient sign") {
  ad::ParameterStore store;
  const auto id = store.add("x", Matrix::Zero(3, 1));
  ad::Gradients grads(store);
  grads[id] << 2.0, -0.5, 0.0;
  Adam adam(store);
  adam.step(store, grads, 0.1);
  const Matrix& x = store.at(id).value;
  CHECK(x(0, 0) == doctest::Approx(-0.1).epsilon(1e-6));
  CHECK(x(1, 0) == doctest::Approx(0.1).epsilon(1e-6));
  CHECK(x(2, 0) == 0.0);
}

TEST_CASE("zero epochs returns the initialized model and an empty log") {
  const Corpus corpus = tiny_corpus();
  const TrainConfig c = small_training(0);
  const TrainResult r = train(corpus, nullptr, c);
  CHECK(r.log.empty());
  TrainConfig fitted = c;
  fitted.model = config_for_corpus(c.model, corpus);
  const TrainState fresh = init_train_state(fitted);
  for (std::size_t i = 0; i < fresh.model.store.size(); ++i) {
    const ad::ParamId id{static_cast<int>(i)};
    CHECK(r.final_state.model.store.at(id).value == fresh.model.store.at(id).value);
  }
}

TEST_CASE("fixed seed training is reproducible") {
  const Corpus corpus = tiny_corpus(8);
  const Corpus valid = tiny_corpus(3, 4);
  const TrainConfig c = small_training(3);
  const TrainResult a = train(corpus, &valid, c);
  const TrainResult b = train(corpus, &valid, c);
  REQUIRE(a.log.size() == 3);
  CHECK(a.log == b.log);
  CHECK(a.log[0].valid_loss.has_value());
  CHECK(a.log[2].lr == c.lr);
  for (std::size_t i = 0; i < a.final_state.model.store.size(); ++i) {
    const ad::ParamId id{static_cast<int>(i)};
    CHECK(a.final_state.model.store.at(id).value == b.final_state.model.store.at(id).value);
  }
  // Different seeds train differently.
  TrainConfig other = c;
  other.seed = 22;
  CHECK_FALSE(train(corpus, &valid, other).log == a.log);
}

TEST_CASE("best model tracks the lowest validation loss") {
  const Corpus corpus = tiny_corpus(8);
  const Corpus valid = tiny_corpus(3, 4);
  const TrainResult r = train(corpus, &valid, small_training(4));
  int best = 0;
  for (std::size_t e = 1; e < r.log.size(); ++e)
    if (*r.log[e].valid_loss < *r.log[static_cast<std::size_t>(best)].valid_loss) best = static_cast<int>(e);
  CHECK(r.best_epoch == best + 1);
}

TEST_CASE("overfitting one sample: text loss below 0.1 and the gold image picked") {
  Corpus corpus = tiny_corpus(1, 5);
  TrainConfig c = small_training(200);
  c.model.d_emb = c.model.d_h = 16;
  c.model.d_ff = 32;
  c.batch_size = 1;
  c.lr = 1e-2;
  c.lr_decay = 1.0;
  const TrainResult r = train(corpus, nullptr, c);
  const Model& m = r.final_state.model;
  const Sample& s = corpus.samples[0];
  ad::Graph g(&m.store);
  const SampleLoss l = total_loss(g, m, s, 1.0);
  CHECK(l.text.scalar() < 0.1);
  CHECK(select_image(ad::Vector(l.scores->images.value().col(0))) == s.gold_image);
  const Prediction p = predict(m, s);
  CHECK(p.image == s.gold_image);
  CHECK(p.summary == strip_framing(s.summary));
}

TEST_CASE("divergence is reported with its location") {
  const Corpus corpus = tiny_corpus(4);
  TrainState state = init_train_state([&] {
    TrainConfig c = small_training(1);
    c.model = config_for_corpus(c.model, corpus);
    return c;
  }());
  state.model.store.at(state.model.decoder.vocab_out).value(0, 0) = std::nan("");
  try {
    train_from(state, corpus, nullptr);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("epoch 1, step 1") != std::string::npos);
  }
}

TEST_CASE("corpora that do not match the model are rejected") {
  const Corpus corpus = tiny_corpus(4);
  TrainConfig c = small_training(1);
  c.model = config_for_corpus(c.model, corpus);
  c.model.d_obj = 5;
  CHECK_THROWS_AS(train_from(init_train_state(c), corpus, nullptr), ConfigError);
}

TEST_CASE("checkpoint round trip is bit-identical") {
  const Corpus corpus = tiny_corpus(4);
  const TrainResult r = train(corpus, nullptr, small_training(2));
  const auto path = temp_path("hcscl_test.ckpt");
  save_checkpoint(r.final_state, path);
  const TrainState loaded = load_checkpoint(path);
  CHECK(loaded.config == r.final_state.config);
  CHECK(loaded.epoch == 2);
  CHECK(loaded.optimizer.steps() == r.final_state.optimizer.steps());
  CHECK(loaded.rng == r.final_state.rng);
  for (std::size_t i = 0; i < loaded.model.store.size(); ++i) {
    const ad::ParamId id{static_cast<int>(i)};
    CHECK(loaded.model.store.at(id).value == r.final_state.model.store.at(id).value);
    CHECK(loaded.optimizer.first_moment()[id] == r.final_state.optimizer.first_moment()[id]);
    CHECK(loaded.optimizer.second_moment()[id] == r.final_state.optimizer.second_moment()[id]);
  }
  for (const Sample& s : corpus.samples) {
    ad::Graph ga(&r.final_state.model.store);
    ad::Graph gb(&loaded.model.store);
    const double a = total_loss(ga, r.final_state.model, s, 1.0).total.scalar();
    const double b = total_loss(gb, loaded.model, s, 1.0).total.scalar();
    CHECK(std::memcmp(&a, &b, sizeof a) == 0);
    CHECK(predict(r.final_state.model, s).image_scores == predict(loaded.model, s).image_scores);
  }

  // Resuming from the checkpoint matches an uninterrupted run.
  TrainState resume = loaded;
  resume.config.epochs = 3;
  TrainConfig straight = small_training(3);
  const TrainResult full = train(corpus, nullptr, straight);
  const TrainResult cont = train_from(resume, corpus, nullptr);
  REQUIRE(cont.log.size() == 1);
  CHECK(cont.log[0] == full.log[2]);

  std::filesystem::remove(path);
}

TEST_CASE("damaged checkpoints are rejected") {
  const auto path = temp_path("hcscl_bad.ckpt");
  {
    std::ofstream out(path, std::ios::binary);
    out << "not a checkpoint";
  }
  CHECK_THROWS_AS(load_checkpoint(path), ParseError);
  const Corpus corpus = tiny_corpus(2);
  save_checkpoint(train(corpus, nullptr, small_training(0)).final_state, path);
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 9);
  CHECK_THROWS_AS(load_checkpoint(path), ParseError);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_checkpoint(path), IoError);
}

TEST_CASE("ablation table structure") {
  const auto configs = ablation_configurations();
  REQUIRE(configs.size() == 5);
  CHECK(configs[0].first == "HCSCL Word-Object only");
  CHECK(configs[1].first == "HCSCL Sentence-Scene only");
  CHECK(configs[2].first == "HCSCL w/o Sentence-Scene Fusion");
  CHECK(configs[3].first == "HCSCL w/o Word-Object Fusion");
  CHECK(configs[4].first == "HCSCL");
  CHECK(configs[4].second == AblationFlags{});
  CHECK_FALSE(configs[2].second.sentence_scene_fusion);
  CHECK_FALSE(configs[3].second.word_object_fusion);

  const Corpus corpus = tiny_corpus(4);
  const TrainConfig c = small_training(1);
  auto count = [&](const AblationFlags& f) {
    ModelConfig mc = config_for_corpus(c.model, corpus);
    mc.ablation = f;
    return build_model(mc, 1).store.scalar_count();
  };
  const std::size_t full = count(configs[4].second);
  CHECK(count(configs[2].second) < full);
  CHECK(count(configs[3].second) < full);

  const auto rows = run_ablation_suite(corpus, corpus, c);
  REQUIRE(rows.size() == 5);
  for (std::size_t k = 0; k < 5; ++k) {
    CHECK(rows[k].name == configs[k].first);
    CHECK(rows[k].reference == (k == 4));
    CHECK(rows[k].parameter_count == count(configs[k].second));
    CHECK((rows[k].report.ip >= 0.0 && rows[k].report.ip <= 1.0));
  }
}

TEST_CASE("evaluation predictions line up with the test samples") {
  const Corpus corpus = tiny_corpus(5);
  const TrainResult r = train(corpus, nullptr, small_training(1));
  const Evaluation e = evaluate_model(r.final_state.model, corpus);
  REQUIRE(e.predictions.size() == 5);
  std::vector<int> gold, chosen;
  for (std::size_t k = 0; k < 5; ++k) {
    CHECK(e.predictions[k].sample_id == static_cast<int>(k));
    gold.push_back(corpus.samples[k].gold_image);
    chosen.push_back(e.predictions[k].image);
  }
  CHECK(e.report.ip == metrics::image_precision(gold, chosen));
}
