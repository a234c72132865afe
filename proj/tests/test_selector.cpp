#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"

#include "hcscl/init.hpp"
#include "hcscl/model.hpp"
#include "hcscl/selector.hpp"

#include <cmath>

using namespace hcscl;
using ad::Matrix;

namespace {

Matrix column(std::initializer_list<double> xs) {
  Matrix m(static_cast<ad::Index>(xs.size()), 1);
  ad::Index k = 0;
  for (double x : xs) m(k++, 0) = x;
  return m;
}

}  // namespace

TEST_CASE("gate arithmetic") {
  ad::Graph g;
  const auto objects = g.constant(column({0.4, 0.1}));
  const auto scenes = g.constant(column({0.8, 0.3}));
  CHECK(combine_scores(objects, scenes, g.constant(column({0.5}))).value()(0, 0) == doctest::Approx(0.6));
  const Matrix one = combine_scores(objects, scenes, g.constant(column({1.0}))).value();
  CHECK(one == objects.value());
  const Matrix zero = combine_scores(objects, scenes, g.constant(column({0.0}))).value();
  CHECK(zero == scenes.value());
}

TEST_CASE("image loss closed forms") {
  ad::Graph g;
  CHECK(image_loss(g.constant(column({3.7})), 0).scalar() == 0.0);
  CHECK(image_loss(g.constant(column({0.2, 0.2, 0.2})), 1).scalar() == doctest::Approx(std::log(3.0)).epsilon(1e-14));
  const double base = image_loss(g.constant(column({0.2, 0.5, 0.9})), 1).scalar();
  CHECK(image_loss(g.constant(column({0.2, 0.6, 0.9})), 1).scalar() < base);
  CHECK(std::abs(image_loss(g.constant(column({7.2, 7.5, 7.9})), 1).scalar() - base) < 1e-6);
  CHECK_THROWS(image_loss(g.constant(column({0.2, 0.5})), 2));
}

TEST_CASE("selection") {
  CHECK(select_image(std::vector<double>{0.2, 0.9, 0.1}) == 1);
  CHECK(select_image(std::vector<double>{0.5, 0.5, 0.5}) == 0);
  CHECK(select_image(std::vector<double>{0.1, 0.7, 0.7}) == 1);
  CHECK_THROWS(select_image(std::vector<double>{}));
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0, 1);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> s(5), shifted(5);
    const double c = 10 * n(rng);
    for (int k = 0; k < 5; ++k) {
      s[static_cast<std::size_t>(k)] = n(rng);
      shifted[static_cast<std::size_t>(k)] = s[static_cast<std::size_t>(k)] + c;
    }
    CHECK(select_image(s) == select_image(shifted));
  }
}

TEST_CASE("identical images score equally and scores stay in range") {
  const Model m = build_model(testing::minimal_config(), 3);
  Sample s = testing::cluster_sample();
  s.images[1] = s.images[0];
  ad::Graph g(&m.store);
  const SampleLoss l = total_loss(g, m, s, 1.0);
  const Matrix& img = l.scores->images.value();
  CHECK(img(0, 0) == img(1, 0));
  CHECK(l.image.scalar() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("sigmoid outputs lie in (0, 1) on random summaries") {
  const Model m = build_model(testing::minimal_config(), 4);
  const Sample s = testing::cluster_sample();
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    ad::Graph g(&m.store);
    const FusedStates f = fuse_sample(g, s, m.fusion);
    const ImageScores sc = score_images(g, f, g.constant(init::normal(6, 1, 3.0, rng)), *m.selector);
    CHECK(sc.objects.rows() == 5);
    CHECK(sc.scenes.rows() == 3);
    for (const Matrix* v : {&sc.objects.value(), &sc.scenes.value(), &sc.gate.value()}) {
      CHECK(v->minCoeff() > 0.0);
      CHECK(v->maxCoeff() < 1.0);
    }
    // Per-image sums of the member objects and scenes, mixed by the gate.
    const double gate = sc.gate.value()(0, 0);
    const Matrix& o = sc.objects.value();
    const Matrix& sn = sc.scenes.value();
    const double img0 = gate * (o(0, 0) + o(1, 0) + o(2, 0)) + (1 - gate) * sn(0, 0);
    const double img1 = gate * (o(3, 0) + o(4, 0)) + (1 - gate) * (sn(1, 0) + sn(2, 0));
    CHECK(sc.images.value()(0, 0) == doctest::Approx(img0).epsilon(1e-12));
    CHECK(sc.images.value()(1, 0) == doctest::Approx(img1).epsilon(1e-12));
  }
}

TEST_CASE("normalized sums divide by member counts") {
  ModelConfig cfg = testing::minimal_config();
  cfg.selector_normalize = true;
  const Model m = build_model(cfg, 6);
  ad::Graph g(&m.store);
  const FusedStates f = fuse_sample(g, testing::cluster_sample(), m.fusion);
  const ImageScores sc = score_images(g, f, g.constant(Matrix::Ones(6, 1)), *m.selector);
  const double gate = sc.gate.value()(0, 0);
  const Matrix& o = sc.objects.value();
  const Matrix& sn = sc.scenes.value();
  const double img1 = gate * (o(3, 0) + o(4, 0)) / 2 + (1 - gate) * (sn(1, 0) + sn(2, 0)) / 2;
  CHECK(sc.images.value()(1, 0) == doctest::Approx(img1).epsilon(1e-12));
}

TEST_CASE("concat selector input doubles the scoring width") {
  ModelConfig cfg = testing::minimal_config();
  cfg.selector_input = SelectorInput::kConcat;
  const Model m = build_model(cfg, 7);
  CHECK(m.store.at(m.selector->obj_w).value.rows() == 12);
  ad::Graph g(&m.store);
  CHECK(std::isfinite(total_loss(g, m, testing::cluster_sample(), 1.0).total.scalar()));
}

TEST_CASE("image loss gradients") {
  Model m = build_model(testing::minimal_config(), 8);
  const Sample s = testing::cluster_sample();
  const auto checks = testing::gradient_check(m.store, [&](ad::Graph& g) {
    const FusedStates f = fuse_sample(g, s, m.fusion);
    const TextLoss t = text_loss(g, s, f, m.decoder);
    return image_loss(score_images(g, f, t.final_hidden, *m.selector).images, s.gold_image);
  });
  for (const auto& c : checks) {
    CAPTURE(c.name);
    CHECK(c.max_rel_error < 1e-3);
    if (c.name.rfind("selector.", 0) == 0) CHECK(c.max_grad > 0.0);
  }
}
