// Helpers shared by the test binaries.
#pragma once

#include "hcscl/autodiff.hpp"
#include "hcscl/config.hpp"
#include "hcscl/datamodel.hpp"
#include "hcscl/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace hcscl::testing {

struct TensorCheck {
  std::string name;
  double max_rel_error = 0;
  double max_abs_error = 0;
  double max_grad = 0;  // largest |analytic| coordinate
  std::size_t checked = 0;
};

// Relative error of one coordinate. The floor keeps coordinates whose true
// gradient is ~0 from turning finite-difference rounding into huge ratios.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

// Central differences of `loss` against the analytic gradient of every
// coordinate of every parameter. `loss` builds a fresh graph each call and
// returns its scalar; `analytic` must fill the gradient buffer.
inline std::vector<TensorCheck> gradient_check(ad::ParameterStore& store,
                                               const std::function<ad::Expr(ad::Graph&)>& build, double eps = 1e-4,
                                               double floor = 1e-6) {
  ad::Gradients grads(store);
  {
    ad::Graph g(&store);
    ad::Expr loss = build(g);
    g.backward(loss);
    g.accumulate(grads);
  }
  auto eval = [&] {
    ad::Graph g(&store);
    return build(g).scalar();
  };
  std::vector<TensorCheck> out;
  int index = 0;
  for (auto& p : store) {
    const ad::ParamId id{index++};
    TensorCheck tc;
    tc.name = p.name;
    for (ad::Index k = 0; k < p.value.size(); ++k) {
      double& x = p.value.data()[k];
      const double saved = x;
      x = saved + eps;
      const double up = eval();
      x = saved - eps;
      const double down = eval();
      x = saved;
      const double numeric = (up - down) / (2 * eps);
      const double analytic = grads[id].data()[k];
      tc.max_rel_error = std::max(tc.max_rel_error, relative_error(analytic, numeric, floor));
      tc.max_abs_error = std::max(tc.max_abs_error, std::abs(analytic - numeric));
      tc.max_grad = std::max(tc.max_grad, std::abs(analytic));
      ++tc.checked;
    }
    out.push_back(tc);
  }
  return out;
}

inline double worst(const std::vector<TensorCheck>& checks) {
  double w = 0;
  for (const auto& c : checks) w = std::max(w, c.max_rel_error);
  return w;
}

// Small corpus for tests: vocab 20, d_obj 4, n_attr 3.
inline synth::SynthConfig tiny_synth(int n_samples = 4, std::uint64_t seed = 3) {
  synth::SynthConfig c;
  c.n_samples = n_samples;
  c.vocab_size = 20;
  c.n_concepts = 12;
  c.sentences_per_doc = 2;
  c.words_per_sentence = 3;
  c.images_per_doc = 2;
  c.objects_per_image = 3;
  c.d_obj = 4;
  c.n_attr = 3;
  c.seed = seed;
  return c;
}


// Minimal model: d_emb = d_h = 6, d_v = 4 + 2 + 2 = 8, one CME layer, vocab 20.
inline ModelConfig minimal_config() {
  ModelConfig c;
  c.vocab_size = 20;
  c.d_obj = 4;
  c.n_attr = 3;
  c.d_emb = 6;
  c.d_h = 6;
  c.d_l = 2;
  c.d_a = 2;
  c.d_ff = 8;
  c.d_edge = 4;
  c.n_layers = 1;
  return c;
}

// Hand-made sample for minimal_config(). Image 0 holds a chain of three
// overlapping objects (the middle one has two neighbors), image 1 two
// disjoint objects.
inline Sample cluster_sample() {
  Sample s;
  s.sentences = {{5, 6, 7}, {8, 9}};
  auto obj = [](std::vector<double> f, Box b, int attr) {
    ObjectProposal o;
    o.feature = std::move(f);
    o.bbox = b;
    o.attr_class = attr;
    return o;
  };
  ImageRecord a;
  a.objects = {obj({0.3, -0.2, 0.5, 0.1}, {100, 100, 300, 300}, 0),
               obj({-0.4, 0.6, 0.2, -0.3}, {150, 120, 350, 310}, 1),
               obj({0.1, 0.1, -0.5, 0.7}, {200, 110, 420, 330}, 2)};
  ImageRecord b;
  b.objects = {obj({0.9, -0.1, 0.0, 0.4}, {0, 0, 100, 100}, 1), obj({-0.2, -0.7, 0.3, 0.2}, {500, 500, 700, 650}, 0)};
  s.images = {a, b};
  s.summary = {kBos, 6, 9, kEos};
  s.gold_image = 0;
  return s;
}

}  // namespace hcscl::testing
