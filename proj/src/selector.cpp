#include "hcscl/selector.hpp"

#include "hcscl/init.hpp"

#include <stdexcept>

namespace hcscl {

using ad::Expr;
using ad::Index;
using ad::Matrix;

SelectorParams add_selector(ad::ParameterStore& store, const ModelConfig& cfg, std::mt19937_64& rng) {
  SelectorParams p;
  p.input = cfg.selector_input;
  p.normalize = cfg.selector_normalize;
  p.has_scenes = cfg.ablation.scene_encoder;
  const int d_in = cfg.selector_input == SelectorInput::kProduct ? cfg.d_h : 2 * cfg.d_h;
  p.obj_w = store.add("selector.obj_w", init::xavier(d_in, 1, rng));
  p.obj_b = store.add("selector.obj_b", init::zeros(1, 1));
  if (p.has_scenes) {
    p.scene_w = store.add("selector.scene_w", init::xavier(d_in, 1, rng));
    p.scene_b = store.add("selector.scene_b", init::zeros(1, 1));
    p.gate_w = store.add("selector.gate_w", init::xavier(cfg.d_h, 1, rng));
    p.gate_b = store.add("selector.gate_b", init::zeros(1, 1));
  }
  return p;
}

namespace {

// sigma(w^T f(x_i, h) + b) for every column x_i, as a column vector.
Expr relevance(ad::Graph& g, Expr items, Expr summary, ad::ParamId w, ad::ParamId b, SelectorInput input) {
  Expr joint;
  if (input == SelectorInput::kProduct) {
    joint = ad::scale_rows(items, summary);
  } else {
    std::vector<Index> repeat(static_cast<std::size_t>(items.cols()), 0);
    joint = ad::concat_rows({items, ad::gather_cols(summary, repeat)});
  }
  return ad::sigmoid(ad::transpose(ad::add_bias(ad::transpose(g.param(w)) * joint, g.param(b))));
}

// p x count membership matrix; rows optionally normalized by member count.
Matrix membership(std::span<const int> owner, int images, bool normalize) {
  Matrix m = Matrix::Zero(images, static_cast<Index>(owner.size()));
  for (std::size_t k = 0; k < owner.size(); ++k) m(owner[k], static_cast<Index>(k)) = 1.0;
  if (normalize) {
    for (Index r = 0; r < m.rows(); ++r) {
      const double count = m.row(r).sum();
      if (count > 0) m.row(r) /= count;
    }
  }
  return m;
}

}  // namespace

ImageScores score_images(ad::Graph& g, const FusedStates& fused, Expr summary, const SelectorParams& p) {
  const int images = fused.image_count();
  if (images < 1) throw std::invalid_argument("score_images: no images");
  ImageScores out;
  out.objects = relevance(g, fused.v1, summary, p.obj_w, p.obj_b, p.input);
  Expr object_sums = g.constant(membership(fused.object_image, images, p.normalize)) * out.objects;
  if (!p.has_scenes || !fused.v3.valid()) {
    out.images = object_sums;
    return out;
  }
  out.scenes = relevance(g, fused.v3, summary, p.scene_w, p.scene_b, p.input);
  Expr scene_sums = g.constant(membership(fused.scene_image, images, p.normalize)) * out.scenes;
  out.gate = ad::sigmoid(ad::transpose(g.param(p.gate_w)) * summary + g.param(p.gate_b));
  out.images = combine_scores(object_sums, scene_sums, out.gate);
  return out;
}

Expr combine_scores(Expr object_sums, Expr scene_sums, Expr gate) {
  return object_sums * gate + scene_sums * ad::one_minus(gate);
}

Expr image_loss(Expr scores, int gold_image) {
  if (gold_image < 0 || gold_image >= scores.rows()) throw std::out_of_range("image_loss: gold image out of range");
  return ad::scale(ad::pick(ad::log_softmax_cols(scores), gold_image), -1.0);
}

int select_image(std::span<const double> scores) {
  if (scores.empty()) throw std::invalid_argument("select_image: no scores");
  std::size_t best = 0;
  for (std::size_t k = 1; k < scores.size(); ++k)
    if (scores[k] > scores[best]) best = k;
  return static_cast<int>(best);
}

int select_image(const ad::Vector& scores) { return select_image(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size()))); }

}  // namespace hcscl
