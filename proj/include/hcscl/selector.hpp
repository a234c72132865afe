// Image selector with the object-scene gate, and the image loss.
#pragma once

#include "hcscl/config.hpp"
#include "hcscl/fusion.hpp"

#include <random>
#include <span>

namespace hcscl {

struct SelectorParams {
  ad::ParamId obj_w, obj_b;
  ad::ParamId scene_w, scene_b;  // only with scenes
  ad::ParamId gate_w, gate_b;    // only with scenes
  bool has_scenes = true;
  SelectorInput input = SelectorInput::kProduct;
  bool normalize = false;
};

SelectorParams add_selector(ad::ParameterStore& store, const ModelConfig& cfg, std::mt19937_64& rng);

struct ImageScores {
  ad::Expr images;   // p x 1
  ad::Expr objects;  // q x 1, in (0, 1)
  ad::Expr scenes;   // scenes x 1, invalid without scenes
  ad::Expr gate;     // 1 x 1, invalid without scenes
};

/// Scores every image of the sample from the summary state `summary` (d_h x 1).
ImageScores score_images(ad::Graph& g, const FusedStates& fused, ad::Expr summary, const SelectorParams& p);

/// gate * object_sums + (1 - gate) * scene_sums, per image.
ad::Expr combine_scores(ad::Expr object_sums, ad::Expr scene_sums, ad::Expr gate);

/// -log softmax(scores)[gold].
ad::Expr image_loss(ad::Expr scores, int gold_image);

/// Argmax; ties go to the lowest index.
int select_image(std::span<const double> scores);
int select_image(const ad::Vector& scores);

}  // namespace hcscl
