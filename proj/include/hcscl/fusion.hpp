// Two-level fusion: word-object fusion (h1, v1), sentence encoding (h2),
// scene graph encoding (v2) and sentence-scene fusion (h3, v3).
#pragma once

#include "hcscl/cme.hpp"
#include "hcscl/config.hpp"
#include "hcscl/datamodel.hpp"
#include "hcscl/encoders.hpp"
#include "hcscl/scenegraph.hpp"

#include <optional>
#include <random>
#include <vector>

namespace hcscl {

struct FusionParams {
  EncoderParams encoder;
  ad::ParamId adapter_w;  // d_h x d_v
  ad::ParamId adapter_b;  // d_h x 1
  std::optional<CmeParams> word_object_text;    // words over objects
  std::optional<CmeParams> word_object_visual;  // objects over words
  std::optional<CmeParams> sentence_scene_text;
  std::optional<CmeParams> sentence_scene_visual;
  std::optional<SceneGraphParams> graph;
  double iou_threshold = 0.2;
};

FusionParams add_fusion(ad::ParameterStore& store, const ModelConfig& cfg, std::mt19937_64& rng);

struct FusedStates {
  TextStates h0;
  ObjectStates v0;
  ad::Expr v0_adapted;  // d_h x q

  std::vector<ad::Expr> h1;      // per sentence, d_h x m_i
  ad::Expr h1_all;               // d_h x W, all words of the document
  std::vector<int> word_sentence;  // sentence of each column of h1_all
  ad::Expr v1;                   // d_h x q
  std::vector<int> object_image;

  ad::Expr h2;  // d_h x n
  ad::Expr v2;  // d_h x scenes; invalid when the model has no scene encoder
  std::vector<int> scene_image;
  std::vector<SceneGraph> graphs;  // one per image

  ad::Expr h3;
  ad::Expr v3;

  int sentence_count() const { return static_cast<int>(h1.size()); }
  int scene_count() const { return static_cast<int>(scene_image.size()); }
  int image_count() const { return image_total; }
  int image_total = 0;
};

FusedStates fuse_sample(ad::Graph& g, const Sample& sample, const FusionParams& p, AttentionTrace* trace = nullptr);

}  // namespace hcscl
