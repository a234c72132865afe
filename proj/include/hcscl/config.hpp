#pragma once

#include "hcscl/autodiff.hpp"

#include <json.hpp>

#include <string_view>

namespace hcscl {

/// Which model components are present. The five ablation configurations are
/// combinations of these switches; see ablation_flags().
struct AblationFlags {
  bool word_object_fusion = true;
  bool sentence_scene_fusion = true;
  bool image_branch = true;
  /// BiLSTM word encoder. When off, words are a linear projection of their
  /// embeddings.
  bool text_encoder = true;
  /// Sentence LSTM and image graph encoder. When off, a sentence is the mean
  /// of its fused word states and images contribute no scenes.
  bool scene_encoder = true;

  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

enum class SelectorInput { kProduct, kConcat };

SelectorInput parse_selector_input(std::string_view name);
std::string_view selector_input_name(SelectorInput input);

struct ModelConfig {
  // Taken from the corpus.
  int vocab_size = 0;
  int d_obj = 0;
  int n_attr = 0;

  int d_emb = 64;
  int d_h = 64;
  int d_l = 8;
  int d_a = 8;
  int d_ff = 128;
  int d_edge = 16;
  int n_layers = 2;
  bool scaled_scores = false;
  double iou_threshold = 0.2;
  double canvas = 1000.0;
  ad::Activation graph_activation = ad::Activation::kRelu;
  ad::Activation ff_activation = ad::Activation::kRelu;
  SelectorInput selector_input = SelectorInput::kProduct;
  bool selector_normalize = false;
  bool share_target_embedding = true;

  int max_sentences = 64;
  int max_words = 128;
  int max_images = 16;
  int max_objects = 64;
  int max_summary_len = 64;

  AblationFlags ablation;

  int d_v() const { return d_obj + d_l + d_a; }
  /// Throws ConfigError on invalid dimensions.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

void to_json(nlohmann::json& j, const AblationFlags& f);
void from_json(const nlohmann::json& j, AblationFlags& f);
void to_json(nlohmann::json& j, const ModelConfig& c);
/// Keys absent from `j` keep their defaults.
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace hcscl
