#include "hcscl/config.hpp"

#include "hcscl/errors.hpp"

#include <string>

namespace hcscl {

SelectorInput parse_selector_input(std::string_view name) {
  if (name == "product") return SelectorInput::kProduct;
  if (name == "concat") return SelectorInput::kConcat;
  throw ConfigError("unknown selector input: " + std::string(name));
}

std::string_view selector_input_name(SelectorInput input) {
  return input == SelectorInput::kProduct ? "product" : "concat";
}

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw ConfigError(std::string(name) + " must be positive");
  };
  if (vocab_size <= 4) throw ConfigError("vocab_size must exceed the special tokens");
  positive(d_obj, "d_obj");
  positive(n_attr, "n_attr");
  positive(d_emb, "d_emb");
  positive(d_h, "d_h");
  positive(d_l, "d_l");
  positive(d_a, "d_a");
  positive(d_ff, "d_ff");
  positive(d_edge, "d_edge");
  positive(n_layers, "n_layers");
  positive(max_sentences, "max_sentences");
  positive(max_words, "max_words");
  positive(max_images, "max_images");
  positive(max_objects, "max_objects");
  positive(max_summary_len, "max_summary_len");
  if (d_h % 2 != 0) throw ConfigError("d_h must be even");
  if (!(canvas > 0.0)) throw ConfigError("canvas must be positive");
  if (!(iou_threshold >= 0.0 && iou_threshold < 1.0)) throw ConfigError("iou_threshold must lie in [0, 1)");
  if (ablation.sentence_scene_fusion && !ablation.scene_encoder)
    throw ConfigError("sentence-scene fusion needs the scene encoder");
}

void to_json(nlohmann::json& j, const AblationFlags& f) {
  j = nlohmann::json{{"word_object_fusion", f.word_object_fusion},
                     {"sentence_scene_fusion", f.sentence_scene_fusion},
                     {"image_branch", f.image_branch},
                     {"text_encoder", f.text_encoder},
                     {"scene_encoder", f.scene_encoder}};
}

void from_json(const nlohmann::json& j, AblationFlags& f) {
  f.word_object_fusion = j.value("word_object_fusion", f.word_object_fusion);
  f.sentence_scene_fusion = j.value("sentence_scene_fusion", f.sentence_scene_fusion);
  f.image_branch = j.value("image_branch", f.image_branch);
  f.text_encoder = j.value("text_encoder", f.text_encoder);
  f.scene_encoder = j.value("scene_encoder", f.scene_encoder);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"vocab_size", c.vocab_size},
                     {"d_obj", c.d_obj},
                     {"n_attr", c.n_attr},
                     {"d_emb", c.d_emb},
                     {"d_h", c.d_h},
                     {"d_l", c.d_l},
                     {"d_a", c.d_a},
                     {"d_ff", c.d_ff},
                     {"d_edge", c.d_edge},
                     {"n_layers", c.n_layers},
                     {"scaled_scores", c.scaled_scores},
                     {"iou_threshold", c.iou_threshold},
                     {"canvas", c.canvas},
                     {"graph_activation", ad::activation_name(c.graph_activation)},
                     {"ff_activation", ad::activation_name(c.ff_activation)},
                     {"selector_input", selector_input_name(c.selector_input)},
                     {"selector_normalize", c.selector_normalize},
                     {"share_target_embedding", c.share_target_embedding},
                     {"max_sentences", c.max_sentences},
                     {"max_words", c.max_words},
                     {"max_images", c.max_images},
                     {"max_objects", c.max_objects},
                     {"max_summary_len", c.max_summary_len},
                     {"ablation", c.ablation}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.d_obj = j.value("d_obj", c.d_obj);
  c.n_attr = j.value("n_attr", c.n_attr);
  c.d_emb = j.value("d_emb", c.d_emb);
  c.d_h = j.value("d_h", c.d_h);
  c.d_l = j.value("d_l", c.d_l);
  c.d_a = j.value("d_a", c.d_a);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.d_edge = j.value("d_edge", c.d_edge);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.scaled_scores = j.value("scaled_scores", c.scaled_scores);
  c.iou_threshold = j.value("iou_threshold", c.iou_threshold);
  c.canvas = j.value("canvas", c.canvas);
  if (j.contains("graph_activation")) c.graph_activation = ad::parse_activation(j.at("graph_activation").get<std::string>());
  if (j.contains("ff_activation")) c.ff_activation = ad::parse_activation(j.at("ff_activation").get<std::string>());
  if (j.contains("selector_input")) c.selector_input = parse_selector_input(j.at("selector_input").get<std::string>());
  c.selector_normalize = j.value("selector_normalize", c.selector_normalize);
  c.share_target_embedding = j.value("share_target_embedding", c.share_target_embedding);
  c.max_sentences = j.value("max_sentences", c.max_sentences);
  c.max_words = j.value("max_words", c.max_words);
  c.max_images = j.value("max_images", c.max_images);
  c.max_objects = j.value("max_objects", c.max_objects);
  c.max_summary_len = j.value("max_summary_len", c.max_summary_len);
  if (j.contains("ablation")) c.ablation = j.at("ablation").get<AblationFlags>();
}

}  // namespace hcscl
