#include "hcscl/fusion.hpp"

#include "hcscl/init.hpp"

namespace hcscl {

using ad::Expr;
using ad::Index;

FusionParams add_fusion(ad::ParameterStore& store, const ModelConfig& cfg, std::mt19937_64& rng) {
  FusionParams p;
  p.iou_threshold = cfg.iou_threshold;
  p.encoder = add_encoder(store, cfg, rng);
  p.adapter_w = store.add("fusion.adapter_w", init::xavier(cfg.d_h, cfg.d_v(), rng));
  p.adapter_b = store.add("fusion.adapter_b", init::zeros(cfg.d_h, 1));
  if (cfg.ablation.word_object_fusion) {
    p.word_object_text = add_cme(store, "fusion.word_object_text", cfg, rng);
    p.word_object_visual = add_cme(store, "fusion.word_object_visual", cfg, rng);
  }
  if (cfg.ablation.scene_encoder) p.graph = add_scene_graph(store, cfg, rng);
  if (cfg.ablation.sentence_scene_fusion && cfg.ablation.scene_encoder) {
    p.sentence_scene_text = add_cme(store, "fusion.sentence_scene_text", cfg, rng);
    p.sentence_scene_visual = add_cme(store, "fusion.sentence_scene_visual", cfg, rng);
  }
  return p;
}

FusedStates fuse_sample(ad::Graph& g, const Sample& sample, const FusionParams& p, AttentionTrace* trace) {
  FusedStates f;
  f.image_total = static_cast<int>(sample.images.size());
  f.h0 = encode_words(g, sample, p.encoder);
  f.v0 = assemble_objects(g, sample, p.encoder);
  f.v0_adapted = ad::add_bias(g.param(p.adapter_w) * f.v0.features, g.param(p.adapter_b));
  f.object_image = f.v0.image_index;

  const auto n = f.h0.words.size();
  for (std::size_t i = 0; i < n; ++i)
    for (int j = 0; j < f.h0.lengths[i]; ++j) f.word_sentence.push_back(static_cast<int>(i));
  Expr h0_all = ad::concat_cols(f.h0.words);

  // Word-object fusion.
  if (p.word_object_text) {
    for (const Expr& words : f.h0.words) f.h1.push_back(cme_encode(g, words, f.v0_adapted, *p.word_object_text, trace));
    f.v1 = cme_encode(g, f.v0_adapted, h0_all, *p.word_object_visual, trace);
  } else {
    f.h1 = f.h0.words;
    f.v1 = f.v0_adapted;
  }
  f.h1_all = ad::concat_cols(f.h1);

  if (!p.graph) {
    // No sentence or graph encoder: sentences are mean-pooled words and
    // images contribute objects only.
    std::vector<Expr> pooled;
    for (const Expr& words : f.h1) pooled.push_back(ad::mean_cols(words));
    f.h2 = ad::concat_cols(pooled);
    f.h3 = f.h2;
    return f;
  }

  f.h2 = encode_sentences(g, f.h1, f.h0.lengths, p.encoder.sentence);

  // Scene graphs, one per image, over that image's fused object states.
  std::vector<Expr> scenes;
  Index offset = 0;
  for (std::size_t k = 0; k < sample.images.size(); ++k) {
    const auto& objects = sample.images[k].objects;
    std::vector<Box> boxes;
    for (const auto& o : objects) boxes.push_back(o.bbox);
    Expr nodes = ad::slice_cols(f.v1, offset, static_cast<Index>(objects.size()));
    offset += static_cast<Index>(objects.size());
    SceneGraph sg = encode_scene_graph(g, nodes, boxes, p.iou_threshold, *p.graph);
    scenes.push_back(sg.readout.scenes);
    for (std::size_t c = 0; c < sg.readout.components.size(); ++c) f.scene_image.push_back(static_cast<int>(k));
    f.graphs.push_back(std::move(sg));
  }
  f.v2 = ad::concat_cols(scenes);

  // Sentence-scene fusion.
  if (p.sentence_scene_text) {
    f.h3 = cme_encode(g, f.h2, f.v2, *p.sentence_scene_text, trace);
    f.v3 = cme_encode(g, f.v2, f.h2, *p.sentence_scene_visual, trace);
  } else {
    f.h3 = f.h2;
    f.v3 = f.v2;
  }
  return f;
}

}  // namespace hcscl
