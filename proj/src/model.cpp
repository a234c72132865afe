#include "hcscl/model.hpp"

#include "hcscl/errors.hpp"

namespace hcscl {

Model build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  Model m;
  m.config = config;
  m.fusion = add_fusion(m.store, config, rng);
  m.decoder = add_decoder(m.store, config, m.fusion.encoder.embedding, rng);
  if (config.ablation.image_branch) m.selector = add_selector(m.store, config, rng);
  return m;
}

ModelConfig config_for_corpus(ModelConfig base, const Corpus& corpus) {
  base.vocab_size = corpus.vocab.size();
  base.d_obj = corpus.d_obj;
  base.n_attr = corpus.n_attr;
  return base;
}

void check_limits(const ModelConfig& c, const Sample& s, std::size_t index) {
  auto fail = [&](const std::string& what) {
    throw ValidationError("sample " + std::to_string(index) + ": " + what);
  };
  if (static_cast<int>(s.sentences.size()) > c.max_sentences) fail("more than max_sentences sentences");
  for (const auto& sent : s.sentences)
    if (static_cast<int>(sent.size()) > c.max_words) fail("sentence longer than max_words");
  if (static_cast<int>(s.images.size()) > c.max_images) fail("more than max_images images");
  for (const auto& img : s.images)
    if (static_cast<int>(img.objects.size()) > c.max_objects) fail("image with more than max_objects objects");
  if (static_cast<int>(s.summary.size()) > c.max_summary_len + 2) fail("summary longer than max_summary_len");
}

SampleLoss total_loss(ad::Graph& g, const Model& model, const Sample& sample, double lambda_image,
                      AttentionTrace* trace) {
  SampleLoss out;
  out.fused = fuse_sample(g, sample, model.fusion, trace);
  out.text_detail = text_loss(g, sample, out.fused, model.decoder);
  out.text = out.text_detail.loss;
  out.total = out.text;
  if (model.selector) {
    out.scores = score_images(g, out.fused, out.text_detail.final_hidden, *model.selector);
    out.image = image_loss(out.scores->images, sample.gold_image);
    out.total = out.text + ad::scale(out.image, lambda_image);
  }
  return out;
}

Prediction predict(const Model& model, const Sample& sample) {
  ad::Graph g(&model.store);
  FusedStates fused = fuse_sample(g, sample, model.fusion);
  Prediction out;
  out.decode = generate(g, fused, model.decoder, model.config.max_summary_len);
  for (TokenId t : out.decode.tokens)
    if (t != kEos) out.summary.push_back(t);
  if (model.selector) {
    ImageScores scores = score_images(g, fused, out.decode.final_hidden, *model.selector);
    out.image_scores = scores.images.value().col(0);
    out.image = select_image(out.image_scores);
  } else {
    out.image_scores = ad::Vector::Zero(static_cast<ad::Index>(sample.images.size()));
    out.image = 0;
  }
  return out;
}

}  // namespace hcscl
