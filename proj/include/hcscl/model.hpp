// The assembled summarization model: fusion stack, decoder and image selector
// over one parameter store, plus the joint objective.
#pragma once

#include "hcscl/config.hpp"
#include "hcscl/decoder.hpp"
#include "hcscl/fusion.hpp"
#include "hcscl/selector.hpp"

#include <cstdint>
#include <optional>

namespace hcscl {

struct Model {
  ModelConfig config;
  ad::ParameterStore store;
  FusionParams fusion;
  DecoderParams decoder;
  std::optional<SelectorParams> selector;
};

/// Registers and initializes every parameter the configuration needs.
Model build_model(const ModelConfig& config, std::uint64_t seed);

/// Copies vocab size, d_obj and n_attr from the corpus into `base`.
ModelConfig config_for_corpus(ModelConfig base, const Corpus& corpus);

/// Rejects samples the configured size limits do not admit.
void check_limits(const ModelConfig& config, const Sample& sample, std::size_t index);

struct SampleLoss {
  ad::Expr total;
  ad::Expr text;
  ad::Expr image;  // invalid when the image branch is off
  FusedStates fused;
  TextLoss text_detail;
  std::optional<ImageScores> scores;
};

/// L = L_text + lambda * L_image (L_text alone without the image branch).
SampleLoss total_loss(ad::Graph& g, const Model& model, const Sample& sample, double lambda_image,
                      AttentionTrace* trace = nullptr);

struct Prediction {
  std::vector<TokenId> summary;  // generated tokens, EOS removed
  int image = 0;
  ad::Vector image_scores;
  DecodeResult decode;
};

/// Greedy summary plus the selected image, scored from the final generated
/// decoder state.
Prediction predict(const Model& model, const Sample& sample);

}  // namespace hcscl
