// Hierarchical-attention summary decoder and the teacher-forced text loss.
#pragma once

#include "hcscl/encoders.hpp"
#include "hcscl/fusion.hpp"

#include <random>
#include <vector>

namespace hcscl {

struct DecoderParams {
  LstmParams lstm;  // (d_emb + d_h) -> d_h
  ad::ParamId init_w, init_b;
  ad::ParamId ff_w1, ff_b1;  // d_ff x 2*d_h
  ad::ParamId ff_w2, ff_b2;  // d_h x d_ff
  ad::ParamId vocab_out;     // vocab x d_h, the transpose of V
  ad::ParamId target_embedding;
  ad::Activation ff_activation = ad::Activation::kTanh;
};

DecoderParams add_decoder(ad::ParameterStore& store, const ModelConfig& cfg, ad::ParamId shared_embedding,
                          std::mt19937_64& rng);

struct DecoderState {
  LstmState lstm;
  ad::Expr context;  // c_{t-1}, fed back as input
};

struct DecodeStep {
  ad::Expr log_probs;  // vocab x 1
  DecoderState state;
  ad::Expr beta_sent;  // n x 1
  ad::Expr beta_word;  // W x 1 over all words of the document
  ad::Expr context;    // d_h x 1
};

/// h'_0 is an affine map of the mean sentence state h3; cell and context
/// start at zero.
DecoderState initial_state(ad::Graph& g, const FusedStates& fused, const DecoderParams& p);
DecodeStep decode_step(ad::Graph& g, TokenId prev, const DecoderState& prev_state, const FusedStates& fused,
                       const DecoderParams& p);

/// Gold targets: the summary without a leading BOS, terminated by EOS.
std::vector<TokenId> summary_targets(const std::vector<TokenId>& summary);

struct TextLoss {
  ad::Expr loss;
  ad::Expr final_hidden;
  std::vector<ad::Expr> log_probs;
  std::vector<TokenId> targets;
};

TextLoss text_loss(ad::Graph& g, const Sample& sample, const FusedStates& fused, const DecoderParams& p);

struct DecodeResult {
  std::vector<TokenId> tokens;
  std::vector<ad::Vector> beta_sent;
  std::vector<ad::Matrix> beta_word;  // n x m_max, zero past each sentence
  std::vector<ad::Vector> hidden_states;
  std::vector<double> logp;  // log-probability of each emitted token
  ad::Expr final_hidden;
};

/// Greedy decoding from BOS until EOS or `max_len` tokens.
DecodeResult generate(ad::Graph& g, const FusedStates& fused, const DecoderParams& p, int max_len);

}  // namespace hcscl
