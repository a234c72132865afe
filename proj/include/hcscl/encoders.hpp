// Text encoder (word-level BiLSTM, sentence-level LSTM) and the object
// feature assembler.
#pragma once

#include "hcscl/autodiff.hpp"
#include "hcscl/config.hpp"
#include "hcscl/datamodel.hpp"

#include <random>
#include <span>
#include <string>
#include <vector>

namespace hcscl {

using Rng = std::mt19937_64;

/// Weights of one LSTM layer. Gate order in the stacked matrices is
/// input, forget, output, candidate.
struct LstmParams {
  ad::ParamId w_x;   // 4*hidden x input
  ad::ParamId w_h;   // 4*hidden x hidden
  ad::ParamId bias;  // 4*hidden x 1
  int input = 0;
  int hidden = 0;
};

struct LstmState {
  ad::Expr h;
  ad::Expr c;
};

LstmParams add_lstm(ad::ParameterStore& store, const std::string& prefix, int input, int hidden, Rng& rng);
LstmState lstm_zero_state(ad::Graph& g, const LstmParams& p);
LstmState lstm_step(ad::Graph& g, const LstmParams& p, ad::Expr x, const LstmState& prev);

struct EncoderParams {
  ad::ParamId embedding;    // vocab x d_emb
  LstmParams forward;       // d_emb -> d_h/2
  LstmParams backward;      // d_emb -> d_h/2
  ad::ParamId word_proj;    // d_h x d_emb, only when the BiLSTM is ablated
  LstmParams sentence;      // d_h -> d_h
  ad::ParamId box;          // 4 x d_l
  ad::ParamId attr;         // n_attr x d_a
  bool use_bilstm = true;
  double canvas = 1000.0;
};

EncoderParams add_encoder(ad::ParameterStore& store, const ModelConfig& cfg, Rng& rng);

/// Word states h0, one d_h x m_i matrix per sentence.
struct TextStates {
  std::vector<ad::Expr> words;
  std::vector<int> lengths;

  int width() const { return words.empty() ? 0 : static_cast<int>(words.front().rows()); }
  /// Dense copy, one d_h x m matrix per sentence; columns past a sentence's
  /// length are exact zeros.
  std::vector<ad::Matrix> padded(int m) const;
};

/// Object states v0 (d_v x q_total) and the owning image of every column.
struct ObjectStates {
  ad::Expr features;
  std::vector<int> image_index;
};

TextStates encode_words(ad::Graph& g, const Sample& sample, const EncoderParams& p);
ObjectStates assemble_objects(ad::Graph& g, const Sample& sample, const EncoderParams& p);

/// Final sentence-LSTM state of every sentence, as columns of a d_h x n
/// matrix. Each entry of `sentences` may carry padding columns past
/// `lengths[i]`; those are never read.
ad::Expr encode_sentences(ad::Graph& g, std::span<const ad::Expr> sentences, std::span<const int> lengths,
                          const LstmParams& p);

}  // namespace hcscl
