#include "hcscl/decoder.hpp"

#include "hcscl/errors.hpp"
#include "hcscl/init.hpp"

#include <algorithm>

namespace hcscl {

using ad::Expr;
using ad::Index;
using ad::Matrix;

DecoderParams add_decoder(ad::ParameterStore& store, const ModelConfig& cfg, ad::ParamId shared_embedding,
                          std::mt19937_64& rng) {
  DecoderParams p;
  p.target_embedding = cfg.share_target_embedding
                           ? shared_embedding
                           : store.add("decoder.embedding",
                                       init::normal(cfg.vocab_size, cfg.d_emb, 1.0 / std::sqrt(cfg.d_emb), rng));
  p.lstm = add_lstm(store, "decoder.lstm", cfg.d_emb + cfg.d_h, cfg.d_h, rng);
  p.init_w = store.add("decoder.init_w", init::xavier(cfg.d_h, cfg.d_h, rng));
  p.init_b = store.add("decoder.init_b", init::zeros(cfg.d_h, 1));
  p.ff_w1 = store.add("decoder.ff_w1", init::xavier(cfg.d_ff, 2 * cfg.d_h, rng));
  p.ff_b1 = store.add("decoder.ff_b1", init::zeros(cfg.d_ff, 1));
  p.ff_w2 = store.add("decoder.ff_w2", init::xavier(cfg.d_h, cfg.d_ff, rng));
  p.ff_b2 = store.add("decoder.ff_b2", init::zeros(cfg.d_h, 1));
  p.vocab_out = store.add("decoder.vocab_out", init::xavier(cfg.vocab_size, cfg.d_h, rng));
  return p;
}

DecoderState initial_state(ad::Graph& g, const FusedStates& fused, const DecoderParams& p) {
  const Index d = fused.h3.rows();
  Expr h = g.param(p.init_w) * ad::mean_cols(fused.h3) + g.param(p.init_b);
  return DecoderState{LstmState{h, g.constant(Matrix::Zero(d, 1))}, g.constant(Matrix::Zero(d, 1))};
}

DecodeStep decode_step(ad::Graph& g, TokenId prev, const DecoderState& prev_state, const FusedStates& fused,
                       const DecoderParams& p) {
  const Index vocab = g.store()->at(p.target_embedding).value.rows();
  if (prev < 0 || prev >= vocab) throw ValidationError("decoder: unknown previous token " + std::to_string(prev));
  const Expr h_prev = prev_state.lstm.h;

  DecodeStep out;
  out.beta_sent = ad::softmax_cols(ad::transpose(fused.h3) * h_prev);
  std::vector<Index> sentence_of(fused.word_sentence.begin(), fused.word_sentence.end());
  Expr word_scores = ad::transpose(fused.h1_all) * h_prev;
  out.beta_word = ad::softmax_cols(ad::cmul(ad::gather_rows(out.beta_sent, sentence_of), word_scores));
  out.context = fused.h1_all * out.beta_word;

  Expr input = ad::concat_rows({g.lookup(p.target_embedding, prev), prev_state.context});
  out.state.lstm = lstm_step(g, p.lstm, input, prev_state.lstm);
  out.state.context = out.context;

  Expr joint = ad::concat_rows({out.state.lstm.h, out.context});
  Expr hidden = ad::activate(ad::add_bias(g.param(p.ff_w1) * joint, g.param(p.ff_b1)), p.ff_activation);
  Expr ff = ad::add_bias(g.param(p.ff_w2) * hidden, g.param(p.ff_b2));
  out.log_probs = ad::log_softmax_cols(g.param(p.vocab_out) * ff);
  return out;
}

std::vector<TokenId> summary_targets(const std::vector<TokenId>& summary) {
  std::vector<TokenId> targets(summary.begin(), summary.end());
  if (!targets.empty() && targets.front() == kBos) targets.erase(targets.begin());
  if (targets.empty() || targets.back() != kEos) targets.push_back(kEos);
  return targets;
}

TextLoss text_loss(ad::Graph& g, const Sample& sample, const FusedStates& fused, const DecoderParams& p) {
  TextLoss out;
  out.targets = summary_targets(sample.summary);
  DecoderState state = initial_state(g, fused, p);
  TokenId prev = kBos;
  std::vector<Expr> picked;
  for (TokenId target : out.targets) {
    DecodeStep step = decode_step(g, prev, state, fused, p);
    out.log_probs.push_back(step.log_probs);
    picked.push_back(ad::pick(step.log_probs, target));
    state = step.state;
    prev = target;
  }
  out.loss = ad::scale(ad::sum_all(ad::concat_rows(picked)), -1.0);
  out.final_hidden = state.lstm.h;
  return out;
}

DecodeResult generate(ad::Graph& g, const FusedStates& fused, const DecoderParams& p, int max_len) {
  if (max_len < 1) throw std::invalid_argument("generate: max_len must be at least 1");
  Index m_max = 0;
  for (const auto& words : fused.h1) m_max = std::max(m_max, words.cols());
  // Column offset of each sentence inside h1_all.
  std::vector<Index> offsets(fused.h1.size(), 0);
  for (std::size_t i = 1; i < fused.h1.size(); ++i) offsets[i] = offsets[i - 1] + fused.h1[i - 1].cols();

  DecodeResult out;
  DecoderState state = initial_state(g, fused, p);
  TokenId prev = kBos;
  for (int t = 0; t < max_len; ++t) {
    DecodeStep step = decode_step(g, prev, state, fused, p);
    const Matrix& lp = step.log_probs.value();
    Index best = 0;
    lp.col(0).maxCoeff(&best);
    out.tokens.push_back(static_cast<TokenId>(best));
    out.logp.push_back(lp(best, 0));
    out.beta_sent.push_back(step.beta_sent.value().col(0));
    Matrix word = Matrix::Zero(static_cast<Index>(fused.h1.size()), m_max);
    const Matrix& bw = step.beta_word.value();
    for (std::size_t i = 0; i < fused.h1.size(); ++i)
      for (Index j = 0; j < fused.h1[i].cols(); ++j) word(static_cast<Index>(i), j) = bw(offsets[i] + j, 0);
    out.beta_word.push_back(std::move(word));
    out.hidden_states.push_back(step.state.lstm.h.value().col(0));
    state = step.state;
    prev = static_cast<TokenId>(best);
    if (prev == kEos) break;
  }
  out.final_hidden = state.lstm.h;
  return out;
}

}  // namespace hcscl
