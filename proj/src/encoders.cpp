#include "hcscl/encoders.hpp"

#include "hcscl/errors.hpp"
#include "hcscl/init.hpp"

namespace hcscl {

using ad::Expr;
using ad::Matrix;

namespace {

constexpr double kRecurrentInit = 0.08;

}  // namespace

LstmParams add_lstm(ad::ParameterStore& store, const std::string& prefix, int input, int hidden, Rng& rng) {
  LstmParams p;
  p.input = input;
  p.hidden = hidden;
  p.w_x = store.add(prefix + ".w_x", init::uniform(4 * hidden, input, kRecurrentInit, rng));
  p.w_h = store.add(prefix + ".w_h", init::uniform(4 * hidden, hidden, kRecurrentInit, rng));
  Matrix bias = init::zeros(4 * hidden, 1);
  bias.middleRows(hidden, hidden).setOnes();  // forget gate
  p.bias = store.add(prefix + ".bias", std::move(bias));
  return p;
}

LstmState lstm_zero_state(ad::Graph& g, const LstmParams& p) {
  return LstmState{g.constant(Matrix::Zero(p.hidden, 1)), g.constant(Matrix::Zero(p.hidden, 1))};
}

LstmState lstm_step(ad::Graph& g, const LstmParams& p, Expr x, const LstmState& prev) {
  const int h = p.hidden;
  Expr gates = g.param(p.w_x) * x + g.param(p.w_h) * prev.h + g.param(p.bias);
  Expr in = ad::sigmoid(ad::slice_rows(gates, 0, h));
  Expr forget = ad::sigmoid(ad::slice_rows(gates, h, h));
  Expr out = ad::sigmoid(ad::slice_rows(gates, 2 * h, h));
  Expr cand = ad::tanh(ad::slice_rows(gates, 3 * h, h));
  Expr c = ad::cmul(forget, prev.c) + ad::cmul(in, cand);
  return LstmState{ad::cmul(out, ad::tanh(c)), c};
}

EncoderParams add_encoder(ad::ParameterStore& store, const ModelConfig& cfg, Rng& rng) {
  if (cfg.d_h % 2 != 0) throw ConfigError("d_h must be even");
  EncoderParams p;
  p.canvas = cfg.canvas;
  p.use_bilstm = cfg.ablation.text_encoder;
  p.embedding = store.add("encoder.embedding", init::normal(cfg.vocab_size, cfg.d_emb, 1.0 / std::sqrt(cfg.d_emb), rng));
  if (p.use_bilstm) {
    p.forward = add_lstm(store, "encoder.word_fwd", cfg.d_emb, cfg.d_h / 2, rng);
    p.backward = add_lstm(store, "encoder.word_bwd", cfg.d_emb, cfg.d_h / 2, rng);
  } else {
    p.word_proj = store.add("encoder.word_proj", init::xavier(cfg.d_h, cfg.d_emb, rng));
  }
  if (cfg.ablation.scene_encoder) p.sentence = add_lstm(store, "encoder.sentence", cfg.d_h, cfg.d_h, rng);
  p.box = store.add("encoder.box", init::xavier(4, cfg.d_l, rng));
  p.attr = store.add("encoder.attr", init::xavier(cfg.n_attr, cfg.d_a, rng));
  return p;
}

std::vector<Matrix> TextStates::padded(int m) const {
  std::vector<Matrix> out;
  out.reserve(words.size());
  for (std::size_t i = 0; i < words.size(); ++i) {
    Matrix dense = Matrix::Zero(width(), m);
    const int len = std::min(m, lengths[i]);
    dense.leftCols(len) = words[i].value().leftCols(len);
    out.push_back(std::move(dense));
  }
  return out;
}

TextStates encode_words(ad::Graph& g, const Sample& sample, const EncoderParams& p) {
  const auto vocab = g.store()->at(p.embedding).value.rows();
  TextStates out;
  for (std::size_t i = 0; i < sample.sentences.size(); ++i) {
    const auto& sentence = sample.sentences[i];
    if (sentence.empty()) throw ValidationError("sentence " + std::to_string(i) + " is empty");
    std::vector<Expr> emb;
    emb.reserve(sentence.size());
    for (TokenId t : sentence) {
      if (t < 0 || t >= vocab) throw ValidationError("token id " + std::to_string(t) + " outside vocab");
      emb.push_back(g.lookup(p.embedding, t));
    }
    Expr states;
    if (p.use_bilstm) {
      const std::size_t m = emb.size();
      std::vector<Expr> fwd(m);
      std::vector<Expr> bwd(m);
      LstmState s = lstm_zero_state(g, p.forward);
      for (std::size_t j = 0; j < m; ++j) {
        s = lstm_step(g, p.forward, emb[j], s);
        fwd[j] = s.h;
      }
      s = lstm_zero_state(g, p.backward);
      for (std::size_t j = m; j-- > 0;) {
        s = lstm_step(g, p.backward, emb[j], s);
        bwd[j] = s.h;
      }
      states = ad::concat_rows({ad::concat_cols(fwd), ad::concat_cols(bwd)});
    } else {
      states = g.param(p.word_proj) * ad::concat_cols(emb);
    }
    out.words.push_back(states);
    out.lengths.push_back(static_cast<int>(sentence.size()));
  }
  return out;
}

ObjectStates assemble_objects(ad::Graph& g, const Sample& sample, const EncoderParams& p) {
  const Matrix& attr_table = g.store()->at(p.attr).value;
  std::size_t q = 0;
  for (const auto& img : sample.images) q += img.objects.size();
  if (q == 0) throw ValidationError("sample has no objects");
  const auto d_obj = static_cast<ad::Index>(sample.images.front().objects.front().feature.size());

  Matrix features(d_obj, static_cast<ad::Index>(q));
  Matrix boxes(4, static_cast<ad::Index>(q));
  std::vector<ad::Index> attrs;
  ObjectStates out;
  ad::Index col = 0;
  for (std::size_t k = 0; k < sample.images.size(); ++k) {
    for (const auto& obj : sample.images[k].objects) {
      if (static_cast<ad::Index>(obj.feature.size()) != d_obj) throw ValidationError("objects differ in feature width");
      if (obj.attr_class < 0 || obj.attr_class >= attr_table.rows())
        throw ValidationError("attr_class " + std::to_string(obj.attr_class) + " out of range");
      features.col(col) = Eigen::Map<const ad::Vector>(obj.feature.data(), d_obj);
      boxes.col(col) << obj.bbox.x1, obj.bbox.y1, obj.bbox.x2, obj.bbox.y2;
      attrs.push_back(obj.attr_class);
      out.image_index.push_back(static_cast<int>(k));
      ++col;
    }
  }
  boxes /= p.canvas;
  Expr box_emb = ad::transpose(g.param(p.box)) * g.constant(std::move(boxes));
  Expr attr_emb = ad::transpose(ad::gather_rows(g.param(p.attr), attrs));
  out.features = ad::concat_rows({g.constant(std::move(features)), box_emb, attr_emb});
  return out;
}

Expr encode_sentences(ad::Graph& g, std::span<const Expr> sentences, std::span<const int> lengths, const LstmParams& p) {
  if (sentences.size() != lengths.size()) throw std::invalid_argument("encode_sentences: lengths do not match");
  std::vector<Expr> finals;
  finals.reserve(sentences.size());
  for (std::size_t i = 0; i < sentences.size(); ++i) {
    if (lengths[i] <= 0) throw ValidationError("sentence " + std::to_string(i) + " has zero length");
    if (lengths[i] > sentences[i].cols()) throw std::invalid_argument("sentence length exceeds its states");
    LstmState s = lstm_zero_state(g, p);
    for (int j = 0; j < lengths[i]; ++j) s = lstm_step(g, p, ad::slice_cols(sentences[i], j, 1), s);
    finals.push_back(s.h);
  }
  return ad::concat_cols(finals);
}

}  // namespace hcscl
