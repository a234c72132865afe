#include "hcscl/cme.hpp"

#include "hcscl/errors.hpp"
#include "hcscl/init.hpp"

#include <cmath>
#include <stdexcept>

namespace hcscl {

using ad::Expr;

CmeParams add_cme(ad::ParameterStore& store, const std::string& prefix, const ModelConfig& cfg, std::mt19937_64& rng) {
  if (cfg.n_layers < 1) throw ConfigError("CME needs at least one layer");
  CmeParams p;
  p.width = cfg.d_h;
  p.scaled_scores = cfg.scaled_scores;
  p.ff_activation = cfg.ff_activation;
  const int d = cfg.d_h;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string name = prefix + ".layer" + std::to_string(l);
    CmeLayerParams layer;
    layer.cross_q = store.add(name + ".cross_q", init::xavier(d, d, rng));
    layer.cross_k = store.add(name + ".cross_k", init::xavier(d, d, rng));
    layer.cross_v = store.add(name + ".cross_v", init::xavier(d, d, rng));
    layer.self_q = store.add(name + ".self_q", init::xavier(d, d, rng));
    layer.self_k = store.add(name + ".self_k", init::xavier(d, d, rng));
    layer.self_v = store.add(name + ".self_v", init::xavier(d, d, rng));
    layer.ln_cross_gain = store.add(name + ".ln_cross_gain", init::ones(d, 1));
    layer.ln_cross_bias = store.add(name + ".ln_cross_bias", init::zeros(d, 1));
    layer.ln_self_gain = store.add(name + ".ln_self_gain", init::ones(d, 1));
    layer.ln_self_bias = store.add(name + ".ln_self_bias", init::zeros(d, 1));
    layer.ln_ff_gain = store.add(name + ".ln_ff_gain", init::ones(d, 1));
    layer.ln_ff_bias = store.add(name + ".ln_ff_bias", init::zeros(d, 1));
    layer.ff_w1 = store.add(name + ".ff_w1", init::xavier(cfg.d_ff, d, rng));
    layer.ff_b1 = store.add(name + ".ff_b1", init::zeros(cfg.d_ff, 1));
    layer.ff_w2 = store.add(name + ".ff_w2", init::xavier(d, cfg.d_ff, rng));
    layer.ff_b2 = store.add(name + ".ff_b2", init::zeros(d, 1));
    p.layers.push_back(layer);
  }
  return p;
}

Expr attend(Expr queries, Expr keys, Expr values, bool scaled, AttentionTrace* trace) {
  if (keys.cols() == 0) throw std::invalid_argument("attention over an empty context");
  if (queries.rows() != keys.rows()) throw std::invalid_argument("attention: query/key width mismatch");
  if (keys.cols() != values.cols()) throw std::invalid_argument("attention: key/value count mismatch");
  Expr scores = ad::transpose(keys) * queries;  // K x L
  if (scaled) scores = ad::scale(scores, 1.0 / std::sqrt(static_cast<double>(queries.rows())));
  Expr weights = ad::softmax_cols(scores);
  if (trace != nullptr) trace->weights.push_back(weights.value());
  return values * weights;
}

Expr cme_encode(ad::Graph& g, Expr queries, Expr context, const CmeParams& p, AttentionTrace* trace) {
  if (queries.cols() == 0 || context.cols() == 0) throw std::invalid_argument("cme_encode: empty queries or context");
  if (queries.rows() != p.width || context.rows() != p.width)
    throw std::invalid_argument("cme_encode: expected width " + std::to_string(p.width) + ", got " +
                                std::to_string(queries.rows()) + " and " + std::to_string(context.rows()));
  Expr x = queries;
  for (const auto& layer : p.layers) {
    Expr cross = attend(g.param(layer.cross_q) * x, g.param(layer.cross_k) * context, g.param(layer.cross_v) * context,
                        p.scaled_scores, trace);
    x = ad::layer_norm_cols(x + cross, g.param(layer.ln_cross_gain), g.param(layer.ln_cross_bias));

    Expr self = attend(g.param(layer.self_q) * x, g.param(layer.self_k) * x, g.param(layer.self_v) * x,
                       p.scaled_scores, trace);
    x = ad::layer_norm_cols(x + self, g.param(layer.ln_self_gain), g.param(layer.ln_self_bias));

    Expr hidden = ad::activate(ad::add_bias(g.param(layer.ff_w1) * x, g.param(layer.ff_b1)), p.ff_activation);
    Expr ff = ad::add_bias(g.param(layer.ff_w2) * hidden, g.param(layer.ff_b2));
    x = ad::layer_norm_cols(x + ff, g.param(layer.ln_ff_gain), g.param(layer.ln_ff_bias));
  }
  return x;
}

}  // namespace hcscl
