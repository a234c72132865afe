// Cross-modality encoder: cross-attention, self-attention and a position-wise
// feed-forward block, each wrapped in a residual connection and layer norm,
// stacked n_layers times.
#pragma once

#include "hcscl/autodiff.hpp"
#include "hcscl/config.hpp"

#include <random>
#include <string>
#include <vector>

namespace hcscl {

struct CmeLayerParams {
  ad::ParamId cross_q, cross_k, cross_v;
  ad::ParamId self_q, self_k, self_v;
  ad::ParamId ln_cross_gain, ln_cross_bias;
  ad::ParamId ln_self_gain, ln_self_bias;
  ad::ParamId ln_ff_gain, ln_ff_bias;
  ad::ParamId ff_w1, ff_b1, ff_w2, ff_b2;
};

struct CmeParams {
  std::vector<CmeLayerParams> layers;
  int width = 0;
  bool scaled_scores = false;
  ad::Activation ff_activation = ad::Activation::kRelu;
};

CmeParams add_cme(ad::ParameterStore& store, const std::string& prefix, const ModelConfig& cfg, std::mt19937_64& rng);

/// Attention weight matrices recorded during a forward pass. Each entry is
/// (keys x queries); every column is one softmax distribution.
struct AttentionTrace {
  std::vector<ad::Matrix> weights;
};

/// Dot-product attention of every query column over the key columns,
/// returning the weighted sums of the value columns.
ad::Expr attend(ad::Expr queries, ad::Expr keys, ad::Expr values, bool scaled = false, AttentionTrace* trace = nullptr);

/// Unprojected cross-attention: a_k = <query, v_k>, alpha = softmax(a),
/// output = sum_k alpha_k v_k.
inline ad::Expr cross_attend(ad::Expr queries, ad::Expr context, AttentionTrace* trace = nullptr) {
  return attend(queries, context, context, false, trace);
}

/// Fuses the query sequence (d x L) with the context set (d x K). Output is
/// d x L.
ad::Expr cme_encode(ad::Graph& g, ad::Expr queries, ad::Expr context, const CmeParams& p,
                    AttentionTrace* trace = nullptr);

}  // namespace hcscl
