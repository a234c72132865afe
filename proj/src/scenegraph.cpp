#include "hcscl/scenegraph.hpp"

#include "hcscl/init.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace hcscl {

using ad::Expr;
using ad::Index;
using ad::Matrix;

SceneGraphParams add_scene_graph(ad::ParameterStore& store, const ModelConfig& cfg, std::mt19937_64& rng) {
  SceneGraphParams p;
  p.activation = cfg.graph_activation;
  p.w1 = store.add("graph.w1", init::xavier(cfg.d_edge, 1, rng));
  p.w2 = store.add("graph.w2", init::xavier(cfg.d_edge, 2 * cfg.d_h, rng));
  p.w3 = store.add("graph.w3", init::xavier(cfg.d_h, cfg.d_h, rng));
  return p;
}

double iou(const Box& a, const Box& b) {
  if (!(a.x1 <= a.x2 && a.y1 <= a.y2 && b.x1 <= b.x2 && b.y1 <= b.y2))
    throw std::invalid_argument("iou: box is not well-ordered");
  if (a.area() <= 0.0 || b.area() <= 0.0) return a == b ? 1.0 : 0.0;
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (w <= 0.0 || h <= 0.0) return 0.0;
  const double inter = w * h;
  return inter / (a.area() + b.area() - inter);
}

std::vector<int> Adjacency::neighbors(int node) const {
  std::vector<int> out;
  for (Index j = 0; j < a.cols(); ++j)
    if (a(node, j) != 0.0) out.push_back(static_cast<int>(j));
  return out;
}

Adjacency build_adjacency(std::span<const Box> boxes, double threshold) {
  const auto q = static_cast<Index>(boxes.size());
  if (q == 0) throw std::invalid_argument("build_adjacency: image has no objects");
  Adjacency adj{Matrix::Zero(q, q), Matrix::Identity(q, q)};
  for (Index i = 0; i < q; ++i) {
    for (Index j = i + 1; j < q; ++j) {
      const double s = iou(boxes[static_cast<std::size_t>(i)], boxes[static_cast<std::size_t>(j)]);
      adj.iou(i, j) = adj.iou(j, i) = s;
      if (s > threshold) adj.a(i, j) = adj.a(j, i) = 1.0;
    }
  }
  return adj;
}

Adjacency build_adjacency(const ImageRecord& image, double threshold) {
  std::vector<Box> boxes;
  boxes.reserve(image.objects.size());
  for (const auto& o : image.objects) boxes.push_back(o.bbox);
  return build_adjacency(boxes, threshold);
}

std::vector<std::vector<int>> connected_components(const Matrix& a) {
  const auto q = static_cast<int>(a.rows());
  std::vector<int> label(static_cast<std::size_t>(q), -1);
  std::vector<std::vector<int>> out;
  for (int start = 0; start < q; ++start) {
    if (label[static_cast<std::size_t>(start)] >= 0) continue;
    const int id = static_cast<int>(out.size());
    std::vector<int> comp;
    std::vector<int> stack{start};
    label[static_cast<std::size_t>(start)] = id;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      comp.push_back(u);
      for (int v = 0; v < q; ++v) {
        if (a(u, v) != 0.0 && label[static_cast<std::size_t>(v)] < 0) {
          label[static_cast<std::size_t>(v)] = id;
          stack.push_back(v);
        }
      }
    }
    std::sort(comp.begin(), comp.end());
    out.push_back(std::move(comp));
  }
  return out;
}

EdgeWeights edge_weights(ad::Graph& g, Expr nodes, const Adjacency& adj, const SceneGraphParams& p) {
  const int q = adj.size();
  if (nodes.cols() != q) throw std::invalid_argument("edge_weights: node count does not match adjacency");
  EdgeWeights out;
  out.neighbors.resize(static_cast<std::size_t>(q));
  out.weights.resize(static_cast<std::size_t>(q));
  out.feature_scores.resize(static_cast<std::size_t>(q));
  Expr w1 = g.param(p.w1);
  Expr w2 = g.param(p.w2);
  for (int i = 0; i < q; ++i) {
    auto nbrs = adj.neighbors(i);
    if (nbrs.empty()) continue;
    std::vector<Index> self_idx(nbrs.size(), i);
    std::vector<Index> nbr_idx(nbrs.begin(), nbrs.end());
    Matrix iou_row(1, static_cast<Index>(nbrs.size()));
    for (std::size_t k = 0; k < nbrs.size(); ++k) iou_row(0, static_cast<Index>(k)) = adj.iou(i, nbrs[k]);

    Expr pairs = ad::concat_rows({ad::gather_cols(nodes, self_idx), ad::gather_cols(nodes, nbr_idx)});
    Expr feature = ad::transpose(w1) * ad::activate(w2 * pairs, p.activation);  // 1 x k
    Expr logits = ad::cmul(feature, g.constant(std::move(iou_row)));
    out.feature_scores[static_cast<std::size_t>(i)] = feature;
    out.weights[static_cast<std::size_t>(i)] = ad::softmax_cols(ad::transpose(logits));
    out.neighbors[static_cast<std::size_t>(i)] = std::move(nbrs);
  }
  return out;
}

SceneReadout propagate_and_readout(ad::Graph& g, Expr nodes, const Adjacency& adj, const EdgeWeights& edges,
                                   const SceneGraphParams& p) {
  const int q = adj.size();
  Expr messages = g.param(p.w3) * nodes;
  std::vector<Expr> columns;
  columns.reserve(static_cast<std::size_t>(q));
  for (int i = 0; i < q; ++i) {
    Expr own = ad::slice_cols(nodes, i, 1);
    const auto& nbrs = edges.neighbors[static_cast<std::size_t>(i)];
    if (nbrs.empty()) {
      columns.push_back(own);
      continue;
    }
    // A_ij is 1 on every neighbor, so the sum reduces to the weighted messages.
    std::vector<Index> idx(nbrs.begin(), nbrs.end());
    columns.push_back(own + ad::gather_cols(messages, idx) * edges.weights[static_cast<std::size_t>(i)]);
  }
  SceneReadout out;
  out.updated = ad::activate(ad::concat_cols(columns), p.activation);
  out.components = connected_components(adj.a);
  std::vector<Expr> scenes;
  for (const auto& comp : out.components) {
    std::vector<Index> idx(comp.begin(), comp.end());
    Expr members = ad::gather_cols(out.updated, idx);
    scenes.push_back(ad::mean_cols(members) + ad::max_cols(members));
  }
  out.scenes = ad::concat_cols(scenes);
  return out;
}

SceneGraph encode_scene_graph(ad::Graph& g, Expr nodes, std::span<const Box> boxes, double threshold,
                              const SceneGraphParams& p) {
  SceneGraph sg;
  sg.adjacency = build_adjacency(boxes, threshold);
  sg.edges = edge_weights(g, nodes, sg.adjacency, p);
  sg.readout = propagate_and_readout(g, nodes, sg.adjacency, sg.edges, p);
  return sg;
}

}  // namespace hcscl
