// Image graph encoder: IOU geometry, adjacency, learned edge weights, one
// message-passing update and a per-component readout into scene vectors.
#pragma once

#include "hcscl/autodiff.hpp"
#include "hcscl/config.hpp"
#include "hcscl/datamodel.hpp"

#include <random>
#include <span>
#include <vector>

namespace hcscl {

struct SceneGraphParams {
  ad::ParamId w1;  // d_edge x 1
  ad::ParamId w2;  // d_edge x 2*d_h
  ad::ParamId w3;  // d_h x d_h
  ad::Activation activation = ad::Activation::kRelu;
};

SceneGraphParams add_scene_graph(ad::ParameterStore& store, const ModelConfig& cfg, std::mt19937_64& rng);

/// Intersection over union of two well-ordered boxes. A zero-area box has
/// zero overlap with everything except an identical box, where it is 1.
double iou(const Box& a, const Box& b);

struct Adjacency {
  ad::Matrix a;    // 0/1, symmetric, zero diagonal
  ad::Matrix iou;  // pairwise IOU, diagonal 1
  int size() const { return static_cast<int>(a.rows()); }
  std::vector<int> neighbors(int node) const;
};

/// A_ij = 1 iff i != j and iou(i, j) strictly exceeds `threshold`.
Adjacency build_adjacency(std::span<const Box> boxes, double threshold);
Adjacency build_adjacency(const ImageRecord& image, double threshold);

/// Connected components of A, each sorted ascending, ordered by their
/// smallest node. Isolated nodes are singleton components.
std::vector<std::vector<int>> connected_components(const ad::Matrix& a);

/// Softmax-normalized edge weights over each node's neighborhood. `weights[i]`
/// is a |N(i)| x 1 column aligned with `neighbors[i]`, or invalid when the node
/// has no neighbors.
struct EdgeWeights {
  std::vector<std::vector<int>> neighbors;
  std::vector<ad::Expr> weights;
  std::vector<ad::Expr> feature_scores;  // 1 x |N(i)| pre-softmax feature scores
};

EdgeWeights edge_weights(ad::Graph& g, ad::Expr nodes, const Adjacency& adj, const SceneGraphParams& p);

struct SceneReadout {
  ad::Expr updated;  // d x q node states after one propagation step
  ad::Expr scenes;   // d x components
  std::vector<std::vector<int>> components;
};

SceneReadout propagate_and_readout(ad::Graph& g, ad::Expr nodes, const Adjacency& adj, const EdgeWeights& edges,
                                   const SceneGraphParams& p);

/// Everything the graph encoder computed for one image.
struct SceneGraph {
  Adjacency adjacency;
  EdgeWeights edges;
  SceneReadout readout;
};

SceneGraph encode_scene_graph(ad::Graph& g, ad::Expr nodes, std::span<const Box> boxes, double threshold,
                              const SceneGraphParams& p);

}  // namespace hcscl
