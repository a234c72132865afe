// Reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Graph records every operation applied to Expr handles during a forward
// pass. Calling Graph::backward on a scalar node propagates adjoints back to
// every node and Graph::accumulate deposits the parameter adjoints into a
// Gradients buffer aligned with the ParameterStore.
//
// Vectors are column vectors; sequences of vectors are matrices whose columns
// are the sequence positions.
#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace hcscl::ad {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

struct ParamId {
  int index = -1;
  bool valid() const { return index >= 0; }
  friend bool operator==(ParamId, ParamId) = default;
};

struct Parameter {
  std::string name;
  Matrix value;
};

/// Owns every trainable tensor of a model. Insertion order is stable and
/// defines the serialization order of checkpoints.
class ParameterStore {
 public:
  ParamId add(std::string name, Matrix init);

  Parameter& at(ParamId id) { return params_.at(static_cast<std::size_t>(id.index)); }
  const Parameter& at(ParamId id) const { return params_.at(static_cast<std::size_t>(id.index)); }
  std::optional<ParamId> find(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;

  std::vector<Parameter>::iterator begin() { return params_.begin(); }
  std::vector<Parameter>::iterator end() { return params_.end(); }
  std::vector<Parameter>::const_iterator begin() const { return params_.begin(); }
  std::vector<Parameter>::const_iterator end() const { return params_.end(); }

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, int> by_name_;
};

/// Dense gradient buffer with one matrix per parameter.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(const ParameterStore& store);

  Matrix& operator[](ParamId id) { return grads_.at(static_cast<std::size_t>(id.index)); }
  const Matrix& operator[](ParamId id) const { return grads_.at(static_cast<std::size_t>(id.index)); }
  std::size_t size() const { return grads_.size(); }

  void zero();
  void scale(double factor);
  double squared_norm() const;
  bool all_finite() const;
  Gradients& operator+=(const Gradients& other);

 private:
  std::vector<Matrix> grads_;
};

class Graph;

class Expr {
 public:
  Expr() = default;

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  /// Value of a 1x1 node.
  double scalar() const;

  Graph* graph() const { return graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Expr(Graph* g, int id) : graph_(g), id_(id) {}
  Graph* graph_ = nullptr;
  int id_ = -1;
};

class Graph {
 public:
  using Backprop = std::function<void(Graph&, int self)>;

  explicit Graph(const ParameterStore* store = nullptr);
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Expr constant(Matrix value);
  Expr scalar(double value);
  /// Parameter node; repeated calls with the same id return the same node.
  Expr param(ParamId id);
  /// Row `row` of a parameter matrix, returned as a column vector.
  Expr lookup(ParamId id, Index row);

  /// Seeds d(loss)/d(loss) = 1 and propagates adjoints to every node.
  void backward(Expr loss);
  /// Adds parameter adjoints (dense and sparse lookups) into `out`.
  void accumulate(Gradients& out) const;

  const Matrix& grad(Expr e) const;
  std::size_t size() const { return nodes_.size(); }
  const ParameterStore* store() const { return store_; }

  // Building blocks for operations.
  Expr emplace(Matrix value, std::initializer_list<int> args, Backprop backprop);
  Expr emplace(Matrix value, std::vector<int> args, Backprop backprop);
  const Matrix& value_of(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  int arg(int self, std::size_t k) const { return nodes_[static_cast<std::size_t>(self)].args[k]; }
  std::size_t arg_count(int self) const { return nodes_[static_cast<std::size_t>(self)].args.size(); }
  /// Adjoint of node `id`, zero-allocated on first access.
  Matrix& grad_of(int id);
  const Matrix& upstream(int self) const { return nodes_[static_cast<std::size_t>(self)].grad; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<int> args;
    Backprop backprop;
  };

  const ParameterStore* store_;
  std::vector<Node> nodes_;
  std::unordered_map<int, int> param_nodes_;  // param index -> node id
  std::vector<std::pair<int, ParamId>> dense_params_;
  struct SparseRow {
    int node;
    ParamId param;
    Index row;
  };
  std::vector<SparseRow> sparse_rows_;
};

enum class Activation { kIdentity, kRelu, kTanh, kSigmoid };

Activation parse_activation(std::string_view name);
std::string_view activation_name(Activation act);

// Elementwise and linear algebra.
Expr operator+(Expr a, Expr b);
Expr operator-(Expr a, Expr b);
Expr operator*(Expr a, Expr b);  // matrix product
Expr cmul(Expr a, Expr b);       // Hadamard product
Expr scale(Expr a, double factor);
Expr one_minus(Expr a);
/// Adds column vector `bias` to every column of `m`.
Expr add_bias(Expr m, Expr bias);
/// diag(v) * m: multiplies row r of `m` by v[r].
Expr scale_rows(Expr m, Expr v);
Expr transpose(Expr a);

Expr tanh(Expr a);
Expr sigmoid(Expr a);
Expr relu(Expr a);
Expr activate(Expr a, Activation act);

// Normalizations over each column.
Expr softmax_cols(Expr a);
Expr log_softmax_cols(Expr a);
Expr layer_norm_cols(Expr x, Expr gain, Expr bias, double eps = 1e-5);

// Structural.
Expr pick(Expr a, Index row, Index col = 0);
Expr slice_rows(Expr a, Index start, Index count);
Expr slice_cols(Expr a, Index start, Index count);
Expr gather_rows(Expr a, std::span<const Index> rows);
Expr gather_cols(Expr a, std::span<const Index> cols);
Expr concat_rows(std::span<const Expr> parts);
Expr concat_cols(std::span<const Expr> parts);
Expr concat_rows(std::initializer_list<Expr> parts);
Expr concat_cols(std::initializer_list<Expr> parts);

// Reductions.
Expr sum_all(Expr a);
/// Row sums: result is a column vector.
Expr sum_cols(Expr a);
Expr mean_cols(Expr a);
/// Row-wise maximum over columns; ties route the adjoint to the first column.
Expr max_cols(Expr a);

}  // namespace hcscl::ad
