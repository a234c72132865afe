#include "hcscl/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>

namespace hcscl::ad {

// ---------------------------------------------------------------------------
// ParameterStore / Gradients

ParamId ParameterStore::add(std::string name, Matrix init) {
  if (by_name_.contains(name)) throw std::invalid_argument("duplicate parameter name: " + name);
  const int index = static_cast<int>(params_.size());
  by_name_.emplace(name, index);
  params_.push_back(Parameter{std::move(name), std::move(init)});
  return ParamId{index};
}

std::optional<ParamId> ParameterStore::find(std::string_view name) const {
  auto it = by_name_.find(std::string(name));
  if (it == by_name_.end()) return std::nullopt;
  return ParamId{it->second};
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
  return n;
}

Gradients::Gradients(const ParameterStore& store) {
  grads_.reserve(store.size());
  for (const auto& p : store) grads_.push_back(Matrix::Zero(p.value.rows(), p.value.cols()));
}

void Gradients::zero() {
  for (auto& g : grads_) g.setZero();
}

void Gradients::scale(double factor) {
  for (auto& g : grads_) g *= factor;
}

double Gradients::squared_norm() const {
  double s = 0.0;
  for (const auto& g : grads_) s += g.squaredNorm();
  return s;
}

bool Gradients::all_finite() const {
  for (const auto& g : grads_)
    if (!g.allFinite()) return false;
  return true;
}

Gradients& Gradients::operator+=(const Gradients& other) {
  if (other.grads_.size() != grads_.size()) throw std::invalid_argument("gradient buffers differ in size");
  for (std::size_t i = 0; i < grads_.size(); ++i) grads_[i] += other.grads_[i];
  return *this;
}

// ---------------------------------------------------------------------------
// Graph

const Matrix& Expr::value() const { return graph_->value_of(id_); }

double Expr::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) throw std::logic_error("scalar() on a non-scalar node");
  return v(0, 0);
}

Graph::Graph(const ParameterStore* store) : store_(store) { nodes_.reserve(1024); }

Expr Graph::emplace(Matrix value, std::initializer_list<int> args, Backprop backprop) {
  return emplace(std::move(value), std::vector<int>(args), std::move(backprop));
}

Expr Graph::emplace(Matrix value, std::vector<int> args, Backprop backprop) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{std::move(value), Matrix(), std::move(args), std::move(backprop)});
  return Expr(this, id);
}

Expr Graph::constant(Matrix value) { return emplace(std::move(value), {}, nullptr); }

Expr Graph::scalar(double value) { return constant(Matrix::Constant(1, 1, value)); }

Expr Graph::param(ParamId id) {
  if (store_ == nullptr) throw std::logic_error("graph has no parameter store");
  if (auto it = param_nodes_.find(id.index); it != param_nodes_.end()) return Expr(this, it->second);
  Expr e = emplace(store_->at(id).value, {}, nullptr);
  param_nodes_.emplace(id.index, e.id());
  dense_params_.emplace_back(e.id(), id);
  return e;
}

Expr Graph::lookup(ParamId id, Index row) {
  if (store_ == nullptr) throw std::logic_error("graph has no parameter store");
  const Matrix& table = store_->at(id).value;
  if (row < 0 || row >= table.rows()) throw std::out_of_range("lookup row out of range in " + store_->at(id).name);
  Expr e = emplace(table.row(row).transpose(), {}, nullptr);
  sparse_rows_.push_back(SparseRow{e.id(), id, row});
  return e;
}

Matrix& Graph::grad_of(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0 && n.value.size() != 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

const Matrix& Graph::grad(Expr e) const { return nodes_[static_cast<std::size_t>(e.id())].grad; }

void Graph::backward(Expr loss) {
  if (loss.graph() != this) throw std::logic_error("backward on a foreign node");
  if (loss.value().size() != 1) throw std::logic_error("backward requires a scalar loss");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  grad_of(loss.id()).setConstant(1.0);
  for (int i = loss.id(); i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.grad.size() == 0 || !n.backprop) continue;
    n.backprop(*this, i);
  }
}

void Graph::accumulate(Gradients& out) const {
  for (const auto& [node, param] : dense_params_) {
    const Matrix& g = nodes_[static_cast<std::size_t>(node)].grad;
    if (g.size() != 0) out[param] += g;
  }
  for (const auto& s : sparse_rows_) {
    const Matrix& g = nodes_[static_cast<std::size_t>(s.node)].grad;
    if (g.size() != 0) out[s.param].row(s.row) += g.col(0).transpose();
  }
}

// ---------------------------------------------------------------------------
// Operations

namespace {

Graph& common_graph(Expr a, Expr b) {
  if (a.graph() == nullptr || a.graph() != b.graph()) throw std::logic_error("operands belong to different graphs");
  return *a.graph();
}

void require_same_shape(Expr a, Expr b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()));
}

}  // namespace

Activation parse_activation(std::string_view name) {
  if (name == "identity") return Activation::kIdentity;
  if (name == "relu") return Activation::kRelu;
  if (name == "tanh") return Activation::kTanh;
  if (name == "sigmoid") return Activation::kSigmoid;
  throw std::invalid_argument("unknown activation: " + std::string(name));
}

std::string_view activation_name(Activation act) {
  switch (act) {
    case Activation::kIdentity: return "identity";
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kSigmoid: return "sigmoid";
  }
  return "identity";
}

Expr operator+(Expr a, Expr b) {
  Graph& g = common_graph(a, b);
  require_same_shape(a, b, "add");
  return g.emplace(a.value() + b.value(), {a.id(), b.id()}, [](Graph& g, int self) {
    g.grad_of(g.arg(self, 0)) += g.upstream(self);
    g.grad_of(g.arg(self, 1)) += g.upstream(self);
  });
}

Expr operator-(Expr a, Expr b) {
  Graph& g = common_graph(a, b);
  require_same_shape(a, b, "sub");
  return g.emplace(a.value() - b.value(), {a.id(), b.id()}, [](Graph& g, int self) {
    g.grad_of(g.arg(self, 0)) += g.upstream(self);
    g.grad_of(g.arg(self, 1)) -= g.upstream(self);
  });
}

Expr operator*(Expr a, Expr b) {
  Graph& g = common_graph(a, b);
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: inner dimensions " + std::to_string(a.cols()) + " vs " +
                                std::to_string(b.rows()));
  return g.emplace(a.value() * b.value(), {a.id(), b.id()}, [](Graph& g, int self) {
    const int ia = g.arg(self, 0);
    const int ib = g.arg(self, 1);
    const Matrix& up = g.upstream(self);
    g.grad_of(ia).noalias() += up * g.value_of(ib).transpose();
    g.grad_of(ib).noalias() += g.value_of(ia).transpose() * up;
  });
}

Expr cmul(Expr a, Expr b) {
  Graph& g = common_graph(a, b);
  require_same_shape(a, b, "cmul");
  return g.emplace(a.value().cwiseProduct(b.value()), {a.id(), b.id()}, [](Graph& g, int self) {
    const int ia = g.arg(self, 0);
    const int ib = g.arg(self, 1);
    const Matrix& up = g.upstream(self);
    g.grad_of(ia) += up.cwiseProduct(g.value_of(ib));
    g.grad_of(ib) += up.cwiseProduct(g.value_of(ia));
  });
}

Expr scale(Expr a, double factor) {
  return a.graph()->emplace(a.value() * factor, {a.id()}, [factor](Graph& g, int self) {
    g.grad_of(g.arg(self, 0)) += g.upstream(self) * factor;
  });
}

Expr one_minus(Expr a) {
  return a.graph()->emplace((1.0 - a.value().array()).matrix(), {a.id()}, [](Graph& g, int self) {
    g.grad_of(g.arg(self, 0)) -= g.upstream(self);
  });
}

Expr add_bias(Expr m, Expr bias) {
  Graph& g = common_graph(m, bias);
  if (bias.cols() != 1 || bias.rows() != m.rows()) throw std::invalid_argument("add_bias: bias must be a column of matching height");
  Matrix out = m.value().colwise() + bias.value().col(0);
  return g.emplace(std::move(out), {m.id(), bias.id()}, [](Graph& g, int self) {
    const Matrix& up = g.upstream(self);
    g.grad_of(g.arg(self, 0)) += up;
    g.grad_of(g.arg(self, 1)) += up.rowwise().sum();
  });
}

Expr scale_rows(Expr m, Expr v) {
  Graph& g = common_graph(m, v);
  if (v.cols() != 1 || v.rows() != m.rows()) throw std::invalid_argument("scale_rows: vector height mismatch");
  Matrix out = v.value().col(0).asDiagonal() * m.value();
  return g.emplace(std::move(out), {m.id(), v.id()}, [](Graph& g, int self) {
    const int im = g.arg(self, 0);
    const int iv = g.arg(self, 1);
    const Matrix& up = g.upstream(self);
    g.grad_of(im) += g.value_of(iv).col(0).asDiagonal() * up;
    g.grad_of(iv) += up.cwiseProduct(g.value_of(im)).rowwise().sum();
  });
}

Expr transpose(Expr a) {
  return a.graph()->emplace(a.value().transpose(), {a.id()}, [](Graph& g, int self) {
    g.grad_of(g.arg(self, 0)) += g.upstream(self).transpose();
  });
}

Expr tanh(Expr a) {
  Matrix y = a.value().array().tanh().matrix();
  return a.graph()->emplace(std::move(y), {a.id()}, [](Graph& g, int self) {
    const auto y = g.value_of(self).array();
    g.grad_of(g.arg(self, 0)).array() += g.upstream(self).array() * (1.0 - y * y);
  });
}

Expr sigmoid(Expr a) {
  Matrix y = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return a.graph()->emplace(std::move(y), {a.id()}, [](Graph& g, int self) {
    const auto y = g.value_of(self).array();
    g.grad_of(g.arg(self, 0)).array() += g.upstream(self).array() * y * (1.0 - y);
  });
}

Expr relu(Expr a) {
  Matrix y = a.value().cwiseMax(0.0);
  return a.graph()->emplace(std::move(y), {a.id()}, [](Graph& g, int self) {
    const int ia = g.arg(self, 0);
    const auto x = g.value_of(ia).array();
    g.grad_of(ia).array() += (x > 0.0).select(g.upstream(self).array(), 0.0);
  });
}

Expr activate(Expr a, Activation act) {
  switch (act) {
    case Activation::kIdentity: return a;
    case Activation::kRelu: return relu(a);
    case Activation::kTanh: return tanh(a);
    case Activation::kSigmoid: return sigmoid(a);
  }
  return a;
}

Expr softmax_cols(Expr a) {
  const Matrix& x = a.value();
  if (x.rows() == 0) throw std::invalid_argument("softmax over an empty set");
  Matrix y(x.rows(), x.cols());
  for (Index c = 0; c < x.cols(); ++c) {
    const double mx = x.col(c).maxCoeff();
    y.col(c) = (x.col(c).array() - mx).exp().matrix();
    y.col(c) /= y.col(c).sum();
  }
  return a.graph()->emplace(std::move(y), {a.id()}, [](Graph& g, int self) {
    const Matrix& y = g.value_of(self);
    const Matrix& up = g.upstream(self);
    Matrix& dx = g.grad_of(g.arg(self, 0));
    for (Index c = 0; c < y.cols(); ++c) {
      const double inner = y.col(c).dot(up.col(c));
      dx.col(c).array() += y.col(c).array() * (up.col(c).array() - inner);
    }
  });
}

Expr log_softmax_cols(Expr a) {
  const Matrix& x = a.value();
  if (x.rows() == 0) throw std::invalid_argument("log-softmax over an empty set");
  Matrix y(x.rows(), x.cols());
  for (Index c = 0; c < x.cols(); ++c) {
    const double mx = x.col(c).maxCoeff();
    const double lse = mx + std::log((x.col(c).array() - mx).exp().sum());
    y.col(c) = (x.col(c).array() - lse).matrix();
  }
  return a.graph()->emplace(std::move(y), {a.id()}, [](Graph& g, int self) {
    const Matrix& y = g.value_of(self);
    const Matrix& up = g.upstream(self);
    Matrix& dx = g.grad_of(g.arg(self, 0));
    for (Index c = 0; c < y.cols(); ++c) {
      const double total = up.col(c).sum();
      dx.col(c).array() += up.col(c).array() - y.col(c).array().exp() * total;
    }
  });
}

Expr layer_norm_cols(Expr x, Expr gain, Expr bias, double eps) {
  Graph& g = common_graph(x, gain);
  common_graph(x, bias);
  const Matrix& in = x.value();
  const Index d = in.rows();
  if (gain.rows() != d || bias.rows() != d || gain.cols() != 1 || bias.cols() != 1)
    throw std::invalid_argument("layer_norm: gain/bias must be columns of the input height");
  Matrix xhat(d, in.cols());
  Vector inv_std(in.cols());
  for (Index c = 0; c < in.cols(); ++c) {
    const double mu = in.col(c).mean();
    const double var = (in.col(c).array() - mu).square().mean();
    inv_std(c) = 1.0 / std::sqrt(var + eps);
    xhat.col(c) = ((in.col(c).array() - mu) * inv_std(c)).matrix();
  }
  Matrix y = (gain.value().col(0).asDiagonal() * xhat).colwise() + bias.value().col(0);
  return g.emplace(std::move(y), {x.id(), gain.id(), bias.id()},
                   [xhat = std::move(xhat), inv_std = std::move(inv_std)](Graph& g, int self) {
                     const Matrix& up = g.upstream(self);
                     const int ix = g.arg(self, 0);
                     const int ig = g.arg(self, 1);
                     const int ib = g.arg(self, 2);
                     const Matrix& gamma = g.value_of(ig);
                     g.grad_of(ig) += up.cwiseProduct(xhat).rowwise().sum();
                     g.grad_of(ib) += up.rowwise().sum();
                     const Matrix dxhat = gamma.col(0).asDiagonal() * up;
                     Matrix& dx = g.grad_of(ix);
                     const double n = static_cast<double>(xhat.rows());
                     for (Index c = 0; c < xhat.cols(); ++c) {
                       const double mean_d = dxhat.col(c).mean();
                       const double mean_dx = dxhat.col(c).dot(xhat.col(c)) / n;
                       dx.col(c).array() +=
                           inv_std(c) * (dxhat.col(c).array() - mean_d - xhat.col(c).array() * mean_dx);
                     }
                   });
}

Expr pick(Expr a, Index row, Index col) {
  if (row < 0 || row >= a.rows() || col < 0 || col >= a.cols()) throw std::out_of_range("pick index out of range");
  return a.graph()->emplace(Matrix::Constant(1, 1, a.value()(row, col)), {a.id()}, [row, col](Graph& g, int self) {
    g.grad_of(g.arg(self, 0))(row, col) += g.upstream(self)(0, 0);
  });
}

Expr slice_rows(Expr a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw std::out_of_range("slice_rows out of range");
  return a.graph()->emplace(a.value().middleRows(start, count), {a.id()}, [start, count](Graph& g, int self) {
    g.grad_of(g.arg(self, 0)).middleRows(start, count) += g.upstream(self);
  });
}

Expr slice_cols(Expr a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw std::out_of_range("slice_cols out of range");
  return a.graph()->emplace(a.value().middleCols(start, count), {a.id()}, [start, count](Graph& g, int self) {
    g.grad_of(g.arg(self, 0)).middleCols(start, count) += g.upstream(self);
  });
}

Expr gather_rows(Expr a, std::span<const Index> rows) {
  Matrix out(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (rows[k] < 0 || rows[k] >= a.rows()) throw std::out_of_range("gather_rows index out of range");
    out.row(static_cast<Index>(k)) = a.value().row(rows[k]);
  }
  return a.graph()->emplace(std::move(out), {a.id()},
                            [idx = std::vector<Index>(rows.begin(), rows.end())](Graph& g, int self) {
                              const Matrix& up = g.upstream(self);
                              Matrix& dx = g.grad_of(g.arg(self, 0));
                              for (std::size_t k = 0; k < idx.size(); ++k) dx.row(idx[k]) += up.row(static_cast<Index>(k));
                            });
}

Expr gather_cols(Expr a, std::span<const Index> cols) {
  Matrix out(a.rows(), static_cast<Index>(cols.size()));
  for (std::size_t k = 0; k < cols.size(); ++k) {
    if (cols[k] < 0 || cols[k] >= a.cols()) throw std::out_of_range("gather_cols index out of range");
    out.col(static_cast<Index>(k)) = a.value().col(cols[k]);
  }
  return a.graph()->emplace(std::move(out), {a.id()},
                            [idx = std::vector<Index>(cols.begin(), cols.end())](Graph& g, int self) {
                              const Matrix& up = g.upstream(self);
                              Matrix& dx = g.grad_of(g.arg(self, 0));
                              for (std::size_t k = 0; k < idx.size(); ++k) dx.col(idx[k]) += up.col(static_cast<Index>(k));
                            });
}

Expr concat_rows(std::span<const Expr> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows of nothing");
  if (parts.size() == 1) return parts[0];
  Graph* g = parts[0].graph();
  const Index cols = parts[0].cols();
  Index rows = 0;
  std::vector<int> args;
  for (const Expr& p : parts) {
    if (p.graph() != g) throw std::logic_error("operands belong to different graphs");
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column count mismatch");
    rows += p.rows();
    args.push_back(p.id());
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const Expr& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return g->emplace(std::move(out), std::move(args), [](Graph& g, int self) {
    const Matrix& up = g.upstream(self);
    Index at = 0;
    for (std::size_t k = 0; k < g.arg_count(self); ++k) {
      const int id = g.arg(self, k);
      const Index r = g.value_of(id).rows();
      g.grad_of(id) += up.middleRows(at, r);
      at += r;
    }
  });
}

Expr concat_cols(std::span<const Expr> parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols of nothing");
  if (parts.size() == 1) return parts[0];
  Graph* g = parts[0].graph();
  const Index rows = parts[0].rows();
  Index cols = 0;
  std::vector<int> args;
  for (const Expr& p : parts) {
    if (p.graph() != g) throw std::logic_error("operands belong to different graphs");
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row count mismatch");
    cols += p.cols();
    args.push_back(p.id());
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (const Expr& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return g->emplace(std::move(out), std::move(args), [](Graph& g, int self) {
    const Matrix& up = g.upstream(self);
    Index at = 0;
    for (std::size_t k = 0; k < g.arg_count(self); ++k) {
      const int id = g.arg(self, k);
      const Index c = g.value_of(id).cols();
      g.grad_of(id) += up.middleCols(at, c);
      at += c;
    }
  });
}

Expr concat_rows(std::initializer_list<Expr> parts) { return concat_rows(std::span<const Expr>(parts.begin(), parts.size())); }
Expr concat_cols(std::initializer_list<Expr> parts) { return concat_cols(std::span<const Expr>(parts.begin(), parts.size())); }

Expr sum_all(Expr a) {
  return a.graph()->emplace(Matrix::Constant(1, 1, a.value().sum()), {a.id()}, [](Graph& g, int self) {
    g.grad_of(g.arg(self, 0)).array() += g.upstream(self)(0, 0);
  });
}

Expr sum_cols(Expr a) {
  return a.graph()->emplace(a.value().rowwise().sum(), {a.id()}, [](Graph& g, int self) {
    g.grad_of(g.arg(self, 0)).colwise() += g.upstream(self).col(0);
  });
}

Expr mean_cols(Expr a) {
  if (a.cols() == 0) throw std::invalid_argument("mean over zero columns");
  const double inv = 1.0 / static_cast<double>(a.cols());
  return a.graph()->emplace(a.value().rowwise().mean(), {a.id()}, [inv](Graph& g, int self) {
    g.grad_of(g.arg(self, 0)).colwise() += g.upstream(self).col(0) * inv;
  });
}

Expr max_cols(Expr a) {
  const Matrix& x = a.value();
  if (x.cols() == 0) throw std::invalid_argument("max over zero columns");
  Matrix out(x.rows(), 1);
  std::vector<Index> argmax(static_cast<std::size_t>(x.rows()));
  for (Index r = 0; r < x.rows(); ++r) {
    Index best = 0;
    for (Index c = 1; c < x.cols(); ++c)
      if (x(r, c) > x(r, best)) best = c;
    argmax[static_cast<std::size_t>(r)] = best;
    out(r, 0) = x(r, best);
  }
  return a.graph()->emplace(std::move(out), {a.id()}, [argmax = std::move(argmax)](Graph& g, int self) {
    const Matrix& up = g.upstream(self);
    Matrix& dx = g.grad_of(g.arg(self, 0));
    for (std::size_t r = 0; r < argmax.size(); ++r) dx(static_cast<Index>(r), argmax[r]) += up(static_cast<Index>(r), 0);
  });
}

}  // namespace hcscl::ad
