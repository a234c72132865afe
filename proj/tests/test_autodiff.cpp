#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"

#include "hcscl/autodiff.hpp"
#include "hcscl/init.hpp"

#include <random>

using namespace hcscl;
using ad::Expr;
using ad::Matrix;

namespace {

// Random probe weights turn a matrix-valued op into a scalar with generic
// gradients.
Expr probe(ad::Graph& g, Expr e, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return ad::sum_all(ad::cmul(e, g.constant(init::normal(static_cast<int>(e.rows()), static_cast<int>(e.cols()), 1.0, rng))));
}

struct Fixture {
  ad::ParameterStore store;
  std::mt19937_64 rng{1};
  ad::ParamId add(const char* name, int r, int c, double scale = 1.0) {
    return store.add(name, init::normal(r, c, scale, rng));
  }
};

double check(Fixture& f, const std::function<Expr(ad::Graph&)>& fn) {
  return testing::worst(testing::gradient_check(f.store, [&](ad::Graph& g) { return probe(g, fn(g)); }));
}

}  // namespace

TEST_CASE("elementwise and linear ops have correct gradients") {
  Fixture f;
  auto a = f.add("a", 3, 4), b = f.add("b", 3, 4), m = f.add("m", 4, 2), v = f.add("v", 3, 1);
  CHECK(check(f, [&](ad::Graph& g) { return g.param(a) + g.param(b); }) < 1e-6);
  CHECK(check(f, [&](ad::Graph& g) { return g.param(a) - g.param(b); }) < 1e-6);
  CHECK(check(f, [&](ad::Graph& g) { return g.param(a) * g.param(m); }) < 1e-6);
  CHECK(check(f, [&](ad::Graph& g) { return ad::cmul(g.param(a), g.param(b)); }) < 1e-6);
  CHECK(check(f, [&](ad::Graph& g) { return ad::scale(g.param(a), -2.5); }) < 1e-6);
  CHECK(check(f, [&](ad::Graph& g) { return ad::one_minus(g.param(a)); }) < 1e-6);
  CHECK(check(f, [&](ad::Graph& g) { return ad::add_bias(g.param(a), g.param(v)); }) < 1e-6);
  CHECK(check(f, [&](ad::Graph& g) { return ad::scale_rows(g.param(a), g.param(v)); }) < 1e-6);
  CHECK(check(f, [&](ad::Graph& g) { return ad::transpose(g.param(a)); }) < 1e-6);
}

TEST_CASE("nonlinearities have correct gradients") {
  Fixture f;
  auto a = f.add("a", 3, 4);
  CHECK(check(f, [&](ad::Graph& g) { return ad::tanh(g.param(a)); }) < 1e-6);
  CHECK(check(f, [&](ad::Graph& g) { return ad::sigmoid(g.param(a)); }) < 1e-6);
  CHECK(check(f, [&](ad::Graph& g) { return ad::relu(g.param(a)); }) < 1e-6);
  CHECK(check(f, [&](ad::Graph& g) { return ad::softmax_cols(g.param(a)); }) < 1e-6);
  CHECK(check(f, [&](ad::Graph& g) { return ad::log_softmax_cols(g.param(a)); }) < 1e-6);
}

TEST_CASE("layer norm gradients") {
  Fixture f;
  auto x = f.add("x", 5, 3), gain = f.add("gain", 5, 1), bias = f.add("bias", 5, 1);
  CHECK(check(f, [&](ad::Graph& g) { return ad::layer_norm_cols(g.param(x), g.param(gain), g.param(bias)); }) < 1e-5);
}

TEST_CASE("structural ops and reductions have correct gradients") {
  Fixture f;
  auto a = f.add("a", 4, 5), b = f.add("b", 2, 5), c = f.add("c", 4, 2);
  const std::vector<ad::Index> rows{3, 0, 3};
  const std::vector<ad::Index> cols{1, 1, 4, 0};
  CHECK(check(f, [&](ad::Graph& g) { return ad::pick(g.param(a), 2, 3); }) < 1e-6);
  CHECK(check(f, [&](ad::Graph& g) { return ad::slice_rows(g.param(a), 1, 2); }) < 1e-6);
  CHECK(check(f, [&](ad::Graph& g) { return ad::slice_cols(g.param(a), 2, 3); }) < 1e-6);
  CHECK(check(f, [&](ad::Graph& g) { return ad::gather_rows(g.param(a), rows); }) < 1e-6);
  CHECK(check(f, [&](ad::Graph& g) { return ad::gather_cols(g.param(a), cols); }) < 1e-6);
  CHECK(check(f, [&](ad::Graph& g) { return ad::concat_rows({g.param(a), g.param(b)}); }) < 1e-6);
  CHECK(check(f, [&](ad::Graph& g) { return ad::concat_cols({g.param(a), g.param(c)}); }) < 1e-6);
  CHECK(check(f, [&](ad::Graph& g) { return ad::sum_all(g.param(a)); }) < 1e-6);
  CHECK(check(f, [&](ad::Graph& g) { return ad::sum_cols(g.param(a)); }) < 1e-6);
  CHECK(check(f, [&](ad::Graph& g) { return ad::mean_cols(g.param(a)); }) < 1e-6);
  CHECK(check(f, [&](ad::Graph& g) { return ad::max_cols(g.param(a)); }) < 1e-6);
}

TEST_CASE("lookup accumulates sparse row gradients") {
  ad::ParameterStore store;
  auto e = store.add("e", Matrix::Constant(4, 3, 0.5));
  ad::Graph g(&store);
  Expr loss = ad::sum_all(g.lookup(e, 2) + g.lookup(e, 2) + g.lookup(e, 0));
  g.backward(loss);
  ad::Gradients grads(store);
  g.accumulate(grads);
  CHECK(grads[e].row(2).isApprox(Eigen::RowVector3d::Constant(2.0)));
  CHECK(grads[e].row(0).isApprox(Eigen::RowVector3d::Constant(1.0)));
  CHECK(grads[e].row(1).isZero());
  CHECK(grads[e].row(3).isZero());
}

TEST_CASE("values of basic ops") {
  ad::Graph g;
  Matrix m(2, 2);
  m << 1, 2, 3, 4;
  Expr x = g.constant(m);
  CHECK(ad::sum_all(x).scalar() == doctest::Approx(10));
  CHECK(ad::softmax_cols(x).value().colwise().sum().isApprox(Eigen::RowVector2d::Ones()));
  CHECK(ad::max_cols(x).value() == Eigen::Vector2d(2, 4));
  CHECK(ad::mean_cols(x).value() == Eigen::Vector2d(1.5, 3.5));
  Expr ln = ad::layer_norm_cols(x, g.constant(Matrix::Ones(2, 1)), g.constant(Matrix::Zero(2, 1)));
  CHECK(ln.value().colwise().sum().norm() < 1e-12);
}

TEST_CASE("backward requires a scalar and param needs a store") {
  ad::Graph g;
  Expr x = g.constant(Matrix::Ones(2, 1));
  CHECK_THROWS(g.backward(x));
  ad::ParameterStore store;
  store.add("w", Matrix::Ones(1, 1));
  CHECK_THROWS(store.add("w", Matrix::Ones(1, 1)));
  CHECK(store.find("w").has_value());
  CHECK_FALSE(store.find("nope").has_value());
}

TEST_CASE("mismatched shapes are rejected") {
  ad::Graph g;
  Expr a = g.constant(Matrix::Ones(2, 3));
  Expr b = g.constant(Matrix::Ones(2, 2));
  CHECK_THROWS(a + b);
  CHECK_THROWS(a * a);
  CHECK_THROWS(ad::cmul(a, b));
}

TEST_CASE("activation names round-trip") {
  for (auto act : {ad::Activation::kIdentity, ad::Activation::kRelu, ad::Activation::kTanh, ad::Activation::kSigmoid})
    CHECK(ad::parse_activation(ad::activation_name(act)) == act);
  CHECK_THROWS(ad::parse_activation("gelu"));
}
