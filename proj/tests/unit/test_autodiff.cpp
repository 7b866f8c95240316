// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "../test_util.hpp"
#include "sara/autodiff.hpp"
#include "sara/mask.hpp"

using namespace sara;
using sara::testing::numeric_grad;
using sara::testing::random_tensor;
using sara::testing::rel_error;

namespace {

// Builds loss = mse(op(leaf, other), target) and checks d/dleaf.
void check_unary_path(const std::function<NodeId(Graph&, NodeId)>& build, const Tensor& x, const Shape& out_shape,
                      std::uint64_t seed) {
  Rng rng = Rng::stream(seed, "target");
  const Tensor target = random_tensor(out_shape, rng);
  auto loss_of = [&](const Tensor& v) {
    Graph g;
    const NodeId out = build(g, g.leaf(v));
    return g.value(g.mse(out, g.input(target))).item();
  };
  Graph g;
  const NodeId leaf = g.leaf(x);
  const NodeId loss = g.mse(build(g, leaf), g.input(target));
  const Gradients grads = g.backward(loss);
  CHECK(rel_error(grads.at(leaf), numeric_grad(loss_of, x)) < 1e-7);
}

}  // namespace

TEST_CASE("each op's gradient matches central differences") {
  const auto seed = GENERATE(range(0, 50));
  Rng rng = Rng::stream(static_cast<std::uint64_t>(seed), "ops");
  const Tensor a = random_tensor({3, 4}, rng);
  const Tensor b = random_tensor({4, 5}, rng);
  const Tensor bt = random_tensor({5, 4}, rng);
  const Tensor row = random_tensor({4}, rng);
  const Tensor c = random_tensor({3, 2}, rng);

  SECTION("matmul lhs and rhs") {
    check_unary_path([&](Graph& g, NodeId x) { return g.matmul(x, g.input(b)); }, a, {3, 5}, 1);
    check_unary_path([&](Graph& g, NodeId x) { return g.matmul(g.input(a), x); }, b, {3, 5}, 2);
  }
  SECTION("matmul with transposed rhs") {
    check_unary_path([&](Graph& g, NodeId x) { return g.matmul(x, g.input(bt), true); }, a, {3, 5}, 3);
    check_unary_path([&](Graph& g, NodeId x) { return g.matmul(g.input(a), x, true); }, bt, {3, 5}, 4);
  }
  SECTION("broadcast add reduces over rows") {
    check_unary_path([&](Graph& g, NodeId x) { return g.add(g.input(a), x); }, row, {3, 4}, 5);
    check_unary_path([&](Graph& g, NodeId x) { return g.add(x, g.input(row)); }, a, {3, 4}, 6);
  }
  SECTION("mul, silu, scale") {
    check_unary_path([&](Graph& g, NodeId x) { return g.mul(x, g.input(a)); }, a, {3, 4}, 7);
    check_unary_path([&](Graph& g, NodeId x) { return g.mul(x, x); }, a, {3, 4}, 8);
    check_unary_path([&](Graph& g, NodeId x) { return g.silu(x); }, a, {3, 4}, 9);
    check_unary_path([&](Graph& g, NodeId x) { return g.scale(x, -2.5); }, a, {3, 4}, 10);
  }
  SECTION("concat splits the gradient") {
    check_unary_path([&](Graph& g, NodeId x) { return g.concat(x, g.input(c)); }, a, {3, 6}, 11);
    check_unary_path([&](Graph& g, NodeId x) { return g.concat(g.input(a), x); }, c, {3, 6}, 12);
  }
  SECTION("mse w.r.t. both arguments") {
    const Tensor t = random_tensor({3, 4}, rng);
    auto f = [&](const Tensor& v) {
      Graph g;
      return g.value(g.mse(g.input(t), g.leaf(v))).item();
    };
    Graph g;
    const NodeId leaf = g.leaf(a);
    const auto grads = g.backward(g.mse(g.input(t), leaf));
    CHECK(rel_error(grads.at(leaf), numeric_grad(f, a)) < 1e-7);
  }
}

TEST_CASE("hand examples") {
  Graph g;
  const NodeId a = g.input(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  CHECK(g.value(g.matmul(a, g.input(Tensor::identity(2)))) == Tensor::matrix(2, 2, {1, 2, 3, 4}));
  CHECK(g.value(g.mse(g.input(Tensor({2}, {1, 2})), g.input(Tensor({2}, {1, 2})))).item() == 0.0);
  CHECK(silu(50.0) == Catch::Approx(50.0));

  Graph h;
  const NodeId w = h.leaf(Tensor::matrix(1, 1, {2.0}));
  const NodeId loss = h.mse(h.matmul(w, h.input(Tensor::matrix(1, 1, {1.0}))), h.input(Tensor::matrix(1, 1, {0.0})));
  CHECK(h.backward(loss).at(w).item() == 4.0);
}

TEST_CASE("two-layer MLP gradients match finite differences") {
  Rng rng = Rng::stream(21, "mlp");
  const Tensor x = random_tensor({6, 3}, rng);
  const Tensor y = random_tensor({6, 2}, rng);
  const std::vector<Tensor> init{random_tensor({5, 3}, rng), random_tensor({5}, rng), random_tensor({2, 5}, rng),
                                 random_tensor({2}, rng)};
  auto forward = [&](Graph& g, const std::vector<NodeId>& p) {
    const NodeId h = g.silu(g.add(g.matmul(g.input(x), p[0], true), p[1]));
    return g.mse(g.add(g.matmul(h, p[2], true), p[3]), g.input(y));
  };
  Graph g;
  std::vector<NodeId> leaves;
  for (const auto& t : init) leaves.push_back(g.leaf(t));
  const auto grads = g.backward(forward(g, leaves));
  for (std::size_t k = 0; k < init.size(); ++k) {
    Tensor fd(init[k].shape());
    for (std::size_t i = 0; i < init[k].size(); ++i) {
      const double h = 1e-5 * std::max(1.0, std::abs(init[k][i]));
      auto eval = [&](double delta) {
        std::vector<Tensor> p = init;
        p[k][i] += delta;
        Graph gg;
        std::vector<NodeId> ids;
        for (const auto& t : p) ids.push_back(gg.leaf(t));
        return gg.value(forward(gg, ids)).item();
      };
      fd[i] = (eval(h) - eval(-h)) / (2 * h);
    }
    CHECK(rel_error(grads.at(leaves[k]), fd) < 1e-6);
  }
}

TEST_CASE("backward is deterministic") {
  auto run = [] {
    Rng rng = Rng::stream(9, "det");
    Graph g;
    const NodeId w = g.leaf(random_tensor({4, 3}, rng));
    const NodeId x = g.input(random_tensor({5, 3}, rng));
    const auto grads = g.backward(g.mse(g.silu(g.matmul(x, w, true)), g.input(random_tensor({5, 4}, rng))));
    return std::make_pair(grads.at(w), grads.report);
  };
  CHECK(run() == run());
}

TEST_CASE("silu matches its definition") {
  CHECK(silu(0.0) == 0.0);
  CHECK(silu(2.0) == Catch::Approx(2.0 / (1.0 + std::exp(-2.0))).epsilon(1e-15));
  CHECK(silu(-800.0) == Catch::Approx(0.0).margin(1e-300));
}

TEST_CASE("unstructural mapping scatters values and gathers gradients") {
  Rng rng = Rng::stream(3, "um");
  const Tensor frozen = random_tensor({4, 5}, rng);
  const Tensor x = random_tensor({6, 5}, rng);
  const Tensor target = random_tensor({6, 4}, rng);
  std::vector<bool> bits(20, false);
  for (std::size_t i : {1u, 4u, 7u, 12u, 19u}) bits[i] = true;
  auto mask = std::make_shared<const MatrixMask>(Shape{4, 5}, bits);
  const Tensor learn = random_tensor({5}, rng);

  Graph g;
  const NodeId leaf = g.leaf(learn);
  const NodeId w = g.unstructural_map(frozen, leaf, mask);
  const Tensor wv = g.value(w);
  REQUIRE(wv == scatter(frozen, learn.data(), *mask));
  for (std::size_t i = 0; i < 20; ++i)
    if (!bits[i]) CHECK(wv[i] == frozen[i]);
  const auto grads_um = g.backward(g.mse(g.matmul(g.input(x), w, true), g.input(target)));

  // Reference: the full matrix as a leaf, gradient gathered at the mask.
  Graph full;
  const NodeId pl = full.leaf(wv);
  const auto grads_full = full.backward(full.mse(full.matmul(full.input(x), pl, true), full.input(target)));
  CHECK(grads_um.at(leaf) == gather(grads_full.at(pl), *mask));

  auto f = [&](const Tensor& v) {
    Graph h;
    const NodeId m = h.unstructural_map(frozen, h.leaf(v), mask);
    return h.value(h.mse(h.matmul(h.input(x), m, true), h.input(target))).item();
  };
  CHECK(rel_error(grads_um.at(leaf), numeric_grad(f, learn)) < 1e-7);
}

TEST_CASE("gather and unstructural mapping hand examples") {
  const Tensor p = Tensor::matrix(2, 2, {1, 2, 3, 4});
  auto m = std::make_shared<const MatrixMask>(Shape{2, 2}, std::vector<bool>{false, true, true, false});
  CHECK(gather(p, *m) == Tensor({2}, {2, 3}));
  CHECK(gather(p, MatrixMask::all({2, 2}, false)).size() == 0);

  Graph g;
  CHECK(g.value(g.unstructural_map(p, g.leaf(Tensor({2}, {20, 30})), m)) == Tensor::matrix(2, 2, {1, 20, 30, 4}));

  Graph e;
  auto none = std::make_shared<const MatrixMask>(MatrixMask::all({2, 2}, false));
  const NodeId leaf = e.leaf(Tensor({0}));
  const NodeId w = e.unstructural_map(p, leaf, none);
  CHECK(e.value(w) == p);
  const auto grads = e.backward(e.mse(w, e.input(Tensor({2, 2}))));
  CHECK(grads.report.param_grad_bytes() == 0);
}

TEST_CASE("unstructural mapping rejects mismatched shapes") {
  Graph g;
  auto mask = std::make_shared<const MatrixMask>(MatrixMask::all({2, 2}, true));
  CHECK_THROWS_AS(g.unstructural_map(Tensor({2, 3}), g.leaf(Tensor({4})), mask), ShapeError);
  CHECK_THROWS_AS(g.unstructural_map(Tensor({2, 2}), g.leaf(Tensor({3})), mask), ShapeError);
}

TEST_CASE("only leaf gradients are retained") {
  Rng rng = Rng::stream(5, "retain");
  const Tensor frozen = random_tensor({8, 6}, rng);
  std::vector<bool> bits(48, false);
  for (std::size_t i = 0; i < 48; i += 5) bits[i] = true;
  auto mask = std::make_shared<const MatrixMask>(Shape{8, 6}, bits);

  for (DType dt : {DType::f64, DType::f32}) {
    Graph g(dt);
    const NodeId leaf = g.leaf(gather(frozen, *mask));
    const NodeId w = g.unstructural_map(frozen, leaf, mask);
    const NodeId bias = g.parameter(random_tensor({8}, rng));
    const NodeId x = g.input(random_tensor({3, 6}, rng));
    const NodeId y = g.silu(g.add(g.matmul(x, w, true), bias));
    const auto grads = g.backward(g.mse(y, g.input(Tensor({3, 8}))));
    const auto& rep = grads.report;
    CHECK(rep.leaf_grad_bytes.size() == 1);
    CHECK(rep.param_grad_bytes() == mask->popcount() * elem_size(dt));
    CHECK(grads.by_leaf.size() == 1);
    CHECK(rep.transient_grad_bytes > 0);
    CHECK(rep.saved_activation_bytes > 0);
    CHECK(rep.peak_retained_bytes >= rep.param_grad_bytes());
  }
}

TEST_CASE("saved activations are released by backward") {
  Graph g;
  const NodeId x = g.input(Tensor::matrix(1, 2, {1.0, -1.0}));
  const NodeId w = g.leaf(Tensor::matrix(2, 2, {1.0, 2.0, 3.0, 4.0}));
  const NodeId h = g.silu(g.matmul(x, w));
  const NodeId loss = g.mse(h, g.input(Tensor({1, 2})));
  g.backward(loss);
  CHECK_THROWS(g.value(h));
  CHECK_NOTHROW(g.value(w));
  CHECK_THROWS(g.backward(loss));
}

TEST_CASE("backward requires a scalar loss") {
  Graph g;
  const NodeId w = g.leaf(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  CHECK_THROWS_AS(g.backward(g.scale(w, 2.0)), ShapeError);
}

TEST_CASE("leaves off the loss path get zero gradients") {
  Graph g;
  const NodeId used = g.leaf(Tensor::matrix(1, 2, {1, 2}));
  const NodeId unused = g.leaf(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  const auto grads = g.backward(g.mse(used, g.input(Tensor({1, 2}))));
  CHECK(grads.at(unused) == Tensor({2, 2}));
  CHECK(grads.at(used) == Tensor::matrix(1, 2, {1.0, 2.0}));
}

TEST_CASE("non-finite values raise NumericError") {
  Graph g;
  const NodeId a = g.leaf(Tensor::matrix(1, 1, {1e300}));
  CHECK_THROWS_AS(g.mul(a, a), NumericError);
  CHECK_THROWS_AS(g.leaf(Tensor::matrix(1, 1, {std::nan("")})), NumericError);
}

TEST_CASE("shape errors are reported") {
  Graph g;
  const NodeId a = g.leaf(Tensor({2, 3}));
  const NodeId b = g.leaf(Tensor({2, 3}));
  CHECK_THROWS_AS(g.matmul(a, b), ShapeError);
  CHECK_THROWS_AS(g.add(a, g.leaf(Tensor({2}))), ShapeError);
  CHECK_THROWS_AS(g.concat(a, g.leaf(Tensor({3, 1}))), ShapeError);
}

TEST_CASE("tags attribute saved bytes") {
  Graph g;
  const NodeId x = g.input(Tensor({4, 3}));
  const NodeId w = g.leaf(Tensor({2, 3}));
  NodeId y;
  {
    TagScope scope(g, "adapter");
    y = g.silu(g.matmul(x, w, true));
  }
  CHECK(g.tag().empty());
  const auto grads = g.backward(g.mse(y, g.input(Tensor({4, 2}))));
  CHECK(grads.report.tagged_bytes("adapter") > 0);
  CHECK(grads.report.tagged_bytes("adapter") <= grads.report.saved_activation_bytes);
}

TEST_CASE("custom nodes route gradients to their inputs") {
  Graph g;
  const NodeId a = g.leaf(Tensor::matrix(1, 2, {3.0, 4.0}));
  const NodeId s = g.custom(
      "sum_sq", {a}, Tensor::scalar(25.0),
      [&](const Tensor& go) {
        Tensor d = Tensor::matrix(1, 2, {6.0, 8.0});
        for (double& v : d.data()) v *= go.item();
        return std::vector<Tensor>{d};
      },
      16);
  const auto grads = g.backward(g.scale(s, 0.5));
  CHECK(grads.at(a) == Tensor::matrix(1, 2, {3.0, 4.0}));
}
