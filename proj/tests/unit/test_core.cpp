// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "../test_util.hpp"
#include "sara/mask.hpp"
#include "sara/param_store.hpp"
#include "sara/rng.hpp"
#include "sara/tensor.hpp"

using namespace sara;

TEST_CASE("tensor basics") {
  const Tensor a = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  CHECK(a.rows() == 2);
  CHECK(a.cols() == 3);
  CHECK(a(1, 2) == 6.0);
  CHECK(a.transposed() == Tensor::matrix(3, 2, {1, 4, 2, 5, 3, 6}));
  CHECK(matmul(a, a.transposed()) == Tensor::matrix(2, 2, {14, 32, 32, 77}));
  CHECK(frobenius_norm(a) == Catch::Approx(std::sqrt(91.0)));
  CHECK(subtract(a, a) == Tensor({2, 3}));
  CHECK(a.bytes(DType::f32) == 24);
  CHECK(Tensor::scalar(2.5).item() == 2.5);
  CHECK_THROWS(a.item());
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0}), ShapeError);
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
  CHECK(Tensor::identity(2) == Tensor::matrix(2, 2, {1, 0, 0, 1}));
  CHECK_FALSE(Tensor::matrix(1, 1, {INFINITY}).all_finite());
  CHECK(dtype_from_string(to_string(DType::f32)) == DType::f32);
  CHECK_THROWS(dtype_from_string("f16"));
}

TEST_CASE("mask gather and scatter are inverse on the mask") {
  Rng rng = Rng::stream(1, "mask");
  const Tensor p = sara::testing::random_tensor({4, 6}, rng);
  const MatrixMask m = MatrixMask::from_indices({4, 6}, {0, 5, 11, 23});
  CHECK(m.popcount() == 4);
  CHECK(m.test(11));
  CHECK_FALSE(m.test(12));
  const Tensor g = gather(p, m);
  CHECK(g == Tensor({4}, {p[0], p[5], p[11], p[23]}));
  const Tensor frozen({4, 6});
  const Tensor s = scatter(frozen, g.data(), m);
  CHECK(gather(s, m) == g);
  for (std::size_t i = 0; i < 24; ++i)
    if (!m.test(i)) CHECK(s[i] == 0.0);
  CHECK(m.is_subset_of(MatrixMask::all({4, 6}, true)));
  CHECK_FALSE(MatrixMask::all({4, 6}, true).is_subset_of(m));
  CHECK_THROWS(MatrixMask({2, 2}, std::vector<bool>(3)));
  CHECK_THROWS(MatrixMask::from_indices({2, 2}, {4}));
  CHECK_THROWS(scatter(frozen, std::vector<double>(3), m));
}

TEST_CASE("named rng streams are deterministic and independent") {
  Rng a = Rng::stream(42, "init"), b = Rng::stream(42, "init"), c = Rng::stream(42, "data"),
      d = Rng::stream(43, "init");
  const double va = a.normal();
  CHECK(va == b.normal());
  CHECK(va != c.normal());
  CHECK(va != d.normal());

  Rng r = Rng::stream(7, "moments");
  const int n = 200000;
  double s = 0.0, s2 = 0.0, u = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    s += z;
    s2 += z * z;
    u += r.uniform();
  }
  CHECK(std::abs(s / n) < 0.01);
  CHECK(std::abs(s2 / n - 1.0) < 0.01);
  CHECK(std::abs(u / n - 0.5) < 0.005);
  for (int i = 0; i < 1000; ++i) CHECK(r.index(7) < 7);
}

TEST_CASE("param store") {
  ParamStore p;
  p.add("fc1.weight", Tensor({3, 2}));
  p.add("fc1.bias", Tensor({3}));
  CHECK(p.size() == 2);
  CHECK(p.eligible_names() == std::vector<std::string>{"fc1.weight"});
  CHECK(p.eligible_count() == 6);
  CHECK(p.total_count() == 9);
  CHECK_THROWS(p.add("fc1.bias", Tensor({1})));
  CHECK_THROWS(p.at("missing"));
}
