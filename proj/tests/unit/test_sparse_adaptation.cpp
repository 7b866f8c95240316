// SPDX-License-Identifier: Apache-2.0
#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>

#include "../test_util.hpp"
#include "sara/baselines.hpp"
#include "sara/optimizer.hpp"
#include "sara/sparse_adaptation.hpp"
#include "sara/workload.hpp"

using namespace sara;
using sara::testing::random_tensor;

namespace {

ParamStore single(const std::string& name, Tensor t) {
  ParamStore p;
  p.add(name, std::move(t));
  return p;
}

std::vector<bool> mask_bits(const SparseMask& m, const std::string& name) { return m.at(name).bits(); }

bool bitwise_equal(double a, double b) { return std::bit_cast<std::uint64_t>(a) == std::bit_cast<std::uint64_t>(b); }

struct Toy {
  DiffusionSchedule schedule;
  ParamStore p0;
  Tensor data;
};

Toy toy(std::uint64_t seed) {
  Rng init = Rng::stream(seed, "init");
  Rng data = Rng::stream(seed, "data");
  Toy t{DiffusionSchedule(), init_denoiser(DenoiserSpec{}, init), {}};
  t.data = MixtureDataset::make(DatasetConfig{}, Domain::target).draw(256, data);
  return t;
}

}  // namespace

TEST_CASE("compute_mask selects |p| < θ strictly") {
  const ParamStore p0 = single("w", Tensor::matrix(2, 2, {0.5, -0.0005, 0.002, 0.0}));
  const SparseMask m = compute_mask(p0, 1e-3);
  CHECK(mask_bits(m, "w") == std::vector<bool>{false, true, false, true});
  CHECK(m.popcount() == 2);
  CHECK(m.fraction() == 0.5);
  CHECK(m.threshold() == 1e-3);

  SECTION("equal to θ is frozen") {
    CHECK(mask_bits(compute_mask(p0, 0.002), "w") == std::vector<bool>{false, true, false, true});
  }
  SECTION("errors") {
    CHECK_THROWS_WITH(compute_mask(single("w", Tensor::matrix(1, 2, {0.5, 0.7})), 0.1),
                      Catch::Matchers::ContainsSubstring("threshold selects zero parameters"));
    CHECK_THROWS(compute_mask(p0, 0.0));
  }
  SECTION("1-D tensors are not eligible") {
    ParamStore p = p0;
    p.add("b", Tensor({2}, {0.0, 0.0}));
    const SparseMask mb = compute_mask(p, 1e-3);
    CHECK(mb.entries().size() == 1);
    CHECK(mb.find("b") == nullptr);
  }
}

TEST_CASE("compute_mask matches a quantile oracle") {
  Rng rng = Rng::stream(1, "quantile");
  const Tensor t = random_tensor({25, 40}, rng);
  std::vector<double> mags;
  for (double v : t.data()) mags.push_back(std::abs(v));
  std::sort(mags.begin(), mags.end());
  const double theta = 0.5 * (mags[99] + mags[100]);
  CHECK(compute_mask(single("w", t), theta).popcount() == 100);
}

TEST_CASE("budget selection") {
  SECTION("hand example") {
    const ParamStore p = single("w", Tensor::matrix(2, 2, {3, 1, 2, 0.5}));
    CHECK(mask_bits(compute_mask_by_budget(p, 2), "w") == std::vector<bool>{false, true, false, true});
    CHECK(mask_bits(select_largest(p, 2), "w") == std::vector<bool>{true, false, true, false});
    CHECK(compute_mask_by_budget(p, 4).popcount() == 4);
    CHECK_THROWS(compute_mask_by_budget(p, 0));
    CHECK_THROWS(compute_mask_by_budget(p, 5));
    CHECK(compute_mask_by_budget(p, 2).threshold() == 2.0);
  }
  SECTION("matches a full sort with ties broken by (name, index)") {
    Rng rng = Rng::stream(2, "budget");
    ParamStore p;
    Tensor a = random_tensor({50, 100}, rng);
    Tensor b = random_tensor({40, 125}, rng);
    // Quantize to create ties across and within matrices.
    for (double& v : a.data()) v = std::round(v * 50.0) / 50.0;
    for (double& v : b.data()) v = std::round(v * 50.0) / 50.0;
    p.add("z.weight", a);
    p.add("a.weight", b);
    struct Key {
      double mag;
      std::string name;
      std::size_t idx;
    };
    std::vector<Key> keys;
    for (const auto& [name, t] : p)
      for (std::size_t i = 0; i < t.size(); ++i) keys.push_back({std::abs(t[i]), name, i});
    std::sort(keys.begin(), keys.end(), [](const Key& x, const Key& y) {
      return std::tie(x.mag, x.name, x.idx) < std::tie(y.mag, y.name, y.idx);
    });
    const std::size_t k = 3210;
    const SparseMask m = compute_mask_by_budget(p, k);
    REQUIRE(m.popcount() == k);
    for (std::size_t q = 0; q < keys.size(); ++q) CHECK(m.at(keys[q].name).test(keys[q].idx) == (q < k));
  }
}

TEST_CASE("random selection is seeded and exact") {
  Rng rng = Rng::stream(3, "random");
  const ParamStore p = single("w", random_tensor({20, 30}, rng));
  CHECK(select_random(p, 77, 5) == select_random(p, 77, 5));
  CHECK_FALSE(select_random(p, 77, 5) == select_random(p, 77, 6));
  for (std::uint64_t seed = 0; seed < 100; ++seed) CHECK(select_random(p, 1 + seed * 5, seed).popcount() == 1 + seed * 5);
  CHECK(full_mask(p).popcount() == 600);
}

TEST_CASE("adamw step") {
  AdamWConfig hp;
  hp.weight_decay = 0.0;
  SECTION("first bias-corrected step moves by lr") {
    OptimizerState s(1, hp);
    s.lr = 0.1;
    std::vector<double> p{0.0};
    const std::vector<double> g{1.0};
    adamw_step(s, p, g);
    CHECK(p[0] == Catch::Approx(-0.1).epsilon(1e-7));
    CHECK(s.t == 1);
  }
  SECTION("zero gradient without decay leaves p unchanged") {
    OptimizerState s(2, hp);
    std::vector<double> p{0.3, -2.0};
    adamw_step(s, p, std::vector<double>{0.0, 0.0});
    CHECK(p == std::vector<double>{0.3, -2.0});
  }
  SECTION("zero gradient with decay is pure decay") {
    AdamWConfig wd;
    wd.weight_decay = 0.1;
    OptimizerState s(1, wd);
    s.lr = 0.01;
    std::vector<double> p{2.0};
    adamw_step(s, p, std::vector<double>{0.0});
    CHECK(p[0] == Catch::Approx(2.0 * (1 - 0.01 * 0.1)).epsilon(1e-15));
  }
  SECTION("errors") {
    OptimizerState s(1, hp);
    std::vector<double> p{0.0};
    CHECK_THROWS(adamw_step(s, p, std::vector<double>{std::nan("")}));
    CHECK_THROWS(adamw_step(s, p, std::vector<double>{1.0, 2.0}));
  }
}

TEST_CASE("adaptive learning rate") {
  CHECK(adaptive_lr(0.0) == 1e-3);
  CHECK(adaptive_lr(1e-2) >= 2.9e-5);
  CHECK(adaptive_lr(1e-2) <= 3.1e-5);
  CHECK(adaptive_lr(1e-2) == Catch::Approx(3.02e-5).epsilon(1e-3));
  for (double t = 0.0; t < 0.05; t += 1e-3) CHECK(adaptive_lr(t + 1e-3) < adaptive_lr(t));
  CHECK_THROWS(adaptive_lr(-1.0));
  CHECK(cosine_lr(1.0, 0, 100) == 1.0);
  CHECK(cosine_lr(1.0, 50, 100) == Catch::Approx(0.5));
  CHECK(cosine_lr(1.0, 100, 100) == Catch::Approx(0.0).margin(1e-16));
}

TEST_CASE("sara_step keeps frozen entries bitwise and retains popcount gradients") {
  Toy t = toy(4);
  const SparseMask m0 = compute_mask(t.p0, 2e-2);
  SessionConfig cfg;
  cfg.lambda_rank = 1e-2;
  cfg.total_iterations = 20;
  SaraSession s(t.p0, m0, cfg);
  Rng batches = Rng::stream(4, "batches");
  for (int k = 0; k < 20; ++k) {
    const Batch b = sample_batch(t.data, 32, t.schedule, 16, batches);
    const std::size_t trainable = s.mask().popcount();
    const MetricsRecord rec = sara_step(s, denoiser_task(b), 1e-3);
    CHECK(rec.grad_bytes == trainable * 8);
    CHECK(rec.step == static_cast<std::size_t>(k + 1));
    if (k == 0) CHECK(rec.rank_loss == 0.0);
  }
  CHECK(s.mask().is_subset_of(s.initial_mask()));
  bool moved = false;
  for (const auto& [name, value] : t.p0) {
    const Tensor& live = s.params().at(name);
    auto mask = s.initial_mask().find(name);
    for (std::size_t i = 0; i < value.size(); ++i) {
      if (mask && mask->test(i)) {
        moved = moved || live[i] != value[i];
        continue;
      }
      CHECK(bitwise_equal(live[i], value[i]));
    }
  }
  CHECK(moved);
  CHECK(s.pretrained() == t.p0);
}

TEST_CASE("sara_step and naive selective step agree with no rank loss") {
  Toy t = toy(5);
  const SparseMask m0 = compute_mask(t.p0, 1e-2);
  SessionConfig cfg;
  cfg.total_iterations = 100;
  cfg.progressive_iteration = 50;
  SaraSession a(t.p0, m0, cfg), b(t.p0, m0, cfg);
  Rng ra = Rng::stream(5, "batches"), rb = Rng::stream(5, "batches");
  for (int k = 0; k < 100; ++k) {
    const Batch ba = sample_batch(t.data, 32, t.schedule, 16, ra);
    const Batch bb = sample_batch(t.data, 32, t.schedule, 16, rb);
    const auto rec_a = sara_step(a, denoiser_task(ba), 1e-3);
    const auto rec_b = naive_selective_step(b, denoiser_task(bb), 1e-3);
    CHECK(rec_b.grad_bytes == t.p0.eligible_count() * 8);
    CHECK(rec_a.task_loss == rec_b.task_loss);
  }
  CHECK(a.trainable() == b.trainable());
  CHECK(a.mask() == b.mask());
  CHECK(a.optimizer() == b.optimizer());
}

TEST_CASE("progressive readjustment") {
  const double theta = 1.0;
  const ParamStore p0 = single("w", Tensor::matrix(2, 4, {0.1, 0.2, 0.3, 0.4, 0.5, 5.0, 6.0, 7.0}));
  const SparseMask m0 = compute_mask(p0, theta);
  REQUIRE(m0.popcount() == 5);
  SessionConfig cfg;
  cfg.total_iterations = 10;

  auto resumed = [&](std::vector<double> learn_values) {
    ParamStore live = p0;
    for (std::size_t q = 0; q < 5; ++q) live.at("w")[m0.at("w").indices()[q]] = learn_values[q];
    OptimizerState opt(5, cfg.adamw);
    opt.m = {1.0, 2.0, 3.0, 4.0, 5.0};
    opt.v = {10.0, 20.0, 30.0, 40.0, 50.0};
    opt.t = 7;
    return SaraSession(p0, live, m0, m0, opt, 5, cfg);
  };

  SECTION("five-entry example keeps {0, 2, 4}") {
    SaraSession s = resumed({0.5 * theta, 2 * theta, 0.1 * theta, 3 * theta, 0.9 * theta});
    const SparseMask& m = progressive_readjust(s);
    CHECK(m.at("w").indices() == std::vector<std::uint32_t>{0, 2, 4});
    CHECK(m.is_subset_of(s.initial_mask()));
    CHECK(s.trainable() == std::vector<double>{0.5, 0.1, 0.9});
    CHECK(s.optimizer().m == std::vector<double>{1.0, 3.0, 5.0});
    CHECK(s.optimizer().v == std::vector<double>{10.0, 30.0, 50.0});
    CHECK(s.optimizer().t == 7);
  }
  SECTION("all survivors is a no-op") {
    SaraSession s = resumed({0.1, 0.2, 0.3, 0.4, 0.5});
    const auto before = s.optimizer();
    progressive_readjust(s);
    CHECK(s.mask() == m0);
    CHECK(s.optimizer() == before);
  }
  SECTION("empty reselection keeps the previous mask") {
    SaraSession s = resumed({2.0, 2.0, 2.0, 2.0, 2.0});
    progressive_readjust(s);
    CHECK(s.mask() == m0);
    CHECK(s.trainable().size() == 5);
  }
  SECTION("readjustment fires at the configured steps") {
    SessionConfig c = cfg;
    c.total_iterations = 100;
    SaraSession s(p0, m0, c);
    CHECK(s.readjust_steps() == std::vector<std::size_t>{50});
    c.progressive_iteration = 40;
    c.readjust_events = 3;
    CHECK(SaraSession(p0, m0, c).readjust_steps() == std::vector<std::size_t>{40, 60, 80});
    c.progressive = false;
    CHECK(SaraSession(p0, m0, c).readjust_steps().empty());
  }
}

TEST_CASE("resumed sessions validate their state") {
  const ParamStore p0 = single("w", Tensor::matrix(1, 3, {0.1, 0.2, 3.0}));
  const SparseMask m0 = compute_mask(p0, 1.0);
  SessionConfig cfg;
  CHECK_THROWS(SaraSession(p0, p0, m0, m0, OptimizerState(3, cfg.adamw), 0, cfg));
  const SparseMask bigger = full_mask(p0);
  CHECK_THROWS(SaraSession(p0, p0, m0, bigger, OptimizerState(3, cfg.adamw), 0, cfg));
}
