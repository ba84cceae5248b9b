/*
 * SPDX-FileCopyrightText: Copyright (c) 2026, babverify contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#include "babverify/bound_gnn.hpp"

#include "gradcheck.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>

using namespace babverify;
using babverify::testing::check_gradients;
using babverify::testing::LossProbe;
using babverify::testing::random_box;
using babverify::testing::random_verification;
using babverify::testing::uniform_vector;

namespace {

struct State {
  Network net;
  BoundsStack stack;
  DualState rho;
  InnerSolution inner;
};

State make_state(const std::vector<Index>& hidden, std::uint64_t seed, double radius = 0.3, double jitter = 0.0) {
  State s{Network(random_verification(hidden, 3, seed)), {}, {}, {}};
  s.stack = linear_backward_bounds(s.net, random_box(3, seed, radius));
  s.rho = fastlin_duals(s.net, s.stack);
  std::mt19937_64 rng(seed + 99);
  for (int h = 1; h < s.net.depth(); ++h) s.rho.rho[h] += uniform_vector(s.rho.rho[h].size(), -jitter, jitter, rng);
  s.inner = inner_minimize(s.net, s.stack, s.rho);
  return s;
}

BoundGnnConfig small_config() {
  BoundGnnConfig c;
  c.embedding = 5;
  return c;
}

double relu(double x) { return x > 0.0 ? x : 0.0; }

/// Loop-level restatement of one forward and one backward sweep.
std::vector<Matrix> passes_oracle(const std::vector<Matrix>& mu0, const Network& net, const ParameterSet& params) {
  const int depth = net.depth();
  const Index p = params.at("score").cols();
  std::vector<Matrix> mu = mu0;
  auto weight = [&](int h) -> const Matrix& { return net.layer(static_cast<std::size_t>(h - 1)).weights(); };
  auto bias = [&](int h) -> const Vector& { return net.layer(static_cast<std::size_t>(h - 1)).bias(); };
  auto embedding_of = [&](int h, Index k) -> Vector {
    return (h <= 0 || h >= depth) ? Vector::Zero(p) : Vector(mu[static_cast<std::size_t>(h)].row(k).transpose());
  };
  for (int h = 1; h < depth; ++h) {
    Matrix next(net.width(h), p);
    for (Index j = 0; j < net.width(h); ++j) {
      Vector affine = Vector::Constant(p, bias(h)[j]);
      Vector mean = Vector::Zero(p);
      double count = 0.0;
      for (Index k = 0; k < net.width(h - 1); ++k) {
        affine += weight(h)(j, k) * embedding_of(h - 1, k);
        if (weight(h)(j, k) != 0.0) {
          mean += embedding_of(h - 1, k);
          count += 1.0;
        }
      }
      if (count > 0.0) mean /= count;
      const Vector pre = params.at("fwd.self") * embedding_of(h, j) + params.at("fwd.affine") * affine +
                         params.at("fwd.mean") * mean;
      for (Index c = 0; c < p; ++c) next(j, c) = relu(pre[c]);
    }
    mu[static_cast<std::size_t>(h)] = next;
  }
  for (int h = depth - 1; h >= 1; --h) {
    Matrix next(net.width(h), p);
    for (Index j = 0; j < net.width(h); ++j) {
      Vector back = Vector::Zero(p);
      Vector mean = Vector::Zero(p);
      double count = 0.0;
      for (Index k = 0; k < net.width(h + 1); ++k) {
        back += weight(h + 1)(k, j) * (embedding_of(h + 1, k) - Vector::Constant(p, bias(h + 1)[k]));
        if (weight(h + 1)(k, j) != 0.0) {
          mean += embedding_of(h + 1, k);
          count += 1.0;
        }
      }
      if (count > 0.0) mean /= count;
      const Vector pre = params.at("bwd.self") * embedding_of(h, j) + params.at("bwd.affine") * back +
                         params.at("bwd.mean") * mean;
      for (Index c = 0; c < p; ++c) next(j, c) = relu(pre[c]);
    }
    mu[static_cast<std::size_t>(h)] = next;
  }
  return mu;
}

BoundSample make_sample(std::uint64_t seed) {
  const State s = make_state({4, 3}, seed, 0.3, 0.3);
  BoundSample sample{s.net, s.stack, {}, s.rho, 0.0, 0};
  sample.q_supg = supergradient_ascent(s.net, s.stack, s.rho, 50, 1e-2).best_q;
  return sample;
}

double max_abs_diff(const DualState& a, const DualState& b) { return (a.flat() - b.flat()).cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("bound features") {
  SUBCASE("zero duals with equal copies") {
    DualState rho;
    rho.rho = {Vector(), Vector::Zero(2), Vector()};
    InnerSolution inner;
    inner.zhat_a = {Vector(), Vector::Constant(2, 0.7), Vector()};
    inner.zhat_b = inner.zhat_a;
    const auto f = build_bound_features(rho, inner);
    REQUIRE(f.size() == 2);
    for (Index j = 0; j < 2; ++j) {
      CHECK(f[1](j, 0) == 0.0);
      CHECK(f[1](j, 1) == 0.7);
      CHECK(f[1](j, 2) == 0.7);
      CHECK(f[1](j, 3) == 0.0);
    }
  }
  SUBCASE("fuzz: finite and difference column exact") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const State s = make_state({4, 3}, seed, 0.4, 0.5);
      const auto f = build_bound_features(s.rho, s.inner);
      for (int h = 1; h < s.net.depth(); ++h) {
        CHECK(f[h].allFinite());
        CHECK((f[h].col(3).array() == (f[h].col(2) - f[h].col(1)).array()).all());
        CHECK((f[h].col(0).array() == s.rho.rho[h].array()).all());
      }
    }
  }
  SUBCASE("shape mismatch") {
    const State s = make_state({4}, 1);
    InnerSolution broken = s.inner;
    broken.zhat_b.pop_back();
    CHECK_THROWS_AS(build_bound_features(s.rho, broken), Error);
  }
}

TEST_CASE("neighbour counts") {
  Matrix w1(2, 3);
  w1 << 1, 0, 2, 0, 0, 3;
  Matrix w2(1, 2);
  w2 << 0, 4;
  const Network net({Layer::dense(w1, Vector::Zero(2)), Layer::dense(w2, Vector::Zero(1))});
  const auto c = NeighborCounts::of(net);
  CHECK(c.previous[1][0] == 2.0);
  CHECK(c.previous[1][1] == 1.0);
  CHECK(c.following[1][0] == 0.0);
  CHECK(c.following[1][1] == 1.0);
}

TEST_CASE("bound passes") {
  const State s = make_state({5, 4}, 11);
  const ParameterSet params = create_bound_params(small_config(), 3);
  const auto features = build_bound_features(s.rho, s.inner);
  const auto mu0 = bound_init_embed(features, params);

  SUBCASE("initial embedding is the MLP") {
    Tape t(params);
    const NodeId out = Mlp{"init", 2, false}.apply(t, t.constant(features[2]));
    CHECK((t.value(out) - mu0[2]).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("identity self term on nonnegative embeddings") {
    ParameterSet id = params;
    for (const char* name : {"fwd.affine", "fwd.mean", "bwd.affine", "bwd.mean"}) id.at(name).setZero();
    id.at("fwd.self").setIdentity();
    id.at("bwd.self").setIdentity();
    std::vector<Matrix> mu = mu0;
    for (auto& m : mu) m = m.cwiseAbs();
    const auto out = bound_forward_backward(mu, s.net, id);
    for (int h = 1; h < s.net.depth(); ++h) CHECK((out[h] - mu[h]).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("zero everything gives zero") {
    const Network zero_bias({Layer::dense(s.net.layer(0).weights(), Vector::Zero(5)),
                             Layer::dense(s.net.layer(1).weights(), Vector::Zero(4)),
                             Layer::dense(s.net.layer(2).weights(), Vector::Zero(1))});
    ParameterSet z = params;
    for (const char* name : {"fwd.self", "fwd.mean", "bwd.self", "bwd.mean"}) z.at(name).setZero();
    std::vector<Matrix> mu = mu0;
    for (auto& m : mu) m.setZero();
    const auto out = bound_forward_backward(mu, zero_bias, z);
    for (int h = 1; h < s.net.depth(); ++h) CHECK(out[h].cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("matches loop oracle") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const State st = make_state({4, 6, 3}, 40 + seed, 0.3, 0.2);
      const ParameterSet pr = create_bound_params(small_config(), seed);
      const auto start = bound_init_embed(build_bound_features(st.rho, st.inner), pr);
      const auto expected = passes_oracle(start, st.net, pr);
      const auto got = bound_forward_backward(start, st.net, pr);
      for (int h = 1; h < st.net.depth(); ++h) CHECK((got[h] - expected[h]).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
  SUBCASE("golden direction") {
    const DualState dir = bound_direction(s.net, features, params);
    const Vector flat = dir.flat();
    REQUIRE(flat.size() == 9);
    const double golden[] = {-0.018296519676634749, -0.0020596532131588155, -0.00057220449073101419,
                             -0.038419824874825849, -0.0078527280876411025};
    for (Index i = 0; i < 5; ++i) CHECK(flat[i] == doctest::Approx(golden[i]).epsilon(1e-12));
  }
  SUBCASE("deterministic and shape-checked") {
    CHECK(bound_direction(s.net, features, params).flat() == bound_direction(s.net, features, params).flat());
    BoundFeatures bad = features;
    bad[1] = Matrix::Zero(3, kBoundFeatures);
    CHECK_THROWS_AS(bound_direction(s.net, bad, params), Error);
    CHECK_THROWS_AS(bound_config(ParameterSet(nlohmann::json{{"variant", "branch"}})), Error);
  }
}

TEST_CASE("bound output") {
  ParameterSet params = create_bound_params(small_config(), 8);
  std::vector<Matrix> mu{Matrix(), Matrix::Random(3, 5), Matrix::Random(2, 5)};
  SUBCASE("unit score reads the first coordinate") {
    params.at("score").setZero();
    params.at("score")(0, 0) = 1.0;
    const DualState d = bound_output_duals(mu, params);
    CHECK(d.rho[1] == mu[1].col(0));
    CHECK(d.rho[2] == mu[2].col(0));
  }
  SUBCASE("zero embeddings") {
    for (auto& m : mu) m.setZero();
    CHECK(bound_output_duals(mu, params).flat().cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("supergradient construction") {
  const ParameterSet prop1 = prop1_parameters(32);
  CHECK_THROWS_AS(prop1_parameters(1), Error);
  SUBCASE("100 random states") {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      const std::vector<Index> hidden = seed % 2 ? std::vector<Index>{6, 5} : std::vector<Index>{4, 7, 3};
      const State s = make_state(hidden, 500 + seed, 0.4, 1.0);
      const DualState dir = bound_direction(s.net, build_bound_features(s.rho, s.inner), prop1);
      worst = std::max(worst, max_abs_diff(dir, supergradient(s.inner)));
    }
    CHECK(worst <= 1e-12);
  }
  SUBCASE("zero supergradient gives zero direction") {
    DualState rho;
    rho.rho = {Vector(), Vector::Constant(3, 0.4), Vector()};
    InnerSolution inner;
    inner.zhat_a = {Vector(), Vector::Constant(3, -0.2), Vector()};
    inner.zhat_b = inner.zhat_a;
    const Network net({Layer::dense(Matrix::Ones(3, 2), Vector::Zero(3)), Layer::dense(Matrix::Ones(1, 3), Vector::Zero(1))});
    CHECK(bound_direction(net, build_bound_features(rho, inner), prop1).flat().cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("trajectory equals plain ascent") {
    const State s = make_state({6, 5}, 77, 0.4);
    BoundSolveOptions options;
    options.iterations = 30;
    options.eta0 = 0.05;
    std::vector<double> steps;
    for (int t = 1; t <= options.iterations; ++t) steps.push_back(step_size(t, options.eta0));
    const auto gnn = gnn_bound_solve(s.net, s.stack, s.rho, prop1, options);
    const auto plain = plain_supergradient_ascent(s.net, s.stack, s.rho, steps);
    REQUIRE(gnn.trajectory.size() == plain.trajectory.size());
    for (std::size_t i = 0; i < gnn.trajectory.size(); ++i)
      CHECK(gnn.trajectory[i] == doctest::Approx(plain.trajectory[i]).epsilon(1e-12));
    CHECK(max_abs_diff(gnn.rho, plain.rho) <= 1e-12);
    CHECK(gnn.best_q == doctest::Approx(plain.best_q).epsilon(1e-12));
    CHECK(gnn.trajectory.back() != gnn.trajectory.front());
  }
}

TEST_CASE("dual update and solve loop") {
  DualState rho;
  rho.rho = {Vector(), Vector::Constant(2, 1.0), Vector()};
  DualState dir = rho;
  dir.rho[1] = Vector::Constant(2, 1.0);
  CHECK(step_size(4, 1e-3) == 5e-4);
  CHECK(step_size(4, 1e-3, StepSchedule::sqrt) == 2e-3);
  CHECK(step_size(9, 1.0) < step_size(4, 1.0));
  CHECK_THROWS_AS(step_size(0, 1e-3), Error);
  CHECK(dual_update(rho, dir, 4).rho[1][0] == 1.0 + 5e-4);
  DualState zero = dir;
  zero.rho[1].setZero();
  CHECK(dual_update(rho, zero, 3).flat() == rho.flat());

  const State s = make_state({4, 3}, 5);
  int calls = 0;
  BoundSolveOptions one;
  one.iterations = 1;
  const auto r = bound_solve_with(
      s.net, s.stack, s.rho,
      [&](const DualState& current, const InnerSolution& inner, int t) {
        ++calls;
        CHECK(t == 1);
        CHECK(inner.q == dual_value(s.net, s.stack, current));
        return supergradient(inner);
      },
      one);
  CHECK(calls == 1);
  CHECK(r.updates == 1);
  CHECK(r.trajectory.size() == 2);
  CHECK(r.trajectory.back() == dual_value(s.net, s.stack, r.rho));
  CHECK_THROWS_AS(bound_solve_with(s.net, s.stack, s.rho, nullptr, BoundSolveOptions{0}), Error);

  SUBCASE("non-finite direction stops with a failure flag") {
    const auto bad = bound_solve_with(s.net, s.stack, s.rho, [&](const DualState& current, const InnerSolution&, int) {
      DualState d = current;
      for (int h = 1; h < d.depth(); ++h) d.rho[h].setConstant(std::numeric_limits<double>::quiet_NaN());
      return d;
    });
    CHECK_FALSE(bad.finite);
    CHECK(bad.trajectory.size() == 1);
    CHECK(bad.best_q == bad.trajectory.front());
  }
}

TEST_CASE("bound loss") {
  CHECK(bound_loss({0.5}, 10.0, 0.99, 1e-3) == doctest::Approx(-0.495).epsilon(1e-15));
  CHECK(bound_loss({0.5, 1.0}, 10.0, 0.99, 1e-3) == doctest::Approx(-1.4751).epsilon(1e-15));
  CHECK(bound_loss({0.5, 1.0}, 0.9, 0.99, 0.1) == 0.0);
  CHECK(bound_loss({0.5, 1.0}, 0.95, 0.99, 0.1) != 0.0);
  CHECK(default_kappa(-3.0) == 0.03);
  CHECK(default_kappa(0.0) == 1e-3);
}

TEST_CASE("bound samples") {
  const BoundSample s = make_sample(3);
  const BoundSample back = bound_sample_from_json(nlohmann::json::parse(bound_sample_to_json(s).dump()));
  CHECK(bound_sample_to_json(back) == bound_sample_to_json(s));
  CHECK_THROWS_AS(bound_sample_from_json(nlohmann::json{{"q_supg", 1.0}}), Error);
}

TEST_CASE("unrolled gradient") {
  const BoundSample sample = make_sample(12);
  UnrollConfig config;
  config.horizon = 3;
  config.kappa = 1e6;
  config.solve.eta0 = 0.05;
  const ParameterSet base = create_bound_params(small_config(), 21);

  SUBCASE("replay matches the loss at the frozen point") {
    const auto r = bound_sample_loss(sample, base, config, nullptr);
    CHECK(r.active);
    CHECK(r.q.size() == 3);
    CHECK(bound_replay_loss(sample, base, base, config) == doctest::Approx(r.loss).epsilon(1e-12));
  }
  SUBCASE("finite differences") {
    const auto report = check_gradients(base, [&](const ParameterSet& p, GradientTape* g) {
      if (g) return LossProbe{bound_sample_loss(sample, p, config, g).loss, 1.0};
      return LossProbe{bound_replay_loss(sample, base, p, config), 1.0};
    });
    CHECK_FALSE(report.skipped);
    CHECK(report.worst_relative <= 1e-3);
    CHECK(report.compared.size() == base.tensor_count());
  }
  SUBCASE("inactive sample has no gradient") {
    UnrollConfig clamped = config;
    clamped.kappa = 0.0;
    BoundSample low = sample;
    low.q_supg = -1e9;
    GradientTape g = base.zeros_like();
    const auto r = bound_sample_loss(low, base, clamped, &g);
    CHECK_FALSE(r.active);
    CHECK(r.loss == 0.0);
    CHECK(g.flat().cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("bound training") {
  CHECK_THROWS_AS(train_bound_gnn({}, create_bound_params(small_config(), 0), {}), Error);

  SUBCASE("epoch zero at the supergradient construction") {
    const BoundSample sample = make_sample(30);
    BoundTrainConfig config;
    config.epochs = 1;
    config.unroll.horizon = 10;
    config.unroll.kappa = 1e6;
    config.unroll.solve.eta0 = 0.05;
    const ParameterSet prop1 = prop1_parameters(8);
    const auto result = train_bound_gnn({sample}, prop1, config);
    std::vector<double> steps;
    for (int t = 1; t <= 10; ++t) steps.push_back(step_size(t, 0.05));
    const auto plain = plain_supergradient_ascent(sample.net, sample.stack, sample.parent_rho, steps);
    const std::vector<double> q(plain.trajectory.begin() + 1, plain.trajectory.end());
    CHECK(result.epoch_loss.front() == doctest::Approx(bound_loss(q, sample.q_supg, 0.99, 1e6)).epsilon(1e-10));
  }
  SUBCASE("single-sample overfit raises the final bound") {
    const BoundSample sample = make_sample(31);
    BoundTrainConfig config;
    config.epochs = 100;
    config.unroll.horizon = 10;
    config.unroll.kappa = 1e6;
    config.unroll.solve.eta0 = 0.05;
    config.policy = ExecutionPolicy::serial;
    const ParameterSet params0 = create_bound_params(small_config(), 5);
    const double initial_q = inner_minimize(sample.net, sample.stack, sample.parent_rho).q;
    const auto before = bound_sample_loss(sample, params0, config.unroll, nullptr);
    const auto result = train_bound_gnn({sample}, params0, config);
    const auto after = bound_sample_loss(sample, result.params, config.unroll, nullptr);
    MESSAGE("q_supg " << sample.q_supg << ", initial q " << initial_q << ", final q before " << before.q.back() << ", after " << after.q.back());
    CHECK(after.q.back() > initial_q);
    CHECK(after.loss < before.loss);
  }
  SUBCASE("serial equals parallel") {
    std::vector<BoundSample> data{make_sample(40), make_sample(41), make_sample(42)};
    BoundTrainConfig config;
    config.epochs = 2;
    config.batch_size = 2;
    config.unroll.horizon = 4;
    config.policy = ExecutionPolicy::serial;
    const auto a = train_bound_gnn(data, create_bound_params(small_config(), 1), config);
    config.policy = ExecutionPolicy::parallel;
    const auto b = train_bound_gnn(data, create_bound_params(small_config(), 1), config);
    CHECK(a.params.flat() == b.params.flat());
    CHECK(a.epoch_loss == b.epoch_loss);
  }
}

TEST_CASE("bound fail-safe") {
  CHECK(failsafe_bound(-0.9, -1.0) == BoundRoute::accept);
  CHECK(failsafe_bound(-0.97, -1.0) == BoundRoute::supergradient_queue);
  CHECK(failsafe_bound(-0.5, -1.0, 0.5) == BoundRoute::accept);
  CHECK_THROWS_AS(failsafe_bound(std::nan(""), -1.0), Error);
}
