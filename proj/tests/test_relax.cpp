/*
 * SPDX-FileCopyrightText: Copyright (c) 2026, babverify contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#include "babverify/oracle.hpp"
#include "babverify/relax.hpp"

#include "support.hpp"

#include <doctest.h>

using namespace babverify;
using babverify::testing::random_box;
using babverify::testing::random_verification;
using babverify::testing::sample_in;

namespace {

bool respects(const Network& net, const Vector& x, const Splits& splits) {
  const auto pre = pre_activations(net, x);
  for (const Split& s : splits) {
    const double v = pre[s.layer][s.neuron];
    if (s.phase == Phase::active && v < 0) return false;
    if (s.phase == Phase::inactive && v > 0) return false;
  }
  return true;
}

void check_contains(const Network& net, const InputDomain& domain, const Splits& splits, const BoundsStack& stack,
                    int samples, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  int used = 0;
  for (int s = 0; s < samples * 20 && used < samples; ++s) {
    const Vector x = sample_in(domain, rng);
    if (!respects(net, x, splits)) continue;
    ++used;
    const auto pre = pre_activations(net, x);
    for (int h = 1; h <= net.depth(); ++h)
      for (Index j = 0; j < pre[h].size(); ++j) {
        REQUIRE(pre[h][j] >= stack.lower[h][j] - 1e-9);
        REQUIRE(pre[h][j] <= stack.upper[h][j] + 1e-9);
      }
  }
}

}  // namespace

TEST_CASE("relu_quantities anchors") {
  auto a = relu_quantities(-1, 1);
  CHECK(a.state == NeuronState::ambiguous);
  CHECK(a.alpha == 0.5);
  CHECK(a.beta == 0.5);
  auto b = relu_quantities(-1, 3);
  CHECK(b.alpha == 0.75);
  CHECK(b.beta == 0.75);
  auto c = relu_quantities(-2, -1);
  CHECK(c.state == NeuronState::blocked);
  CHECK(c.alpha == 0.0);
  CHECK(c.beta == 0.0);
  auto d = relu_quantities(0.5, 2);
  CHECK(d.state == NeuronState::passing);
  CHECK(d.alpha == 1.0);
  CHECK(relu_quantities(0, 0).state == NeuronState::blocked);
  CHECK(relu_quantities(0.3, 0.3).state == NeuronState::passing);
  CHECK_THROWS_AS(relu_quantities(1, 0), Error);
  // beta vanishes as either bound approaches zero.
  CHECK(relu_quantities(-1e-9, 1).beta < 1e-8);
  CHECK(relu_quantities(-1, 1e-9).beta < 1e-8);
}

TEST_CASE("interval bounds anchors") {
  Matrix w(1, 2);
  w << 1, -1;
  const Network single({Layer::dense(w, Vector::Zero(1))});
  const InputDomain box(Vector::Zero(2), Vector::Ones(2));
  auto s = interval_bounds(single, box);
  CHECK(s.lower[1][0] == -1.0);
  CHECK(s.upper[1][0] == 1.0);
  CHECK(linear_backward_bounds(single, box).lower[1][0] == -1.0);

  const Network two({Layer::dense(w, Vector::Zero(1)), Layer::dense(Matrix::Ones(1, 1), Vector::Zero(1))});
  auto act = interval_bounds(two, box, {{1, 0, Phase::active}});
  CHECK(act.lower[1][0] == 0.0);
  CHECK(act.upper[1][0] == 1.0);
  CHECK_THROWS_AS(interval_bounds(two, box, {{1, 0, Phase::active}, {1, 0, Phase::inactive}}), Error);
  CHECK_THROWS_AS(interval_bounds(two, box, {{2, 0, Phase::active}}), Error);
}

TEST_CASE("bounds are sound and linear is tighter than interval") {
  for (std::uint64_t seed = 0; seed < 15; ++seed) {
    const auto net = random_verification({6, 5}, 4, seed);
    const auto domain = random_box(4, seed);
    const auto ib = interval_bounds(net, domain);
    const auto lb = linear_backward_bounds(net, domain);
    check_contains(net, domain, {}, ib, 1000, seed);
    check_contains(net, domain, {}, lb, 1000, seed + 1);
    for (int h = 1; h <= net.depth(); ++h) {
      CHECK((lb.lower[h] - ib.lower[h]).minCoeff() >= -1e-12);
      CHECK((ib.upper[h] - lb.upper[h]).minCoeff() >= -1e-12);
    }
  }
}

TEST_CASE("bounds respecting splits stay sound") {
  int checked = 0;
  for (std::uint64_t seed = 20; seed < 40; ++seed) {
    const auto net = random_verification({6, 6}, 3, seed);
    const auto domain = random_box(3, seed);
    const auto root = linear_backward_bounds(net, domain);
    const auto amb = ambiguous_neurons(root);
    if (amb.size() < 2) continue;
    Splits splits{{amb[0].first, amb[0].second, Phase::active},
                  {amb[1].first, amb[1].second, Phase::inactive}};
    const auto stack = linear_backward_bounds(net, domain, splits);
    if (stack.infeasible) continue;
    check_contains(net, domain, splits, stack, 1000, seed);
    ++checked;
  }
  CHECK(checked > 5);
}

TEST_CASE("all-passing network gives exact bounds") {
  // Positive weights and inputs keep every hidden unit active.
  Matrix w1(2, 2);
  w1 << 1.0, 0.5, 0.2, 1.0;
  Matrix w2(1, 2);
  w2 << 1.0, -2.0;
  const Network net({Layer::dense(w1, Vector::Constant(2, 0.1)), Layer::dense(w2, Vector::Zero(1))});
  const InputDomain box(Vector::Zero(2), Vector::Ones(2));
  const auto lb = linear_backward_bounds(net, box);
  // Output = x1 + 0.5 x2 + 0.1 - 2(0.2 x1 + x2 + 0.1) = 0.6 x1 - 1.5 x2 - 0.1
  CHECK(lb.lower[2][0] == doctest::Approx(-1.6));
  CHECK(lb.upper[2][0] == doctest::Approx(0.5));
  CHECK(planet_lp_bound(net, lb).value == doctest::Approx(-1.6));
}

TEST_CASE("interval <= linear <= LP <= true minimum on the output") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto net = random_verification({5}, 3, seed + 300);
    const auto domain = random_box(3, seed);
    const auto ib = interval_bounds(net, domain);
    const auto lb = linear_backward_bounds(net, domain);
    const double lp = planet_lp_bound(net, lb).value;
    const double exact = exhaustive_verify(net, domain).minimum;
    CHECK(ib.lower[2][0] <= lb.lower[2][0] + 1e-9);
    CHECK(lb.lower[2][0] <= lp + 1e-9);
    CHECK(lp <= exact + 1e-9);
  }
}

TEST_CASE("refresh_after_split") {
  SUBCASE("inactive split of the only ambiguous unit zeroes its contribution") {
    Matrix w1(2, 1);
    w1 << 1.0, 1.0;
    Vector b1(2);
    b1 << -0.5, 2.0;
    Matrix w2(1, 2);
    w2 << 3.0, 1.0;
    const Network net({Layer::dense(w1, b1), Layer::dense(w2, Vector::Constant(1, -1.0))});
    const InputDomain box(Vector::Zero(1), Vector::Ones(1));
    const auto parent = linear_backward_bounds(net, box);
    REQUIRE(ambiguous_neurons(parent).size() == 1);
    const Split s{1, 0, Phase::inactive};
    const auto child = refresh_after_split(net, parent, {s}, s);
    CHECK(child.upper[1][0] == 0.0);
    CHECK(child.lower[1][0] == -0.5);
    // With unit 0 fixed at zero the output is x + 2 - 1 on [0, 1].
    CHECK(child.lower[2][0] == doctest::Approx(1.0));
    CHECK(child.upper[2][0] == doctest::Approx(2.0));
  }
  SUBCASE("active split clamps the lower bound") {
    Matrix w1(1, 1);
    w1 << 3.0;
    const Network net({Layer::dense(w1, Vector::Constant(1, -1.0)), Layer::dense(Matrix::Ones(1, 1), Vector::Zero(1))});
    const InputDomain box(Vector::Zero(1), Vector::Ones(1));
    const auto parent = linear_backward_bounds(net, box);
    CHECK(parent.lower[1][0] == -1.0);
    CHECK(parent.upper[1][0] == 2.0);
    const Split s{1, 0, Phase::active};
    const auto child = refresh_after_split(net, parent, {s}, s);
    CHECK(child.lower[1][0] == 0.0);
    CHECK(child.upper[1][0] == 2.0);
    const Split t{1, 0, Phase::inactive};
    CHECK_THROWS_AS(refresh_after_split(net, child, {s, t}, t), Error);
  }
  SUBCASE("children are tighter than the parent and keep LP monotonicity") {
    int checked = 0;
    for (std::uint64_t seed = 0; seed < 25; ++seed) {
      const auto net = random_verification({6, 5}, 3, seed + 50);
      const auto domain = random_box(3, seed);
      const auto parent = linear_backward_bounds(net, domain);
      const auto amb = ambiguous_neurons(parent);
      if (amb.empty()) continue;
      const double parent_lp = planet_lp_bound(net, parent).value;
      for (Phase phase : {Phase::active, Phase::inactive}) {
        for (bool full : {false, true}) {
          const Split s{amb.front().first, amb.front().second, phase};
          const auto child = refresh_after_split(net, parent, {s}, s, IntermediateMethod::linear, full);
          if (child.infeasible) continue;
          for (int h = 1; h <= net.depth(); ++h) {
            CHECK((child.lower[h] - parent.lower[h]).minCoeff() >= 0.0);
            CHECK((parent.upper[h] - child.upper[h]).minCoeff() >= 0.0);
          }
          CHECK(planet_lp_bound(net, child).value >= parent_lp - 1e-7);
          check_contains(net, domain, {s}, child, 300, seed);
          ++checked;
        }
      }
    }
    CHECK(checked > 10);
  }
}
