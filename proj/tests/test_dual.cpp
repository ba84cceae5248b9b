/*
 * SPDX-FileCopyrightText: Copyright (c) 2026, babverify contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#include "babverify/dual.hpp"
#include "babverify/oracle.hpp"

#include "support.hpp"

#include <doctest.h>

using namespace babverify;
using babverify::testing::random_box;
using babverify::testing::random_verification;
using babverify::testing::uniform_vector;

namespace {

DualState random_rho(const Network& net, std::mt19937_64& rng, double scale = 1.0) {
  DualState d = DualState::zeros(net);
  for (int h = 1; h < net.depth(); ++h) d.rho[h] = uniform_vector(net.width(h), -scale, scale, rng);
  return d;
}

struct Instance {
  VerificationNetwork net;
  InputDomain domain;
  BoundsStack stack;
};

Instance tiny(std::uint64_t seed, std::vector<Index> hidden = {4, 4}) {
  auto net = random_verification(hidden, 3, seed + 1000);
  auto domain = random_box(3, seed);
  auto stack = linear_backward_bounds(net, domain);
  return {std::move(net), std::move(domain), std::move(stack)};
}

// Independent backward bound: coefficients pushed through relu slopes.
double backward_bound(const Network& net, const BoundsStack& s) {
  Eigen::RowVectorXd a = net.layer(net.depth() - 1).weights();
  double c = net.layer(net.depth() - 1).bias()[0];
  for (int h = net.depth() - 1; h >= 1; --h) {
    for (Index j = 0; j < a.size(); ++j) {
      const double l = s.lower[h][j];
      const double u = s.upper[h][j];
      double slope = 0.0, icpt = 0.0;
      if (l >= 0) slope = 1.0;
      else if (u > 0) {
        slope = u / (u - l);
        icpt = -l * u / (u - l);
      }
      if (a[j] < 0) c += a[j] * icpt;
      a[j] *= slope;
    }
    c += a.dot(net.layer(h - 1).bias());
    a = a * net.layer(h - 1).weights();
  }
  for (Index i = 0; i < a.size(); ++i) c += a[i] > 0 ? a[i] * s.lower[0][i] : a[i] * s.upper[0][i];
  return c;
}

}  // namespace

TEST_CASE("single ambiguous neuron picks the origin vertex") {
  const Network net({Layer::dense(Matrix::Ones(1, 1), Vector::Zero(1)), Layer::dense(Matrix::Ones(1, 1), Vector::Zero(1))});
  const InputDomain box(Vector::Constant(1, -1.0), Vector::Constant(1, 1.0));
  const auto stack = interval_bounds(net, box);
  const auto sol = inner_minimize(net, stack, DualState::zeros(net));
  CHECK(sol.zhat_a[1][0] == 0.0);
  CHECK(sol.z[1][0] == 0.0);
  CHECK(sol.q == 0.0);
  CHECK(sol.z0[0] == -1.0);
}

TEST_CASE("q(0) equals the last-subproblem triangle LP") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto inst = tiny(seed, {2, 2});
    const auto& net = inst.net;
    const auto& s = inst.stack;
    const double q0 = dual_value(net, s, DualState::zeros(net));
    // LP over (zhat, z) of the last hidden layer only.
    const Index n = net.width(1 + 1);
    LpProblem p = LpProblem::with_variables(2 * n);
    p.lower.head(n) = s.lower[2];
    p.upper.head(n) = s.upper[2];
    p.lower.tail(n).setZero();
    p.upper.tail(n) = s.upper[2].cwiseMax(0.0);
    Vector rhs(0);
    Matrix a(0, 2 * n);
    for (Index j = 0; j < n; ++j) {
      const auto rq = relu_quantities(s.lower[2][j], s.upper[2][j]);
      Eigen::RowVectorXd r1 = Eigen::RowVectorXd::Zero(2 * n), r2 = r1;
      r1[j] = 1.0;
      r1[n + j] = -1.0;  // zhat <= z
      r2[n + j] = 1.0;
      r2[j] = -rq.alpha;  // z - alpha zhat <= -alpha l
      a.conservativeResize(a.rows() + 2, Eigen::NoChange);
      rhs.conservativeResize(rhs.size() + 2);
      a.row(a.rows() - 2) = r1;
      rhs[rhs.size() - 2] = 0.0;
      a.row(a.rows() - 1) = r2;
      rhs[rhs.size() - 1] = rq.state == NeuronState::ambiguous ? -rq.alpha * s.lower[2][j] : 0.0;
      if (rq.state == NeuronState::blocked) p.upper[n + j] = 0.0;
    }
    p.a_ub = a;
    p.b_ub = rhs;
    p.objective.tail(n) = net.layer(2).weights().row(0).transpose();
    const auto lp = solve_lp(p);
    REQUIRE(lp.status == LpStatus::optimal);
    CHECK(q0 == doctest::Approx(lp.value + net.layer(2).bias()[0]).epsilon(1e-9));
  }
}

TEST_CASE("linear-backward multipliers reproduce the backward bound") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto inst = tiny(seed, {5, 4});
    const double q = dual_value(inst.net, inst.stack, fastlin_duals(inst.net, inst.stack));
    CHECK(q == doctest::Approx(backward_bound(inst.net, inst.stack)).epsilon(1e-10));
  }
}

TEST_CASE("all-passing network: best dual equals the exact minimum") {
  Matrix w1(2, 2);
  w1 << 1.0, 0.5, 0.2, 1.0;
  Matrix w2(1, 2);
  w2 << 1.0, -2.0;
  const Network net({Layer::dense(w1, Vector::Constant(2, 0.1)), Layer::dense(w2, Vector::Zero(1))});
  const InputDomain box(Vector::Zero(2), Vector::Ones(2));
  const auto stack = linear_backward_bounds(net, box);
  const double exact = exhaustive_verify(net, box).minimum;
  CHECK(dual_value(net, stack, fastlin_duals(net, stack)) == doctest::Approx(exact));
  std::mt19937_64 rng(1);
  for (int i = 0; i < 100; ++i) CHECK(dual_value(net, stack, random_rho(net, rng)) <= exact + 1e-9);
}

TEST_CASE("q is a valid, concave lower bound") {
  std::mt19937_64 rng(7);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto inst = tiny(seed);
    const double lp = planet_lp_bound(inst.net, inst.stack).value;
    for (int i = 0; i < 200; ++i) {
      const auto r1 = random_rho(inst.net, rng, 2.0);
      const auto r2 = random_rho(inst.net, rng, 2.0);
      const double q1 = dual_value(inst.net, inst.stack, r1);
      const double q2 = dual_value(inst.net, inst.stack, r2);
      CHECK(q1 <= lp + 1e-6);
      DualState mid = r1;
      for (int h = 1; h < inst.net.depth(); ++h) mid.rho[h] = 0.5 * (r1.rho[h] + r2.rho[h]);
      CHECK(dual_value(inst.net, inst.stack, mid) >= 0.5 * (q1 + q2) - 1e-9);
    }
  }
}

TEST_CASE("q is piecewise linear along rays") {
  std::mt19937_64 rng(3);
  const auto inst = tiny(4);
  const auto base = random_rho(inst.net, rng);
  const auto dir = random_rho(inst.net, rng);
  const int n = 2001;
  std::vector<double> q(n);
  for (int i = 0; i < n; ++i) {
    DualState r = base;
    const double t = -2.0 + 4.0 * i / (n - 1);
    for (int h = 1; h < inst.net.depth(); ++h) r.rho[h] += t * dir.rho[h];
    q[static_cast<std::size_t>(i)] = dual_value(inst.net, inst.stack, r);
  }
  int kinks = 0;
  for (int i = 1; i + 1 < n; ++i)
    if (std::abs(q[i + 1] - 2 * q[i] + q[i - 1]) > 1e-9) ++kinks;
  // Each breakpoint spoils at most two stencils; breakpoints are bounded by
  // the number of vertex switches, far fewer than grid points.
  CHECK(kinks < 200);
}

TEST_CASE("supergradient matches finite differences and the supergradient inequality") {
  std::mt19937_64 rng(11);
  int compared = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto inst = tiny(seed);
    for (int trial = 0; trial < 5; ++trial) {
      const auto rho = random_rho(inst.net, rng);
      const auto sol = inner_minimize(inst.net, inst.stack, rho);
      const Vector g = supergradient(sol).flat();
      const Vector flat = rho.flat();
      const double h = 1e-6;
      bool smooth = true;
      Vector fd(flat.size());
      for (Index i = 0; i < flat.size() && smooth; ++i) {
        DualState p = rho, m = rho;
        Vector fp = flat, fm = flat;
        fp[i] += h;
        fm[i] -= h;
        p.set_flat(fp);
        m.set_flat(fm);
        const auto sp = inner_minimize(inst.net, inst.stack, p);
        const auto sm = inner_minimize(inst.net, inst.stack, m);
        if (supergradient(sp).flat() != g || supergradient(sm).flat() != g) smooth = false;
        fd[i] = (sp.q - sm.q) / (2 * h);
      }
      if (!smooth) continue;
      CHECK((fd - g).norm() <= 1e-4 * std::max(1.0, g.norm()));
      ++compared;
      for (int probe = 0; probe < 50; ++probe) {
        DualState other = random_rho(inst.net, rng, 3.0);
        const double qo = dual_value(inst.net, inst.stack, other);
        CHECK(qo <= sol.q + g.dot(other.flat() - flat) + 1e-9);
      }
    }
  }
  CHECK(compared >= 20);
}

TEST_CASE("equal copies give a zero supergradient") {
  InnerSolution s;
  s.zhat_a = {Vector(), Vector::Ones(3)};
  s.zhat_b = s.zhat_a;
  CHECK(supergradient(s).rho[1].isZero());
}

TEST_CASE("per-neuron vertex scan equals a tiny LP") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u01(-2.0, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    double l = u01(rng), u = u01(rng);
    if (l > u) std::swap(l, u);
    const double rho = u01(rng), d = u01(rng);
    // Network computing d * relu(x) on x in [l, u] with rho on the neuron.
    const Network net({Layer::dense(Matrix::Ones(1, 1), Vector::Zero(1)), Layer::dense(Matrix::Constant(1, 1, d), Vector::Zero(1))});
    BoundsStack s;
    s.lower = {Vector::Constant(1, l), Vector::Constant(1, l), Vector::Constant(1, 0.0)};
    s.upper = {Vector::Constant(1, u), Vector::Constant(1, u), Vector::Constant(1, 0.0)};
    DualState r = DualState::zeros(net);
    r.rho[1][0] = rho;
    const auto sol = inner_minimize(net, s, r);
    const double neuron_part = sol.q - std::min(rho * l, rho * u);
    // LP: min -rho*zhat + d*z over the relaxation.
    const auto rq = relu_quantities(l, u);
    LpProblem p = LpProblem::with_variables(2);
    p.lower << l, 0.0;
    p.upper << u, std::max(u, 0.0);
    p.objective << -rho, d;
    if (rq.state == NeuronState::passing) {
      p.a_eq = Matrix(1, 2);
      p.a_eq << 1.0, -1.0;
      p.b_eq = Vector::Zero(1);
    } else if (rq.state == NeuronState::blocked) {
      p.upper[1] = 0.0;
    } else {
      p.a_ub = Matrix(2, 2);
      p.a_ub << 1.0, -1.0, -rq.alpha, 1.0;
      p.b_ub = Vector(2);
      p.b_ub << 0.0, -rq.alpha * l;
    }
    const auto lp = solve_lp(p);
    CHECK(neuron_part == doctest::Approx(lp.value).epsilon(1e-9));
  }
}

TEST_CASE("parent multipliers stay valid on children") {
  int checked = 0;
  for (std::uint64_t seed = 0; seed < 15; ++seed) {
    const auto inst = tiny(seed, {5, 5});
    const auto amb = ambiguous_neurons(inst.stack);
    if (amb.empty()) continue;
    const auto parent = supergradient_ascent(inst.net, inst.stack, DualState::zeros(inst.net), 50, 1e-2);
    for (Phase ph : {Phase::active, Phase::inactive}) {
      const Split s{amb[0].first, amb[0].second, ph};
      const auto child = refresh_after_split(inst.net, inst.stack, {s}, s);
      const double exact = exhaustive_verify(inst.net, inst.domain, {s}).minimum;
      const double q = dual_value(inst.net, child, parent.best_rho);
      CHECK(q <= exact + 1e-9);
      ++checked;
    }
  }
  CHECK(checked > 5);
}

TEST_CASE("supergradient ascent") {
  const auto inst = tiny(2);
  const auto res = supergradient_ascent(inst.net, inst.stack, DualState::zeros(inst.net), 200, 1e-2);
  double best = -std::numeric_limits<double>::infinity();
  for (double q : res.trajectory) best = std::max(best, q);
  CHECK(res.best_q == best);
  CHECK(res.best_q >= res.trajectory.front());
  CHECK(res.best_q <= planet_lp_bound(inst.net, inst.stack).value + 1e-9);
  CHECK_THROWS_AS(supergradient_ascent(inst.net, inst.stack, DualState::zeros(inst.net), 0, 1e-2), Error);

  // A network with no hidden units has no multipliers to move.
  const Network flat({Layer::dense(Matrix::Ones(1, 2), Vector::Zero(1))});
  const InputDomain box(Vector::Zero(2), Vector::Ones(2));
  const auto one = supergradient_ascent(flat, interval_bounds(flat, box), DualState::zeros(flat), 1, 1e-4);
  CHECK(one.trajectory.size() == 2);
  CHECK(one.trajectory[0] == one.trajectory[1]);
}
