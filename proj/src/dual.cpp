/*
 * SPDX-FileCopyrightText: Copyright (c) 2026, babverify contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#include "babverify/dual.hpp"

#include <cmath>
#include <limits>

namespace babverify {

DualState DualState::zeros(const Network& net) {
  DualState d;
  d.rho.resize(net.depth() + 1);
  for (int h = 1; h < net.depth(); ++h) d.rho[h] = Vector::Zero(net.width(h));
  return d;
}

Index DualState::size() const {
  Index n = 0;
  for (const Vector& v : rho) n += v.size();
  return n;
}

Vector DualState::flat() const {
  Vector out(size());
  Index at = 0;
  for (const Vector& v : rho) {
    out.segment(at, v.size()) = v;
    at += v.size();
  }
  return out;
}

void DualState::set_flat(const Vector& values) {
  require(values.size() == size(), ErrorCode::dimension_mismatch, "flat dual vector has wrong size");
  Index at = 0;
  for (Vector& v : rho) {
    v = values.segment(at, v.size());
    at += v.size();
  }
}

namespace {

void check_shapes(const Network& net, const BoundsStack& stack, const DualState& rho) {
  require(stack.depth() == net.depth(), ErrorCode::dimension_mismatch, "bounds stack depth differs from network");
  require(rho.depth() == net.depth(), ErrorCode::dimension_mismatch, "dual state depth differs from network");
  for (int h = 1; h < net.depth(); ++h) {
    require(rho.rho[h].size() == net.width(h), ErrorCode::dimension_mismatch,
            "dual vector for layer " + std::to_string(h) + " has wrong size");
    require(stack.lower[h].size() == net.width(h) && stack.upper[h].size() == net.width(h),
            ErrorCode::dimension_mismatch, "bounds for layer " + std::to_string(h) + " have wrong size");
  }
  require(stack.lower[0].size() == net.input_dim(), ErrorCode::dimension_mismatch, "input bounds have wrong size");
}

struct Vertex {
  double zhat;
  double z;
};

/// Minimizes c*zhat + d*z over the relaxation of one neuron by scanning
/// its vertices in order of increasing |zhat| (first minimum wins).
Vertex minimize_neuron(double l, double u, double c, double d, double& value) {
  Vertex candidates[3];
  int count = 0;
  if (u <= 0.0) {
    candidates[count++] = {u, 0.0};
    candidates[count++] = {l, 0.0};
  } else if (l >= 0.0) {
    candidates[count++] = {l, l};
    candidates[count++] = {u, u};
  } else {
    candidates[count++] = {0.0, 0.0};
    if (-l <= u) {
      candidates[count++] = {l, 0.0};
      candidates[count++] = {u, u};
    } else {
      candidates[count++] = {u, u};
      candidates[count++] = {l, 0.0};
    }
  }
  Vertex best = candidates[0];
  value = c * best.zhat + d * best.z;
  for (int i = 1; i < count; ++i) {
    const double v = c * candidates[i].zhat + d * candidates[i].z;
    if (v < value) {
      value = v;
      best = candidates[i];
    }
  }
  return best;
}

}  // namespace

InnerSolution inner_minimize(const Network& net, const BoundsStack& stack, const DualState& rho) {
  check_shapes(net, stack, rho);
  const int depth = net.depth();
  InnerSolution sol;
  sol.zhat_a.resize(depth + 1);
  sol.zhat_b.resize(depth + 1);
  sol.z.resize(depth + 1);
  if (stack.infeasible) {
    sol.q = std::numeric_limits<double>::infinity();
    return sol;
  }

  // Subproblem 0: linear objective over the input box.
  const Layer& first = net.layer(0);
  const Vector c0 = depth == 1 ? Vector(first.weights().row(0).transpose())
                               : Vector(first.weights().transpose() * rho.rho[1]);
  double q = depth == 1 ? first.bias()[0] : rho.rho[1].dot(first.bias());
  const Vector& l0 = stack.lower[0];
  const Vector& u0 = stack.upper[0];
  sol.z0.resize(l0.size());
  for (Index i = 0; i < l0.size(); ++i) {
    sol.z0[i] = c0[i] < 0.0 ? u0[i] : l0[i];
    q += c0[i] * sol.z0[i];
  }

  // Subproblems 1..L-1.
  Vector previous = sol.z0;
  for (int k = 1; k < depth; ++k) {
    const Layer& next = net.layer(k);
    Vector d;
    if (k + 1 < depth) {
      d = next.weights().transpose() * rho.rho[k + 1];
      q += rho.rho[k + 1].dot(next.bias());
    } else {
      d = next.weights().row(0).transpose();
      q += next.bias()[0];
    }
    const Vector& l = stack.lower[k];
    const Vector& u = stack.upper[k];
    const Vector& r = rho.rho[k];
    Vector za(l.size());
    Vector z(l.size());
    for (Index j = 0; j < l.size(); ++j) {
      double value = 0.0;
      const Vertex v = minimize_neuron(l[j], u[j], -r[j], d[j], value);
      za[j] = v.zhat;
      z[j] = v.z;
      q += value;
    }
    sol.zhat_b[k] = net.layer(k - 1).apply(previous);
    sol.zhat_a[k] = std::move(za);
    sol.z[k] = z;
    previous = std::move(z);
  }
  sol.q = q;
  return sol;
}

double dual_value(const Network& net, const BoundsStack& stack, const DualState& rho) {
  return inner_minimize(net, stack, rho).q;
}

DualState supergradient(const InnerSolution& sol) {
  DualState g;
  g.rho.resize(sol.zhat_a.size());
  for (std::size_t h = 0; h < sol.zhat_a.size(); ++h)
    if (sol.zhat_a[h].size() > 0) g.rho[h] = sol.zhat_b[h] - sol.zhat_a[h];
  return g;
}

DualState fastlin_duals(const Network& net, const BoundsStack& stack) {
  DualState d = DualState::zeros(net);
  if (stack.infeasible) return d;
  const std::vector<Vector> coef = output_backward_coefficients(net, stack);
  for (int h = 1; h < net.depth(); ++h)
    d.rho[h] = coef[h].cwiseProduct(layer_relaxation(stack.lower[h], stack.upper[h]).alpha);
  return d;
}

namespace {

void require_finite(double q) {
  require(std::isfinite(q), ErrorCode::non_finite, "dual value is not finite");
}

}  // namespace

AscentResult supergradient_ascent(const Network& net, const BoundsStack& stack, const DualState& rho0, int steps,
                                  double lr, const AdamConstants& adam) {
  require(steps >= 1, ErrorCode::invalid_argument, "supergradient ascent needs at least one step");
  AscentResult out;
  out.rho = rho0;
  InnerSolution sol = inner_minimize(net, stack, out.rho);
  require_finite(sol.q);
  out.best_rho = out.rho;
  out.best_q = sol.q;
  out.best_solution = sol;
  out.trajectory.push_back(sol.q);
  AdamMoments moments(out.rho.size());
  for (int t = 0; t < steps; ++t) {
    const Vector g = supergradient(sol).flat();
    out.rho.set_flat(out.rho.flat() + lr * moments.direction(g, adam));
    sol = inner_minimize(net, stack, out.rho);
    require_finite(sol.q);
    out.trajectory.push_back(sol.q);
    if (sol.q > out.best_q) {
      out.best_q = sol.q;
      out.best_rho = out.rho;
      out.best_solution = sol;
    }
  }
  return out;
}

AscentResult plain_supergradient_ascent(const Network& net, const BoundsStack& stack, const DualState& rho0,
                                        const std::vector<double>& step_sizes) {
  AscentResult out;
  out.rho = rho0;
  InnerSolution sol = inner_minimize(net, stack, out.rho);
  require_finite(sol.q);
  out.best_rho = out.rho;
  out.best_q = sol.q;
  out.best_solution = sol;
  out.trajectory.push_back(sol.q);
  for (double eta : step_sizes) {
    const DualState g = supergradient(sol);
    for (int h = 1; h < out.rho.depth(); ++h) out.rho.rho[h] += eta * g.rho[h];
    sol = inner_minimize(net, stack, out.rho);
    require_finite(sol.q);
    out.trajectory.push_back(sol.q);
    if (sol.q > out.best_q) {
      out.best_q = sol.q;
      out.best_rho = out.rho;
      out.best_solution = sol;
    }
  }
  return out;
}

}  // namespace babverify
