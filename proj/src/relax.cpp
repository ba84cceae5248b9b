/*
 * SPDX-FileCopyrightText: Copyright (c) 2026, babverify contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#include "babverify/relax.hpp"

#include <algorithm>
#include <cmath>

namespace babverify {

namespace {

constexpr double kCrossingTolerance = 1e-9;

}  // namespace

PhaseMap::PhaseMap(const Network& net, const Splits& splits) : phases_(net.depth() + 1) {
  for (int h = 1; h < net.depth(); ++h) phases_[h].assign(net.width(h), 0);
  for (const Split& s : splits) {
    require(s.layer >= 1 && s.layer < net.depth(), ErrorCode::invalid_argument,
            "split targets layer " + std::to_string(s.layer) + " which is not a hidden layer");
    require(s.neuron >= 0 && s.neuron < net.width(s.layer), ErrorCode::invalid_argument,
            "split neuron index out of range");
    auto& slot = phases_[s.layer][s.neuron];
    const auto value = static_cast<std::int8_t>(s.phase);
    require(slot == 0 || slot == value, ErrorCode::invalid_argument,
            "inconsistent splits: neuron fixed to both phases");
    slot = value;
  }
}

std::optional<Phase> PhaseMap::at(int layer, Index neuron) const {
  if (layer < 1 || layer >= static_cast<int>(phases_.size()) - 1) return std::nullopt;
  const auto v = phases_[layer][neuron];
  if (v == 0) return std::nullopt;
  return static_cast<Phase>(v);
}

ReluState relu_quantities(double l, double u) {
  require(!(l > u), ErrorCode::invalid_argument, "relu_quantities: lower bound exceeds upper bound");
  if (u <= 0.0) return {NeuronState::blocked, 0.0, 0.0};
  if (l >= 0.0) return {NeuronState::passing, 1.0, 0.0};
  const double width = u - l;
  return {NeuronState::ambiguous, u / width, -l * u / width};
}

LayerRelaxation layer_relaxation(const Vector& lower, const Vector& upper) {
  LayerRelaxation r;
  r.alpha.resize(lower.size());
  r.beta.resize(lower.size());
  r.state.resize(static_cast<std::size_t>(lower.size()));
  for (Index j = 0; j < lower.size(); ++j) {
    const ReluState s = relu_quantities(lower[j], upper[j]);
    r.alpha[j] = s.alpha;
    r.beta[j] = s.beta;
    r.state[static_cast<std::size_t>(j)] = s.state;
  }
  return r;
}

namespace {

BoundsStack empty_stack(const Network& net, const InputDomain& domain) {
  require(domain.dim() == net.input_dim(), ErrorCode::dimension_mismatch, "domain dimension differs from network input");
  BoundsStack stack;
  stack.lower.resize(net.depth() + 1);
  stack.upper.resize(net.depth() + 1);
  stack.lower[0] = domain.lower;
  stack.upper[0] = domain.upper;
  return stack;
}

/// Interval image of layer k given the (clamped) bounds of layer k-1.
std::pair<Vector, Vector> interval_layer(const Network& net, const BoundsStack& stack, int k) {
  Vector lo = stack.lower[k - 1];
  Vector hi = stack.upper[k - 1];
  if (k > 1) {
    lo = lo.cwiseMax(0.0);
    hi = hi.cwiseMax(0.0);
  }
  const Matrix& w = net.layer(k - 1).weights();
  const Matrix wp = w.cwiseMax(0.0);
  const Matrix wn = w.cwiseMin(0.0);
  Vector l = wp * lo + wn * hi + net.layer(k - 1).bias();
  Vector u = wp * hi + wn * lo + net.layer(k - 1).bias();
  return {std::move(l), std::move(u)};
}

/// Single-slope backward propagation from layer k to the input box.
std::pair<Vector, Vector> linear_layer(const Network& net, const BoundsStack& stack, int k) {
  Matrix a = net.layer(k - 1).weights();
  Vector cl = net.layer(k - 1).bias();
  Vector cu = cl;
  for (int h = k - 1; h >= 1; --h) {
    const LayerRelaxation r = layer_relaxation(stack.lower[h], stack.upper[h]);
    cl += a.cwiseMin(0.0) * r.beta;
    cu += a.cwiseMax(0.0) * r.beta;
    a = a * r.alpha.asDiagonal();
    const Vector shift = a * net.layer(h - 1).bias();
    cl += shift;
    cu += shift;
    a = a * net.layer(h - 1).weights();
  }
  const Matrix ap = a.cwiseMax(0.0);
  const Matrix an = a.cwiseMin(0.0);
  Vector l = cl + ap * stack.lower[0] + an * stack.upper[0];
  Vector u = cu + ap * stack.upper[0] + an * stack.lower[0];
  return {std::move(l), std::move(u)};
}

/// Applies split clamps to layer k; returns false when a bound pair crosses.
bool clamp_layer(BoundsStack& stack, const PhaseMap& phases, int k, int depth) {
  Vector& l = stack.lower[k];
  Vector& u = stack.upper[k];
  if (k < depth) {
    const auto& p = phases.layer(k);
    for (Index j = 0; j < l.size(); ++j) {
      if (p[j] > 0) l[j] = std::max(l[j], 0.0);
      if (p[j] < 0) u[j] = std::min(u[j], 0.0);
    }
  }
  for (Index j = 0; j < l.size(); ++j) {
    if (l[j] <= u[j]) continue;
    if (l[j] - u[j] > kCrossingTolerance * (1.0 + std::abs(l[j]) + std::abs(u[j]))) return false;
    const double mid = 0.5 * (l[j] + u[j]);
    l[j] = mid;
    u[j] = mid;
  }
  return true;
}

void mark_infeasible(BoundsStack& stack, const Network& net, int from) {
  stack.infeasible = true;
  for (int h = from; h <= net.depth(); ++h) {
    stack.lower[h] = Vector::Zero(net.width(h));
    stack.upper[h] = Vector::Zero(net.width(h));
  }
}

/// Recomputes layers [from, L] in place. `cap`, when given, is intersected
/// into every recomputed layer.
void propagate(const Network& net, BoundsStack& stack, const PhaseMap& phases, int from, IntermediateMethod method,
               const BoundsStack* cap) {
  for (int k = from; k <= net.depth(); ++k) {
    auto [l, u] = interval_layer(net, stack, k);
    if (method == IntermediateMethod::linear && k > 1) {
      auto [ll, lu] = linear_layer(net, stack, k);
      l = l.cwiseMax(ll);
      u = u.cwiseMin(lu);
    }
    if (cap != nullptr) {
      l = l.cwiseMax(cap->lower[k]);
      u = u.cwiseMin(cap->upper[k]);
    }
    stack.lower[k] = std::move(l);
    stack.upper[k] = std::move(u);
    if (!clamp_layer(stack, phases, k, net.depth())) {
      mark_infeasible(stack, net, k);
      return;
    }
  }
}

}  // namespace

BoundsStack interval_bounds(const Network& net, const InputDomain& domain, const Splits& splits) {
  const PhaseMap phases(net, splits);
  BoundsStack stack = empty_stack(net, domain);
  propagate(net, stack, phases, 1, IntermediateMethod::interval, nullptr);
  return stack;
}

BoundsStack linear_backward_bounds(const Network& net, const InputDomain& domain, const Splits& splits) {
  const PhaseMap phases(net, splits);
  BoundsStack stack = empty_stack(net, domain);
  propagate(net, stack, phases, 1, IntermediateMethod::linear, nullptr);
  return stack;
}

BoundsStack compute_bounds(const Network& net, const InputDomain& domain, const Splits& splits,
                           IntermediateMethod method) {
  return method == IntermediateMethod::linear ? linear_backward_bounds(net, domain, splits)
                                              : interval_bounds(net, domain, splits);
}

BoundsStack refresh_after_split(const Network& net, const BoundsStack& parent, const Splits& splits,
                                const Split& new_split, IntermediateMethod method, bool full_recompute) {
  require(parent.depth() == net.depth(), ErrorCode::dimension_mismatch, "bounds stack depth differs from network");
  require(!parent.infeasible, ErrorCode::invalid_argument, "cannot split an infeasible subdomain");
  require(std::find(splits.begin(), splits.end(), new_split) != splits.end(), ErrorCode::invalid_argument,
          "new split missing from split list");
  require(new_split.layer >= 1 && new_split.layer < net.depth() && new_split.neuron >= 0 &&
              new_split.neuron < net.width(new_split.layer),
          ErrorCode::invalid_argument, "split target out of range");
  const double l = parent.lower[new_split.layer][new_split.neuron];
  const double u = parent.upper[new_split.layer][new_split.neuron];
  require(l < 0.0 && u > 0.0, ErrorCode::invalid_argument, "splitting a non-ambiguous neuron");

  const PhaseMap phases(net, splits);
  BoundsStack child = parent;
  if (full_recompute) {
    propagate(net, child, phases, 1, method, &parent);
    return child;
  }
  // Layers before the split keep the parent's values; the split layer gets
  // its clamp and everything downstream is recomputed.
  if (!clamp_layer(child, phases, new_split.layer, net.depth())) {
    mark_infeasible(child, net, new_split.layer);
    return child;
  }
  propagate(net, child, phases, new_split.layer + 1, method, &parent);
  return child;
}

std::vector<Vector> output_backward_coefficients(const Network& net, const BoundsStack& stack) {
  const int depth = net.depth();
  std::vector<Vector> coef(depth + 1);
  if (depth < 2) return coef;
  Vector a = net.layer(depth - 1).weights().row(0).transpose();
  for (int h = depth - 1; h >= 1; --h) {
    coef[h] = a;
    if (h == 1) break;
    const LayerRelaxation r = layer_relaxation(stack.lower[h], stack.upper[h]);
    a = net.layer(h - 1).weights().transpose() * a.cwiseProduct(r.alpha);
  }
  return coef;
}

std::vector<std::pair<int, Index>> ambiguous_neurons(const BoundsStack& stack) {
  std::vector<std::pair<int, Index>> out;
  if (stack.infeasible) return out;
  for (int h = 1; h < stack.depth(); ++h)
    for (Index j = 0; j < stack.lower[h].size(); ++j)
      if (stack.lower[h][j] < 0.0 && stack.upper[h][j] > 0.0) out.emplace_back(h, j);
  return out;
}

}  // namespace babverify
