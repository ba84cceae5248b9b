/*
 * SPDX-FileCopyrightText: Copyright (c) 2026, babverify contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include "babverify/model.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace babverify {

enum class Phase : std::int8_t { inactive = -1, active = 1 };

/// Fixes hidden neuron `neuron` of layer `layer` (1..L-1) to one ReLU phase.
struct Split {
  int layer = 1;
  Index neuron = 0;
  Phase phase = Phase::active;
  bool operator==(const Split&) const = default;
};

using Splits = std::vector<Split>;

/// Per-layer phase lookup built from a split list. Throws on out-of-range
/// targets and on a neuron fixed to both phases.
class PhaseMap {
 public:
  PhaseMap(const Network& net, const Splits& splits);
  std::optional<Phase> at(int layer, Index neuron) const;
  const std::vector<std::int8_t>& layer(int h) const { return phases_.at(h); }

 private:
  std::vector<std::vector<std::int8_t>> phases_;
};

/// Pre-activation bounds for layers 1..L; index 0 holds the input box.
/// `infeasible` marks a split set that empties the region.
struct BoundsStack {
  std::vector<Vector> lower;
  std::vector<Vector> upper;
  bool infeasible = false;

  int depth() const { return static_cast<int>(lower.size()) - 1; }
  const Vector& lower_at(int h) const { return lower.at(h); }
  const Vector& upper_at(int h) const { return upper.at(h); }
};

enum class NeuronState : std::int8_t { blocked, passing, ambiguous };

struct ReluState {
  NeuronState state = NeuronState::blocked;
  /// Upper-line slope u/(u-l), also used as the single lower slope.
  double alpha = 0.0;
  /// Intercept of the upper line, -l*u/(u-l).
  double beta = 0.0;
};

ReluState relu_quantities(double l, double u);

/// Per-neuron relaxation quantities for one hidden layer.
struct LayerRelaxation {
  Vector alpha;
  Vector beta;
  std::vector<NeuronState> state;
};

LayerRelaxation layer_relaxation(const Vector& lower, const Vector& upper);

enum class IntermediateMethod { interval, linear };

BoundsStack interval_bounds(const Network& net, const InputDomain& domain, const Splits& splits = {});
BoundsStack linear_backward_bounds(const Network& net, const InputDomain& domain, const Splits& splits = {});
BoundsStack compute_bounds(const Network& net, const InputDomain& domain, const Splits& splits,
                           IntermediateMethod method);

/// Child bounds after adding `new_split` (which must already appear in
/// `splits`). Layers up to the split layer keep the parent's bounds;
/// downstream layers are recomputed and intersected with the parent's.
/// With `full_recompute` every layer is recomputed.
BoundsStack refresh_after_split(const Network& net, const BoundsStack& parent, const Splits& splits,
                                const Split& new_split, IntermediateMethod method = IntermediateMethod::linear,
                                bool full_recompute = false);

/// Linear-backward coefficients of the final output with respect to the
/// post-activation of every hidden layer (index h = 1..L-1).
std::vector<Vector> output_backward_coefficients(const Network& net, const BoundsStack& stack);

/// Ambiguous neurons of a stack in (layer, index) order.
std::vector<std::pair<int, Index>> ambiguous_neurons(const BoundsStack& stack);

}  // namespace babverify
