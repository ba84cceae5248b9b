/*
 * SPDX-FileCopyrightText: Copyright (c) 2026, babverify contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include "babverify/adam.hpp"
#include "babverify/relax.hpp"

#include <vector>

namespace babverify {

/// Lagrange multipliers, one vector per hidden layer. `rho[h]` for
/// h = 1..L-1 is sized like layer h; slots 0 and L stay empty.
struct DualState {
  std::vector<Vector> rho;

  static DualState zeros(const Network& net);
  int depth() const { return static_cast<int>(rho.size()) - 1; }
  /// Concatenation of rho[1..L-1].
  Vector flat() const;
  void set_flat(const Vector& values);
  Index size() const;
};

/// Minimizers of every decomposed subproblem for one multiplier choice.
struct InnerSolution {
  Vector z0;
  /// Copy-A pre-activations chosen inside each subproblem (h = 1..L-1).
  std::vector<Vector> zhat_a;
  /// Copy-B pre-activations: affine image of the previous subproblem's z.
  std::vector<Vector> zhat_b;
  /// Post-activation minimizers (h = 1..L-1).
  std::vector<Vector> z;
  double q = 0.0;
};

/// Minimizes the decomposed objective subproblem by subproblem. An
/// infeasible stack yields q = +inf with empty minimizers.
InnerSolution inner_minimize(const Network& net, const BoundsStack& stack, const DualState& rho);
double dual_value(const Network& net, const BoundsStack& stack, const DualState& rho);

/// ẑ_B - ẑ_A per hidden layer, as a DualState-shaped value.
DualState supergradient(const InnerSolution& sol);

/// Multipliers reproducing the linear-backward bound of the output:
/// q(fastlin_duals) equals that bound.
DualState fastlin_duals(const Network& net, const BoundsStack& stack);

struct AscentResult {
  DualState rho;
  DualState best_rho;
  double best_q = 0.0;
  InnerSolution best_solution;
  std::vector<double> trajectory;
};

/// Adam ascent on q with supergradients. Throws Error(non_finite) if q
/// stops being finite.
AscentResult supergradient_ascent(const Network& net, const BoundsStack& stack, const DualState& rho0, int steps,
                                  double lr, const AdamConstants& adam = {});

/// Plain ascent ρ += η_t·g with caller-supplied step sizes (η_t for t=1..).
AscentResult plain_supergradient_ascent(const Network& net, const BoundsStack& stack, const DualState& rho0,
                                        const std::vector<double>& step_sizes);

}  // namespace babverify
