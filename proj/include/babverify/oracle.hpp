/*
 * SPDX-FileCopyrightText: Copyright (c) 2026, babverify contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include "babverify/relax.hpp"

#include <optional>

namespace babverify {

/// min cᵀx  s.t.  A_ub x ≤ b_ub,  A_eq x = b_eq,  lower ≤ x ≤ upper.
/// Bounds may be infinite; missing constraint blocks may be 0-row matrices.
struct LpProblem {
  Vector objective;
  Matrix a_ub;
  Vector b_ub;
  Matrix a_eq;
  Vector b_eq;
  Vector lower;
  Vector upper;

  /// Unconstrained problem with `n` free variables and zero objective.
  static LpProblem with_variables(Index n);
  Index variables() const { return objective.size(); }
};

enum class LpStatus { optimal, infeasible, unbounded };

struct LpSolution {
  LpStatus status = LpStatus::infeasible;
  Vector x;
  double value = 0.0;
  int pivots = 0;
};

inline constexpr Index kLpVariableCap = 500;

/// Two-phase dense simplex. Dantzig pricing switches to Bland's rule once
/// a run of degenerate pivots is seen.
LpSolution solve_lp(const LpProblem& problem);

struct PlanetBound {
  LpStatus status = LpStatus::infeasible;
  double value = 0.0;
  /// Input component of an optimal LP solution.
  Vector z0;
};

/// Exact optimum of the triangle relaxation over the subdomain described by
/// `stack` (split clamps are already folded into its bounds).
PlanetBound planet_lp_bound(const Network& net, const BoundsStack& stack);

enum class VerifyStatus { verified, falsified, timeout };

struct ExhaustiveResult {
  VerifyStatus status = VerifyStatus::verified;
  double minimum = 0.0;
  Vector minimizer;
  /// Present when status is falsified.
  std::optional<Vector> witness;
  long patterns = 0;
};

inline constexpr int kExhaustiveReluCap = 24;

/// Exact minimum of a scalar-output network over a box, optionally
/// restricted to inputs whose activation pattern respects `splits`. The
/// result is `falsified` when the minimum is negative. A restriction that
/// admits no input yields minimum +inf and `verified`.
ExhaustiveResult exhaustive_verify(const Network& net, const InputDomain& domain, const Splits& splits = {});

}  // namespace babverify
