/*
 * SPDX-FileCopyrightText: Copyright (c) 2026, babverify contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include "babverify/dual.hpp"
#include "babverify/gnn.hpp"
#include "babverify/parallel.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <vector>

namespace babverify {

/// Per dual variable: (ρ, ẑ_A, ẑ_B, ẑ_B - ẑ_A).
inline constexpr Index kBoundFeatures = 4;

/// One n_h × 4 matrix per hidden layer h = 1..L-1; slot 0 stays empty.
using BoundFeatures = std::vector<Matrix>;

BoundFeatures build_bound_features(const DualState& rho, const InnerSolution& inner);

/// Nonzero-weight neighbour counts: `previous[h]` per neuron of layer h
/// from layer h-1, `following[h]` from layer h+1 (h = 1..L-1).
struct NeighborCounts {
  std::vector<Vector> previous;
  std::vector<Vector> following;

  static NeighborCounts of(const Network& net);
};

struct BoundGnnConfig {
  Index embedding = 32;
  /// Hidden layers of the initial embedding MLP (0 or 1).
  int init_hidden_layers = 1;
  /// Forward+backward repetitions.
  int passes = 1;
};

ParameterSet create_bound_params(const BoundGnnConfig& config, std::uint64_t seed);
BoundGnnConfig bound_config(const ParameterSet& params);

/// Parameters under which the GNN direction equals the supergradient:
/// the initial MLP splits x = ẑ_B - ẑ_A into (x)₊ and (-x)₊, every pass
/// is the identity and the score reads (1, -1, 0, ...).
ParameterSet prop1_parameters(Index embedding);

/// Initial MLP applied to every node.
std::vector<Matrix> bound_init_embed(const BoundFeatures& features, const ParameterSet& params);
/// `passes` forward sweeps over layers 1..L-1 each followed by a backward
/// sweep over L-1..1; every sweep uses the layers already updated in it.
std::vector<Matrix> bound_forward_backward(const std::vector<Matrix>& embeddings, const Network& net,
                                           const ParameterSet& params);
/// Per-node inner product with the score vector.
DualState bound_output_duals(const std::vector<Matrix>& embeddings, const ParameterSet& params);
/// Full map features -> direction.
DualState bound_direction(const Network& net, const BoundFeatures& features, const ParameterSet& params);

enum class StepSchedule { inverse_sqrt, sqrt };

/// Step coefficient for iteration t >= 1: η₀/√t, or η₀·√t for `sqrt`.
double step_size(int t, double eta0, StepSchedule schedule = StepSchedule::inverse_sqrt);
DualState dual_update(const DualState& rho, const DualState& direction, int t, double eta0 = 1e-3,
                      StepSchedule schedule = StepSchedule::inverse_sqrt);

/// Direction provider for iteration t given the current duals and inner
/// solution. The bounding GNN is one implementation; tests plug in others.
using DirectionFn = std::function<DualState(const DualState& rho, const InnerSolution& inner, int t)>;

struct BoundSolveResult {
  DualState rho;
  DualState best_rho;
  double best_q = 0.0;
  /// q(ρ⁰), q(ρ¹), ... for every finite iterate.
  std::vector<double> trajectory;
  int updates = 0;
  /// False when an iterate had a non-finite q; best_q then covers only the
  /// finite iterates before it.
  bool finite = true;
};

struct BoundSolveOptions {
  int iterations = 100;
  double eta0 = 1e-3;
  StepSchedule schedule = StepSchedule::inverse_sqrt;
};

BoundSolveResult bound_solve_with(const Network& net, const BoundsStack& stack, const DualState& rho0,
                                  const DirectionFn& direction, const BoundSolveOptions& options = {});
BoundSolveResult gnn_bound_solve(const Network& net, const BoundsStack& stack, const DualState& rho0,
                                 const ParameterSet& params, const BoundSolveOptions& options = {});

/// Clamp slack: 1% of |q_supg|, at least 1e-3.
double default_kappa(double q_supg);

/// -Σ_{t=1..K} γ^t q_t when q_K < q_supg + κ, else 0. `q` holds q(ρ¹..ρ^K).
double bound_loss(const std::vector<double>& q, double q_supg, double gamma, double kappa);

struct BoundSample {
  Network net;
  BoundsStack stack;
  Splits splits;
  DualState parent_rho;
  double q_supg = 0.0;
  int depth = 0;
};

nlohmann::json bound_sample_to_json(const BoundSample& s);
BoundSample bound_sample_from_json(const nlohmann::json& j);

struct UnrollConfig {
  int horizon = 100;
  double gamma = 0.99;
  /// Negative selects default_kappa(q_supg).
  double kappa = -1.0;
  BoundSolveOptions solve;
};

/// One unrolled run from the sample's parent duals.
struct UnrollResult {
  double loss = 0.0;
  /// Whether the clamp indicator let the sample contribute.
  bool active = false;
  /// q(ρ¹..ρ^K).
  std::vector<double> q;
  double best_q = 0.0;
};

/// Loss of one sample and, when `grads` is non-null, its gradient with
/// inner minimizers and features held fixed at each step: with g_t the
/// supergradient at ρ^t, λ_K = -γ^K g_K, λ_t = -γ^t g_t + λ_{t+1}, and
/// ∂L/∂Θ = Σ_t η_t ⟨λ_t, ∂d_t/∂Θ⟩.
UnrollResult bound_sample_loss(const BoundSample& sample, const ParameterSet& params, const UnrollConfig& config,
                               GradientTape* grads);

/// The same loss evaluated with every step's features and inner
/// minimizers frozen at those of a run under `frozen_params`; it agrees
/// with bound_sample_loss at `params == frozen_params` and its exact
/// derivative is what bound_sample_loss returns.
double bound_replay_loss(const BoundSample& sample, const ParameterSet& frozen_params, const ParameterSet& params,
                         const UnrollConfig& config);

struct BoundTrainConfig {
  double learning_rate = 1e-2;
  int epochs = 50;
  std::size_t batch_size = 16;
  int decay_patience = 2;
  double decay_factor = 10.0;
  UnrollConfig unroll;
  std::uint64_t seed = 0;
  ExecutionPolicy policy = ExecutionPolicy::parallel;
};

struct BoundTrainResult {
  ParameterSet params;
  std::vector<double> epoch_loss;
};

BoundTrainResult train_bound_gnn(const std::vector<BoundSample>& dataset, const ParameterSet& params0,
                                 const BoundTrainConfig& config);

enum class BoundRoute { accept, supergradient_queue };

/// Accepts a learned child bound only when it beats the parent by at
/// least `threshold`.
BoundRoute failsafe_bound(double child_q, double parent_q, double threshold = 0.05);

}  // namespace babverify
