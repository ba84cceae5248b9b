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
#include <optional>
#include <utility>
#include <vector>

namespace babverify {

/// Per-node feature widths. Input: (l, u, primal). Activation: (l, u, β,
/// bias, primal pre-activation, primal post-activation, ρ, downstream
/// dual). Output: (l, u, bias, primal).
inline constexpr Index kBranchInputFeatures = 3;
inline constexpr Index kBranchActivationFeatures = 8;
inline constexpr Index kBranchOutputFeatures = 4;

struct BranchFeatures {
  Matrix input;
  /// Index h = 1..L-1; slot 0 stays empty.
  std::vector<Matrix> activation;
  Matrix output;
  /// Gate ratio α per hidden neuron (h = 1..L-1).
  std::vector<Vector> alpha;
  /// 1 for ambiguous hidden neurons, 0 otherwise (h = 1..L-1).
  std::vector<Vector> ambiguous;

  int depth() const { return static_cast<int>(activation.size()); }
};

BranchFeatures build_branch_features(const Network& net, const BoundsStack& stack, const InnerSolution& inner,
                                     const DualState& rho);
nlohmann::json branch_features_to_json(const BranchFeatures& f);
BranchFeatures branch_features_from_json(const nlohmann::json& j);

/// Node embeddings, one row per node.
struct BranchGraphState {
  Matrix input;
  /// Index h = 1..L-1; slot 0 stays empty.
  std::vector<Matrix> activation;
  Matrix output;

  static BranchGraphState zeros(const Network& net, Index embedding);
};

struct BranchGnnConfig {
  Index embedding = 64;
  int rounds = 2;
  /// When false, primal and dual features are zeroed before every pass.
  bool lp_features = true;
};

using Neuron = std::pair<int, Index>;

struct BranchDecision {
  int layer = 0;
  Index neuron = 0;
  double score = 0.0;

  Neuron target() const { return {layer, neuron}; }
};

/// Fresh parameters (architecture variant "branch").
ParameterSet create_branch_params(const BranchGnnConfig& config, std::uint64_t seed);
BranchGnnConfig branch_config(const ParameterSet& params);

/// Maps embeddings of layer h+1 to layer h through Wᵀ of `next` (the
/// layer feeding h+1). For convolutions each row is divided by the number
/// of downstream neurons it connects to.
Matrix backward_neighbor_operator(const Layer& next);

/// One forward sweep: input nodes (only while their embeddings are all
/// zero), hidden layers 1..L-1, then the output node.
BranchGraphState branch_forward_pass(const BranchGraphState& state, const BranchFeatures& features,
                                     const Network& net, const ParameterSet& params);
/// One backward sweep: hidden layers L-1..1, then input nodes.
BranchGraphState branch_backward_pass(const BranchGraphState& state, const BranchFeatures& features,
                                      const Network& net, const ParameterSet& params);

/// Scores of the candidates after the configured number of rounds from
/// zero embeddings.
Vector branch_scores(const Network& net, const BranchFeatures& features, const std::vector<Neuron>& candidates,
                     const ParameterSet& params);
/// Argmax of `scores`; ties go to the smallest (layer, index). Throws
/// empty_input when there are no candidates.
BranchDecision decide_from_scores(const std::vector<Neuron>& candidates, const Vector& scores);
/// Runs the rounds, scores the candidates and returns the argmax.
BranchDecision score_and_decide(const Network& net, const BranchFeatures& features,
                                const std::vector<Neuron>& candidates, const ParameterSet& params);

/// Relative improvement of splitting: 0 when both children keep the
/// parent bound, 1 when both are proven. Requires parent_lb < 0.
double improvement_measure(double parent_lb, double child_lb1, double child_lb2);

/// Labels 0..M-1: m normalized by its maximum and binned uniformly.
std::vector<int> rank_labels(const Vector& improvements, int bins = 10);

/// Mean of (1 - (s_j - s_i))_+ over ordered pairs with label_j > label_i;
/// 0 when no such pair exists.
double hinge_rank_loss(const Vector& scores, const std::vector<int>& labels);

/// One training record: the subdomain's network and features, the
/// candidate neurons and their strong-branching improvements.
struct BranchSample {
  Network net;
  BranchFeatures features;
  std::vector<Neuron> candidates;
  Vector improvements;
};

nlohmann::json branch_sample_to_json(const BranchSample& s);
BranchSample branch_sample_from_json(const nlohmann::json& j);

/// Hinge-rank loss of one sample through both passes. Gradients are added
/// into `grads` when it is non-null.
struct SampleLoss {
  double value = 0.0;
  double relu_margin = 0.0;
};
SampleLoss branch_sample_loss(const BranchSample& sample, const ParameterSet& params, int bins,
                              GradientTape* grads);

struct BranchTrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  std::size_t batch_size = 2;
  int max_epochs = 200;
  int decay_patience = 10;
  double decay_factor = 5.0;
  int stop_patience = 20;
  int bins = 10;
  double validation_fraction = 0.2;
  std::uint64_t seed = 0;
  ExecutionPolicy policy = ExecutionPolicy::parallel;
};

struct BranchTrainResult {
  ParameterSet params;
  std::vector<double> train_loss;
  std::vector<double> validation_loss;
  int best_epoch = 0;
};

/// Adam on the mean hinge loss plus (λ/2)‖Θ‖². Returns the parameters with
/// the lowest validation loss (training loss when there is no validation
/// split).
BranchTrainResult train_branch_gnn(const std::vector<BranchSample>& dataset, const ParameterSet& params0,
                                   const BranchTrainConfig& config);

struct FailsafeBranchOutcome {
  BranchDecision decision;
  double improvement = 0.0;
  bool backup_invoked = false;
  bool backup_chosen = false;
};

/// Keeps the GNN decision when its improvement reaches `threshold`;
/// otherwise evaluates the backup and keeps whichever improves more.
FailsafeBranchOutcome failsafe_branch(const BranchDecision& gnn_decision, double gnn_improvement,
                                      const std::function<std::pair<BranchDecision, double>()>& backup,
                                      double threshold = 0.2);

}  // namespace babverify
