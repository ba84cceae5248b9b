/*
 * SPDX-FileCopyrightText: Copyright (c) 2026, babverify contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include "babverify/bound_gnn.hpp"
#include "babverify/branch_gnn.hpp"
#include "babverify/oracle.hpp"
#include "babverify/parallel.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace babverify {

enum class BranchingStrategy { random, babsr_sub, strong, gnn };
enum class BoundingBackend { interval, linear, lp, supergradient, gnn };
enum class QueueTag { main, supergradient };

std::string to_string(BranchingStrategy s);
std::string to_string(BoundingBackend b);
std::string to_string(VerifyStatus s);
BranchingStrategy parse_strategy(const std::string& name);
BoundingBackend parse_backend(const std::string& name);

struct Subdomain {
  Splits splits;
  BoundsStack stack;
  double lower_bound = 0.0;
  /// Duals behind lower_bound (linear-backward multipliers for the
  /// non-dual backends); children inherit them as their parent duals.
  DualState rho;
  DualState parent_rho;
  /// Input at which the upper bound was evaluated, and that value.
  Vector candidate;
  double upper_bound = 0.0;
  int depth = 0;
  QueueTag queue = QueueTag::main;
  /// Insertion order, the tie-breaker of pick_out_batch.
  long order = 0;
};

struct BabConfig {
  BranchingStrategy strategy = BranchingStrategy::babsr_sub;
  BoundingBackend backend = BoundingBackend::supergradient;
  std::size_t batch_size = 200;
  double timeout_s = 3600.0;
  /// Stops with status timeout once this many branches were created (< 0: no cap).
  long max_branches = -1;
  int supergradient_steps = 500;
  double supergradient_lr = 1e-4;
  int gnn_iterations = 100;
  double gnn_eta0 = 1e-3;
  double bound_failsafe = 0.05;
  double branch_failsafe = 0.2;
  /// Strong-branching candidate budget (0: every ambiguous neuron).
  std::size_t strong_candidates = 0;
  std::shared_ptr<const ParameterSet> branch_params;
  std::shared_ptr<const ParameterSet> bound_params;
  /// Replaces the bounding GNN's direction when set.
  DirectionFn gnn_direction;
  std::uint64_t seed = 0;
  ExecutionPolicy policy = ExecutionPolicy::parallel;
};

/// Optional callbacks fired from the single-writer part of the loop.
struct BabObserver {
  std::function<void(const Subdomain&)> enqueued;
  std::function<void(const Subdomain&)> pruned;
  std::function<void(const Subdomain& parent, const BranchDecision&)> branched;
};

struct VerificationResult {
  VerifyStatus status = VerifyStatus::timeout;
  std::optional<Vector> witness;
  long branches = 0;
  double wall_time = 0.0;
  double global_lb = 0.0;
  double global_ub = 0.0;
  std::vector<double> lb_trajectory;
  std::vector<double> ub_trajectory;
  /// Subdomains the bounding fail-safe sent to the supergradient queue.
  long supergradient_routed = 0;
};

/// Everything bounding and branching need besides the subdomain itself.
struct BabContext {
  const Network& net;
  const InputDomain& domain;
  const BabConfig& config;
};

/// Network value at `input` clipped into the domain, and the clipped input.
std::pair<double, Vector> compute_ub(const Network& net, const InputDomain& domain, const Vector& input);

/// Better of ρ = 0 and the linear-backward multipliers, or of `inherited`
/// and the linear-backward multipliers when given.
DualState starting_duals(const Network& net, const BoundsStack& stack, const DualState* inherited = nullptr);

/// Root subdomain with bounds for the configured backend, not yet bounded.
Subdomain root_subdomain(const BabContext& ctx);

/// Sets lower_bound, rho, candidate and upper_bound. Subdomains without
/// ambiguous neurons are bounded exactly by the LP. A GNN bound that fails
/// the fail-safe is replaced by supergradient ascent and the subdomain is
/// moved to the supergradient queue.
void bound_subdomain(const BabContext& ctx, Subdomain& sub, std::optional<double> parent_lb = std::nullopt);

/// Children (active, inactive) with refreshed bounds; not yet bounded.
std::pair<Subdomain, Subdomain> split_relu(const BabContext& ctx, const Subdomain& sub, const Neuron& target);

/// β·|linear-backward coefficient| for every hidden neuron (h = 1..L-1).
std::vector<Vector> babsr_score(const Network& net, const BoundsStack& stack);
BranchDecision babsr_decision(const Network& net, const BoundsStack& stack);

struct StrongBranchResult {
  BranchDecision decision;
  std::vector<Neuron> candidates;
  Vector improvements;
  /// Bounded children of the chosen split.
  std::pair<Subdomain, Subdomain> children;
};

/// Splits on every candidate, bounds both children with the configured
/// backend and keeps the largest improvement (ties: first candidate).
StrongBranchResult strong_branch(const BabContext& ctx, const Subdomain& sub, const std::vector<Neuron>& candidates);

/// Candidate subset: the `budget` best by babsr_score, topped up at random
/// so every layer contributes at least 5% of its ambiguous neurons.
std::vector<Neuron> strong_candidate_subset(const Network& net, const BoundsStack& stack, std::size_t budget,
                                            std::mt19937_64& rng);

/// Best-first queue ordered by (lower_bound, order).
class SubdomainQueue {
 public:
  void push(Subdomain s);
  bool empty() const { return items_.empty(); }
  std::size_t size() const { return items_.size(); }
  /// Lowest lower bound, +inf when empty.
  double min_lower_bound() const;
  /// Removes and returns the n lowest; throws empty_input on an empty queue.
  std::vector<Subdomain> pick_out_batch(std::size_t n);

 private:
  struct Less {
    bool operator()(const Subdomain& a, const Subdomain& b) const {
      return a.lower_bound != b.lower_bound ? a.lower_bound < b.lower_bound : a.order < b.order;
    }
  };
  std::multiset<Subdomain, Less> items_;
};

VerificationResult verify(const Network& net, const InputDomain& domain, const BabConfig& config,
                          const BabObserver& observer = {});

/// Result record: {property_id, status, time_s, branches, strategy, backend, global_lb, global_ub}.
nlohmann::json result_record(const std::string& property_id, const VerificationResult& r, const BabConfig& config);

}  // namespace babverify
