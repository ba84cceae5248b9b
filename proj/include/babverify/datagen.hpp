/*
 * SPDX-FileCopyrightText: Copyright (c) 2026, babverify contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include "babverify/bab.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <string>
#include <vector>

namespace babverify {

struct RandomNetworkSpec {
  Index inputs = 4;
  std::vector<Index> hidden{8, 8};
  /// Output width; 1 yields a verification network.
  Index outputs = 1;
  /// Fraction of hidden ReLUs that should be ambiguous under interval bounds
  /// on the reference box.
  double ambiguity_target = 0.3;
  Vector reference_center;
  double reference_epsilon = 0.1;
  std::uint64_t seed = 0;
};

struct GeneratedNetwork {
  Network net;
  double ambiguous_fraction = 0.0;
  double weight_scale = 1.0;
};

/// Draws weights and biases, then rescales the weights until the ambiguous
/// fraction is within 0.1 of the target (exactly 0 for a zero target).
/// Throws invalid_argument when no scale reaches it.
GeneratedNetwork random_network(const RandomNetworkSpec& spec);

/// Fraction of hidden ReLUs with l < 0 < u under interval bounds.
double ambiguous_fraction(const Network& net, const InputDomain& domain);

enum class Difficulty { easy, medium, hard };
std::string to_string(Difficulty d);

struct PropertyRecord {
  PropertySpec spec;
  Difficulty difficulty = Difficulty::easy;
  /// Seconds, or branches when the search ran on the branch clock.
  double solve_cost = 0.0;
  bool timed_out = false;
  /// Verification calls made by the search (not serialized).
  int bab_runs = 0;
};

nlohmann::json property_record_to_json(const PropertyRecord& r);
PropertyRecord property_record_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);

struct EpsilonSearch {
  double lo = 1e-3;
  double hi = 0.5;
  double tol = 1e-3;
  BabConfig bab;
  /// Measure difficulty in branches against bab.max_branches instead of
  /// wall-clock seconds against bab.timeout_s; keeps reruns identical.
  bool branch_clock = false;
  double easy_fraction = 0.22;
  double medium_fraction = 0.67;
};

/// Largest ε (to tol) verified within the budget, starting from `prop`'s
/// label pair and centre. Throws invalid_argument when `lo` is falsified.
PropertyRecord binary_search_epsilon(const PropertySpec& prop, const EpsilonSearch& search);

struct BranchDataConfig {
  int samples_per_property = 20;
  int max_cheap_steps = 10;
  double full_fraction = 0.25;
  /// Cap on strong-branching samples from one full run.
  int full_run_cap = 200;
  /// Strong-branching labels come from this configuration's backend.
  BabConfig bab;
  std::uint64_t seed = 0;
};

/// Strong-branching imitation data from verification problems that did not
/// time out.
std::vector<BranchSample> gen_branch_dataset(const std::vector<std::pair<Network, InputDomain>>& problems,
                                             const BranchDataConfig& config);

struct BoundDataConfig {
  int rounds = 3;
  int per_property = 16;
  /// Supergradient run defining q_supg and driving round 1.
  BabConfig bab;
  std::uint64_t seed = 0;
};

/// Trains a bounding GNN on the data gathered so far (rounds >= 2).
using BoundTrainer = std::function<ParameterSet(const std::vector<BoundSample>&)>;

/// Round 1 records subdomains of supergradient-bounded BaB runs; each later
/// round trains on the data so far and appends subdomains of GNN-bounded
/// runs. Subdomains are subsampled per property across depth quartiles.
std::vector<BoundSample> gen_bound_dataset(const std::vector<std::pair<Network, InputDomain>>& problems,
                                           const BoundDataConfig& config, const BoundTrainer& trainer);

/// Subsample of `count` indices spread over the depth quartiles of
/// `depths`; each non-empty quartile contributes when count allows.
std::vector<std::size_t> stratified_by_depth(const std::vector<int>& depths, std::size_t count, std::mt19937_64& rng);

}  // namespace babverify
