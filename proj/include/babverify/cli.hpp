/*
 * SPDX-FileCopyrightText: Copyright (c) 2026, babverify contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include "babverify/datagen.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace babverify {

/// Settings shared by every subcommand. JSON keys match the field names;
/// command-line flags use dashes instead of underscores.
struct RunConfig {
  // Verification.
  std::string strategy = "babsr_sub";
  std::string backend = "supergradient";
  int batch_size = 200;
  double timeout = 3600.0;
  long max_branches = -1;
  int sg_steps = 500;
  double sg_lr = 1e-4;
  int gnn_iters = 100;
  double gnn_eta0 = 1e-3;
  double bound_failsafe = 0.05;
  double branch_failsafe = 0.2;
  int strong_candidates = 0;
  std::string branch_params;
  std::string bound_params;
  std::uint64_t seed = 0;
  bool serial = false;
  /// Writes time_s as 0 and measures property difficulty in branches.
  bool deterministic = false;

  // gen-properties.
  int networks = 4;
  int per_network = 2;
  long inputs = 4;
  std::vector<long> hidden{8, 8};
  long classes = 3;
  double ambiguity = 0.3;
  double eps_lo = 1e-3;
  double eps_hi = 0.5;
  double eps_tol = 1e-3;

  // gen-branch-data.
  int samples_per_property = 20;
  int max_cheap_steps = 10;
  double full_fraction = 0.25;
  int full_run_cap = 200;

  // gen-bound-data.
  int rounds = 3;
  int per_property = 16;

  // train-branch.
  long branch_embedding = 64;
  int branch_rounds = 2;
  bool lp_features = true;
  double branch_lr = 1e-4;
  double weight_decay = 1e-4;
  int branch_batch = 2;
  int branch_epochs = 200;
  int bins = 10;
  double validation_fraction = 0.2;

  // train-bound and eval-bounds.
  long bound_embedding = 32;
  int bound_passes = 1;
  double bound_lr = 1e-2;
  int bound_epochs = 50;
  int bound_batch = 16;
  int horizon = 100;
  double gamma = 0.99;
  /// Negative selects the default clamp slack.
  double kappa = -1.0;
};

nlohmann::json run_config_to_json(const RunConfig& config);
/// Overwrites the fields named in `j`; unknown keys are an error.
void apply_run_config(RunConfig& config, const nlohmann::json& j);

/// Verification settings; loads the parameter files it names.
BabConfig bab_config(const RunConfig& config);

/// Process exit codes.
enum ExitCode : int { exit_verified = 0, exit_falsified = 1, exit_timeout = 2, exit_error = 3 };

/// Parses `args` (program name first) and runs the subcommand. Results
/// and tables go to their files or `out`; diagnostics go to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

struct CactusRow {
  std::string method;
  double time_s = 0.0;
  double solved_percent = 0.0;
};

/// Per method ("strategy+backend"), the solved records sorted by time with
/// the cumulative percentage of that method's records solved. Timeouts and
/// solves slower than the timeout are not solved. The timeout comes from
/// `timeout` when given, otherwise from the latest header line.
std::vector<CactusRow> cactus_rows(const std::vector<nlohmann::json>& lines, std::optional<double> timeout = {});
/// Writes "method,time_s,solved_percent" rows; throws io when the file is missing.
void export_cactus(const std::filesystem::path& results, std::ostream& csv, std::optional<double> timeout = {});

/// One eval-bounds table row: bounds on a recorded subdomain from its
/// parent's duals.
struct BoundEvalRow {
  std::size_t index = 0;
  int depth = 0;
  double q_start = 0.0;
  double linear = 0.0;
  double supergradient = 0.0;
  double gnn = 0.0;
  double q_supg = 0.0;
  bool within_kappa = false;
};

std::vector<BoundEvalRow> eval_bound_rows(const std::vector<BoundSample>& samples, const ParameterSet& params,
                                          const RunConfig& config);

}  // namespace babverify
