/*
 * SPDX-FileCopyrightText: Copyright (c) 2026, babverify contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#include "babverify/bab.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <map>

namespace babverify {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

const std::map<BranchingStrategy, std::string> kStrategyNames = {{BranchingStrategy::random, "random"},
                                                                 {BranchingStrategy::babsr_sub, "babsr_sub"},
                                                                 {BranchingStrategy::strong, "strong"},
                                                                 {BranchingStrategy::gnn, "gnn"}};
const std::map<BoundingBackend, std::string> kBackendNames = {{BoundingBackend::interval, "interval"},
                                                              {BoundingBackend::linear, "linear"},
                                                              {BoundingBackend::lp, "lp"},
                                                              {BoundingBackend::supergradient, "supergradient"},
                                                              {BoundingBackend::gnn, "gnn"}};

template <typename Enum>
Enum parse_name(const std::map<Enum, std::string>& names, const std::string& name, const char* what) {
  for (const auto& [value, text] : names)
    if (text == name) return value;
  fail(ErrorCode::invalid_argument, std::string("unknown ") + what + ": " + name);
}

IntermediateMethod intermediate_for(BoundingBackend b) {
  return b == BoundingBackend::interval ? IntermediateMethod::interval : IntermediateMethod::linear;
}

bool is_ambiguous(const BoundsStack& stack, const Neuron& n) {
  const auto& [h, j] = n;
  return h >= 1 && h < stack.depth() && j >= 0 && j < stack.lower[h].size() && stack.lower[h][j] < 0.0 &&
         stack.upper[h][j] > 0.0;
}

}  // namespace

std::string to_string(BranchingStrategy s) { return kStrategyNames.at(s); }
std::string to_string(BoundingBackend b) { return kBackendNames.at(b); }
std::string to_string(VerifyStatus s) {
  switch (s) {
    case VerifyStatus::verified: return "verified";
    case VerifyStatus::falsified: return "falsified";
    case VerifyStatus::timeout: return "timeout";
  }
  return "timeout";
}
BranchingStrategy parse_strategy(const std::string& name) { return parse_name(kStrategyNames, name, "strategy"); }
BoundingBackend parse_backend(const std::string& name) { return parse_name(kBackendNames, name, "backend"); }

std::pair<double, Vector> compute_ub(const Network& net, const InputDomain& domain, const Vector& input) {
  require(input.size() == domain.dim(), ErrorCode::dimension_mismatch, "upper-bound input has the wrong size");
  Vector x = domain.clip(input);
  return {forward(net, x)[0], std::move(x)};
}

DualState starting_duals(const Network& net, const BoundsStack& stack, const DualState* inherited) {
  DualState best = inherited ? *inherited : DualState::zeros(net);
  double best_q = dual_value(net, stack, best);
  DualState backward = fastlin_duals(net, stack);
  const double q = dual_value(net, stack, backward);
  if (!(best_q >= q)) {
    best = std::move(backward);
    best_q = q;
  }
  return best;
}

Subdomain root_subdomain(const BabContext& ctx) {
  require(ctx.net.output_dim() == 1, ErrorCode::invalid_argument, "verification needs a scalar output");
  require(ctx.domain.dim() == ctx.net.input_dim(), ErrorCode::dimension_mismatch, "domain does not match the network");
  Subdomain root;
  root.stack = compute_bounds(ctx.net, ctx.domain, {}, intermediate_for(ctx.config.backend));
  root.parent_rho = DualState::zeros(ctx.net);
  root.lower_bound = -kInf;
  return root;
}

namespace {

void mark_infeasible(Subdomain& sub) {
  sub.lower_bound = kInf;
  sub.upper_bound = kInf;
  sub.candidate.resize(0);
}

void bound_supergradient(const BabContext& ctx, Subdomain& sub, const DualState& start) {
  const AscentResult r = supergradient_ascent(ctx.net, sub.stack, start, ctx.config.supergradient_steps,
                                              ctx.config.supergradient_lr);
  sub.lower_bound = r.best_q;
  sub.rho = r.best_rho;
  sub.candidate = r.best_solution.z0;
}

}  // namespace

void bound_subdomain(const BabContext& ctx, Subdomain& sub, std::optional<double> parent_lb) {
  const Network& net = ctx.net;
  if (sub.stack.infeasible) return mark_infeasible(sub);
  const bool inherit = sub.parent_rho.depth() == net.depth() && sub.parent_rho.size() > 0;
  const DualState start = starting_duals(net, sub.stack, inherit ? &sub.parent_rho : nullptr);

  if (ambiguous_neurons(sub.stack).empty()) {
    // Every neuron is fixed, so the LP optimum is the exact minimum.
    const PlanetBound lp = planet_lp_bound(net, sub.stack);
    if (lp.status != LpStatus::optimal) return mark_infeasible(sub);
    sub.rho = start;
    std::tie(sub.upper_bound, sub.candidate) = compute_ub(net, ctx.domain, lp.z0);
    sub.lower_bound = sub.upper_bound;
    return;
  }

  switch (ctx.config.backend) {
    case BoundingBackend::interval:
    case BoundingBackend::linear: {
      sub.lower_bound = sub.stack.lower[net.depth()][0];
      sub.rho = fastlin_duals(net, sub.stack);
      sub.candidate = inner_minimize(net, sub.stack, sub.rho).z0;
      break;
    }
    case BoundingBackend::lp: {
      const PlanetBound lp = planet_lp_bound(net, sub.stack);
      if (lp.status != LpStatus::optimal) return mark_infeasible(sub);
      sub.lower_bound = lp.value;
      sub.rho = start;
      sub.candidate = lp.z0;
      break;
    }
    case BoundingBackend::supergradient: bound_supergradient(ctx, sub, start); break;
    case BoundingBackend::gnn: {
      if (sub.queue == QueueTag::supergradient) {
        bound_supergradient(ctx, sub, start);
        break;
      }
      BoundSolveOptions options;
      options.iterations = ctx.config.gnn_iterations;
      options.eta0 = ctx.config.gnn_eta0;
      const BoundSolveResult r =
          ctx.config.gnn_direction
              ? bound_solve_with(net, sub.stack, start, ctx.config.gnn_direction, options)
              : gnn_bound_solve(net, sub.stack, start, *ctx.config.bound_params, options);
      const double reference = parent_lb ? *parent_lb : dual_value(net, sub.stack, start);
      const bool usable = r.finite && std::isfinite(r.best_q) && std::isfinite(reference);
      if (usable && failsafe_bound(r.best_q, reference, ctx.config.bound_failsafe) == BoundRoute::accept) {
        sub.lower_bound = r.best_q;
        sub.rho = r.best_rho;
        sub.candidate = inner_minimize(net, sub.stack, r.best_rho).z0;
        break;
      }
      sub.queue = QueueTag::supergradient;
      bound_supergradient(ctx, sub, start);
      if (r.finite && r.best_q > sub.lower_bound) {
        sub.lower_bound = r.best_q;
        sub.rho = r.best_rho;
      }
      break;
    }
  }
  std::tie(sub.upper_bound, sub.candidate) = compute_ub(net, ctx.domain, sub.candidate);
}

std::pair<Subdomain, Subdomain> split_relu(const BabContext& ctx, const Subdomain& sub, const Neuron& target) {
  require(is_ambiguous(sub.stack, target), ErrorCode::invalid_argument, "split target is not an ambiguous neuron");
  auto child = [&](Phase phase) {
    Subdomain c;
    const Split split{target.first, target.second, phase};
    c.splits = sub.splits;
    c.splits.push_back(split);
    c.stack = refresh_after_split(ctx.net, sub.stack, c.splits, split, intermediate_for(ctx.config.backend));
    c.lower_bound = sub.lower_bound;
    c.parent_rho = sub.rho;
    c.depth = sub.depth + 1;
    c.queue = sub.queue;
    return c;
  };
  return {child(Phase::active), child(Phase::inactive)};
}

std::vector<Vector> babsr_score(const Network& net, const BoundsStack& stack) {
  const std::vector<Vector> coef = output_backward_coefficients(net, stack);
  std::vector<Vector> scores(static_cast<std::size_t>(net.depth()));
  for (int h = 1; h < net.depth(); ++h)
    scores[h] = layer_relaxation(stack.lower[h], stack.upper[h]).beta.cwiseProduct(coef[h].cwiseAbs());
  return scores;
}

BranchDecision babsr_decision(const Network& net, const BoundsStack& stack) {
  const auto candidates = ambiguous_neurons(stack);
  const auto scores = babsr_score(net, stack);
  Vector flat(static_cast<Index>(candidates.size()));
  for (std::size_t i = 0; i < candidates.size(); ++i)
    flat[static_cast<Index>(i)] = scores[candidates[i].first][candidates[i].second];
  return decide_from_scores(candidates, flat);
}

StrongBranchResult strong_branch(const BabContext& ctx, const Subdomain& sub, const std::vector<Neuron>& candidates) {
  require(!candidates.empty(), ErrorCode::empty_input, "strong branching needs candidates");
  require(sub.lower_bound < 0.0, ErrorCode::invalid_argument, "strong branching needs a negative parent bound");
  StrongBranchResult out;
  out.candidates = candidates;
  out.improvements.resize(static_cast<Index>(candidates.size()));
  double best = -kInf;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    auto children = split_relu(ctx, sub, candidates[i]);
    bound_subdomain(ctx, children.first, sub.lower_bound);
    bound_subdomain(ctx, children.second, sub.lower_bound);
    const double m = improvement_measure(sub.lower_bound, children.first.lower_bound, children.second.lower_bound);
    out.improvements[static_cast<Index>(i)] = m;
    if (m > best) {
      best = m;
      out.decision = {candidates[i].first, candidates[i].second, m};
      out.children = std::move(children);
    }
  }
  return out;
}

std::vector<Neuron> strong_candidate_subset(const Network& net, const BoundsStack& stack, std::size_t budget,
                                            std::mt19937_64& rng) {
  std::vector<Neuron> all = ambiguous_neurons(stack);
  if (budget == 0 || budget >= all.size()) return all;
  const auto scores = babsr_score(net, stack);
  std::vector<Neuron> ranked = all;
  std::stable_sort(ranked.begin(), ranked.end(), [&](const Neuron& a, const Neuron& b) {
    return scores[a.first][a.second] > scores[b.first][b.second];
  });
  std::set<Neuron> chosen(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(budget));
  for (int h = 1; h < net.depth(); ++h) {
    std::vector<Neuron> layer, rest;
    for (const Neuron& n : all)
      if (n.first == h) (chosen.count(n) ? layer : rest).push_back(n);
    const std::size_t need =
        static_cast<std::size_t>(std::ceil(0.05 * static_cast<double>(layer.size() + rest.size())));
    std::shuffle(rest.begin(), rest.end(), rng);
    for (std::size_t i = 0; layer.size() + i < need && i < rest.size(); ++i) chosen.insert(rest[i]);
  }
  return {chosen.begin(), chosen.end()};
}

void SubdomainQueue::push(Subdomain s) { items_.insert(std::move(s)); }

double SubdomainQueue::min_lower_bound() const { return items_.empty() ? kInf : items_.begin()->lower_bound; }

std::vector<Subdomain> SubdomainQueue::pick_out_batch(std::size_t n) {
  require(!items_.empty(), ErrorCode::empty_input, "pick_out on an empty queue");
  std::vector<Subdomain> out;
  while (out.size() < n && !items_.empty()) out.push_back(std::move(items_.extract(items_.begin()).value()));
  return out;
}

namespace {

struct Expansion {
  BranchDecision decision;
  std::pair<Subdomain, Subdomain> children;
};

std::pair<Subdomain, Subdomain> bounded_children(const BabContext& ctx, const Subdomain& sub, const Neuron& target) {
  auto children = split_relu(ctx, sub, target);
  bound_subdomain(ctx, children.first, sub.lower_bound);
  bound_subdomain(ctx, children.second, sub.lower_bound);
  return children;
}

double improvement_of(const Subdomain& parent, const std::pair<Subdomain, Subdomain>& c) {
  return improvement_measure(parent.lower_bound, c.first.lower_bound, c.second.lower_bound);
}

Expansion expand(const BabContext& ctx, const Subdomain& sub) {
  const BabConfig& config = ctx.config;
  const auto candidates = ambiguous_neurons(sub.stack);
  Expansion e;
  switch (config.strategy) {
    case BranchingStrategy::random: {
      std::mt19937_64 rng(config.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(sub.order + 1)));
      const Neuron pick = candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng)];
      e.decision = {pick.first, pick.second, 0.0};
      e.children = bounded_children(ctx, sub, pick);
      break;
    }
    case BranchingStrategy::babsr_sub: {
      e.decision = babsr_decision(ctx.net, sub.stack);
      e.children = bounded_children(ctx, sub, e.decision.target());
      break;
    }
    case BranchingStrategy::strong: {
      std::mt19937_64 rng(config.seed + static_cast<std::uint64_t>(sub.order));
      auto sb = strong_branch(ctx, sub, strong_candidate_subset(ctx.net, sub.stack, config.strong_candidates, rng));
      e.decision = sb.decision;
      e.children = std::move(sb.children);
      break;
    }
    case BranchingStrategy::gnn: {
      const InnerSolution inner = inner_minimize(ctx.net, sub.stack, sub.rho);
      const BranchFeatures features = build_branch_features(ctx.net, sub.stack, inner, sub.rho);
      const BranchDecision gnn = score_and_decide(ctx.net, features, candidates, *config.branch_params);
      auto gnn_children = bounded_children(ctx, sub, gnn.target());
      std::pair<Subdomain, Subdomain> backup_children;
      const auto outcome = failsafe_branch(
          gnn, improvement_of(sub, gnn_children),
          [&] {
            const BranchDecision d = babsr_decision(ctx.net, sub.stack);
            backup_children = bounded_children(ctx, sub, d.target());
            return std::make_pair(d, improvement_of(sub, backup_children));
          },
          config.branch_failsafe);
      e.decision = outcome.decision;
      e.children = outcome.backup_chosen ? std::move(backup_children) : std::move(gnn_children);
      break;
    }
  }
  return e;
}

}  // namespace

VerificationResult verify(const Network& net, const InputDomain& domain, const BabConfig& config,
                          const BabObserver& observer) {
  require(config.batch_size >= 1, ErrorCode::invalid_argument, "batch size must be positive");
  require(config.strategy != BranchingStrategy::gnn || config.branch_params, ErrorCode::invalid_argument,
          "GNN branching needs parameters");
  require(config.backend != BoundingBackend::gnn || config.bound_params || config.gnn_direction,
          ErrorCode::invalid_argument, "GNN bounding needs parameters");
  if (config.strategy == BranchingStrategy::gnn) branch_config(*config.branch_params);
  if (config.backend == BoundingBackend::gnn && !config.gnn_direction) bound_config(*config.bound_params);

  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(); };
  VerificationResult result;
  result.global_lb = -kInf;
  result.global_ub = 0.0;
  auto finish = [&](VerifyStatus status) {
    result.status = status;
    result.wall_time = elapsed();
    return result;
  };
  auto out_of_budget = [&] {
    return elapsed() >= config.timeout_s || (config.max_branches >= 0 && result.branches >= config.max_branches);
  };
  if (out_of_budget()) return finish(VerifyStatus::timeout);

  const BabContext ctx{net, domain, config};
  SubdomainQueue main_queue, sg_queue;
  long order = 0;

  // Returns true when the subdomain proves the property false.
  auto admit = [&](Subdomain&& sub, QueueTag parent_queue) {
    sub.order = order++;
    if (sub.upper_bound < result.global_ub) {
      result.global_ub = sub.upper_bound;
      result.witness = sub.candidate;
    }
    if (result.global_ub < 0.0) return true;
    if (sub.queue == QueueTag::supergradient && parent_queue == QueueTag::main) ++result.supergradient_routed;
    if (sub.lower_bound >= result.global_ub) {
      if (observer.pruned) observer.pruned(sub);
      return false;
    }
    if (observer.enqueued) observer.enqueued(sub);
    (sub.queue == QueueTag::main ? main_queue : sg_queue).push(std::move(sub));
    return false;
  };
  auto record_bounds = [&] {
    const double lowest = std::min(main_queue.min_lower_bound(), sg_queue.min_lower_bound());
    result.global_lb = std::isfinite(lowest) ? lowest : result.global_ub;
    result.lb_trajectory.push_back(result.global_lb);
    result.ub_trajectory.push_back(result.global_ub);
  };

  Subdomain root = root_subdomain(ctx);
  bound_subdomain(ctx, root);
  if (admit(std::move(root), QueueTag::main)) {
    record_bounds();
    return finish(VerifyStatus::falsified);
  }
  record_bounds();

  while (!main_queue.empty() || !sg_queue.empty()) {
    if (out_of_budget()) return finish(VerifyStatus::timeout);
    std::vector<Subdomain> batch;
    while (batch.size() < config.batch_size && (!main_queue.empty() || !sg_queue.empty())) {
      SubdomainQueue& from = main_queue.min_lower_bound() <= sg_queue.min_lower_bound() && !main_queue.empty()
                                 ? main_queue
                                 : sg_queue;
      batch.push_back(std::move(from.pick_out_batch(1).front()));
    }
    std::vector<Expansion> expansions(batch.size());
    parallel_for(batch.size(), config.policy, [&](std::size_t i) { expansions[i] = expand(ctx, batch[i]); });
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (observer.branched) observer.branched(batch[i], expansions[i].decision);
      result.branches += 2;
      for (Subdomain* child : {&expansions[i].children.first, &expansions[i].children.second})
        if (admit(std::move(*child), batch[i].queue)) {
          record_bounds();
          return finish(VerifyStatus::falsified);
        }
    }
    record_bounds();
  }
  return finish(VerifyStatus::verified);
}

nlohmann::json result_record(const std::string& property_id, const VerificationResult& r, const BabConfig& config) {
  auto number = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  nlohmann::json j = {{"property_id", property_id},
                      {"status", to_string(r.status)},
                      {"time_s", r.wall_time},
                      {"branches", r.branches},
                      {"strategy", to_string(config.strategy)},
                      {"backend", to_string(config.backend)},
                      {"global_lb", number(r.global_lb)},
                      {"global_ub", number(r.global_ub)}};
  if (r.witness) j["witness"] = std::vector<double>(r.witness->data(), r.witness->data() + r.witness->size());
  return j;
}

}  // namespace babverify
