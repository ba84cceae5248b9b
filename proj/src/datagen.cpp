/*
 * SPDX-FileCopyrightText: Copyright (c) 2026, babverify contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#include "babverify/datagen.hpp"

#include "babverify/io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace babverify {

double ambiguous_fraction(const Network& net, const InputDomain& domain) {
  const BoundsStack stack = interval_bounds(net, domain);
  const int relus = net.relu_count();
  if (relus == 0) return 0.0;
  return static_cast<double>(ambiguous_neurons(stack).size()) / relus;
}

GeneratedNetwork random_network(const RandomNetworkSpec& spec) {
  require(spec.inputs >= 1 && spec.outputs >= 1, ErrorCode::invalid_argument, "network needs inputs and outputs");
  require(spec.ambiguity_target >= 0.0 && spec.ambiguity_target <= 1.0, ErrorCode::invalid_argument,
          "ambiguity target must lie in [0, 1]");
  require(spec.reference_epsilon > 0.0, ErrorCode::invalid_argument, "reference epsilon must be positive");
  std::mt19937_64 rng(spec.seed);
  std::vector<Index> sizes{spec.inputs};
  sizes.insert(sizes.end(), spec.hidden.begin(), spec.hidden.end());
  sizes.push_back(spec.outputs);
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (std::size_t i = 1; i < sizes.size(); ++i) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(sizes[i - 1]));
    Matrix w(sizes[i], sizes[i - 1]);
    for (Index r = 0; r < w.rows(); ++r)
      for (Index c = 0; c < w.cols(); ++c) w(r, c) = bound * unit(rng);
    Vector b(sizes[i]);
    for (Index r = 0; r < b.size(); ++r) b[r] = 0.5 * unit(rng);
    weights.push_back(std::move(w));
    biases.push_back(std::move(b));
  }
  const Vector center =
      spec.reference_center.size() > 0 ? spec.reference_center : Vector::Constant(spec.inputs, 0.5);
  require(center.size() == spec.inputs, ErrorCode::dimension_mismatch, "reference centre has the wrong size");
  const InputDomain box(center.array() - spec.reference_epsilon, center.array() + spec.reference_epsilon);

  // Biases are set so the reference centre has pre-activations `biases`
  // at every scale; the weight scale then only widens the intervals.
  auto build = [&](double scale) {
    std::vector<Layer> layers;
    Vector activation = center;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      const bool hidden = i + 1 < weights.size();
      Matrix w = hidden ? Matrix(scale * weights[i]) : weights[i];
      Vector b = hidden ? Vector(biases[i] - w * activation) : biases[i];
      if (hidden) activation = biases[i].cwiseMax(0.0);
      layers.push_back(Layer::dense(std::move(w), std::move(b)));
    }
    return Network(std::move(layers));
  };
  auto accepted = [&](double fraction) {
    return spec.ambiguity_target == 0.0 ? fraction == 0.0 : std::abs(fraction - spec.ambiguity_target) <= 0.1;
  };

  // Ambiguity grows with the weight scale; bisect on log scale.
  double lo = std::log(1e-4), hi = std::log(1e4);
  GeneratedNetwork best{build(1.0), ambiguous_fraction(build(1.0), box), 1.0};
  if (accepted(best.ambiguous_fraction)) return best;
  double best_gap = std::numeric_limits<double>::infinity();
  for (int iter = 0; iter < 80; ++iter) {
    const double mid = 0.5 * (lo + hi);
    Network net = build(std::exp(mid));
    const double fraction = ambiguous_fraction(net, box);
    const double gap = std::abs(fraction - spec.ambiguity_target);
    if (accepted(fraction) && gap < best_gap) {
      best_gap = gap;
      best = {std::move(net), fraction, std::exp(mid)};
      if (gap <= 0.02) break;
    }
    (fraction > spec.ambiguity_target ? hi : lo) = mid;
  }
  require(accepted(best.ambiguous_fraction), ErrorCode::invalid_argument,
          "ambiguity target not reachable by rescaling the weights");
  return best;
}

std::string to_string(Difficulty d) {
  switch (d) {
    case Difficulty::easy: return "easy";
    case Difficulty::medium: return "medium";
    case Difficulty::hard: return "hard";
  }
  return "hard";
}

nlohmann::json property_record_to_json(const PropertyRecord& r) {
  nlohmann::json j = property_to_json(r.spec);
  j["difficulty"] = to_string(r.difficulty);
  j["solve_cost"] = r.solve_cost;
  j["timed_out"] = r.timed_out;
  return j;
}

PropertyRecord property_record_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  PropertyRecord r;
  r.spec = property_from_json(j, base_dir);
  const std::string tier = j.value("difficulty", "easy");
  r.difficulty = tier == "hard" ? Difficulty::hard : tier == "medium" ? Difficulty::medium : Difficulty::easy;
  r.solve_cost = j.value("solve_cost", 0.0);
  r.timed_out = j.value("timed_out", false);
  return r;
}

PropertyRecord binary_search_epsilon(const PropertySpec& prop, const EpsilonSearch& search) {
  require(search.lo > 0.0 && search.lo < search.hi, ErrorCode::invalid_argument, "epsilon search needs 0 < lo < hi");
  require(search.tol > 0.0, ErrorCode::invalid_argument, "epsilon tolerance must be positive");
  require(!search.branch_clock || search.bab.max_branches > 0, ErrorCode::invalid_argument,
          "the branch clock needs a positive branch cap");
  PropertyRecord record;
  auto run = [&](double eps) {
    ++record.bab_runs;
    PropertySpec p = prop;
    p.epsilon = eps;
    const auto [net, domain] = merge_property(p);
    return verify(net, domain, search.bab);
  };
  record.spec = prop;
  record.spec.epsilon = search.lo;
  VerificationResult best = run(search.lo);
  require(best.status != VerifyStatus::falsified, ErrorCode::invalid_argument,
          "property is false at the smallest epsilon");
  if (best.status == VerifyStatus::timeout) {
    record.timed_out = true;
    record.difficulty = Difficulty::hard;
    record.solve_cost = search.branch_clock ? static_cast<double>(best.branches) : best.wall_time;
    return record;
  }
  double lo = search.lo, hi = search.hi;
  while (hi - lo > search.tol * (1.0 + 1e-9)) {
    const double mid = 0.5 * (lo + hi);
    VerificationResult r = run(mid);
    if (r.status == VerifyStatus::verified) {
      lo = mid;
      best = std::move(r);
    } else {
      hi = mid;
    }
  }
  record.spec.epsilon = lo;
  const double cost = search.branch_clock ? static_cast<double>(best.branches) : best.wall_time;
  const double budget = search.branch_clock ? static_cast<double>(search.bab.max_branches) : search.bab.timeout_s;
  record.solve_cost = cost;
  record.difficulty = cost <= search.easy_fraction * budget     ? Difficulty::easy
                      : cost <= search.medium_fraction * budget ? Difficulty::medium
                                                                : Difficulty::hard;
  return record;
}

namespace {

std::uint64_t stream_seed(std::uint64_t seed, std::size_t index) {
  return seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(index) * 0xbf58476d1ce4e5b9ULL + 1;
}

/// Pushes children into the queue; returns true when one of them is a counterexample.
bool admit_children(std::pair<Subdomain, Subdomain>&& children, SubdomainQueue& queue, long& order) {
  for (Subdomain* c : {&children.first, &children.second}) {
    if (c->upper_bound < 0.0) return true;
    if (c->lower_bound >= 0.0) continue;
    c->order = order++;
    queue.push(std::move(*c));
  }
  return false;
}

std::vector<BranchSample> branch_samples_for(const Network& net, const InputDomain& domain,
                                             const BranchDataConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const bool full = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < config.full_fraction;
  std::uniform_int_distribution<int> cheap_steps(0, config.max_cheap_steps);
  const std::size_t limit = static_cast<std::size_t>(full ? config.full_run_cap : config.samples_per_property);
  const long branch_cap = config.bab.max_branches >= 0 ? config.bab.max_branches : std::numeric_limits<long>::max();

  const BabContext ctx{net, domain, config.bab};
  std::vector<BranchSample> samples;
  Subdomain root = root_subdomain(ctx);
  bound_subdomain(ctx, root);
  if (root.upper_bound < 0.0 || root.lower_bound >= 0.0) return samples;
  SubdomainQueue queue;
  long order = 1;
  queue.push(std::move(root));
  int cheap_left = full ? 0 : cheap_steps(rng);
  long branches = 0;
  while (!queue.empty() && samples.size() < limit && branches < branch_cap) {
    Subdomain sub = std::move(queue.pick_out_batch(1).front());
    std::pair<Subdomain, Subdomain> children;
    if (cheap_left > 0) {
      --cheap_left;
      auto split = split_relu(ctx, sub, babsr_decision(net, sub.stack).target());
      bound_subdomain(ctx, split.first, sub.lower_bound);
      bound_subdomain(ctx, split.second, sub.lower_bound);
      children = std::move(split);
    } else {
      auto sb = strong_branch(ctx, sub, strong_candidate_subset(net, sub.stack, config.bab.strong_candidates, rng));
      const InnerSolution inner = inner_minimize(net, sub.stack, sub.rho);
      samples.push_back({net, build_branch_features(net, sub.stack, inner, sub.rho), sb.candidates, sb.improvements});
      children = std::move(sb.children);
      if (!full) cheap_left = cheap_steps(rng);
    }
    branches += 2;
    if (admit_children(std::move(children), queue, order)) break;
  }
  return samples;
}

}  // namespace

std::vector<BranchSample> gen_branch_dataset(const std::vector<std::pair<Network, InputDomain>>& problems,
                                             const BranchDataConfig& config) {
  require(config.samples_per_property >= 0 && config.max_cheap_steps >= 0, ErrorCode::invalid_argument,
          "sample counts must be non-negative");
  std::vector<std::vector<BranchSample>> per_problem(problems.size());
  BranchDataConfig inner = config;
  inner.bab.policy = ExecutionPolicy::serial;
  parallel_for(problems.size(), config.bab.policy, [&](std::size_t i) {
    per_problem[i] = branch_samples_for(problems[i].first, problems[i].second, inner, stream_seed(config.seed, i));
  });
  std::vector<BranchSample> out;
  for (auto& samples : per_problem)
    for (auto& s : samples) out.push_back(std::move(s));
  return out;
}

std::vector<std::size_t> stratified_by_depth(const std::vector<int>& depths, std::size_t count, std::mt19937_64& rng) {
  std::vector<std::size_t> all(depths.size());
  std::iota(all.begin(), all.end(), 0);
  if (count >= depths.size()) return all;
  const int deepest = depths.empty() ? 0 : *std::max_element(depths.begin(), depths.end());
  std::vector<std::vector<std::size_t>> quartiles(4);
  for (std::size_t i = 0; i < depths.size(); ++i)
    quartiles[static_cast<std::size_t>(std::min(3, 4 * depths[i] / (deepest + 1)))].push_back(i);
  for (auto& q : quartiles) std::shuffle(q.begin(), q.end(), rng);
  std::vector<std::size_t> chosen;
  for (std::size_t round = 0; chosen.size() < count; ++round)
    for (auto& q : quartiles)
      if (round < q.size() && chosen.size() < count) chosen.push_back(q[round]);
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

std::vector<BoundSample> gen_bound_dataset(const std::vector<std::pair<Network, InputDomain>>& problems,
                                           const BoundDataConfig& config, const BoundTrainer& trainer) {
  require(config.rounds >= 1 && config.per_property >= 0, ErrorCode::invalid_argument,
          "bound data needs at least one round");
  require(config.rounds == 1 || static_cast<bool>(trainer), ErrorCode::invalid_argument,
          "later rounds need a bounding GNN trainer");
  BabConfig supergradient = config.bab;
  supergradient.backend = BoundingBackend::supergradient;
  supergradient.policy = ExecutionPolicy::serial;

  std::vector<BoundSample> dataset;
  for (int round = 1; round <= config.rounds; ++round) {
    BabConfig run = supergradient;
    if (round > 1) {
      run.backend = BoundingBackend::gnn;
      run.bound_params = std::make_shared<const ParameterSet>(trainer(dataset));
    }
    std::vector<std::vector<BoundSample>> per_problem(problems.size());
    parallel_for(problems.size(), config.bab.policy, [&](std::size_t i) {
      const auto& [net, domain] = problems[i];
      std::vector<Subdomain> seen;
      BabObserver observer;
      auto keep = [&](const Subdomain& s) {
        if (std::isfinite(s.lower_bound) && !ambiguous_neurons(s.stack).empty()) seen.push_back(s);
      };
      observer.enqueued = keep;
      observer.pruned = keep;
      verify(net, domain, run, observer);
      std::vector<int> depths;
      for (const auto& s : seen) depths.push_back(s.depth);
      std::mt19937_64 rng(stream_seed(config.seed + static_cast<std::uint64_t>(round), i));
      const BabContext ctx{net, domain, supergradient};
      for (std::size_t k : stratified_by_depth(depths, static_cast<std::size_t>(config.per_property), rng)) {
        const Subdomain& s = seen[k];
        const bool inherit = s.parent_rho.size() > 0;
        BoundSample sample{net, s.stack, s.splits, starting_duals(net, s.stack, inherit ? &s.parent_rho : nullptr),
                           s.lower_bound, s.depth};
        if (round > 1 || s.queue != QueueTag::main) {
          Subdomain reference = s;
          reference.queue = QueueTag::main;
          bound_subdomain(ctx, reference);
          sample.q_supg = reference.lower_bound;
        }
        per_problem[i].push_back(std::move(sample));
      }
    });
    for (auto& samples : per_problem)
      for (auto& s : samples) dataset.push_back(std::move(s));
  }
  return dataset;
}

}  // namespace babverify
