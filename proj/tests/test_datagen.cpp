/*
 * SPDX-FileCopyrightText: Copyright (c) 2026, babverify contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#include "babverify/datagen.hpp"

#include "babverify/io.hpp"

#include "properties.hpp"

#include <doctest.h>

#include <cmath>

using namespace babverify;
using babverify::testing::tiny_property;

namespace {

/// Two-class network on one input with f0 - f1 = 0.3 - |x - 0.5|.
PropertySpec notch_property() {
  Matrix w1(2, 1);
  w1 << 1.0, -1.0;
  Vector b1(2);
  b1 << -0.5, 0.5;
  Matrix w2(2, 2);
  w2 << -1.0, -1.0, 0.0, 0.0;
  Vector b2(2);
  b2 << 0.3, 0.0;
  PropertySpec p;
  p.base = std::make_shared<const Network>(std::vector<Layer>{Layer::dense(w1, b1), Layer::dense(w2, b2)});
  p.center = Vector::Constant(1, 0.5);
  p.label = 0;
  p.adv_label = 1;
  p.epsilon = 0.1;
  return p;
}

BabConfig lp_config() {
  BabConfig c;
  c.strategy = BranchingStrategy::babsr_sub;
  c.backend = BoundingBackend::lp;
  c.timeout_s = 60.0;
  c.policy = ExecutionPolicy::serial;
  return c;
}

/// Verified properties that the root LP cannot settle.
std::vector<std::pair<Network, InputDomain>> problems(std::uint64_t first, std::size_t count) {
  std::vector<std::pair<Network, InputDomain>> out;
  for (std::uint64_t s = first; out.size() < count; ++s) {
    auto p = tiny_property(s, {5, 4}, 3);
    if (p.minimum >= 0.0 && planet_lp_bound(p.net, linear_backward_bounds(p.net, p.domain)).value < 0.0)
      out.emplace_back(std::move(p.net), p.domain);
  }
  return out;
}

}  // namespace

TEST_CASE("random_network") {
  SUBCASE("zero target fixes every neuron") {
    RandomNetworkSpec spec;
    spec.ambiguity_target = 0.0;
    spec.seed = 5;
    const auto g = random_network(spec);
    CHECK(g.ambiguous_fraction == 0.0);
    const InputDomain box(Vector::Constant(4, 0.4), Vector::Constant(4, 0.6));
    CHECK(ambiguous_neurons(interval_bounds(g.net, box)).empty());
  }
  SUBCASE("same seed, same network") {
    RandomNetworkSpec spec;
    spec.seed = 9;
    CHECK(network_to_json(random_network(spec).net).dump() == network_to_json(random_network(spec).net).dump());
    spec.seed = 10;
    CHECK(network_to_json(random_network(spec).net).dump() != network_to_json(random_network({}).net).dump());
  }
  SUBCASE("half ambiguous on a 2x16 net") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      RandomNetworkSpec spec;
      spec.hidden = {16, 16};
      spec.ambiguity_target = 0.5;
      spec.seed = seed;
      const auto g = random_network(spec);
      CHECK(g.ambiguous_fraction >= 0.4);
      CHECK(g.ambiguous_fraction <= 0.6);
      const InputDomain box(Vector::Constant(4, 0.4), Vector::Constant(4, 0.6));
      CHECK(ambiguous_fraction(g.net, box) == g.ambiguous_fraction);
    }
  }
  SUBCASE("invalid target") {
    RandomNetworkSpec spec;
    spec.ambiguity_target = 1.5;
    CHECK_THROWS_AS(random_network(spec), Error);
  }
}

TEST_CASE("binary_search_epsilon") {
  EpsilonSearch search;
  search.bab = lp_config();
  search.lo = 1e-3;
  search.hi = 1.0;
  search.tol = 1e-3;
  SUBCASE("converges to the analytic radius") {
    const auto r = binary_search_epsilon(notch_property(), search);
    CHECK(std::abs(r.spec.epsilon - 0.3) <= search.tol);
    CHECK(r.spec.epsilon <= 0.3);
    CHECK_FALSE(r.timed_out);
    PropertySpec above = r.spec;
    above.epsilon += 2.0 * search.tol;
    const auto [net, domain] = merge_property(above);
    CHECK(verify(net, domain, search.bab).status == VerifyStatus::falsified);
    const auto [net_at, domain_at] = merge_property(r.spec);
    CHECK(verify(net_at, domain_at, search.bab).status == VerifyStatus::verified);
  }
  SUBCASE("a bracket of one tolerance costs one run") {
    search.lo = 0.1;
    search.hi = 0.1 + search.tol;
    const auto r = binary_search_epsilon(notch_property(), search);
    CHECK(r.bab_runs == 1);
    CHECK(r.spec.epsilon == 0.1);
  }
  SUBCASE("false at lo") {
    search.lo = 0.4;
    CHECK_THROWS_AS(binary_search_epsilon(notch_property(), search), Error);
  }
  SUBCASE("branch clock tiers") {
    search.branch_clock = true;
    search.bab.max_branches = 1000;
    const auto r = binary_search_epsilon(notch_property(), search);
    CHECK(r.difficulty == Difficulty::easy);
    CHECK(r.solve_cost <= 220.0);
    search.bab.max_branches = 0;
    CHECK_THROWS_AS(binary_search_epsilon(notch_property(), search), Error);
  }
  SUBCASE("record round trip") {
    PropertyRecord r;
    r.spec = notch_property();
    r.spec.network_path = "net.json";
    r.difficulty = Difficulty::medium;
    r.solve_cost = 2.5;
    const auto j = property_record_to_json(r);
    CHECK(j.at("difficulty") == "medium");
    CHECK(j.at("solve_cost") == 2.5);
    CHECK(j.at("epsilon") == 0.1);
  }
}

TEST_CASE("stratified_by_depth") {
  std::mt19937_64 rng(3);
  const std::vector<int> depths{0, 1, 1, 2, 3, 3, 4, 5, 6, 7, 7, 7, 7, 7, 7};
  const auto pick = stratified_by_depth(depths, 4, rng);
  REQUIRE(pick.size() == 4);
  std::set<int> quartiles;
  for (std::size_t i : pick) quartiles.insert(std::min(3, 4 * depths[i] / 8));
  CHECK(quartiles.size() == 4);
  CHECK(std::is_sorted(pick.begin(), pick.end()));
  CHECK(stratified_by_depth(depths, 100, rng).size() == depths.size());
}

TEST_CASE("gen_branch_dataset") {
  BranchDataConfig config;
  config.bab = lp_config();
  config.samples_per_property = 5;
  config.max_cheap_steps = 2;
  config.full_run_cap = 20;
  config.seed = 7;
  const auto data = problems(200, 6);
  const auto samples = gen_branch_dataset(data, config);
  CHECK_FALSE(samples.empty());
  for (const auto& s : samples) {
    REQUIRE(s.improvements.size() == static_cast<Index>(s.candidates.size()));
    CHECK(s.improvements.minCoeff() >= -1e-9);
    CHECK(s.improvements.maxCoeff() <= 1.0 + 1e-12);
  }
  SUBCASE("deterministic") {
    config.bab.policy = ExecutionPolicy::parallel;
    const auto again = gen_branch_dataset(data, config);
    REQUIRE(again.size() == samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i)
      CHECK(dump_line(branch_sample_to_json(again[i])) == dump_line(branch_sample_to_json(samples[i])));
  }
  SUBCASE("a property settled at the root gives no sample") {
    const Network plus({Layer::dense(Matrix::Ones(1, 1), Vector::Constant(1, 1.0))});
    CHECK(gen_branch_dataset({{plus, InputDomain(Vector::Zero(1), Vector::Ones(1))}}, config).empty());
  }
  SUBCASE("per-property cap") {
    config.full_fraction = 0.0;
    config.samples_per_property = 1;
    CHECK(gen_branch_dataset(data, config).size() <= data.size());
  }
}

TEST_CASE("gen_bound_dataset") {
  BoundDataConfig config;
  config.bab = lp_config();
  config.bab.supergradient_steps = 50;
  config.bab.supergradient_lr = 1e-2;
  config.bab.gnn_iterations = 10;
  config.per_property = 6;
  config.seed = 2;
  const auto data = problems(300, 4);
  SUBCASE("one round") {
    config.rounds = 1;
    const auto samples = gen_bound_dataset(data, config, nullptr);
    CHECK_FALSE(samples.empty());
    for (const auto& s : samples) {
      CHECK(std::isfinite(s.q_supg));
      REQUIRE(s.parent_rho.depth() == s.net.depth());
      for (int h = 1; h < s.net.depth(); ++h) CHECK(s.parent_rho.rho[h].size() == s.net.width(h));
      CHECK(s.q_supg >= dual_value(s.net, s.stack, s.parent_rho) - 1e-12);
    }
    config.rounds = 2;
    CHECK_THROWS_AS(gen_bound_dataset(data, config, nullptr), Error);
  }
  SUBCASE("later rounds train and append") {
    config.rounds = 2;
    int calls = 0;
    std::size_t first_round = 0;
    const auto samples = gen_bound_dataset(data, config, [&](const std::vector<BoundSample>& so_far) {
      ++calls;
      first_round = so_far.size();
      return prop1_parameters(8);
    });
    CHECK(calls == 1);
    CHECK(samples.size() > first_round);
    const auto again = gen_bound_dataset(data, config, [](const std::vector<BoundSample>&) { return prop1_parameters(8); });
    REQUIRE(again.size() == samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i)
      CHECK(dump_line(bound_sample_to_json(again[i])) == dump_line(bound_sample_to_json(samples[i])));
  }
}
