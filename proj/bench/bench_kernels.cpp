/*
 * SPDX-FileCopyrightText: Copyright (c) 2026, babverify contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#include "babverify/bab.hpp"
#include "babverify/datagen.hpp"

#include <benchmark/benchmark.h>

using namespace babverify;

namespace {

ExecutionPolicy policy_arg(const benchmark::State& state) {
  return state.range(0) == 0 ? ExecutionPolicy::serial : ExecutionPolicy::parallel;
}

struct Problem {
  Network net;
  InputDomain domain;
};

/// Output shifted halfway between the root linear bound and the centre
/// value, so the root is undecided and the search has to branch.
Problem make_problem(std::uint64_t seed) {
  RandomNetworkSpec spec;
  spec.inputs = 6;
  spec.hidden = {24, 24};
  spec.ambiguity_target = 0.4;
  spec.seed = seed;
  spec.reference_center = Vector::Constant(6, 0.5);
  const Network raw = random_network(spec).net;
  const InputDomain domain(Vector::Constant(6, 0.3), Vector::Constant(6, 0.7));
  const double root_lb = linear_backward_bounds(raw, domain).lower.back()(0);
  const double centre = forward(raw, spec.reference_center)(0);
  std::vector<Layer> layers(raw.layers().begin(), raw.layers().end());
  const Layer last = layers.back();
  layers.back() = Layer::dense(last.weights(), last.bias().array() - 0.5 * (root_lb + centre));
  return {Network(std::move(layers)), domain};
}

/// Supergradient bounds on a batch of split subdomains.
void BM_SupergradientBatch(benchmark::State& state) {
  const Problem p = make_problem(1);
  const auto root = compute_bounds(p.net, p.domain, {}, IntermediateMethod::linear);
  std::vector<BoundsStack> batch;
  for (const auto& [h, j] : ambiguous_neurons(root)) {
    if (batch.size() >= 32) break;
    for (auto phase : {Phase::active, Phase::inactive})
      batch.push_back(compute_bounds(p.net, p.domain, {Split{h, j, phase}}, IntermediateMethod::linear));
  }
  std::vector<double> bounds(batch.size());
  for (auto _ : state) {
    parallel_for(batch.size(), policy_arg(state), [&](std::size_t i) {
      bounds[i] = supergradient_ascent(p.net, batch[i], DualState::zeros(p.net), 50, 1e-2).best_q;
    });
    benchmark::DoNotOptimize(bounds.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(batch.size()));
}

/// Full verification runs with the batch expanded serially or in parallel.
void BM_Verify(benchmark::State& state) {
  const Problem p = make_problem(2);
  BabConfig config;
  config.backend = BoundingBackend::supergradient;
  config.supergradient_steps = 30;
  config.supergradient_lr = 1e-2;
  config.batch_size = 16;
  config.max_branches = 64;
  config.policy = policy_arg(state);
  long branches = 0;
  for (auto _ : state) {
    const auto r = verify(p.net, p.domain, config);
    branches = r.branches;
    benchmark::DoNotOptimize(r.global_lb);
  }
  state.counters["branches"] = static_cast<double>(branches);
}

}  // namespace

BENCHMARK(BM_SupergradientBatch)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Verify)->Arg(0)->Arg(1)->ArgName("parallel")->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
