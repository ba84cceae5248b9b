/*
 * SPDX-FileCopyrightText: Copyright (c) 2026, babverify contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#include "babverify/bound_gnn.hpp"

#include "babverify/io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace babverify {

BoundFeatures build_bound_features(const DualState& rho, const InnerSolution& inner) {
  const int depth = rho.depth();
  require(static_cast<int>(inner.zhat_a.size()) == depth + 1 && static_cast<int>(inner.zhat_b.size()) == depth + 1,
          ErrorCode::dimension_mismatch, "bound features: inner solution does not match the duals");
  BoundFeatures f(static_cast<std::size_t>(std::max(depth, 1)));
  for (int h = 1; h < depth; ++h) {
    const Vector& r = rho.rho[h];
    require(inner.zhat_a[h].size() == r.size() && inner.zhat_b[h].size() == r.size(), ErrorCode::dimension_mismatch,
            "bound features: layer sizes differ");
    Matrix& m = f[static_cast<std::size_t>(h)];
    m.resize(r.size(), kBoundFeatures);
    m.col(0) = r;
    m.col(1) = inner.zhat_a[h];
    m.col(2) = inner.zhat_b[h];
    m.col(3) = inner.zhat_b[h] - inner.zhat_a[h];
  }
  return f;
}

NeighborCounts NeighborCounts::of(const Network& net) {
  NeighborCounts c;
  c.previous.resize(net.depth());
  c.following.resize(net.depth());
  for (int h = 1; h < net.depth(); ++h) {
    const auto in = (net.layer(static_cast<std::size_t>(h - 1)).weights().array() != 0.0).cast<double>();
    const auto out = (net.layer(static_cast<std::size_t>(h)).weights().array() != 0.0).cast<double>();
    c.previous[h] = in.rowwise().sum();
    c.following[h] = out.colwise().sum().transpose();
  }
  return c;
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

constexpr const char* kVariant = "bound";
const char* const kPassNames[] = {"fwd.self", "fwd.affine", "fwd.mean", "bwd.self", "bwd.affine", "bwd.mean"};

Mlp init_mlp(const BoundGnnConfig& c) { return Mlp{"init", c.init_hidden_layers + 1, false}; }

nlohmann::json architecture(const BoundGnnConfig& c) {
  return {{"variant", kVariant},
          {"embedding", c.embedding},
          {"init_hidden_layers", c.init_hidden_layers},
          {"passes", c.passes},
          {"features", kBoundFeatures}};
}

}  // namespace

ParameterSet create_bound_params(const BoundGnnConfig& config, std::uint64_t seed) {
  require(config.embedding >= 1 && config.passes >= 0 &&
              (config.init_hidden_layers == 0 || config.init_hidden_layers == 1),
          ErrorCode::invalid_argument, "unsupported bounding GNN configuration");
  const Index p = config.embedding;
  ParameterSet params(architecture(config));
  std::mt19937_64 rng(seed);
  Mlp::create(params, "init", kBoundFeatures, p, p, rng, config.init_hidden_layers + 1);
  for (const char* name : kPassNames) params.add(name, uniform_init(p, p, rng));
  params.add("score", uniform_init(1, p, rng));
  return params;
}

BoundGnnConfig bound_config(const ParameterSet& params) {
  const auto& a = params.architecture();
  require(a.value("variant", "") == kVariant, ErrorCode::architecture_mismatch,
          "parameters are not a bounding GNN");
  BoundGnnConfig c;
  c.embedding = a.at("embedding").get<Index>();
  c.init_hidden_layers = a.at("init_hidden_layers").get<int>();
  c.passes = a.at("passes").get<int>();
  require(params.at("score").cols() == c.embedding, ErrorCode::architecture_mismatch,
          "embedding size differs from stored tensors");
  return c;
}

ParameterSet prop1_parameters(Index embedding) {
  require(embedding >= 2, ErrorCode::invalid_argument, "the supergradient construction needs embedding >= 2");
  BoundGnnConfig config;
  config.embedding = embedding;
  ParameterSet params = create_bound_params(config, 0);
  params.set_zero();
  params.at("init.w0")(0, 3) = 1.0;
  params.at("init.w0")(1, 3) = -1.0;
  params.at("init.w1").setIdentity();
  params.at("fwd.self").setIdentity();
  params.at("bwd.self").setIdentity();
  params.at("score")(0, 0) = 1.0;
  params.at("score")(0, 1) = -1.0;
  return params;
}

// ---------------------------------------------------------------------------
// Passes

namespace {

struct BoundGraph {
  int depth = 0;
  std::vector<Matrix> weights;        // [h] = W_h, h = 1..L
  std::vector<Matrix> bias_rows;      // [h] = b_h 1ᵀ, h = 1..L
  std::vector<Matrix> mean_previous;  // [h], averages layer h-1 into h
  std::vector<Matrix> mean_following; // [h], averages layer h+1 into h
};

BoundGraph make_graph(const Network& net, Index p) {
  BoundGraph g;
  g.depth = net.depth();
  g.weights.resize(g.depth + 1);
  g.bias_rows.resize(g.depth + 1);
  for (int h = 1; h <= g.depth; ++h) {
    const Layer& layer = net.layer(static_cast<std::size_t>(h - 1));
    g.weights[h] = layer.weights();
    g.bias_rows[h] = layer.bias().replicate(1, p);
  }
  const NeighborCounts counts = NeighborCounts::of(net);
  g.mean_previous.resize(g.depth);
  g.mean_following.resize(g.depth);
  for (int h = 1; h < g.depth; ++h) {
    Matrix prev = (g.weights[h].array() != 0.0).cast<double>();
    for (Index j = 0; j < prev.rows(); ++j) prev.row(j) /= std::max(1.0, counts.previous[h][j]);
    Matrix next = (g.weights[h + 1].transpose().array() != 0.0).cast<double>();
    for (Index j = 0; j < next.rows(); ++j) next.row(j) /= std::max(1.0, counts.following[h][j]);
    g.mean_previous[h] = std::move(prev);
    g.mean_following[h] = std::move(next);
  }
  return g;
}

void check_layers(const std::vector<Matrix>& layers, const Network& net, Index cols, const char* what) {
  bool ok = static_cast<int>(layers.size()) == std::max(net.depth(), 1);
  for (int h = 1; ok && h < net.depth(); ++h)
    ok = layers[static_cast<std::size_t>(h)].rows() == net.width(h) && layers[static_cast<std::size_t>(h)].cols() == cols;
  require(ok, ErrorCode::dimension_mismatch, what);
}

std::vector<NodeId> record_init(Tape& t, const BoundFeatures& f, const BoundGnnConfig& c) {
  std::vector<NodeId> mu(f.size(), -1);
  const Mlp mlp = init_mlp(c);
  for (std::size_t h = 1; h < f.size(); ++h) mu[h] = mlp.apply(t, t.constant(f[h]));
  return mu;
}

void record_passes(Tape& t, const BoundGraph& g, std::vector<NodeId>& mu, int passes) {
  const int depth = g.depth;
  if (depth < 2) return;
  const NodeId fs = t.param("fwd.self"), fa = t.param("fwd.affine"), fm = t.param("fwd.mean");
  const NodeId bs = t.param("bwd.self"), ba = t.param("bwd.affine"), bm = t.param("bwd.mean");
  for (int pass = 0; pass < passes; ++pass) {
    for (int h = 1; h < depth; ++h) {
      NodeId sum = t.matmul_bt(mu[h], fs);
      NodeId affine = t.constant(g.bias_rows[h]);
      if (h > 1) {
        affine = t.add(t.left_multiply(g.weights[h], mu[h - 1]), affine);
        sum = t.add(sum, t.matmul_bt(t.left_multiply(g.mean_previous[h], mu[h - 1]), fm));
      }
      sum = t.add(sum, t.matmul_bt(affine, fa));
      mu[h] = t.relu(sum);
    }
    for (int h = depth - 1; h >= 1; --h) {
      NodeId sum = t.matmul_bt(mu[h], bs);
      NodeId above = t.constant(-g.bias_rows[h + 1]);
      if (h + 1 < depth) {
        above = t.add(mu[h + 1], above);
        sum = t.add(sum, t.matmul_bt(t.left_multiply(g.mean_following[h], mu[h + 1]), bm));
      }
      sum = t.add(sum, t.matmul_bt(t.left_multiply(g.weights[h + 1].transpose(), above), ba));
      mu[h] = t.relu(sum);
    }
  }
}

/// Per-layer direction nodes (n_h × 1).
std::vector<NodeId> record_output(Tape& t, const std::vector<NodeId>& mu) {
  std::vector<NodeId> out(mu.size(), -1);
  if (mu.size() < 2) return out;
  const NodeId score = t.param("score");
  for (std::size_t h = 1; h < mu.size(); ++h) out[h] = t.matmul_bt(mu[h], score);
  return out;
}

DualState to_duals(const Tape& t, const std::vector<NodeId>& out, int depth) {
  DualState d;
  d.rho.resize(static_cast<std::size_t>(depth) + 1);
  for (std::size_t h = 1; h < out.size(); ++h) d.rho[h] = t.value(out[h]).col(0);
  return d;
}

}  // namespace

std::vector<Matrix> bound_init_embed(const BoundFeatures& features, const ParameterSet& params) {
  const BoundGnnConfig c = bound_config(params);
  Tape t(params);
  const auto mu = record_init(t, features, c);
  std::vector<Matrix> out(features.size());
  for (std::size_t h = 1; h < mu.size(); ++h) out[h] = t.value(mu[h]);
  return out;
}

std::vector<Matrix> bound_forward_backward(const std::vector<Matrix>& embeddings, const Network& net,
                                           const ParameterSet& params) {
  const BoundGnnConfig c = bound_config(params);
  check_layers(embeddings, net, c.embedding, "embeddings do not match the network");
  Tape t(params);
  std::vector<NodeId> mu(embeddings.size(), -1);
  for (std::size_t h = 1; h < embeddings.size(); ++h) mu[h] = t.constant(embeddings[h]);
  record_passes(t, make_graph(net, c.embedding), mu, c.passes);
  std::vector<Matrix> out(embeddings.size());
  for (std::size_t h = 1; h < mu.size(); ++h) out[h] = t.value(mu[h]);
  return out;
}

DualState bound_output_duals(const std::vector<Matrix>& embeddings, const ParameterSet& params) {
  const BoundGnnConfig c = bound_config(params);
  Tape t(params);
  std::vector<NodeId> mu(embeddings.size(), -1);
  for (std::size_t h = 1; h < embeddings.size(); ++h) {
    require(embeddings[h].cols() == c.embedding, ErrorCode::dimension_mismatch, "embedding width differs");
    mu[h] = t.constant(embeddings[h]);
  }
  return to_duals(t, record_output(t, mu), static_cast<int>(embeddings.size()));
}

DualState bound_direction(const Network& net, const BoundFeatures& features, const ParameterSet& params) {
  const BoundGnnConfig c = bound_config(params);
  check_layers(features, net, kBoundFeatures, "bound features do not match the network");
  Tape t(params);
  auto mu = record_init(t, features, c);
  record_passes(t, make_graph(net, c.embedding), mu, c.passes);
  return to_duals(t, record_output(t, mu), net.depth());
}

// ---------------------------------------------------------------------------
// Dual iterations

double step_size(int t, double eta0, StepSchedule schedule) {
  require(t >= 1, ErrorCode::invalid_argument, "iteration index starts at 1");
  const double root = std::sqrt(static_cast<double>(t));
  return schedule == StepSchedule::inverse_sqrt ? eta0 / root : eta0 * root;
}

DualState dual_update(const DualState& rho, const DualState& direction, int t, double eta0, StepSchedule schedule) {
  require(rho.rho.size() == direction.rho.size(), ErrorCode::dimension_mismatch, "direction depth differs");
  const double eta = step_size(t, eta0, schedule);
  DualState out = rho;
  for (std::size_t h = 0; h < out.rho.size(); ++h) {
    require(direction.rho[h].size() == out.rho[h].size(), ErrorCode::dimension_mismatch, "direction size differs");
    out.rho[h] += eta * direction.rho[h];
  }
  return out;
}

BoundSolveResult bound_solve_with(const Network& net, const BoundsStack& stack, const DualState& rho0,
                                  const DirectionFn& direction, const BoundSolveOptions& options) {
  require(options.iterations >= 1, ErrorCode::invalid_argument, "at least one iteration is required");
  BoundSolveResult r;
  r.rho = rho0;
  r.best_rho = rho0;
  r.best_q = -std::numeric_limits<double>::infinity();
  InnerSolution inner = inner_minimize(net, stack, r.rho);
  for (int t = 1;; ++t) {
    if (std::isnan(inner.q) || inner.q == -std::numeric_limits<double>::infinity()) {
      r.finite = false;
      break;
    }
    r.trajectory.push_back(inner.q);
    if (inner.q > r.best_q) {
      r.best_q = inner.q;
      r.best_rho = r.rho;
    }
    if (inner.q == std::numeric_limits<double>::infinity() || t > options.iterations) break;
    r.rho = dual_update(r.rho, direction(r.rho, inner, t), t, options.eta0, options.schedule);
    ++r.updates;
    inner = inner_minimize(net, stack, r.rho);
  }
  return r;
}

BoundSolveResult gnn_bound_solve(const Network& net, const BoundsStack& stack, const DualState& rho0,
                                 const ParameterSet& params, const BoundSolveOptions& options) {
  bound_config(params);
  return bound_solve_with(
      net, stack, rho0,
      [&](const DualState& rho, const InnerSolution& inner, int) {
        return bound_direction(net, build_bound_features(rho, inner), params);
      },
      options);
}

// ---------------------------------------------------------------------------
// Loss and training

double default_kappa(double q_supg) { return std::max(0.01 * std::abs(q_supg), 1e-3); }

double bound_loss(const std::vector<double>& q, double q_supg, double gamma, double kappa) {
  if (q.empty() || !(q.back() < q_supg + kappa)) return 0.0;
  double loss = 0.0;
  double weight = 1.0;
  for (double value : q) {
    weight *= gamma;
    loss -= value * weight;
  }
  return loss;
}

nlohmann::json bound_sample_to_json(const BoundSample& s) {
  return {{"network", network_to_json(s.net)}, {"stack", stack_to_json(s.stack)},
          {"splits", splits_to_json(s.splits)}, {"parent_rho", duals_to_json(s.parent_rho)},
          {"q_supg", s.q_supg},                 {"depth", s.depth}};
}

BoundSample bound_sample_from_json(const nlohmann::json& j) {
  try {
    BoundSample s{network_from_json(j.at("network")), stack_from_json(j.at("stack")),
                  splits_from_json(j.at("splits")),   duals_from_json(j.at("parent_rho")),
                  j.at("q_supg").get<double>(),       j.value("depth", 0)};
    require(s.stack.depth() == s.net.depth() && s.parent_rho.depth() == s.net.depth(), ErrorCode::io,
            "bound sample: stack or duals do not match the network");
    for (int h = 1; h < s.net.depth(); ++h)
      require(s.parent_rho.rho[h].size() == s.net.width(h), ErrorCode::io, "bound sample: dual size mismatch");
    require(std::isfinite(s.q_supg), ErrorCode::io, "bound sample: q_supg must be finite");
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::io, std::string("malformed bound sample: ") + e.what());
  }
}

namespace {

/// A run under fixed parameters with everything the frozen replay needs.
struct Unrolled {
  std::vector<BoundFeatures> features;  // features[t-1] feed step t
  std::vector<DualState> rho;           // ρ⁰..ρ^K
  std::vector<double> q;                // q(ρ¹..ρ^K)
  std::vector<DualState> supergrad;     // at ρ¹..ρ^K
  std::vector<double> eta;              // η_1..η_K
};

Unrolled unroll(const BoundSample& s, const ParameterSet& params, const UnrollConfig& config) {
  require(config.horizon >= 1, ErrorCode::invalid_argument, "unroll horizon must be positive");
  Unrolled u;
  u.rho.push_back(s.parent_rho);
  InnerSolution inner = inner_minimize(s.net, s.stack, s.parent_rho);
  require(std::isfinite(inner.q), ErrorCode::non_finite, "bound sample has a non-finite starting bound");
  for (int t = 1; t <= config.horizon; ++t) {
    u.features.push_back(build_bound_features(u.rho.back(), inner));
    const DualState dir = bound_direction(s.net, u.features.back(), params);
    u.eta.push_back(step_size(t, config.solve.eta0, config.solve.schedule));
    u.rho.push_back(dual_update(u.rho.back(), dir, t, config.solve.eta0, config.solve.schedule));
    inner = inner_minimize(s.net, s.stack, u.rho.back());
    u.q.push_back(inner.q);
    u.supergrad.push_back(supergradient(inner));
  }
  return u;
}

double kappa_for(const BoundSample& s, const UnrollConfig& c) { return c.kappa < 0.0 ? default_kappa(s.q_supg) : c.kappa; }

}  // namespace

UnrollResult bound_sample_loss(const BoundSample& sample, const ParameterSet& params, const UnrollConfig& config,
                               GradientTape* grads) {
  const BoundGnnConfig c = bound_config(params);
  const Unrolled u = unroll(sample, params, config);
  UnrollResult r;
  r.q = u.q;
  r.best_q = *std::max_element(u.q.begin(), u.q.end());
  for (double v : u.q)
    if (!std::isfinite(v)) {
      r.loss = std::numeric_limits<double>::quiet_NaN();
      return r;
    }
  const double kappa = kappa_for(sample, config);
  r.loss = bound_loss(u.q, sample.q_supg, config.gamma, kappa);
  r.active = u.q.back() < sample.q_supg + kappa;
  if (!grads || !r.active) return r;

  const int horizon = config.horizon;
  std::vector<double> gamma_pow(static_cast<std::size_t>(horizon) + 1, 1.0);
  for (int t = 1; t <= horizon; ++t) gamma_pow[t] = gamma_pow[t - 1] * config.gamma;
  const BoundGraph graph = make_graph(sample.net, c.embedding);
  Vector lambda = Vector::Zero(u.rho.front().size());
  for (int t = horizon; t >= 1; --t) {
    lambda -= gamma_pow[t] * u.supergrad[t - 1].flat();
    Tape tape(params);
    auto mu = record_init(tape, u.features[t - 1], c);
    record_passes(tape, graph, mu, c.passes);
    const auto out = record_output(tape, mu);
    if (out.size() < 2) continue;
    const NodeId all = tape.concat_rows(std::vector<NodeId>(out.begin() + 1, out.end()));
    tape.backward(all, u.eta[t - 1] * lambda, *grads);
  }
  return r;
}

double bound_replay_loss(const BoundSample& sample, const ParameterSet& frozen_params, const ParameterSet& params,
                         const UnrollConfig& config) {
  const Unrolled u = unroll(sample, frozen_params, config);
  const double kappa = kappa_for(sample, config);
  if (!(u.q.back() < sample.q_supg + kappa)) return 0.0;
  Vector rho = u.rho.front().flat();
  double loss = 0.0;
  double weight = 1.0;
  for (int t = 1; t <= config.horizon; ++t) {
    rho += u.eta[t - 1] * bound_direction(sample.net, u.features[t - 1], params).flat();
    const double q = u.q[t - 1] + u.supergrad[t - 1].flat().dot(rho - u.rho[t].flat());
    weight *= config.gamma;
    loss -= weight * q;
  }
  return loss;
}

BoundTrainResult train_bound_gnn(const std::vector<BoundSample>& dataset, const ParameterSet& params0,
                                 const BoundTrainConfig& config) {
  require(!dataset.empty(), ErrorCode::empty_input, "empty dataset");
  require(config.batch_size >= 1, ErrorCode::invalid_argument, "batch size must be positive");
  bound_config(params0);
  BoundTrainResult result{params0, {}};
  ParameterSet& params = result.params;
  AdamMoments adam;
  double lr = config.learning_rate;
  double best = std::numeric_limits<double>::infinity();
  int stagnant = 0;
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, order.size() - start);
      std::vector<GradientTape> per_sample(count, params.zeros_like());
      std::vector<double> losses(count);
      parallel_for(count, config.policy, [&](std::size_t i) {
        losses[i] = bound_sample_loss(dataset[order[start + i]], params, config.unroll, &per_sample[i]).loss;
      });
      GradientTape grads = params.zeros_like();
      for (std::size_t i = 0; i < count; ++i) {
        if (!std::isfinite(losses[i])) continue;
        grads += per_sample[i];
        total += losses[i];
      }
      grads *= 1.0 / static_cast<double>(count);
      adam_step(params, grads, lr, adam);
    }
    result.epoch_loss.push_back(total);
    if (total < best) {
      best = total;
      stagnant = 0;
    } else if (++stagnant >= config.decay_patience) {
      lr /= config.decay_factor;
      stagnant = 0;
    }
  }
  return result;
}

BoundRoute failsafe_bound(double child_q, double parent_q, double threshold) {
  require(std::isfinite(child_q) && std::isfinite(parent_q), ErrorCode::non_finite,
          "fail-safe needs finite bounds");
  return child_q >= parent_q + threshold ? BoundRoute::accept : BoundRoute::supergradient_queue;
}

}  // namespace babverify
