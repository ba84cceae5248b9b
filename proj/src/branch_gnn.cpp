/*
 * SPDX-FileCopyrightText: Copyright (c) 2026, babverify contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#include "babverify/branch_gnn.hpp"

#include "babverify/io.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace babverify {

// ---------------------------------------------------------------------------
// Features

BranchFeatures build_branch_features(const Network& net, const BoundsStack& stack, const InnerSolution& inner,
                                     const DualState& rho) {
  const int depth = net.depth();
  require(stack.depth() == depth && rho.depth() == depth, ErrorCode::dimension_mismatch,
          "features: stack or duals do not match the network");
  require(!stack.infeasible, ErrorCode::invalid_argument, "features: infeasible subdomain");
  require(inner.z0.size() == net.input_dim() && static_cast<int>(inner.z.size()) == depth + 1,
          ErrorCode::dimension_mismatch, "features: inner solution does not match the network");

  BranchFeatures f;
  f.input.resize(net.input_dim(), kBranchInputFeatures);
  f.input.col(0) = stack.lower[0];
  f.input.col(1) = stack.upper[0];
  f.input.col(2) = inner.z0;

  f.activation.resize(depth);
  f.alpha.resize(depth);
  f.ambiguous.resize(depth);
  for (int h = 1; h < depth; ++h) {
    const LayerRelaxation relax = layer_relaxation(stack.lower[h], stack.upper[h]);
    // Downstream dual: coefficient of z_h in the next subproblem.
    const Vector next = h + 1 < depth ? Vector(net.layer(h).weights().transpose() * rho.rho[h + 1])
                                      : Vector(net.layer(h).weights().transpose() * Vector::Ones(net.width(h + 1)));
    Matrix& m = f.activation[h];
    m.resize(net.width(h), kBranchActivationFeatures);
    m.col(0) = stack.lower[h];
    m.col(1) = stack.upper[h];
    m.col(2) = relax.beta;
    m.col(3) = net.layer(h - 1).bias();
    m.col(4) = inner.zhat_a[h];
    m.col(5) = inner.z[h];
    m.col(6) = rho.rho[h];
    m.col(7) = next;
    f.alpha[h] = relax.alpha;
    f.ambiguous[h].resize(net.width(h));
    for (Index j = 0; j < net.width(h); ++j)
      f.ambiguous[h][j] = relax.state[static_cast<std::size_t>(j)] == NeuronState::ambiguous ? 1.0 : 0.0;
  }

  const Layer& last = net.layer(static_cast<std::size_t>(depth - 1));
  const Vector& before = depth > 1 ? inner.z[depth - 1] : inner.z0;
  f.output.resize(net.output_dim(), kBranchOutputFeatures);
  f.output.col(0) = stack.lower[depth];
  f.output.col(1) = stack.upper[depth];
  f.output.col(2) = last.bias();
  f.output.col(3) = last.weights() * before + last.bias();
  for (const Matrix* m : {&f.input, &f.output}) require(m->allFinite(), ErrorCode::non_finite, "non-finite feature");
  for (int h = 1; h < depth; ++h)
    require(f.activation[h].allFinite(), ErrorCode::non_finite, "non-finite feature");
  return f;
}

nlohmann::json branch_features_to_json(const BranchFeatures& f) {
  nlohmann::json layers = nlohmann::json::array();
  for (int h = 1; h < f.depth(); ++h)
    layers.push_back({{"features", matrix_to_json(f.activation[h])},
                      {"alpha", vector_to_json(f.alpha[h])},
                      {"ambiguous", vector_to_json(f.ambiguous[h])}});
  return {{"input", matrix_to_json(f.input)}, {"hidden", layers}, {"output", matrix_to_json(f.output)}};
}

BranchFeatures branch_features_from_json(const nlohmann::json& j) {
  try {
    BranchFeatures f;
    f.input = matrix_from_json(j.at("input"), kBranchInputFeatures);
    f.output = matrix_from_json(j.at("output"), kBranchOutputFeatures);
    const auto& layers = j.at("hidden");
    const int depth = static_cast<int>(layers.size()) + 1;
    f.activation.resize(depth);
    f.alpha.resize(depth);
    f.ambiguous.resize(depth);
    for (int h = 1; h < depth; ++h) {
      const auto& layer = layers.at(static_cast<std::size_t>(h - 1));
      f.activation[h] = matrix_from_json(layer.at("features"), kBranchActivationFeatures);
      f.alpha[h] = vector_from_json(layer.at("alpha"));
      f.ambiguous[h] = vector_from_json(layer.at("ambiguous"));
    }
    return f;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::io, std::string("malformed branch features: ") + e.what());
  }
}

BranchGraphState BranchGraphState::zeros(const Network& net, Index embedding) {
  BranchGraphState s;
  s.input = Matrix::Zero(net.input_dim(), embedding);
  s.activation.resize(net.depth());
  for (int h = 1; h < net.depth(); ++h) s.activation[h] = Matrix::Zero(net.width(h), embedding);
  s.output = Matrix::Zero(net.output_dim(), embedding);
  return s;
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

constexpr const char* kVariant = "branch";

struct BranchModules {
  Mlp f_inp{"f_inp"}, f_act_lf{"f_act_lf"}, f_act_nb{"f_act_nb"}, f_act_com{"f_act_com"};
  Mlp f_out_lf{"f_out_lf", 1, true}, f_out_com{"f_out_com"};
  Mlp b_act_lf1{"b_act_lf1"}, b_act_lf2{"b_act_lf2"}, b_act_nb{"b_act_nb"}, b_act_com{"b_act_com"};
  Mlp b_inp_lf{"b_inp_lf"}, b_inp_com{"b_inp_com"};
  Mlp score{"score"};
};

const BranchModules kModules;

}  // namespace

ParameterSet create_branch_params(const BranchGnnConfig& config, std::uint64_t seed) {
  require(config.embedding >= 1 && config.rounds >= 1, ErrorCode::invalid_argument,
          "branch GNN needs a positive embedding size and round count");
  const Index p = config.embedding;
  ParameterSet params(nlohmann::json{{"variant", kVariant},
                                     {"embedding", p},
                                     {"rounds", config.rounds},
                                     {"lp_features", config.lp_features},
                                     {"mlp_depth", 2},
                                     {"input_features", kBranchInputFeatures},
                                     {"activation_features", kBranchActivationFeatures},
                                     {"output_features", kBranchOutputFeatures}});
  std::mt19937_64 rng(seed);
  const BranchModules& m = kModules;
  Mlp::create(params, m.f_inp.prefix, kBranchInputFeatures, p, p, rng);
  Mlp::create(params, m.f_act_lf.prefix, kBranchActivationFeatures, p, p, rng);
  Mlp::create(params, m.f_act_nb.prefix, 2 * p, p, p, rng);
  Mlp::create(params, m.f_act_com.prefix, 2 * p, p, p, rng);
  Mlp::create(params, m.f_out_lf.prefix, kBranchOutputFeatures, 0, p, rng, 1, true);
  Mlp::create(params, m.f_out_com.prefix, 2 * p, p, p, rng);
  Mlp::create(params, m.b_act_lf1.prefix, kBranchActivationFeatures, p, p, rng);
  Mlp::create(params, m.b_act_lf2.prefix, 3 * p, p, p, rng);
  Mlp::create(params, m.b_act_nb.prefix, 2 * p, p, p, rng);
  Mlp::create(params, m.b_act_com.prefix, 2 * p, p, p, rng);
  Mlp::create(params, m.b_inp_lf.prefix, 2, p, p, rng);
  Mlp::create(params, m.b_inp_com.prefix, 2 * p, p, p, rng);
  Mlp::create(params, m.score.prefix, p, p, 1, rng);
  return params;
}

BranchGnnConfig branch_config(const ParameterSet& params) {
  const auto& a = params.architecture();
  require(a.value("variant", "") == kVariant, ErrorCode::architecture_mismatch,
          "parameters are not a branching GNN");
  BranchGnnConfig c;
  c.embedding = a.at("embedding").get<Index>();
  c.rounds = a.at("rounds").get<int>();
  c.lp_features = a.at("lp_features").get<bool>();
  require(params.at("f_inp.w1").rows() == c.embedding, ErrorCode::architecture_mismatch,
          "embedding size differs from stored tensors");
  return c;
}

// ---------------------------------------------------------------------------
// Message passing on a tape

Matrix backward_neighbor_operator(const Layer& next) {
  Matrix back = next.weights().transpose();
  if (next.kind() == LayerKind::conv2d) {
    for (Index j = 0; j < back.rows(); ++j) {
      const Index count = (back.row(j).array() != 0.0).count();
      if (count > 0) back.row(j) /= static_cast<double>(count);
    }
  }
  return back;
}

namespace {

/// Constant per-network operators used by the passes.
struct BranchGraph {
  std::vector<Matrix> forward_op;   // [h] = W_h, h = 1..L
  std::vector<Matrix> backward_op;  // [h] = W_{h+1}ᵀ, averaged over fan-out for conv, h = 0..L-1
  std::vector<Vector> alpha_prime;
  std::vector<Matrix> mask;         // ambiguous mask broadcast to p columns
  BranchFeatures features;          // after optional LP-feature removal
};

BranchGraph make_graph(const Network& net, const BranchFeatures& f, const BranchGnnConfig& config) {
  const int depth = net.depth();
  require(f.depth() == depth && f.input.rows() == net.input_dim() && f.output.rows() == net.output_dim(),
          ErrorCode::dimension_mismatch, "branch features do not match the network");
  BranchGraph g;
  g.features = f;
  if (!config.lp_features) {
    g.features.input.col(2).setZero();
    g.features.output.col(3).setZero();
    for (int h = 1; h < depth; ++h) g.features.activation[h].rightCols(4).setZero();
  }
  g.forward_op.resize(depth + 1);
  g.backward_op.resize(depth);
  for (int h = 1; h <= depth; ++h) {
    const Layer& layer = net.layer(static_cast<std::size_t>(h - 1));
    g.forward_op[h] = layer.weights();
    g.backward_op[h - 1] = backward_neighbor_operator(layer);
  }
  g.alpha_prime.resize(depth);
  g.mask.resize(depth);
  for (int h = 1; h < depth; ++h) {
    require(f.activation[h].rows() == net.width(h) && f.alpha[h].size() == net.width(h) &&
                f.ambiguous[h].size() == net.width(h),
            ErrorCode::dimension_mismatch, "branch features do not match the network");
    Vector ap = f.alpha[h];
    for (Index j = 0; j < ap.size(); ++j)
      if (ap[j] > 0.0 && ap[j] < 1.0) ap[j] = 1.0 - ap[j];
    g.alpha_prime[h] = ap;
    g.mask[h] = f.ambiguous[h].replicate(1, config.embedding);
  }
  return g;
}

struct StateNodes {
  NodeId input = -1;
  std::vector<NodeId> activation;
  NodeId output = -1;
};

StateNodes constant_state(Tape& tape, const BranchGraphState& s) {
  StateNodes n;
  n.input = tape.constant(s.input);
  n.activation.assign(s.activation.size(), -1);
  for (std::size_t h = 1; h < s.activation.size(); ++h) n.activation[h] = tape.constant(s.activation[h]);
  n.output = tape.constant(s.output);
  return n;
}

BranchGraphState state_values(const Tape& tape, const StateNodes& n) {
  BranchGraphState s;
  s.input = tape.value(n.input);
  s.activation.resize(n.activation.size());
  for (std::size_t h = 1; h < n.activation.size(); ++h) s.activation[h] = tape.value(n.activation[h]);
  s.output = tape.value(n.output);
  return s;
}

NodeId gated(Tape& t, NodeId e, const Vector& alpha, const Vector& alpha_prime) {
  return t.concat_cols({t.scale_rows(e, alpha), t.scale_rows(e, alpha_prime)});
}

void record_forward(Tape& t, const BranchGraph& g, StateNodes& s) {
  const BranchModules& m = kModules;
  const BranchFeatures& f = g.features;
  if (t.value(s.input).isZero(0.0)) s.input = m.f_inp.apply(t, t.constant(f.input));
  const int depth = static_cast<int>(g.forward_op.size()) - 1;
  for (int h = 1; h < depth; ++h) {
    const NodeId local = t.mask(m.f_act_lf.apply(t, t.constant(f.activation[h])), g.mask[h]);
    const NodeId below = h == 1 ? s.input : s.activation[h - 1];
    const NodeId e = t.left_multiply(g.forward_op[h], below);
    const NodeId nb = m.f_act_nb.apply(t, gated(t, e, f.alpha[h], g.alpha_prime[h]));
    s.activation[h] = m.f_act_com.apply(t, t.concat_cols({local, nb}));
  }
  const NodeId local = m.f_out_lf.apply(t, t.constant(f.output));
  const NodeId below = depth == 1 ? s.input : s.activation[depth - 1];
  const NodeId e = t.left_multiply(g.forward_op[depth], below);
  s.output = m.f_out_com.apply(t, t.concat_cols({local, e}));
}

void record_backward(Tape& t, const BranchGraph& g, StateNodes& s) {
  const BranchModules& m = kModules;
  const BranchFeatures& f = g.features;
  const int depth = static_cast<int>(g.forward_op.size()) - 1;
  for (int h = depth - 1; h >= 1; --h) {
    const NodeId local = t.mask(m.b_act_lf1.apply(t, t.constant(f.activation[h])), g.mask[h]);
    const NodeId weighted = t.concat_cols(
        {t.scale_rows(local, f.activation[h].col(6)), t.scale_rows(local, f.activation[h].col(7)), local});
    const NodeId local2 = t.mask(m.b_act_lf2.apply(t, weighted), g.mask[h]);
    const NodeId above = h + 1 == depth ? s.output : s.activation[h + 1];
    const NodeId e = t.left_multiply(g.backward_op[h], above);
    const NodeId nb = m.b_act_nb.apply(t, gated(t, e, f.alpha[h], g.alpha_prime[h]));
    s.activation[h] = m.b_act_com.apply(t, t.concat_cols({local2, nb}));
  }
  const NodeId local = m.b_inp_lf.apply(t, t.constant(Matrix(f.input.leftCols(2))));
  const NodeId above = depth == 1 ? s.output : s.activation[1];
  const NodeId e = t.left_multiply(g.backward_op[0], above);
  s.input = m.b_inp_com.apply(t, t.concat_cols({local, e}));
}

void check_state(const BranchGraphState& s, const Network& net, Index p) {
  bool ok = s.input.rows() == net.input_dim() && s.input.cols() == p && s.output.rows() == net.output_dim() &&
            s.output.cols() == p && static_cast<int>(s.activation.size()) == net.depth();
  for (int h = 1; ok && h < net.depth(); ++h)
    ok = s.activation[h].rows() == net.width(h) && s.activation[h].cols() == p;
  require(ok, ErrorCode::dimension_mismatch, "embedding state does not match the network");
}

/// Records `rounds` forward+backward sweeps from zero embeddings and the
/// score of every candidate (a K×1 node).
NodeId record_scores(Tape& t, const BranchGraph& g, const Network& net, const std::vector<Neuron>& candidates,
                     const BranchGnnConfig& config) {
  StateNodes s = constant_state(t, BranchGraphState::zeros(net, config.embedding));
  for (int r = 0; r < config.rounds; ++r) {
    record_forward(t, g, s);
    record_backward(t, g, s);
  }
  std::vector<NodeId> hidden;
  std::vector<Index> offset(static_cast<std::size_t>(net.depth()), 0);
  Index rows = 0;
  for (int h = 1; h < net.depth(); ++h) {
    offset[static_cast<std::size_t>(h)] = rows;
    rows += net.width(h);
    hidden.push_back(s.activation[h]);
  }
  std::vector<Index> picks;
  for (const auto& [layer, neuron] : candidates) {
    require(layer >= 1 && layer < net.depth() && neuron >= 0 && neuron < net.width(layer),
            ErrorCode::invalid_argument, "candidate is not a hidden neuron");
    picks.push_back(offset[static_cast<std::size_t>(layer)] + neuron);
  }
  const NodeId all = t.concat_rows(hidden);
  return kModules.score.apply(t, t.gather_rows(all, picks));
}

}  // namespace

BranchGraphState branch_forward_pass(const BranchGraphState& state, const BranchFeatures& features,
                                     const Network& net, const ParameterSet& params) {
  const BranchGnnConfig config = branch_config(params);
  check_state(state, net, config.embedding);
  const BranchGraph g = make_graph(net, features, config);
  Tape t(params);
  StateNodes s = constant_state(t, state);
  record_forward(t, g, s);
  return state_values(t, s);
}

BranchGraphState branch_backward_pass(const BranchGraphState& state, const BranchFeatures& features,
                                      const Network& net, const ParameterSet& params) {
  const BranchGnnConfig config = branch_config(params);
  check_state(state, net, config.embedding);
  const BranchGraph g = make_graph(net, features, config);
  Tape t(params);
  StateNodes s = constant_state(t, state);
  record_backward(t, g, s);
  return state_values(t, s);
}

Vector branch_scores(const Network& net, const BranchFeatures& features, const std::vector<Neuron>& candidates,
                     const ParameterSet& params) {
  require(!candidates.empty(), ErrorCode::empty_input, "no branching candidates");
  const BranchGnnConfig config = branch_config(params);
  const BranchGraph g = make_graph(net, features, config);
  Tape t(params);
  return t.value(record_scores(t, g, net, candidates, config)).col(0);
}

BranchDecision decide_from_scores(const std::vector<Neuron>& candidates, const Vector& scores) {
  require(!candidates.empty(), ErrorCode::empty_input, "no branching candidates");
  require(scores.size() == static_cast<Index>(candidates.size()), ErrorCode::dimension_mismatch,
          "scores and candidates differ in length");
  std::size_t best = 0;
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const double si = scores[static_cast<Index>(i)];
    const double sb = scores[static_cast<Index>(best)];
    if (si > sb || (si == sb && candidates[i] < candidates[best])) best = i;
  }
  return {candidates[best].first, candidates[best].second, scores[static_cast<Index>(best)]};
}

BranchDecision score_and_decide(const Network& net, const BranchFeatures& features,
                                const std::vector<Neuron>& candidates, const ParameterSet& params) {
  return decide_from_scores(candidates, branch_scores(net, features, candidates, params));
}

// ---------------------------------------------------------------------------
// Losses

double improvement_measure(double parent_lb, double child_lb1, double child_lb2) {
  require(parent_lb < 0.0, ErrorCode::invalid_argument, "improvement needs a negative parent bound");
  return (std::min(child_lb1, 0.0) + std::min(child_lb2, 0.0) - 2.0 * parent_lb) / (-2.0 * parent_lb);
}

std::vector<int> rank_labels(const Vector& improvements, int bins) {
  require(bins >= 1, ErrorCode::invalid_argument, "label binning needs at least one bin");
  const double top = improvements.size() > 0 ? improvements.maxCoeff() : 0.0;
  std::vector<int> labels(static_cast<std::size_t>(improvements.size()), 0);
  if (!(top > 0.0)) return labels;
  for (Index i = 0; i < improvements.size(); ++i) {
    const double normalized = std::max(0.0, improvements[i]) / top;
    labels[static_cast<std::size_t>(i)] = std::min(bins - 1, static_cast<int>(std::floor(normalized * bins)));
  }
  return labels;
}

namespace {

/// Rows (e_j - e_i) for every pair with labels[j] > labels[i].
Matrix pair_differences(const std::vector<int>& labels) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < labels.size(); ++i)
    for (std::size_t j = 0; j < labels.size(); ++j)
      if (labels[j] > labels[i]) pairs.emplace_back(j, i);
  Matrix d = Matrix::Zero(static_cast<Index>(pairs.size()), static_cast<Index>(labels.size()));
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    d(static_cast<Index>(k), static_cast<Index>(pairs[k].first)) = 1.0;
    d(static_cast<Index>(k), static_cast<Index>(pairs[k].second)) = -1.0;
  }
  return d;
}

}  // namespace

double hinge_rank_loss(const Vector& scores, const std::vector<int>& labels) {
  require(scores.size() == static_cast<Index>(labels.size()), ErrorCode::dimension_mismatch,
          "scores and labels differ in length");
  const Matrix d = pair_differences(labels);
  if (d.rows() == 0) return 0.0;
  return (1.0 - (d * scores).array()).max(0.0).sum() / static_cast<double>(d.rows());
}

nlohmann::json branch_sample_to_json(const BranchSample& s) {
  nlohmann::json candidates = nlohmann::json::array();
  for (const auto& [layer, neuron] : s.candidates) candidates.push_back({layer, neuron});
  return {{"network", network_to_json(s.net)},
          {"features", branch_features_to_json(s.features)},
          {"candidates", candidates},
          {"improvements", vector_to_json(s.improvements)}};
}

BranchSample branch_sample_from_json(const nlohmann::json& j) {
  try {
    BranchSample s{network_from_json(j.at("network")), branch_features_from_json(j.at("features")), {},
                   vector_from_json(j.at("improvements"))};
    for (const auto& c : j.at("candidates")) s.candidates.emplace_back(c.at(0).get<int>(), c.at(1).get<Index>());
    require(static_cast<Index>(s.candidates.size()) == s.improvements.size(), ErrorCode::io,
            "branch sample: candidate and improvement counts differ");
    return s;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::io, std::string("malformed branch sample: ") + e.what());
  }
}

SampleLoss branch_sample_loss(const BranchSample& sample, const ParameterSet& params, int bins,
                              GradientTape* grads) {
  const BranchGnnConfig config = branch_config(params);
  const BranchGraph g = make_graph(sample.net, sample.features, config);
  const Matrix d = pair_differences(rank_labels(sample.improvements, bins));
  if (d.rows() == 0) return {0.0, std::numeric_limits<double>::infinity()};
  Tape t(params);
  const NodeId scores = record_scores(t, g, sample.net, sample.candidates, config);
  const NodeId margins = t.sub(t.constant(Matrix::Ones(d.rows(), 1)), t.left_multiply(d, scores));
  const NodeId hinge = t.relu(margins);
  const NodeId loss = t.left_multiply(Matrix::Constant(1, d.rows(), 1.0 / static_cast<double>(d.rows())), hinge);
  const SampleLoss out{t.value(loss)(0, 0), t.min_relu_margin()};
  if (grads) t.backward(loss, Matrix::Ones(1, 1), *grads);
  return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

double mean_loss(const std::vector<const BranchSample*>& samples, const ParameterSet& params, int bins,
                 ExecutionPolicy policy) {
  if (samples.empty()) return 0.0;
  std::vector<double> values(samples.size());
  parallel_for(samples.size(), policy,
               [&](std::size_t i) { values[i] = branch_sample_loss(*samples[i], params, bins, nullptr).value; });
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

}  // namespace

BranchTrainResult train_branch_gnn(const std::vector<BranchSample>& dataset, const ParameterSet& params0,
                                   const BranchTrainConfig& config) {
  require(!dataset.empty(), ErrorCode::empty_input, "empty dataset");
  require(config.batch_size >= 1, ErrorCode::invalid_argument, "batch size must be positive");
  branch_config(params0);

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto held_out = dataset.size() > 1
                            ? static_cast<std::size_t>(std::floor(config.validation_fraction * dataset.size()))
                            : 0;
  std::vector<const BranchSample*> train, validation;
  for (std::size_t i = 0; i < order.size(); ++i) (i < held_out ? validation : train).push_back(&dataset[order[i]]);

  BranchTrainResult result{params0, {}, {}, 0};
  ParameterSet params = params0;
  AdamMoments adam;
  double lr = config.learning_rate;
  const auto& monitored = validation.empty() ? train : validation;
  double best = mean_loss(monitored, params, config.bins, config.policy);
  int since_best = 0;
  int since_decay = 0;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < train.size(); start += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, train.size() - start);
      std::vector<GradientTape> per_sample(count, params.zeros_like());
      std::vector<double> losses(count);
      parallel_for(count, config.policy, [&](std::size_t i) {
        losses[i] = branch_sample_loss(*train[start + i], params, config.bins, &per_sample[i]).value;
      });
      GradientTape grads = params.zeros_like();
      for (std::size_t i = 0; i < count; ++i) {
        grads += per_sample[i];
        epoch_loss += losses[i];
      }
      grads *= 1.0 / static_cast<double>(count);
      if (config.weight_decay > 0.0) {
        ParameterSet decay = params;
        decay *= config.weight_decay;
        grads += decay;
      }
      adam_step(params, grads, lr, adam);
    }
    result.train_loss.push_back(epoch_loss / static_cast<double>(train.size()));
    const double monitored_loss = mean_loss(monitored, params, config.bins, config.policy);
    if (!validation.empty()) result.validation_loss.push_back(monitored_loss);
    if (monitored_loss < best) {
      best = monitored_loss;
      result.params = params;
      result.best_epoch = epoch;
      since_best = 0;
      since_decay = 0;
    } else {
      ++since_best;
      if (++since_decay >= config.decay_patience) {
        lr /= config.decay_factor;
        since_decay = 0;
      }
      if (since_best >= config.stop_patience) break;
    }
  }
  return result;
}

FailsafeBranchOutcome failsafe_branch(const BranchDecision& gnn_decision, double gnn_improvement,
                                      const std::function<std::pair<BranchDecision, double>()>& backup,
                                      double threshold) {
  FailsafeBranchOutcome out{gnn_decision, gnn_improvement, false, false};
  if (gnn_improvement >= threshold || !backup) return out;
  out.backup_invoked = true;
  const auto [decision, improvement] = backup();
  if (improvement > gnn_improvement) {
    out.decision = decision;
    out.improvement = improvement;
    out.backup_chosen = true;
  }
  return out;
}

}  // namespace babverify
