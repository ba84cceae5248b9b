/*
 * SPDX-FileCopyrightText: Copyright (c) 2026, babverify contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#include "babverify/cli.hpp"

#include "babverify/io.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <type_traits>

namespace babverify {

namespace {

struct FieldBinding {
  std::string help;
  std::function<void(CLI::App&, RunConfig&, const std::string& flag)> add_flag;
  std::function<void(const RunConfig&, nlohmann::json&, const std::string& key)> save;
  std::function<void(RunConfig&, const nlohmann::json&)> load;
};

template <class T>
FieldBinding field_of(T RunConfig::*member, std::string help) {
  FieldBinding f;
  f.help = std::move(help);
  f.add_flag = [member, h = f.help](CLI::App& app, RunConfig& c, const std::string& flag) {
    if constexpr (std::is_same_v<T, bool>)
      app.add_flag(flag, c.*member, h);
    else if constexpr (std::is_same_v<T, std::vector<long>>)
      app.add_option(flag, c.*member, h)->delimiter(',');
    else
      app.add_option(flag, c.*member, h);
  };
  f.save = [member](const RunConfig& c, nlohmann::json& j, const std::string& key) { j[key] = c.*member; };
  f.load = [member](RunConfig& c, const nlohmann::json& v) { c.*member = v.get<T>(); };
  return f;
}

const std::map<std::string, FieldBinding>& fields() {
  static const std::map<std::string, FieldBinding> table{
      {"strategy", field_of(&RunConfig::strategy, "branching strategy: random, babsr_sub, strong, gnn")},
      {"backend", field_of(&RunConfig::backend, "bounding backend: interval, linear, lp, supergradient, gnn")},
      {"batch_size", field_of(&RunConfig::batch_size, "subdomains bounded per batch")},
      {"timeout", field_of(&RunConfig::timeout, "per-property timeout in seconds")},
      {"max_branches", field_of(&RunConfig::max_branches, "branch cap per property (< 0: none)")},
      {"sg_steps", field_of(&RunConfig::sg_steps, "supergradient ascent steps")},
      {"sg_lr", field_of(&RunConfig::sg_lr, "supergradient Adam learning rate")},
      {"gnn_iters", field_of(&RunConfig::gnn_iters, "bounding GNN iterations")},
      {"gnn_eta0", field_of(&RunConfig::gnn_eta0, "bounding GNN initial step size")},
      {"bound_failsafe", field_of(&RunConfig::bound_failsafe, "bounding fail-safe threshold")},
      {"branch_failsafe", field_of(&RunConfig::branch_failsafe, "branching fail-safe threshold")},
      {"strong_candidates", field_of(&RunConfig::strong_candidates, "strong-branching candidate budget (0: all)")},
      {"branch_params", field_of(&RunConfig::branch_params, "branching GNN parameter file")},
      {"bound_params", field_of(&RunConfig::bound_params, "bounding GNN parameter file")},
      {"seed", field_of(&RunConfig::seed, "random seed")},
      {"serial", field_of(&RunConfig::serial, "run kernels on one thread")},
      {"deterministic", field_of(&RunConfig::deterministic, "write time_s as 0 and use the branch clock")},
      {"networks", field_of(&RunConfig::networks, "networks to generate")},
      {"per_network", field_of(&RunConfig::per_network, "properties per network")},
      {"inputs", field_of(&RunConfig::inputs, "network input width")},
      {"hidden", field_of(&RunConfig::hidden, "hidden widths, comma separated")},
      {"classes", field_of(&RunConfig::classes, "network output width")},
      {"ambiguity", field_of(&RunConfig::ambiguity, "target ambiguous ReLU fraction")},
      {"eps_lo", field_of(&RunConfig::eps_lo, "epsilon search lower end")},
      {"eps_hi", field_of(&RunConfig::eps_hi, "epsilon search upper end")},
      {"eps_tol", field_of(&RunConfig::eps_tol, "epsilon search tolerance")},
      {"samples_per_property", field_of(&RunConfig::samples_per_property, "branching samples per property")},
      {"max_cheap_steps", field_of(&RunConfig::max_cheap_steps, "cheap branching steps between samples")},
      {"full_fraction", field_of(&RunConfig::full_fraction, "fraction of properties run to completion")},
      {"full_run_cap", field_of(&RunConfig::full_run_cap, "sample cap of a full run")},
      {"rounds", field_of(&RunConfig::rounds, "bounding data rounds")},
      {"per_property", field_of(&RunConfig::per_property, "bounding samples per property and round")},
      {"branch_embedding", field_of(&RunConfig::branch_embedding, "branching GNN embedding size")},
      {"branch_rounds", field_of(&RunConfig::branch_rounds, "branching GNN forward/backward rounds")},
      {"lp_features", field_of(&RunConfig::lp_features, "feed primal and dual features to the branching GNN")},
      {"branch_lr", field_of(&RunConfig::branch_lr, "branching GNN learning rate")},
      {"weight_decay", field_of(&RunConfig::weight_decay, "branching GNN weight decay")},
      {"branch_batch", field_of(&RunConfig::branch_batch, "branching GNN minibatch size")},
      {"branch_epochs", field_of(&RunConfig::branch_epochs, "branching GNN epoch cap")},
      {"bins", field_of(&RunConfig::bins, "rank label bins")},
      {"validation_fraction", field_of(&RunConfig::validation_fraction, "held-out fraction for early stopping")},
      {"bound_embedding", field_of(&RunConfig::bound_embedding, "bounding GNN embedding size")},
      {"bound_passes", field_of(&RunConfig::bound_passes, "bounding GNN forward/backward passes")},
      {"bound_lr", field_of(&RunConfig::bound_lr, "bounding GNN learning rate")},
      {"bound_epochs", field_of(&RunConfig::bound_epochs, "bounding GNN epochs")},
      {"bound_batch", field_of(&RunConfig::bound_batch, "bounding GNN minibatch size")},
      {"horizon", field_of(&RunConfig::horizon, "unrolled iterations in training")},
      {"gamma", field_of(&RunConfig::gamma, "discount of the unrolled loss")},
      {"kappa", field_of(&RunConfig::kappa, "clamp slack (< 0: default)")},
  };
  return table;
}

const std::vector<std::string> kCommon{"seed", "serial", "deterministic"};
const std::vector<std::string> kBab{"strategy",       "backend",         "batch_size",        "timeout",
                                    "max_branches",   "sg_steps",        "sg_lr",             "gnn_iters",
                                    "gnn_eta0",       "bound_failsafe",  "branch_failsafe",   "strong_candidates",
                                    "branch_params",  "bound_params"};
const std::vector<std::string> kBranchTrain{"branch_embedding", "branch_rounds", "lp_features", "branch_lr",
                                            "weight_decay",     "branch_batch",  "branch_epochs", "bins",
                                            "validation_fraction"};
const std::vector<std::string> kBoundTrain{"bound_embedding", "bound_passes", "bound_lr", "bound_epochs",
                                           "bound_batch",     "horizon",      "gamma",    "kappa", "gnn_eta0"};

void add_fields(CLI::App& app, RunConfig& config, std::initializer_list<const std::vector<std::string>*> groups) {
  std::set<std::string> added;
  for (const auto* group : groups)
    for (const auto& key : *group) {
      if (!added.insert(key).second) continue;
      std::string flag = "--" + key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      fields().at(key).add_flag(app, config, flag);
    }
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_cactus(const std::vector<nlohmann::json>& lines, std::ostream& csv, std::optional<double> timeout) {
  csv << "method,time_s,solved_percent\n";
  for (const auto& row : cactus_rows(lines, timeout))
    csv << row.method << ',' << format_double(row.time_s) << ',' << format_double(row.solved_percent) << '\n';
}

nlohmann::json parse_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::io, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::io, "malformed JSON in " + path.string() + ": " + e.what());
  }
}

/// Value of --config anywhere on the command line.
std::optional<std::string> config_path(const std::vector<std::string>& args) {
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
  }
  return std::nullopt;
}

/// Progress lines appended to the run log; a no-op without a path.
class RunLog {
 public:
  RunLog(const std::string& path, bool timestamps) : timestamps_(timestamps) {
    if (path.empty()) return;
    file_.open(path, std::ios::app);
    require(file_.good(), ErrorCode::io, "cannot write " + path);
  }

  void line(const std::string& text) {
    if (!file_.is_open()) return;
    if (timestamps_) {
      const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
      char stamp[32];
      std::snprintf(stamp, sizeof stamp, "[%9.3f] ", elapsed);
      file_ << stamp;
    }
    file_ << text << '\n';
    file_.flush();
  }

 private:
  bool timestamps_;
  std::ofstream file_;
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string log_path_for(const std::string& explicit_path, const std::string& output) {
  if (!explicit_path.empty()) return explicit_path;
  return output.empty() ? std::string() : output + ".log";
}

ExecutionPolicy policy_of(const RunConfig& c) {
  return c.serial ? ExecutionPolicy::serial : ExecutionPolicy::parallel;
}

std::uint64_t derived_seed(std::uint64_t seed, std::size_t index) {
  return seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(index) * 0xbf58476d1ce4e5b9ULL + 1;
}

int exit_code_of(VerifyStatus s) {
  switch (s) {
    case VerifyStatus::verified: return exit_verified;
    case VerifyStatus::falsified: return exit_falsified;
    case VerifyStatus::timeout: return exit_timeout;
  }
  return exit_error;
}

std::ofstream open_output(const std::string& path, std::ios::openmode mode = std::ios::trunc) {
  std::ofstream out(path, std::ios::out | mode);
  require(out.good(), ErrorCode::io, "cannot write " + path);
  return out;
}

std::vector<std::pair<Network, InputDomain>> load_problems(const std::string& manifest, RunLog& log) {
  const std::filesystem::path path(manifest);
  require(std::filesystem::exists(path), ErrorCode::io, "missing manifest " + manifest);
  std::vector<std::pair<Network, InputDomain>> problems;
  for (const auto& j : read_json_lines(path)) {
    const auto record = property_record_from_json(j, path.parent_path());
    if (record.timed_out) continue;
    auto [net, domain] = merge_property(record.spec);
    problems.emplace_back(Network(std::move(net)), std::move(domain));
  }
  log.line("loaded " + std::to_string(problems.size()) + " properties from " + manifest);
  return problems;
}

template <class Sample, class Parse>
std::vector<Sample> load_samples(const std::vector<std::string>& files, Parse parse) {
  std::vector<Sample> samples;
  for (const auto& f : files) {
    require(std::filesystem::exists(f), ErrorCode::io, "missing data file " + f);
    for (const auto& j : read_json_lines(f)) samples.push_back(parse(j));
  }
  require(!samples.empty(), ErrorCode::empty_input, "empty dataset");
  return samples;
}

BoundTrainConfig bound_train_config(const RunConfig& c) {
  BoundTrainConfig t;
  t.learning_rate = c.bound_lr;
  t.epochs = c.bound_epochs;
  t.batch_size = static_cast<std::size_t>(c.bound_batch);
  t.unroll.horizon = c.horizon;
  t.unroll.gamma = c.gamma;
  t.unroll.kappa = c.kappa;
  t.unroll.solve.iterations = c.horizon;
  t.unroll.solve.eta0 = c.gnn_eta0;
  t.seed = c.seed;
  t.policy = policy_of(c);
  return t;
}

BoundGnnConfig bound_gnn_config(const RunConfig& c) {
  BoundGnnConfig g;
  g.embedding = c.bound_embedding;
  g.passes = c.bound_passes;
  return g;
}

struct Session {
  RunConfig config;
  std::ostream& out;
  std::ostream& err;
};

int cmd_verify(const Session& s, const std::vector<std::string>& properties, const std::string& results,
               const std::string& id, const std::string& log_file) {
  require(id.empty() || properties.size() == 1, ErrorCode::invalid_argument, "--id needs exactly one property");
  RunLog log(log_path_for(log_file, results), !s.config.deterministic);
  const BabConfig bab = bab_config(s.config);
  std::vector<PropertySpec> specs;
  for (const auto& p : properties) specs.push_back(load_property(p));

  auto file = open_output(results, std::ios::app);
  file << dump_line({{"header", {{"command", "verify"}, {"config", run_config_to_json(s.config)}}}}) << '\n';
  int worst = exit_verified;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto [net, domain] = merge_property(specs[i]);
    const auto result = verify(net, domain, bab);
    const std::string pid = id.empty() ? std::filesystem::path(properties[i]).stem().string() : id;
    auto record = result_record(pid, result, bab);
    if (s.config.deterministic) record["time_s"] = 0.0;
    file << dump_line(record) << '\n';
    file.flush();
    log.line(pid + ": " + to_string(result.status) + " after " + std::to_string(result.branches) + " branches");
    worst = std::max(worst, exit_code_of(result.status));
  }
  return worst;
}

int cmd_gen_properties(const Session& s, const std::string& out_dir, const std::string& log_file) {
  const RunConfig& c = s.config;
  require(c.classes >= 2, ErrorCode::invalid_argument, "need at least two classes");
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path dir(out_dir);
  RunLog log(log_path_for(log_file, (dir / "properties.jsonl").string()), !c.deterministic);

  EpsilonSearch search;
  search.lo = c.eps_lo;
  search.hi = c.eps_hi;
  search.tol = c.eps_tol;
  search.bab = bab_config(c);
  search.branch_clock = c.deterministic;

  {
    auto config_file = open_output((dir / "config.json").string());
    config_file << dump_line(run_config_to_json(c)) << '\n';
  }
  std::vector<nlohmann::json> manifest;
  for (int n = 0; n < c.networks; ++n) {
    RandomNetworkSpec spec;
    spec.inputs = c.inputs;
    spec.hidden.assign(c.hidden.begin(), c.hidden.end());
    spec.outputs = c.classes;
    spec.ambiguity_target = c.ambiguity;
    spec.seed = derived_seed(c.seed, static_cast<std::size_t>(n));
    const auto generated = random_network(spec);
    char name[32];
    std::snprintf(name, sizeof name, "net_%03d.json", n);
    save_network(generated.net, dir / name);
    log.line(std::string(name) + ": ambiguous fraction " + format_double(generated.ambiguous_fraction));

    const auto base = std::make_shared<const Network>(generated.net);
    std::mt19937_64 rng(spec.seed ^ 0x5851f42d4c957f2dULL);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Vector center(c.inputs);
    for (Index i = 0; i < c.inputs; ++i) center(i) = unit(rng);
    // Classes by decreasing logit at the centre: the label, then the
    // adversarial targets closest to it.
    const Vector logits = forward(generated.net, center);
    std::vector<Index> ranked(static_cast<std::size_t>(c.classes));
    std::iota(ranked.begin(), ranked.end(), Index{0});
    std::stable_sort(ranked.begin(), ranked.end(), [&](Index a, Index b) { return logits(a) > logits(b); });
    const Index label = ranked.front();
    const long pairs = std::min<long>(c.per_network, c.classes - 1);
    for (long k = 1; k <= pairs; ++k) {
      PropertySpec prop;
      prop.base = base;
      prop.network_path = name;
      prop.center = center;
      prop.label = static_cast<int>(label);
      prop.adv_label = static_cast<int>(ranked[static_cast<std::size_t>(k)]);
      prop.epsilon = c.eps_lo;
      prop.clip = std::make_pair(0.0, 1.0);
      const std::string tag = std::string(name) + " vs " + std::to_string(prop.adv_label);
      try {
        const auto record = binary_search_epsilon(prop, search);
        if (record.timed_out) {
          log.line(tag + ": skipped, timed out at the lower end");
          continue;
        }
        manifest.push_back(property_record_to_json(record));
        log.line(tag + ": epsilon " + format_double(record.spec.epsilon) + ", " + to_string(record.difficulty));
      } catch (const Error& e) {
        if (e.code() != ErrorCode::invalid_argument) throw;
        log.line(tag + ": skipped, " + e.what());
      }
    }
  }
  write_json_lines(dir / "properties.jsonl", manifest);
  s.out << manifest.size() << " properties written to " << (dir / "properties.jsonl").string() << '\n';
  return exit_verified;
}

int cmd_gen_branch_data(const Session& s, const std::string& manifest, const std::string& out,
                        const std::string& log_file) {
  const RunConfig& c = s.config;
  RunLog log(log_path_for(log_file, out), !c.deterministic);
  BranchDataConfig config;
  config.samples_per_property = c.samples_per_property;
  config.max_cheap_steps = c.max_cheap_steps;
  config.full_fraction = c.full_fraction;
  config.full_run_cap = c.full_run_cap;
  config.bab = bab_config(c);
  config.seed = c.seed;
  const auto samples = gen_branch_dataset(load_problems(manifest, log), config);
  std::vector<nlohmann::json> lines;
  for (const auto& sample : samples) lines.push_back(branch_sample_to_json(sample));
  write_json_lines(out, lines);
  log.line("wrote " + std::to_string(lines.size()) + " branching samples");
  return exit_verified;
}

int cmd_gen_bound_data(const Session& s, const std::string& manifest, const std::string& out,
                       const std::string& log_file) {
  const RunConfig& c = s.config;
  RunLog log(log_path_for(log_file, out), !c.deterministic);
  BoundDataConfig config;
  config.rounds = c.rounds;
  config.per_property = c.per_property;
  config.bab = bab_config(c);
  config.seed = c.seed;
  const auto trainer = [&](const std::vector<BoundSample>& so_far) {
    log.line("training on " + std::to_string(so_far.size()) + " samples");
    const auto trained = train_bound_gnn(so_far, create_bound_params(bound_gnn_config(c), c.seed), bound_train_config(c));
    if (!trained.epoch_loss.empty()) log.line("final epoch loss " + format_double(trained.epoch_loss.back()));
    return trained.params;
  };
  const auto samples = gen_bound_dataset(load_problems(manifest, log), config, trainer);
  std::vector<nlohmann::json> lines;
  for (const auto& sample : samples) lines.push_back(bound_sample_to_json(sample));
  write_json_lines(out, lines);
  log.line("wrote " + std::to_string(lines.size()) + " bounding samples");
  return exit_verified;
}

int cmd_train_branch(const Session& s, const std::vector<std::string>& data, const std::string& out,
                     const std::string& log_file) {
  const RunConfig& c = s.config;
  RunLog log(log_path_for(log_file, out), !c.deterministic);
  const auto samples = load_samples<BranchSample>(data, branch_sample_from_json);
  log.line("training on " + std::to_string(samples.size()) + " samples");
  BranchGnnConfig arch;
  arch.embedding = c.branch_embedding;
  arch.rounds = c.branch_rounds;
  arch.lp_features = c.lp_features;
  BranchTrainConfig config;
  config.learning_rate = c.branch_lr;
  config.weight_decay = c.weight_decay;
  config.batch_size = static_cast<std::size_t>(c.branch_batch);
  config.max_epochs = c.branch_epochs;
  config.bins = c.bins;
  config.validation_fraction = c.validation_fraction;
  config.seed = c.seed;
  config.policy = policy_of(c);
  const auto result = train_branch_gnn(samples, create_branch_params(arch, c.seed), config);
  for (std::size_t e = 0; e < result.train_loss.size(); ++e) {
    std::string text = "epoch " + std::to_string(e) + " train " + format_double(result.train_loss[e]);
    if (e < result.validation_loss.size()) text += " validation " + format_double(result.validation_loss[e]);
    log.line(text);
  }
  log.line("best epoch " + std::to_string(result.best_epoch));
  save_params(result.params, out);
  return exit_verified;
}

int cmd_train_bound(const Session& s, const std::vector<std::string>& data, const std::string& out,
                    const std::string& log_file) {
  const RunConfig& c = s.config;
  RunLog log(log_path_for(log_file, out), !c.deterministic);
  const auto samples = load_samples<BoundSample>(data, bound_sample_from_json);
  log.line("training on " + std::to_string(samples.size()) + " samples");
  const auto result = train_bound_gnn(samples, create_bound_params(bound_gnn_config(c), c.seed), bound_train_config(c));
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e)
    log.line("epoch " + std::to_string(e) + " loss " + format_double(result.epoch_loss[e]));
  save_params(result.params, out);
  return exit_verified;
}

int cmd_eval_bounds(const Session& s, const std::vector<std::string>& data, const std::string& out,
                    const std::string& log_file) {
  const RunConfig& c = s.config;
  require(!c.bound_params.empty(), ErrorCode::invalid_argument, "eval-bounds needs --bound-params");
  RunLog log(log_path_for(log_file, out), !c.deterministic);
  const auto samples = load_samples<BoundSample>(data, bound_sample_from_json);
  const auto rows = eval_bound_rows(samples, load_params(c.bound_params, "bound"), c);
  std::ofstream file;
  if (!out.empty()) file = open_output(out);
  std::ostream& table = out.empty() ? s.out : file;
  table << "index,depth,q_start,linear,supergradient,gnn,q_supg,within_kappa\n";
  std::size_t within = 0;
  for (const auto& r : rows) {
    table << r.index << ',' << r.depth << ',' << format_double(r.q_start) << ',' << format_double(r.linear) << ','
          << format_double(r.supergradient) << ',' << format_double(r.gnn) << ',' << format_double(r.q_supg) << ','
          << (r.within_kappa ? 1 : 0) << '\n';
    within += r.within_kappa ? 1 : 0;
  }
  log.line("gnn within kappa of q_supg on " + std::to_string(within) + "/" + std::to_string(rows.size()));
  return exit_verified;
}

int cmd_export_cactus(const Session& s, const std::vector<std::string>& results, std::optional<double> timeout,
                      const std::string& out) {
  std::vector<nlohmann::json> lines;
  for (const auto& r : results) {
    require(std::filesystem::exists(r), ErrorCode::io, "missing results file " + r);
    const auto part = read_json_lines(r);
    lines.insert(lines.end(), part.begin(), part.end());
  }
  std::ofstream file;
  if (!out.empty()) file = open_output(out);
  std::ostream& csv = out.empty() ? s.out : file;
  write_cactus(lines, csv, timeout);
  return exit_verified;
}

}  // namespace

nlohmann::json run_config_to_json(const RunConfig& config) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [key, field] : fields()) field.save(config, j, key);
  return j;
}

void apply_run_config(RunConfig& config, const nlohmann::json& j) {
  require(j.is_object(), ErrorCode::invalid_argument, "config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    const auto it = fields().find(key);
    require(it != fields().end(), ErrorCode::invalid_argument, "unknown config key '" + key + "'");
    try {
      it->second.load(config, value);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::invalid_argument, "config key '" + key + "': " + e.what());
    }
  }
}

BabConfig bab_config(const RunConfig& c) {
  require(c.batch_size > 0, ErrorCode::invalid_argument, "batch size must be positive");
  BabConfig b;
  b.strategy = parse_strategy(c.strategy);
  b.backend = parse_backend(c.backend);
  b.batch_size = static_cast<std::size_t>(c.batch_size);
  b.timeout_s = c.timeout;
  b.max_branches = c.max_branches;
  b.supergradient_steps = c.sg_steps;
  b.supergradient_lr = c.sg_lr;
  b.gnn_iterations = c.gnn_iters;
  b.gnn_eta0 = c.gnn_eta0;
  b.bound_failsafe = c.bound_failsafe;
  b.branch_failsafe = c.branch_failsafe;
  b.strong_candidates = static_cast<std::size_t>(std::max(0, c.strong_candidates));
  if (!c.branch_params.empty())
    b.branch_params = std::make_shared<const ParameterSet>(load_params(c.branch_params, "branch"));
  if (!c.bound_params.empty())
    b.bound_params = std::make_shared<const ParameterSet>(load_params(c.bound_params, "bound"));
  b.seed = c.seed;
  b.policy = policy_of(c);
  return b;
}

std::vector<CactusRow> cactus_rows(const std::vector<nlohmann::json>& lines, std::optional<double> timeout) {
  double limit = std::numeric_limits<double>::infinity();
  std::map<std::string, std::pair<std::size_t, std::vector<double>>> methods;
  for (const auto& j : lines) {
    if (j.contains("header")) {
      if (!timeout) limit = j.at("header").at("config").value("timeout", limit);
      continue;
    }
    const double cap = timeout.value_or(limit);
    auto& [total, solved] = methods[j.at("strategy").get<std::string>() + "+" + j.at("backend").get<std::string>()];
    ++total;
    const double t = j.at("time_s").get<double>();
    if (j.at("status") != "timeout" && t <= cap) solved.push_back(t);
  }
  std::vector<CactusRow> rows;
  for (auto& [method, entry] : methods) {
    auto& [total, solved] = entry;
    std::sort(solved.begin(), solved.end());
    for (std::size_t k = 0; k < solved.size(); ++k)
      rows.push_back({method, solved[k], 100.0 * static_cast<double>(k + 1) / static_cast<double>(total)});
  }
  return rows;
}

void export_cactus(const std::filesystem::path& results, std::ostream& csv, std::optional<double> timeout) {
  require(std::filesystem::exists(results), ErrorCode::io, "missing results file " + results.string());
  write_cactus(read_json_lines(results), csv, timeout);
}

std::vector<BoundEvalRow> eval_bound_rows(const std::vector<BoundSample>& samples, const ParameterSet& params,
                                          const RunConfig& config) {
  std::vector<BoundEvalRow> rows(samples.size());
  BoundSolveOptions options;
  options.iterations = config.gnn_iters;
  options.eta0 = config.gnn_eta0;
  parallel_for(samples.size(), policy_of(config), [&](std::size_t i) {
    const BoundSample& s = samples[i];
    BoundEvalRow& r = rows[i];
    r.index = i;
    r.depth = s.depth;
    r.q_start = dual_value(s.net, s.stack, s.parent_rho);
    r.linear = s.stack.lower.back()(0);
    r.supergradient = supergradient_ascent(s.net, s.stack, s.parent_rho, config.sg_steps, config.sg_lr).best_q;
    r.gnn = gnn_bound_solve(s.net, s.stack, s.parent_rho, params, options).best_q;
    r.q_supg = s.q_supg;
    const double kappa = config.kappa < 0.0 ? default_kappa(s.q_supg) : config.kappa;
    r.within_kappa = r.gnn >= s.q_supg - kappa;
  });
  return rows;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  RunConfig config;
  CLI::App app{"Branch-and-bound verification of piecewise-linear networks", "babverify"};
  app.require_subcommand(1);
  try {
    if (const auto path = config_path(args)) apply_run_config(config, parse_json_file(*path));
    if (const char* env = std::getenv("BABVERIFY_SEED")) {
      try {
        config.seed = std::stoull(env);
      } catch (const std::exception&) {
        fail(ErrorCode::invalid_argument, std::string("BABVERIFY_SEED is not an integer: ") + env);
      }
    }

    std::string config_file, log_file, results = "results.jsonl", id, out_path, manifest;
    std::vector<std::string> inputs;
    std::optional<double> cactus_timeout;
    auto subcommand = [&](const std::string& name, const std::string& help,
                          std::initializer_list<const std::vector<std::string>*> groups) {
      CLI::App* sub = app.add_subcommand(name, help);
      sub->add_option("--config", config_file, "JSON config; flags override it");
      sub->add_option("--log", log_file, "run log file (default: <output>.log)");
      add_fields(*sub, config, groups);
      return sub;
    };

    CLI::App* verify_cmd = subcommand("verify", "verify properties and append result records", {&kCommon, &kBab});
    verify_cmd->add_option("--property", inputs, "property file")->required();
    verify_cmd->add_option("--results", results, "JSON-lines results file");
    verify_cmd->add_option("--id", id, "property id (default: file stem)");

    const std::vector<std::string> property_keys{"networks", "per_network", "inputs", "hidden", "classes",
                                                 "ambiguity", "eps_lo",      "eps_hi", "eps_tol"};
    CLI::App* gen_props = subcommand("gen-properties", "generate networks and properties with searched epsilon",
                                     {&kCommon, &kBab, &property_keys});
    gen_props->add_option("--out-dir", out_path, "output directory")->required();

    const std::vector<std::string> branch_data{"samples_per_property", "max_cheap_steps", "full_fraction",
                                               "full_run_cap"};
    CLI::App* gen_branch = subcommand("gen-branch-data", "strong-branching imitation data",
                                      {&kCommon, &kBab, &branch_data});
    gen_branch->add_option("--manifest", manifest, "properties.jsonl from gen-properties")->required();
    gen_branch->add_option("--out", out_path, "JSON-lines output")->required();

    const std::vector<std::string> bound_data{"rounds", "per_property"};
    CLI::App* gen_bound = subcommand("gen-bound-data", "subdomains for the bounding GNN",
                                     {&kCommon, &kBab, &bound_data, &kBoundTrain});
    gen_bound->add_option("--manifest", manifest, "properties.jsonl from gen-properties")->required();
    gen_bound->add_option("--out", out_path, "JSON-lines output")->required();

    CLI::App* train_branch = subcommand("train-branch", "train the branching GNN", {&kCommon, &kBranchTrain});
    train_branch->add_option("--data", inputs, "branching data files")->required();
    train_branch->add_option("--out", out_path, "parameter file")->required();

    CLI::App* train_bound = subcommand("train-bound", "train the bounding GNN", {&kCommon, &kBoundTrain});
    train_bound->add_option("--data", inputs, "bounding data files")->required();
    train_bound->add_option("--out", out_path, "parameter file")->required();

    const std::vector<std::string> eval_keys{"sg_steps", "sg_lr", "gnn_iters", "gnn_eta0", "bound_params", "kappa"};
    CLI::App* eval = subcommand("eval-bounds", "per-subdomain bound table", {&kCommon, &eval_keys});
    eval->add_option("--data", inputs, "bounding data files")->required();
    eval->add_option("--out", out_path, "CSV output (default: stdout)");

    CLI::App* cactus = app.add_subcommand("export-cactus", "cactus-plot CSV from result files");
    cactus->add_option("--results", inputs, "JSON-lines results files")->required();
    cactus->add_option("--timeout", cactus_timeout, "timeout in seconds (default: from the header)");
    cactus->add_option("--out", out_path, "CSV output (default: stdout)");

    std::vector<std::string> argv_tail(args.size() > 1 ? args.begin() + 1 : args.end(), args.end());
    std::reverse(argv_tail.begin(), argv_tail.end());
    app.parse(argv_tail);

    const Session session{config, out, err};
    if (*verify_cmd) return cmd_verify(session, inputs, results, id, log_file);
    if (*gen_props) return cmd_gen_properties(session, out_path, log_file);
    if (*gen_branch) return cmd_gen_branch_data(session, manifest, out_path, log_file);
    if (*gen_bound) return cmd_gen_bound_data(session, manifest, out_path, log_file);
    if (*train_branch) return cmd_train_branch(session, inputs, out_path, log_file);
    if (*train_bound) return cmd_train_bound(session, inputs, out_path, log_file);
    if (*eval) return cmd_eval_bounds(session, inputs, out_path, log_file);
    if (*cactus) return cmd_export_cactus(session, inputs, cactus_timeout, out_path);
    return exit_error;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : exit_error;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_error;
  }
}

}  // namespace babverify
