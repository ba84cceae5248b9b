/*
 * SPDX-FileCopyrightText: Copyright (c) 2026, babverify contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include "babverify/adam.hpp"
#include "babverify/common.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace babverify {

/// Named dense tensors in a fixed insertion order. Vectors are stored as
/// 1×n row matrices.
class ParameterSet {
 public:
  ParameterSet() = default;
  explicit ParameterSet(nlohmann::json architecture) : architecture_(std::move(architecture)) {}

  Matrix& add(const std::string& name, Matrix value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Matrix& at(const std::string& name) const;
  Matrix& at(const std::string& name);
  const std::vector<std::string>& names() const { return names_; }
  std::size_t tensor_count() const { return names_.size(); }

  Index size() const;
  Vector flat() const;
  void set_flat(const Vector& values);
  /// Same names and shapes, all zeros.
  ParameterSet zeros_like() const;
  void set_zero();
  bool same_shapes(const ParameterSet& other) const;
  ParameterSet& operator+=(const ParameterSet& other);
  ParameterSet& operator*=(double s);

  const nlohmann::json& architecture() const { return architecture_; }
  nlohmann::json& architecture() { return architecture_; }

 private:
  std::vector<std::string> names_;
  std::vector<Matrix> values_;
  std::map<std::string, std::size_t> index_;
  nlohmann::json architecture_ = nlohmann::json::object();
};

/// Gradient accumulators mirror the parameter set exactly.
using GradientTape = ParameterSet;

/// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for a rows×fan_in matrix.
Matrix uniform_init(Index rows, Index fan_in, std::mt19937_64& rng);

using NodeId = int;

/// Reverse-mode recorder over row-batched matrices (rows are graph nodes,
/// columns are features). Parameter leaves accumulate into a GradientTape.
class Tape {
 public:
  explicit Tape(const ParameterSet& params) : params_(&params) {}

  NodeId param(const std::string& name);
  NodeId constant(Matrix value);
  /// a · b
  NodeId matmul(NodeId a, NodeId b);
  /// a · bᵀ
  NodeId matmul_bt(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  /// Adds the 1×c row `row` to every row of `a`.
  NodeId add_row(NodeId a, NodeId row);
  NodeId relu(NodeId a);
  NodeId scale(NodeId a, double s);
  /// Row i of `a` multiplied by s[i].
  NodeId scale_rows(NodeId a, const Vector& s);
  /// Elementwise product with a constant matrix of the same shape.
  NodeId mask(NodeId a, const Matrix& m);
  /// m · a for a constant matrix m.
  NodeId left_multiply(const Matrix& m, NodeId a);
  NodeId concat_cols(const std::vector<NodeId>& parts);
  NodeId concat_rows(const std::vector<NodeId>& parts);
  NodeId gather_rows(NodeId a, const std::vector<Index>& rows);

  const Matrix& value(NodeId n) const { return nodes_.at(static_cast<std::size_t>(n)).value; }
  std::size_t size() const { return nodes_.size(); }

  /// Propagates `seed` (shaped like value(out)) back to every parameter
  /// leaf, adding into `grads`. Can be called once per recording.
  void backward(NodeId out, const Matrix& seed, GradientTape& grads);

  /// Smallest nonzero |input| seen by any ReLU; gradient checks skip
  /// points where this is tiny. Exact zeros come from masked or empty
  /// inputs that no parameter reaches.
  double min_relu_margin() const { return min_margin_; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::function<void(std::vector<Node>&, GradientTape&)> back;
  };
  NodeId push(Matrix value, std::function<void(std::vector<Node>&, GradientTape&)> back);

  const ParameterSet* params_;
  std::vector<Node> nodes_;
  double min_margin_ = std::numeric_limits<double>::infinity();
  bool used_ = false;
};

/// Two-layer perceptron Linear-ReLU-Linear (or a single Linear when
/// `layers == 1`), optionally followed by a ReLU. Parameters live in a
/// ParameterSet under "<prefix>.w0", "<prefix>.b0", ...
struct Mlp {
  std::string prefix;
  int layers = 2;
  bool relu_output = false;

  static Mlp create(ParameterSet& params, const std::string& prefix, Index in, Index hidden, Index out,
                    std::mt19937_64& rng, int layers = 2, bool relu_output = false);
  NodeId apply(Tape& tape, NodeId x) const;
};

/// One Adam update on every tensor. Returns false, leaving the parameters
/// untouched, when any gradient entry is not finite.
bool adam_step(ParameterSet& params, const GradientTape& grads, double lr, AdamMoments& state,
               const AdamConstants& constants = {});

void save_params(const ParameterSet& params, const std::filesystem::path& path);
/// Loads a parameter file. When `expected_variant` is non-empty the stored
/// architecture must name that variant.
ParameterSet load_params(const std::filesystem::path& path, const std::string& expected_variant = {});
nlohmann::json params_to_json(const ParameterSet& params);
ParameterSet params_from_json(const nlohmann::json& j, const std::string& expected_variant = {});

std::string base64_encode(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> base64_decode(const std::string& text);

}  // namespace babverify
