/*
 * SPDX-FileCopyrightText: Copyright (c) 2026, babverify contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include "babverify/common.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <memory>
#include <optional>
#include <utility>
#include <vector>

namespace babverify {

enum class LayerKind { dense, conv2d };

struct Shape3 {
  int channels = 0;
  int height = 0;
  int width = 0;
  int size() const { return channels * height * width; }
  bool operator==(const Shape3&) const = default;
};

/// 4-D convolution kernel in (out_channel, in_channel, row, col) order.
struct ConvKernel {
  int out_channels = 0;
  int in_channels = 0;
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  double at(int o, int i, int r, int c) const {
    return data[((static_cast<std::size_t>(o) * in_channels + i) * rows + r) * cols + c];
  }
  double& at(int o, int i, int r, int c) {
    return data[((static_cast<std::size_t>(o) * in_channels + i) * rows + r) * cols + c];
  }
};

/// One affine layer. Conv layers keep their native kernel for evaluation and
/// carry an explicit matrix view, built at construction, for the per-neuron
/// bound and dual math. Activations are flattened channel-major (c, h, w).
class Layer {
 public:
  static Layer dense(Matrix weights, Vector bias);
  static Layer conv2d(ConvKernel kernel, Vector channel_bias, int stride, int padding, Shape3 in_shape);

  LayerKind kind() const { return kind_; }
  Index in_dim() const { return weights_.cols(); }
  Index out_dim() const { return weights_.rows(); }

  /// Native forward map (direct convolution for conv layers).
  Vector apply(const Vector& x) const;

  /// Explicit linear view: apply(x) == weights() * x + bias().
  const Matrix& weights() const { return weights_; }
  const Vector& bias() const { return bias_; }

  const ConvKernel& kernel() const { return kernel_; }
  const Vector& channel_bias() const { return channel_bias_; }
  int stride() const { return stride_; }
  int padding() const { return padding_; }
  Shape3 in_shape() const { return in_shape_; }
  Shape3 out_shape() const { return out_shape_; }

 private:
  Layer() = default;

  LayerKind kind_ = LayerKind::dense;
  Matrix weights_;
  Vector bias_;
  ConvKernel kernel_;
  Vector channel_bias_;
  int stride_ = 1;
  int padding_ = 0;
  Shape3 in_shape_;
  Shape3 out_shape_;
};

/// Explicit (matrix, bias) pair reproducing a conv layer.
std::pair<Matrix, Vector> conv_as_linear(const Layer& layer);

/// Alternating affine/ReLU stack: ReLU after every layer except the last.
/// Hidden layer h (1-based) is the output of layers()[h - 1].
class Network {
 public:
  explicit Network(std::vector<Layer> layers);

  const std::vector<Layer>& layers() const { return layers_; }
  const Layer& layer(std::size_t i) const { return layers_.at(i); }
  /// Number of affine layers, L.
  int depth() const { return static_cast<int>(layers_.size()); }
  Index input_dim() const { return layers_.front().in_dim(); }
  Index output_dim() const { return layers_.back().out_dim(); }
  /// Width of pre-activation layer h in [1, L]; h = 0 is the input.
  Index width(int h) const { return h == 0 ? input_dim() : layers_.at(h - 1).out_dim(); }
  int relu_count() const;

 private:
  std::vector<Layer> layers_;
};

/// Network with a single scalar output whose sign decides the property.
class VerificationNetwork : public Network {
 public:
  explicit VerificationNetwork(std::vector<Layer> layers);
  explicit VerificationNetwork(Network net);
};

struct InputDomain {
  Vector lower;
  Vector upper;

  InputDomain() = default;
  InputDomain(Vector lo, Vector hi);
  Index dim() const { return lower.size(); }
  bool contains(const Vector& x, double tol = 0.0) const;
  Vector clip(const Vector& x) const;
};

struct PropertySpec {
  std::shared_ptr<const Network> base;
  int label = 0;
  int adv_label = 1;
  Vector center;
  double epsilon = 0.0;
  std::optional<std::pair<double, double>> clip;
  /// Source file of `base`, kept so the property can be written back out.
  std::string network_path;
};

std::pair<VerificationNetwork, InputDomain> merge_property(const PropertySpec& prop);

/// Full output vector of a general network.
Vector forward(const Network& net, const Vector& x);
/// Pre-activation values for h = 1..L (index 0 holds the input).
std::vector<Vector> pre_activations(const Network& net, const Vector& x);
/// Scalar output of a verification network.
double evaluate(const VerificationNetwork& net, const Vector& x);

// JSON interchange.
Network network_from_json(const nlohmann::json& j);
nlohmann::json network_to_json(const Network& net);
Network load_network(const std::filesystem::path& path);
void save_network(const Network& net, const std::filesystem::path& path);
PropertySpec property_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
PropertySpec load_property(const std::filesystem::path& path);
nlohmann::json property_to_json(const PropertySpec& prop);

}  // namespace babverify
