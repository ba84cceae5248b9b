/*
 * SPDX-FileCopyrightText: Copyright (c) 2026, babverify contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#include "babverify/model.hpp"

#include <fstream>
#include <sstream>

namespace babverify {

namespace {

std::string dims(Index a, Index b) {
  std::ostringstream os;
  os << a << " vs " << b;
  return os.str();
}

}  // namespace

Layer Layer::dense(Matrix weights, Vector bias) {
  require(weights.rows() == bias.size(), ErrorCode::dimension_mismatch,
          "dense layer: weight rows and bias size differ (" + dims(weights.rows(), bias.size()) + ")");
  require(weights.rows() > 0 && weights.cols() > 0, ErrorCode::dimension_mismatch, "dense layer: empty weights");
  Layer layer;
  layer.kind_ = LayerKind::dense;
  layer.weights_ = std::move(weights);
  layer.bias_ = std::move(bias);
  return layer;
}

Layer Layer::conv2d(ConvKernel kernel, Vector channel_bias, int stride, int padding, Shape3 in_shape) {
  require(stride >= 1 && padding >= 0, ErrorCode::invalid_argument, "conv2d: bad stride/padding");
  require(kernel.in_channels == in_shape.channels, ErrorCode::dimension_mismatch,
          "conv2d: kernel input channels differ from input shape");
  require(static_cast<Index>(kernel.out_channels) == channel_bias.size(), ErrorCode::dimension_mismatch,
          "conv2d: bias size differs from output channels");
  require(kernel.data.size() == static_cast<std::size_t>(kernel.out_channels) * kernel.in_channels *
                                    kernel.rows * kernel.cols,
          ErrorCode::dimension_mismatch, "conv2d: kernel data size");
  const int out_h = (in_shape.height + 2 * padding - kernel.rows) / stride + 1;
  const int out_w = (in_shape.width + 2 * padding - kernel.cols) / stride + 1;
  require(out_h > 0 && out_w > 0, ErrorCode::dimension_mismatch, "conv2d: empty output");

  Layer layer;
  layer.kind_ = LayerKind::conv2d;
  layer.stride_ = stride;
  layer.padding_ = padding;
  layer.in_shape_ = in_shape;
  layer.out_shape_ = Shape3{kernel.out_channels, out_h, out_w};
  layer.channel_bias_ = std::move(channel_bias);
  layer.kernel_ = std::move(kernel);

  const ConvKernel& k = layer.kernel_;
  const Shape3 in = in_shape;
  const Shape3 out = layer.out_shape_;
  layer.weights_ = Matrix::Zero(out.size(), in.size());
  layer.bias_ = Vector(out.size());
  for (int o = 0; o < out.channels; ++o)
    for (int oy = 0; oy < out.height; ++oy)
      for (int ox = 0; ox < out.width; ++ox) {
        const Index row = (static_cast<Index>(o) * out.height + oy) * out.width + ox;
        layer.bias_[row] = layer.channel_bias_[o];
        for (int i = 0; i < in.channels; ++i)
          for (int ky = 0; ky < k.rows; ++ky)
            for (int kx = 0; kx < k.cols; ++kx) {
              const int iy = oy * stride - padding + ky;
              const int ix = ox * stride - padding + kx;
              if (iy < 0 || iy >= in.height || ix < 0 || ix >= in.width) continue;
              const Index col = (static_cast<Index>(i) * in.height + iy) * in.width + ix;
              layer.weights_(row, col) += k.at(o, i, ky, kx);
            }
      }
  return layer;
}

Vector Layer::apply(const Vector& x) const {
  require(x.size() == in_dim(), ErrorCode::dimension_mismatch, "layer input " + dims(x.size(), in_dim()));
  if (kind_ == LayerKind::dense) return weights_ * x + bias_;

  const ConvKernel& k = kernel_;
  Vector y(out_shape_.size());
  for (int o = 0; o < out_shape_.channels; ++o)
    for (int oy = 0; oy < out_shape_.height; ++oy)
      for (int ox = 0; ox < out_shape_.width; ++ox) {
        double acc = channel_bias_[o];
        for (int i = 0; i < in_shape_.channels; ++i)
          for (int ky = 0; ky < k.rows; ++ky) {
            const int iy = oy * stride_ - padding_ + ky;
            if (iy < 0 || iy >= in_shape_.height) continue;
            for (int kx = 0; kx < k.cols; ++kx) {
              const int ix = ox * stride_ - padding_ + kx;
              if (ix < 0 || ix >= in_shape_.width) continue;
              acc += k.at(o, i, ky, kx) * x[(static_cast<Index>(i) * in_shape_.height + iy) * in_shape_.width + ix];
            }
          }
        y[(static_cast<Index>(o) * out_shape_.height + oy) * out_shape_.width + ox] = acc;
      }
  return y;
}

std::pair<Matrix, Vector> conv_as_linear(const Layer& layer) {
  require(layer.kind() == LayerKind::conv2d, ErrorCode::invalid_argument, "conv_as_linear: layer is not conv2d");
  return {layer.weights(), layer.bias()};
}

Network::Network(std::vector<Layer> layers) : layers_(std::move(layers)) {
  require(!layers_.empty(), ErrorCode::invalid_argument, "network has no layers");
  for (std::size_t i = 1; i < layers_.size(); ++i)
    require(layers_[i - 1].out_dim() == layers_[i].in_dim(), ErrorCode::dimension_mismatch,
            "layer " + std::to_string(i) + " output does not feed layer " + std::to_string(i + 1) + " (" +
                dims(layers_[i - 1].out_dim(), layers_[i].in_dim()) + ")");
}

int Network::relu_count() const {
  Index n = 0;
  for (int h = 1; h < depth(); ++h) n += width(h);
  return static_cast<int>(n);
}

VerificationNetwork::VerificationNetwork(std::vector<Layer> layers) : VerificationNetwork(Network(std::move(layers))) {}

VerificationNetwork::VerificationNetwork(Network net) : Network(std::move(net)) {
  require(output_dim() == 1, ErrorCode::dimension_mismatch,
          "verification network must have a scalar output, got " + std::to_string(output_dim()));
}

InputDomain::InputDomain(Vector lo, Vector hi) : lower(std::move(lo)), upper(std::move(hi)) {
  require(lower.size() == upper.size(), ErrorCode::dimension_mismatch, "domain bounds differ in size");
  for (Index i = 0; i < lower.size(); ++i)
    require(lower[i] <= upper[i], ErrorCode::invalid_argument, "domain lower bound exceeds upper bound");
}

bool InputDomain::contains(const Vector& x, double tol) const {
  if (x.size() != lower.size()) return false;
  for (Index i = 0; i < x.size(); ++i)
    if (x[i] < lower[i] - tol || x[i] > upper[i] + tol) return false;
  return true;
}

Vector InputDomain::clip(const Vector& x) const { return x.cwiseMax(lower).cwiseMin(upper); }

std::pair<VerificationNetwork, InputDomain> merge_property(const PropertySpec& prop) {
  require(prop.base != nullptr, ErrorCode::invalid_argument, "property has no network");
  const Network& base = *prop.base;
  const Index classes = base.output_dim();
  require(prop.label != prop.adv_label, ErrorCode::invalid_argument, "label and adversarial label coincide");
  require(prop.label >= 0 && prop.label < classes && prop.adv_label >= 0 && prop.adv_label < classes,
          ErrorCode::dimension_mismatch, "label outside network output range");
  require(prop.epsilon > 0.0, ErrorCode::invalid_argument, "epsilon must be positive");
  require(prop.center.size() == base.input_dim(), ErrorCode::dimension_mismatch,
          "center " + dims(prop.center.size(), base.input_dim()));

  std::vector<Layer> layers(base.layers().begin(), base.layers().end() - 1);
  const Layer& last = base.layers().back();
  Matrix w = (last.weights().row(prop.label) - last.weights().row(prop.adv_label));
  Vector b(1);
  b[0] = last.bias()[prop.label] - last.bias()[prop.adv_label];
  layers.push_back(Layer::dense(std::move(w), std::move(b)));

  Vector lo = prop.center.array() - prop.epsilon;
  Vector hi = prop.center.array() + prop.epsilon;
  if (prop.clip) {
    lo = lo.cwiseMax(prop.clip->first).cwiseMin(prop.clip->second);
    hi = hi.cwiseMax(prop.clip->first).cwiseMin(prop.clip->second);
  }
  return {VerificationNetwork(std::move(layers)), InputDomain(std::move(lo), std::move(hi))};
}

Vector forward(const Network& net, const Vector& x) {
  require(x.size() == net.input_dim(), ErrorCode::dimension_mismatch,
          "network input " + dims(x.size(), net.input_dim()));
  Vector a = x;
  for (int i = 0; i < net.depth(); ++i) {
    a = net.layer(i).apply(a);
    if (i + 1 < net.depth()) a = a.cwiseMax(0.0);
  }
  return a;
}

std::vector<Vector> pre_activations(const Network& net, const Vector& x) {
  require(x.size() == net.input_dim(), ErrorCode::dimension_mismatch,
          "network input " + dims(x.size(), net.input_dim()));
  std::vector<Vector> out;
  out.reserve(net.depth() + 1);
  out.push_back(x);
  Vector a = x;
  for (int i = 0; i < net.depth(); ++i) {
    Vector pre = net.layer(i).apply(a);
    a = pre.cwiseMax(0.0);
    out.push_back(std::move(pre));
  }
  return out;
}

double evaluate(const VerificationNetwork& net, const Vector& x) { return forward(net, x)[0]; }

// ---------------------------------------------------------------------------
// JSON

namespace {

Vector vector_from_json(const nlohmann::json& j) {
  require(j.is_array(), ErrorCode::io, "expected a numeric array");
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Index>(i)] = j[i].get<double>();
  return v;
}

nlohmann::json vector_to_json(const Vector& v) {
  nlohmann::json j = nlohmann::json::array();
  for (Index i = 0; i < v.size(); ++i) j.push_back(v[i]);
  return j;
}

}  // namespace

Network network_from_json(const nlohmann::json& j) {
  try {
    std::vector<Layer> layers;
    for (const auto& jl : j.at("layers")) {
      const std::string kind = jl.at("kind").get<std::string>();
      if (kind == "dense") {
        const auto& jw = jl.at("weights");
        const Index rows = static_cast<Index>(jw.size());
        require(rows > 0, ErrorCode::io, "dense layer with no weight rows");
        const Index cols = static_cast<Index>(jw[0].size());
        Matrix w(rows, cols);
        for (Index r = 0; r < rows; ++r) {
          require(static_cast<Index>(jw[r].size()) == cols, ErrorCode::io, "ragged weight matrix");
          for (Index c = 0; c < cols; ++c) w(r, c) = jw[r][c].get<double>();
        }
        layers.push_back(Layer::dense(std::move(w), vector_from_json(jl.at("bias"))));
      } else if (kind == "conv2d") {
        const auto& jk = jl.at("kernel");
        ConvKernel k;
        k.out_channels = static_cast<int>(jk.size());
        k.in_channels = static_cast<int>(jk.at(0).size());
        k.rows = static_cast<int>(jk.at(0).at(0).size());
        k.cols = static_cast<int>(jk.at(0).at(0).at(0).size());
        k.data.assign(static_cast<std::size_t>(k.out_channels) * k.in_channels * k.rows * k.cols, 0.0);
        for (int o = 0; o < k.out_channels; ++o)
          for (int i = 0; i < k.in_channels; ++i)
            for (int r = 0; r < k.rows; ++r)
              for (int c = 0; c < k.cols; ++c) k.at(o, i, r, c) = jk.at(o).at(i).at(r).at(c).get<double>();
        const auto& js = jl.at("in_shape");
        Shape3 in{js.at(0).get<int>(), js.at(1).get<int>(), js.at(2).get<int>()};
        layers.push_back(Layer::conv2d(std::move(k), vector_from_json(jl.at("bias")), jl.value("stride", 1),
                                       jl.value("padding", 0), in));
      } else {
        fail(ErrorCode::io, "unknown layer kind '" + kind + "'");
      }
    }
    return Network(std::move(layers));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::io, std::string("malformed network JSON: ") + e.what());
  }
}

nlohmann::json network_to_json(const Network& net) {
  nlohmann::json layers = nlohmann::json::array();
  for (const Layer& layer : net.layers()) {
    nlohmann::json jl;
    if (layer.kind() == LayerKind::dense) {
      jl["kind"] = "dense";
      nlohmann::json w = nlohmann::json::array();
      for (Index r = 0; r < layer.weights().rows(); ++r) w.push_back(vector_to_json(layer.weights().row(r).transpose()));
      jl["weights"] = std::move(w);
      jl["bias"] = vector_to_json(layer.bias());
    } else {
      const ConvKernel& k = layer.kernel();
      jl["kind"] = "conv2d";
      nlohmann::json jk = nlohmann::json::array();
      for (int o = 0; o < k.out_channels; ++o) {
        nlohmann::json jo = nlohmann::json::array();
        for (int i = 0; i < k.in_channels; ++i) {
          nlohmann::json ji = nlohmann::json::array();
          for (int r = 0; r < k.rows; ++r) {
            nlohmann::json jr = nlohmann::json::array();
            for (int c = 0; c < k.cols; ++c) jr.push_back(k.at(o, i, r, c));
            ji.push_back(std::move(jr));
          }
          jo.push_back(std::move(ji));
        }
        jk.push_back(std::move(jo));
      }
      jl["kernel"] = std::move(jk);
      jl["stride"] = layer.stride();
      jl["padding"] = layer.padding();
      jl["in_shape"] = {layer.in_shape().channels, layer.in_shape().height, layer.in_shape().width};
      jl["bias"] = vector_to_json(layer.channel_bias());
    }
    layers.push_back(std::move(jl));
  }
  return nlohmann::json{{"layers", std::move(layers)}};
}

namespace {

nlohmann::json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::io, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::io, "malformed JSON in " + path.string() + ": " + e.what());
  }
}

}  // namespace

Network load_network(const std::filesystem::path& path) { return network_from_json(read_json_file(path)); }

void save_network(const Network& net, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(out.good(), ErrorCode::io, "cannot write " + path.string());
  out << network_to_json(net).dump() << '\n';
}

PropertySpec property_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  try {
    PropertySpec prop;
    prop.network_path = j.at("network").get<std::string>();
    std::filesystem::path net_path(prop.network_path);
    if (net_path.is_relative()) net_path = base_dir / net_path;
    prop.base = std::make_shared<const Network>(load_network(net_path));
    prop.center = vector_from_json(j.at("center"));
    prop.epsilon = j.at("epsilon").get<double>();
    prop.label = j.at("label").get<int>();
    prop.adv_label = j.at("adv_label").get<int>();
    if (j.contains("clip") && !j.at("clip").is_null())
      prop.clip = std::make_pair(j.at("clip").at(0).get<double>(), j.at("clip").at(1).get<double>());
    return prop;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::io, std::string("malformed property JSON: ") + e.what());
  }
}

PropertySpec load_property(const std::filesystem::path& path) {
  return property_from_json(read_json_file(path), path.parent_path());
}

nlohmann::json property_to_json(const PropertySpec& prop) {
  nlohmann::json j{{"network", prop.network_path},
                   {"center", vector_to_json(prop.center)},
                   {"epsilon", prop.epsilon},
                   {"label", prop.label},
                   {"adv_label", prop.adv_label}};
  if (prop.clip) j["clip"] = {prop.clip->first, prop.clip->second};
  return j;
}

}  // namespace babverify
