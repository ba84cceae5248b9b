/*
 * SPDX-FileCopyrightText: Copyright (c) 2026, babverify contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#include "babverify/gnn.hpp"

#include <boost/archive/iterators/base64_from_binary.hpp>
#include <boost/archive/iterators/binary_from_base64.hpp>
#include <boost/archive/iterators/transform_width.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace babverify {

// ---------------------------------------------------------------------------
// ParameterSet

Matrix& ParameterSet::add(const std::string& name, Matrix value) {
  require(!contains(name), ErrorCode::invalid_argument, "duplicate parameter '" + name + "'");
  index_[name] = names_.size();
  names_.push_back(name);
  values_.push_back(std::move(value));
  return values_.back();
}

const Matrix& ParameterSet::at(const std::string& name) const {
  const auto it = index_.find(name);
  require(it != index_.end(), ErrorCode::invalid_argument, "unknown parameter '" + name + "'");
  return values_[it->second];
}

Matrix& ParameterSet::at(const std::string& name) {
  const auto it = index_.find(name);
  require(it != index_.end(), ErrorCode::invalid_argument, "unknown parameter '" + name + "'");
  return values_[it->second];
}

Index ParameterSet::size() const {
  Index n = 0;
  for (const Matrix& m : values_) n += m.size();
  return n;
}

Vector ParameterSet::flat() const {
  Vector out(size());
  Index at = 0;
  for (const Matrix& m : values_) {
    out.segment(at, m.size()) = m.reshaped();
    at += m.size();
  }
  return out;
}

void ParameterSet::set_flat(const Vector& v) {
  require(v.size() == size(), ErrorCode::dimension_mismatch, "flat parameter vector has wrong size");
  Index at = 0;
  for (Matrix& m : values_) {
    m.reshaped() = v.segment(at, m.size());
    at += m.size();
  }
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out(architecture_);
  for (std::size_t i = 0; i < names_.size(); ++i)
    out.add(names_[i], Matrix::Zero(values_[i].rows(), values_[i].cols()));
  return out;
}

void ParameterSet::set_zero() {
  for (Matrix& m : values_) m.setZero();
}

bool ParameterSet::same_shapes(const ParameterSet& other) const {
  if (names_ != other.names_) return false;
  for (std::size_t i = 0; i < values_.size(); ++i)
    if (values_[i].rows() != other.values_[i].rows() || values_[i].cols() != other.values_[i].cols()) return false;
  return true;
}

ParameterSet& ParameterSet::operator+=(const ParameterSet& other) {
  require(same_shapes(other), ErrorCode::dimension_mismatch, "parameter sets differ in layout");
  for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += other.values_[i];
  return *this;
}

ParameterSet& ParameterSet::operator*=(double s) {
  for (Matrix& m : values_) m *= s;
  return *this;
}

Matrix uniform_init(Index rows, Index fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, fan_in);
  for (Index c = 0; c < fan_in; ++c)
    for (Index r = 0; r < rows; ++r) m(r, c) = dist(rng);
  return m;
}

// ---------------------------------------------------------------------------
// Tape

namespace {

void check_same(const Matrix& a, const Matrix& b, const char* op) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::dimension_mismatch,
          std::string(op) + ": operand shapes differ");
}

}  // namespace

NodeId Tape::push(Matrix value, std::function<void(std::vector<Node>&, GradientTape&)> back) {
  nodes_.push_back(Node{std::move(value), Matrix(), std::move(back)});
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::param(const std::string& name) {
  return push(params_->at(name), [name, self = static_cast<NodeId>(nodes_.size())](std::vector<Node>& n,
                                                                                      GradientTape& g) {
    g.at(name) += n[self].grad;
  });
}

NodeId Tape::constant(Matrix value) { return push(std::move(value), nullptr); }

NodeId Tape::matmul(NodeId a, NodeId b) {
  require(value(a).cols() == value(b).rows(), ErrorCode::dimension_mismatch, "matmul: inner dimensions differ");
  const auto self = static_cast<NodeId>(nodes_.size());
  return push(value(a) * value(b), [a, b, self](std::vector<Node>& n, GradientTape&) {
    n[a].grad += n[self].grad * n[b].value.transpose();
    n[b].grad += n[a].value.transpose() * n[self].grad;
  });
}

NodeId Tape::matmul_bt(NodeId a, NodeId b) {
  require(value(a).cols() == value(b).cols(), ErrorCode::dimension_mismatch, "matmul_bt: inner dimensions differ");
  const auto self = static_cast<NodeId>(nodes_.size());
  return push(value(a) * value(b).transpose(), [a, b, self](std::vector<Node>& n, GradientTape&) {
    n[a].grad += n[self].grad * n[b].value;
    n[b].grad += n[self].grad.transpose() * n[a].value;
  });
}

NodeId Tape::add(NodeId a, NodeId b) {
  check_same(value(a), value(b), "add");
  const auto self = static_cast<NodeId>(nodes_.size());
  return push(value(a) + value(b), [a, b, self](std::vector<Node>& n, GradientTape&) {
    n[a].grad += n[self].grad;
    n[b].grad += n[self].grad;
  });
}

NodeId Tape::sub(NodeId a, NodeId b) {
  check_same(value(a), value(b), "sub");
  const auto self = static_cast<NodeId>(nodes_.size());
  return push(value(a) - value(b), [a, b, self](std::vector<Node>& n, GradientTape&) {
    n[a].grad += n[self].grad;
    n[b].grad -= n[self].grad;
  });
}

NodeId Tape::add_row(NodeId a, NodeId row) {
  require(value(row).rows() == 1 && value(row).cols() == value(a).cols(), ErrorCode::dimension_mismatch,
          "add_row: row shape differs");
  const auto self = static_cast<NodeId>(nodes_.size());
  Matrix out = value(a);
  out.rowwise() += value(row).row(0);
  return push(std::move(out), [a, row, self](std::vector<Node>& n, GradientTape&) {
    n[a].grad += n[self].grad;
    n[row].grad += n[self].grad.colwise().sum();
  });
}

NodeId Tape::relu(NodeId a) {
  const Matrix& x = value(a);
  for (Index i = 0; i < x.size(); ++i)
    if (x.data()[i] != 0.0) min_margin_ = std::min(min_margin_, std::abs(x.data()[i]));
  const auto self = static_cast<NodeId>(nodes_.size());
  return push(x.cwiseMax(0.0), [a, self](std::vector<Node>& n, GradientTape&) {
    n[a].grad += (n[a].value.array() > 0.0).cast<double>().matrix().cwiseProduct(n[self].grad);
  });
}

NodeId Tape::scale(NodeId a, double s) {
  const auto self = static_cast<NodeId>(nodes_.size());
  return push(s * value(a), [a, s, self](std::vector<Node>& n, GradientTape&) { n[a].grad += s * n[self].grad; });
}

NodeId Tape::scale_rows(NodeId a, const Vector& s) {
  require(s.size() == value(a).rows(), ErrorCode::dimension_mismatch, "scale_rows: size differs");
  const auto self = static_cast<NodeId>(nodes_.size());
  return push(s.asDiagonal() * value(a), [a, s, self](std::vector<Node>& n, GradientTape&) {
    n[a].grad += s.asDiagonal() * n[self].grad;
  });
}

NodeId Tape::mask(NodeId a, const Matrix& m) {
  check_same(value(a), m, "mask");
  const auto self = static_cast<NodeId>(nodes_.size());
  return push(value(a).cwiseProduct(m), [a, m, self](std::vector<Node>& n, GradientTape&) {
    n[a].grad += n[self].grad.cwiseProduct(m);
  });
}

NodeId Tape::left_multiply(const Matrix& m, NodeId a) {
  require(m.cols() == value(a).rows(), ErrorCode::dimension_mismatch, "left_multiply: inner dimensions differ");
  const auto self = static_cast<NodeId>(nodes_.size());
  return push(m * value(a), [a, m, self](std::vector<Node>& n, GradientTape&) {
    n[a].grad += m.transpose() * n[self].grad;
  });
}

NodeId Tape::concat_cols(const std::vector<NodeId>& parts) {
  require(!parts.empty(), ErrorCode::empty_input, "concat_cols: no parts");
  const Index rows = value(parts.front()).rows();
  Index cols = 0;
  for (NodeId p : parts) {
    require(value(p).rows() == rows, ErrorCode::dimension_mismatch, "concat_cols: row counts differ");
    cols += value(p).cols();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (NodeId p : parts) {
    out.middleCols(at, value(p).cols()) = value(p);
    at += value(p).cols();
  }
  const auto self = static_cast<NodeId>(nodes_.size());
  return push(std::move(out), [parts, self](std::vector<Node>& n, GradientTape&) {
    Index at = 0;
    for (NodeId p : parts) {
      const Index c = n[p].value.cols();
      n[p].grad += n[self].grad.middleCols(at, c);
      at += c;
    }
  });
}

NodeId Tape::concat_rows(const std::vector<NodeId>& parts) {
  require(!parts.empty(), ErrorCode::empty_input, "concat_rows: no parts");
  const Index cols = value(parts.front()).cols();
  Index rows = 0;
  for (NodeId p : parts) {
    require(value(p).cols() == cols, ErrorCode::dimension_mismatch, "concat_rows: column counts differ");
    rows += value(p).rows();
  }
  Matrix out(rows, cols);
  Index at = 0;
  for (NodeId p : parts) {
    out.middleRows(at, value(p).rows()) = value(p);
    at += value(p).rows();
  }
  const auto self = static_cast<NodeId>(nodes_.size());
  return push(std::move(out), [parts, self](std::vector<Node>& n, GradientTape&) {
    Index at = 0;
    for (NodeId p : parts) {
      const Index r = n[p].value.rows();
      n[p].grad += n[self].grad.middleRows(at, r);
      at += r;
    }
  });
}

NodeId Tape::gather_rows(NodeId a, const std::vector<Index>& rows) {
  const Matrix& x = value(a);
  Matrix out(static_cast<Index>(rows.size()), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] >= 0 && rows[i] < x.rows(), ErrorCode::dimension_mismatch, "gather_rows: index out of range");
    out.row(static_cast<Index>(i)) = x.row(rows[i]);
  }
  const auto self = static_cast<NodeId>(nodes_.size());
  return push(std::move(out), [a, rows, self](std::vector<Node>& n, GradientTape&) {
    for (std::size_t i = 0; i < rows.size(); ++i) n[a].grad.row(rows[i]) += n[self].grad.row(static_cast<Index>(i));
  });
}

void Tape::backward(NodeId out, const Matrix& seed, GradientTape& grads) {
  require(!nodes_.empty(), ErrorCode::invalid_argument, "backward called without a recorded pass");
  require(!used_, ErrorCode::invalid_argument, "backward called twice on one recording");
  require(out >= 0 && static_cast<std::size_t>(out) < nodes_.size(), ErrorCode::invalid_argument,
          "backward: unknown node");
  check_same(value(out), seed, "backward seed");
  used_ = true;
  for (std::size_t i = 0; i <= static_cast<std::size_t>(out); ++i)
    nodes_[i].grad = Matrix::Zero(nodes_[i].value.rows(), nodes_[i].value.cols());
  nodes_[static_cast<std::size_t>(out)].grad = seed;
  for (NodeId i = out; i >= 0; --i) {
    Node& node = nodes_[static_cast<std::size_t>(i)];
    if (node.back && !node.grad.isZero(0.0)) node.back(nodes_, grads);
  }
}

// ---------------------------------------------------------------------------
// Mlp

Mlp Mlp::create(ParameterSet& params, const std::string& prefix, Index in, Index hidden, Index out,
                std::mt19937_64& rng, int layers, bool relu_output) {
  require(layers == 1 || layers == 2, ErrorCode::invalid_argument, "Mlp supports one or two layers");
  Mlp mlp{prefix, layers, relu_output};
  auto bias = [&rng](Index n, Index fan_in) { return Matrix(uniform_init(n, fan_in, rng).col(0).transpose()); };
  if (layers == 1) {
    params.add(prefix + ".w0", uniform_init(out, in, rng));
    params.add(prefix + ".b0", bias(out, in));
  } else {
    params.add(prefix + ".w0", uniform_init(hidden, in, rng));
    params.add(prefix + ".b0", bias(hidden, in));
    params.add(prefix + ".w1", uniform_init(out, hidden, rng));
    params.add(prefix + ".b1", bias(out, hidden));
  }
  return mlp;
}

NodeId Mlp::apply(Tape& tape, NodeId x) const {
  NodeId h = tape.add_row(tape.matmul_bt(x, tape.param(prefix + ".w0")), tape.param(prefix + ".b0"));
  if (layers == 2) {
    h = tape.relu(h);
    h = tape.add_row(tape.matmul_bt(h, tape.param(prefix + ".w1")), tape.param(prefix + ".b1"));
  }
  return relu_output ? tape.relu(h) : h;
}

// ---------------------------------------------------------------------------
// Adam

bool adam_step(ParameterSet& params, const GradientTape& grads, double lr, AdamMoments& state,
               const AdamConstants& constants) {
  require(params.same_shapes(grads), ErrorCode::dimension_mismatch, "gradient layout differs from parameters");
  const Vector g = grads.flat();
  if (!g.allFinite()) return false;
  if (state.size() != g.size()) {
    require(state.size() == 0, ErrorCode::dimension_mismatch, "Adam state size differs from parameters");
    state = AdamMoments(g.size());
  }
  params.set_flat(params.flat() - lr * state.direction(g, constants));
  return true;
}

// ---------------------------------------------------------------------------
// Serialization

std::string base64_encode(const std::vector<unsigned char>& bytes) {
  using namespace boost::archive::iterators;
  using It = base64_from_binary<transform_width<std::vector<unsigned char>::const_iterator, 6, 8>>;
  std::string out(It(bytes.begin()), It(bytes.end()));
  out.append((3 - bytes.size() % 3) % 3, '=');
  return out;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
  using namespace boost::archive::iterators;
  using It = transform_width<binary_from_base64<std::string::const_iterator>, 8, 6>;
  std::size_t padding = 0;
  std::string body = text;
  while (!body.empty() && body.back() == '=') {
    body.pop_back();
    ++padding;
  }
  try {
    std::vector<unsigned char> out(It(body.begin()), It(body.end()));
    const std::size_t expected = text.size() / 4 * 3 - padding;
    if (out.size() > expected) out.resize(expected);
    return out;
  } catch (const std::exception& e) {
    fail(ErrorCode::io, std::string("invalid base64 tensor data: ") + e.what());
  }
}

namespace {

std::vector<unsigned char> to_le_bytes(const Matrix& m) {
  std::vector<unsigned char> bytes(static_cast<std::size_t>(m.size()) * 8);
  for (Index i = 0; i < m.size(); ++i) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(m.reshaped()[i]);
    for (int b = 0; b < 8; ++b) bytes[static_cast<std::size_t>(i) * 8 + b] = static_cast<unsigned char>(bits >> (8 * b));
  }
  return bytes;
}

Matrix from_le_bytes(const std::vector<unsigned char>& bytes, Index rows, Index cols) {
  require(bytes.size() == static_cast<std::size_t>(rows * cols) * 8, ErrorCode::io, "tensor byte count differs from shape");
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[static_cast<std::size_t>(i) * 8 + b]) << (8 * b);
    m.reshaped()[i] = std::bit_cast<double>(bits);
  }
  return m;
}

constexpr const char* kFormat = "babverify-params";
constexpr int kVersion = 1;

}  // namespace

nlohmann::json params_to_json(const ParameterSet& params) {
  nlohmann::json tensors = nlohmann::json::array();
  for (const std::string& name : params.names()) {
    const Matrix& m = params.at(name);
    tensors.push_back({{"name", name}, {"rows", m.rows()}, {"cols", m.cols()}, {"data", base64_encode(to_le_bytes(m))}});
  }
  return {{"format", kFormat}, {"version", kVersion}, {"architecture", params.architecture()}, {"tensors", tensors}};
}

ParameterSet params_from_json(const nlohmann::json& j, const std::string& expected_variant) {
  try {
    require(j.value("format", "") == kFormat, ErrorCode::io, "not a parameter file");
    require(j.at("version").get<int>() == kVersion, ErrorCode::architecture_mismatch, "unsupported parameter file version");
    ParameterSet params(j.at("architecture"));
    if (!expected_variant.empty()) {
      const std::string variant = params.architecture().value("variant", "");
      require(variant == expected_variant, ErrorCode::architecture_mismatch,
              "parameter file holds a '" + variant + "' model, expected '" + expected_variant + "'");
    }
    for (const auto& t : j.at("tensors"))
      params.add(t.at("name").get<std::string>(),
                 from_le_bytes(base64_decode(t.at("data").get<std::string>()), t.at("rows").get<Index>(),
                               t.at("cols").get<Index>()));
    return params;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::io, std::string("malformed parameter file: ") + e.what());
  }
}

void save_params(const ParameterSet& params, const std::filesystem::path& path) {
  std::ofstream out(path);
  require(out.good(), ErrorCode::io, "cannot write " + path.string());
  out << params_to_json(params).dump(1) << '\n';
}

ParameterSet load_params(const std::filesystem::path& path, const std::string& expected_variant) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::io, "cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::io, "malformed JSON in " + path.string() + ": " + e.what());
  }
  return params_from_json(j, expected_variant);
}

}  // namespace babverify
