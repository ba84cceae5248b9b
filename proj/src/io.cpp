/*
 * SPDX-FileCopyrightText: Copyright (c) 2026, babverify contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#include "babverify/io.hpp"

#include <fstream>

namespace babverify {

nlohmann::json vector_to_json(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Vector vector_from_json(const nlohmann::json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(values.data(), static_cast<Index>(values.size()));
}

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (Index r = 0; r < m.rows(); ++r) rows.push_back(vector_to_json(m.row(r).transpose()));
  return rows;
}

Matrix matrix_from_json(const nlohmann::json& j, Index cols) {
  Matrix m(static_cast<Index>(j.size()), cols);
  for (Index r = 0; r < m.rows(); ++r) {
    const Vector row = vector_from_json(j.at(static_cast<std::size_t>(r)));
    require(row.size() == cols, ErrorCode::io, "matrix row has wrong width");
    m.row(r) = row.transpose();
  }
  return m;
}

nlohmann::json stack_to_json(const BoundsStack& s) {
  nlohmann::json lower = nlohmann::json::array(), upper = nlohmann::json::array();
  for (const Vector& v : s.lower) lower.push_back(vector_to_json(v));
  for (const Vector& v : s.upper) upper.push_back(vector_to_json(v));
  return {{"lower", lower}, {"upper", upper}, {"infeasible", s.infeasible}};
}

BoundsStack stack_from_json(const nlohmann::json& j) {
  BoundsStack s;
  for (const auto& v : j.at("lower")) s.lower.push_back(vector_from_json(v));
  for (const auto& v : j.at("upper")) s.upper.push_back(vector_from_json(v));
  s.infeasible = j.value("infeasible", false);
  require(s.lower.size() == s.upper.size(), ErrorCode::io, "bounds stack: lower and upper depths differ");
  return s;
}

nlohmann::json splits_to_json(const Splits& s) {
  nlohmann::json out = nlohmann::json::array();
  for (const Split& split : s) out.push_back({split.layer, split.neuron, static_cast<int>(split.phase)});
  return out;
}

Splits splits_from_json(const nlohmann::json& j) {
  Splits out;
  for (const auto& s : j) {
    const int phase = s.at(2).get<int>();
    require(phase == 1 || phase == -1, ErrorCode::io, "split phase must be 1 or -1");
    out.push_back({s.at(0).get<int>(), s.at(1).get<Index>(), static_cast<Phase>(phase)});
  }
  return out;
}

nlohmann::json duals_to_json(const DualState& d) {
  nlohmann::json out = nlohmann::json::array();
  for (int h = 1; h < d.depth(); ++h) out.push_back(vector_to_json(d.rho[static_cast<std::size_t>(h)]));
  return out;
}

DualState duals_from_json(const nlohmann::json& j) {
  DualState d;
  d.rho.resize(j.size() + 2);
  for (std::size_t h = 0; h < j.size(); ++h) d.rho[h + 1] = vector_from_json(j[h]);
  return d;
}

std::string dump_line(const nlohmann::json& j) { return j.dump(); }

std::vector<nlohmann::json> read_json_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(in.good(), ErrorCode::io, "cannot open " + path.string());
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::io, path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
  }
  return out;
}

void write_json_lines(const std::filesystem::path& path, const std::vector<nlohmann::json>& records) {
  std::ofstream out(path);
  require(out.good(), ErrorCode::io, "cannot write " + path.string());
  for (const auto& r : records) out << dump_line(r) << '\n';
}

}  // namespace babverify
