/*
 * SPDX-FileCopyrightText: Copyright (c) 2026, babverify contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include "babverify/dual.hpp"
#include "babverify/relax.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace babverify {

nlohmann::json vector_to_json(const Vector& v);
Vector vector_from_json(const nlohmann::json& j);
/// Row-major nested arrays.
nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j, Index cols);

nlohmann::json stack_to_json(const BoundsStack& s);
BoundsStack stack_from_json(const nlohmann::json& j);
nlohmann::json splits_to_json(const Splits& s);
Splits splits_from_json(const nlohmann::json& j);
/// Hidden layers 1..L-1 only.
nlohmann::json duals_to_json(const DualState& d);
DualState duals_from_json(const nlohmann::json& j);

/// Compact one-line JSON with doubles printed to 17 significant digits.
std::string dump_line(const nlohmann::json& j);

/// One JSON document per non-empty line.
std::vector<nlohmann::json> read_json_lines(const std::filesystem::path& path);
void write_json_lines(const std::filesystem::path& path, const std::vector<nlohmann::json>& records);

}  // namespace babverify
