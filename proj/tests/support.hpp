/*
 * SPDX-FileCopyrightText: Copyright (c) 2026, babverify contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include "babverify/model.hpp"

#include <random>
#include <vector>

namespace babverify::testing {

inline Matrix uniform_matrix(Index rows, Index cols, double scale, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

inline Vector uniform_vector(Index n, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Vector v(n);
  for (Index i = 0; i < n; ++i) v[i] = dist(rng);
  return v;
}

/// Dense network with the given layer widths (sizes.front() is the input).
inline Network random_dense(const std::vector<Index>& sizes, std::uint64_t seed, double bias_scale = 0.3) {
  std::mt19937_64 rng(seed);
  std::vector<Layer> layers;
  for (std::size_t i = 1; i < sizes.size(); ++i) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(sizes[i - 1]));
    layers.push_back(Layer::dense(uniform_matrix(sizes[i], sizes[i - 1], 1.5 * scale, rng),
                                  uniform_vector(sizes[i], -bias_scale, bias_scale, rng)));
  }
  return Network(std::move(layers));
}

inline VerificationNetwork random_verification(const std::vector<Index>& hidden, Index inputs, std::uint64_t seed) {
  std::vector<Index> sizes{inputs};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  return VerificationNetwork(random_dense(sizes, seed));
}

inline InputDomain random_box(Index dim, std::uint64_t seed, double radius = 0.5) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const Vector center = uniform_vector(dim, -0.5, 0.5, rng);
  return InputDomain(center.array() - radius, center.array() + radius);
}

inline Vector sample_in(const InputDomain& d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vector x(d.dim());
  for (Index i = 0; i < d.dim(); ++i) x[i] = d.lower[i] + unit(rng) * (d.upper[i] - d.lower[i]);
  return x;
}

}  // namespace babverify::testing
