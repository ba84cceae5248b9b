/*
 * SPDX-FileCopyrightText: Copyright (c) 2026, babverify contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include "babverify/common.hpp"

#include <cmath>

namespace babverify {

struct AdamConstants {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moment estimates for one flat parameter vector.
class AdamMoments {
 public:
  AdamMoments() = default;
  explicit AdamMoments(Index size) : m_(Vector::Zero(size)), v_(Vector::Zero(size)) {}

  Index size() const { return m_.size(); }
  int steps() const { return t_; }

  /// Returns the bias-corrected step m̂/(√v̂+ε) for `grad`. Callers add or
  /// subtract lr times this depending on whether they ascend or descend.
  Vector direction(const Vector& grad, const AdamConstants& c = {}) {
    ++t_;
    m_ = c.beta1 * m_ + (1.0 - c.beta1) * grad;
    v_ = c.beta2 * v_ + (1.0 - c.beta2) * grad.cwiseAbs2();
    const double m_corr = 1.0 - std::pow(c.beta1, t_);
    const double v_corr = 1.0 - std::pow(c.beta2, t_);
    Vector out(grad.size());
    for (Index i = 0; i < grad.size(); ++i)
      out[i] = (m_[i] / m_corr) / (std::sqrt(v_[i] / v_corr) + c.epsilon);
    return out;
  }

 private:
  Vector m_;
  Vector v_;
  int t_ = 0;
};

}  // namespace babverify
