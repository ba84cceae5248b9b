/*
 * SPDX-FileCopyrightText: Copyright (c) 2026, babverify contributors.
 * SPDX-License-Identifier: Apache-2.0
 */
#include "babverify/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace babverify {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kPivotTol = 1e-9;
constexpr double kCostTol = 1e-10;
constexpr int kDegenerateRunLimit = 25;
constexpr int kIterationLimit = 200000;

/// How one original variable maps onto nonnegative tableau columns:
/// x = offset + sign * y[pos] (- y[neg] when free).
struct ColumnMap {
  Index pos = -1;
  Index neg = -1;
  double offset = 0.0;
  double sign = 1.0;
};

class Tableau {
 public:
  Tableau(Index rows, Index cols) : t_(Matrix::Zero(rows + 1, cols + 1)), basis_(rows, -1), rows_(rows), cols_(cols) {}

  double& at(Index r, Index c) { return t_(r, c); }
  double& rhs(Index r) { return t_(r, cols_); }
  Index rows() const { return rows_; }
  Index cols() const { return cols_; }
  std::vector<Index>& basis() { return basis_; }
  int pivots() const { return pivots_; }

  /// Runs the simplex method for `cost` over columns with allowed[c] set.
  /// Returns false when the problem is unbounded.
  bool optimize(const Vector& cost, const std::vector<bool>& allowed) {
    price(cost);
    bool bland = false;
    int degenerate_run = 0;
    for (int iter = 0; iter < kIterationLimit; ++iter) {
      Index enter = -1;
      double most = -kCostTol;
      for (Index c = 0; c < cols_; ++c) {
        if (!allowed[static_cast<std::size_t>(c)]) continue;
        const double r = t_(rows_, c);
        if (bland) {
          if (r < -kCostTol) {
            enter = c;
            break;
          }
        } else if (r < most) {
          most = r;
          enter = c;
        }
      }
      if (enter < 0) return true;

      Index leave = -1;
      double best_ratio = kInf;
      for (Index r = 0; r < rows_; ++r) {
        const double a = t_(r, enter);
        if (a <= kPivotTol) continue;
        const double ratio = t_(r, cols_) / a;
        if (ratio < best_ratio - 1e-12 ||
            (ratio <= best_ratio + 1e-12 && leave >= 0 && basis_[r] < basis_[leave])) {
          best_ratio = std::min(ratio, best_ratio);
          leave = r;
        }
      }
      if (leave < 0) return false;
      if (best_ratio <= 1e-12) {
        if (++degenerate_run >= kDegenerateRunLimit) bland = true;
      } else {
        degenerate_run = 0;
      }
      pivot(leave, enter);
    }
    fail(ErrorCode::cap_exceeded, "simplex iteration limit reached");
  }

  void pivot(Index r, Index c) {
    const double p = t_(r, c);
    t_.row(r) /= p;
    for (Index i = 0; i <= rows_; ++i) {
      if (i == r) continue;
      const double f = t_(i, c);
      if (f != 0.0) t_.row(i) -= f * t_.row(r);
    }
    basis_[r] = c;
    ++pivots_;
  }

  double objective_value() const { return -t_(rows_, cols_); }

 private:
  void price(const Vector& cost) {
    t_.row(rows_).setZero();
    t_.row(rows_).head(cols_) = cost.transpose();
    for (Index r = 0; r < rows_; ++r) {
      const double cb = cost[basis_[r]];
      if (cb != 0.0) t_.row(rows_) -= cb * t_.row(r);
    }
  }

  Matrix t_;
  std::vector<Index> basis_;
  Index rows_;
  Index cols_;
  int pivots_ = 0;
};

struct StandardRow {
  Vector coeffs;  // over structural columns
  double rhs;
  bool equality;
};

}  // namespace

LpProblem LpProblem::with_variables(Index n) {
  LpProblem p;
  p.objective = Vector::Zero(n);
  p.a_ub = Matrix(0, n);
  p.b_ub = Vector(0);
  p.a_eq = Matrix(0, n);
  p.b_eq = Vector(0);
  p.lower = Vector::Constant(n, -kInf);
  p.upper = Vector::Constant(n, kInf);
  return p;
}

LpSolution solve_lp(const LpProblem& problem) {
  const Index n = problem.variables();
  require(n <= kLpVariableCap, ErrorCode::cap_exceeded,
          "LP has " + std::to_string(n) + " variables, cap is " + std::to_string(kLpVariableCap));
  require(problem.a_ub.cols() == n && problem.a_eq.cols() == n && problem.lower.size() == n &&
              problem.upper.size() == n && problem.b_ub.size() == problem.a_ub.rows() &&
              problem.b_eq.size() == problem.a_eq.rows(),
          ErrorCode::dimension_mismatch, "LP block shapes are inconsistent");

  LpSolution out;
  // Map variables to nonnegative columns.
  std::vector<ColumnMap> map(static_cast<std::size_t>(n));
  Index structural = 0;
  for (Index i = 0; i < n; ++i) {
    const double lo = problem.lower[i];
    const double hi = problem.upper[i];
    require(!(lo > hi), ErrorCode::invalid_argument, "LP variable has lower bound above upper bound");
    ColumnMap& m = map[static_cast<std::size_t>(i)];
    if (std::isfinite(lo)) {
      m = {structural++, -1, lo, 1.0};
    } else if (std::isfinite(hi)) {
      m = {structural++, -1, hi, -1.0};
    } else {
      m.pos = structural++;
      m.neg = structural++;
    }
  }

  auto to_columns = [&](const Eigen::Ref<const Eigen::RowVectorXd>& row, double rhs) {
    StandardRow s{Vector::Zero(structural), rhs, false};
    for (Index i = 0; i < n; ++i) {
      const double a = row[i];
      if (a == 0.0) continue;
      const ColumnMap& m = map[static_cast<std::size_t>(i)];
      s.coeffs[m.pos] += a * m.sign;
      if (m.neg >= 0) s.coeffs[m.neg] -= a;
      s.rhs -= a * m.offset;
    }
    return s;
  };

  std::vector<StandardRow> rows;
  for (Index r = 0; r < problem.a_ub.rows(); ++r) rows.push_back(to_columns(problem.a_ub.row(r), problem.b_ub[r]));
  for (Index i = 0; i < n; ++i) {
    const double lo = problem.lower[i];
    const double hi = problem.upper[i];
    if (std::isfinite(lo) && std::isfinite(hi)) {
      StandardRow s{Vector::Zero(structural), hi - lo, false};
      s.coeffs[map[static_cast<std::size_t>(i)].pos] = 1.0;
      rows.push_back(std::move(s));
    }
  }
  for (Index r = 0; r < problem.a_eq.rows(); ++r) {
    StandardRow s = to_columns(problem.a_eq.row(r), problem.b_eq[r]);
    s.equality = true;
    rows.push_back(std::move(s));
  }

  // Column layout: structural | slacks (one per inequality) | artificials.
  const Index m = static_cast<Index>(rows.size());
  Index slacks = 0;
  for (const auto& r : rows)
    if (!r.equality) ++slacks;
  std::vector<bool> needs_artificial(static_cast<std::size_t>(m));
  Index artificials = 0;
  for (Index r = 0; r < m; ++r) {
    const auto& row = rows[static_cast<std::size_t>(r)];
    const bool need = row.equality || row.rhs < 0.0;
    needs_artificial[static_cast<std::size_t>(r)] = need;
    if (need) ++artificials;
  }
  const Index cols = structural + slacks + artificials;
  Tableau tab(m, cols);
  Index slack_at = structural;
  Index art_at = structural + slacks;
  for (Index r = 0; r < m; ++r) {
    const auto& row = rows[static_cast<std::size_t>(r)];
    const double flip = row.rhs < 0.0 ? -1.0 : 1.0;
    for (Index c = 0; c < structural; ++c) tab.at(r, c) = flip * row.coeffs[c];
    tab.rhs(r) = flip * row.rhs;
    if (!row.equality) {
      tab.at(r, slack_at) = flip;
      if (!needs_artificial[static_cast<std::size_t>(r)]) tab.basis()[r] = slack_at;
      ++slack_at;
    }
    if (needs_artificial[static_cast<std::size_t>(r)]) {
      tab.at(r, art_at) = 1.0;
      tab.basis()[r] = art_at;
      ++art_at;
    }
  }

  const Index first_art = structural + slacks;
  if (artificials > 0) {
    Vector phase1 = Vector::Zero(cols);
    phase1.tail(artificials).setOnes();
    const std::vector<bool> all(static_cast<std::size_t>(cols), true);
    tab.optimize(phase1, all);
    double scale = 1.0;
    for (Index r = 0; r < m; ++r) scale = std::max(scale, std::abs(tab.rhs(r)));
    if (tab.objective_value() > 1e-8 * scale) {
      out.status = LpStatus::infeasible;
      out.pivots = tab.pivots();
      return out;
    }
    // Drive remaining artificials out of the basis where possible.
    for (Index r = 0; r < m; ++r) {
      if (tab.basis()[r] < first_art) continue;
      for (Index c = 0; c < first_art; ++c)
        if (std::abs(tab.at(r, c)) > kPivotTol) {
          tab.pivot(r, c);
          break;
        }
    }
  }

  Vector phase2 = Vector::Zero(cols);
  for (Index i = 0; i < n; ++i) {
    const ColumnMap& cm = map[static_cast<std::size_t>(i)];
    const double c = problem.objective[i];
    phase2[cm.pos] += c * cm.sign;
    if (cm.neg >= 0) phase2[cm.neg] -= c;
  }
  std::vector<bool> allowed(static_cast<std::size_t>(cols), true);
  for (Index c = first_art; c < cols; ++c) allowed[static_cast<std::size_t>(c)] = false;
  if (!tab.optimize(phase2, allowed)) {
    out.status = LpStatus::unbounded;
    out.pivots = tab.pivots();
    return out;
  }

  Vector y = Vector::Zero(cols);
  for (Index r = 0; r < m; ++r) y[tab.basis()[r]] = std::max(0.0, tab.rhs(r));
  out.x.resize(n);
  for (Index i = 0; i < n; ++i) {
    const ColumnMap& cm = map[static_cast<std::size_t>(i)];
    double v = cm.offset + cm.sign * y[cm.pos];
    if (cm.neg >= 0) v -= y[cm.neg];
    out.x[i] = std::clamp(v, problem.lower[i], problem.upper[i]);
  }
  out.status = LpStatus::optimal;
  out.value = problem.objective.dot(out.x);
  out.pivots = tab.pivots();
  return out;
}

PlanetBound planet_lp_bound(const Network& net, const BoundsStack& stack) {
  require(stack.depth() == net.depth(), ErrorCode::dimension_mismatch, "bounds stack depth differs from network");
  PlanetBound out;
  if (stack.infeasible) {
    out.value = kInf;
    return out;
  }
  const int depth = net.depth();
  const Index n0 = net.input_dim();
  // Layout: z0 | (zhat_k, z_k) for k = 1..L-1.
  std::vector<Index> zhat_at(depth), z_at(depth);
  Index n = n0;
  for (int k = 1; k < depth; ++k) {
    zhat_at[k] = n;
    n += net.width(k);
    z_at[k] = n;
    n += net.width(k);
  }
  require(n <= kLpVariableCap, ErrorCode::cap_exceeded, "relaxation LP exceeds the variable cap");

  LpProblem p = LpProblem::with_variables(n);
  p.lower.head(n0) = stack.lower[0];
  p.upper.head(n0) = stack.upper[0];

  Index eq_rows = 0;
  Index ub_rows = 0;
  for (int k = 1; k < depth; ++k) {
    eq_rows += net.width(k);
    const LayerRelaxation r = layer_relaxation(stack.lower[k], stack.upper[k]);
    for (auto s : r.state) {
      if (s == NeuronState::passing) ++eq_rows;
      if (s == NeuronState::ambiguous) ub_rows += 2;
    }
  }
  p.a_eq = Matrix::Zero(eq_rows, n);
  p.b_eq = Vector::Zero(eq_rows);
  p.a_ub = Matrix::Zero(ub_rows, n);
  p.b_ub = Vector::Zero(ub_rows);

  Index eq = 0;
  Index ub = 0;
  for (int k = 1; k < depth; ++k) {
    const Layer& layer = net.layer(k - 1);
    const Index width = net.width(k);
    const Index prev_at = k == 1 ? 0 : z_at[k - 1];
    const Index prev_width = net.width(k - 1);
    // zhat_k - W_k z_{k-1} = b_k
    for (Index j = 0; j < width; ++j, ++eq) {
      p.a_eq(eq, zhat_at[k] + j) = 1.0;
      p.a_eq.block(eq, prev_at, 1, prev_width) -= layer.weights().row(j);
      p.b_eq[eq] = layer.bias()[j];
    }
    const Vector& l = stack.lower[k];
    const Vector& u = stack.upper[k];
    const LayerRelaxation r = layer_relaxation(l, u);
    p.lower.segment(zhat_at[k], width) = l;
    p.upper.segment(zhat_at[k], width) = u;
    for (Index j = 0; j < width; ++j) {
      const Index zh = zhat_at[k] + j;
      const Index z = z_at[k] + j;
      switch (r.state[static_cast<std::size_t>(j)]) {
        case NeuronState::blocked:
          p.lower[z] = 0.0;
          p.upper[z] = 0.0;
          break;
        case NeuronState::passing:
          p.a_eq(eq, z) = 1.0;
          p.a_eq(eq, zh) = -1.0;
          ++eq;
          p.lower[z] = l[j];
          p.upper[z] = u[j];
          break;
        case NeuronState::ambiguous:
          p.lower[z] = 0.0;
          p.upper[z] = u[j];
          // zhat - z <= 0
          p.a_ub(ub, zh) = 1.0;
          p.a_ub(ub, z) = -1.0;
          ++ub;
          // z - alpha zhat <= -alpha l
          p.a_ub(ub, z) = 1.0;
          p.a_ub(ub, zh) = -r.alpha[j];
          p.b_ub[ub] = -r.alpha[j] * l[j];
          ++ub;
          break;
      }
    }
  }

  const Layer& last = net.layer(depth - 1);
  const Index last_at = depth == 1 ? 0 : z_at[depth - 1];
  p.objective.segment(last_at, last.in_dim()) = last.weights().row(0).transpose();
  const LpSolution sol = solve_lp(p);
  out.status = sol.status;
  if (sol.status == LpStatus::infeasible) {
    out.value = kInf;
    return out;
  }
  require(sol.status == LpStatus::optimal, ErrorCode::invalid_argument, "relaxation LP is unbounded");
  out.value = sol.value + last.bias()[0];
  out.z0 = sol.x.head(n0);
  return out;
}

// ---------------------------------------------------------------------------
// Exhaustive pattern enumeration.

namespace {

class PatternSearch {
 public:
  PatternSearch(const Network& net, const InputDomain& domain, const Splits& splits)
      : net_(net), domain_(domain), phases_(net, splits), root_(linear_backward_bounds(net, domain)) {}

  ExhaustiveResult run() {
    ExhaustiveResult out;
    out.minimum = kInf;
    if (!root_.infeasible) {
      const Layer& first = net_.layer(0);
      Constraints cons{Matrix(0, net_.input_dim()), Vector(0)};
      if (net_.depth() == 1) {
        leaf(first.weights(), first.bias(), cons);
      } else {
        descend(1, 0, first.weights(), first.bias(), Vector::Zero(net_.width(1)), cons);
      }
    }
    out.minimum = best_;
    out.minimizer = best_x_;
    out.patterns = patterns_;
    if (best_ < 0.0) {
      out.status = VerifyStatus::falsified;
      out.witness = best_x_;
    } else {
      out.status = VerifyStatus::verified;
    }
    return out;
  }

 private:
  struct Constraints {
    Matrix a;
    Vector b;
  };

  static Constraints with_row(const Constraints& c, const Eigen::RowVectorXd& row, double rhs) {
    Constraints out{Matrix(c.a.rows() + 1, c.a.cols()), Vector(c.b.size() + 1)};
    out.a.topRows(c.a.rows()) = c.a;
    out.a.row(c.a.rows()) = row;
    out.b.head(c.b.size()) = c.b;
    out.b[c.b.size()] = rhs;
    return out;
  }

  LpSolution minimize(const Eigen::RowVectorXd& objective, const Constraints& c) const {
    LpProblem p = LpProblem::with_variables(net_.input_dim());
    p.objective = objective.transpose();
    p.lower = domain_.lower;
    p.upper = domain_.upper;
    p.a_ub = c.a;
    p.b_ub = c.b;
    return solve_lp(p);
  }

  /// Phase pruning uses bounds of the unsplit domain, which hold for every
  /// input; split constraints are added as explicit cuts.
  /// Layer k pre-activations are pre * x + pre_b; `mask` holds the phases
  /// (1 active, 0 inactive) chosen so far for layer k's first j neurons.
  void descend(int k, Index j, const Matrix& pre, const Vector& pre_b, Vector mask, const Constraints& cons) {
    if (j == net_.width(k)) {
      const Matrix post = mask.asDiagonal() * pre;
      const Vector post_b = mask.cwiseProduct(pre_b);
      const Layer& next = net_.layer(k);
      const Matrix next_pre = next.weights() * post;
      const Vector next_b = next.weights() * post_b + next.bias();
      if (k + 1 == net_.depth())
        leaf(next_pre, next_b, cons);
      else
        descend(k + 1, 0, next_pre, next_b, Vector::Zero(net_.width(k + 1)), cons);
      return;
    }
    const auto fixed = phases_.at(k, j);
    const double l = root_.lower[k][j];
    const double u = root_.upper[k][j];
    bool can_active = !(fixed && *fixed == Phase::inactive);
    bool can_inactive = !(fixed && *fixed == Phase::active);
    bool need_cut = true;
    if (l >= 0.0 && can_active) {
      can_inactive = false;
      need_cut = false;
    } else if (u <= 0.0 && can_inactive) {
      can_active = false;
      need_cut = false;
    }
    const Eigen::RowVectorXd row = pre.row(j);
    if (need_cut) {
      const LpSolution lo = minimize(row, cons);
      if (lo.status != LpStatus::optimal) return;
      const LpSolution hi = minimize(-row, cons);
      const double min_v = lo.value + pre_b[j];
      const double max_v = -hi.value + pre_b[j];
      if (min_v >= 0.0 && can_active) {
        can_inactive = false;
        need_cut = false;
      } else if (max_v <= 0.0 && can_inactive) {
        can_active = false;
        need_cut = false;
      }
      if (max_v < 0.0) can_active = false;
      if (min_v > 0.0) can_inactive = false;
    }
    if (can_active) {
      mask[j] = 1.0;
      descend(k, j + 1, pre, pre_b, mask, need_cut ? with_row(cons, -row, pre_b[j]) : cons);
    }
    if (can_inactive) {
      mask[j] = 0.0;
      descend(k, j + 1, pre, pre_b, mask, need_cut ? with_row(cons, row, -pre_b[j]) : cons);
    }
  }

  void leaf(const Matrix& out, const Vector& /*out_b*/, const Constraints& cons) {
    ++patterns_;
    const LpSolution sol = minimize(out.row(0), cons);
    if (sol.status != LpStatus::optimal) return;
    // The pattern LP is exact, so the network value at its optimum is the
    // pattern minimum; using it keeps witnesses consistent with evaluate().
    const double v = forward(net_, sol.x)[0];
    if (v < best_) {
      best_ = v;
      best_x_ = sol.x;
    }
  }

  const Network& net_;
  const InputDomain& domain_;
  PhaseMap phases_;
  BoundsStack root_;
  double best_ = kInf;
  Vector best_x_;
  long patterns_ = 0;
};

}  // namespace

ExhaustiveResult exhaustive_verify(const Network& net, const InputDomain& domain, const Splits& splits) {
  require(net.output_dim() == 1, ErrorCode::dimension_mismatch, "exhaustive_verify needs a scalar-output network");
  require(net.relu_count() <= kExhaustiveReluCap, ErrorCode::cap_exceeded,
          "network has " + std::to_string(net.relu_count()) + " ReLUs, cap is " + std::to_string(kExhaustiveReluCap));
  require(domain.dim() == net.input_dim(), ErrorCode::dimension_mismatch, "domain dimension differs from network input");
  return PatternSearch(net, domain, splits).run();
}

}  // namespace babverify
