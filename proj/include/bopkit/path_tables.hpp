#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bopkit/common.hpp"
#include "bopkit/graph.hpp"

namespace bopkit {

// Denominators of hitting-path avoidance formulas are mathematically >= 1/z_tt;
// anything smaller signals corrupted inputs, not a legitimate value.
inline constexpr double kDenominatorGuard = 1e-12;

// Inclusion-exclusion over subsets grows as 2^|I|.
inline constexpr int kContainingSetCap = 20;

// Fundamental matrix Z = (I - W)^{-1}, the hitting variant Z^h with entries
// z_st / z_tt, and their row/column/total sums. Built once per weight matrix,
// immutable afterwards; every path-set weight below reads from these tables.
class PathWeightTables {
 public:
  explicit PathWeightTables(const WeightMatrix& wm)
      : w_(wm.values), rho_(wm.rho), beta_(wm.beta) {
    const int n = wm.size();
    const Eigen::MatrixXd system = Eigen::MatrixXd::Identity(n, n) - w_;
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(system);
    rcond_ = lu.rcond();
    z_ = lu.solve(Eigen::MatrixXd::Identity(n, n));
    if (!z_.allFinite() || rcond_ == 0.0) {
      std::ostringstream msg;
      msg << "(I - W) is numerically singular despite rho = " << rho_
          << " (reciprocal condition estimate " << rcond_ << ")";
      throw ValidationError(msg.str());
    }
    if (rho_ < 1.0 && 1.0 / (1.0 - rho_) > 1e8)
      std::cerr << "warning: 1/(1 - rho) = " << 1.0 / (1.0 - rho_)
                << "; fundamental matrix may carry large rounding error\n";
    fill_derived();
  }

  // Verification-harness hook: rebuilds the derived tables around an
  // externally supplied fundamental matrix so fault-injection tests can
  // corrupt one side of a closed-form-vs-enumeration comparison.
  PathWeightTables(const WeightMatrix& wm, Eigen::MatrixXd fundamental_override)
      : w_(wm.values), z_(std::move(fundamental_override)), rho_(wm.rho), beta_(wm.beta) {
    rcond_ = 1.0;
    fill_derived();
  }

  int size() const { return static_cast<int>(z_.rows()); }
  const Eigen::MatrixXd& weights() const { return w_; }
  const Eigen::MatrixXd& fundamental() const { return z_; }
  const Eigen::MatrixXd& hitting() const { return zh_; }

  double z(int s, int t) const { return z_(s, t); }
  double zh(int s, int t) const { return zh_(s, t); }
  double z_row_sum(int s) const { return z_row_(s); }    // z_{s.}
  double z_col_sum(int t) const { return z_col_(t); }    // z_{.t}
  double zh_row_sum(int s) const { return zh_row_(s); }  // zh_{s.}
  double zh_col_sum(int t) const { return zh_col_(t); }  // zh_{.t}
  double z_total() const { return z_total_; }            // z_{..}
  double zh_total() const { return zh_total_; }          // zh_{..}

  double rho() const { return rho_; }
  std::optional<double> beta() const { return beta_; }
  double reciprocal_condition() const { return rcond_; }

  void check_node(int i) const {
    if (i < 0 || i >= size())
      throw ValidationError("node index " + std::to_string(i) + " out of range");
  }

 private:
  void fill_derived() {
    const int n = static_cast<int>(z_.rows());
    zh_ = z_;
    for (int t = 0; t < n; ++t) zh_.col(t) /= z_(t, t);
    z_row_ = z_.rowwise().sum();
    z_col_ = z_.colwise().sum().transpose();
    zh_row_ = zh_.rowwise().sum();
    zh_col_ = zh_.colwise().sum().transpose();
    z_total_ = z_row_.sum();
    zh_total_ = zh_row_.sum();
  }

  Eigen::MatrixXd w_, z_, zh_;
  Eigen::VectorXd z_row_, z_col_, zh_row_, zh_col_;
  double z_total_ = 0.0, zh_total_ = 0.0;
  double rho_ = 0.0, rcond_ = 0.0;
  std::optional<double> beta_;
};

inline PathWeightTables fundamental_matrix(const WeightMatrix& wm) {
  return PathWeightTables(wm);
}

inline Eigen::MatrixXd hitting_matrix(const PathWeightTables& t) { return t.hitting(); }

// An n x n table of path-set weights under a node-avoidance constraint.
struct AvoidanceSlice {
  int excluded;
  Eigen::MatrixXd values;
};

namespace detail {

[[noreturn]] inline void degenerate_denominator(int t, const std::vector<int>& avoided,
                                                double value) {
  std::ostringstream msg;
  msg << "numerical degeneracy: avoidance denominator " << value << " at destination " << t
      << " avoiding {";
  for (std::size_t k = 0; k < avoided.size(); ++k) msg << (k ? "," : "") << avoided[k];
  msg << "}; upstream tables are corrupted";
  throw ValidationError(msg.str());
}

inline double guarded(double denom, int t, const std::vector<int>& avoided) {
  if (!(denom >= kDenominatorGuard)) degenerate_denominator(t, avoided, denom);
  return denom;
}

inline void require_distinct_pair(int i, int j) {
  if (i == j)
    throw ValidationError("pair operation requires two distinct nodes; reduce i = j to the "
                          "single-node form");
}

inline void require_form(int form) {
  if (form < 1 || form > 3) throw ValidationError("form must be 1, 2 or 3");
}

inline std::vector<int> checked_set(const PathWeightTables& t, const std::vector<int>& nodes) {
  if (nodes.empty()) throw ValidationError("node set must be non-empty");
  std::set<int> unique;
  for (int i : nodes) {
    t.check_node(i);
    if (!unique.insert(i).second)
      throw ValidationError("node set contains node " + std::to_string(i) + " twice");
  }
  return nodes;
}

}  // namespace detail

// Weight of paths s -> t that visit node i: zh_si z_it.
inline Eigen::MatrixXd weight_containing_node(const PathWeightTables& t, int i) {
  t.check_node(i);
  return t.hitting().col(i) * t.fundamental().row(i);
}

// Weight of paths s -> t avoiding node i: z_st - zh_si z_it. Row and column i
// are exactly zero.
inline AvoidanceSlice weight_avoiding_node(const PathWeightTables& t, int i) {
  t.check_node(i);
  Eigen::MatrixXd m = t.fundamental() - weight_containing_node(t, i);
  m.row(i).setZero();
  m.col(i).setZero();
  return {i, std::move(m)};
}

// Hitting-path analog: (zh_st - zh_si zh_it) / (1 - zh_ti zh_it) for t != i,
// zero column at t = i. Entries at s = i vanish and the diagonal is 1.
inline AvoidanceSlice hitting_weight_avoiding_node(const PathWeightTables& t, int i) {
  t.check_node(i);
  const int n = t.size();
  const Eigen::MatrixXd& zh = t.hitting();
  Eigen::MatrixXd m(n, n);
  for (int tt = 0; tt < n; ++tt) {
    if (tt == i) {
      m.col(tt).setZero();
      continue;
    }
    const double denom = detail::guarded(1.0 - zh(tt, i) * zh(i, tt), tt, {i});
    for (int s = 0; s < n; ++s) m(s, tt) = (zh(s, tt) - zh(s, i) * zh(i, tt)) / denom;
  }
  return {i, std::move(m)};
}

// Weight of hitting paths s -> t that visit i: zh^{(-t)}_si zh_it for t != i,
// and the full hitting weight when i = t.
inline Eigen::MatrixXd hitting_weight_containing_node(const PathWeightTables& t, int i) {
  t.check_node(i);
  const int n = t.size();
  const Eigen::MatrixXd& zh = t.hitting();
  Eigen::MatrixXd m(n, n);
  for (int tt = 0; tt < n; ++tt) {
    if (tt == i) {
      m.col(tt) = zh.col(tt);
      continue;
    }
    const double denom = detail::guarded(1.0 - zh(i, tt) * zh(tt, i), i, {tt});
    for (int s = 0; s < n; ++s) m(s, tt) = (zh(s, i) - zh(s, tt) * zh(tt, i)) / denom * zh(i, tt);
  }
  return m;
}

// Weight of paths containing both i and j (i != j), split by which node is
// reached first: zh^{(+i)}_sj z_jt + zh^{(+j)}_si z_it.
inline Eigen::MatrixXd weight_containing_pair(const PathWeightTables& t, int i, int j) {
  detail::require_distinct_pair(i, j);
  const Eigen::MatrixXd via_j_last = hitting_weight_containing_node(t, i);
  const Eigen::MatrixXd via_i_last = hitting_weight_containing_node(t, j);
  return via_j_last.col(j) * t.fundamental().row(j) + via_i_last.col(i) * t.fundamental().row(i);
}

// Weight of paths avoiding the ordered set of nodes: recursive elimination of
// the front element against the tail. For {i, j} this is the "eliminate i
// inside the avoid-j world" pair expression.
inline Eigen::MatrixXd weight_avoiding_set(const PathWeightTables& t,
                                           const std::vector<int>& nodes) {
  const std::vector<int> set = detail::checked_set(t, nodes);
  if (set.size() == 1) return weight_avoiding_node(t, set[0]).values;
  const int pivot = set.front();
  const std::vector<int> rest(set.begin() + 1, set.end());
  Eigen::MatrixXd m = weight_avoiding_set(t, rest);
  const double diag = m(pivot, pivot);
  if (!(diag >= kDenominatorGuard)) detail::degenerate_denominator(pivot, rest, diag);
  m -= (m.col(pivot) / diag) * m.row(pivot);
  m.row(pivot).setZero();
  m.col(pivot).setZero();
  return m;
}

// Hitting analog: z^{(-I)}_st / z^{(-I)}_tt, zero columns for t in I.
inline Eigen::MatrixXd hitting_weight_avoiding_set(const PathWeightTables& t,
                                                   const std::vector<int>& nodes) {
  const std::vector<int> set = detail::checked_set(t, nodes);
  Eigen::MatrixXd m = weight_avoiding_set(t, set);
  const int n = t.size();
  for (int tt = 0; tt < n; ++tt) {
    if (std::find(set.begin(), set.end(), tt) != set.end()) {
      m.col(tt).setZero();
      continue;
    }
    m.col(tt) /= detail::guarded(m(tt, tt), tt, set);
  }
  return m;
}

// Three algebraically identical pair-avoidance expressions. Form 1 combines
// the two single-node avoidance slices against Z; forms 2 and 3 are the set
// recursion with elimination order (i then j) and (j then i).
inline Eigen::MatrixXd weight_avoiding_pair(const PathWeightTables& t, int i, int j, int form) {
  detail::require_distinct_pair(i, j);
  detail::require_form(form);
  Eigen::MatrixXd m;
  if (form == 1) {
    const AvoidanceSlice hi = hitting_weight_avoiding_node(t, i);
    const AvoidanceSlice hj = hitting_weight_avoiding_node(t, j);
    m = t.fundamental() - hj.values.col(i) * t.fundamental().row(i) -
        hi.values.col(j) * t.fundamental().row(j);
  } else if (form == 2) {
    m = weight_avoiding_set(t, {i, j});
  } else {
    m = weight_avoiding_set(t, {j, i});
  }
  m.row(i).setZero();
  m.col(i).setZero();
  m.row(j).setZero();
  m.col(j).setZero();
  return m;
}

// Hitting pair avoidance. Columns with destination in {i, j} are zero, the
// diagonal is 1 elsewhere, and rows starting inside {i, j} vanish.
inline Eigen::MatrixXd hitting_weight_avoiding_pair(const PathWeightTables& t, int i, int j,
                                                    int form) {
  detail::require_distinct_pair(i, j);
  detail::require_form(form);
  const int n = t.size();
  Eigen::MatrixXd m(n, n);
  if (form == 1) {
    const Eigen::MatrixXd hi = hitting_weight_avoiding_node(t, i).values;
    const Eigen::MatrixXd hj = hitting_weight_avoiding_node(t, j).values;
    const Eigen::MatrixXd& zh = t.hitting();
    for (int tt = 0; tt < n; ++tt) {
      if (tt == i || tt == j) {
        m.col(tt).setZero();
        continue;
      }
      const double denom = detail::guarded(
          1.0 - hj(tt, i) * zh(i, tt) - hi(tt, j) * zh(j, tt), tt, {i, j});
      for (int s = 0; s < n; ++s)
        m(s, tt) = (zh(s, tt) - hj(s, i) * zh(i, tt) - hi(s, j) * zh(j, tt)) / denom;
    }
  } else {
    const int inner = form == 2 ? i : j;  // eliminated node
    const int outer = form == 2 ? j : i;  // slice the world avoids already
    const Eigen::MatrixXd h = hitting_weight_avoiding_node(t, outer).values;
    for (int tt = 0; tt < n; ++tt) {
      if (tt == i || tt == j) {
        m.col(tt).setZero();
        continue;
      }
      const double denom =
          detail::guarded(1.0 - h(tt, inner) * h(inner, tt), tt, {i, j});
      for (int s = 0; s < n; ++s)
        m(s, tt) = (h(s, tt) - h(s, inner) * h(inner, tt)) / denom;
    }
  }
  m.row(i).setZero();
  m.row(j).setZero();
  return m;
}

// Weight of hitting paths containing both i and j, split by first arrival.
// Destination t = i or t = j reduces to the single-node form; s = t gives 0.
inline Eigen::MatrixXd hitting_weight_containing_pair(const PathWeightTables& t, int i, int j) {
  detail::require_distinct_pair(i, j);
  const int n = t.size();
  const Eigen::MatrixXd contain_i = hitting_weight_containing_node(t, i);
  const Eigen::MatrixXd contain_j = hitting_weight_containing_node(t, j);
  Eigen::MatrixXd m(n, n);
  for (int tt = 0; tt < n; ++tt) {
    if (tt == j) {
      m.col(tt) = contain_i.col(tt);
      continue;
    }
    if (tt == i) {
      m.col(tt) = contain_j.col(tt);
      continue;
    }
    const Eigen::MatrixXd avoid_jt = hitting_weight_avoiding_pair(t, j, tt, 2);
    const Eigen::MatrixXd avoid_it = hitting_weight_avoiding_pair(t, i, tt, 2);
    for (int s = 0; s < n; ++s)
      m(s, tt) = avoid_jt(s, i) * contain_j(i, tt) + avoid_it(s, j) * contain_i(j, tt);
    m(tt, tt) = 0.0;
  }
  return m;
}

// Inclusion-exclusion over subsets of I: paths (or hitting paths) containing
// every node of I as a signed sum of avoidance weights.
inline Eigen::MatrixXd weight_containing_set(const PathWeightTables& t,
                                             const std::vector<int>& nodes, bool hitting) {
  const std::vector<int> set = detail::checked_set(t, nodes);
  const int k = static_cast<int>(set.size());
  if (k > kContainingSetCap)
    throw ValidationError("containing-set query over " + std::to_string(k) +
                          " nodes exceeds the 2^|I| cap of " + std::to_string(kContainingSetCap));
  Eigen::MatrixXd total = hitting ? t.hitting() : t.fundamental();
  for (unsigned mask = 1; mask < (1u << k); ++mask) {
    std::vector<int> subset;
    for (int b = 0; b < k; ++b)
      if (mask & (1u << b)) subset.push_back(set[static_cast<std::size_t>(b)]);
    const Eigen::MatrixXd avoided = hitting ? hitting_weight_avoiding_set(t, subset)
                                            : weight_avoiding_set(t, subset);
    if (std::popcount(mask) % 2 == 1)
      total -= avoided;
    else
      total += avoided;
  }
  return total;
}

// Occurrence-weighted sums: sum over paths of eta(i) * weight.
inline Eigen::MatrixXd occurrence_weight_node(const PathWeightTables& t, int i) {
  t.check_node(i);
  return t.fundamental().col(i) * t.fundamental().row(i);
}

// Sum of eta(i) eta(j) * weight over regular paths; valid for i = j too.
inline Eigen::MatrixXd occurrence_weight_pair(const PathWeightTables& t, int i, int j) {
  t.check_node(i);
  t.check_node(j);
  const Eigen::MatrixXd& z = t.fundamental();
  Eigen::MatrixXd m = z.col(i) * z.row(j) * z(i, j) + z.col(j) * z.row(i) * z(j, i);
  if (i == j) m -= z.col(i) * z.row(j);
  return m;
}

// Sum of eta(i) * weight over hitting paths: z^{(-t)}_si zh_it, plus the full
// hitting weight on the i = t column (the terminal is visited exactly once).
inline Eigen::MatrixXd hitting_occurrence_weight_node(const PathWeightTables& t, int i) {
  t.check_node(i);
  const int n = t.size();
  const Eigen::MatrixXd& z = t.fundamental();
  const Eigen::MatrixXd& zh = t.hitting();
  Eigen::MatrixXd m(n, n);
  for (int tt = 0; tt < n; ++tt) {
    if (tt == i) {
      m.col(tt) = zh.col(tt);
      continue;
    }
    for (int s = 0; s < n; ++s) m(s, tt) = (z(s, i) - zh(s, tt) * z(tt, i)) * zh(i, tt);
  }
  return m;
}

// Sum of eta(i) eta(j) * weight over hitting paths; valid for i = j. The
// Kronecker terms cover the destination coinciding with i and/or j.
inline Eigen::MatrixXd hitting_occurrence_weight_pair(const PathWeightTables& t, int i, int j) {
  t.check_node(i);
  t.check_node(j);
  const int n = t.size();
  const Eigen::MatrixXd& z = t.fundamental();
  const Eigen::MatrixXd& zh = t.hitting();
  Eigen::MatrixXd m(n, n);
  for (int tt = 0; tt < n; ++tt) {
    const auto avoid_t = [&](int x, int y) {
      return (x == tt || y == tt) ? 0.0 : z(x, y) - zh(x, tt) * z(tt, y);
    };
    const double a_ij = avoid_t(i, j);
    const double a_ji = avoid_t(j, i);
    for (int s = 0; s < n; ++s) {
      const double a_si = avoid_t(s, i);
      const double a_sj = avoid_t(s, j);
      double value = a_si * a_ij * zh(j, tt) + a_sj * a_ji * zh(i, tt);
      if (i == j) value -= a_si * zh(j, tt);
      if (j == tt) value += a_si * zh(i, tt);
      if (i == tt) value += a_sj * zh(j, tt);
      if (i == tt && j == tt) value += zh(s, tt);
      m(s, tt) = value;
    }
  }
  return m;
}

// d z_st / d w_ij = z_si z_jt, as a matrix over (s, t).
inline Eigen::MatrixXd weight_gradient(const PathWeightTables& t, int i, int j) {
  t.check_node(i);
  t.check_node(j);
  return t.fundamental().col(i) * t.fundamental().row(j);
}

// d^2 z_st / (d w_kl d w_ij) = z_sk z_li z_jt + z_si z_jk z_lt.
inline double weight_second_derivative(const PathWeightTables& t, int s, int dst, int i, int j,
                                       int k, int l) {
  const Eigen::MatrixXd& z = t.fundamental();
  return z(s, k) * z(l, i) * z(j, dst) + z(s, i) * z(j, k) * z(l, dst);
}

}  // namespace bopkit
