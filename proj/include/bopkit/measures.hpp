#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "bopkit/common.hpp"
#include "bopkit/path_tables.hpp"

namespace bopkit {

enum class PathFamily { regular, hitting };
enum class Statistic { presence, occurrence };

// Per-node expectations and pairwise second moments of a presence or
// occurrence variable under the path distribution.
struct MomentSet {
  Eigen::VectorXd first;
  Eigen::MatrixXd second;
  PathFamily family;
  Statistic statistic;
};

enum class KernelMethod {
  presence_cov,
  presence_cor,
  presence_cov_hitting,
  presence_cor_hitting,
  occurrence_cov,
  occurrence_cor,
  occurrence_cov_hitting,
  occurrence_cor_hitting,
  bop_distance,
};

inline const std::vector<std::pair<KernelMethod, const char*>>& kernel_method_names() {
  static const std::vector<std::pair<KernelMethod, const char*>> names = {
      {KernelMethod::presence_cov, "cov"},
      {KernelMethod::presence_cor, "cor"},
      {KernelMethod::presence_cov_hitting, "covh"},
      {KernelMethod::presence_cor_hitting, "corh"},
      {KernelMethod::occurrence_cov, "ncov"},
      {KernelMethod::occurrence_cor, "ncor"},
      {KernelMethod::occurrence_cov_hitting, "ncovh"},
      {KernelMethod::occurrence_cor_hitting, "ncorh"},
      {KernelMethod::bop_distance, "bopdist"},
  };
  return names;
}

inline std::string kernel_method_name(KernelMethod m) {
  for (const auto& [method, name] : kernel_method_names())
    if (method == m) return name;
  return "?";
}

// Display labels used in report tables.
inline std::string kernel_method_label(KernelMethod m) {
  switch (m) {
    case KernelMethod::presence_cov: return "Cov";
    case KernelMethod::presence_cor: return "Cor";
    case KernelMethod::presence_cov_hitting: return "CovH";
    case KernelMethod::presence_cor_hitting: return "CorH";
    case KernelMethod::occurrence_cov: return "NCov";
    case KernelMethod::occurrence_cor: return "NCor";
    case KernelMethod::occurrence_cov_hitting: return "NCovH";
    case KernelMethod::occurrence_cor_hitting: return "NCorH";
    case KernelMethod::bop_distance: return "BoPDist";
  }
  return "?";
}

inline KernelMethod parse_kernel_method(const std::string& name) {
  for (const auto& [method, label] : kernel_method_names())
    if (name == label) return method;
  throw ValidationError("unknown kernel method '" + name +
                        "' (expected cov|cor|covh|corh|ncov|ncor|ncovh|ncorh|bopdist)");
}

// An n x n node similarity (or distance, for bop_distance) matrix.
struct KernelMatrix {
  KernelMethod method;
  Eigen::MatrixXd values;
  std::optional<double> beta;
};

namespace detail {

// Runs fn(t) for t in [0, n) across `threads` workers. Each call writes only
// its own output slot, so results do not depend on the thread count.
inline void parallel_over_destinations(int n, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || n < 4) {
    for (int t = 0; t < n; ++t) fn(t);
    return;
  }
  std::vector<std::thread> workers;
  const int used = std::min(threads, n);
  for (int w = 0; w < used; ++w)
    workers.emplace_back([&, w] {
      for (int t = w; t < n; t += used) fn(t);
    });
  for (auto& worker : workers) worker.join();
}

// Column sum of the hitting avoidance slice: zh^{(-t)}_{.i} for i != t.
inline double zh_avoid_col_sum(const PathWeightTables& tb, int t, int i) {
  const double denom =
      guarded(1.0 - tb.zh(i, t) * tb.zh(t, i), i, {t});
  return (tb.zh_col_sum(i) - tb.zh_col_sum(t) * tb.zh(t, i)) / denom;
}

// Entry of the hitting avoidance slice: zh^{(-t)}_{xy}.
inline double zh_avoid_entry(const PathWeightTables& tb, int t, int x, int y) {
  if (x == t || y == t) return 0.0;
  const double denom = guarded(1.0 - tb.zh(y, t) * tb.zh(t, y), y, {t});
  return (tb.zh(x, y) - tb.zh(x, t) * tb.zh(t, y)) / denom;
}

// Column sum of the regular avoidance slice: z^{(-t)}_{.i}.
inline double z_avoid_col_sum(const PathWeightTables& tb, int t, int i) {
  if (i == t) return 0.0;
  return tb.z_col_sum(i) - tb.zh_col_sum(t) * tb.z(t, i);
}

inline double z_avoid_entry(const PathWeightTables& tb, int t, int x, int y) {
  if (x == t || y == t) return 0.0;
  return tb.z(x, y) - tb.zh(x, t) * tb.z(t, y);
}

}  // namespace detail

// Expected presence of each node on a drawn path: a betweenness measure.
inline Eigen::VectorXd presence_betweenness(const PathWeightTables& tb, PathFamily family,
                                            int threads = 1) {
  const int n = tb.size();
  Eigen::VectorXd result(n);
  if (family == PathFamily::regular) {
    for (int i = 0; i < n; ++i) result(i) = tb.zh_col_sum(i) * tb.z_row_sum(i) / tb.z_total();
    return result;
  }
  Eigen::MatrixXd contributions = Eigen::MatrixXd::Zero(n, n);  // (t, i)
  detail::parallel_over_destinations(n, threads, [&](int t) {
    for (int i = 0; i < n; ++i) {
      if (i == t) continue;
      contributions(t, i) = detail::zh_avoid_col_sum(tb, t, i) * tb.zh(i, t);
    }
  });
  for (int i = 0; i < n; ++i) result(i) = (contributions.col(i).sum() + tb.zh_col_sum(i)) / tb.zh_total();
  return result;
}

// Expected number of visits to each node.
inline Eigen::VectorXd occurrence_betweenness(const PathWeightTables& tb, PathFamily family,
                                              int threads = 1) {
  const int n = tb.size();
  Eigen::VectorXd result(n);
  if (family == PathFamily::regular) {
    for (int i = 0; i < n; ++i) result(i) = tb.z_col_sum(i) * tb.z_row_sum(i) / tb.z_total();
    return result;
  }
  Eigen::MatrixXd contributions = Eigen::MatrixXd::Zero(n, n);
  detail::parallel_over_destinations(n, threads, [&](int t) {
    for (int i = 0; i < n; ++i) {
      if (i == t) continue;
      contributions(t, i) = detail::z_avoid_col_sum(tb, t, i) * tb.zh(i, t);
    }
  });
  for (int i = 0; i < n; ++i) result(i) = (contributions.col(i).sum() + tb.zh_col_sum(i)) / tb.zh_total();
  return result;
}

// First and second moments of node presence. The diagonal of the second
// moment equals the first moment (an indicator squares to itself).
inline MomentSet copresence_moments(const PathWeightTables& tb, PathFamily family,
                                    int threads = 1) {
  const int n = tb.size();
  MomentSet m{presence_betweenness(tb, family, threads), Eigen::MatrixXd::Zero(n, n), family,
              Statistic::presence};
  if (family == PathFamily::regular) {
    // Column sum of hitting paths to j that contain i, times the onward mass.
    const auto contain_col_sum = [&](int i, int j) {
      const double denom = detail::guarded(1.0 - tb.zh(i, j) * tb.zh(j, i), i, {j});
      return (tb.zh_col_sum(i) - tb.zh_col_sum(j) * tb.zh(j, i)) / denom * tb.zh(i, j);
    };
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        m.second(i, j) = m.second(j, i) =
            (contain_col_sum(i, j) * tb.z_row_sum(j) + contain_col_sum(j, i) * tb.z_row_sum(i)) /
            tb.z_total();
  } else {
    std::vector<Eigen::MatrixXd> per_t(static_cast<std::size_t>(n));
    detail::parallel_over_destinations(n, threads, [&](int t) {
      Eigen::MatrixXd local = Eigen::MatrixXd::Zero(n, n);
      Eigen::VectorXd avoid_col(n);
      for (int i = 0; i < n; ++i)
        avoid_col(i) = i == t ? 0.0 : detail::zh_avoid_col_sum(tb, t, i);
      for (int i = 0; i < n; ++i) {
        if (i == t) continue;
        for (int j = i + 1; j < n; ++j) {
          if (j == t) continue;
          const double a_ij = detail::zh_avoid_entry(tb, t, i, j);
          const double a_ji = detail::zh_avoid_entry(tb, t, j, i);
          const double denom = detail::guarded(1.0 - a_ij * a_ji, i, {j, t});
          const double col_i = (avoid_col(i) - avoid_col(j) * a_ji) / denom;
          const double col_j = (avoid_col(j) - avoid_col(i) * a_ij) / denom;
          local(i, j) = col_i * a_ij * tb.zh(j, t) + col_j * a_ji * tb.zh(i, t);
        }
      }
      per_t[static_cast<std::size_t>(t)] = std::move(local);
    });
    for (int t = 0; t < n; ++t) m.second += per_t[static_cast<std::size_t>(t)];
    // Destination coinciding with one of the pair: zh^{(-j)}_{.i} zh_ij + sym.
    const auto boundary = [&](int i, int j) {
      const double denom = detail::guarded(1.0 - tb.zh(i, j) * tb.zh(j, i), i, {j});
      return (tb.zh_col_sum(i) - tb.zh_col_sum(j) * tb.zh(j, i)) / denom * tb.zh(i, j);
    };
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) {
        const double value = (m.second(i, j) + boundary(i, j) + boundary(j, i)) / tb.zh_total();
        m.second(i, j) = m.second(j, i) = value;
      }
  }
  m.second.diagonal() = m.first;
  return m;
}

// First and second moments of node visit counts.
inline MomentSet cooccurrence_moments(const PathWeightTables& tb, PathFamily family,
                                      int threads = 1) {
  const int n = tb.size();
  MomentSet m{occurrence_betweenness(tb, family, threads), Eigen::MatrixXd::Zero(n, n), family,
              Statistic::occurrence};
  if (family == PathFamily::regular) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double value = tb.z_col_sum(i) * tb.z(i, j) * tb.z_row_sum(j) +
                       tb.z_col_sum(j) * tb.z(j, i) * tb.z_row_sum(i);
        if (i == j) value -= tb.z_col_sum(i) * tb.z_row_sum(j);
        m.second(i, j) = value / tb.z_total();
      }
  } else {
    std::vector<Eigen::MatrixXd> per_t(static_cast<std::size_t>(n));
    detail::parallel_over_destinations(n, threads, [&](int t) {
      Eigen::MatrixXd local = Eigen::MatrixXd::Zero(n, n);
      Eigen::VectorXd avoid_col(n);
      for (int i = 0; i < n; ++i) avoid_col(i) = detail::z_avoid_col_sum(tb, t, i);
      for (int i = 0; i < n; ++i)
        for (int j = i; j < n; ++j) {
          const double a_ij = detail::z_avoid_entry(tb, t, i, j);
          const double a_ji = detail::z_avoid_entry(tb, t, j, i);
          double value = avoid_col(i) * a_ij * tb.zh(j, t) + avoid_col(j) * a_ji * tb.zh(i, t);
          if (i == j) value -= avoid_col(i) * tb.zh(j, t);
          if (j == t) value += avoid_col(i) * tb.zh(i, t);
          if (i == t) value += avoid_col(j) * tb.zh(j, t);
          if (i == t && j == t) value += tb.zh_col_sum(t);
          local(i, j) = value;
        }
      per_t[static_cast<std::size_t>(t)] = std::move(local);
    });
    for (int t = 0; t < n; ++t) m.second += per_t[static_cast<std::size_t>(t)];
    for (int i = 0; i < n; ++i)
      for (int j = i; j < n; ++j) {
        const double value = m.second(i, j) / tb.zh_total();
        m.second(i, j) = m.second(j, i) = value;
      }
  }
  m.second = ((m.second + m.second.transpose()) * 0.5).eval();
  return m;
}

namespace detail {

inline MomentSet moments_for(const PathWeightTables& tb, Statistic stat, PathFamily family,
                             int threads) {
  return stat == Statistic::presence ? copresence_moments(tb, family, threads)
                                     : cooccurrence_moments(tb, family, threads);
}

}  // namespace detail

// One of the eight covariance/correlation kernels over node presence or
// occurrence variables. Correlation variants carry a unit diagonal.
inline KernelMatrix kernel(const PathWeightTables& tb, KernelMethod method, int threads = 1) {
  if (method == KernelMethod::bop_distance)
    throw ValidationError("bop_distance is a distance, not a covariance kernel; "
                          "call bop_distance()");
  const bool correlation = method == KernelMethod::presence_cor ||
                           method == KernelMethod::presence_cor_hitting ||
                           method == KernelMethod::occurrence_cor ||
                           method == KernelMethod::occurrence_cor_hitting;
  const Statistic stat = (method == KernelMethod::presence_cov ||
                          method == KernelMethod::presence_cor ||
                          method == KernelMethod::presence_cov_hitting ||
                          method == KernelMethod::presence_cor_hitting)
                             ? Statistic::presence
                             : Statistic::occurrence;
  const PathFamily family = (method == KernelMethod::presence_cov_hitting ||
                             method == KernelMethod::presence_cor_hitting ||
                             method == KernelMethod::occurrence_cov_hitting ||
                             method == KernelMethod::occurrence_cor_hitting)
                                ? PathFamily::hitting
                                : PathFamily::regular;
  const MomentSet moments = detail::moments_for(tb, stat, family, threads);
  Eigen::MatrixXd cov = moments.second - moments.first * moments.first.transpose();
  cov = ((cov + cov.transpose()) * 0.5).eval();
  if (!correlation) return {method, std::move(cov), tb.beta()};

  const int n = tb.size();
  Eigen::VectorXd scale(n);
  for (int i = 0; i < n; ++i) {
    if (cov(i, i) <= 1e-14)
      throw ValidationError("degenerate variance " + std::to_string(cov(i, i)) + " at node " +
                            std::to_string(i) + " while normalizing a correlation kernel");
    scale(i) = 1.0 / std::sqrt(cov(i, i));
  }
  Eigen::MatrixXd cor = scale.asDiagonal() * cov * scale.asDiagonal();
  cor = ((cor + cor.transpose()) * 0.5).eval();
  cor.diagonal().setOnes();
  return {method, std::move(cor), tb.beta()};
}

// Symmetrized negative log of hitting-path weights: a true metric.
inline KernelMatrix bop_distance(const PathWeightTables& tb) {
  const int n = tb.size();
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      if (!(tb.zh(i, j) > 0.0) || !(tb.zh(j, i) > 0.0))
        throw ValidationError("zero hitting weight between nodes " + std::to_string(i) + " and " +
                              std::to_string(j) + "; nodes are not mutually reachable");
      d(i, j) = d(j, i) = 0.5 * (-std::log(tb.zh(i, j)) - std::log(tb.zh(j, i)));
    }
  return {KernelMethod::bop_distance, std::move(d), tb.beta()};
}

// Unified dispatch for the nine CLI method names.
inline KernelMatrix compute_similarity(const PathWeightTables& tb, KernelMethod method,
                                       int threads = 1) {
  return method == KernelMethod::bop_distance ? bop_distance(tb) : kernel(tb, method, threads);
}

// Probability that a killed walk from s ends in each absorbing node,
// conditional on being absorbed in the set.
inline Eigen::VectorXd absorption_probability(const WeightMatrix& wm,
                                              const std::vector<int>& absorbing, int s) {
  const int n = wm.size();
  if (absorbing.empty()) throw ValidationError("absorbing set is empty");
  if (s < 0 || s >= n) throw ValidationError("start node out of range");
  for (int a : absorbing) {
    if (a < 0 || a >= n) throw ValidationError("absorbing node out of range");
    if (wm.values.row(a).cwiseAbs().maxCoeff() != 0.0)
      throw ValidationError("row " + std::to_string(a) +
                            " is not zeroed; not a killed-chain weight matrix");
  }
  const PathWeightTables tb = fundamental_matrix(wm);
  double denom = 0.0;
  for (int a : absorbing) denom += tb.z(s, a);
  if (!(denom > 0.0))
    throw ValidationError("no absorbing node is reachable from node " + std::to_string(s));
  Eigen::VectorXd p(static_cast<int>(absorbing.size()));
  for (int k = 0; k < p.size(); ++k) p(k) = tb.z(s, absorbing[static_cast<std::size_t>(k)]) / denom;
  return p;
}

}  // namespace bopkit
