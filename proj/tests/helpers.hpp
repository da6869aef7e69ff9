#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

#include "bopkit/common.hpp"
#include "bopkit/graph.hpp"
#include "bopkit/oracle.hpp"

namespace testutil {

// 2-node reference fixture: W = [[0, 0.5], [0.4, 0]].
// Z = [[1.25, 0.625], [0.5, 1.25]], Zh = [[1, 0.5], [0.4, 1]], rho = sqrt(0.2).
inline bopkit::WeightMatrix g2() {
  Eigen::MatrixXd w(2, 2);
  w << 0.0, 0.5, 0.4, 0.0;
  return bopkit::validate_weight_matrix(w);
}

inline bopkit::WeightedGraph random_graph(int n, std::uint64_t seed, double edge_prob = 0.6) {
  return bopkit::random_verification_graph(n, seed, edge_prob);
}

inline bopkit::WeightMatrix random_weight_matrix(int n, std::uint64_t seed, double beta = 1.0,
                                                 double edge_prob = 0.6) {
  return bopkit::random_verification_weight_matrix(n, seed, beta, edge_prob);
}

// Killed random-walk chain: a strongly connected random walk whose absorbing
// rows are zeroed. Non-absorbing rows stay stochastic, so every walk ends in
// an absorbing node almost surely.
struct KilledChain {
  bopkit::WeightMatrix wm;
  std::vector<int> absorbing;
};

inline KilledChain random_killed_chain(int n, std::uint64_t seed) {
  const bopkit::WeightedGraph g = random_graph(n, seed);
  Eigen::MatrixXd p = bopkit::reference_transition_matrix(g);
  bopkit::Rng rng(seed ^ 0x5bd1e995u);
  const int a = rng.uniform_int(0, n - 1);
  int b = a;
  while (b == a) b = rng.uniform_int(0, n - 1);
  p.row(a).setZero();
  p.row(b).setZero();
  std::vector<int> absorbing{std::min(a, b), std::max(a, b)};
  return {bopkit::validate_weight_matrix(p), std::move(absorbing)};
}

// Empirical absorption frequencies over `walks` killed random walks from s.
inline Eigen::VectorXd simulate_absorption(const KilledChain& chain, int s, int walks,
                                           std::uint64_t seed) {
  const Eigen::MatrixXd& w = chain.wm.values;
  const int n = static_cast<int>(w.rows());
  bopkit::Rng rng(seed);
  Eigen::VectorXd hits = Eigen::VectorXd::Zero(static_cast<int>(chain.absorbing.size()));
  const auto absorbing_index = [&](int u) {
    for (std::size_t k = 0; k < chain.absorbing.size(); ++k)
      if (chain.absorbing[k] == u) return static_cast<int>(k);
    return -1;
  };
  for (int walk = 0; walk < walks; ++walk) {
    int u = s;
    for (int step = 0; step < 100000; ++step) {
      const int slot = absorbing_index(u);
      if (slot >= 0) {
        hits(slot) += 1.0;
        break;
      }
      double r = rng.uniform();
      int next = -1;
      for (int v = 0; v < n; ++v) {
        if (w(u, v) <= 0.0) continue;
        next = v;
        r -= w(u, v);
        if (r < 0.0) break;
      }
      u = next;
    }
  }
  return hits / static_cast<double>(walks);
}

inline double max_abs_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

// Max relative deviation with an absolute floor of 1 in the denominator.
inline double max_rel_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  double worst = 0.0;
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) {
      const double scale = std::max({1.0, std::abs(a(i, j)), std::abs(b(i, j))});
      worst = std::max(worst, std::abs(a(i, j) - b(i, j)) / scale);
    }
  return worst;
}

}  // namespace testutil
