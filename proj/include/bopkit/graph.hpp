#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bopkit/common.hpp"

namespace bopkit {

// Reject weight matrices whose spectral radius comes this close to 1:
// (I - W) becomes too ill-conditioned for anything downstream.
inline constexpr double kSpectralRadiusMargin = 1e-9;

// A strongly connected weighted graph: non-negative affinities A and positive
// costs C on edges. Costs on non-edges are stored as +inf and never read.
struct WeightedGraph {
  int n = 0;
  std::vector<long long> node_ids;  // external 1-based labels, sorted
  Eigen::MatrixXd affinity;         // a_ij >= 0, zero means no edge
  Eigen::MatrixXd cost;             // c_ij > 0 wherever a_ij > 0

  int edge_count() const {
    int m = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (affinity(i, j) > 0.0) ++m;
    return m;
  }

  int index_of(long long external_id) const {
    const auto it = std::lower_bound(node_ids.begin(), node_ids.end(), external_id);
    if (it == node_ids.end() || *it != external_id)
      throw ValidationError("unknown node id " + std::to_string(external_id));
    return static_cast<int>(it - node_ids.begin());
  }
};

// Validated non-negative matrix with spectral radius < 1 - margin.
struct WeightMatrix {
  Eigen::MatrixXd values;
  double rho = 0.0;
  std::optional<double> beta;  // absent when the matrix was supplied directly

  int size() const { return static_cast<int>(values.rows()); }
};

// Spectral radius of |M| (Perron eigenvalue). Power iteration with a +I shift
// so the dominant eigenvalue rho+1 is strictly dominant in modulus even on
// periodic structures; full eigendecomposition fallback for n <= 64.
inline double spectral_radius(const Eigen::MatrixXd& m) {
  const int n = static_cast<int>(m.rows());
  if (n == 0) return 0.0;
  const Eigen::MatrixXd a = m.cwiseAbs();
  if (!a.allFinite()) throw ValidationError("spectral_radius: non-finite entries");

  constexpr int kMaxIterations = 10000;
  constexpr double kTolerance = 1e-12;
  Eigen::VectorXd v = Eigen::VectorXd::Ones(n).normalized();
  double estimate = -1.0;
  for (int it = 0; it < kMaxIterations; ++it) {
    const Eigen::VectorXd w = a * v + v;  // (A + I) v, growth factor rho + 1
    const double next = w.norm();
    if (next == 0.0) return 0.0;
    v = w / next;
    if (estimate >= 0.0 && std::abs(next - estimate) <= kTolerance * std::max(1.0, next))
      return next - 1.0;
    estimate = next;
  }
  if (n <= 64) {
    const Eigen::EigenSolver<Eigen::MatrixXd> solver(a, /*computeEigenvectors=*/false);
    return solver.eigenvalues().cwiseAbs().maxCoeff();
  }
  throw ValidationError("spectral_radius: power iteration did not converge in 10000 iterations");
}

namespace detail {

inline void check_spectral_radius(double rho) {
  if (rho >= 1.0 - kSpectralRadiusMargin) {
    std::ostringstream msg;
    msg.precision(17);
    msg << "weight matrix rejected: spectral radius " << rho << " >= 1 - 1e-9";
    throw ValidationError(msg.str());
  }
}

// Forward + reverse reachability from node 0.
inline bool strongly_connected(const Eigen::MatrixXd& a) {
  const int n = static_cast<int>(a.rows());
  if (n == 0) return false;
  for (int pass = 0; pass < 2; ++pass) {
    std::vector<char> seen(static_cast<std::size_t>(n), 0);
    std::vector<int> stack{0};
    seen[0] = 1;
    while (!stack.empty()) {
      const int u = stack.back();
      stack.pop_back();
      for (int v = 0; v < n; ++v) {
        const double w = pass == 0 ? a(u, v) : a(v, u);
        if (w > 0.0 && !seen[static_cast<std::size_t>(v)]) {
          seen[static_cast<std::size_t>(v)] = 1;
          stack.push_back(v);
        }
      }
    }
    if (std::count(seen.begin(), seen.end(), 1) != n) return false;
  }
  return true;
}

}  // namespace detail

// Reads the edge-list format: one edge per line, `src dst affinity [cost]`,
// 1-based integer ids, '#' lines ignored. Missing costs default to 1/affinity.
inline WeightedGraph read_graph(std::istream& in, const std::string& source_name) {
  struct Edge {
    long long src, dst;
    double affinity, cost;
    bool has_cost;
  };
  std::vector<Edge> edges;
  std::map<std::pair<long long, long long>, int> first_line_of;
  std::map<long long, int> ids;

  std::string line;
  int line_no = 0;
  const auto fail = [&](const std::string& what) {
    throw IoError(source_name + ":" + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    const auto start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos || line[start] == '#') continue;
    std::istringstream fields(line);
    Edge e{};
    if (!(fields >> e.src >> e.dst >> e.affinity)) fail("expected `src dst affinity [cost]`");
    e.has_cost = static_cast<bool>(fields >> e.cost);
    std::string extra;
    if (fields >> extra) fail("trailing field '" + extra + "'");
    if (e.src < 1 || e.dst < 1) fail("node ids must be positive integers");
    if (!(e.affinity > 0.0) || !std::isfinite(e.affinity))
      fail("non-positive weight " + std::to_string(e.affinity));
    if (e.has_cost && (!(e.cost > 0.0) || !std::isfinite(e.cost)))
      fail("non-positive cost " + std::to_string(e.cost));
    const auto key = std::make_pair(e.src, e.dst);
    if (const auto it = first_line_of.find(key); it != first_line_of.end())
      fail("duplicate edge " + std::to_string(e.src) + " -> " + std::to_string(e.dst) +
           " (first seen on line " + std::to_string(it->second) + ")");
    first_line_of[key] = line_no;
    ids[e.src];
    ids[e.dst];
    edges.push_back(e);
  }
  if (edges.empty()) throw IoError(source_name + ": no edges");

  WeightedGraph g;
  g.n = static_cast<int>(ids.size());
  g.node_ids.reserve(ids.size());
  for (auto& [id, index] : ids) {
    index = static_cast<int>(g.node_ids.size());
    g.node_ids.push_back(id);
  }
  g.affinity = Eigen::MatrixXd::Zero(g.n, g.n);
  g.cost = Eigen::MatrixXd::Constant(g.n, g.n, std::numeric_limits<double>::infinity());
  for (const Edge& e : edges) {
    const int u = ids[e.src];
    const int v = ids[e.dst];
    g.affinity(u, v) = e.affinity;
    g.cost(u, v) = e.has_cost ? e.cost : 1.0 / e.affinity;
  }
  if (!detail::strongly_connected(g.affinity))
    throw ValidationError(source_name + ": graph is not strongly connected");
  return g;
}

inline WeightedGraph load_graph(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return read_graph(in, path);
}

// P_ref = Diag(A e)^{-1} A, the natural random walk on the affinities.
inline Eigen::MatrixXd reference_transition_matrix(const WeightedGraph& g) {
  Eigen::MatrixXd p = g.affinity;
  for (int i = 0; i < g.n; ++i) {
    const double degree = g.affinity.row(i).sum();
    if (!(degree > 0.0))
      throw ValidationError("node " + std::to_string(g.node_ids[static_cast<std::size_t>(i)]) +
                            " has zero out-degree");
    p.row(i) /= degree;
  }
  return p;
}

// W = P_ref (elementwise) exp(-beta C), evaluated on edges only.
inline WeightMatrix build_weight_matrix(const WeightedGraph& g, double beta) {
  if (!(beta > 0.0) || !std::isfinite(beta))
    throw ValidationError("beta must be a positive finite scalar");
  const Eigen::MatrixXd p = reference_transition_matrix(g);
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(g.n, g.n);
  for (int i = 0; i < g.n; ++i)
    for (int j = 0; j < g.n; ++j)
      if (g.affinity(i, j) > 0.0) w(i, j) = p(i, j) * std::exp(-beta * g.cost(i, j));
  WeightMatrix result{std::move(w), 0.0, beta};
  result.rho = spectral_radius(result.values);
  detail::check_spectral_radius(result.rho);
  return result;
}

// Direct-W entry path. Accepts matrices from killed/absorbing chains whose
// graph is not strongly connected; only non-negativity and rho < 1 are required.
inline WeightMatrix validate_weight_matrix(const Eigen::MatrixXd& w) {
  if (w.rows() != w.cols()) throw ValidationError("weight matrix must be square");
  for (int i = 0; i < w.rows(); ++i)
    for (int j = 0; j < w.cols(); ++j) {
      if (!std::isfinite(w(i, j)))
        throw ValidationError("weight matrix has a non-finite entry at (" + std::to_string(i + 1) +
                              "," + std::to_string(j + 1) + ")");
      if (w(i, j) < 0.0)
        throw ValidationError("weight matrix has a negative entry at (" + std::to_string(i + 1) +
                              "," + std::to_string(j + 1) + ")");
    }
  WeightMatrix result{w, spectral_radius(w), std::nullopt};
  detail::check_spectral_radius(result.rho);
  return result;
}

struct DirectWeightMatrix {
  WeightMatrix matrix;
  std::vector<long long> node_ids;
};

// Edge-list file interpreted directly as w_ij entries (no random-walk
// normalization, no costs); connectivity is not required here.
inline DirectWeightMatrix load_weight_matrix(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  struct Entry {
    long long src, dst;
    double value;
  };
  std::vector<Entry> entries;
  std::map<std::pair<long long, long long>, bool> seen;
  std::map<long long, int> ids;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos || line[start] == '#') continue;
    std::istringstream fields(line);
    Entry e{};
    if (!(fields >> e.src >> e.dst >> e.value))
      throw IoError(path + ":" + std::to_string(line_no) + ": expected `src dst weight`");
    if (e.src < 1 || e.dst < 1)
      throw IoError(path + ":" + std::to_string(line_no) + ": node ids must be positive integers");
    if (!(e.value > 0.0) || !std::isfinite(e.value))
      throw IoError(path + ":" + std::to_string(line_no) + ": weight must be positive and finite");
    if (seen[{e.src, e.dst}])
      throw IoError(path + ":" + std::to_string(line_no) + ": duplicate entry");
    seen[{e.src, e.dst}] = true;
    ids[e.src];
    ids[e.dst];
    entries.push_back(e);
  }
  if (entries.empty()) throw IoError(path + ": no entries");
  DirectWeightMatrix result;
  int next = 0;
  for (auto& [id, index] : ids) {
    index = next++;
    result.node_ids.push_back(id);
  }
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(next, next);
  for (const Entry& e : entries) w(ids[e.src], ids[e.dst]) = e.value;
  result.matrix = validate_weight_matrix(w);
  return result;
}

}  // namespace bopkit
