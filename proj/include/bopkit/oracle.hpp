#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bopkit/common.hpp"
#include "bopkit/graph.hpp"
#include "bopkit/measures.hpp"
#include "bopkit/path_tables.hpp"

namespace bopkit {

// Enumeration guards: explicit path enumeration is exponential in depth.
inline constexpr int kEnumerationMaxNodes = 8;
inline constexpr int kEnumerationMaxDepth = 40;
inline constexpr double kArrivalBudgetPerStart = 3.0e6;
// One-off enumeration calls fail fast past this predicted node count rather
// than running for hours.
inline constexpr double kEnumerationArrivalCap = 5.0e7;

// Default verification graph family: directed Erdos-Renyi edges (probability
// `edge_prob`) over a random Hamiltonian cycle so the graph is strongly
// connected, affinities uniform in [0.5, 2], costs 1/affinity.
inline WeightedGraph random_verification_graph(int n, std::uint64_t seed,
                                               double edge_prob = 0.6) {
  Rng rng(seed);
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  rng.shuffle(order);

  WeightedGraph g;
  g.n = n;
  for (int i = 0; i < n; ++i) g.node_ids.push_back(i + 1);
  g.affinity = Eigen::MatrixXd::Zero(n, n);
  for (int k = 0; k < n; ++k) {
    const int u = order[static_cast<std::size_t>(k)];
    const int v = order[static_cast<std::size_t>((k + 1) % n)];
    if (u != v) g.affinity(u, v) = rng.uniform(0.5, 2.0);
  }
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (i != j && g.affinity(i, j) == 0.0 && rng.bernoulli(edge_prob))
        g.affinity(i, j) = rng.uniform(0.5, 2.0);
  g.cost = Eigen::MatrixXd::Constant(n, n, std::numeric_limits<double>::infinity());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      if (g.affinity(i, j) > 0.0) g.cost(i, j) = 1.0 / g.affinity(i, j);
  return g;
}

inline WeightMatrix random_verification_weight_matrix(int n, std::uint64_t seed,
                                                      double beta = 1.0,
                                                      double edge_prob = 0.6) {
  return build_weight_matrix(random_verification_graph(n, seed, edge_prob), beta);
}

// Uniform address of one enumerable quantity: endpoints (−1 aggregates the
// index), a path family, presence constraints, and occurrence indices.
struct QuantitySpec {
  bool hitting = false;
  int s = -1, t = -1;
  std::vector<int> contains;
  std::vector<int> avoids;
  int occurrence_i = -1, occurrence_j = -1;

  // Polynomial degree of the statistic in the path length: 0 for presence
  // constraints, 1 for a single visit count, 2 for a count product.
  int degree() const { return occurrence_i < 0 ? 0 : (occurrence_j < 0 ? 1 : 2); }
};

struct EnumerationResult {
  double value = 0.0;
  int depth = 0;
  double remainder_bound = 0.0;
};

namespace detail {

// Certified bound on the weight mass of paths longer than `depth`, built only
// from explicit matrix powers (no matrix inversion): for tau = depth+1+d,
// entrywise [W^tau]_{st} <= rowsum(W^{depth+1})_s * c_max * q^floor(d/m) with
// q = ||W^m||_inf < 1, and the scalar tails sum(d+1)^k q^d in closed form.
class TailBound {
 public:
  TailBound(const Eigen::MatrixXd& w, int depth) : depth_(depth) {
    Eigen::MatrixXd power = Eigen::MatrixXd::Identity(w.rows(), w.cols());
    c_max_ = 1.0;
    m_ = -1;
    for (int step = 1; step <= 64; ++step) {
      power = power * w;
      const double norm = power.rowwise().sum().maxCoeff();
      if (norm < 1.0) {
        m_ = step;
        q_ = norm;
        break;
      }
      c_max_ = std::max(c_max_, norm);
    }
    if (m_ < 0)
      throw ValidationError("cannot certify an enumeration tail bound: no power of W up to 64 "
                            "is a contraction in the row-sum norm");
    Eigen::MatrixXd high = Eigen::MatrixXd::Identity(w.rows(), w.cols());
    for (int step = 0; step <= depth; ++step) high = high * w;
    row_sums_ = high.rowwise().sum();
  }

  double start_bound(int s, int degree) const { return row_sums_(s) * factor(degree); }
  double total_bound(int degree) const { return row_sums_.sum() * factor(degree); }

 private:
  double factor(int degree) const {
    const double head = static_cast<double>(depth_ + 1 + m_);
    const double r = 1.0 / (1.0 - q_);
    double geometric = r;                                // sum (d+1)^0 q^d
    if (degree == 1) geometric = r * r;                  // sum (d+1)^1 q^d
    if (degree == 2) geometric = (1.0 + q_) * r * r * r; // sum (d+1)^2 q^d
    return c_max_ * m_ * std::pow(head, degree) * geometric;
  }

  Eigen::VectorXd row_sums_;
  double q_ = 0.0, c_max_ = 1.0;
  int m_ = -1, depth_ = 0;
};

}  // namespace detail

// Depth-first enumeration of every path from one start node, length 0..limit
// (zero-length paths included). One pass accumulates, per end node: total
// weights bucketed by the set of visited nodes, the same restricted to
// hitting paths (first arrival at the end node), and visit-count moments.
class PathSweep {
 public:
  PathSweep(const Eigen::MatrixXd& w, int start, int depth_limit)
      : n_(static_cast<int>(w.rows())), limit_(depth_limit), start_(start) {
    if (n_ > kEnumerationMaxNodes)
      throw ValidationError("path enumeration is capped at " +
                            std::to_string(kEnumerationMaxNodes) + " nodes");
    if (depth_limit < 0 || depth_limit > kEnumerationMaxDepth)
      throw ValidationError("enumeration depth must lie in [0, " +
                            std::to_string(kEnumerationMaxDepth) + "]");
    edges_.resize(static_cast<std::size_t>(n_));
    for (int u = 0; u < n_; ++u)
      for (int v = 0; v < n_; ++v)
        if (w(u, v) > 0.0) edges_[static_cast<std::size_t>(u)].push_back({v, w(u, v)});
    const std::size_t masks = std::size_t{1} << n_;
    regular_.assign(static_cast<std::size_t>(n_) * masks, 0.0);
    hitting_.assign(static_cast<std::size_t>(n_) * masks, 0.0);
    occ1_.assign(static_cast<std::size_t>(n_) * n_, 0.0);
    hocc1_.assign(static_cast<std::size_t>(n_) * n_, 0.0);
    occ2_.assign(static_cast<std::size_t>(n_) * n_ * n_, 0.0);
    hocc2_.assign(static_cast<std::size_t>(n_) * n_ * n_, 0.0);
    counts_.assign(static_cast<std::size_t>(n_), 0);
    dfs(start, 1.0, 0);
  }

  int start() const { return start_; }
  long long arrivals() const { return arrivals_; }

  double masked_weight(int t, unsigned required, unsigned forbidden, bool hitting) const {
    const std::vector<double>& table = hitting ? hitting_ : regular_;
    const std::size_t base = static_cast<std::size_t>(t) << n_;
    double sum = 0.0;
    for (unsigned mask = 0; mask < (1u << n_); ++mask)
      if ((mask & required) == required && (mask & forbidden) == 0) sum += table[base + mask];
    return sum;
  }

  double occurrence_weight(int t, int i, bool hitting) const {
    const std::vector<double>& table = hitting ? hocc1_ : occ1_;
    return table[static_cast<std::size_t>(t) * n_ + i];
  }

  double occurrence_weight(int t, int i, int j, bool hitting) const {
    const std::vector<double>& table = hitting ? hocc2_ : occ2_;
    return table[(static_cast<std::size_t>(t) * n_ + i) * n_ + j];
  }

 private:
  void dfs(int u, double weight, int depth) {
    ++arrivals_;
    const std::size_t su = static_cast<std::size_t>(u);
    ++counts_[su];
    const bool first_visit = counts_[su] == 1;
    if (first_visit) {
      mask_ |= 1u << u;
      visited_.push_back(u);
    }
    const std::size_t slot = (su << n_) | mask_;
    regular_[slot] += weight;
    if (first_visit) hitting_[slot] += weight;
    for (int a : visited_) {
      const double wa = weight * counts_[static_cast<std::size_t>(a)];
      occ1_[su * n_ + a] += wa;
      if (first_visit) hocc1_[su * n_ + a] += wa;
      for (int b : visited_) {
        const double wab = wa * counts_[static_cast<std::size_t>(b)];
        occ2_[(su * n_ + a) * n_ + b] += wab;
        if (first_visit) hocc2_[(su * n_ + a) * n_ + b] += wab;
      }
    }
    if (depth < limit_)
      for (const auto& [v, wv] : edges_[su]) dfs(v, weight * wv, depth + 1);
    --counts_[su];
    if (counts_[su] == 0) {
      mask_ &= ~(1u << u);
      visited_.pop_back();
    }
  }

  int n_, limit_, start_;
  unsigned mask_ = 0;
  long long arrivals_ = 0;
  std::vector<std::vector<std::pair<int, double>>> edges_;
  std::vector<int> counts_;
  std::vector<int> visited_;
  std::vector<double> regular_, hitting_, occ1_, hocc1_, occ2_, hocc2_;
};

namespace detail {

inline unsigned bits_of(const std::vector<int>& nodes) {
  unsigned mask = 0;
  for (int i : nodes) mask |= 1u << i;
  return mask;
}

inline double extract(const PathSweep& sweep, const QuantitySpec& spec, int t) {
  if (spec.degree() == 0)
    return sweep.masked_weight(t, bits_of(spec.contains), bits_of(spec.avoids), spec.hitting);
  if (!spec.contains.empty() || !spec.avoids.empty())
    throw ValidationError("occurrence statistics cannot carry presence constraints");
  if (spec.degree() == 1) return sweep.occurrence_weight(t, spec.occurrence_i, spec.hitting);
  return sweep.occurrence_weight(t, spec.occurrence_i, spec.occurrence_j, spec.hitting);
}

// Predicted arrival count of a sweep, via powers of the 0/1 edge-count matrix.
inline double predicted_arrivals(const Eigen::MatrixXd& w, int start, int depth) {
  const int n = static_cast<int>(w.rows());
  Eigen::VectorXd reach = Eigen::VectorXd::Zero(n);
  reach(start) = 1.0;
  Eigen::MatrixXd counts = (w.array() > 0.0).cast<double>().matrix();
  double total = reach.sum();
  for (int step = 0; step < depth; ++step) {
    reach = (counts.transpose() * reach).eval();
    total += reach.sum();
    if (total > 1e15) break;
  }
  return total;
}

}  // namespace detail

// Truncated brute-force evaluation of one quantity, with a certified bound on
// the omitted tail.
inline EnumerationResult enumerate_paths(const WeightMatrix& wm, const QuantitySpec& spec,
                                         int depth) {
  const int n = wm.size();
  const auto check_index = [&](int i) {
    if (i < 0 || i >= n) throw ValidationError("quantity index out of range");
  };
  for (int i : spec.contains) check_index(i);
  for (int i : spec.avoids) check_index(i);
  if (spec.occurrence_i >= 0) check_index(spec.occurrence_i);
  if (spec.occurrence_j >= 0) check_index(spec.occurrence_j);
  if (spec.s >= 0) check_index(spec.s);
  if (spec.t >= 0) check_index(spec.t);

  const detail::TailBound tail(wm.values, depth);
  EnumerationResult result;
  result.depth = depth;
  std::vector<int> starts;
  if (spec.s >= 0)
    starts.push_back(spec.s);
  else
    for (int s = 0; s < n; ++s) starts.push_back(s);
  double predicted = 0.0;
  for (int s : starts) predicted += detail::predicted_arrivals(wm.values, s, depth);
  if (predicted > kEnumerationArrivalCap)
    throw ValidationError("enumeration would visit about " + std::to_string(predicted) +
                          " path nodes; reduce the depth or the graph size");
  for (int s : starts) {
    const PathSweep sweep(wm.values, s, depth);
    if (spec.t >= 0)
      result.value += detail::extract(sweep, spec, spec.t);
    else
      for (int t = 0; t < n; ++t) result.value += detail::extract(sweep, spec, t);
    result.remainder_bound += tail.start_bound(s, spec.degree());
  }
  return result;
}

// One row of a verification report: a quantity kind, the worst deviation seen
// over all index combinations, and the allowance it was compared against.
struct QuantityCheck {
  std::string kind;
  double max_deviation = 0.0;
  double allowance = 0.0;
  long long comparisons = 0;
  std::string worst_indices;
  bool pass = true;
};

struct VerifyReport {
  int n = 0;
  double tol = 0.0;
  int depth = 0;
  long long arrivals = 0;
  std::vector<QuantityCheck> checks;
  bool pass = true;

  const QuantityCheck* first_failure() const {
    for (const auto& c : checks)
      if (!c.pass) return &c;
    return nullptr;
  }

  std::string render() const {
    std::ostringstream out;
    out << "quantity                          comparisons   max deviation       allowance  status\n";
    for (const auto& c : checks) {
      out << std::left << std::setw(34) << c.kind << std::right << std::setw(11) << c.comparisons
          << std::scientific << std::setprecision(3) << std::setw(16) << c.max_deviation
          << std::setw(16) << c.allowance << "  " << (c.pass ? "pass" : "FAIL");
      if (!c.pass) out << "  at " << c.worst_indices;
      out << "\n" << std::defaultfloat;
    }
    out << "depth " << depth << ", " << arrivals << " path arrivals, overall "
        << (pass ? "PASS" : "FAIL") << "\n";
    return out.str();
  }
};

// Corruption applied to the closed-form fundamental matrix before comparing;
// the oracle must then flag the first quantity kind.
struct InjectedFault {
  int s = 0, t = 0;
  double delta = 1e-3;
};

namespace detail {

class CheckCollector {
 public:
  explicit CheckCollector(VerifyReport& report) : report_(report) {}

  std::size_t open(const std::string& kind) {
    report_.checks.push_back(QuantityCheck{kind});
    return report_.checks.size() - 1;
  }

  void record(std::size_t slot, double closed, double enumerated, double allowance,
              const std::string& indices) {
    QuantityCheck& check = report_.checks[slot];
    const double deviation = std::abs(closed - enumerated);
    ++check.comparisons;
    if (deviation > check.max_deviation) {
      check.max_deviation = deviation;
      check.allowance = allowance;
      check.worst_indices = indices;
    }
    if (deviation >= allowance) {
      check.pass = false;
      report_.pass = false;
    }
  }

 private:
  VerifyReport& report_;
};

inline std::string index_label(std::initializer_list<int> indices) {
  std::string out = "(";
  bool sep = false;
  for (int i : indices) {
    if (sep) out += ",";
    out += std::to_string(i);
    sep = true;
  }
  return out + ")";
}

}  // namespace detail

// Compares every closed-form quantity against truncated enumeration with
// iterative deepening: the depth doubles until the certified presence-level
// remainder falls below tol/10, the predicted enumeration cost exceeds its
// budget, or the depth cap is reached. Each comparison must satisfy
// |closed - enumerated| < tol + certified remainder.
inline VerifyReport verify_all(const WeightMatrix& wm, double tol,
                               const std::optional<InjectedFault>& fault = std::nullopt) {
  const int n = wm.size();
  if (n > kEnumerationMaxNodes)
    throw ValidationError("verify_all is capped at " + std::to_string(kEnumerationMaxNodes) +
                          " nodes");

  const auto feasible = [&](int d) {
    double worst = 0.0;
    for (int s = 0; s < n; ++s)
      worst = std::max(worst, detail::predicted_arrivals(wm.values, s, d));
    return worst <= kArrivalBudgetPerStart;
  };
  const auto settled = [&](int d) {
    return detail::TailBound(wm.values, d).total_bound(0) < tol / 10.0;
  };
  int depth = 8;
  while (depth > 2 && !feasible(depth)) depth /= 2;
  while (!settled(depth) && depth * 2 <= kEnumerationMaxDepth && feasible(depth * 2)) depth *= 2;
  // The last doubling may overshoot the budget by far; claim the headroom in
  // smaller steps.
  while (!settled(depth) && depth + 4 <= kEnumerationMaxDepth && feasible(depth + 4)) depth += 4;

  PathWeightTables tables = fundamental_matrix(wm);
  if (fault) {
    Eigen::MatrixXd corrupted = tables.fundamental();
    corrupted(fault->s, fault->t) += fault->delta;
    tables = PathWeightTables(wm, std::move(corrupted));
  }

  std::vector<PathSweep> sweeps;
  sweeps.reserve(static_cast<std::size_t>(n));
  for (int s = 0; s < n; ++s) sweeps.emplace_back(wm.values, s, depth);
  const detail::TailBound tail(wm.values, depth);

  VerifyReport report;
  report.n = n;
  report.tol = tol;
  report.depth = depth;
  for (const PathSweep& sweep : sweeps) report.arrivals += sweep.arrivals();
  detail::CheckCollector collect(report);

  const auto allowance_for = [&](int s, int degree) { return tol + tail.start_bound(s, degree); };
  const unsigned all_masks = 0;

  // Pointwise path-weight tables, regular then hitting.
  {
    const std::size_t total = collect.open("total-weight");
    const std::size_t hit = collect.open("hitting-weight");
    for (int s = 0; s < n; ++s)
      for (int t = 0; t < n; ++t) {
        const std::string at = detail::index_label({s, t});
        collect.record(total, tables.z(s, t),
                       sweeps[s].masked_weight(t, all_masks, all_masks, false),
                       allowance_for(s, 0), at);
        collect.record(hit, tables.zh(s, t),
                       sweeps[s].masked_weight(t, all_masks, all_masks, true),
                       allowance_for(s, 0), at);
      }
  }

  // Single-node presence and avoidance, both families.
  {
    const std::size_t c1 = collect.open("containing-node");
    const std::size_t c2 = collect.open("avoiding-node");
    const std::size_t c3 = collect.open("hitting-containing-node");
    const std::size_t c4 = collect.open("hitting-avoiding-node");
    for (int i = 0; i < n; ++i) {
      const Eigen::MatrixXd contain = weight_containing_node(tables, i);
      const Eigen::MatrixXd avoid = weight_avoiding_node(tables, i).values;
      const Eigen::MatrixXd hcontain = hitting_weight_containing_node(tables, i);
      const Eigen::MatrixXd havoid = hitting_weight_avoiding_node(tables, i).values;
      const unsigned bit = 1u << i;
      for (int s = 0; s < n; ++s)
        for (int t = 0; t < n; ++t) {
          const std::string at = detail::index_label({s, t, i});
          collect.record(c1, contain(s, t), sweeps[s].masked_weight(t, bit, 0, false),
                         allowance_for(s, 0), at);
          collect.record(c2, avoid(s, t), sweeps[s].masked_weight(t, 0, bit, false),
                         allowance_for(s, 0), at);
          collect.record(c3, hcontain(s, t), sweeps[s].masked_weight(t, bit, 0, true),
                         allowance_for(s, 0), at);
          collect.record(c4, havoid(s, t), sweeps[s].masked_weight(t, 0, bit, true),
                         allowance_for(s, 0), at);
        }
    }
  }

  // Pair presence/avoidance in every algebraic form.
  if (n >= 2) {
    const std::size_t cpair = collect.open("containing-pair");
    const std::size_t hpair = collect.open("hitting-containing-pair");
    std::vector<std::size_t> avoid_forms, havoid_forms;
    for (int form = 1; form <= 3; ++form)
      avoid_forms.push_back(collect.open("avoiding-pair-form" + std::to_string(form)));
    for (int form = 1; form <= 3; ++form)
      havoid_forms.push_back(collect.open("hitting-avoiding-pair-form" + std::to_string(form)));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (i == j) continue;
        const unsigned both = (1u << i) | (1u << j);
        const Eigen::MatrixXd contain = weight_containing_pair(tables, i, j);
        const Eigen::MatrixXd hcontain = hitting_weight_containing_pair(tables, i, j);
        std::vector<Eigen::MatrixXd> avoid, havoid;
        for (int form = 1; form <= 3; ++form) {
          avoid.push_back(weight_avoiding_pair(tables, i, j, form));
          havoid.push_back(hitting_weight_avoiding_pair(tables, i, j, form));
        }
        for (int s = 0; s < n; ++s)
          for (int t = 0; t < n; ++t) {
            const std::string at = detail::index_label({s, t, i, j});
            collect.record(cpair, contain(s, t), sweeps[s].masked_weight(t, both, 0, false),
                           allowance_for(s, 0), at);
            collect.record(hpair, hcontain(s, t), sweeps[s].masked_weight(t, both, 0, true),
                           allowance_for(s, 0), at);
            const double avoid_enum = sweeps[s].masked_weight(t, 0, both, false);
            const double havoid_enum = sweeps[s].masked_weight(t, 0, both, true);
            for (int form = 0; form < 3; ++form) {
              collect.record(avoid_forms[form], avoid[form](s, t), avoid_enum,
                             allowance_for(s, 0), at);
              collect.record(havoid_forms[form], havoid[form](s, t), havoid_enum,
                             allowance_for(s, 0), at);
            }
          }
      }
  }

  // Node sets of size three, and inclusion-exclusion for sizes two and three.
  if (n >= 3) {
    const std::size_t aset = collect.open("avoiding-set3");
    const std::size_t haset = collect.open("hitting-avoiding-set3");
    const std::size_t cset = collect.open("containing-set3");
    const std::size_t hcset = collect.open("hitting-containing-set3");
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        for (int k = j + 1; k < n; ++k) {
          const std::vector<int> set{i, j, k};
          const unsigned bits = detail::bits_of(set);
          const Eigen::MatrixXd avoid = weight_avoiding_set(tables, set);
          const Eigen::MatrixXd havoid = hitting_weight_avoiding_set(tables, set);
          const Eigen::MatrixXd contain = weight_containing_set(tables, set, false);
          const Eigen::MatrixXd hcontain = weight_containing_set(tables, set, true);
          for (int s = 0; s < n; ++s)
            for (int t = 0; t < n; ++t) {
              const std::string at = detail::index_label({s, t, i, j, k});
              collect.record(aset, avoid(s, t), sweeps[s].masked_weight(t, 0, bits, false),
                             allowance_for(s, 0), at);
              collect.record(haset, havoid(s, t), sweeps[s].masked_weight(t, 0, bits, true),
                             allowance_for(s, 0), at);
              collect.record(cset, contain(s, t), sweeps[s].masked_weight(t, bits, 0, false),
                             allowance_for(s, 0), at);
              collect.record(hcset, hcontain(s, t), sweeps[s].masked_weight(t, bits, 0, true),
                             allowance_for(s, 0), at);
            }
        }
  }

  // Occurrence-weighted sums, single and pair (pair includes i = j).
  {
    const std::size_t onode = collect.open("occurrence-node");
    const std::size_t honode = collect.open("hitting-occurrence-node");
    for (int i = 0; i < n; ++i) {
      const Eigen::MatrixXd occ = occurrence_weight_node(tables, i);
      const Eigen::MatrixXd hocc = hitting_occurrence_weight_node(tables, i);
      for (int s = 0; s < n; ++s)
        for (int t = 0; t < n; ++t) {
          const std::string at = detail::index_label({s, t, i});
          collect.record(onode, occ(s, t), sweeps[s].occurrence_weight(t, i, false),
                         allowance_for(s, 1), at);
          collect.record(honode, hocc(s, t), sweeps[s].occurrence_weight(t, i, true),
                         allowance_for(s, 1), at);
        }
    }
    const std::size_t opair = collect.open("occurrence-pair");
    const std::size_t hopair = collect.open("hitting-occurrence-pair");
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const Eigen::MatrixXd occ = occurrence_weight_pair(tables, i, j);
        const Eigen::MatrixXd hocc = hitting_occurrence_weight_pair(tables, i, j);
        for (int s = 0; s < n; ++s)
          for (int t = 0; t < n; ++t) {
            const std::string at = detail::index_label({s, t, i, j});
            collect.record(opair, occ(s, t), sweeps[s].occurrence_weight(t, i, j, false),
                           allowance_for(s, 2), at);
            collect.record(hopair, hocc(s, t), sweeps[s].occurrence_weight(t, i, j, true),
                           allowance_for(s, 2), at);
          }
      }
  }

  // Normalizers and the four moment families (ratio tolerances propagate the
  // numerator and denominator remainders).
  {
    const auto enum_total = [&](bool hitting) {
      double sum = 0.0;
      for (int s = 0; s < n; ++s)
        for (int t = 0; t < n; ++t) sum += sweeps[s].masked_weight(t, 0, 0, hitting);
      return sum;
    };
    const double reg_norm = enum_total(false);
    const double hit_norm = enum_total(true);
    const double reg_norm_rem = tail.total_bound(0);
    collect.record(collect.open("normalizer"), tables.z_total(), reg_norm, tol + reg_norm_rem,
                   "(*)");
    collect.record(collect.open("normalizer-hitting"), tables.zh_total(), hit_norm,
                   tol + reg_norm_rem, "(*)");

    const auto moment_allowance = [&](double closed, int degree, bool hitting) {
      const double num_rem = tail.total_bound(degree);
      const double den = hitting ? hit_norm : reg_norm;
      return tol + (num_rem + std::abs(closed) * reg_norm_rem) / den;
    };
    const auto enum_presence = [&](int i, int j, bool hitting) {
      unsigned req = (1u << i) | (1u << j);
      double sum = 0.0;
      for (int s = 0; s < n; ++s)
        for (int t = 0; t < n; ++t) sum += sweeps[s].masked_weight(t, req, 0, hitting);
      return sum / (hitting ? hit_norm : reg_norm);
    };
    const auto enum_occurrence = [&](int i, int j, bool hitting) {
      double sum = 0.0;
      for (int s = 0; s < n; ++s)
        for (int t = 0; t < n; ++t) {
          if (j < 0)
            sum += sweeps[s].occurrence_weight(t, i, hitting);
          else
            sum += sweeps[s].occurrence_weight(t, i, j, hitting);
        }
      return sum / (hitting ? hit_norm : reg_norm);
    };

    for (const bool hitting : {false, true}) {
      const PathFamily family = hitting ? PathFamily::hitting : PathFamily::regular;
      const std::string suffix = hitting ? "-hitting" : "";
      const MomentSet presence = copresence_moments(tables, family);
      const MomentSet occurrence = cooccurrence_moments(tables, family);

      const std::size_t pm = collect.open("presence-mean" + suffix);
      const std::size_t om = collect.open("occurrence-mean" + suffix);
      for (int i = 0; i < n; ++i) {
        collect.record(pm, presence.first(i), enum_presence(i, i, hitting),
                       moment_allowance(presence.first(i), 0, hitting),
                       detail::index_label({i}));
        collect.record(om, occurrence.first(i), enum_occurrence(i, -1, hitting),
                       moment_allowance(occurrence.first(i), 1, hitting),
                       detail::index_label({i}));
      }
      const std::size_t ps = collect.open("presence-second" + suffix);
      const std::size_t os = collect.open("occurrence-second" + suffix);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          collect.record(ps, presence.second(i, j), enum_presence(i, j, hitting),
                         moment_allowance(presence.second(i, j), 0, hitting),
                         detail::index_label({i, j}));
          collect.record(os, occurrence.second(i, j), enum_occurrence(i, j, hitting),
                         moment_allowance(occurrence.second(i, j), 2, hitting),
                         detail::index_label({i, j}));
        }
    }
  }

  return report;
}

// Central-difference verification of the closed-form derivative identities of
// the fundamental matrix. The first derivative differences z_st directly;
// the second differences the closed-form gradient entry under the second
// edge, which is exactly how the identity composes.
struct DerivativeCheckReport {
  int samples = 0;
  double step = 0.0;
  double max_first_error = 0.0;
  double max_second_error = 0.0;

  bool pass(double tol = 1e-4) const {
    return max_first_error < tol && max_second_error < tol;
  }
  std::string render() const {
    std::ostringstream out;
    out << "derivative check: " << samples << " samples at step " << step
        << ", max relative error first " << std::scientific << std::setprecision(3)
        << max_first_error << ", second " << max_second_error << "\n";
    return out.str();
  }
};

inline DerivativeCheckReport finite_difference_check(const WeightMatrix& wm, int samples,
                                                     double h, std::uint64_t seed = 1234567) {
  const int n = wm.size();
  const PathWeightTables tables = fundamental_matrix(wm);
  Rng rng(seed);
  DerivativeCheckReport report;
  report.samples = samples;
  report.step = h;

  const auto solve_at = [&](int i, int j, double delta) {
    Eigen::MatrixXd w = wm.values;
    w(i, j) += delta;
    const int size = static_cast<int>(w.rows());
    return Eigen::MatrixXd((Eigen::MatrixXd::Identity(size, size) - w)
                               .partialPivLu()
                               .solve(Eigen::MatrixXd::Identity(size, size)));
  };
  const auto step_for = [&](int i, int j) {
    double step = h;
    Eigen::MatrixXd w = wm.values;
    w(i, j) += step;
    if (spectral_radius(w) < 1.0 - kSpectralRadiusMargin) return step;
    step /= 2.0;  // one automatic reduction
    w = wm.values;
    w(i, j) += step;
    if (spectral_radius(w) < 1.0 - kSpectralRadiusMargin) return step;
    throw ValidationError("finite difference step pushes the spectral radius past 1");
  };
  const auto relative_error = [](double got, double want) {
    return std::abs(got - want) / std::max(1.0, std::abs(want));
  };

  for (int sample = 0; sample < samples; ++sample) {
    const int s = rng.uniform_int(0, n - 1);
    const int t = rng.uniform_int(0, n - 1);
    const int i = rng.uniform_int(0, n - 1);
    const int j = rng.uniform_int(0, n - 1);
    const int k = rng.uniform_int(0, n - 1);
    const int l = rng.uniform_int(0, n - 1);

    const double step1 = step_for(i, j);
    const Eigen::MatrixXd z_plus = solve_at(i, j, step1);
    const Eigen::MatrixXd z_minus = solve_at(i, j, -step1);
    const double fd1 = (z_plus(s, t) - z_minus(s, t)) / (2.0 * step1);
    const double cf1 = weight_gradient(tables, i, j)(s, t);
    report.max_first_error = std::max(report.max_first_error, relative_error(fd1, cf1));

    const double step2 = step_for(k, l);
    const Eigen::MatrixXd g_plus = solve_at(k, l, step2);
    const Eigen::MatrixXd g_minus = solve_at(k, l, -step2);
    const double fd2 =
        (g_plus(s, i) * g_plus(j, t) - g_minus(s, i) * g_minus(j, t)) / (2.0 * step2);
    const double cf2 = weight_second_derivative(tables, s, t, i, j, k, l);
    report.max_second_error = std::max(report.max_second_error, relative_error(fd2, cf2));
  }
  return report;
}

}  // namespace bopkit
