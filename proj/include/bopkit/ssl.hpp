#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "bopkit/common.hpp"
#include "bopkit/graph.hpp"
#include "bopkit/measures.hpp"
#include "bopkit/path_tables.hpp"

namespace bopkit {

enum class FeatureOption { sqrt_eigenvalue, unit_norm };

inline std::string feature_option_name(FeatureOption option) {
  return option == FeatureOption::sqrt_eigenvalue ? "sqrt-eigenvalue" : "unit-norm";
}

struct FeatureMatrix {
  Eigen::MatrixXd x;  // one row of features per node
  FeatureOption option;
  int retained = 0;  // positive-eigenvalue eigenvectors available
};

// Classical multidimensional scaling: turn a symmetric zero-diagonal distance
// matrix into an inner-product matrix by double centering the squared
// distances. Output rows and columns sum to zero.
inline Eigen::MatrixXd center_distance_matrix(const Eigen::MatrixXd& d) {
  const int n = static_cast<int>(d.rows());
  if (d.rows() != d.cols()) throw ValidationError("distance matrix must be square");
  const double scale = std::max(1.0, d.cwiseAbs().maxCoeff());
  if ((d - d.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale)
    throw ValidationError("distance matrix is asymmetric");
  const Eigen::MatrixXd squared = d.cwiseProduct(d);
  const Eigen::VectorXd row_mean = squared.rowwise().mean();
  const double grand_mean = row_mean.mean();
  Eigen::MatrixXd k(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      k(i, j) = -0.5 * (squared(i, j) - row_mean(i) - row_mean(j) + grand_mean);
  return k;
}

namespace detail {

// Largest-magnitude component positive; first among equal magnitudes.
inline void fix_eigenvector_sign(Eigen::VectorXd& u) {
  int anchor = 0;
  for (int i = 1; i < u.size(); ++i)
    if (std::abs(u(i)) > std::abs(u(anchor))) anchor = i;
  if (u(anchor) < 0.0) u = -u;
}

inline bool lexicographic_less(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return std::lexicographical_compare(a.data(), a.data() + a.size(), b.data(),
                                      b.data() + b.size());
}

}  // namespace detail

// Spectral node features: eigenpairs sorted by decreasing eigenvalue with
// negative ones dropped, the top p kept, and either square-root-eigenvalue
// scaling or per-row unit normalization applied. Eigenvalue ties (1e-12) are
// ordered lexicographically after sign fixing.
inline FeatureMatrix extract_features(const Eigen::MatrixXd& k, int p, FeatureOption option) {
  const int n = static_cast<int>(k.rows());
  if (p < 1) throw ValidationError("feature dimension must be positive");
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(0.5 * (k + k.transpose()));
  if (solver.info() != Eigen::Success) throw ValidationError("eigendecomposition failed");

  std::vector<std::pair<double, Eigen::VectorXd>> pairs;
  pairs.reserve(static_cast<std::size_t>(n));
  for (int idx = n - 1; idx >= 0; --idx) {
    Eigen::VectorXd u = solver.eigenvectors().col(idx);
    detail::fix_eigenvector_sign(u);
    pairs.emplace_back(solver.eigenvalues()(idx), std::move(u));
  }
  std::stable_sort(pairs.begin(), pairs.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t lo = 0; lo < pairs.size();) {
    std::size_t hi = lo + 1;
    while (hi < pairs.size() && pairs[hi - 1].first - pairs[hi].first <= 1e-12) ++hi;
    std::sort(pairs.begin() + static_cast<std::ptrdiff_t>(lo),
              pairs.begin() + static_cast<std::ptrdiff_t>(hi), [](const auto& a, const auto& b) {
                return detail::lexicographic_less(a.second, b.second);
              });
    lo = hi;
  }

  const double floor = std::max(pairs.front().first, 0.0) * 1e-12;
  int retained = 0;
  for (const auto& [value, u] : pairs)
    if (value > floor) ++retained;
  if (retained < 1) throw ValidationError("kernel has no positive eigenvalue");

  const int keep = std::min(p, retained);
  FeatureMatrix features{Eigen::MatrixXd(n, keep), option, retained};
  int col = 0;
  for (const auto& [value, u] : pairs) {
    if (col == keep) break;
    if (value <= floor) continue;
    features.x.col(col) =
        option == FeatureOption::sqrt_eigenvalue ? (std::sqrt(value) * u).eval() : u;
    ++col;
  }
  if (option == FeatureOption::unit_norm) {
    for (int i = 0; i < n; ++i) {
      const double norm = features.x.row(i).norm();
      if (norm == 0.0)
        throw ValidationError("node " + std::to_string(i) +
                              " has an all-zero feature row; cannot normalize");
      features.x.row(i) /= norm;
    }
  }
  return features;
}

namespace detail {

inline double sigmoid(double m) {
  if (m >= 0.0) return 1.0 / (1.0 + std::exp(-m));
  const double e = std::exp(m);
  return e / (1.0 + e);
}

// L2-regularized binary logistic regression by full-batch Newton iteration.
// Deterministic: fixed start, fixed iteration cap, fixed tolerance.
inline Eigen::VectorXd fit_logistic(const Eigen::MatrixXd& xa, const Eigen::VectorXd& y,
                                    double reg) {
  const int dims = static_cast<int>(xa.cols());
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(dims);
  for (int iter = 0; iter < 200; ++iter) {
    const Eigen::VectorXd margins = xa * theta;
    Eigen::VectorXd prob(margins.size());
    for (int i = 0; i < margins.size(); ++i) prob(i) = sigmoid(margins(i));
    const Eigen::VectorXd grad = xa.transpose() * (prob - y) + reg * theta;
    if (grad.norm() <= 1e-8) break;
    const Eigen::VectorXd weights = prob.array() * (1.0 - prob.array());
    const Eigen::MatrixXd hessian = xa.transpose() * weights.asDiagonal() * xa +
                                    reg * Eigen::MatrixXd::Identity(dims, dims);
    theta -= hessian.ldlt().solve(grad);
  }
  return theta;
}

}  // namespace detail

// One-vs-rest regularized linear classifier over node features. `partial`
// holds a class id per row, or -1 for unlabeled rows. Returns a predicted
// class per row (argmax of the per-class scores; ties go to the lowest class
// id). `expected_classes`, when supplied, must each have a labeled example.
inline std::vector<int> train_and_predict(const Eigen::MatrixXd& x,
                                          const std::vector<int>& partial, double reg,
                                          const std::vector<int>& expected_classes = {}) {
  const int n = static_cast<int>(x.rows());
  if (static_cast<int>(partial.size()) != n)
    throw ValidationError("label vector does not match the feature row count");
  std::vector<int> train_rows;
  std::map<int, int> class_counts;
  for (int i = 0; i < n; ++i)
    if (partial[static_cast<std::size_t>(i)] >= 0) {
      train_rows.push_back(i);
      ++class_counts[partial[static_cast<std::size_t>(i)]];
    }
  if (train_rows.empty()) throw ValidationError("no labeled rows to train on");
  for (int c : expected_classes)
    if (class_counts.find(c) == class_counts.end())
      throw ValidationError("class " + std::to_string(c) + " has zero labeled examples");

  Eigen::MatrixXd xa(static_cast<int>(train_rows.size()), x.cols() + 1);
  for (std::size_t r = 0; r < train_rows.size(); ++r) {
    xa.row(static_cast<int>(r)).head(x.cols()) = x.row(train_rows[r]);
    xa(static_cast<int>(r), static_cast<int>(x.cols())) = 1.0;
  }
  Eigen::MatrixXd xa_all(n, x.cols() + 1);
  xa_all.leftCols(x.cols()) = x;
  xa_all.col(x.cols()).setOnes();

  std::vector<int> classes;
  for (const auto& [c, count] : class_counts) classes.push_back(c);

  Eigen::MatrixXd scores(n, static_cast<int>(classes.size()));
  for (std::size_t ci = 0; ci < classes.size(); ++ci) {
    Eigen::VectorXd y(static_cast<int>(train_rows.size()));
    for (std::size_t r = 0; r < train_rows.size(); ++r)
      y(static_cast<int>(r)) = partial[static_cast<std::size_t>(train_rows[r])] == classes[ci];
    const Eigen::VectorXd theta = detail::fit_logistic(xa, y, reg);
    scores.col(static_cast<int>(ci)) = xa_all * theta;
  }

  std::vector<int> predicted(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    int best = 0;
    for (int ci = 1; ci < scores.cols(); ++ci)
      if (scores(i, ci) > scores(i, best)) best = ci;
    predicted[static_cast<std::size_t>(i)] = classes[static_cast<std::size_t>(best)];
  }
  return predicted;
}

// Stratified fold structure shared by every method for a fixed seed: nodes of
// each class are shuffled and dealt round-robin, the fold cursor continuing
// across classes so fold sizes differ by at most one.
struct FoldPlan {
  // outer[rep][fold] -> node indices; inner[rep][fold][sub] -> node indices.
  std::vector<std::vector<std::vector<int>>> outer;
  std::vector<std::vector<std::vector<std::vector<int>>>> inner;
};

namespace detail {

inline std::vector<std::vector<int>> stratified_deal(const std::vector<int>& nodes,
                                                     const std::vector<int>& labels, int folds,
                                                     Rng& rng) {
  std::map<int, std::vector<int>> by_class;
  for (int node : nodes) by_class[labels[static_cast<std::size_t>(node)]].push_back(node);
  std::vector<std::vector<int>> out(static_cast<std::size_t>(folds));
  int cursor = 0;
  for (auto& [c, members] : by_class) {
    rng.shuffle(members);
    for (int node : members) out[static_cast<std::size_t>(cursor++ % folds)].push_back(node);
  }
  return out;
}

}  // namespace detail

inline FoldPlan make_folds(const std::vector<int>& labels, int folds, int repetitions,
                           std::uint64_t seed) {
  const int n = static_cast<int>(labels.size());
  std::vector<int> all(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  FoldPlan plan;
  for (int rep = 0; rep < repetitions; ++rep) {
    plan.outer.push_back(detail::stratified_deal(all, labels, folds, rng));
    plan.inner.emplace_back();
    for (const std::vector<int>& fold : plan.outer.back())
      plan.inner.back().push_back(detail::stratified_deal(fold, labels, folds, rng));
  }
  return plan;
}

struct CvConfig {
  double labeling_rate = 0.2;
  int folds = 5;
  int repetitions = 5;
  int feature_dims = 5;
  std::vector<double> beta_grid = {1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0};
  std::vector<double> reg_grid = {1e-2, 1e-1, 1.0, 10.0, 100.0};
  int threads = 1;
};

struct CvSelection {
  double beta = 0.0;
  double reg = 0.0;
};

struct CvReport {
  KernelMethod method;
  FeatureOption option;
  std::uint64_t seed = 0;
  Eigen::MatrixXd accuracy;  // repetitions x folds
  std::vector<std::vector<CvSelection>> selected;
  double mean_accuracy = 0.0;
};

// Nested cross-validation at a labeling rate of 1/folds: each outer fold takes
// a turn as the labeled set, an inner k-fold on the labeled set selects
// (beta, regularization), and accuracy is measured on the hidden nodes.
// Fold structure depends only on (labels, folds, repetitions, seed), so it is
// identical across methods and feature options.
inline CvReport nested_cv(const WeightedGraph& g, const std::vector<int>& labels,
                          KernelMethod method, FeatureOption option, std::uint64_t seed,
                          const CvConfig& cfg = {}) {
  const int n = g.n;
  if (static_cast<int>(labels.size()) != n)
    throw ValidationError("labels must cover every node");
  if (cfg.folds < 2) throw ValidationError("need at least two folds");
  if (std::abs(cfg.labeling_rate * cfg.folds - 1.0) > 1e-9)
    throw ValidationError("labeling rate must equal 1/folds (each fold is labeled once)");
  std::map<int, int> class_counts;
  for (int label : labels) ++class_counts[label];
  std::vector<int> classes;
  for (const auto& [c, count] : class_counts) {
    if (count < cfg.folds)
      throw ValidationError("class " + std::to_string(c) + " has only " +
                            std::to_string(count) + " nodes; needs at least " +
                            std::to_string(cfg.folds));
    classes.push_back(c);
  }

  // Features per grid beta, shared by every fold and repetition. Grid points
  // whose weight matrix is rejected are recorded and never selected.
  std::vector<std::optional<Eigen::MatrixXd>> features(cfg.beta_grid.size());
  std::optional<std::string> last_error;
  for (std::size_t b = 0; b < cfg.beta_grid.size(); ++b) {
    try {
      const WeightMatrix wm = build_weight_matrix(g, cfg.beta_grid[b]);
      const PathWeightTables tables(wm);
      const KernelMatrix k = compute_similarity(tables, method, cfg.threads);
      const Eigen::MatrixXd gram = method == KernelMethod::bop_distance
                                       ? center_distance_matrix(k.values)
                                       : k.values;
      features[b] = extract_features(gram, cfg.feature_dims, option).x;
    } catch (const std::exception& error) {
      features[b] = std::nullopt;
      last_error = error.what();
    }
  }
  if (std::none_of(features.begin(), features.end(), [](const auto& f) { return f.has_value(); }))
    throw ValidationError("every beta grid point failed: " + last_error.value_or("unknown"));

  const FoldPlan plan = make_folds(labels, cfg.folds, cfg.repetitions, seed);

  const auto accuracy_of = [&](const Eigen::MatrixXd& x, const std::vector<int>& train_nodes,
                               const std::vector<int>& eval_nodes, double reg) {
    std::vector<int> partial(static_cast<std::size_t>(n), -1);
    for (int node : train_nodes)
      partial[static_cast<std::size_t>(node)] = labels[static_cast<std::size_t>(node)];
    const std::vector<int> predicted = train_and_predict(x, partial, reg, classes);
    int correct = 0;
    for (int node : eval_nodes)
      if (predicted[static_cast<std::size_t>(node)] == labels[static_cast<std::size_t>(node)])
        ++correct;
    return static_cast<double>(correct) / static_cast<double>(eval_nodes.size());
  };

  CvReport report;
  report.method = method;
  report.option = option;
  report.seed = seed;
  report.accuracy = Eigen::MatrixXd::Zero(cfg.repetitions, cfg.folds);
  report.selected.assign(static_cast<std::size_t>(cfg.repetitions),
                         std::vector<CvSelection>(static_cast<std::size_t>(cfg.folds)));

  for (int rep = 0; rep < cfg.repetitions; ++rep) {
    for (int fold = 0; fold < cfg.folds; ++fold) {
      const std::vector<int>& labeled = plan.outer[rep][fold];
      std::vector<int> hidden;
      for (int node = 0; node < n; ++node)
        if (std::find(labeled.begin(), labeled.end(), node) == labeled.end())
          hidden.push_back(node);

      double best_score = -1.0;
      std::size_t best_beta = 0;
      double best_reg = cfg.reg_grid.front();
      for (std::size_t b = 0; b < cfg.beta_grid.size(); ++b) {
        if (!features[b]) continue;
        for (double reg : cfg.reg_grid) {
          double total = 0.0;
          for (int sub = 0; sub < cfg.folds; ++sub) {
            const std::vector<int>& validation = plan.inner[rep][fold][sub];
            std::vector<int> train_nodes;
            for (int other = 0; other < cfg.folds; ++other)
              if (other != sub)
                train_nodes.insert(train_nodes.end(), plan.inner[rep][fold][other].begin(),
                                   plan.inner[rep][fold][other].end());
            total += validation.empty() ? 0.0
                                        : accuracy_of(*features[b], train_nodes, validation, reg);
          }
          const double score = total / cfg.folds;
          if (score > best_score) {
            best_score = score;
            best_beta = b;
            best_reg = reg;
          }
        }
      }
      if (best_score < 0.0) throw ValidationError("no usable hyperparameter combination");
      report.accuracy(rep, fold) = accuracy_of(*features[best_beta], labeled, hidden, best_reg);
      report.selected[static_cast<std::size_t>(rep)][static_cast<std::size_t>(fold)] =
          CvSelection{cfg.beta_grid[best_beta], best_reg};
    }
  }
  report.mean_accuracy = report.accuracy.mean();
  return report;
}

// Synthetic benchmark graphs: a stochastic block model with near-equal blocks,
// unit affinities, and symmetric directed edge pairs. Redrawn until strongly
// connected, up to 100 attempts.
struct SbmResult {
  WeightedGraph graph;
  std::vector<int> labels;  // block id per node, 1-based
};

inline SbmResult sbm_generate(int n, int blocks, double p_in, double p_out, std::uint64_t seed) {
  if (n < 1 || blocks < 1 || blocks > n)
    throw ValidationError("need 1 <= blocks <= n");
  if (p_in < 0.0 || p_in > 1.0 || p_out < 0.0 || p_out > 1.0)
    throw ValidationError("edge probabilities must lie in [0, 1]");

  std::vector<int> block_of(static_cast<std::size_t>(n));
  {
    int node = 0;
    for (int b = 0; b < blocks; ++b) {
      const int size = n / blocks + (b < n % blocks ? 1 : 0);
      for (int k = 0; k < size; ++k) block_of[static_cast<std::size_t>(node++)] = b;
    }
  }

  Rng rng(seed);
  for (int attempt = 0; attempt < 100; ++attempt) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
    for (int u = 0; u < n; ++u)
      for (int v = u + 1; v < n; ++v) {
        const double p = block_of[static_cast<std::size_t>(u)] ==
                                 block_of[static_cast<std::size_t>(v)]
                             ? p_in
                             : p_out;
        if (rng.bernoulli(p)) {
          a(u, v) = 1.0;
          a(v, u) = 1.0;
        }
      }
    if (!detail::strongly_connected(a)) continue;
    SbmResult result;
    result.graph.n = n;
    for (int i = 0; i < n; ++i) result.graph.node_ids.push_back(i + 1);
    result.graph.affinity = std::move(a);
    result.graph.cost = Eigen::MatrixXd::Constant(n, n, std::numeric_limits<double>::infinity());
    for (int u = 0; u < n; ++u)
      for (int v = 0; v < n; ++v)
        if (result.graph.affinity(u, v) > 0.0) result.graph.cost(u, v) = 1.0;
    for (int i = 0; i < n; ++i) result.labels.push_back(block_of[static_cast<std::size_t>(i)] + 1);
    return result;
  }
  throw ValidationError("no strongly connected draw in 100 attempts; are the blocks connectable?");
}

}  // namespace bopkit
