#pragma once

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "bopkit/common.hpp"
#include "bopkit/graph.hpp"
#include "bopkit/io.hpp"
#include "bopkit/measures.hpp"
#include "bopkit/oracle.hpp"
#include "bopkit/path_tables.hpp"
#include "bopkit/ssl.hpp"

namespace bopkit {

// Exit codes: 0 success, 1 domain/validation failure, 2 I/O failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitDomain = 1;
inline constexpr int kExitIo = 2;

namespace cli_detail {

struct TablesWithIds {
  PathWeightTables tables;
  std::vector<long long> node_ids;
};

inline int resolve_threads(int threads) {
  if (threads > 0) return threads;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Kernel and betweenness commands accept either a graph plus beta or a raw
// weight-matrix file (killed/absorbing chains included).
inline TablesWithIds make_tables(const std::string& graph_path, std::optional<double> beta,
                                 bool weights_direct, std::ostream& out) {
  if (weights_direct) {
    DirectWeightMatrix direct = load_weight_matrix(graph_path);
    return {PathWeightTables(direct.matrix), std::move(direct.node_ids)};
  }
  if (!beta) throw ValidationError("--beta is required unless --weights-direct is given");
  const WeightedGraph g = load_graph(graph_path);
  const WeightMatrix wm = build_weight_matrix(g, *beta);
  PathWeightTables tables(wm);
  if (1.0 / (1.0 - wm.rho) > 1e8)
    out << "warning: 1/(1 - rho) = " << format_double(1.0 / (1.0 - wm.rho))
        << "; results may be dominated by rounding error\n";
  return {std::move(tables), g.node_ids};
}

inline Eigen::VectorXd betweenness_by_name(const PathWeightTables& tables,
                                           const std::string& measure, int threads) {
  if (measure == "presence") return presence_betweenness(tables, PathFamily::regular, threads);
  if (measure == "presence-hitting")
    return presence_betweenness(tables, PathFamily::hitting, threads);
  if (measure == "occurrence") return occurrence_betweenness(tables, PathFamily::regular, threads);
  if (measure == "occurrence-hitting")
    return occurrence_betweenness(tables, PathFamily::hitting, threads);
  throw ValidationError("unknown measure '" + measure +
                        "' (expected presence|presence-hitting|occurrence|occurrence-hitting)");
}

}  // namespace cli_detail

inline int cmd_validate(const std::string& graph_path, std::optional<double> beta,
                        bool weights_direct, std::ostream& out) {
  if (weights_direct) {
    const DirectWeightMatrix direct = load_weight_matrix(graph_path);
    out << "nodes: " << direct.matrix.size() << "\n";
    out << "spectral radius: " << format_double(direct.matrix.rho) << "\n";
    out << "ok\n";
    return kExitOk;
  }
  if (!beta) throw ValidationError("--beta is required unless --weights-direct is given");
  const WeightedGraph g = load_graph(graph_path);
  const WeightMatrix wm = build_weight_matrix(g, *beta);
  const PathWeightTables tables(wm);
  out << "nodes: " << g.n << "\n";
  out << "edges: " << g.edge_count() << "\n";
  out << "spectral radius: " << format_double(wm.rho) << "\n";
  out << "reciprocal condition estimate: " << format_double(tables.reciprocal_condition()) << "\n";
  if (1.0 / (1.0 - wm.rho) > 1e8)
    out << "warning: 1/(1 - rho) = " << format_double(1.0 / (1.0 - wm.rho))
        << "; downstream accuracy will suffer\n";
  out << "ok\n";
  return kExitOk;
}

inline int cmd_kernel(const std::string& graph_path, const std::string& method_name,
                      std::optional<double> beta, const std::string& out_path,
                      bool weights_direct, int threads, std::ostream& out) {
  const KernelMethod method = parse_kernel_method(method_name);
  cli_detail::TablesWithIds input = cli_detail::make_tables(graph_path, beta, weights_direct, out);
  const KernelMatrix k =
      compute_similarity(input.tables, method, cli_detail::resolve_threads(threads));
  write_matrix_csv(out_path, k.values, input.node_ids);
  out << kernel_method_label(method) << " matrix (" << input.tables.size() << " nodes) written to "
      << out_path << "\n";
  return kExitOk;
}

inline int cmd_betweenness(const std::string& graph_path, const std::string& measure,
                           std::optional<double> beta, const std::string& out_path,
                           bool weights_direct, int threads, std::ostream& out) {
  cli_detail::TablesWithIds input = cli_detail::make_tables(graph_path, beta, weights_direct, out);
  const Eigen::VectorXd values = cli_detail::betweenness_by_name(
      input.tables, measure, cli_detail::resolve_threads(threads));
  write_vector_tsv(out_path, values, input.node_ids);
  out << measure << " betweenness written to " << out_path << "\n";
  return kExitOk;
}

inline int cmd_verify(int max_n, int trials, std::uint64_t seed, double tol, bool inject_fault,
                      std::ostream& out, bool verbose = false) {
  if (max_n < 3 || max_n > kEnumerationMaxNodes)
    throw ValidationError("--max-n must lie in [3, " + std::to_string(kEnumerationMaxNodes) + "]");
  if (trials < 0) throw ValidationError("--trials must be non-negative");
  if (trials == 0) {
    out << "warning: no trials requested; nothing was verified\n";
    return kExitOk;
  }
  Rng rng(seed);
  bool all_pass = true;
  const std::optional<InjectedFault> fault =
      inject_fault ? std::optional<InjectedFault>(InjectedFault{0, 0, 1e-3}) : std::nullopt;
  for (int trial = 0; trial < trials; ++trial) {
    const int n = rng.uniform_int(3, max_n);
    const std::uint64_t graph_seed = rng.next_u64();
    const WeightMatrix wm = random_verification_weight_matrix(n, graph_seed);
    const VerifyReport report = verify_all(wm, tol, fault);
    const DerivativeCheckReport derivatives =
        finite_difference_check(wm, 20, 1e-6, rng.next_u64());
    const bool trial_pass = report.pass && derivatives.pass();
    out << "trial " << trial + 1 << ": n=" << n << " depth=" << report.depth
        << " arrivals=" << report.arrivals << " " << (trial_pass ? "pass" : "FAIL") << "\n";
    if (verbose || !report.pass) {
      out << report.render();
      if (const QuantityCheck* failure = report.first_failure())
        out << "first failing quantity: " << failure->kind << " at " << failure->worst_indices
            << "\n";
    }
    if (verbose || !derivatives.pass()) out << derivatives.render();
    all_pass = all_pass && trial_pass;
  }
  out << (all_pass ? "verification passed" : "verification FAILED") << " (" << trials
      << " trials, tol " << format_double(tol) << ")\n";
  return all_pass ? kExitOk : kExitDomain;
}

inline int cmd_classify(const std::string& graph_path, const std::string& labels_path,
                        std::vector<std::string> method_names, double rate, int folds, int reps,
                        std::uint64_t seed, const std::string& out_dir, int threads,
                        std::ostream& out) {
  const WeightedGraph g = load_graph(graph_path);
  const std::vector<int> labels = load_labels(labels_path, g);
  if (method_names.empty())
    for (const auto& [method, name] : kernel_method_names()) method_names.push_back(name);

  CvConfig cfg;
  cfg.labeling_rate = rate;
  cfg.folds = folds;
  cfg.repetitions = reps;
  cfg.threads = cli_detail::resolve_threads(threads);

  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir);

  std::ostringstream summary_csv, summary_text;
  summary_csv << "method,option,mean_accuracy\n";
  summary_text << "method    option            mean accuracy\n";
  for (const std::string& name : method_names) {
    const KernelMethod method = parse_kernel_method(name);
    for (const FeatureOption option : {FeatureOption::sqrt_eigenvalue, FeatureOption::unit_norm}) {
      const CvReport report = nested_cv(g, labels, method, option, seed, cfg);
      const std::string grid_path =
          out_dir + "/cv_" + name + "_" + feature_option_name(option) + ".csv";
      std::ofstream grid(grid_path);
      if (!grid) throw IoError("cannot write " + grid_path);
      grid << "rep,fold,accuracy,beta,reg\n";
      for (int rep = 0; rep < report.accuracy.rows(); ++rep)
        for (int fold = 0; fold < report.accuracy.cols(); ++fold) {
          const CvSelection& sel =
              report.selected[static_cast<std::size_t>(rep)][static_cast<std::size_t>(fold)];
          grid << rep + 1 << "," << fold + 1 << "," << format_double(report.accuracy(rep, fold))
               << "," << format_double(sel.beta) << "," << format_double(sel.reg) << "\n";
        }
      if (!grid.good()) throw IoError("write failed for " + grid_path);

      summary_csv << kernel_method_label(method) << "," << feature_option_name(option) << ","
                  << format_double(report.mean_accuracy) << "\n";
      std::ostringstream row;
      row.setf(std::ios::left);
      row.width(10);
      row << kernel_method_label(method);
      row.width(18);
      row << feature_option_name(option);
      summary_text << row.str() << format_double(report.mean_accuracy) << "\n";
    }
  }
  {
    std::ofstream summary(out_dir + "/summary.csv");
    if (!summary) throw IoError("cannot write " + out_dir + "/summary.csv");
    summary << summary_csv.str();
  }
  {
    std::ofstream summary(out_dir + "/summary.txt");
    if (!summary) throw IoError("cannot write " + out_dir + "/summary.txt");
    summary << summary_text.str();
  }
  out << summary_text.str();
  return kExitOk;
}

inline int cmd_sbm(int n, int blocks, double p_in, double p_out, std::uint64_t seed,
                   const std::string& out_graph, const std::string& out_labels,
                   std::ostream& out) {
  if (blocks == 1) out << "warning: blocks=1 produces a single-class graph\n";
  if (p_in < p_out) out << "warning: inverted community structure (p_in < p_out)\n";
  const SbmResult result = sbm_generate(n, blocks, p_in, p_out, seed);
  write_graph_edges(out_graph, result.graph);
  write_labels(out_labels, result.graph, result.labels);
  out << "graph with " << result.graph.n << " nodes and " << result.graph.edge_count()
      << " directed edges written to " << out_graph << ", labels to " << out_labels << "\n";
  return kExitOk;
}

// Argv-style entry point shared by the binary and the tests.
inline int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"bag-of-paths node similarity toolkit"};
  app.require_subcommand(1);

  std::string graph_path, labels_path, out_path, out_graph, out_labels, method, measure;
  std::vector<std::string> methods;
  std::optional<double> beta;
  bool weights_direct = false;
  bool inject_fault = false;
  bool verbose = false;
  int threads = 0;
  std::uint64_t seed = 42;
  double tol = 1e-8;
  int max_n = 6, trials = 20;
  double rate = 0.2, p_in = 0.1, p_out = 0.01;
  int folds = 5, reps = 5, n = 100, blocks = 2;

  CLI::App* validate = app.add_subcommand("validate", "load a graph and check the weight matrix");
  validate->add_option("--graph", graph_path, "edge-list file")->required();
  validate->add_option("--beta", beta, "inverse temperature");
  validate->add_flag("--weights-direct", weights_direct, "treat the file as raw weights");

  CLI::App* kernel_cmd = app.add_subcommand("kernel", "compute a similarity/distance matrix");
  kernel_cmd->add_option("--graph", graph_path, "edge-list file")->required();
  kernel_cmd->add_option("--method", method,
                         "cov|cor|covh|corh|ncov|ncor|ncovh|ncorh|bopdist")
      ->required();
  kernel_cmd->add_option("--beta", beta, "inverse temperature");
  kernel_cmd->add_option("--out", out_path, "output CSV")->required();
  kernel_cmd->add_flag("--weights-direct", weights_direct, "treat the file as raw weights");
  kernel_cmd->add_option("--threads", threads, "worker count (0 = auto)");

  CLI::App* betweenness_cmd = app.add_subcommand("betweenness", "compute a betweenness vector");
  betweenness_cmd->add_option("--graph", graph_path, "edge-list file")->required();
  betweenness_cmd
      ->add_option("--measure", measure,
                   "presence|presence-hitting|occurrence|occurrence-hitting")
      ->required();
  betweenness_cmd->add_option("--beta", beta, "inverse temperature");
  betweenness_cmd->add_option("--out", out_path, "output TSV")->required();
  betweenness_cmd->add_flag("--weights-direct", weights_direct, "treat the file as raw weights");
  betweenness_cmd->add_option("--threads", threads, "worker count (0 = auto)");

  CLI::App* verify = app.add_subcommand("verify", "check closed forms against path enumeration");
  verify->add_option("--max-n", max_n, "largest graph size (default 6)");
  verify->add_option("--trials", trials, "number of random graphs (default 20)");
  verify->add_option("--seed", seed, "RNG seed (default 42)");
  verify->add_option("--tol", tol, "tolerance (default 1e-8)");
  verify->add_flag("--inject-fault", inject_fault,
                   "corrupt the closed-form tables to exercise the failure path");
  verify->add_flag("--verbose", verbose, "render the per-quantity table for every trial");

  CLI::App* classify = app.add_subcommand("classify", "nested cross-validation benchmark");
  classify->add_option("--graph", graph_path, "edge-list file")->required();
  classify->add_option("--labels", labels_path, "labels TSV")->required();
  classify->add_option("--methods", methods, "subset of methods (default: all)")->delimiter(',');
  classify->add_option("--rate", rate, "labeling rate (default 0.2)");
  classify->add_option("--folds", folds, "outer/inner fold count (default 5)");
  classify->add_option("--reps", reps, "repetitions (default 5)");
  classify->add_option("--seed", seed, "RNG seed (default 42)");
  classify->add_option("--out", out_path, "output directory")->required();
  classify->add_option("--threads", threads, "worker count (0 = auto)");

  CLI::App* sbm = app.add_subcommand("sbm", "generate a stochastic block model benchmark");
  sbm->add_option("--n", n, "node count (default 100)");
  sbm->add_option("--blocks", blocks, "block count (default 2)");
  sbm->add_option("--p-in", p_in, "within-block edge probability (default 0.1)");
  sbm->add_option("--p-out", p_out, "between-block edge probability (default 0.01)");
  sbm->add_option("--seed", seed, "RNG seed (default 42)");
  sbm->add_option("--out-graph", out_graph, "edge-list output")->required();
  sbm->add_option("--out-labels", out_labels, "labels output")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& help) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& error) {
    err << "error: " << error.what() << "\n";
    return kExitDomain;
  }

  try {
    if (validate->parsed()) return cmd_validate(graph_path, beta, weights_direct, out);
    if (kernel_cmd->parsed())
      return cmd_kernel(graph_path, method, beta, out_path, weights_direct, threads, out);
    if (betweenness_cmd->parsed())
      return cmd_betweenness(graph_path, measure, beta, out_path, weights_direct, threads, out);
    if (verify->parsed())
      return cmd_verify(max_n, trials, seed, tol, inject_fault, out, verbose);
    if (classify->parsed())
      return cmd_classify(graph_path, labels_path, methods, rate, folds, reps, seed, out_path,
                          threads, out);
    if (sbm->parsed())
      return cmd_sbm(n, blocks, p_in, p_out, seed, out_graph, out_labels, out);
  } catch (const IoError& error) {
    err << "error: " << error.what() << "\n";
    return kExitIo;
  } catch (const std::exception& error) {
    err << "error: " << error.what() << "\n";
    return kExitDomain;
  }
  err << "error: no command\n";
  return kExitDomain;
}

inline int run_cli(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run_cli(args);
}

}  // namespace bopkit
