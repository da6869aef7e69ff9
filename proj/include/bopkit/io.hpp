#pragma once

#include <Eigen/Dense>

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "bopkit/common.hpp"
#include "bopkit/graph.hpp"

namespace bopkit {

// All numeric output uses 17 significant digits, enough for a lossless
// decimal round trip of 64-bit floats.
inline std::string format_double(double value) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.17g", value);
  return buffer;
}

// Matrix CSV: a `#nodes:` header row with the external ids, then one
// comma-separated row per node.
inline void write_matrix_csv(std::ostream& out, const Eigen::MatrixXd& m,
                             const std::vector<long long>& node_ids) {
  out << "#nodes: ";
  for (std::size_t i = 0; i < node_ids.size(); ++i) out << (i ? "," : "") << node_ids[i];
  out << "\n";
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) out << (j ? "," : "") << format_double(m(i, j));
    out << "\n";
  }
}

inline void write_matrix_csv(const std::string& path, const Eigen::MatrixXd& m,
                             const std::vector<long long>& node_ids) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  write_matrix_csv(out, m, node_ids);
  if (!out.good()) throw IoError("write failed for " + path);
}

struct LabeledMatrix {
  Eigen::MatrixXd values;
  std::vector<long long> node_ids;
};

inline LabeledMatrix read_matrix_csv(std::istream& in, const std::string& source_name) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("#nodes:", 0) != 0)
    throw IoError(source_name + ": expected a `#nodes:` header row");
  LabeledMatrix result;
  {
    std::string ids = line.substr(7);
    for (char& c : ids)
      if (c == ',') c = ' ';
    std::istringstream fields(ids);
    long long id;
    while (fields >> id) result.node_ids.push_back(id);
  }
  const int n = static_cast<int>(result.node_ids.size());
  if (n == 0) throw IoError(source_name + ": empty node id header");
  result.values.resize(n, n);
  for (int i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw IoError(source_name + ": truncated matrix");
    for (char& c : line)
      if (c == ',') c = ' ';
    std::istringstream fields(line);
    for (int j = 0; j < n; ++j)
      if (!(fields >> result.values(i, j)))
        throw IoError(source_name + ": bad value at row " + std::to_string(i + 1));
  }
  return result;
}

inline LabeledMatrix read_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return read_matrix_csv(in, path);
}

// Betweenness vectors: `node_id <tab> value`.
inline void write_vector_tsv(const std::string& path, const Eigen::VectorXd& values,
                             const std::vector<long long>& node_ids) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (int i = 0; i < values.size(); ++i)
    out << node_ids[static_cast<std::size_t>(i)] << "\t" << format_double(values(i)) << "\n";
  if (!out.good()) throw IoError("write failed for " + path);
}

// Labels file: `node_id class_id`, 1-based node ids, `#` comments. Every
// graph node must be labeled exactly once.
inline std::vector<int> read_labels(std::istream& in, const std::string& source_name,
                                    const WeightedGraph& g) {
  std::vector<int> labels(static_cast<std::size_t>(g.n));
  std::vector<char> seen(static_cast<std::size_t>(g.n), 0);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos || line[start] == '#') continue;
    std::istringstream fields(line);
    long long id;
    int class_id;
    if (!(fields >> id >> class_id))
      throw IoError(source_name + ":" + std::to_string(line_no) + ": expected `node_id class_id`");
    int index;
    try {
      index = g.index_of(id);
    } catch (const ValidationError&) {
      throw IoError(source_name + ":" + std::to_string(line_no) + ": node " + std::to_string(id) +
                    " is not in the graph");
    }
    if (seen[static_cast<std::size_t>(index)])
      throw IoError(source_name + ":" + std::to_string(line_no) + ": node " + std::to_string(id) +
                    " labeled twice");
    seen[static_cast<std::size_t>(index)] = 1;
    labels[static_cast<std::size_t>(index)] = class_id;
  }
  for (int i = 0; i < g.n; ++i)
    if (!seen[static_cast<std::size_t>(i)])
      throw IoError(source_name + ": node " +
                    std::to_string(g.node_ids[static_cast<std::size_t>(i)]) + " has no label");
  return labels;
}

inline std::vector<int> load_labels(const std::string& path, const WeightedGraph& g) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  return read_labels(in, path, g);
}

inline void write_labels(const std::string& path, const WeightedGraph& g,
                         const std::vector<int>& labels) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (int i = 0; i < g.n; ++i)
    out << g.node_ids[static_cast<std::size_t>(i)] << "\t" << labels[static_cast<std::size_t>(i)]
        << "\n";
  if (!out.good()) throw IoError("write failed for " + path);
}

// Edge list in the loader's format: `src dst affinity cost`.
inline void write_graph_edges(const std::string& path, const WeightedGraph& g) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (int i = 0; i < g.n; ++i)
    for (int j = 0; j < g.n; ++j)
      if (g.affinity(i, j) > 0.0)
        out << g.node_ids[static_cast<std::size_t>(i)] << "\t"
            << g.node_ids[static_cast<std::size_t>(j)] << "\t" << format_double(g.affinity(i, j))
            << "\t" << format_double(g.cost(i, j)) << "\n";
  if (!out.good()) throw IoError("write failed for " + path);
}

}  // namespace bopkit
