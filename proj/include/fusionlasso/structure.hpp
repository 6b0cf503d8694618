#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "fusionlasso/design.hpp"
#include "fusionlasso/linalg.hpp"

namespace fusionlasso {

// The coefficients a fusion structure is built over: a subset of design
// columns with their factor-level attributes.
struct Cells {
  int p = 0;                       // ambient coefficient count
  std::vector<int> index;          // ambient index per cell
  std::vector<std::string> labels;
  std::vector<std::map<std::string, std::string>> attrs;

  int size() const { return static_cast<int>(index.size()); }
};

// By default every column carrying at least one factor-level attribute is a
// fusible cell; the intercept and pure-numeric columns are left unstructured.
inline Cells cells_from_design(const DesignMatrix& dm) {
  Cells cells;
  cells.p = dm.p();
  for (int j = 0; j < dm.p(); ++j) {
    if (!dm.cell_attrs[static_cast<std::size_t>(j)].empty()) {
      cells.index.push_back(j);
      cells.labels.push_back(dm.labels[static_cast<std::size_t>(j)]);
      cells.attrs.push_back(dm.cell_attrs[static_cast<std::size_t>(j)]);
    }
  }
  return cells;
}

struct Edge {
  int i = 0, j = 0;     // ambient coefficient indices, i < j
  double weight = 1.0;
  double base = 1.0;    // size normalization used by adaptive reweighting
};

// Fusion graph over coefficients: edges mark pairs that may be fused exactly,
// quad_groups mark sets fused jointly through a quadratic penalty.
struct StructureGraph {
  int p = 0;
  std::vector<int> nodes;  // ambient indices of structured coefficients
  std::vector<std::string> labels;
  std::vector<Edge> edges;
  std::vector<std::vector<int>> quad_groups;

  void validate() const {
    std::set<std::pair<int, int>> seen;
    for (const Edge& e : edges) {
      if (e.i == e.j) throw std::invalid_argument("structure: self-loop edge");
      if (e.i < 0 || e.j < 0 || e.i >= p || e.j >= p) {
        throw std::invalid_argument("structure: edge index out of range");
      }
      if (!(e.weight > 0.0)) throw std::invalid_argument("structure: edge weight must be > 0");
      auto key = std::minmax(e.i, e.j);
      if (!seen.insert(key).second) throw std::invalid_argument("structure: duplicate edge");
    }
    for (const auto& g : quad_groups) {
      for (int idx : g) {
        if (idx < 0 || idx >= p) throw std::invalid_argument("structure: quad index out of range");
      }
    }
  }
};

inline StructureGraph build_agnostic(const Cells& cells) {
  if (cells.size() < 2) throw std::invalid_argument("agnostic structure needs at least 2 cells");
  StructureGraph g;
  g.p = cells.p;
  g.nodes = cells.index;
  g.labels = cells.labels;
  for (int a = 0; a < cells.size(); ++a) {
    for (int b = a + 1; b < cells.size(); ++b) {
      g.edges.push_back({cells.index[static_cast<std::size_t>(a)],
                         cells.index[static_cast<std::size_t>(b)], 1.0, 1.0});
    }
  }
  return g;
}

namespace detail {

inline bool share_level(const std::map<std::string, std::string>& a,
                        const std::map<std::string, std::string>& b) {
  for (const auto& [k, v] : a) {
    auto it = b.find(k);
    if (it != b.end() && it->second == v) return true;
  }
  return false;
}

}  // namespace detail

// Edge iff the two cells agree on at least one factor level.
inline StructureGraph build_lattice(const Cells& cells) {
  if (cells.size() < 2) throw std::invalid_argument("lattice structure needs at least 2 cells");
  std::set<std::string> keys;
  for (const auto& [k, v] : cells.attrs.front()) keys.insert(k);
  for (const auto& attrs : cells.attrs) {
    std::set<std::string> these;
    for (const auto& [k, v] : attrs) these.insert(k);
    if (these != keys) throw std::invalid_argument("lattice structure: cells carry mismatched factor keys");
  }
  StructureGraph g;
  g.p = cells.p;
  g.nodes = cells.index;
  g.labels = cells.labels;
  for (int a = 0; a < cells.size(); ++a) {
    for (int b = a + 1; b < cells.size(); ++b) {
      if (detail::share_level(cells.attrs[static_cast<std::size_t>(a)],
                              cells.attrs[static_cast<std::size_t>(b)])) {
        g.edges.push_back({cells.index[static_cast<std::size_t>(a)],
                           cells.index[static_cast<std::size_t>(b)], 1.0, 1.0});
      }
    }
  }
  return g;
}

// Edge iff the two cells agree on the named factor.
inline StructureGraph build_priority(const Cells& cells, const std::string& factor) {
  bool known = false;
  for (const auto& attrs : cells.attrs) {
    if (attrs.count(factor)) {
      known = true;
      break;
    }
  }
  if (!known) throw std::invalid_argument("priority structure: unknown factor '" + factor + "'");
  StructureGraph g;
  g.p = cells.p;
  g.nodes = cells.index;
  g.labels = cells.labels;
  for (int a = 0; a < cells.size(); ++a) {
    for (int b = a + 1; b < cells.size(); ++b) {
      const auto& aa = cells.attrs[static_cast<std::size_t>(a)];
      const auto& ab = cells.attrs[static_cast<std::size_t>(b)];
      auto ia = aa.find(factor);
      auto ib = ab.find(factor);
      if (ia != aa.end() && ib != ab.end() && ia->second == ib->second) {
        g.edges.push_back({cells.index[static_cast<std::size_t>(a)],
                           cells.index[static_cast<std::size_t>(b)], 1.0, 1.0});
      }
    }
  }
  return g;
}

// One linear penalty row d_k: weight * (sparse unit pattern).  Difference rows
// have pattern {(i,+1),(j,-1)}; custom user rows may be denser.
struct LinearRow {
  std::vector<std::pair<int, double>> pattern;
  double weight = 1.0;
  double base = 1.0;

  double pattern_dot(const Eigen::VectorXd& beta) const {
    double s = 0.0;
    for (const auto& [idx, v] : pattern) s += v * beta[idx];
    return s;
  }

  double dot(const Eigen::VectorXd& beta) const { return weight * pattern_dot(beta); }

  // M += scale * d d^T
  void add_outer(Eigen::MatrixXd& M, double scale) const {
    const double s = scale * weight * weight;
    for (const auto& [a, va] : pattern) {
      for (const auto& [b, vb] : pattern) M(a, b) += s * va * vb;
    }
  }

  Eigen::VectorXd dense(int p) const {
    Eigen::VectorXd d = Eigen::VectorXd::Zero(p);
    for (const auto& [idx, v] : pattern) d[idx] = weight * v;
    return d;
  }
};

struct QuadPenalty {
  Eigen::MatrixXd F;       // p x p symmetric PSD
  std::vector<int> group;  // members, when the penalty came from a fusion group
};

// Compiled penalty: K weighted linear rows plus L quadratic matrices.  The
// stacked matrix Dbar = [weighted rows; F_1; ...; F_L] governs propriety.
struct ConstraintSet {
  int p = 0;
  std::vector<LinearRow> rows;
  std::vector<QuadPenalty> quads;

  int k_linear() const { return static_cast<int>(rows.size()); }
  int l_quad() const { return static_cast<int>(quads.size()); }
  bool empty() const { return rows.empty() && quads.empty(); }

  Eigen::Index stack_rows() const {
    return static_cast<Eigen::Index>(rows.size()) +
           static_cast<Eigen::Index>(quads.size()) * p;
  }

  // Dbar^T Dbar; shares rank and nullspace with the stack itself.
  Eigen::MatrixXd dbar_gram() const {
    Eigen::MatrixXd g = Eigen::MatrixXd::Zero(p, p);
    for (const auto& r : rows) r.add_outer(g, 1.0);
    for (const auto& q : quads) g.noalias() += q.F * q.F;
    return g;
  }

  Eigen::MatrixXd dense_dbar() const {
    Eigen::MatrixXd d(stack_rows(), p);
    Eigen::Index r = 0;
    for (const auto& row : rows) d.row(r++) = row.dense(p).transpose();
    for (const auto& q : quads) {
      d.middleRows(r, p) = q.F;
      r += p;
    }
    return d;
  }
};

// Rank/nullspace of the stacked Dbar: exact SVD whenever the stack is small
// enough to materialize, Gram eigendecomposition otherwise.
inline RankInfo constraint_rank(const ConstraintSet& cs) {
  RankInfo info;
  if (cs.empty()) {
    info.nullspace = Eigen::MatrixXd::Identity(cs.p, cs.p);
    return info;
  }
  if (cs.stack_rows() * cs.p <= 1'000'000) return rank_and_nullspace(cs.dense_dbar());
  return gram_rank(cs.dbar_gram(), cs.stack_rows());
}

// Complete-graph Laplacian over the group: the Gram matrix of all pairwise
// difference rows, zero iff all members are equal.
inline Eigen::MatrixXd group_fusion_matrix(int p, const std::vector<int>& group) {
  Eigen::MatrixXd F = Eigen::MatrixXd::Zero(p, p);
  const auto g = static_cast<double>(group.size());
  for (int a : group) {
    for (int b : group) F(a, b) = a == b ? g - 1.0 : -1.0;
  }
  return F;
}

inline void validate_psd(const Eigen::MatrixXd& F) {
  if (F.rows() != F.cols() || !F.isApprox(F.transpose(), 1e-10)) {
    throw std::invalid_argument("quadratic penalty must be symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(F, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (lo < -1e-10 * std::max(hi, 1.0)) {
    throw std::invalid_argument("quadratic penalty must be positive semi-definite");
  }
}

inline ConstraintSet compile_constraints(const StructureGraph& graph) {
  graph.validate();
  ConstraintSet cs;
  cs.p = graph.p;
  for (const Edge& e : graph.edges) {
    LinearRow row;
    row.pattern = {{e.i, 1.0}, {e.j, -1.0}};
    row.weight = e.weight;
    row.base = e.base;
    cs.rows.push_back(std::move(row));
  }
  for (const auto& g : graph.quad_groups) {
    QuadPenalty q;
    q.group = g;
    q.F = group_fusion_matrix(graph.p, g);
    cs.quads.push_back(std::move(q));
  }
  return cs;
}

// Gertheiss-Tutz size normalization for one-hot levels: base = sqrt((n_i+n_j)/N)
// from the occupancy counts of the two columns a difference row touches.
inline void set_gertheiss_tutz_bases(ConstraintSet& cs, const Eigen::VectorXd& column_counts,
                                     double n_total, bool apply_to_weights) {
  for (auto& row : cs.rows) {
    if (row.pattern.size() != 2) continue;
    const double ni = column_counts[row.pattern[0].first];
    const double nj = column_counts[row.pattern[1].first];
    row.base = std::sqrt((ni + nj) / n_total);
    if (apply_to_weights) row.weight = row.base;
  }
}

// Rescales each linear weight by (base_k / |d_k^T pilot|)^gamma.  Gaps are
// floored at 1e-8 and the resulting weight capped at 1e8 so the reweighting
// stays an invertible diagonal scaling and rank(Dbar) is unchanged.
inline ConstraintSet adaptive_weights(const ConstraintSet& cs, const Eigen::VectorXd& beta_pilot,
                                      double gamma) {
  if (!beta_pilot.allFinite()) throw std::invalid_argument("adaptive_weights: non-finite pilot");
  if (gamma < 0.0) throw std::invalid_argument("adaptive_weights: gamma must be >= 0");
  ConstraintSet out = cs;
  for (auto& row : out.rows) {
    const double gap = std::max(std::abs(row.dot(beta_pilot)), 1e-8);
    const double factor = std::pow(row.base / gap, gamma);
    row.weight = std::min(row.weight * factor, 1e8);
  }
  return out;
}

// ---- JSON structure files -------------------------------------------------

inline nlohmann::json structure_to_json(const StructureGraph& g) {
  nlohmann::json j;
  j["p"] = g.p;
  j["nodes"] = g.nodes;
  j["labels"] = g.labels;
  auto edges = nlohmann::json::array();
  for (const Edge& e : g.edges) {
    edges.push_back({{"i", e.i}, {"j", e.j}, {"w", e.weight}, {"base", e.base}});
  }
  j["edges"] = edges;
  j["quad_groups"] = g.quad_groups;
  return j;
}

inline StructureGraph structure_from_json(const nlohmann::json& j) {
  StructureGraph g;
  g.p = j.at("p").get<int>();
  if (j.contains("nodes")) g.nodes = j.at("nodes").get<std::vector<int>>();
  if (j.contains("labels")) g.labels = j.at("labels").get<std::vector<std::string>>();
  for (const auto& e : j.at("edges")) {
    Edge edge;
    edge.i = e.at("i").get<int>();
    edge.j = e.at("j").get<int>();
    edge.weight = e.value("w", 1.0);
    edge.base = e.value("base", 1.0);
    g.edges.push_back(edge);
  }
  if (j.contains("quad_groups")) {
    g.quad_groups = j.at("quad_groups").get<std::vector<std::vector<int>>>();
  }
  g.validate();
  return g;
}

// CLI structure spec: agnostic | lattice | priority:<factor> | file:<path>
inline StructureGraph structure_from_spec(const std::string& spec, const Cells& cells) {
  if (spec == "agnostic") return build_agnostic(cells);
  if (spec == "lattice") return build_lattice(cells);
  if (spec.rfind("priority:", 0) == 0) return build_priority(cells, spec.substr(9));
  if (spec.rfind("file:", 0) == 0) {
    std::ifstream in(spec.substr(5));
    if (!in) throw std::invalid_argument("cannot open structure file: " + spec.substr(5));
    nlohmann::json j;
    in >> j;
    return structure_from_json(j);
  }
  throw std::invalid_argument("unknown structure spec: " + spec);
}

}  // namespace fusionlasso
