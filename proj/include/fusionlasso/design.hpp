#pragma once

#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fusionlasso/data.hpp"
#include "fusionlasso/formula.hpp"

namespace fusionlasso {

// Labeled design matrix.  Categorical factors expand to one column per level
// (no dropped baseline); interaction terms contribute products of indicator
// columns.  cell_attrs records the factor->level tuple behind each column so
// fusion structures can be built over the coefficients.
struct DesignMatrix {
  Eigen::MatrixXd values;  // N x p
  std::vector<std::string> labels;
  std::vector<std::map<std::string, std::string>> cell_attrs;

  int n() const { return static_cast<int>(values.rows()); }
  int p() const { return static_cast<int>(values.cols()); }
};

// Column order is deterministic: intercept first, then terms by arity and
// factor name, then level combinations lexicographically (first factor
// slowest).  Only the labels carry meaning; the order is a fixed convention.
inline DesignMatrix expand_design(const Dataset& data, const TermSet& terms,
                                  bool intercept = true) {
  const auto n = static_cast<Eigen::Index>(data.n_rows);

  struct FactorRef {
    const Column* col;
    int n_levels;  // 1 for numeric
  };

  std::vector<Eigen::VectorXd> cols;
  DesignMatrix out;

  if (intercept) {
    cols.push_back(Eigen::VectorXd::Ones(n));
    out.labels.emplace_back("(Intercept)");
    out.cell_attrs.emplace_back();
  }

  for (const Term& term : terms) {
    std::vector<FactorRef> factors;
    for (const std::string& name : term) {
      const Column* col = data.find(name);
      if (!col) throw std::invalid_argument("formula references unknown factor: " + name);
      if (col->kind == ColumnKind::categorical && col->levels.empty()) {
        throw std::invalid_argument("factor '" + name + "' has an empty level set");
      }
      factors.push_back({col, col->kind == ColumnKind::categorical
                                  ? static_cast<int>(col->levels.size())
                                  : 1});
    }

    // odometer over level combinations, rightmost factor fastest
    std::vector<int> level(factors.size(), 0);
    while (true) {
      Eigen::VectorXd v = Eigen::VectorXd::Ones(n);
      std::string label;
      std::map<std::string, std::string> attrs;
      for (std::size_t f = 0; f < factors.size(); ++f) {
        const Column& c = *factors[f].col;
        if (!label.empty()) label += "*";
        if (c.kind == ColumnKind::categorical) {
          const int lv = level[f];
          for (Eigen::Index i = 0; i < n; ++i) {
            if (c.codes[static_cast<std::size_t>(i)] != lv) v[i] = 0.0;
          }
          label += c.name + "(" + c.levels[static_cast<std::size_t>(lv)] + ")";
          attrs[c.name] = c.levels[static_cast<std::size_t>(lv)];
        } else {
          for (Eigen::Index i = 0; i < n; ++i) v[i] *= c.numeric[static_cast<std::size_t>(i)];
          label += c.name;
        }
      }
      cols.push_back(std::move(v));
      out.labels.push_back(std::move(label));
      out.cell_attrs.push_back(std::move(attrs));

      std::size_t f = factors.size();
      while (f > 0) {
        --f;
        if (++level[f] < factors[f].n_levels) break;
        level[f] = 0;
        if (f == 0) goto term_done;
      }
      if (factors.empty()) break;
    }
  term_done:;
  }

  out.values.resize(n, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) {
    out.values.col(static_cast<Eigen::Index>(j)) = cols[j];
  }
  return out;
}

inline DesignMatrix expand_design(const Dataset& data, const std::string& formula,
                                  bool intercept = true) {
  return expand_design(data, parse_formula(formula), intercept);
}

// Outcome as used by the likelihood code: numeric vector for linear/logistic,
// class codes for multinomial.
struct OutcomeView {
  Eigen::VectorXd values;   // linear / logistic (0-1)
  Eigen::VectorXi classes;  // multinomial codes, baseline = n_classes - 1
  int n_classes = 0;
};

inline OutcomeView outcome_view(const Dataset& data) {
  const Column& y = data.outcome();
  OutcomeView out;
  if (data.family == Family::multinomial) {
    if (y.kind != ColumnKind::categorical) {
      throw std::invalid_argument("multinomial outcome must be categorical");
    }
    out.n_classes = static_cast<int>(y.levels.size());
    if (out.n_classes < 2) throw std::invalid_argument("multinomial outcome needs >= 2 classes");
    out.classes.resize(static_cast<Eigen::Index>(y.codes.size()));
    for (std::size_t i = 0; i < y.codes.size(); ++i) {
      out.classes[static_cast<Eigen::Index>(i)] = y.codes[i];
    }
  } else {
    if (y.kind == ColumnKind::categorical) {
      throw std::invalid_argument("outcome '" + y.name + "' must be numeric for this family");
    }
    out.values = Eigen::Map<const Eigen::VectorXd>(y.numeric.data(),
                                                   static_cast<Eigen::Index>(y.numeric.size()));
    out.n_classes = 2;
  }
  return out;
}

}  // namespace fusionlasso
