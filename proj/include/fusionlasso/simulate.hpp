#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "fusionlasso/calibrate.hpp"
#include "fusionlasso/em.hpp"
#include "fusionlasso/family.hpp"
#include "fusionlasso/parallel.hpp"
#include "fusionlasso/rng.hpp"
#include "fusionlasso/structure.hpp"

// Grouped-heterogeneity benchmark: G units with effects (-1, 0, +1), r
// observations each, a standard-normal covariate, and Monte-Carlo extraction
// of per-unit treatment effects for each fitted method.

namespace fusionlasso {

struct SimulationSpec {
  int G = 25;
  int r = 20;
  int S = 12;  // units at -1 and at +1 each
  Family family = Family::linear;
  std::uint64_t seed = 1;
  int replicates = 100;

  void validate() const {
    if (G < 1 || r < 2 || S < 0) throw std::invalid_argument("simulate: need G >= 1, r >= 2, S >= 0");
    if (2 * S > G) throw std::invalid_argument("simulate: need 2*S <= G");
    if (replicates < 1) throw std::invalid_argument("simulate: need replicates >= 1");
    if (family != Family::linear && family != Family::logistic) {
      throw std::invalid_argument("simulate: family must be linear or binomial");
    }
  }

  int n() const { return G * r; }
};

struct SimData {
  Eigen::VectorXd x;     // N
  Eigen::VectorXd y;     // N
  Eigen::VectorXi unit;  // N, unit index in 0..G-1
  Eigen::VectorXi treat; // N, 0/1
  Eigen::VectorXd tau;   // G, true effects
};

// tau = [-1 x S, 0 x (G-2S), +1 x S]; exactly floor(r/2) observations per unit
// are treated, positions shuffled.  Bit-identical for a given (seed,
// replicate).
inline SimData generate(const SimulationSpec& spec, int replicate = 0) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(replicate)));
  const int n = spec.n();
  SimData d;
  d.x.resize(n);
  d.y.resize(n);
  d.unit.resize(n);
  d.treat.resize(n);
  d.tau.resize(spec.G);
  for (int g = 0; g < spec.G; ++g) {
    d.tau[g] = g < spec.S ? -1.0 : (g >= spec.G - spec.S ? 1.0 : 0.0);
  }
  std::vector<int> pattern(static_cast<std::size_t>(spec.r), 0);
  for (int i = 0; i < spec.r / 2; ++i) pattern[static_cast<std::size_t>(i)] = 1;
  int row = 0;
  for (int g = 0; g < spec.G; ++g) {
    rng.shuffle(pattern.begin(), pattern.end());
    for (int k = 0; k < spec.r; ++k, ++row) {
      d.unit[row] = g;
      d.treat[row] = pattern[static_cast<std::size_t>(k)];
      d.x[row] = rng.normal();
      const double eta = d.x[row] + d.tau[g] * d.treat[row];
      if (spec.family == Family::linear) {
        d.y[row] = eta + rng.normal();
      } else {
        d.y[row] = rng.uniform() < expit(eta) ? 1.0 : 0.0;
      }
    }
  }
  return d;
}

// Monte-Carlo integration of the per-unit treatment effect over 1,000 common
// standard-normal covariate draws: mean over x of E[y|d=1,g,x] - E[y|d=0,g,x].
inline Eigen::VectorXd mc_treatment_effects(
    const std::function<double(int g, int d, double x)>& predict, int G, Rng& rng,
    int n_draws = 1000) {
  Eigen::VectorXd draws(n_draws);
  for (int j = 0; j < n_draws; ++j) draws[j] = rng.normal();
  Eigen::VectorXd effects(G);
  for (int g = 0; g < G; ++g) {
    double acc = 0.0;
    for (int j = 0; j < n_draws; ++j) {
      acc += predict(g, 1, draws[j]) - predict(g, 0, draws[j]);
    }
    effects[g] = acc / n_draws;
  }
  return effects;
}

namespace detail {

// Design for the structured-sparse methods: G unit indicators (absorbing the
// intercept), the covariate, and G treatment-by-unit columns.  The fusion
// structure lives on the treatment block.
struct SspDesign {
  Eigen::MatrixXd X;
  int unit_offset = 0;
  int x_col = 0;
  int treat_offset = 0;
  Cells treat_cells;
  Eigen::VectorXd col_counts;
};

inline SspDesign build_ssp_design(const SimData& d, int G) {
  const Eigen::Index n = d.x.size();
  SspDesign out;
  const int p = 2 * G + 1;
  out.X = Eigen::MatrixXd::Zero(n, p);
  out.unit_offset = 0;
  out.x_col = G;
  out.treat_offset = G + 1;
  for (Eigen::Index i = 0; i < n; ++i) {
    out.X(i, d.unit[i]) = 1.0;
    out.X(i, out.x_col) = d.x[i];
    if (d.treat[i] == 1) out.X(i, out.treat_offset + d.unit[i]) = 1.0;
  }
  out.treat_cells.p = p;
  for (int g = 0; g < G; ++g) {
    out.treat_cells.index.push_back(out.treat_offset + g);
    out.treat_cells.labels.push_back("tau[" + std::to_string(g) + "]");
    out.treat_cells.attrs.push_back({{"unit", std::to_string(g)}});
  }
  out.col_counts = Eigen::VectorXd::Zero(p);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.col_counts[d.unit[i]] += 1.0;
    if (d.treat[i] == 1) out.col_counts[out.treat_offset + d.unit[i]] += 1.0;
  }
  out.col_counts[out.x_col] = static_cast<double>(n);
  return out;
}

// Fusion ridge over the unit-indicator block, the stand-in for a unit-level
// nuisance control: scale * (I - J/G) penalizes unit intercepts toward their
// common mean.  At the default strength this pools them almost completely,
// matching a random-effect control whose estimated variance is near zero.
inline Eigen::MatrixXd unit_ridge(int p, int unit_offset, int G, double scale) {
  Eigen::MatrixXd R = Eigen::MatrixXd::Zero(p, p);
  for (int a = 0; a < G; ++a) {
    for (int b = 0; b < G; ++b) {
      R(unit_offset + a, unit_offset + b) = scale * ((a == b ? 1.0 : 0.0) - 1.0 / G);
    }
  }
  return R;
}

}  // namespace detail

struct BenchmarkOptions {
  GridSpec grid;
  double unit_ridge_scale = 1e4;  // near-complete pooling of unit intercepts
  double adaptive_gamma = 1.0;
  double pilot_ridge_per_n = 1e-4;
  int mc_draws = 1000;
  int threads = 1;
  std::vector<std::string> methods = {"SSp", "A-SSp", "FE", "pooled"};
};

struct SimResult {
  std::vector<std::string> methods;
  Eigen::MatrixXd rmse;  // replicates x methods; NaN marks a failed fit
  Eigen::VectorXd mean_rmse;
  Eigen::VectorXd se_rmse;
  std::vector<int> failures;
  std::vector<std::vector<Eigen::VectorXd>> effects;  // [method][replicate]
};

namespace detail {

inline Eigen::VectorXd ols(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  return solve_spd(X.transpose() * X, X.transpose() * y);
}

// Fixed effects: intercept, covariate, G-1 unit dummies and all G
// treatment-by-unit columns; tau_g is the coefficient on the g-th interaction.
struct FeFit {
  Eigen::VectorXd coef;
  int G = 0;

  double predict_eta(int g, int d, double x) const {
    double eta = coef[0] + coef[1] * x;
    if (g > 0) eta += coef[1 + g];
    if (d == 1) eta += coef[1 + G + g];
    return eta;
  }
};

inline FeFit fit_fe(const SimData& d, int G, Family family) {
  const Eigen::Index n = d.x.size();
  const int p = 1 + 1 + (G - 1) + G;
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = d.x[i];
    if (d.unit[i] > 0) X(i, 1 + d.unit[i]) = 1.0;
    if (d.treat[i] == 1) X(i, 1 + G + d.unit[i]) = 1.0;
  }
  FeFit fit;
  fit.G = G;
  if (family == Family::linear) {
    fit.coef = ols(X, d.y);
  } else {
    const NewtonResult res = logistic_mle(X, d.y, 500, 1e6);
    if (res.diverged || !res.theta.allFinite()) {
      throw std::runtime_error("fixed-effects logistic fit diverged (separation)");
    }
    fit.coef = res.theta;
  }
  return fit;
}

struct PooledFit {
  Eigen::VectorXd coef;  // intercept, x, d

  double predict_eta(int, int d, double x) const {
    return coef[0] + coef[1] * x + coef[2] * d;
  }
};

inline PooledFit fit_pooled(const SimData& d, Family family) {
  const Eigen::Index n = d.x.size();
  Eigen::MatrixXd X(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = d.x[i];
    X(i, 2) = d.treat[i];
  }
  PooledFit fit;
  if (family == Family::linear) {
    fit.coef = ols(X, d.y);
  } else {
    const NewtonResult res = logistic_mle(X, d.y, 500, 1e6);
    if (res.diverged || !res.theta.allFinite()) {
      throw std::runtime_error("pooled logistic fit diverged (separation)");
    }
    fit.coef = res.theta;
  }
  return fit;
}

struct SspFit {
  Eigen::VectorXd beta;
  const SspDesign* design = nullptr;

  double predict_eta(int g, int d, double x) const {
    double eta = beta[design->unit_offset + g] + beta[design->x_col] * x;
    if (d == 1) eta += beta[design->treat_offset + g];
    return eta;
  }
};

inline EmSolution fit_ssp(const SspDesign& design, const SimData& d, const SimulationSpec& spec,
                          const BenchmarkOptions& opts, bool adaptive) {
  StructureGraph graph = build_agnostic(design.treat_cells);
  ConstraintSet cs = compile_constraints(graph);
  const double n = static_cast<double>(d.x.size());
  const Eigen::MatrixXd pool_ridge =
      unit_ridge(design.treat_cells.p, design.unit_offset, spec.G, opts.unit_ridge_scale);
  // Gertheiss-Tutz size normalization over the treated-cell counts; the plain
  // method uses the bases as weights, the adaptive one folds them into the
  // pilot-gap rescaling.
  set_gertheiss_tutz_bases(cs, design.col_counts, n, /*apply_to_weights=*/!adaptive);
  if (adaptive) {
    // ridge-stabilized pilot of the consistent model, under the same unit
    // pooling as the main fit
    Eigen::VectorXd pilot;
    const double ridge = opts.pilot_ridge_per_n * n;
    if (spec.family == Family::linear) {
      Eigen::MatrixXd A = design.X.transpose() * design.X + pool_ridge;
      A.diagonal().array() += ridge;
      pilot = A.ldlt().solve(design.X.transpose() * d.y);
    } else {
      const NewtonResult res = logistic_mle(design.X, d.y, 500, 1e6, ridge);
      pilot = res.theta;
    }
    cs = adaptive_weights(cs, pilot, opts.adaptive_gamma);
  }

  EmOptions em_opts;
  em_opts.fixed_ridge = pool_ridge;
  // a lambda-coupled nuisance ridge would distort the AIC grid search, so the
  // unit control stays fixed across the grid
  em_opts.ridge_scales_with_lambda = false;

  OutcomeView y;
  y.values = d.y;
  y.n_classes = 2;
  const Family fam = spec.family == Family::linear ? Family::linear : Family::logistic;
  const CalibrationResult cal =
      aic_grid(design.X, y, cs, fam, opts.grid, em_opts, /*check_propriety=*/false);
  return cal.best;
}

}  // namespace detail

// Per-replicate closed loop: generate, fit each method, extract effects by
// Monte-Carlo integration, score RMSE against the true effects.  Replicates
// run in parallel with per-replicate derived seeds; failed fits are excluded
// from that method's mean with a count.
inline SimResult run_benchmark(const SimulationSpec& spec, const BenchmarkOptions& opts) {
  spec.validate();
  const auto& methods = opts.methods;
  const int n_methods = static_cast<int>(methods.size());
  SimResult res;
  res.methods = methods;
  res.rmse = Eigen::MatrixXd::Constant(spec.replicates, n_methods,
                                       std::numeric_limits<double>::quiet_NaN());
  res.effects.assign(static_cast<std::size_t>(n_methods),
                     std::vector<Eigen::VectorXd>(static_cast<std::size_t>(spec.replicates)));
  res.failures.assign(static_cast<std::size_t>(n_methods), 0);

  const Family fam = spec.family == Family::linear ? Family::linear : Family::logistic;
  const bool linear = fam == Family::linear;

  parallel_for(static_cast<std::size_t>(spec.replicates), opts.threads, [&](std::size_t rep) {
    const SimData data = generate(spec, static_cast<int>(rep));
    const detail::SspDesign design = detail::build_ssp_design(data, spec.G);
    // common covariate draws for every method in this replicate
    const std::uint64_t mc_seed =
        derive_seed(derive_seed(spec.seed, static_cast<std::uint64_t>(rep)), 0xefec);

    auto score = [&](int mi, const std::function<double(int, int, double)>& eta_fn) {
      auto predict = [&](int g, int d, double x) {
        const double eta = eta_fn(g, d, x);
        return linear ? eta : expit(eta);
      };
      Rng mc_rng(mc_seed);
      const Eigen::VectorXd eff = mc_treatment_effects(predict, spec.G, mc_rng, opts.mc_draws);
      res.effects[static_cast<std::size_t>(mi)][rep] = eff;
      res.rmse(static_cast<Eigen::Index>(rep), mi) =
          std::sqrt((eff - data.tau).squaredNorm() / spec.G);
    };

    for (int mi = 0; mi < n_methods; ++mi) {
      const std::string& method = methods[static_cast<std::size_t>(mi)];
      try {
        if (method == "SSp" || method == "A-SSp") {
          const EmSolution sol = detail::fit_ssp(design, data, spec, opts, method == "A-SSp");
          detail::SspFit fit{sol.beta, &design};
          score(mi, [&fit](int g, int d, double x) { return fit.predict_eta(g, d, x); });
        } else if (method == "FE") {
          const detail::FeFit fit = detail::fit_fe(data, spec.G, fam);
          score(mi, [&fit](int g, int d, double x) { return fit.predict_eta(g, d, x); });
        } else if (method == "pooled") {
          const detail::PooledFit fit = detail::fit_pooled(data, fam);
          score(mi, [&fit](int g, int d, double x) { return fit.predict_eta(g, d, x); });
        } else {
          throw std::invalid_argument("unknown benchmark method: " + method);
        }
      } catch (const std::exception&) {
        // recorded as a failure; rmse stays NaN
      }
    }
  });

  res.mean_rmse.resize(n_methods);
  res.se_rmse.resize(n_methods);
  for (int mi = 0; mi < n_methods; ++mi) {
    double sum = 0.0, sum2 = 0.0;
    int count = 0;
    for (int rep = 0; rep < spec.replicates; ++rep) {
      const double v = res.rmse(rep, mi);
      if (std::isfinite(v)) {
        sum += v;
        sum2 += v * v;
        ++count;
      }
    }
    res.failures[static_cast<std::size_t>(mi)] = spec.replicates - count;
    if (count > 0) {
      const double mean = sum / count;
      res.mean_rmse[mi] = mean;
      const double var = count > 1 ? (sum2 - count * mean * mean) / (count - 1) : 0.0;
      res.se_rmse[mi] = std::sqrt(std::max(var, 0.0) / count);
    } else {
      res.mean_rmse[mi] = std::numeric_limits<double>::quiet_NaN();
      res.se_rmse[mi] = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return res;
}

}  // namespace fusionlasso
