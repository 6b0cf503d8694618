#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "fusionlasso/em.hpp"
#include "fusionlasso/gibbs.hpp"
#include "fusionlasso/parallel.hpp"

// lambda calibration by AIC over an EM grid, hyperprior anchoring, and model
// scoring (WAIC, K-fold cross-validation).

namespace fusionlasso {

struct GridSpec {
  int points = 50;
  double lo_mult = 1e-3;
  double hi_mult = 1e3;
  std::vector<double> explicit_grid;  // used instead when non-empty

  // log-equally-spaced grid around a data-driven scale
  std::vector<double> make(double scale) const {
    if (!explicit_grid.empty()) {
      std::vector<double> g = explicit_grid;
      std::sort(g.begin(), g.end());
      return g;
    }
    if (points < 2) throw std::invalid_argument("grid: need at least 2 points");
    std::vector<double> g(static_cast<std::size_t>(points));
    const double lo = std::log(lo_mult * scale);
    const double hi = std::log(hi_mult * scale);
    for (int i = 0; i < points; ++i) {
      g[static_cast<std::size_t>(i)] = std::exp(lo + (hi - lo) * i / (points - 1));
    }
    return g;
  }
};

// |X^T y|_inf / N; for the multinomial family the outcome enters through the
// most informative class indicator.
inline double grid_scale(const Eigen::MatrixXd& X, const OutcomeView& y, Family family) {
  const double n = static_cast<double>(X.rows());
  if (n == 0.0) return 1.0;
  double scale = 0.0;
  if (family == Family::multinomial) {
    for (int c = 0; c < y.n_classes; ++c) {
      Eigen::VectorXd ind(y.classes.size());
      for (Eigen::Index i = 0; i < y.classes.size(); ++i) ind[i] = y.classes[i] == c ? 1.0 : 0.0;
      scale = std::max(scale, (X.transpose() * ind).lpNorm<Eigen::Infinity>() / n);
    }
  } else {
    scale = (X.transpose() * y.values).lpNorm<Eigen::Infinity>() / n;
  }
  return scale > 0.0 ? scale : 1.0;
}

struct GridPoint {
  double lambda = 0.0;
  double df = 0.0;
  double log_lik = 0.0;
  double aic = 0.0;
  bool converged = false;
};

struct CalibrationResult {
  std::vector<GridPoint> grid;
  double lambda_star = 0.0;
  double anchor_shape = 0.0;
  double anchor_rate = 0.0;
  std::optional<double> waic;
  std::optional<double> cv_rmse;
  EmSolution best;
  bool propriety_warning = false;
};

// Gamma hyperprior on lambda^2 with mean exactly (lambda*)^2 and shape fixed
// at 2; a Gamma law cannot match mean and median simultaneously, so the mean
// anchors and the median lands near 0.84 of it.
inline std::pair<double, double> anchor_prior(double lambda_star) {
  if (!(lambda_star > 0.0)) throw std::invalid_argument("anchor_prior: lambda* must be > 0");
  return {2.0, 2.0 / (lambda_star * lambda_star)};
}

// Degrees of freedom of a fused solution: p minus the rank of the binding
// rows of Dbar (summed over classes for the multinomial family).
inline double df_estimate(const EmSolution& sol, const ConstraintSet& cs) {
  const int per_class = cs.k_linear() + cs.l_quad();
  const int cm1 = sol.n_classes > 2 ? sol.n_classes - 1 : 1;
  double df = 0.0;
  for (int c = 0; c < cm1; ++c) {
    std::vector<int> local_ids;
    Eigen::Index rows = 0;
    for (int id : sol.binding_set) {
      if (id < c * per_class || id >= (c + 1) * per_class) continue;
      const int local = id - c * per_class;
      local_ids.push_back(local);
      rows += local < cs.k_linear() ? 1 : cs.p;
    }
    Eigen::MatrixXd stack = Eigen::MatrixXd::Zero(rows, cs.p);
    Eigen::Index r = 0;
    for (int local : local_ids) {
      if (local < cs.k_linear()) {
        stack.row(r++) = cs.rows[static_cast<std::size_t>(local)].dense(cs.p).transpose();
      } else {
        stack.middleRows(r, cs.p) = cs.quads[static_cast<std::size_t>(local - cs.k_linear())].F;
        r += cs.p;
      }
    }
    df += cs.p - rank_and_nullspace(stack).rank;
  }
  return df;
}

// EM fit per grid point, warm-started from the previous lambda; AIC =
// -2 loglik + 2 df with ties broken toward the larger (more parsimonious)
// lambda.
inline CalibrationResult aic_grid(const Eigen::MatrixXd& X, const OutcomeView& y,
                                  const ConstraintSet& cs, Family family, const GridSpec& grid,
                                  EmOptions opts = {}, bool check_propriety = true) {
  CalibrationResult result;
  if (check_propriety) {
    const ProprietyReport rep = check_posterior(X, y, cs, family);
    result.propriety_warning = rep.posterior == PosteriorStatus::improper;
  }
  opts.check_propriety = false;

  const std::vector<double> lambdas = grid.make(grid_scale(X, y, family));
  if (lambdas.size() < 2) throw std::invalid_argument("aic_grid: need at least 2 grid points");

  LinearGram gram;
  if (family == Family::linear) gram = LinearGram::from(X, y.values);

  bool any_ok = false;
  double best_aic = std::numeric_limits<double>::infinity();
  Eigen::VectorXd warm;
  for (double lambda : lambdas) {
    GridPoint pt;
    pt.lambda = lambda;
    EmOptions fit_opts = opts;
    fit_opts.warm_start = warm;
    try {
      EmSolution sol;
      switch (family) {
        case Family::linear: sol = fit_em_linear(gram, cs, lambda, fit_opts); break;
        case Family::logistic: sol = fit_em_logistic(X, y.values, cs, lambda, fit_opts); break;
        case Family::multinomial:
          sol = fit_em_multinomial(X, y.classes, y.n_classes, cs, lambda, fit_opts);
          break;
      }
      pt.df = sol.df;
      pt.log_lik = sol.log_lik;
      pt.aic = sol.aic;
      pt.converged = sol.converged;
      warm = sol.beta;
      any_ok = true;
      const double tie_tol = 1e-7 * (1.0 + std::abs(best_aic));
      if (sol.aic <= best_aic + tie_tol) {
        best_aic = std::min(best_aic, sol.aic);
        result.lambda_star = lambda;
        result.best = std::move(sol);
      }
    } catch (const std::exception&) {
      pt.aic = std::numeric_limits<double>::quiet_NaN();
      warm.resize(0);
    }
    result.grid.push_back(pt);
  }
  if (!any_ok) throw std::runtime_error("aic_grid: all grid fits failed");
  std::tie(result.anchor_shape, result.anchor_rate) = anchor_prior(result.lambda_star);
  result.best.propriety_warning = result.propriety_warning;
  return result;
}

// ---- WAIC -------------------------------------------------------------------

namespace detail {

inline double log_mean_exp(const std::vector<double>& v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  double acc = 0.0;
  for (double x : v) acc += std::exp(x - mx);
  return mx + std::log(acc / static_cast<double>(v.size()));
}

inline double variance(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  double acc = 0.0;
  for (double x : v) acc += (x - mean) * (x - mean);
  return n > 1.0 ? acc / (n - 1.0) : 0.0;
}

}  // namespace detail

// WAIC = -2 (lppd - p_waic) with the variance form of p_waic; smaller is
// better.
inline double waic(const PosteriorDraws& draws, const Eigen::MatrixXd& X, const OutcomeView& y,
                   Family family) {
  const int total = draws.total_kept();
  if (total < 100) throw std::invalid_argument("waic: need at least 100 kept draws");
  const Eigen::Index n = X.rows();
  const Eigen::MatrixXd beta = draws.stacked_beta();

  Eigen::VectorXd sigma2;
  if (family == Family::linear) {
    sigma2.resize(total);
    Eigen::Index r = 0;
    for (const auto& c : draws.chains) {
      sigma2.segment(r, c.sigma2.size()) = c.sigma2;
      r += c.sigma2.size();
    }
  }

  double lppd = 0.0, p_waic = 0.0;
  std::vector<double> logp(static_cast<std::size_t>(total));
  const int cm1 = draws.n_classes - 1;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int s = 0; s < total; ++s) {
      switch (family) {
        case Family::linear: {
          const double mu = X.row(i).dot(beta.row(s).head(X.cols()));
          const double resid = y.values[i] - mu;
          logp[static_cast<std::size_t>(s)] =
              -0.5 * std::log(2.0 * kPi * sigma2[s]) - resid * resid / (2.0 * sigma2[s]);
          break;
        }
        case Family::logistic: {
          const double eta = X.row(i).dot(beta.row(s).head(X.cols()));
          logp[static_cast<std::size_t>(s)] =
              y.values[i] > 0.5 ? -log1pexp(-eta) : -log1pexp(eta);
          break;
        }
        case Family::multinomial: {
          double mx = 0.0;
          for (int c = 0; c < cm1; ++c) {
            const double e = X.row(i).dot(beta.row(s).segment(c * X.cols(), X.cols()));
            mx = std::max(mx, e);
          }
          double denom = std::exp(-mx);
          double num = -mx;  // baseline class
          for (int c = 0; c < cm1; ++c) {
            const double e = X.row(i).dot(beta.row(s).segment(c * X.cols(), X.cols()));
            denom += std::exp(e - mx);
            if (y.classes[i] == c) num = e - mx;
          }
          logp[static_cast<std::size_t>(s)] = num - std::log(denom);
          break;
        }
      }
    }
    lppd += detail::log_mean_exp(logp);
    p_waic += detail::variance(logp);
  }
  return -2.0 * (lppd - p_waic);
}

// ---- K-fold cross-validation -------------------------------------------------

struct CvResult {
  double rmse = 0.0;
  int folds_used = 0;
  int folds_skipped = 0;
};

// Per-fold EM with AIC-chosen lambda on the training part; RMSE of held-out
// predictions, on the probability scale for binary outcomes.  Fold assignment
// is a seed-deterministic shuffle.
inline CvResult kfold_cv(const Eigen::MatrixXd& X, const OutcomeView& y, const ConstraintSet& cs,
                         Family family, int folds, const GridSpec& grid, std::uint64_t seed,
                         EmOptions opts = {}, int threads = 1) {
  const Eigen::Index n = X.rows();
  if (folds < 2) throw std::invalid_argument("kfold_cv: folds must be >= 2");
  if (n < folds) throw std::invalid_argument("kfold_cv: need N >= folds");
  if (family == Family::multinomial) {
    throw std::invalid_argument("kfold_cv: supported for linear and logistic families");
  }
  std::vector<int> assignment(static_cast<std::size_t>(n));
  {
    std::vector<int> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(derive_seed(seed, 0xF01D));
    rng.shuffle(perm.begin(), perm.end());
    for (Eigen::Index i = 0; i < n; ++i) {
      assignment[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])] =
          static_cast<int>(i % folds);
    }
  }

  std::vector<double> fold_sq(static_cast<std::size_t>(folds), 0.0);
  std::vector<int> fold_n(static_cast<std::size_t>(folds), 0);
  std::vector<char> fold_skip(static_cast<std::size_t>(folds), 0);

  parallel_for(static_cast<std::size_t>(folds), threads, [&](std::size_t f) {
    std::vector<Eigen::Index> train, test;
    for (Eigen::Index i = 0; i < n; ++i) {
      (assignment[static_cast<std::size_t>(i)] == static_cast<int>(f) ? test : train).push_back(i);
    }
    Eigen::MatrixXd Xtr(train.size(), X.cols());
    Eigen::VectorXd ytr(train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
      Xtr.row(static_cast<Eigen::Index>(i)) = X.row(train[i]);
      ytr[static_cast<Eigen::Index>(i)] = y.values[train[i]];
    }
    // degenerate outcome variation: skip the fold
    const double var = (ytr.array() - ytr.mean()).square().sum();
    if (var <= 0.0) {
      fold_skip[f] = 1;
      return;
    }
    OutcomeView ytr_view;
    ytr_view.values = ytr;
    ytr_view.n_classes = 2;
    const CalibrationResult cal =
        aic_grid(Xtr, ytr_view, cs, family, grid, opts, /*check_propriety=*/false);
    double sq = 0.0;
    for (Eigen::Index i : test) {
      const double eta = X.row(i).dot(cal.best.beta);
      const double pred = family == Family::logistic ? expit(eta) : eta;
      sq += (y.values[i] - pred) * (y.values[i] - pred);
    }
    fold_sq[f] = sq;
    fold_n[f] = static_cast<int>(test.size());
  });

  CvResult res;
  double total_sq = 0.0;
  int total_n = 0;
  for (int f = 0; f < folds; ++f) {
    if (fold_skip[static_cast<std::size_t>(f)]) {
      ++res.folds_skipped;
      continue;
    }
    total_sq += fold_sq[static_cast<std::size_t>(f)];
    total_n += fold_n[static_cast<std::size_t>(f)];
    ++res.folds_used;
  }
  if (total_n == 0) throw std::runtime_error("kfold_cv: all folds skipped");
  res.rmse = std::sqrt(total_sq / total_n);
  return res;
}

}  // namespace fusionlasso
