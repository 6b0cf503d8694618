#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "fusionlasso/distributions.hpp"
#include "fusionlasso/family.hpp"
#include "fusionlasso/propriety.hpp"
#include "fusionlasso/structure.hpp"

// Penalized-MLE fitting by Expectation Maximization.  The E-step replaces the
// latent penalty scales by their conditional means (inverse-Gaussian for the
// linear rows and quadratic groups, Polya-Gamma for binomial/multinomial
// observations); the M-step is a generalized ridge solve.  Restrictions whose
// gap falls below a threshold are treated as binding for all remaining
// iterations and optimization continues in the nullspace of the binding rows.

namespace fusionlasso {

struct EmOptions {
  double binding_threshold = 1e-6;
  double clip_cap = 1e6;
  // Clipping-only phase: E-step weights are capped and no restriction may
  // bind during the first `clip_iterations` iterations.
  int clip_iterations = 5;
  double tol = 1e-9;
  int max_iter = 5000;
  // Inverse-gamma prior on sigma^2 (linear family); the default (-1, 0) is the
  // flat prior, so the fit is the plain penalized MLE.
  double sigma_a0 = -1.0;
  double sigma_b0 = 0.0;
  // Optional fixed quadratic nuisance penalty added to every M-step.
  Eigen::MatrixXd fixed_ridge;
  bool ridge_scales_with_lambda = true;
  Eigen::VectorXd warm_start;
  bool check_propriety = true;
};

struct EmSolution {
  Eigen::VectorXd beta;  // p, or p*(C-1) column-stacked for multinomial
  std::vector<int> binding_set;
  std::vector<int> groups;  // fused-group id per coefficient
  double df = 0.0;
  double aic = 0.0;
  double log_lik = 0.0;
  double sigma2 = 1.0;
  double lambda = 0.0;
  std::vector<double> log_posterior_trace;
  int iterations = 0;
  bool converged = false;
  bool jitter_used = false;
  bool propriety_warning = false;
  // most negative objective delta observed after the clipping phase
  double worst_post_clip_decrease = 0.0;
  int n_classes = 2;
  std::string sigma_handling = "none";
};

// E-step conditional means for the linear family: E[1/tau^2_k] = lambda*sigma
// / |d_k^T beta| and E[1/xi^2_l] = lambda*sigma / sqrt(beta^T F_l beta),
// clipped at clip_cap.
struct EstepWeights {
  Eigen::VectorXd rows;
  Eigen::VectorXd quads;
};

inline EstepWeights estep_linear(const Eigen::VectorXd& beta, double sigma,
                                 const ConstraintSet& cs, double lambda,
                                 double clip_cap = 1e6) {
  if (!beta.allFinite()) throw std::invalid_argument("estep_linear: non-finite beta");
  EstepWeights w;
  w.rows.resize(cs.k_linear());
  w.quads.resize(cs.l_quad());
  const double num = lambda * sigma;
  for (int k = 0; k < cs.k_linear(); ++k) {
    const double gap = std::abs(cs.rows[static_cast<std::size_t>(k)].dot(beta));
    w.rows[k] = std::min(num / std::max(gap, 1e-300), clip_cap);
  }
  for (int l = 0; l < cs.l_quad(); ++l) {
    const double val = std::sqrt(std::max(
        beta.dot(cs.quads[static_cast<std::size_t>(l)].F * beta), 0.0));
    w.quads[l] = std::min(num / std::max(val, 1e-300), clip_cap);
  }
  return w;
}

// One generalized ridge solve: (X^T W X + P) beta = X^T z.
inline Eigen::VectorXd mstep(const Eigen::MatrixXd& X, const Eigen::VectorXd& weights,
                             const Eigen::VectorXd& z, const Eigen::MatrixXd& penalty,
                             bool* jitter_used = nullptr) {
  Eigen::MatrixXd A = X.transpose() * weights.asDiagonal() * X + penalty;
  return solve_spd(A, X.transpose() * z, jitter_used);
}

namespace detail {

// Absorbing set of binding restrictions and the orthonormal nullspace basis of
// their stacked rows.  Ids 0..K-1 are linear rows, K..K+L-1 quadratic groups.
class BindingState {
 public:
  explicit BindingState(const ConstraintSet& cs)
      : cs_(&cs), bound_(static_cast<std::size_t>(cs.k_linear() + cs.l_quad()), false) {
    basis_ = Eigen::MatrixXd::Identity(cs.p, cs.p);
  }

  bool bound(int id) const { return bound_[static_cast<std::size_t>(id)]; }
  const Eigen::MatrixXd& basis() const { return basis_; }
  int free_dim() const { return static_cast<int>(basis_.cols()); }

  std::vector<int> binding_ids() const {
    std::vector<int> ids;
    for (std::size_t i = 0; i < bound_.size(); ++i) {
      if (bound_[i]) ids.push_back(static_cast<int>(i));
    }
    return ids;
  }

  // Marks every restriction whose gap is below the threshold as binding.
  // Returns true when the set grew (the basis was recomputed).
  bool absorb(const Eigen::VectorXd& beta, double threshold) {
    bool grew = false;
    const int K = cs_->k_linear();
    for (int k = 0; k < K; ++k) {
      if (!bound_[static_cast<std::size_t>(k)] &&
          std::abs(cs_->rows[static_cast<std::size_t>(k)].dot(beta)) < threshold) {
        bound_[static_cast<std::size_t>(k)] = true;
        grew = true;
      }
    }
    for (int l = 0; l < cs_->l_quad(); ++l) {
      const int id = K + l;
      if (bound_[static_cast<std::size_t>(id)]) continue;
      const double val = std::sqrt(std::max(
          beta.dot(cs_->quads[static_cast<std::size_t>(l)].F * beta), 0.0));
      if (val < threshold) {
        bound_[static_cast<std::size_t>(id)] = true;
        grew = true;
      }
    }
    if (grew) recompute();
    return grew;
  }

  bool any_below(const Eigen::VectorXd& beta, double threshold) const {
    const int K = cs_->k_linear();
    for (int k = 0; k < K; ++k) {
      if (!bound_[static_cast<std::size_t>(k)] &&
          std::abs(cs_->rows[static_cast<std::size_t>(k)].dot(beta)) < threshold) {
        return true;
      }
    }
    for (int l = 0; l < cs_->l_quad(); ++l) {
      if (bound_[static_cast<std::size_t>(K + l)]) continue;
      const double val = std::sqrt(std::max(
          beta.dot(cs_->quads[static_cast<std::size_t>(l)].F * beta), 0.0));
      if (val < threshold) return true;
    }
    return false;
  }

 private:
  // Difference rows and group quads admit an exact nullspace: coefficients
  // constant on the connected components of the binding edges.  The basis is
  // the normalized component indicators -- orthonormal by disjoint support.
  bool component_basis() {
    const int p = cs_->p;
    const int K = cs_->k_linear();
    std::vector<int> parent(static_cast<std::size_t>(p));
    std::iota(parent.begin(), parent.end(), 0);
    std::function<int(int)> find = [&](int a) {
      while (parent[static_cast<std::size_t>(a)] != a) {
        parent[static_cast<std::size_t>(a)] =
            parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(a)])];
        a = parent[static_cast<std::size_t>(a)];
      }
      return a;
    };
    for (int k = 0; k < K; ++k) {
      if (!bound_[static_cast<std::size_t>(k)]) continue;
      const auto& pat = cs_->rows[static_cast<std::size_t>(k)].pattern;
      if (pat.size() != 2 || pat[0].second != -pat[1].second) return false;
      parent[static_cast<std::size_t>(find(pat[0].first))] = find(pat[1].first);
    }
    for (int l = 0; l < cs_->l_quad(); ++l) {
      if (!bound_[static_cast<std::size_t>(K + l)]) continue;
      const auto& grp = cs_->quads[static_cast<std::size_t>(l)].group;
      if (grp.size() < 2) return false;  // user-supplied F without a group
      for (std::size_t i = 1; i < grp.size(); ++i) {
        parent[static_cast<std::size_t>(find(grp[0]))] = find(grp[static_cast<std::size_t>(i)]);
      }
    }
    std::vector<std::vector<int>> comps(static_cast<std::size_t>(p));
    for (int i = 0; i < p; ++i) comps[static_cast<std::size_t>(find(i))].push_back(i);
    Eigen::Index col = 0;
    for (const auto& c : comps) {
      if (!c.empty()) ++col;
    }
    basis_ = Eigen::MatrixXd::Zero(p, col);
    col = 0;
    for (const auto& c : comps) {
      if (c.empty()) continue;
      const double v = 1.0 / std::sqrt(static_cast<double>(c.size()));
      for (int idx : c) basis_(idx, col) = v;
      ++col;
    }
    return true;
  }

  void recompute() {
    if (component_basis()) return;
    const int K = cs_->k_linear();
    Eigen::Index rows = 0;
    for (int k = 0; k < K; ++k) {
      if (bound_[static_cast<std::size_t>(k)]) ++rows;
    }
    for (int l = 0; l < cs_->l_quad(); ++l) {
      if (bound_[static_cast<std::size_t>(K + l)]) rows += cs_->p;
    }
    if (rows * cs_->p <= 1'000'000) {
      Eigen::MatrixXd stack(rows, cs_->p);
      Eigen::Index r = 0;
      for (int k = 0; k < K; ++k) {
        if (bound_[static_cast<std::size_t>(k)]) {
          stack.row(r++) = cs_->rows[static_cast<std::size_t>(k)].dense(cs_->p).transpose();
        }
      }
      for (int l = 0; l < cs_->l_quad(); ++l) {
        if (bound_[static_cast<std::size_t>(K + l)]) {
          stack.middleRows(r, cs_->p) = cs_->quads[static_cast<std::size_t>(l)].F;
          r += cs_->p;
        }
      }
      basis_ = rank_and_nullspace(stack).nullspace;
      return;
    }
    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(cs_->p, cs_->p);
    for (int k = 0; k < K; ++k) {
      if (bound_[static_cast<std::size_t>(k)]) {
        cs_->rows[static_cast<std::size_t>(k)].add_outer(gram, 1.0);
      }
    }
    for (int l = 0; l < cs_->l_quad(); ++l) {
      if (bound_[static_cast<std::size_t>(K + l)]) {
        const auto& F = cs_->quads[static_cast<std::size_t>(l)].F;
        gram.noalias() += F * F;
      }
    }
    basis_ = gram_rank(gram, rows).nullspace;
  }

  const ConstraintSet* cs_;
  std::vector<bool> bound_;
  Eigen::MatrixXd basis_;
};

// Penalty matrix for the current E-step weights, binding terms excluded.
inline Eigen::MatrixXd penalty_matrix(const ConstraintSet& cs, const BindingState& bind,
                                      const EstepWeights& w, const Eigen::MatrixXd& ridge) {
  Eigen::MatrixXd P = ridge.size() > 0 ? ridge : Eigen::MatrixXd::Zero(cs.p, cs.p);
  const int K = cs.k_linear();
  for (int k = 0; k < K; ++k) {
    if (!bind.bound(k)) cs.rows[static_cast<std::size_t>(k)].add_outer(P, w.rows[k]);
  }
  for (int l = 0; l < cs.l_quad(); ++l) {
    if (!bind.bound(K + l)) P.noalias() += w.quads[l] * cs.quads[static_cast<std::size_t>(l)].F;
  }
  return P;
}

inline double penalty_value(const ConstraintSet& cs, const BindingState& bind,
                            const Eigen::VectorXd& beta) {
  double pen = 0.0;
  const int K = cs.k_linear();
  for (int k = 0; k < K; ++k) {
    if (!bind.bound(k)) pen += std::abs(cs.rows[static_cast<std::size_t>(k)].dot(beta));
  }
  for (int l = 0; l < cs.l_quad(); ++l) {
    if (!bind.bound(K + l)) {
      pen += std::sqrt(std::max(beta.dot(cs.quads[static_cast<std::size_t>(l)].F * beta), 0.0));
    }
  }
  return pen;
}

// Fused groups: connected components over binding difference edges, plus
// whole-group fusion for binding quadratic penalties.
inline std::vector<int> fused_groups(const ConstraintSet& cs, const std::vector<int>& binding,
                                     int p) {
  std::vector<int> parent(static_cast<std::size_t>(p));
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int(int)> find = [&](int a) {
    while (parent[static_cast<std::size_t>(a)] != a) {
      parent[static_cast<std::size_t>(a)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(a)])];
      a = parent[static_cast<std::size_t>(a)];
    }
    return a;
  };
  auto unite = [&](int a, int b) { parent[static_cast<std::size_t>(find(a))] = find(b); };
  const int K = cs.k_linear();
  for (int id : binding) {
    if (id < K) {
      const auto& pat = cs.rows[static_cast<std::size_t>(id)].pattern;
      if (pat.size() == 2) unite(pat[0].first, pat[1].first);
    } else {
      const auto& grp = cs.quads[static_cast<std::size_t>(id - K)].group;
      for (std::size_t i = 1; i < grp.size(); ++i) unite(grp[0], grp[i]);
    }
  }
  std::vector<int> label(static_cast<std::size_t>(p), -1);
  std::vector<int> out(static_cast<std::size_t>(p));
  int next = 0;
  for (int i = 0; i < p; ++i) {
    const int root = find(i);
    if (label[static_cast<std::size_t>(root)] < 0) label[static_cast<std::size_t>(root)] = next++;
    out[static_cast<std::size_t>(i)] = label[static_cast<std::size_t>(root)];
  }
  return out;
}

inline void record_trace(EmSolution& sol, double obj, int iter, int clip_iterations) {
  // every step taken with exact (unclipped) E-step weights must not decrease
  // the penalized log-posterior
  if (!sol.log_posterior_trace.empty() && iter > clip_iterations) {
    const double delta = obj - sol.log_posterior_trace.back();
    sol.worst_post_clip_decrease = std::min(sol.worst_post_clip_decrease, delta);
  }
  sol.log_posterior_trace.push_back(obj);
}

}  // namespace detail

// Sufficient statistics for the linear family; grids and cross-validation
// reuse them across many fits.
struct LinearGram {
  Eigen::MatrixXd XtX;
  Eigen::VectorXd Xty;
  double yty = 0.0;
  Eigen::Index n = 0;

  static LinearGram from(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
    LinearGram g;
    g.XtX = X.transpose() * X;
    g.Xty = X.transpose() * y;
    g.yty = y.squaredNorm();
    g.n = X.rows();
    return g;
  }
};

inline EmSolution fit_em_linear(const LinearGram& gram, const ConstraintSet& cs, double lambda,
                                const EmOptions& opts = {}) {
  if (!(lambda > 0.0)) throw std::invalid_argument("fit_em: lambda must be > 0");
  const int p = cs.p;
  EmSolution sol;
  sol.lambda = lambda;
  sol.sigma_handling = "profiled";

  const bool has_ridge = opts.fixed_ridge.size() > 0;
  Eigen::MatrixXd ridge_eff;
  if (has_ridge) {
    ridge_eff = (opts.ridge_scales_with_lambda ? lambda : 1.0) * opts.fixed_ridge;
  }

  // rank of the stacked prior rows fixes the sigma exponent of the objective
  int m_eff = 0;
  if (!cs.empty() || has_ridge) {
    const Eigen::Index rows = cs.stack_rows() + (has_ridge ? p : 0);
    if (rows * p <= 1'000'000) {
      Eigen::MatrixXd stack(rows, p);
      if (!cs.empty()) stack.topRows(cs.stack_rows()) = cs.dense_dbar();
      if (has_ridge) stack.bottomRows(p) = opts.fixed_ridge;
      m_eff = rank_and_nullspace(stack).rank;
    } else {
      Eigen::MatrixXd gram = cs.empty() ? Eigen::MatrixXd::Zero(p, p) : cs.dbar_gram();
      if (has_ridge) gram.noalias() += opts.fixed_ridge * opts.fixed_ridge;
      m_eff = gram_rank(gram, rows).rank;
    }
  }

  Eigen::VectorXd beta =
      opts.warm_start.size() == p ? opts.warm_start : Eigen::VectorXd::Zero(p);
  const double n_eff = static_cast<double>(gram.n);
  const double sigma_floor = 1e-12 * (1.0 + (gram.n > 0 ? gram.yty / n_eff : 1.0));
  double sigma2 = std::max(gram.n > 0 ? gram.yty / n_eff : 1.0, sigma_floor);
  const double sigma_den = n_eff + m_eff + 2.0 * (opts.sigma_a0 + 1.0);

  detail::BindingState bind(cs);
  auto ssr = [&](const Eigen::VectorXd& b) {
    return std::max(gram.yty - 2.0 * b.dot(gram.Xty) + b.dot(gram.XtX * b), 0.0);
  };
  auto objective = [&](const Eigen::VectorXd& b, double s2) {
    const double sig = std::sqrt(s2);
    double obj = -0.5 * (n_eff + m_eff) * std::log(s2) - ssr(b) / (2.0 * s2) -
                 lambda / sig * detail::penalty_value(cs, bind, b);
    if (has_ridge) obj -= b.dot(ridge_eff * b) / (2.0 * s2);
    if (opts.sigma_a0 != -1.0 || opts.sigma_b0 != 0.0) {
      obj += -(opts.sigma_a0 + 1.0) * std::log(s2) - opts.sigma_b0 / s2;
    }
    return obj;
  };

  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    sol.iterations = iter;
    const bool clip_phase = iter <= opts.clip_iterations;
    if (!clip_phase) bind.absorb(beta, opts.binding_threshold);

    const EstepWeights w = estep_linear(beta, std::sqrt(sigma2), cs, lambda,
                                        clip_phase ? opts.clip_cap
                                                   : std::numeric_limits<double>::infinity());
    const Eigen::MatrixXd P = detail::penalty_matrix(cs, bind, w, ridge_eff);
    const Eigen::MatrixXd& Z = bind.basis();
    const Eigen::MatrixXd Az = Z.transpose() * (gram.XtX + P) * Z;
    const Eigen::VectorXd bz = Z.transpose() * gram.Xty;
    beta = Z * solve_spd(Az, bz, &sol.jitter_used);

    const double quad = ssr(beta) + beta.dot(P * beta);
    sigma2 = std::max((quad + 2.0 * opts.sigma_b0) / std::max(sigma_den, 1.0), sigma_floor);

    const double obj = objective(beta, sigma2);
    detail::record_trace(sol, obj, iter, opts.clip_iterations);

    const std::size_t t = sol.log_posterior_trace.size();
    if (!clip_phase && t >= 2) {
      const double delta = std::abs(obj - sol.log_posterior_trace[t - 2]);
      if (delta < opts.tol * (1.0 + std::abs(obj)) &&
          !bind.any_below(beta, opts.binding_threshold)) {
        sol.converged = true;
        break;
      }
    }
  }

  sol.beta = beta;
  sol.sigma2 = sigma2;
  sol.binding_set = bind.binding_ids();
  sol.groups = detail::fused_groups(cs, sol.binding_set, p);
  sol.df = bind.free_dim();
  const double s2_ml = std::max(ssr(beta) / std::max(n_eff, 1.0), 1e-300);
  sol.log_lik = -0.5 * n_eff * (std::log(2.0 * kPi * s2_ml) + 1.0);
  sol.aic = -2.0 * sol.log_lik + 2.0 * sol.df;
  return sol;
}

inline EmSolution fit_em_logistic(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                  const ConstraintSet& cs, double lambda,
                                  const EmOptions& opts = {}) {
  if (!(lambda > 0.0)) throw std::invalid_argument("fit_em: lambda must be > 0");
  const int p = cs.p;
  EmSolution sol;
  sol.lambda = lambda;

  const bool has_ridge = opts.fixed_ridge.size() > 0;
  Eigen::MatrixXd ridge_eff;
  if (has_ridge) {
    ridge_eff = (opts.ridge_scales_with_lambda ? lambda : 1.0) * opts.fixed_ridge;
  }

  Eigen::VectorXd beta =
      opts.warm_start.size() == p ? opts.warm_start : Eigen::VectorXd::Zero(p);
  const Eigen::VectorXd kappa = y.array() - 0.5;
  detail::BindingState bind(cs);

  auto objective = [&](const Eigen::VectorXd& b) {
    double obj = logistic_loglik(X, y, b) - lambda * detail::penalty_value(cs, bind, b);
    if (has_ridge) obj -= 0.5 * b.dot(ridge_eff * b);
    return obj;
  };

  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    sol.iterations = iter;
    const bool clip_phase = iter <= opts.clip_iterations;
    if (!clip_phase) bind.absorb(beta, opts.binding_threshold);

    const EstepWeights w = estep_linear(beta, 1.0, cs, lambda,
                                        clip_phase ? opts.clip_cap
                                                   : std::numeric_limits<double>::infinity());
    const Eigen::VectorXd eta = X * beta;
    Eigen::VectorXd omega(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) omega[i] = polya_gamma_mean(eta[i]);

    const Eigen::MatrixXd P = detail::penalty_matrix(cs, bind, w, ridge_eff);
    const Eigen::MatrixXd& Z = bind.basis();
    const Eigen::MatrixXd XZ = X * Z;
    const Eigen::MatrixXd Az =
        XZ.transpose() * omega.asDiagonal() * XZ + Z.transpose() * P * Z;
    const Eigen::VectorXd bz = XZ.transpose() * kappa;
    beta = Z * solve_spd(Az, bz, &sol.jitter_used);

    const double obj = objective(beta);
    detail::record_trace(sol, obj, iter, opts.clip_iterations);

    const std::size_t t = sol.log_posterior_trace.size();
    if (!clip_phase && t >= 2) {
      const double delta = std::abs(obj - sol.log_posterior_trace[t - 2]);
      if (delta < opts.tol * (1.0 + std::abs(obj)) &&
          !bind.any_below(beta, opts.binding_threshold)) {
        sol.converged = true;
        break;
      }
    }
  }

  sol.beta = beta;
  sol.binding_set = bind.binding_ids();
  sol.groups = detail::fused_groups(cs, sol.binding_set, p);
  sol.df = bind.free_dim();
  sol.log_lik = logistic_loglik(X, y, beta);
  sol.aic = -2.0 * sol.log_lik + 2.0 * sol.df;
  return sol;
}

inline EmSolution fit_em_multinomial(const Eigen::MatrixXd& X, const Eigen::VectorXi& classes,
                                     int n_classes, const ConstraintSet& cs, double lambda,
                                     const EmOptions& opts = {}) {
  if (!(lambda > 0.0)) throw std::invalid_argument("fit_em: lambda must be > 0");
  if (n_classes < 2) throw std::invalid_argument("fit_em: multinomial needs >= 2 classes");
  const int p = cs.p;
  const int cm1 = n_classes - 1;
  const Eigen::Index n = X.rows();
  EmSolution sol;
  sol.lambda = lambda;
  sol.n_classes = n_classes;

  const bool has_ridge = opts.fixed_ridge.size() > 0;
  Eigen::MatrixXd ridge_eff;
  if (has_ridge) {
    ridge_eff = (opts.ridge_scales_with_lambda ? lambda : 1.0) * opts.fixed_ridge;
  }

  Eigen::MatrixXd beta = Eigen::MatrixXd::Zero(p, cm1);
  if (opts.warm_start.size() == static_cast<Eigen::Index>(p) * cm1) {
    beta = Eigen::Map<const Eigen::MatrixXd>(opts.warm_start.data(), p, cm1);
  }
  Eigen::MatrixXd eta = X * beta;
  std::vector<detail::BindingState> bind(static_cast<std::size_t>(cm1),
                                         detail::BindingState(cs));

  auto objective = [&]() {
    double obj = multinomial_loglik(X, classes, n_classes, beta);
    for (int c = 0; c < cm1; ++c) {
      obj -= lambda * detail::penalty_value(cs, bind[static_cast<std::size_t>(c)], beta.col(c));
      if (has_ridge) obj -= 0.5 * beta.col(c).dot(ridge_eff * beta.col(c));
    }
    return obj;
  };

  for (int iter = 1; iter <= opts.max_iter; ++iter) {
    sol.iterations = iter;
    const bool clip_phase = iter <= opts.clip_iterations;

    for (int c = 0; c < cm1; ++c) {
      auto& bc = bind[static_cast<std::size_t>(c)];
      if (!clip_phase) bc.absorb(beta.col(c), opts.binding_threshold);

      // offset against the other classes, baseline included
      Eigen::VectorXd offset(n), omega(n), s(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        double mx = 0.0;
        for (int l = 0; l < cm1; ++l) {
          if (l != c) mx = std::max(mx, eta(i, l));
        }
        double acc = std::exp(-mx);
        for (int l = 0; l < cm1; ++l) {
          if (l != c) acc += std::exp(eta(i, l) - mx);
        }
        offset[i] = mx + std::log(acc);
        const double psi = eta(i, c) - offset[i];
        omega[i] = polya_gamma_mean(psi);
        s[i] = (classes[i] == c ? 0.5 : -0.5) + omega[i] * offset[i];
      }

      const EstepWeights w = estep_linear(beta.col(c), 1.0, cs, lambda,
                                          clip_phase ? opts.clip_cap
                                                     : std::numeric_limits<double>::infinity());
      const Eigen::MatrixXd P = detail::penalty_matrix(cs, bc, w, ridge_eff);
      const Eigen::MatrixXd& Z = bc.basis();
      const Eigen::MatrixXd XZ = X * Z;
      const Eigen::MatrixXd Az =
          XZ.transpose() * omega.asDiagonal() * XZ + Z.transpose() * P * Z;
      const Eigen::VectorXd bz = XZ.transpose() * s;
      beta.col(c) = Z * solve_spd(Az, bz, &sol.jitter_used);
      eta.col(c) = X * beta.col(c);
    }

    const double obj = objective();
    detail::record_trace(sol, obj, iter, opts.clip_iterations);

    const std::size_t t = sol.log_posterior_trace.size();
    if (!clip_phase && t >= 2) {
      bool stable = true;
      for (int c = 0; c < cm1 && stable; ++c) {
        stable = !bind[static_cast<std::size_t>(c)].any_below(beta.col(c),
                                                              opts.binding_threshold);
      }
      const double delta = std::abs(obj - sol.log_posterior_trace[t - 2]);
      if (stable && delta < opts.tol * (1.0 + std::abs(obj))) {
        sol.converged = true;
        break;
      }
    }
  }

  sol.beta = Eigen::Map<Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(p) * cm1);
  const int per_class = cs.k_linear() + cs.l_quad();
  sol.df = 0.0;
  for (int c = 0; c < cm1; ++c) {
    for (int id : bind[static_cast<std::size_t>(c)].binding_ids()) {
      sol.binding_set.push_back(c * per_class + id);
    }
    sol.df += bind[static_cast<std::size_t>(c)].free_dim();
  }
  sol.groups = detail::fused_groups(cs, bind[0].binding_ids(), p);
  sol.log_lik = multinomial_loglik(X, classes, n_classes, beta);
  sol.aic = -2.0 * sol.log_lik + 2.0 * sol.df;
  return sol;
}

inline EmSolution fit_em(const Eigen::MatrixXd& X, const OutcomeView& y, const ConstraintSet& cs,
                         double lambda, Family family, const EmOptions& opts = {}) {
  EmSolution sol;
  bool warn = false;
  if (opts.check_propriety) {
    const ProprietyReport rep = check_posterior(X, y, cs, family);
    warn = rep.posterior == PosteriorStatus::improper;
  }
  switch (family) {
    case Family::linear:
      sol = fit_em_linear(LinearGram::from(X, y.values), cs, lambda, opts);
      break;
    case Family::logistic:
      sol = fit_em_logistic(X, y.values, cs, lambda, opts);
      break;
    case Family::multinomial:
      sol = fit_em_multinomial(X, y.classes, y.n_classes, cs, lambda, opts);
      break;
  }
  sol.propriety_warning = warn;
  return sol;
}

inline EmSolution fit_em(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                         const ConstraintSet& cs, double lambda, Family family,
                         const EmOptions& opts = {}) {
  OutcomeView view;
  view.values = y;
  view.n_classes = 2;
  return fit_em(X, view, cs, lambda, family, opts);
}

}  // namespace fusionlasso
