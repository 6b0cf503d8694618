#pragma once

#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "fusionlasso/distributions.hpp"
#include "fusionlasso/em.hpp"
#include "fusionlasso/parallel.hpp"
#include "fusionlasso/propriety.hpp"
#include "fusionlasso/rng.hpp"
#include "fusionlasso/structure.hpp"

// Full posterior sampling by data augmentation: inverse-Gaussian draws for the
// penalty scales, conjugate normal/inverse-gamma updates for the linear
// family, and Polya-Gamma augmentation for binomial/multinomial outcomes.

namespace fusionlasso {

struct PriorSpec {
  // lambda^2 ~ Gamma(a0, b0) unless fixed
  bool lambda_fixed = false;
  double lambda_value = 1.0;
  double a0_lambda = 1.0;
  double b0_lambda = 1.0;
  // The lambda^2 shape uses (K+L+m)/2 with m = rank(Dbar) by default; the
  // (p+K+L)/2 variant is kept as an option (see Open Questions in the docs).
  enum class Exponent { rank, dimension } exponent = Exponent::rank;
  // sigma^2 ~ InverseGamma(a0, b0) (linear family only) unless fixed
  bool sigma_fixed = false;
  double sigma2_value = 1.0;
  double a0_sigma = 1e-3;
  double b0_sigma = 1e-3;

  void validate() const {
    if (!lambda_fixed && (!(a0_lambda > 0.0) || !(b0_lambda > 0.0))) {
      throw std::invalid_argument("prior: lambda hyperparameters must be > 0");
    }
    if (lambda_fixed && !(lambda_value > 0.0)) {
      throw std::invalid_argument("prior: fixed lambda must be > 0");
    }
    if (!sigma_fixed && (!(a0_sigma > 0.0) || !(b0_sigma > 0.0))) {
      throw std::invalid_argument("prior: sigma hyperparameters must be > 0");
    }
    if (sigma_fixed && !(sigma2_value > 0.0)) {
      throw std::invalid_argument("prior: fixed sigma2 must be > 0");
    }
  }
};

struct SamplerSettings {
  int chains = 4;
  int iters = 10000;   // total cycles per chain
  int burnin = 5000;   // discarded cycles
  int thin = 1;
  std::uint64_t seed = 1;
  int threads = 1;
  bool force = false;           // sample even when the posterior check fails
  bool check_propriety = true;
  bool shuffled_scan = false;   // randomize augmentation update order
  double init_spread = 3.0;     // beta init ~ U(-spread, spread), per chain
};

struct ChainDraws {
  Eigen::MatrixXd beta;     // kept x p_total
  Eigen::VectorXd lambda2;  // kept
  Eigen::VectorXd sigma2;   // kept (linear family only, else empty)
  std::uint64_t seed = 0;
};

struct PosteriorDraws {
  std::vector<ChainDraws> chains;
  std::vector<std::string> labels;
  Family family = Family::linear;
  int n_classes = 2;
  int burnin = 0;
  int thin = 1;
  std::uint64_t master_seed = 0;

  int n_params() const { return chains.empty() ? 0 : static_cast<int>(chains[0].beta.cols()); }
  int kept_per_chain() const {
    return chains.empty() ? 0 : static_cast<int>(chains[0].beta.rows());
  }
  int total_kept() const {
    int n = 0;
    for (const auto& c : chains) n += static_cast<int>(c.beta.rows());
    return n;
  }

  Eigen::MatrixXd stacked_beta() const {
    Eigen::MatrixXd out(total_kept(), n_params());
    Eigen::Index r = 0;
    for (const auto& c : chains) {
      out.middleRows(r, c.beta.rows()) = c.beta;
      r += c.beta.rows();
    }
    return out;
  }
};

// ---- full conditionals ------------------------------------------------------

// Gamma(a0 + [K+L+m]/2, b0 + (sum tau^2 + sum xi^2)/2); with the `dimension`
// option the shape uses (p+K+L)/2 instead.
inline std::pair<double, double> lambda2_conditional(const Eigen::VectorXd& tau2,
                                                     const Eigen::VectorXd& xi2, int m, int p,
                                                     const PriorSpec& prior) {
  const double k = static_cast<double>(tau2.size());
  const double l = static_cast<double>(xi2.size());
  const double extra = prior.exponent == PriorSpec::Exponent::rank ? static_cast<double>(m)
                                                                   : static_cast<double>(p);
  const double shape = prior.a0_lambda + 0.5 * (k + l + extra);
  const double rate = prior.b0_lambda + 0.5 * (tau2.sum() + xi2.sum());
  return {shape, rate};
}

inline double sample_lambda2(const Eigen::VectorXd& tau2, const Eigen::VectorXd& xi2, int m,
                             int p, const PriorSpec& prior, Rng& rng) {
  const auto [shape, rate] = lambda2_conditional(tau2, xi2, m, p, prior);
  return rng.gamma(shape, rate);
}

struct LinearGibbsState {
  Eigen::VectorXd beta;
  Eigen::VectorXd tau2;  // K
  Eigen::VectorXd xi2;   // L
  double sigma2 = 1.0;
  double lambda2 = 1.0;
};

namespace detail {

// Penalty precision sum_k d_k d_k^T / tau^2_k + sum_l F_l / xi^2_l.
inline Eigen::MatrixXd penalty_precision(const ConstraintSet& cs, const Eigen::VectorXd& tau2,
                                         const Eigen::VectorXd& xi2) {
  Eigen::MatrixXd P = Eigen::MatrixXd::Zero(cs.p, cs.p);
  for (int k = 0; k < cs.k_linear(); ++k) {
    cs.rows[static_cast<std::size_t>(k)].add_outer(P, 1.0 / tau2[k]);
  }
  for (int l = 0; l < cs.l_quad(); ++l) {
    P.noalias() += cs.quads[static_cast<std::size_t>(l)].F / xi2[l];
  }
  return P;
}

inline std::vector<int> scan_order(int n, bool shuffled, Rng& rng) {
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  if (shuffled) rng.shuffle(order.begin(), order.end());
  return order;
}

inline void check_finite(const Eigen::VectorXd& v, const char* what) {
  if (!v.allFinite()) {
    throw std::runtime_error(std::string("gibbs: non-finite draw in ") + what);
  }
}

}  // namespace detail

// One full scan of the linear-family conditionals.  `m_rank` is rank(Dbar).
inline void linear_gibbs_cycle(LinearGibbsState& st, const LinearGram& gram,
                               const ConstraintSet& cs, const PriorSpec& prior, int m_rank,
                               Rng& rng, bool shuffled_scan = false) {
  const int p = cs.p;
  const double sigma = std::sqrt(st.sigma2);
  const double lambda = std::sqrt(st.lambda2);

  // beta | tau, xi, sigma, y
  const Eigen::MatrixXd pen_prec = detail::penalty_precision(cs, st.tau2, st.xi2);
  Eigen::LLT<Eigen::MatrixXd> llt(gram.XtX + pen_prec);
  if (llt.info() != Eigen::Success) {
    throw std::runtime_error("gibbs: beta precision matrix not positive definite");
  }
  const Eigen::VectorXd mean = llt.solve(gram.Xty);
  Eigen::VectorXd z(p);
  for (int i = 0; i < p; ++i) z[i] = rng.normal();
  st.beta = mean + sigma * llt.matrixU().solve(z);
  detail::check_finite(st.beta, "beta");

  // sigma^2 | beta, tau, xi, y
  if (!prior.sigma_fixed) {
    const double ssr = std::max(
        gram.yty - 2.0 * st.beta.dot(gram.Xty) + st.beta.dot(gram.XtX * st.beta), 0.0);
    const double pen_quad = std::max(st.beta.dot(pen_prec * st.beta), 0.0);
    const double shape = prior.a0_sigma + 0.5 * (static_cast<double>(gram.n) + m_rank);
    const double rate = prior.b0_sigma + 0.5 * (ssr + pen_quad);
    st.sigma2 = 1.0 / rng.gamma(shape, rate);
  } else {
    st.sigma2 = prior.sigma2_value;
  }

  // 1/tau^2_k ~ InvGaussian(lambda sigma / |d_k' beta|, lambda^2), gaps floored
  const double sig_now = std::sqrt(st.sigma2);
  const double lam_sig = lambda * sig_now;
  for (int k : detail::scan_order(cs.k_linear(), shuffled_scan, rng)) {
    const double gap = std::max(std::abs(cs.rows[static_cast<std::size_t>(k)].dot(st.beta)), 1e-12);
    st.tau2[k] = 1.0 / draw_inverse_gaussian(lam_sig / gap, st.lambda2, rng);
  }
  for (int l : detail::scan_order(cs.l_quad(), shuffled_scan, rng)) {
    const double val = std::max(
        std::sqrt(std::max(st.beta.dot(cs.quads[static_cast<std::size_t>(l)].F * st.beta), 0.0)),
        1e-12);
    st.xi2[l] = 1.0 / draw_inverse_gaussian(lam_sig / val, st.lambda2, rng);
  }

  // lambda^2 | tau, xi
  if (!prior.lambda_fixed) {
    st.lambda2 = sample_lambda2(st.tau2, st.xi2, m_rank, p, prior, rng);
  } else {
    st.lambda2 = prior.lambda_value * prior.lambda_value;
  }
}

struct MultinomialGibbsState {
  Eigen::MatrixXd beta;   // p x (C-1), class C-1 is the zero baseline
  Eigen::MatrixXd eta;    // N x (C-1)
  Eigen::MatrixXd omega;  // N x (C-1)
  Eigen::MatrixXd tau2;   // K x (C-1)
  Eigen::MatrixXd xi2;    // L x (C-1)
  double lambda2 = 1.0;
};

// One full scan for the multinomial family (logistic when C = 2).  Cycles the
// classes against the log-sum offset of the others, with Polya-Gamma draws
// making each conditional Gaussian.
inline void multinomial_gibbs_cycle(MultinomialGibbsState& st, const Eigen::MatrixXd& X,
                                    const Eigen::VectorXi& classes, const ConstraintSet& cs,
                                    const PriorSpec& prior, int m_rank, Rng& rng,
                                    bool shuffled_scan = false) {
  const Eigen::Index n = X.rows();
  const int p = cs.p;
  const int cm1 = static_cast<int>(st.beta.cols());
  const double lambda = std::sqrt(st.lambda2);

  for (int c = 0; c < cm1; ++c) {
    // offset O_ic = log sum_{l != c} exp(eta_il), baseline included
    Eigen::VectorXd offset(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      double mx = 0.0;
      for (int l = 0; l < cm1; ++l) {
        if (l != c) mx = std::max(mx, st.eta(i, l));
      }
      double acc = std::exp(-mx);
      for (int l = 0; l < cm1; ++l) {
        if (l != c) acc += std::exp(st.eta(i, l) - mx);
      }
      offset[i] = mx + std::log(acc);
    }

    // omega_ic ~ PG(1, eta_ic - O_ic)
    for (Eigen::Index i = 0; i < n; ++i) {
      st.omega(i, c) = draw_polya_gamma(st.eta(i, c) - offset[i], rng);
    }

    // penalty scales for this class
    for (int k : detail::scan_order(cs.k_linear(), shuffled_scan, rng)) {
      const double gap = std::max(
          std::abs(cs.rows[static_cast<std::size_t>(k)].dot(st.beta.col(c))), 1e-12);
      st.tau2(k, c) = 1.0 / draw_inverse_gaussian(lambda / gap, st.lambda2, rng);
    }
    for (int l : detail::scan_order(cs.l_quad(), shuffled_scan, rng)) {
      const double val = std::max(
          std::sqrt(std::max(
              st.beta.col(c).dot(cs.quads[static_cast<std::size_t>(l)].F * st.beta.col(c)), 0.0)),
          1e-12);
      st.xi2(l, c) = 1.0 / draw_inverse_gaussian(lambda / val, st.lambda2, rng);
    }

    // beta_c | omega, tau, xi: Gaussian with precision X' Omega X + penalty
    Eigen::MatrixXd prec = detail::penalty_precision(cs, st.tau2.col(c), st.xi2.col(c));
    prec.noalias() += X.transpose() * st.omega.col(c).asDiagonal() * X;
    Eigen::VectorXd s(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      s[i] = (classes[i] == c ? 0.5 : -0.5) + st.omega(i, c) * offset[i];
    }
    Eigen::LLT<Eigen::MatrixXd> llt(prec);
    if (llt.info() != Eigen::Success) {
      throw std::runtime_error("gibbs: beta precision matrix not positive definite");
    }
    const Eigen::VectorXd mean = llt.solve(X.transpose() * s);
    Eigen::VectorXd z(p);
    for (int i = 0; i < p; ++i) z[i] = rng.normal();
    st.beta.col(c) = mean + llt.matrixU().solve(z);
    detail::check_finite(st.beta.col(c), "beta");
    st.eta.col(c) = X * st.beta.col(c);
  }

  if (!prior.lambda_fixed) {
    // all classes share lambda; each contributes its augmentation scales
    Eigen::VectorXd tau_all(Eigen::Map<Eigen::VectorXd>(st.tau2.data(), st.tau2.size()));
    Eigen::VectorXd xi_all(Eigen::Map<Eigen::VectorXd>(st.xi2.data(), st.xi2.size()));
    const double extra = prior.exponent == PriorSpec::Exponent::rank
                             ? static_cast<double>(m_rank)
                             : static_cast<double>(p);
    const double shape =
        prior.a0_lambda + 0.5 * cm1 * (cs.k_linear() + cs.l_quad() + extra);
    const double rate = prior.b0_lambda + 0.5 * (tau_all.sum() + xi_all.sum());
    st.lambda2 = rng.gamma(shape, rate);
  } else {
    st.lambda2 = prior.lambda_value * prior.lambda_value;
  }
}

namespace detail {

inline double initial_lambda2(const PriorSpec& prior) {
  if (prior.lambda_fixed) return prior.lambda_value * prior.lambda_value;
  return prior.a0_lambda / prior.b0_lambda;  // prior mean
}

inline int kept_draws(const SamplerSettings& s) {
  if (s.iters <= s.burnin) throw std::invalid_argument("sampler: iters must exceed burnin");
  return (s.iters - s.burnin + s.thin - 1) / s.thin;
}

}  // namespace detail

// Posterior sampling for the linear family.  Refuses an improper posterior
// unless settings.force is set.  Chains run concurrently over shared
// immutable inputs; each chain owns an rng derived from the master seed.
inline PosteriorDraws sample_linear(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                    const ConstraintSet& cs, const PriorSpec& prior,
                                    const SamplerSettings& settings,
                                    const std::vector<std::string>& labels = {}) {
  prior.validate();
  if (settings.check_propriety) {
    const ProprietyReport rep = check_posterior(X, y, cs, Family::linear);
    if (rep.posterior == PosteriorStatus::improper && !settings.force) {
      throw std::runtime_error("sample_linear: posterior is improper (" + rep.details +
                               "); pass force to sample anyway");
    }
  }
  const LinearGram gram = LinearGram::from(X, y);
  const int m_rank = rank_dbar(cs);
  const int kept = detail::kept_draws(settings);
  const int p = cs.p;

  PosteriorDraws out;
  out.family = Family::linear;
  out.burnin = settings.burnin;
  out.thin = settings.thin;
  out.master_seed = settings.seed;
  out.labels = labels;
  if (out.labels.empty()) {
    for (int j = 0; j < p; ++j) out.labels.push_back("beta" + std::to_string(j));
  }
  out.chains.resize(static_cast<std::size_t>(settings.chains));

  parallel_for(static_cast<std::size_t>(settings.chains), settings.threads, [&](std::size_t c) {
    ChainDraws& draws = out.chains[c];
    draws.seed = derive_seed(settings.seed, c);
    Rng rng(draws.seed);
    LinearGibbsState st;
    st.beta.resize(p);
    for (int j = 0; j < p; ++j) {
      st.beta[j] = settings.init_spread * (2.0 * rng.uniform() - 1.0);
    }
    st.tau2 = Eigen::VectorXd::Ones(cs.k_linear());
    st.xi2 = Eigen::VectorXd::Ones(cs.l_quad());
    st.sigma2 = prior.sigma_fixed ? prior.sigma2_value : 1.0;
    st.lambda2 = detail::initial_lambda2(prior);

    draws.beta.resize(kept, p);
    draws.lambda2.resize(kept);
    draws.sigma2.resize(kept);
    int row = 0;
    for (int it = 0; it < settings.iters; ++it) {
      try {
        linear_gibbs_cycle(st, gram, cs, prior, m_rank, rng, settings.shuffled_scan);
      } catch (const std::exception& e) {
        throw std::runtime_error("chain " + std::to_string(c) + " aborted at iteration " +
                                 std::to_string(it) + ": " + e.what());
      }
      if (it >= settings.burnin && (it - settings.burnin) % settings.thin == 0) {
        draws.beta.row(row) = st.beta.transpose();
        draws.lambda2[row] = st.lambda2;
        draws.sigma2[row] = st.sigma2;
        ++row;
      }
    }
    draws.beta.conservativeResize(row, p);
    draws.lambda2.conservativeResize(row);
    draws.sigma2.conservativeResize(row);
  });
  return out;
}

// Posterior sampling for the multinomial family (logistic when C = 2); the
// constraint set is shared across the C-1 free classes.
inline PosteriorDraws sample_multinomial(const Eigen::MatrixXd& X, const Eigen::VectorXi& classes,
                                         int n_classes, const ConstraintSet& cs,
                                         const PriorSpec& prior, const SamplerSettings& settings,
                                         const std::vector<std::string>& labels = {}) {
  prior.validate();
  if (n_classes < 2) throw std::invalid_argument("sample_multinomial: need >= 2 classes");
  const Family fam = n_classes == 2 ? Family::logistic : Family::multinomial;
  if (settings.check_propriety) {
    OutcomeView view;
    view.n_classes = n_classes;
    view.classes = classes;
    if (n_classes == 2) {
      view.values.resize(classes.size());
      for (Eigen::Index i = 0; i < classes.size(); ++i) {
        view.values[i] = classes[i] == 0 ? 1.0 : 0.0;
      }
    }
    const ProprietyReport rep = check_posterior(X, view, cs, fam);
    if (rep.posterior == PosteriorStatus::improper && !settings.force) {
      throw std::runtime_error("sample_multinomial: posterior is improper (" + rep.details +
                               "); pass force to sample anyway");
    }
  }
  const int m_rank = rank_dbar(cs);
  const int kept = detail::kept_draws(settings);
  const int p = cs.p;
  const int cm1 = n_classes - 1;

  PosteriorDraws out;
  out.family = fam;
  out.n_classes = n_classes;
  out.burnin = settings.burnin;
  out.thin = settings.thin;
  out.master_seed = settings.seed;
  if (!labels.empty()) {
    if (n_classes == 2) {
      out.labels = labels;
    } else {
      for (int c = 0; c < cm1; ++c) {
        for (const auto& l : labels) out.labels.push_back(l + "@class" + std::to_string(c));
      }
    }
  } else {
    for (int c = 0; c < cm1; ++c) {
      for (int j = 0; j < p; ++j) {
        out.labels.push_back("beta" + std::to_string(j) + "@class" + std::to_string(c));
      }
    }
  }
  out.chains.resize(static_cast<std::size_t>(settings.chains));

  parallel_for(static_cast<std::size_t>(settings.chains), settings.threads, [&](std::size_t c) {
    ChainDraws& draws = out.chains[c];
    draws.seed = derive_seed(settings.seed, c);
    Rng rng(draws.seed);
    MultinomialGibbsState st;
    st.beta.resize(p, cm1);
    for (int j = 0; j < p; ++j) {
      for (int l = 0; l < cm1; ++l) {
        st.beta(j, l) = settings.init_spread * (2.0 * rng.uniform() - 1.0);
      }
    }
    st.eta = X * st.beta;
    st.omega = Eigen::MatrixXd::Constant(X.rows(), cm1, 0.25);
    st.tau2 = Eigen::MatrixXd::Ones(cs.k_linear(), cm1);
    st.xi2 = Eigen::MatrixXd::Ones(cs.l_quad(), cm1);
    st.lambda2 = detail::initial_lambda2(prior);

    draws.beta.resize(kept, p * cm1);
    draws.lambda2.resize(kept);
    int row = 0;
    for (int it = 0; it < settings.iters; ++it) {
      try {
        multinomial_gibbs_cycle(st, X, classes, cs, prior, m_rank, rng, settings.shuffled_scan);
      } catch (const std::exception& e) {
        throw std::runtime_error("chain " + std::to_string(c) + " aborted at iteration " +
                                 std::to_string(it) + ": " + e.what());
      }
      if (it >= settings.burnin && (it - settings.burnin) % settings.thin == 0) {
        draws.beta.row(row) =
            Eigen::Map<const Eigen::VectorXd>(st.beta.data(), p * cm1).transpose();
        draws.lambda2[row] = st.lambda2;
        ++row;
      }
    }
    draws.beta.conservativeResize(row, p * cm1);
    draws.lambda2.conservativeResize(row);
  });
  return out;
}

// 0/1 outcomes -> class codes with class 0 = success, class 1 = baseline.
inline Eigen::VectorXi logistic_classes(const Eigen::VectorXd& y) {
  Eigen::VectorXi classes(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) classes[i] = y[i] > 0.5 ? 0 : 1;
  return classes;
}

}  // namespace fusionlasso
