#pragma once

#include <cmath>

#include <Eigen/Dense>

#include "fusionlasso/data.hpp"
#include "fusionlasso/linalg.hpp"

namespace fusionlasso {

inline double log1pexp(double x) {
  if (x > 35.0) return x;
  if (x < -35.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

inline double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

inline double logistic_loglik(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                              const Eigen::VectorXd& beta) {
  const Eigen::VectorXd eta = X * beta;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < eta.size(); ++i) {
    ll += y[i] * eta[i] - log1pexp(eta[i]);
  }
  return ll;
}

// beta is p x (C-1) column-stacked; class C-1 is the zero baseline.
inline double multinomial_loglik(const Eigen::MatrixXd& X, const Eigen::VectorXi& classes,
                                 int n_classes, const Eigen::MatrixXd& beta) {
  const Eigen::MatrixXd eta = X * beta;  // N x (C-1)
  double ll = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    double mx = 0.0;  // baseline eta = 0
    for (Eigen::Index c = 0; c < eta.cols(); ++c) mx = std::max(mx, eta(i, c));
    double denom = std::exp(-mx);
    for (Eigen::Index c = 0; c < eta.cols(); ++c) denom += std::exp(eta(i, c) - mx);
    const int yc = classes[i];
    const double num = yc == n_classes - 1 ? -mx : eta(i, yc) - mx;
    ll += num - std::log(denom) - mx + mx;  // = eta_y - logsumexp
  }
  return ll;
}

struct NewtonResult {
  Eigen::VectorXd theta;
  double loglik = 0.0;
  bool converged = false;
  bool diverged = false;
  int iterations = 0;
};

// Damped Newton ascent for a Bernoulli likelihood.  Used both as an IRLS-style
// solver and as the separation detector: when the full step keeps improving we
// extrapolate it by doubling, so a separated fit races monotonically past
// `divergence_bound` instead of stalling, and divergence is declared there.
inline NewtonResult logistic_mle(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                 int max_iter = 200, double divergence_bound = 1e4,
                                 double ridge = 0.0) {
  const Eigen::Index p = X.cols();
  NewtonResult res;
  res.theta = Eigen::VectorXd::Zero(p);
  auto objective = [&](const Eigen::VectorXd& b) {
    return logistic_loglik(X, y, b) - 0.5 * ridge * b.squaredNorm();
  };
  double ll = objective(res.theta);
  for (int it = 0; it < max_iter; ++it) {
    res.iterations = it + 1;
    const Eigen::VectorXd eta = X * res.theta;
    Eigen::VectorXd mu(eta.size()), w(eta.size());
    for (Eigen::Index i = 0; i < eta.size(); ++i) {
      mu[i] = expit(eta[i]);
      w[i] = std::max(mu[i] * (1.0 - mu[i]), 1e-10);
    }
    Eigen::VectorXd grad = X.transpose() * (y - mu) - ridge * res.theta;
    Eigen::MatrixXd H = X.transpose() * w.asDiagonal() * X;
    H.diagonal().array() += ridge + 1e-10;
    const Eigen::VectorXd step = H.ldlt().solve(grad);

    // backtracking below t = 1, doubling extrapolation above
    double t = 1.0;
    Eigen::VectorXd theta_new = res.theta + step;
    double ll_new = objective(theta_new);
    if (ll_new < ll - 1e-12) {
      for (int h = 0; h < 40 && ll_new < ll - 1e-12; ++h) {
        t *= 0.5;
        theta_new = res.theta + t * step;
        ll_new = objective(theta_new);
      }
    } else {
      // ties count as still improving: a separated likelihood saturates in
      // floating point while the coefficients keep growing
      while (t < 1e12 && theta_new.lpNorm<Eigen::Infinity>() <= divergence_bound) {
        const Eigen::VectorXd cand = res.theta + 2.0 * t * step;
        const double ll_cand = objective(cand);
        if (ll_cand < ll_new) break;
        t *= 2.0;
        theta_new = cand;
        ll_new = ll_cand;
      }
    }
    const double improvement = ll_new - ll;
    if (improvement >= 0.0) {
      res.theta = theta_new;
      ll = ll_new;
    }
    if (res.theta.lpNorm<Eigen::Infinity>() > divergence_bound && improvement >= 0.0) {
      res.diverged = true;
      break;
    }
    if (grad.lpNorm<Eigen::Infinity>() < 1e-8 * (1.0 + std::abs(ll)) ||
        std::abs(improvement) < 1e-12 * (1.0 + std::abs(ll))) {
      res.converged = true;
      break;
    }
  }
  res.loglik = ll;
  return res;
}

// Same idea for the multinomial likelihood with baseline class C-1; theta is
// the column-stacked p x (C-1) coefficient block.
inline NewtonResult multinomial_mle(const Eigen::MatrixXd& X, const Eigen::VectorXi& classes,
                                    int n_classes, int max_iter = 200,
                                    double divergence_bound = 1e4, double ridge = 0.0) {
  const Eigen::Index p = X.cols();
  const Eigen::Index cm1 = n_classes - 1;
  NewtonResult res;
  Eigen::MatrixXd beta = Eigen::MatrixXd::Zero(p, cm1);
  auto objective = [&](const Eigen::MatrixXd& b) {
    return multinomial_loglik(X, classes, n_classes, b) - 0.5 * ridge * b.squaredNorm();
  };
  double ll = objective(beta);
  for (int it = 0; it < max_iter; ++it) {
    res.iterations = it + 1;
    double max_grad = 0.0;
    double improvement_total = 0.0;
    // block coordinate Newton over classes: each block is a logistic problem
    // against the remaining classes' offset
    for (Eigen::Index c = 0; c < cm1; ++c) {
      const Eigen::MatrixXd eta = X * beta;
      Eigen::VectorXd prob(X.rows()), w(X.rows()), z(X.rows());
      for (Eigen::Index i = 0; i < X.rows(); ++i) {
        double mx = 0.0;
        for (Eigen::Index l = 0; l < cm1; ++l) mx = std::max(mx, eta(i, l));
        double denom = std::exp(-mx);
        for (Eigen::Index l = 0; l < cm1; ++l) denom += std::exp(eta(i, l) - mx);
        prob[i] = std::exp(eta(i, c) - mx) / denom;
        w[i] = std::max(prob[i] * (1.0 - prob[i]), 1e-10);
        z[i] = (classes[i] == c ? 1.0 : 0.0) - prob[i];
      }
      Eigen::VectorXd grad = X.transpose() * z - ridge * beta.col(c);
      max_grad = std::max(max_grad, grad.lpNorm<Eigen::Infinity>());
      Eigen::MatrixXd H = X.transpose() * w.asDiagonal() * X;
      H.diagonal().array() += ridge + 1e-10;
      const Eigen::VectorXd step = H.ldlt().solve(grad);

      double t = 1.0;
      Eigen::MatrixXd cand = beta;
      cand.col(c) += step;
      double ll_new = objective(cand);
      if (ll_new < ll - 1e-12) {
        for (int h = 0; h < 40 && ll_new < ll - 1e-12; ++h) {
          t *= 0.5;
          cand = beta;
          cand.col(c) += t * step;
          ll_new = objective(cand);
        }
      } else {
        // ties count as still improving (see logistic_mle)
        while (t < 1e12 && cand.lpNorm<Eigen::Infinity>() <= divergence_bound) {
          Eigen::MatrixXd cand2 = beta;
          cand2.col(c) += 2.0 * t * step;
          const double ll2 = objective(cand2);
          if (ll2 < ll_new) break;
          t *= 2.0;
          cand = cand2;
          ll_new = ll2;
        }
      }
      if (ll_new >= ll) {
        improvement_total += ll_new - ll;
        beta = cand;
        ll = ll_new;
      }
    }
    if (beta.lpNorm<Eigen::Infinity>() > divergence_bound && improvement_total >= 0.0) {
      res.diverged = true;
      break;
    }
    if (max_grad < 1e-8 * (1.0 + std::abs(ll)) ||
        std::abs(improvement_total) < 1e-12 * (1.0 + std::abs(ll))) {
      res.converged = true;
      break;
    }
  }
  res.theta = Eigen::Map<Eigen::VectorXd>(beta.data(), p * cm1);
  res.loglik = ll;
  return res;
}

}  // namespace fusionlasso
