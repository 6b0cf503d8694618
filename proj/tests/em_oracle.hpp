#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>

#include "fusionlasso/em.hpp"
#include "fusionlasso/rng.hpp"
#include "fusionlasso/structure.hpp"

// Independent brute-force maximizer of the linear-family penalized
// log-posterior with profiled sigma.  Works in the concave parameterization
// (b, phi) = (beta/sigma, 1/sigma), where the objective
//   F(b, phi) = (n+m) ln phi - |phi y - X b|^2 / 2 - lambda * pen(b)
// equals the EM objective at (beta, sigma) = (b/phi, 1/phi).  The maximizer is
// found two ways: exhaustive enumeration of binding patterns and penalty
// signs, each reduced to a smooth concave fit solved by exact alternating
// maximization, plus projected subgradient ascent from random starts as a
// cross-check.  Nothing here shares code with the EM implementation path.

namespace testutil {

struct OracleProblem {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  fusionlasso::ConstraintSet cs;
  double lambda = 1.0;
  int m_rank = 0;  // rank of the stacked penalty

  double n_plus_m() const { return static_cast<double>(X.rows()) + m_rank; }

  double penalty(const Eigen::VectorXd& b) const {
    double pen = 0.0;
    for (const auto& row : cs.rows) pen += std::abs(row.dot(b));
    return pen;
  }

  double value_bphi(const Eigen::VectorXd& b, double phi) const {
    return n_plus_m() * std::log(phi) - 0.5 * (phi * y - X * b).squaredNorm() -
           lambda * penalty(b);
  }

  // the EM-side objective at (beta, sigma^2) for direct comparison
  double value_beta_sigma(const Eigen::VectorXd& beta, double sigma2) const {
    const double ssr = (y - X * beta).squaredNorm();
    return -0.5 * n_plus_m() * std::log(sigma2) - ssr / (2.0 * sigma2) -
           lambda / std::sqrt(sigma2) * penalty(beta);
  }
};

inline OracleProblem make_oracle_problem(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                         const fusionlasso::ConstraintSet& cs, double lambda) {
  OracleProblem prob{X, y, cs, lambda, 0};
  Eigen::MatrixXd dbar(cs.rows.size(), cs.p);
  for (std::size_t k = 0; k < cs.rows.size(); ++k) {
    dbar.row(static_cast<Eigen::Index>(k)) = cs.rows[k].dense(cs.p).transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(dbar);
  const double tol = std::max(dbar.rows(), dbar.cols()) *
                     std::numeric_limits<double>::epsilon() * svd.singularValues()[0];
  prob.m_rank = static_cast<int>((svd.singularValues().array() > tol).count());
  return prob;
}

namespace detail {

// orthonormal kernel of the rows indexed by `pattern`
inline Eigen::MatrixXd pattern_nullspace(const OracleProblem& prob,
                                         const std::vector<int>& pattern) {
  const int p = prob.cs.p;
  if (pattern.empty()) return Eigen::MatrixXd::Identity(p, p);
  Eigen::MatrixXd rows(pattern.size(), p);
  for (std::size_t i = 0; i < pattern.size(); ++i) {
    rows.row(static_cast<Eigen::Index>(i)) =
        prob.cs.rows[static_cast<std::size_t>(pattern[i])].dense(p).transpose();
  }
  Eigen::FullPivLU<Eigen::MatrixXd> lu(rows);
  lu.setThreshold(1e-10);
  Eigen::MatrixXd kernel = lu.kernel();
  if (kernel.cols() == 1 && kernel.isZero(0.0)) return Eigen::MatrixXd(p, 0);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(kernel);
  return Eigen::MatrixXd(qr.householderQ()) .leftCols(kernel.cols());
}

// smooth concave fit for one (binding pattern, sign vector) combination via
// exact alternating maximization over gamma (b = Z gamma) and phi
struct SmoothFit {
  Eigen::VectorXd b;
  double phi = 1.0;
  double value = -std::numeric_limits<double>::infinity();
  bool consistent = false;
};

inline SmoothFit solve_pattern_signs(const OracleProblem& prob, const std::vector<int>& binding,
                                     const std::vector<int>& free_rows,
                                     const std::vector<double>& signs) {
  SmoothFit fit;
  const Eigen::MatrixXd Z = pattern_nullspace(prob, binding);
  const Eigen::Index d = Z.cols();
  const double yty = prob.y.squaredNorm();
  const double nm = prob.n_plus_m();

  // linear part of the penalty under the fixed signs
  Eigen::VectorXd c = Eigen::VectorXd::Zero(prob.cs.p);
  for (std::size_t i = 0; i < free_rows.size(); ++i) {
    c += prob.lambda * signs[i] *
         prob.cs.rows[static_cast<std::size_t>(free_rows[i])].dense(prob.cs.p);
  }

  double phi = 1.0;
  Eigen::VectorXd gamma = Eigen::VectorXd::Zero(d);
  if (d > 0) {
    Eigen::MatrixXd A = Z.transpose() * prob.X.transpose() * prob.X * Z;
    A.diagonal().array() += 1e-12;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
    const Eigen::VectorXd Xty_z = Z.transpose() * prob.X.transpose() * prob.y;
    const Eigen::VectorXd c_z = Z.transpose() * c;
    for (int it = 0; it < 400; ++it) {
      gamma = ldlt.solve(phi * Xty_z - c_z);
      const double xb = prob.y.dot(prob.X * (Z * gamma));
      const double phi_new = (xb + std::sqrt(xb * xb + 4.0 * nm * yty)) / (2.0 * yty);
      if (std::abs(phi_new - phi) < 1e-14 * (1.0 + phi)) {
        phi = phi_new;
        break;
      }
      phi = phi_new;
    }
    gamma = ldlt.solve(phi * Xty_z - c_z);
  } else {
    phi = std::sqrt(nm / yty);
  }

  fit.b = d > 0 ? Eigen::VectorXd(Z * gamma) : Eigen::VectorXd::Zero(prob.cs.p);
  fit.phi = phi;

  // the combination is admissible only if the solution signs agree
  fit.consistent = true;
  for (std::size_t i = 0; i < free_rows.size(); ++i) {
    const double g = prob.cs.rows[static_cast<std::size_t>(free_rows[i])].dot(fit.b);
    if (std::abs(g) > 1e-9 && g * signs[i] < 0.0) {
      fit.consistent = false;
      break;
    }
  }
  if (fit.consistent) fit.value = prob.value_bphi(fit.b, fit.phi);
  return fit;
}

}  // namespace detail

// exhaustive enumeration over per-row states {binding, +, -}
inline double oracle_enumerate(const OracleProblem& prob) {
  const int K = prob.cs.k_linear();
  double best = -std::numeric_limits<double>::infinity();
  std::vector<int> state(static_cast<std::size_t>(K), 0);  // 0 bind, 1 plus, 2 minus
  const long total = static_cast<long>(std::pow(3.0, K));
  for (long code = 0; code < total; ++code) {
    long rem = code;
    std::vector<int> binding, free_rows;
    std::vector<double> signs;
    for (int k = 0; k < K; ++k) {
      const int s = static_cast<int>(rem % 3);
      rem /= 3;
      if (s == 0) {
        binding.push_back(k);
      } else {
        free_rows.push_back(k);
        signs.push_back(s == 1 ? 1.0 : -1.0);
      }
    }
    const detail::SmoothFit fit = detail::solve_pattern_signs(prob, binding, free_rows, signs);
    if (fit.consistent) best = std::max(best, fit.value);
  }
  return best;
}

// projected subgradient ascent from random starts (coarse cross-check)
inline double oracle_subgradient(const OracleProblem& prob, int starts = 100, int iters = 4000,
                                 std::uint64_t seed = 1234) {
  fusionlasso::Rng rng(seed);
  const int p = prob.cs.p;
  double best = -std::numeric_limits<double>::infinity();
  for (int s = 0; s < starts; ++s) {
    Eigen::VectorXd b(p);
    for (int j = 0; j < p; ++j) b[j] = 2.0 * rng.normal();
    double phi = std::exp(rng.normal());
    for (int it = 0; it < iters; ++it) {
      // subgradient of F at (b, phi)
      const Eigen::VectorXd resid = phi * prob.y - prob.X * b;
      Eigen::VectorXd gb = prob.X.transpose() * resid;
      for (const auto& row : prob.cs.rows) {
        const double g = row.dot(b);
        const double sign = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
        gb -= prob.lambda * sign * row.dense(p);
      }
      const double gphi = prob.n_plus_m() / phi - prob.y.dot(resid);
      const double norm = std::sqrt(gb.squaredNorm() + gphi * gphi) + 1e-12;
      const double step = 0.5 / std::sqrt(static_cast<double>(it) + 1.0);
      b += step * gb / norm;
      phi = std::max(phi + step * gphi / norm, 1e-8);
      best = std::max(best, prob.value_bphi(b, phi));
    }
  }
  return best;
}

}  // namespace testutil
