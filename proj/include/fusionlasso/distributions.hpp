#pragma once

#include <cmath>
#include <stdexcept>

#include "fusionlasso/rng.hpp"

// Sampling kernels used by the Gibbs machinery: inverse-Gaussian draws for the
// penalty augmentation and Polya-Gamma draws for binomial/multinomial
// likelihoods.

namespace fusionlasso {

inline constexpr double kPi = 3.14159265358979323846;

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Inverse Gaussian with density sqrt(lam/2pi) x^{-3/2} exp(-lam(x-mu)^2/(2 mu^2 x)).
// Michael-Schucany-Haas: take the smaller root of the quadratic in x implied by
// a squared standard normal, then flip to mu^2/x with the complementary
// probability.  The root is evaluated in conjugate form, which stays accurate
// for extreme mu/lam ratios.
inline double draw_inverse_gaussian(double mu, double lam, Rng& rng) {
  if (!(mu > 0.0) || !(lam > 0.0) || !std::isfinite(mu) || !std::isfinite(lam)) {
    throw std::invalid_argument("draw_inverse_gaussian: parameters must be positive finite");
  }
  const double v = rng.normal();
  const double w = mu * v * v / lam;
  const double x = mu / (1.0 + 0.5 * w + std::sqrt(w + 0.25 * w * w));
  if (rng.uniform() <= mu / (mu + x)) return x;
  return mu * mu / x;
}

inline double inverse_gaussian_pdf(double x, double mu, double lam) {
  if (x <= 0.0) return 0.0;
  const double d = x - mu;
  return std::sqrt(lam / (2.0 * kPi * x * x * x)) * std::exp(-lam * d * d / (2.0 * mu * mu * x));
}

// mean 0, P(|z| > t) = exp(-rate t)
inline double draw_laplace(double rate, Rng& rng) {
  const double e = rng.exponential(rate);
  return rng.uniform() < 0.5 ? -e : e;
}

// E[omega] for omega ~ PG(1, c): tanh(c/2)/(2c), with the c -> 0 limit 1/4.
inline double polya_gamma_mean(double c) {
  const double a = std::abs(c);
  if (a < 1e-4) return 0.25 - c * c / 48.0;
  return std::tanh(0.5 * a) / (2.0 * a);
}

namespace detail {

inline constexpr double kPgTrunc = 0.64;

// Piecewise coefficients of the alternating series for the J*(1,0) density.
inline double pg_a_coef(int n, double x) {
  const double dn = n + 0.5;
  if (x > kPgTrunc) {
    return kPi * dn * std::exp(-0.5 * dn * dn * kPi * kPi * x);
  }
  return kPi * dn * std::pow(2.0 / (kPi * x), 1.5) * std::exp(-2.0 * dn * dn / x);
}

// Probability of proposing from the exponential right tail rather than the
// truncated inverse-Gaussian left piece.
inline double pg_mass_texpon(double z) {
  const double t = kPgTrunc;
  const double fz = 0.125 * kPi * kPi + 0.5 * z * z;
  const double b = std::sqrt(1.0 / t) * (t * z - 1.0);
  const double a = -std::sqrt(1.0 / t) * (t * z + 1.0);
  const double x0 = std::log(fz) + fz * t;
  const double xb = x0 - z + std::log(normal_cdf(b));
  const double xa = x0 + z + std::log(normal_cdf(a));
  const double qdivp = 4.0 / kPi * (std::exp(xb) + std::exp(xa));
  return 1.0 / (1.0 + qdivp);
}

// Inverse Gaussian IG(1/z, 1) truncated to (0, kPgTrunc).
inline double pg_rtigauss(double z, Rng& rng) {
  const double t = kPgTrunc;
  double x = t + 1.0;
  if (z < 1.0 / t) {
    // mu > t: rejection from the one-sided stable proposal; z = 0 accepts always
    double alpha = 0.0;
    do {
      double e1, e2;
      do {
        e1 = rng.exponential(1.0);
        e2 = rng.exponential(1.0);
      } while (e1 * e1 > 2.0 * e2 / t);
      x = t / ((1.0 + t * e1) * (1.0 + t * e1));
      alpha = std::exp(-0.5 * z * z * x);
    } while (rng.uniform() > alpha);
  } else {
    const double mu = 1.0 / z;
    while (x > t) {
      const double v = rng.normal();
      const double w = mu * v * v;
      x = mu / (1.0 + 0.5 * w + std::sqrt(w + 0.25 * w * w));
      if (rng.uniform() > mu / (mu + x)) x = mu * mu / x;
    }
  }
  return x;
}

}  // namespace detail

// Exact PG(1, c) sampler (Devroye alternating-series method as adapted by
// Polson, Scott and Windle).  Draws X ~ J*(1, |c|/2) and returns X/4.
inline double draw_polya_gamma(double c, Rng& rng) {
  if (!std::isfinite(c)) throw std::invalid_argument("draw_polya_gamma: non-finite tilt");
  const double z = 0.5 * std::abs(c);
  const double fz = 0.125 * kPi * kPi + 0.5 * z * z;
  const double p_right = detail::pg_mass_texpon(z);
  while (true) {
    double x;
    if (rng.uniform() < p_right) {
      x = detail::kPgTrunc + rng.exponential(1.0) / fz;
    } else {
      x = detail::pg_rtigauss(z, rng);
    }
    // squeeze on the partial sums of the alternating series
    double s = detail::pg_a_coef(0, x);
    const double y = rng.uniform() * s;
    int n = 0;
    while (true) {
      ++n;
      if (n & 1) {
        s -= detail::pg_a_coef(n, x);
        if (y <= s) return 0.25 * x;
      } else {
        s += detail::pg_a_coef(n, x);
        if (y > s) break;
      }
    }
  }
}

}  // namespace fusionlasso
