#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "fusionlasso/distributions.hpp"

// Shared test oracles: Kolmogorov-Smirnov machinery, quadrature CDFs, the
// truncated-series Polya-Gamma reference, and batch-means standard errors.

namespace testutil {

inline double ks_statistic(std::vector<double> sample, const std::function<double(double)>& cdf) {
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = cdf(sample[i]);
    d = std::max(d, std::abs(f - static_cast<double>(i) / n));
    d = std::max(d, std::abs(static_cast<double>(i + 1) / n - f));
  }
  return d;
}

// asymptotic Kolmogorov distribution tail
inline double ks_pvalue(std::size_t n, double d) {
  const double x = (std::sqrt(static_cast<double>(n)) + 0.12 + 0.11 / std::sqrt(static_cast<double>(n))) * d;
  double p = 0.0;
  for (int j = 1; j <= 100; ++j) {
    p += 2.0 * (j % 2 == 1 ? 1.0 : -1.0) * std::exp(-2.0 * j * j * x * x);
  }
  return std::clamp(p, 0.0, 1.0);
}

inline double ks_test_pvalue(const std::vector<double>& sample,
                             const std::function<double(double)>& cdf) {
  return ks_pvalue(sample.size(), ks_statistic(sample, cdf));
}

// CDF by Simpson quadrature of a density on [lo, hi]; returns an
// interpolating callable over a fine grid.
inline std::function<double(double)> quadrature_cdf(const std::function<double(double)>& pdf,
                                                    double lo, double hi, int cells = 20000) {
  const double h = (hi - lo) / cells;
  std::vector<double> cum(static_cast<std::size_t>(cells) + 1, 0.0);
  for (int i = 0; i < cells; ++i) {
    const double a = lo + i * h;
    const double s = h / 6.0 * (pdf(a) + 4.0 * pdf(a + 0.5 * h) + pdf(a + h));
    cum[static_cast<std::size_t>(i) + 1] = cum[static_cast<std::size_t>(i)] + s;
  }
  const double total = cum.back();
  return [=](double x) {
    if (x <= lo) return 0.0;
    if (x >= hi) return 1.0;
    const double t = (x - lo) / h;
    const auto idx = static_cast<std::size_t>(t);
    const double frac = t - static_cast<double>(idx);
    const double v = cum[idx] + frac * (cum[idx + 1] - cum[idx]);
    return v / total;
  };
}

// E[PG(1,c)] from the infinite-convolution series, truncated with an integral
// tail correction: (1/2pi^2) sum_k 1/((k-1/2)^2 + c^2/(4pi^2)).
inline double pg_series_mean(double c, int terms = 200) {
  const double a = c * c / (4.0 * fusionlasso::kPi * fusionlasso::kPi);
  double s = 0.0;
  for (int k = 1; k <= terms; ++k) {
    const double km = k - 0.5;
    s += 1.0 / (km * km + a);
  }
  // integral tail over k > terms
  const double t = terms + 0.5;
  if (a > 0.0) {
    s += (fusionlasso::kPi / 2.0 - std::atan(t / std::sqrt(a))) / std::sqrt(a);
  } else {
    s += 1.0 / t;
  }
  return s / (2.0 * fusionlasso::kPi * fusionlasso::kPi);
}

// one draw from the truncated series of exponentials (the sampling oracle)
inline double pg_series_draw(double c, fusionlasso::Rng& rng, int terms = 200) {
  const double a = c * c / (4.0 * fusionlasso::kPi * fusionlasso::kPi);
  double s = 0.0;
  for (int k = 1; k <= terms; ++k) {
    const double km = k - 0.5;
    s += rng.exponential(1.0) / (km * km + a);
  }
  double tail = 0.0;
  const double t = terms + 0.5;
  if (a > 0.0) {
    tail = (fusionlasso::kPi / 2.0 - std::atan(t / std::sqrt(a))) / std::sqrt(a);
  } else {
    tail = 1.0 / t;
  }
  return (s + tail) / (2.0 * fusionlasso::kPi * fusionlasso::kPi);
}

inline double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double sample_sd(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

inline double se_of_mean(const std::vector<double>& v) {
  return sample_sd(v) / std::sqrt(static_cast<double>(v.size()));
}

// batch-means standard error for autocorrelated streams
inline double batch_means_se(const std::vector<double>& v, int batches = 50) {
  const std::size_t n = v.size();
  const std::size_t len = n / static_cast<std::size_t>(batches);
  std::vector<double> bm;
  for (int b = 0; b < batches; ++b) {
    double s = 0.0;
    for (std::size_t i = 0; i < len; ++i) s += v[static_cast<std::size_t>(b) * len + i];
    bm.push_back(s / static_cast<double>(len));
  }
  return sample_sd(bm) / std::sqrt(static_cast<double>(batches));
}

inline double laplace_cdf(double x, double rate) {
  return x < 0.0 ? 0.5 * std::exp(rate * x) : 1.0 - 0.5 * std::exp(-rate * x);
}

}  // namespace testutil
