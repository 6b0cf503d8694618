#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/fisher_f.hpp>
#include <nlohmann/json.hpp>

#include "fusionlasso/gibbs.hpp"

namespace fusionlasso {

struct GelmanRubinResult {
  double point = 1.0;
  double upper = 1.0;  // 97.5% upper confidence limit
  bool degenerate = false;
};

namespace detail {

inline double sample_mean(const Eigen::VectorXd& v) { return v.mean(); }

inline double sample_var(const Eigen::VectorXd& v) {
  const double m = v.mean();
  return (v.array() - m).square().sum() / static_cast<double>(v.size() - 1);
}

inline double sample_cov(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double ma = a.mean(), mb = b.mean();
  return ((a.array() - ma) * (b.array() - mb)).sum() / static_cast<double>(a.size() - 1);
}

}  // namespace detail

// Potential scale reduction factor with the degrees-of-freedom correction and
// sampling-variance upper limit.  With `split` each chain is halved first.
inline GelmanRubinResult gelman_rubin(const std::vector<Eigen::VectorXd>& chains_in,
                                      bool split = true) {
  std::vector<Eigen::VectorXd> chains;
  for (const auto& c : chains_in) {
    if (split) {
      const Eigen::Index half = c.size() / 2;
      if (half < 2) throw std::invalid_argument("gelman_rubin: chains too short to split");
      chains.push_back(c.head(half));
      chains.push_back(c.segment(half, half));
    } else {
      chains.push_back(c);
    }
  }
  const int m = static_cast<int>(chains.size());
  if (m < 2) throw std::invalid_argument("gelman_rubin: need at least 2 chains");
  Eigen::Index n = chains[0].size();
  for (const auto& c : chains) n = std::min(n, c.size());
  if (n < 4) throw std::invalid_argument("gelman_rubin: chains too short");

  Eigen::VectorXd means(m), vars(m), means2(m);
  for (int j = 0; j < m; ++j) {
    const Eigen::VectorXd seg = chains[static_cast<std::size_t>(j)].head(n);
    means[j] = detail::sample_mean(seg);
    vars[j] = detail::sample_var(seg);
    means2[j] = means[j] * means[j];
  }
  const double w = means.size() > 0 ? vars.mean() : 0.0;
  const double b = static_cast<double>(n) * detail::sample_var(means);

  GelmanRubinResult res;
  if (w <= 0.0) {
    // constant chains: report unit PSRF with a degeneracy flag
    res.degenerate = true;
    return res;
  }

  const double dn = static_cast<double>(n);
  const double dm = static_cast<double>(m);
  const double v_hat = (dn - 1.0) / dn * w + (1.0 + 1.0 / dm) * b / dn;

  const double var_w = detail::sample_var(vars) / dm;
  const double var_b = 2.0 * b * b / (dm - 1.0);
  const double cov_wb = dn / dm *
                        (detail::sample_cov(vars, means2) -
                         2.0 * means.mean() * detail::sample_cov(vars, means));
  const double var_v = ((dn - 1.0) * (dn - 1.0) * var_w +
                        std::pow(1.0 + 1.0 / dm, 2) * var_b +
                        2.0 * (dn - 1.0) * (1.0 + 1.0 / dm) * cov_wb) /
                       (dn * dn);
  const double df = var_v > 0.0 ? 2.0 * v_hat * v_hat / var_v : 1e6;
  const double df_adj = (df + 3.0) / (df + 1.0);

  const double r2_fixed = (dn - 1.0) / dn;
  const double r2_random = (1.0 + 1.0 / dm) / dn * b / w;
  res.point = std::sqrt(df_adj * (r2_fixed + r2_random));

  double upper_factor = 1.0;
  if (var_w > 0.0) {
    const double w_df = 2.0 * w * w / var_w;
    boost::math::fisher_f f(dm - 1.0, std::max(w_df, 1.0));
    upper_factor = boost::math::quantile(f, 0.975);
  }
  res.upper = std::sqrt(df_adj * (r2_fixed + upper_factor * r2_random));
  return res;
}

// Lag-window spectral density at frequency zero (Tukey-Hanning taper over 4%
// of the segment length), used for the Geweke numerical standard errors.
inline double spectral_density_zero(const Eigen::VectorXd& x) {
  const Eigen::Index n = x.size();
  const double mean = x.mean();
  const Eigen::VectorXd c = x.array() - mean;
  const double g0 = c.squaredNorm() / static_cast<double>(n);
  if (g0 <= 0.0) return 0.0;
  const Eigen::Index max_lag = std::max<Eigen::Index>(1, static_cast<Eigen::Index>(0.04 * n));
  double s = g0;
  for (Eigen::Index lag = 1; lag <= max_lag && lag < n; ++lag) {
    const double gl = c.head(n - lag).dot(c.tail(n - lag)) / static_cast<double>(n);
    const double wl = 0.5 * (1.0 + std::cos(kPi * static_cast<double>(lag) /
                                            static_cast<double>(max_lag)));
    s += 2.0 * wl * gl;
  }
  return std::max(s, 1e-12 * g0);
}

// z comparing the first `frac_a` against the last `frac_b` of the chain with
// spectral variance estimates.
inline double geweke_z(const Eigen::VectorXd& chain, double frac_a = 0.1, double frac_b = 0.5) {
  const Eigen::Index n = chain.size();
  if (n < 200) throw std::invalid_argument("geweke: chain length must be >= 200");
  const Eigen::Index na = static_cast<Eigen::Index>(frac_a * n);
  const Eigen::Index nb = static_cast<Eigen::Index>(frac_b * n);
  if (na < 10 || nb < 10) throw std::invalid_argument("geweke: window too small");
  const Eigen::VectorXd a = chain.head(na);
  const Eigen::VectorXd b = chain.tail(nb);
  const double sa = spectral_density_zero(a);
  const double sb = spectral_density_zero(b);
  const double denom = sa / static_cast<double>(na) + sb / static_cast<double>(nb);
  if (denom <= 0.0) throw std::invalid_argument("geweke: zero-variance chain");
  return (a.mean() - b.mean()) / std::sqrt(denom);
}

struct ParameterDiagnostics {
  std::string name;
  double rhat = 1.0;
  double rhat_upper = 1.0;
  double mean_abs_geweke_z = 0.0;
  bool rhat_flag = false;
  bool geweke_flag = false;
  bool degenerate = false;
};

struct DiagnosticsReport {
  std::vector<ParameterDiagnostics> params;
  double rhat_threshold = 1.1;
  double z_threshold = 1.96;
  bool split_rhat = true;
  int flagged() const {
    int f = 0;
    for (const auto& p : params) {
      if (p.rhat_flag || p.geweke_flag) ++f;
    }
    return f;
  }
};

// Per-parameter R-hat and mean |Geweke z| across chains, over beta columns
// plus lambda^2 (and sigma^2 for the linear family).
inline DiagnosticsReport diagnose_draws(const PosteriorDraws& draws, bool split = true,
                                        double rhat_threshold = 1.1, double z_threshold = 1.96) {
  if (draws.chains.size() < 2) throw std::invalid_argument("diagnose: need >= 2 chains");
  DiagnosticsReport rep;
  rep.rhat_threshold = rhat_threshold;
  rep.z_threshold = z_threshold;
  rep.split_rhat = split;

  auto add_param = [&](const std::string& name, auto&& extract) {
    ParameterDiagnostics d;
    d.name = name;
    std::vector<Eigen::VectorXd> chains;
    for (const auto& c : draws.chains) chains.push_back(extract(c));
    const GelmanRubinResult gr = gelman_rubin(chains, split);
    d.rhat = gr.point;
    d.rhat_upper = gr.upper;
    d.degenerate = gr.degenerate;
    double sum_abs_z = 0.0;
    int n_z = 0;
    for (const auto& chain : chains) {
      try {
        sum_abs_z += std::abs(geweke_z(chain));
        ++n_z;
      } catch (const std::invalid_argument&) {
        d.degenerate = true;
      }
    }
    d.mean_abs_geweke_z = n_z > 0 ? sum_abs_z / n_z : 0.0;
    d.rhat_flag = d.rhat > rhat_threshold;
    d.geweke_flag = d.mean_abs_geweke_z > z_threshold;
    rep.params.push_back(std::move(d));
  };

  const int p = draws.n_params();
  for (int j = 0; j < p; ++j) {
    const std::string name = j < static_cast<int>(draws.labels.size())
                                 ? draws.labels[static_cast<std::size_t>(j)]
                                 : "beta" + std::to_string(j);
    add_param(name, [j](const ChainDraws& c) { return Eigen::VectorXd(c.beta.col(j)); });
  }
  add_param("lambda2", [](const ChainDraws& c) { return c.lambda2; });
  if (draws.family == Family::linear && draws.chains[0].sigma2.size() > 0) {
    add_param("sigma2", [](const ChainDraws& c) { return c.sigma2; });
  }
  return rep;
}

inline nlohmann::json diagnostics_to_json(const DiagnosticsReport& rep) {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : rep.params) {
    params.push_back({{"name", p.name},
                      {"rhat", p.rhat},
                      {"rhat_upper", p.rhat_upper},
                      {"mean_abs_geweke_z", p.mean_abs_geweke_z},
                      {"rhat_flag", p.rhat_flag},
                      {"geweke_flag", p.geweke_flag},
                      {"degenerate", p.degenerate}});
  }
  return {{"rhat_threshold", rep.rhat_threshold},
          {"z_threshold", rep.z_threshold},
          {"split_rhat", rep.split_rhat},
          {"flagged", rep.flagged()},
          {"parameters", params}};
}

}  // namespace fusionlasso
