#include <catch2/catch_amalgamated.hpp>

#include "fusionlasso/distributions.hpp"
#include "fusionlasso/rng.hpp"
#include "helpers.hpp"

using namespace fusionlasso;

TEST_CASE("rng gamma matches shape-rate moments") {
  Rng rng(11);
  const int n = 200000;
  std::vector<double> draws;
  draws.reserve(n);
  for (int i = 0; i < n; ++i) draws.push_back(rng.gamma(3.5, 2.0));
  const double m = testutil::mean(draws);
  const double se = testutil::se_of_mean(draws);
  REQUIRE(std::abs(m - 3.5 / 2.0) < 4.0 * se);

  // shape < 1 branch
  draws.clear();
  for (int i = 0; i < n; ++i) draws.push_back(rng.gamma(0.4, 1.0));
  REQUIRE(std::abs(testutil::mean(draws) - 0.4) < 4.0 * testutil::se_of_mean(draws));
}

TEST_CASE("inverse gaussian sample mean is mu") {
  Rng rng(7);
  const int n = 100000;
  std::vector<double> draws;
  draws.reserve(n);
  for (int i = 0; i < n; ++i) draws.push_back(draw_inverse_gaussian(2.0, 4.0, rng));
  const double m = testutil::mean(draws);
  const double se = testutil::se_of_mean(draws);
  REQUIRE(std::abs(m - 2.0) < 3.0 * se);
}

TEST_CASE("inverse gaussian KS against quadrature CDF") {
  Rng rng(19);
  const double mu = 1.3, lam = 2.1;
  std::vector<double> draws;
  for (int i = 0; i < 20000; ++i) draws.push_back(draw_inverse_gaussian(mu, lam, rng));
  auto cdf = testutil::quadrature_cdf(
      [&](double x) { return inverse_gaussian_pdf(x, mu, lam); }, 1e-8, 60.0, 60000);
  const double p = testutil::ks_test_pvalue(draws, cdf);
  REQUIRE(p > 0.01);
}

TEST_CASE("inverse gaussian stays positive and finite for extreme mu") {
  Rng rng(3);
  for (int i = 0; i < 20000; ++i) {
    const double x = draw_inverse_gaussian(1e8, 1.0, rng);
    REQUIRE(x > 0.0);
    REQUIRE(std::isfinite(x));
  }
  REQUIRE_THROWS_AS(draw_inverse_gaussian(-1.0, 1.0, rng), std::invalid_argument);
  REQUIRE_THROWS_AS(draw_inverse_gaussian(1.0, 0.0, rng), std::invalid_argument);
}

TEST_CASE("polya gamma sample means match the truncated-series oracle") {
  // oracle: series mean with 200 terms plus integral tail correction
  for (double c : {0.0, 0.1, 1.0, 5.0}) {
    Rng rng(23 + static_cast<std::uint64_t>(c * 100));
    const int n = 100000;
    std::vector<double> draws;
    draws.reserve(n);
    for (int i = 0; i < n; ++i) draws.push_back(draw_polya_gamma(c, rng));
    const double oracle = testutil::pg_series_mean(c);
    const double se = testutil::se_of_mean(draws);
    INFO("c = " << c << " mean " << testutil::mean(draws) << " oracle " << oracle);
    REQUIRE(std::abs(testutil::mean(draws) - oracle) < 3.0 * se);
  }
}

TEST_CASE("polya gamma closed-form mean agrees with the series") {
  REQUIRE(testutil::pg_series_mean(0.0, 10000) == Catch::Approx(0.25).epsilon(1e-6));
  REQUIRE(testutil::pg_series_mean(1.0, 10000) ==
          Catch::Approx(std::tanh(0.5) / 2.0).epsilon(1e-6));
  REQUIRE(polya_gamma_mean(0.0) == Catch::Approx(0.25));
  REQUIRE(polya_gamma_mean(1.0) == Catch::Approx(std::tanh(0.5) / 2.0));
}

TEST_CASE("polya gamma depends on the tilt only through |c|") {
  Rng a(5), b(5);
  for (int i = 0; i < 1000; ++i) {
    REQUIRE(draw_polya_gamma(1.7, a) == draw_polya_gamma(-1.7, b));
  }
}

TEST_CASE("laplace draws match the target law") {
  Rng rng(31);
  std::vector<double> draws;
  for (int i = 0; i < 20000; ++i) draws.push_back(draw_laplace(2.0, rng));
  const double p = testutil::ks_test_pvalue(
      draws, [](double x) { return testutil::laplace_cdf(x, 2.0); });
  REQUIRE(p > 0.01);
}

TEST_CASE("seed derivation separates streams") {
  REQUIRE(derive_seed(1, 0) != derive_seed(1, 1));
  REQUIRE(derive_seed(1, 0) != derive_seed(2, 0));
  REQUIRE(derive_seed(1, 5) == derive_seed(1, 5));
}
