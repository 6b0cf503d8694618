#include <catch2/catch_amalgamated.hpp>

#include "fusionlasso/calibrate.hpp"
#include "fusionlasso/simulate.hpp"
#include "helpers.hpp"

using namespace fusionlasso;

namespace {

ConstraintSet agnostic_cset(int p) {
  StructureGraph g;
  g.p = p;
  for (int i = 0; i < p; ++i) {
    for (int j = i + 1; j < p; ++j) g.edges.push_back({i, j});
  }
  return compile_constraints(g);
}

ConstraintSet chain_cset(int p) {
  StructureGraph g;
  g.p = p;
  for (int i = 0; i + 1 < p; ++i) g.edges.push_back({i, i + 1});
  return compile_constraints(g);
}

OutcomeView linear_outcome(const Eigen::VectorXd& y) {
  OutcomeView v;
  v.values = y;
  v.n_classes = 2;
  return v;
}

// one-hot groups design with per-group effects
struct GroupData {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
};

GroupData group_data(const Eigen::VectorXd& effects, int per, Rng& rng, double noise = 1.0) {
  const int g = static_cast<int>(effects.size());
  const int n = g * per;
  GroupData d;
  d.X = Eigen::MatrixXd::Zero(n, g);
  d.y.resize(n);
  for (int i = 0; i < n; ++i) {
    d.X(i, i % g) = 1.0;
    d.y[i] = effects[i % g] + noise * rng.normal();
  }
  return d;
}

}  // namespace

TEST_CASE("df counts free directions after binding") {
  const ConstraintSet ag = agnostic_cset(4);
  EmSolution sol;
  sol.binding_set = {};
  REQUIRE(df_estimate(sol, ag) == Catch::Approx(4.0));

  // fully fused agnostic structure: df = 1
  for (int k = 0; k < ag.k_linear(); ++k) sol.binding_set.push_back(k);
  REQUIRE(df_estimate(sol, ag) == Catch::Approx(1.0));

  // chain on p = 3 with one binding edge: df = 2
  const ConstraintSet ch = chain_cset(3);
  sol.binding_set = {0};
  REQUIRE(df_estimate(sol, ch) == Catch::Approx(2.0));
}

TEST_CASE("anchored hyperprior has mean (lambda*)^2") {
  auto [a1, b1] = anchor_prior(1.0);
  REQUIRE(a1 == Catch::Approx(2.0));
  REQUIRE(b1 == Catch::Approx(2.0));
  auto [a3, b3] = anchor_prior(3.0);
  REQUIRE(a3 == Catch::Approx(2.0));
  REQUIRE(b3 == Catch::Approx(2.0 / 9.0));
  REQUIRE(a3 / b3 == Catch::Approx(9.0));
  REQUIRE_THROWS_AS(anchor_prior(0.0), std::invalid_argument);

  // Monte Carlo check of the mean property
  Rng rng(17);
  const int n = 1000000;
  std::vector<double> draws;
  draws.reserve(n);
  for (int i = 0; i < n; ++i) draws.push_back(rng.gamma(a3, b3));
  REQUIRE(std::abs(testutil::mean(draws) - 9.0) < 3.0 * testutil::se_of_mean(draws));
}

TEST_CASE("aic grid prefers full fusion on null data") {
  Rng rng(5);
  Eigen::VectorXd effects = Eigen::VectorXd::Constant(5, 0.7);  // all effects equal
  const GroupData d = group_data(effects, 30, rng);
  GridSpec grid;
  grid.points = 25;
  const CalibrationResult cal = aic_grid(d.X, linear_outcome(d.y), agnostic_cset(5),
                                         Family::linear, grid, {}, false);
  // lambda* sits at the grid maximum and df collapses to the limiting case
  REQUIRE(cal.lambda_star == Catch::Approx(cal.grid.back().lambda));
  REQUIRE(cal.best.df == Catch::Approx(1.0));
  REQUIRE(cal.grid.size() == 25);
}

TEST_CASE("aic grid finds a small df on strong two-group data") {
  Rng rng(9);
  Eigen::VectorXd effects(6);
  effects << -1.0, -1.0, -1.0, 1.0, 1.0, 1.0;
  const GroupData d = group_data(effects, 40, rng);
  GridSpec grid;
  grid.points = 30;
  const CalibrationResult cal = aic_grid(d.X, linear_outcome(d.y), agnostic_cset(6),
                                         Family::linear, grid, {}, false);
  REQUIRE(cal.best.df <= 3.0);
  REQUIRE(cal.best.df >= 2.0);
  // the two recovered values straddle the truth
  REQUIRE(cal.best.beta.minCoeff() < -0.5);
  REQUIRE(cal.best.beta.maxCoeff() > 0.5);
}

TEST_CASE("grids need at least two points") {
  GridSpec grid;
  grid.points = 1;
  REQUIRE_THROWS_AS(grid.make(1.0), std::invalid_argument);
}

TEST_CASE("lambda_star attains the minimum aic on the grid") {
  Rng rng(23);
  Eigen::VectorXd effects(4);
  effects << 0.0, 0.0, 1.0, 1.0;
  const GroupData d = group_data(effects, 25, rng);
  GridSpec grid;
  grid.points = 20;
  const CalibrationResult cal = aic_grid(d.X, linear_outcome(d.y), agnostic_cset(4),
                                         Family::linear, grid, {}, false);
  double min_aic = std::numeric_limits<double>::infinity();
  for (const auto& pt : cal.grid) {
    if (std::isfinite(pt.aic)) min_aic = std::min(min_aic, pt.aic);
  }
  REQUIRE(cal.best.aic <= min_aic + 1e-6 * (1.0 + std::abs(min_aic)));
  // grid lambdas strictly increasing
  for (std::size_t i = 1; i < cal.grid.size(); ++i) {
    REQUIRE(cal.grid[i].lambda > cal.grid[i - 1].lambda);
  }
}

TEST_CASE("df is integer-valued and mostly monotone along the grid") {
  Rng rng(31);
  int monotone_grids = 0;
  const int trials = 20;
  for (int t = 0; t < trials; ++t) {
    Eigen::VectorXd effects(5);
    for (int j = 0; j < 5; ++j) effects[j] = rng.normal();
    const GroupData d = group_data(effects, 20, rng);
    GridSpec grid;
    grid.points = 15;
    const CalibrationResult cal = aic_grid(d.X, linear_outcome(d.y), agnostic_cset(5),
                                           Family::linear, grid, {}, false);
    bool monotone = true;
    double prev = std::numeric_limits<double>::infinity();
    for (const auto& pt : cal.grid) {
      REQUIRE(pt.df == Catch::Approx(std::round(pt.df)));  // integer for linear rows
      if (pt.df > prev + 1e-9) monotone = false;
      prev = pt.df;
    }
    if (monotone) ++monotone_grids;
  }
  REQUIRE(monotone_grids >= 19);  // near-ties may flip on rare grids
}

TEST_CASE("waic is zero-variance-penalty for degenerate draws") {
  Rng rng(3);
  const int n = 20, p = 2;
  Eigen::MatrixXd X(n, p);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = rng.normal();
    y[i] = 0.3 * X(i, 1) + rng.normal();
  }
  PosteriorDraws draws;
  draws.family = Family::linear;
  draws.labels = {"a", "b"};
  ChainDraws c;
  c.beta = Eigen::MatrixXd::Zero(150, p);
  c.beta.col(1).setConstant(0.3);
  c.lambda2 = Eigen::VectorXd::Ones(150);
  c.sigma2 = Eigen::VectorXd::Ones(150);
  draws.chains.push_back(c);

  const double w = waic(draws, X, linear_outcome(y), Family::linear);
  // identical draws: p_waic = 0, so WAIC = -2 lppd exactly
  double lppd = 0.0;
  for (int i = 0; i < n; ++i) {
    const double resid = y[i] - 0.3 * X(i, 1);
    lppd += -0.5 * std::log(2.0 * kPi) - 0.5 * resid * resid;
  }
  REQUIRE(w == Catch::Approx(-2.0 * lppd).epsilon(1e-10));

  ChainDraws tiny = c;
  tiny.beta.conservativeResize(30, p);
  tiny.lambda2.conservativeResize(30);
  tiny.sigma2.conservativeResize(30);
  PosteriorDraws too_few;
  too_few.family = Family::linear;
  too_few.labels = draws.labels;
  too_few.chains.push_back(tiny);
  REQUIRE_THROWS_AS(waic(too_few, X, linear_outcome(y), Family::linear),
                    std::invalid_argument);
}

TEST_CASE("kfold cv: perfect fits, constant predictors, and LOO") {
  Rng rng(7);
  const int n = 30;

  // perfect linear fit with zero noise
  {
    Eigen::MatrixXd X(n, 2);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
      X(i, 0) = 1.0;
      X(i, 1) = rng.normal();
      y[i] = 2.0 - X(i, 1);
    }
    ConstraintSet cs;
    cs.p = 2;
    GridSpec grid;
    grid.points = 5;
    const CvResult cv = kfold_cv(X, linear_outcome(y), cs, Family::linear, 5, grid, 1);
    REQUIRE(cv.rmse < 1e-4);
  }

  // constant predictor with a binary outcome at rate q: rmse ~ sqrt(q(1-q))
  {
    const int nn = 400;
    Eigen::MatrixXd X = Eigen::MatrixXd::Ones(nn, 1);
    Eigen::VectorXd y(nn);
    const double q = 0.3;
    for (int i = 0; i < nn; ++i) y[i] = rng.uniform() < q ? 1.0 : 0.0;
    ConstraintSet cs;
    cs.p = 1;
    GridSpec grid;
    grid.points = 4;
    const CvResult cv = kfold_cv(X, linear_outcome(y), cs, Family::logistic, 8, grid, 2);
    REQUIRE(cv.rmse == Catch::Approx(std::sqrt(q * (1.0 - q))).margin(0.05));
  }

  // leave-one-out on a small linear dataset matches the direct computation
  {
    Eigen::MatrixXd X(n, 3);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
      X(i, 0) = 1.0;
      X(i, 1) = rng.normal();
      X(i, 2) = rng.normal();
      y[i] = 1.0 + X(i, 1) - 0.5 * X(i, 2) + 0.3 * rng.normal();
    }
    const ConstraintSet cs = chain_cset(3);
    GridSpec grid;
    grid.points = 6;
    const CvResult cv = kfold_cv(X, linear_outcome(y), cs, Family::linear, n, grid, 5);

    // brute-force LOO oracle: refit on each leave-one-out training set
    double sq = 0.0;
    for (int holdout = 0; holdout < n; ++holdout) {
      Eigen::MatrixXd Xtr(n - 1, 3);
      Eigen::VectorXd ytr(n - 1);
      int r = 0;
      for (int i = 0; i < n; ++i) {
        if (i == holdout) continue;
        Xtr.row(r) = X.row(i);
        ytr[r] = y[i];
        ++r;
      }
      const CalibrationResult cal = aic_grid(Xtr, linear_outcome(ytr), cs, Family::linear,
                                             grid, {}, false);
      const double pred = X.row(holdout).dot(cal.best.beta);
      sq += (y[holdout] - pred) * (y[holdout] - pred);
    }
    REQUIRE(cv.rmse == Catch::Approx(std::sqrt(sq / n)).epsilon(1e-9));

    REQUIRE_THROWS_AS(kfold_cv(X, linear_outcome(y), cs, Family::linear, 1, grid, 5),
                      std::invalid_argument);
  }
}

TEST_CASE("fold assignment is seed-deterministic") {
  Rng rng(13);
  const int n = 60;
  Eigen::MatrixXd X(n, 2);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 1.0;
    X(i, 1) = rng.normal();
    y[i] = X(i, 1) + rng.normal();
  }
  ConstraintSet cs;
  cs.p = 2;
  GridSpec grid;
  grid.points = 4;
  const CvResult a = kfold_cv(X, linear_outcome(y), cs, Family::linear, 6, grid, 99);
  const CvResult b = kfold_cv(X, linear_outcome(y), cs, Family::linear, 6, grid, 99);
  const CvResult c = kfold_cv(X, linear_outcome(y), cs, Family::linear, 6, grid, 100);
  REQUIRE(a.rmse == b.rmse);
  REQUIRE(a.rmse != c.rmse);
}
