#include <catch2/catch_amalgamated.hpp>

#include "fusionlasso/propriety.hpp"
#include "fusionlasso/rng.hpp"
#include "fusionlasso/structure.hpp"

using namespace fusionlasso;

namespace {

ConstraintSet identity_rows(int p) {
  ConstraintSet cs;
  cs.p = p;
  for (int i = 0; i < p; ++i) {
    LinearRow row;
    row.pattern = {{i, 1.0}};
    cs.rows.push_back(row);
  }
  return cs;
}

ConstraintSet chain(int p) {
  StructureGraph g;
  g.p = p;
  for (int i = 0; i + 1 < p; ++i) g.edges.push_back({i, i + 1});
  return compile_constraints(g);
}

ConstraintSet agnostic(int p) {
  Cells cells;
  cells.p = p;
  for (int i = 0; i < p; ++i) {
    cells.index.push_back(i);
    cells.labels.push_back("c" + std::to_string(i));
    cells.attrs.push_back({});
  }
  return compile_constraints(build_agnostic(cells));
}

}  // namespace

TEST_CASE("nullspace basis of fusion structures") {
  // chain on p = 3: one-dimensional all-ones direction
  const Eigen::MatrixXd b3 = nullspace_basis(chain(3));
  REQUIRE(b3.cols() == 1);
  REQUIRE(std::abs(b3(0, 0) - b3(1, 0)) < 1e-12);
  REQUIRE(std::abs(b3(1, 0) - b3(2, 0)) < 1e-12);

  // identity rows: trivial nullspace
  REQUIRE(nullspace_basis(identity_rows(4)).cols() == 0);

  // lattice on 6 cells (3x2): connected graph, dimension 1
  Cells cells;
  cells.p = 6;
  for (int t = 0; t < 3; ++t) {
    for (int m = 0; m < 2; ++m) {
      cells.index.push_back(t * 2 + m);
      cells.labels.push_back("c");
      cells.attrs.push_back({{"T", std::to_string(t)}, {"M", std::to_string(m)}});
    }
  }
  const ConstraintSet lat = compile_constraints(build_lattice(cells));
  REQUIRE(rank_dbar(lat) == 5);
  REQUIRE(nullspace_basis(lat).cols() == 1);

  // orthonormality and annihilation
  const Eigen::MatrixXd B = nullspace_basis(chain(5));
  REQUIRE((B.transpose() * B - Eigen::MatrixXd::Identity(B.cols(), B.cols())).norm() < 1e-12);
  REQUIRE((chain(5).dense_dbar() * B).norm() < 1e-12);
}

TEST_CASE("prior propriety follows the rank of Dbar") {
  REQUIRE(check_prior(identity_rows(4)));
  REQUIRE_FALSE(check_prior(chain(4)));
  REQUIRE_FALSE(check_prior(agnostic(5)));

  // difference rows plus one F = I: the stack is full rank
  ConstraintSet cs = chain(4);
  QuadPenalty q;
  q.F = Eigen::MatrixXd::Identity(4, 4);
  cs.quads.push_back(q);
  REQUIRE(check_prior(cs));
}

TEST_CASE("check_prior agrees with the nullspace dimension") {
  for (const ConstraintSet& cs : {identity_rows(3), chain(3), agnostic(4)}) {
    REQUIRE(check_prior(cs) == (nullspace_basis(cs).cols() == 0));
  }
}

TEST_CASE("posterior condition (a) holds with an intercepted design") {
  Rng rng(5);
  const int n = 20, p = 4;
  Eigen::MatrixXd X(n, p);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    X(i, 0) = 1.0;  // intercept
    for (int j = 1; j < p; ++j) X(i, j) = rng.normal();
    y[i] = rng.normal();
  }
  const ProprietyReport rep = check_posterior(X, y, chain(p), Family::linear);
  REQUIRE(rep.condition_a);
  REQUIRE_FALSE(rep.prior_proper);
  REQUIRE(rep.condition_b == ConditionStatus::holds);
  REQUIRE(rep.posterior == PosteriorStatus::proper);
}

TEST_CASE("linear family: full-rank reduced design certifies propriety") {
  Rng rng(9);
  const int n = 30, p = 5;
  Eigen::MatrixXd X(n, p);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) X(i, j) = rng.normal();
    y[i] = rng.normal();
  }
  const ProprietyReport rep = check_posterior(X, y, agnostic(p), Family::linear);
  REQUIRE(rep.condition_a);
  REQUIRE(rep.condition_b == ConditionStatus::holds);
  REQUIRE(rep.posterior == PosteriorStatus::proper);
}

TEST_CASE("separated logistic pooled design fails condition (b)") {
  // 8 rows, columns: control indicator, treated-in-group-1, treated-in-group-2.
  // Fusing the two treatment effects reduces to [control, treated]; y = 1 iff
  // treated is perfectly separated, so the maximally sparse MLE diverges.
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(8, 3);
  Eigen::VectorXd y(8);
  for (int i = 0; i < 8; ++i) {
    X(i, 0) = 1.0;
    const bool treated = i % 2 == 0;
    if (treated) X(i, 1 + (i / 2) % 2) = 1.0;
    y[i] = treated ? 1.0 : 0.0;
  }
  StructureGraph g;
  g.p = 3;
  g.edges = {{1, 2}};
  const ConstraintSet cs = compile_constraints(g);
  const ProprietyReport rep = check_posterior(X, y, cs, Family::logistic);
  REQUIRE(rep.condition_a);
  REQUIRE(rep.condition_b == ConditionStatus::fails);
  REQUIRE(rep.posterior == PosteriorStatus::improper);

  // same data with a linear outcome is fine
  const ProprietyReport lin = check_posterior(X, y, cs, Family::linear);
  REQUIRE(lin.posterior == PosteriorStatus::proper);
}

TEST_CASE("condition (a) fails when a direction escapes both X and Dbar") {
  // X ignores coordinate 2 entirely and the chain only ties 0-1
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(10, 3);
  Rng rng(13);
  for (int i = 0; i < 10; ++i) {
    X(i, 0) = rng.normal();
    X(i, 1) = rng.normal();
  }
  Eigen::VectorXd y = Eigen::VectorXd::Zero(10);
  StructureGraph g;
  g.p = 3;
  g.edges = {{0, 1}};
  const ProprietyReport rep = check_posterior(X, y, compile_constraints(g), Family::linear);
  REQUIRE_FALSE(rep.condition_a);
  REQUIRE(rep.posterior == PosteriorStatus::improper);
}

TEST_CASE("agnostic limiting case reduces to a single treatment indicator") {
  // columns: 3 treatment cells + 1 covariate; fusing all cells leaves
  // 1 + (unstructured covariate count) free directions
  const int p = 4;
  Cells cells;
  cells.p = p;
  for (int i = 0; i < 3; ++i) {
    cells.index.push_back(i);
    cells.labels.push_back("t");
    cells.attrs.push_back({});
  }
  const ConstraintSet cs = compile_constraints(build_agnostic(cells));
  const Eigen::MatrixXd B = nullspace_basis(cs);
  REQUIRE(B.cols() == 2);  // fused treatment direction + covariate

  Rng rng(3);
  Eigen::MatrixXd X(12, p);
  for (int i = 0; i < 12; ++i) {
    for (int j = 0; j < 3; ++j) X(i, j) = (i % 3 == j) ? 1.0 : 0.0;
    X(i, 3) = rng.normal();
  }
  const Eigen::MatrixXd XB = X * B;
  REQUIRE(gram_rank(XB.transpose() * XB, 12).rank == 2);
}

TEST_CASE("rank decisions are scale invariant") {
  const ConstraintSet cs = chain(4);
  for (double c : {1e-6, 1e-3, 1.0, 1e3, 1e6}) {
    ConstraintSet scaled = cs;
    for (auto& row : scaled.rows) row.weight *= c;
    REQUIRE(rank_dbar(scaled) == rank_dbar(cs));
  }
}

TEST_CASE("dimension mismatch is rejected") {
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(4, 2);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(4);
  REQUIRE_THROWS_AS(check_posterior(X, y, chain(3), Family::linear), std::invalid_argument);
}
