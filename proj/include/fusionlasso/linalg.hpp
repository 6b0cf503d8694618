#pragma once

#include <Eigen/Dense>
#include <limits>

namespace fusionlasso {

// Numerical rank and orthonormal nullspace of a (possibly tall) stack.
// A singular value counts as nonzero when it exceeds
// max(dims) * machine epsilon * sigma_max.
struct RankInfo {
  int rank = 0;
  Eigen::MatrixXd nullspace;  // p x (p - rank), orthonormal columns
  Eigen::VectorXd singular_values;
  double tol = 0.0;
};

inline RankInfo rank_and_nullspace(const Eigen::MatrixXd& stack) {
  const Eigen::Index p = stack.cols();
  RankInfo info;
  if (p == 0) return info;
  if (stack.rows() == 0) {
    info.nullspace = Eigen::MatrixXd::Identity(p, p);
    return info;
  }
  // JacobiSVD: BDCSVD in Eigen 3.4 misbehaves on heavily structured stacks
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(stack, Eigen::ComputeThinU | Eigen::ComputeFullV);
  info.singular_values = svd.singularValues();
  const double sv_max = info.singular_values.size() > 0 ? info.singular_values[0] : 0.0;
  info.tol = static_cast<double>(std::max(stack.rows(), p)) *
             std::numeric_limits<double>::epsilon() * sv_max;
  for (Eigen::Index i = 0; i < info.singular_values.size(); ++i) {
    if (info.singular_values[i] > info.tol) ++info.rank;
  }
  info.nullspace = svd.matrixV().rightCols(p - info.rank);
  return info;
}

// Same decision from the p x p Gram matrix A^T A, for stacks too tall to
// decompose directly.  Squaring the singular values costs precision, so the
// cutoff here is sqrt(max(dims) * eps) * sigma_max.
inline RankInfo gram_rank(const Eigen::MatrixXd& gram, Eigen::Index stack_rows) {
  const Eigen::Index p = gram.cols();
  RankInfo info;
  if (p == 0) return info;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  info.singular_values.resize(p);
  for (Eigen::Index i = 0; i < p; ++i) {
    info.singular_values[i] = std::sqrt(std::max(0.0, eig.eigenvalues()[p - 1 - i]));
  }
  const double sv_max = info.singular_values[0];
  const double max_dim = static_cast<double>(std::max(stack_rows, p));
  info.tol = std::sqrt(max_dim * std::numeric_limits<double>::epsilon()) * sv_max;
  for (Eigen::Index i = 0; i < p; ++i) {
    if (info.singular_values[i] > info.tol) ++info.rank;
  }
  // eigenvalues ascend, so the leading eigenvectors span the nullspace
  info.nullspace = eig.eigenvectors().leftCols(p - info.rank);
  return info;
}

// Solve A x = b for symmetric positive semi-definite A via LDLT, falling back
// to a small ridge jitter when the factorization is not usable.
inline Eigen::VectorXd solve_spd(const Eigen::MatrixXd& A, const Eigen::VectorXd& b,
                                 bool* jitter_used = nullptr) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
  if (ldlt.info() == Eigen::Success) {
    Eigen::VectorXd x = ldlt.solve(b);
    if (x.allFinite()) {
      // reject solutions from a numerically singular factorization
      const double resid = (A * x - b).norm();
      const double scale = b.norm() + A.norm() * x.norm();
      if (resid <= 1e-8 * (scale + 1e-300)) return x;
    }
  }
  if (jitter_used) *jitter_used = true;
  const double jitter = 1e-10 * (A.diagonal().cwiseAbs().maxCoeff() + 1.0);
  Eigen::MatrixXd Aj = A;
  Aj.diagonal().array() += jitter;
  return Aj.ldlt().solve(b);
}

}  // namespace fusionlasso
