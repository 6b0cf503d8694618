#pragma once

#include <sstream>
#include <string>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "fusionlasso/family.hpp"
#include "fusionlasso/structure.hpp"

// Executable propriety checks: the prior is proper iff Dbar has full column
// rank; the posterior is governed by the two testable conditions
//   (a) rank([X^T Dbar^T]) = p                      (necessary)
//   (b) the maximally sparse model -- the likelihood restricted to the
//       nullspace of Dbar -- has a unique finite MLE  (sufficient)
// with (a) and (b) jointly necessary and sufficient for the linear and
// multinomial-with-standard-link families.

namespace fusionlasso {

enum class ConditionStatus { holds, fails, undetermined };
enum class PosteriorStatus { proper, improper, undetermined };

struct ProprietyReport {
  bool prior_proper = false;
  int rank_dbar = 0;
  int nullspace_dim = 0;
  bool condition_a = false;
  ConditionStatus condition_b = ConditionStatus::undetermined;
  PosteriorStatus posterior = PosteriorStatus::undetermined;
  std::string details;
};

// Orthonormal basis of the nullspace of Dbar; identity when the constraint
// set is empty.
inline Eigen::MatrixXd nullspace_basis(const ConstraintSet& cs) {
  return constraint_rank(cs).nullspace;
}

inline int rank_dbar(const ConstraintSet& cs) { return constraint_rank(cs).rank; }

inline bool check_prior(const ConstraintSet& cs) { return rank_dbar(cs) == cs.p; }

namespace detail {

inline void finalize_verdict(ProprietyReport& rep, Family family) {
  if (!rep.condition_a) {
    rep.posterior = PosteriorStatus::improper;
  } else if (rep.condition_b == ConditionStatus::holds) {
    rep.posterior = PosteriorStatus::proper;
  } else if (rep.condition_b == ConditionStatus::fails &&
             (family == Family::linear || family == Family::logistic ||
              family == Family::multinomial)) {
    // conditions (a)+(b) are jointly necessary and sufficient here
    rep.posterior = PosteriorStatus::improper;
  } else {
    rep.posterior = PosteriorStatus::undetermined;
  }
}

}  // namespace detail

inline ProprietyReport check_posterior(const Eigen::MatrixXd& X, const OutcomeView& y,
                                       const ConstraintSet& cs, Family family) {
  if (X.cols() != cs.p) throw std::invalid_argument("check_posterior: X and constraints disagree on p");
  ProprietyReport rep;
  std::ostringstream details;

  const RankInfo prior = constraint_rank(cs);
  rep.rank_dbar = prior.rank;
  rep.nullspace_dim = cs.p - prior.rank;
  rep.prior_proper = prior.rank == cs.p;
  details << "rank(Dbar) = " << prior.rank << " of p = " << cs.p
          << (rep.prior_proper ? " (prior proper). " : " (prior improper). ");

  // (a) augmented design rank
  const Eigen::Index aug_rows = X.rows() + cs.stack_rows();
  RankInfo aug_rank;
  if (aug_rows * cs.p <= 1'000'000) {
    Eigen::MatrixXd aug(aug_rows, cs.p);
    aug.topRows(X.rows()) = X;
    if (!cs.empty()) aug.bottomRows(cs.stack_rows()) = cs.dense_dbar();
    aug_rank = rank_and_nullspace(aug);
  } else {
    Eigen::MatrixXd aug_gram = X.transpose() * X;
    if (!cs.empty()) aug_gram += cs.dbar_gram();
    aug_rank = gram_rank(aug_gram, aug_rows);
  }
  rep.condition_a = aug_rank.rank == cs.p;
  details << "rank([X^T Dbar^T]) = " << aug_rank.rank << (rep.condition_a ? " = p. " : " < p. ");

  // (b) maximally sparse model on the reduced design X * B
  const Eigen::MatrixXd& B = prior.nullspace;
  if (B.cols() == 0) {
    rep.condition_b = ConditionStatus::holds;
    details << "Nullspace is trivial; the maximally sparse MLE is the empty model. ";
  } else {
    const Eigen::MatrixXd XB = X * B;
    const RankInfo red = XB.size() <= 1'000'000
                             ? rank_and_nullspace(XB)
                             : gram_rank(XB.transpose() * XB, X.rows());
    if (red.rank < XB.cols()) {
      rep.condition_b = ConditionStatus::fails;
      details << "Reduced design X*B is rank deficient (" << red.rank << " of " << XB.cols()
              << "); the maximally sparse MLE is not unique. ";
    } else {
      switch (family) {
        case Family::linear:
          rep.condition_b = ConditionStatus::holds;
          details << "Reduced design X*B has full column rank " << red.rank
                  << "; unique least-squares MLE. ";
          break;
        case Family::logistic: {
          const NewtonResult mle = logistic_mle(XB, y.values);
          if (mle.diverged) {
            rep.condition_b = ConditionStatus::fails;
            details << "Monitored Newton diverged on the reduced design (separation); "
                       "the maximally sparse MLE does not exist. ";
          } else if (mle.converged) {
            rep.condition_b = ConditionStatus::holds;
            details << "Maximally sparse logistic MLE is finite and unique. ";
          } else {
            rep.condition_b = ConditionStatus::undetermined;
            details << "Newton on the reduced design neither converged nor diverged. ";
          }
          break;
        }
        case Family::multinomial: {
          const NewtonResult mle = multinomial_mle(XB, y.classes, y.n_classes);
          if (mle.diverged) {
            rep.condition_b = ConditionStatus::fails;
            details << "Monitored Newton diverged on the reduced multinomial design; "
                       "the maximally sparse MLE does not exist. ";
          } else if (mle.converged) {
            rep.condition_b = ConditionStatus::holds;
            details << "Maximally sparse multinomial MLE is finite and unique. ";
          } else {
            rep.condition_b = ConditionStatus::undetermined;
            details << "Newton on the reduced design neither converged nor diverged. ";
          }
          break;
        }
      }
    }
  }

  detail::finalize_verdict(rep, family);
  switch (rep.posterior) {
    case PosteriorStatus::proper: details << "Posterior: proper."; break;
    case PosteriorStatus::improper: details << "Posterior: improper."; break;
    case PosteriorStatus::undetermined: details << "Posterior: undetermined."; break;
  }
  rep.details = details.str();
  return rep;
}

inline ProprietyReport check_posterior(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                       const ConstraintSet& cs, Family family) {
  OutcomeView view;
  view.values = y;
  view.n_classes = 2;
  return check_posterior(X, view, cs, family);
}

inline const char* to_string(ConditionStatus s) {
  switch (s) {
    case ConditionStatus::holds: return "holds";
    case ConditionStatus::fails: return "fails";
    default: return "undetermined";
  }
}

inline const char* to_string(PosteriorStatus s) {
  switch (s) {
    case PosteriorStatus::proper: return "proper";
    case PosteriorStatus::improper: return "improper";
    default: return "undetermined";
  }
}

inline nlohmann::json propriety_to_json(const ProprietyReport& rep) {
  return {
      {"prior_proper", rep.prior_proper},
      {"rank_Dbar", rep.rank_dbar},
      {"nullspace_dim", rep.nullspace_dim},
      {"condition_a", rep.condition_a},
      {"condition_b", to_string(rep.condition_b)},
      {"posterior", to_string(rep.posterior)},
      {"details", rep.details},
  };
}

}  // namespace fusionlasso
