#pragma once

// Weighted logistic regression of the missingness indicator r on
// z = (1, x, dose, yfill), with optional Firth correction.

#include "emaxem/model_core.hpp"
#include "emaxem/newton.hpp"

namespace emaxem {

/// U(alpha) = sum w z (r - p).
Eigen::VectorXd alpha_score(PseudoSpan pseudo, const AlphaParams& alpha);
/// I(alpha) = Z' V Z with V = diag(w p (1 - p)).
Eigen::MatrixXd alpha_info(PseudoSpan pseudo, const AlphaParams& alpha);
/// Diagonal of V^1/2 Z (Z'VZ)^-1 Z' V^1/2, one entry per pseudo-row.
Eigen::VectorXd hat_diagonals(PseudoSpan pseudo, const AlphaParams& alpha);

/// 1/2 log det I(alpha); throws when the information is singular.
double jeffreys_penalty_alpha(PseudoSpan pseudo, const AlphaParams& alpha);
/// Exact Hessian of jeffreys_penalty_alpha.
Eigen::MatrixXd jeffreys_hessian_alpha(PseudoSpan pseudo, const AlphaParams& alpha);

/// U*(alpha) = sum z [w (r - p) + h (1/2 - p)], the gradient of
/// alpha_loglik + jeffreys_penalty_alpha. Since h already carries the row
/// weight through V, this equals sum w z [r - p + (h / w)(1/2 - p)].
Eigen::VectorXd firth_score_alpha(PseudoSpan pseudo, const AlphaParams& alpha);

double alpha_objective(PseudoSpan pseudo, const AlphaParams& alpha, bool firth);

struct AlphaReport {
  AlphaParams alpha;
  Eigen::MatrixXd vcov;
  Eigen::VectorXd se;
  int iterations = 0;
  bool converged = false;
  bool diverged = false;
  double objective = 0.0;
  std::vector<std::string> notes;
};

AlphaReport fit_missingness(PseudoSpan pseudo, bool firth, const AlphaParams& init,
                            const NewtonControls& controls = {}, bool with_variance = true);

}  // namespace emaxem
