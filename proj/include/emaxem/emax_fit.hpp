#pragma once

// Weighted ML and Jeffreys-penalized fitting of the Emax sub-model.

#include "emaxem/model_core.hpp"
#include "emaxem/newton.hpp"

#include <array>
#include <vector>

namespace emaxem {

/// U(theta) = sum w (y - pi) grad_eta.
Eigen::Vector3d emax_score(PseudoSpan pseudo, const EmaxParams& theta);
/// H(theta) = sum w [-pi(1-pi) g g' - A].
Eigen::Matrix3d emax_hessian(PseudoSpan pseudo, const EmaxParams& theta);
/// Expected information sum w pi(1-pi) g g'.
Eigen::Matrix3d fisher_info_theta(PseudoSpan pseudo, const EmaxParams& theta);

/// Coordinates in which the Jeffreys information is taken. LogEd50 uses
/// (E0, Emax, log ED50), which adds log(ED50) to the Ed50-scale penalty;
/// the fitted parameter vector is (E0, Emax, ED50) either way.
enum class PenaltyScale { LogEd50, Ed50 };

/// 1/2 log det of the information on the chosen scale. Throws if the
/// information is singular.
double jeffreys_penalty_theta(PseudoSpan pseudo, const EmaxParams& theta,
                              PenaltyScale scale = PenaltyScale::LogEd50);

enum class InfoDerivative { Analytic, FiniteDifference };

/// dI/dtheta_k for k = E0, Emax, ED50.
std::array<Eigen::Matrix3d, 3> fisher_info_theta_derivatives(
    PseudoSpan pseudo, const EmaxParams& theta, InfoDerivative mode = InfoDerivative::Analytic);

/// Gradient of the Jeffreys penalty in (E0, Emax, ED50):
/// 1/2 tr(I^-1 dI/dtheta_k), plus 1/ED50 on the ED50 entry for LogEd50.
Eigen::Vector3d jeffreys_gradient_theta(PseudoSpan pseudo, const EmaxParams& theta,
                                        InfoDerivative mode = InfoDerivative::Analytic,
                                        PenaltyScale scale = PenaltyScale::LogEd50);
/// Hessian of the Jeffreys penalty by central differences of its gradient.
Eigen::Matrix3d jeffreys_hessian_theta(PseudoSpan pseudo, const EmaxParams& theta,
                                       PenaltyScale scale = PenaltyScale::LogEd50);

/// Modified score U*(theta) = U(theta) + jeffreys_gradient_theta.
Eigen::Vector3d firth_score_theta(PseudoSpan pseudo, const EmaxParams& theta,
                                  InfoDerivative mode = InfoDerivative::Analytic,
                                  PenaltyScale scale = PenaltyScale::LogEd50);

/// Log-likelihood, plus the Jeffreys penalty when firth is set.
double emax_objective(PseudoSpan pseudo, const EmaxParams& theta, bool firth,
                      PenaltyScale scale = PenaltyScale::LogEd50);

/// Rows pooled by (dose, yfill) with summed weights. Every Emax-part quantity
/// depends on the rows only through these sums, so fits on the pooled rows
/// equal fits on the originals up to summation order. z is dropped.
std::vector<PseudoRecord> pool_by_dose(PseudoSpan pseudo);

/// Starting values from clamped placebo and top-dose success rates and the
/// median positive dose.
EmaxParams default_emax_init(PseudoSpan pseudo);

/// Newton-Raphson with step halving on the (penalized) log-likelihood.
/// Nonconvergence is reported, never thrown; fewer than two dose levels throws.
/// with_variance = false skips vcov / se / ci (EM M-steps do not need them).
FitReport fit_emax(PseudoSpan pseudo, bool firth, const EmaxParams& init,
                   const NewtonControls& controls = {},
                   PenaltyScale scale = PenaltyScale::LogEd50, bool with_variance = true);

}  // namespace emaxem
