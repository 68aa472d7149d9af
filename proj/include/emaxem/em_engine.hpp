#pragma once

// Weighted EM for the Emax model with a nonignorable missingness model
// (IL), its Jeffreys-penalized variant (FIL), and Louis-method variances.

#include "emaxem/emax_fit.hpp"
#include "emaxem/missing_fit.hpp"
#include "emaxem/model_core.hpp"

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace emaxem {

using DataSpan = std::span<const TrialRecord>;

struct EmControls {
  int max_em_iter = 500;
  double em_tol = 1e-6;  // max |delta gamma| between iterations
  NewtonControls inner;
  double level = 0.95;
  bool compute_variance = true;
  std::optional<EmaxParams> theta_init;
  std::optional<AlphaParams> alpha_init;
  PenaltyScale penalty_scale = PenaltyScale::LogEd50;  // FIL only

  void validate() const;
};

struct EmFit {
  Method method = Method::IL;
  PenaltyScale penalty_scale = PenaltyScale::LogEd50;
  FitReport theta_report;
  AlphaReport alpha_report;
  Eigen::MatrixXd information;  // Louis observed information over gamma = (theta, alpha)
  Eigen::MatrixXd vcov;
  std::vector<PseudoRecord> weights;  // expanded data with weights at convergence
  int em_iterations = 0;
  bool converged = false;
  bool inner_nonconvergence = false;
  bool information_psd = true;
  std::vector<double> trace;  // observed-data (penalized) objective, trace[0] at the start
  std::vector<std::string> notes;
};

/// Observed subjects become one row (weight 1), missing subjects two rows
/// (yfill 0 and 1) with weights 1/2.
std::vector<PseudoRecord> expand_dataset(DataSpan data);

/// Expanded dataset carrying E-step weights at (theta, alpha).
std::vector<PseudoRecord> e_step_weights(DataSpan data, const EmaxParams& theta,
                                         const AlphaParams& alpha);
/// In-place E-step on an expanded dataset.
void update_weights(std::vector<PseudoRecord>& pseudo, const EmaxParams& theta,
                    const AlphaParams& alpha);

/// Observed-data log-likelihood with missing outcomes summed out.
double observed_loglik(DataSpan data, const EmaxParams& theta, const AlphaParams& alpha);
/// observed_loglik, plus both Jeffreys penalties (evaluated at the E-step
/// weights implied by (theta, alpha)) for FIL.
double observed_objective(DataSpan data, const EmaxParams& theta, const AlphaParams& alpha,
                          Method method, PenaltyScale scale = PenaltyScale::LogEd50);

/// Checks that records form a valid dataset for the EM fit (throws Error otherwise).
void validate_dataset(DataSpan data, const char* module);

EmFit em_fit(DataSpan data, Method method, const EmControls& controls = {});

/// Louis observed information at the fit's estimates and converged weights.
Eigen::MatrixXd louis_information(DataSpan data, const EmFit& fit);

/// Standard normal quantile.
double normal_quantile(double p);
/// Two-sided normal-approximation interval at the given coverage level.
std::pair<double, double> wald_ci(double estimate, double se, double level);

}  // namespace emaxem
