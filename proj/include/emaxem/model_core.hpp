#pragma once

// Domain types and elementary functions of the binary Emax response model
// and the logistic missingness model.
//
// Parameter order is fixed everywhere:
//   theta = (E0, Emax, ED50)
//   alpha = (intercept, covariates..., dose, y)

#include <Eigen/Dense>

#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace emaxem {

/// Error raised by any module; carries the module name for diagnostics.
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& message)
      : std::runtime_error(message), module_(std::move(module)) {}

  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

enum class Method { CC, NRI, IL, FIL };

std::string_view to_string(Method m);
/// Parses "CC" / "NRI" / "IL" / "FIL" (case-insensitive).
Method parse_method(std::string_view name);

struct EmaxParams {
  double e0 = 0.0;
  double emax = 0.0;
  double ed50 = 1.0;

  Eigen::Vector3d as_vector() const { return {e0, emax, ed50}; }
  static EmaxParams from_vector(const Eigen::Vector3d& v) { return {v(0), v(1), v(2)}; }

  /// Throws Error unless ed50 > 0 and all fields are finite.
  void validate() const;
};

struct AlphaParams {
  Eigen::VectorXd coefficients;

  AlphaParams() = default;
  explicit AlphaParams(Eigen::VectorXd c) : coefficients(std::move(c)) {}
  static AlphaParams zeros(std::size_t num_covariates) {
    return AlphaParams(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(num_covariates + 3)));
  }

  Eigen::Index size() const { return coefficients.size(); }
  std::size_t num_covariates() const { return static_cast<std::size_t>(coefficients.size()) - 3; }
  double outcome_coefficient() const { return coefficients(coefficients.size() - 1); }

  void validate(std::size_t num_covariates) const;
};

struct TrialRecord {
  std::string id;
  double dose = 0.0;
  std::optional<int> outcome;  // absent == missing (r = 1)
  std::vector<double> covariates;

  bool missing() const { return !outcome.has_value(); }
};

/// One row of the expanded dataset: an observed subject contributes one row
/// with weight 1, a missing subject two rows (yfill = 0, 1) whose weights sum to 1.
struct PseudoRecord {
  std::size_t subject = 0;  // index into the originating TrialRecord list
  double dose = 0.0;
  bool missing = false;     // r
  int yfill = 0;
  double weight = 1.0;
  Eigen::VectorXd z;        // (1, x..., dose, yfill)
};

using PseudoSpan = std::span<const PseudoRecord>;

struct FitReport {
  Method method = Method::CC;
  EmaxParams theta;
  double log_ed50 = 0.0;
  std::optional<AlphaParams> alpha;
  Eigen::Matrix3d vcov = Eigen::Matrix3d::Constant(std::numeric_limits<double>::quiet_NaN());
  Eigen::Vector3d se = Eigen::Vector3d::Constant(std::numeric_limits<double>::quiet_NaN());
  std::vector<std::pair<double, double>> ci;  // E0, Emax, ED50
  double log_ed50_se = std::numeric_limits<double>::quiet_NaN();
  std::pair<double, double> log_ed50_ci{std::numeric_limits<double>::quiet_NaN(),
                                        std::numeric_limits<double>::quiet_NaN()};
  int iterations = 0;
  bool converged = false;
  bool diverged = false;
  double objective = 0.0;
  std::vector<std::string> notes;
};

/// Fills se, ci, log_ed50 (delta method, CI on the log scale) from theta and vcov.
void finalize_report(FitReport& report, double level = 0.95);

// -- elementary functions ---------------------------------------------------

double expit(double x);
/// log(1 + e^x) without overflow.
double log1pexp(double x);

double eta(double dose, const EmaxParams& theta);
double success_prob(double dose, const EmaxParams& theta);
/// (d eta/d E0, d eta/d Emax, d eta/d ED50).
Eigen::Vector3d grad_eta(double dose, const EmaxParams& theta);
/// Second derivatives of eta with respect to theta.
Eigen::Matrix3d hess_eta(double dose, const EmaxParams& theta);
/// Nonlinear correction term of the per-row Hessian: H_row = -pi(1-pi) g g' - A.
Eigen::Matrix3d a_matrix(double dose, int yfill, const EmaxParams& theta);

/// Missingness design row z = (1, x..., dose, yfill).
Eigen::VectorXd design_row(const TrialRecord& rec, int yfill);
double missing_prob(const Eigen::VectorXd& z, const AlphaParams& alpha);

/// sum_i sum_y w [y eta - log(1 + e^eta)].
double emax_loglik(PseudoSpan pseudo, const EmaxParams& theta);
/// Weighted Bernoulli log-likelihood of r on the design rows.
double alpha_loglik(PseudoSpan pseudo, const AlphaParams& alpha);

/// Number of distinct dose values in the rows.
std::size_t distinct_doses(PseudoSpan pseudo);

}  // namespace emaxem
