#include "emaxem/model_core.hpp"

#include "emaxem/em_engine.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <string>

namespace emaxem {

std::string_view to_string(Method m) {
  switch (m) {
    case Method::CC: return "CC";
    case Method::NRI: return "NRI";
    case Method::IL: return "IL";
    case Method::FIL: return "FIL";
  }
  return "?";
}

Method parse_method(std::string_view name) {
  std::string upper(name);
  std::transform(upper.begin(), upper.end(), upper.begin(),
                 [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (upper == "CC") return Method::CC;
  if (upper == "NRI") return Method::NRI;
  if (upper == "IL") return Method::IL;
  if (upper == "FIL") return Method::FIL;
  throw Error("model_core", "unknown method '" + std::string(name) + "' (expected CC, NRI, IL or FIL)");
}

void EmaxParams::validate() const {
  if (!std::isfinite(e0) || !std::isfinite(emax) || !std::isfinite(ed50)) {
    throw Error("model_core", "Emax parameters must be finite");
  }
  if (!(ed50 > 0.0)) {
    throw Error("model_core", "ED50 must be positive, got " + std::to_string(ed50));
  }
}

void AlphaParams::validate(std::size_t num_covariates) const {
  const auto expected = static_cast<Eigen::Index>(num_covariates + 3);
  if (coefficients.size() != expected) {
    throw Error("model_core", "alpha has length " + std::to_string(coefficients.size()) +
                                  " but the design needs " + std::to_string(expected));
  }
  if (!coefficients.allFinite()) throw Error("model_core", "alpha coefficients must be finite");
}

void finalize_report(FitReport& report, double level) {
  report.log_ed50 = std::log(report.theta.ed50);
  const Eigen::Vector3d est = report.theta.as_vector();
  report.ci.clear();
  for (int k = 0; k < 3; ++k) {
    const double v = report.vcov(k, k);
    report.se(k) = v >= 0.0 ? std::sqrt(v) : std::numeric_limits<double>::quiet_NaN();
    report.ci.push_back(std::isfinite(report.se(k))
                            ? wald_ci(est(k), report.se(k), level)
                            : std::pair{std::numeric_limits<double>::quiet_NaN(),
                                        std::numeric_limits<double>::quiet_NaN()});
  }
  report.log_ed50_se = report.se(2) / report.theta.ed50;
  report.log_ed50_ci = std::isfinite(report.log_ed50_se)
                           ? wald_ci(report.log_ed50, report.log_ed50_se, level)
                           : std::pair{std::numeric_limits<double>::quiet_NaN(),
                                       std::numeric_limits<double>::quiet_NaN()};
}

double expit(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log1pexp(double x) {
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double eta(double dose, const EmaxParams& theta) {
  return theta.e0 + theta.emax * dose / (theta.ed50 + dose);
}

double success_prob(double dose, const EmaxParams& theta) { return expit(eta(dose, theta)); }

Eigen::Vector3d grad_eta(double dose, const EmaxParams& theta) {
  const double denom = theta.ed50 + dose;
  return {1.0, dose / denom, -dose * theta.emax / (denom * denom)};
}

Eigen::Matrix3d hess_eta(double dose, const EmaxParams& theta) {
  const double denom = theta.ed50 + dose;
  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  h(1, 2) = h(2, 1) = -dose / (denom * denom);
  h(2, 2) = 2.0 * dose * theta.emax / (denom * denom * denom);
  return h;
}

Eigen::Matrix3d a_matrix(double dose, int yfill, const EmaxParams& theta) {
  const double resid = static_cast<double>(yfill) - success_prob(dose, theta);
  return -resid * hess_eta(dose, theta);
}

Eigen::VectorXd design_row(const TrialRecord& rec, int yfill) {
  const auto p = static_cast<Eigen::Index>(rec.covariates.size());
  Eigen::VectorXd z(p + 3);
  z(0) = 1.0;
  for (Eigen::Index k = 0; k < p; ++k) z(k + 1) = rec.covariates[static_cast<std::size_t>(k)];
  z(p + 1) = rec.dose;
  z(p + 2) = static_cast<double>(yfill);
  return z;
}

double missing_prob(const Eigen::VectorXd& z, const AlphaParams& alpha) {
  if (z.size() != alpha.size()) {
    throw Error("model_core", "design row has length " + std::to_string(z.size()) +
                                  " but alpha has length " + std::to_string(alpha.size()));
  }
  return expit(z.dot(alpha.coefficients));
}

double emax_loglik(PseudoSpan pseudo, const EmaxParams& theta) {
  double total = 0.0;
  for (const auto& row : pseudo) {
    if (row.weight == 0.0) continue;
    const double e = eta(row.dose, theta);
    total += row.weight * (row.yfill * e - log1pexp(e));
  }
  return total;
}

double alpha_loglik(PseudoSpan pseudo, const AlphaParams& alpha) {
  double total = 0.0;
  for (const auto& row : pseudo) {
    if (row.z.size() != alpha.size()) {
      throw Error("model_core", "design row has length " + std::to_string(row.z.size()) +
                                    " but alpha has length " + std::to_string(alpha.size()));
    }
    if (row.weight == 0.0) continue;
    const double lin = row.z.dot(alpha.coefficients);
    total += row.weight * ((row.missing ? lin : 0.0) - log1pexp(lin));
  }
  return total;
}

std::size_t distinct_doses(PseudoSpan pseudo) {
  std::set<double> doses;
  for (const auto& row : pseudo) doses.insert(row.dose);
  return doses.size();
}

}  // namespace emaxem
