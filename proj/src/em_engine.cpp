#include "emaxem/em_engine.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

namespace emaxem {

namespace {

double max_abs_diff(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return (a - b).cwiseAbs().maxCoeff();
}

double log_sum_exp(double a, double b) {
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

// Posterior P(y = 1 | r = 1, dose, x) computed on the log scale.
double posterior_success(double dose, const Eigen::VectorXd& z0, const Eigen::VectorXd& z1,
                         const EmaxParams& theta, const AlphaParams& alpha) {
  const double e = eta(dose, theta);
  const double l0 = z0.dot(alpha.coefficients);
  const double l1 = z1.dot(alpha.coefficients);
  const double log_a1 = -log1pexp(-e) - log1pexp(-l1);
  const double log_a0 = -log1pexp(e) - log1pexp(-l0);
  return expit(log_a1 - log_a0);
}

bool any_missing(DataSpan data) {
  return std::any_of(data.begin(), data.end(), [](const TrialRecord& r) { return r.missing(); });
}

}  // namespace

void EmControls::validate() const {
  if (max_em_iter < 1) throw Error("em_engine", "EmControls.max_em_iter must be >= 1");
  if (!(em_tol > 0.0)) throw Error("em_engine", "EmControls.em_tol must be > 0");
  if (!(level > 0.0 && level < 1.0)) throw Error("em_engine", "EmControls.level must lie in (0, 1)");
  inner.validate();
}

void validate_dataset(DataSpan data, const char* module) {
  if (data.empty()) throw Error(module, "dataset is empty");
  const std::size_t p = data.front().covariates.size();
  std::set<double> doses;
  for (const auto& rec : data) {
    if (!(rec.dose >= 0.0) || !std::isfinite(rec.dose)) {
      throw Error(module, "record '" + rec.id + "' has an invalid dose");
    }
    if (rec.covariates.size() != p) {
      throw Error(module, "record '" + rec.id + "' has " + std::to_string(rec.covariates.size()) +
                              " covariates, expected " + std::to_string(p));
    }
    for (double x : rec.covariates) {
      if (!std::isfinite(x)) throw Error(module, "record '" + rec.id + "' has a non-finite covariate");
    }
    if (rec.outcome && *rec.outcome != 0 && *rec.outcome != 1) {
      throw Error(module, "record '" + rec.id + "' has a non-binary outcome");
    }
    doses.insert(rec.dose);
  }
  if (doses.size() < 2) throw Error(module, "at least 2 distinct dose levels are required");
}

std::vector<PseudoRecord> expand_dataset(DataSpan data) {
  std::vector<PseudoRecord> rows;
  rows.reserve(data.size() * 2);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& rec = data[i];
    if (rec.missing()) {
      for (int y = 0; y <= 1; ++y) rows.push_back({i, rec.dose, true, y, 0.5, design_row(rec, y)});
    } else {
      rows.push_back({i, rec.dose, false, *rec.outcome, 1.0, design_row(rec, *rec.outcome)});
    }
  }
  return rows;
}

void update_weights(std::vector<PseudoRecord>& pseudo, const EmaxParams& theta,
                    const AlphaParams& alpha) {
  for (std::size_t k = 0; k < pseudo.size(); ++k) {
    auto& row = pseudo[k];
    if (!row.missing) {
      row.weight = 1.0;
      continue;
    }
    // Missing subjects occupy two adjacent rows, yfill 0 then 1.
    auto& next = pseudo[k + 1];
    if (row.z.size() != alpha.size()) {
      throw Error("em_engine", "design row has length " + std::to_string(row.z.size()) +
                                   " but alpha has length " + std::to_string(alpha.size()));
    }
    const double w1 = posterior_success(row.dose, row.z, next.z, theta, alpha);
    row.weight = 1.0 - w1;
    next.weight = w1;
    ++k;
  }
}

std::vector<PseudoRecord> e_step_weights(DataSpan data, const EmaxParams& theta,
                                         const AlphaParams& alpha) {
  auto rows = expand_dataset(data);
  update_weights(rows, theta, alpha);
  return rows;
}

double observed_loglik(DataSpan data, const EmaxParams& theta, const AlphaParams& alpha) {
  double total = 0.0;
  for (const auto& rec : data) {
    const double e = eta(rec.dose, theta);
    if (rec.missing()) {
      const double l0 = design_row(rec, 0).dot(alpha.coefficients);
      const double l1 = design_row(rec, 1).dot(alpha.coefficients);
      total += log_sum_exp(-log1pexp(e) - log1pexp(-l0), -log1pexp(-e) - log1pexp(-l1));
    } else {
      const int y = *rec.outcome;
      const double l = design_row(rec, y).dot(alpha.coefficients);
      total += (y * e - log1pexp(e)) - log1pexp(l);
    }
  }
  return total;
}

double observed_objective(DataSpan data, const EmaxParams& theta, const AlphaParams& alpha,
                          Method method, PenaltyScale scale) {
  double value = observed_loglik(data, theta, alpha);
  if (method == Method::FIL) {
    const auto rows = e_step_weights(data, theta, alpha);
    value += jeffreys_penalty_theta(pool_by_dose(rows), theta, scale) +
             jeffreys_penalty_alpha(rows, alpha);
  }
  return value;
}

Eigen::MatrixXd louis_information(DataSpan data, const EmFit& fit) {
  const auto& rows = fit.weights;
  const EmaxParams& theta = fit.theta_report.theta;
  const AlphaParams& alpha = fit.alpha_report.alpha;
  const bool firth = fit.method == Method::FIL;
  const Eigen::Index q = alpha.size();
  const Eigen::Index d = 3 + q;
  if (!rows.empty() && rows.back().subject + 1 != data.size()) {
    throw Error("em_engine", "fit weights do not belong to the supplied dataset");
  }

  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(d, d);
  Eigen::Matrix3d neg_h_theta = -emax_hessian(rows, theta);
  Eigen::MatrixXd neg_h_alpha = alpha_info(rows, alpha);
  if (firth) {
    neg_h_theta -= jeffreys_hessian_theta(rows, theta, fit.penalty_scale);
    neg_h_alpha -= jeffreys_hessian_alpha(rows, alpha);
  }
  info.topLeftCorner(3, 3) = neg_h_theta;
  info.bottomRightCorner(q, q) = neg_h_alpha;

  // Observed subjects contribute S S' - S S' = 0; missing subjects subtract the
  // conditional covariance of their complete-data score.
  Eigen::VectorXd s0(d), s1(d);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    if (!rows[k].missing) continue;
    const auto& r0 = rows[k];
    const auto& r1 = rows[k + 1];
    const double pi = success_prob(r0.dose, theta);
    const Eigen::Vector3d g = grad_eta(r0.dose, theta);
    s0.head(3) = (0.0 - pi) * g;
    s1.head(3) = (1.0 - pi) * g;
    s0.tail(q) = (1.0 - expit(r0.z.dot(alpha.coefficients))) * r0.z;
    s1.tail(q) = (1.0 - expit(r1.z.dot(alpha.coefficients))) * r1.z;
    const Eigen::VectorXd mean = r0.weight * s0 + r1.weight * s1;
    info -= r0.weight * s0 * s0.transpose() + r1.weight * s1 * s1.transpose() -
            mean * mean.transpose();
    ++k;
  }
  return 0.5 * (info + info.transpose());
}

EmFit em_fit(DataSpan data, Method method, const EmControls& controls) {
  if (method != Method::IL && method != Method::FIL) {
    throw Error("em_engine", "em_fit supports the IL and FIL methods only");
  }
  controls.validate();
  validate_dataset(data, "em_engine");
  const bool firth = method == Method::FIL;
  const std::size_t p = data.front().covariates.size();

  EmFit fit;
  fit.method = method;
  fit.penalty_scale = controls.penalty_scale;
  fit.weights = expand_dataset(data);
  auto& rows = fit.weights;

  EmaxParams theta = controls.theta_init ? *controls.theta_init : default_emax_init(rows);
  AlphaParams alpha = controls.alpha_init ? *controls.alpha_init : AlphaParams::zeros(p);
  alpha.validate(p);

  const bool has_missing = any_missing(data);
  update_weights(rows, theta, alpha);
  auto objective = [&](const EmaxParams& t, const AlphaParams& a) {
    try {
      return observed_objective(data, t, a, method, controls.penalty_scale);
    } catch (const Error&) {
      return std::numeric_limits<double>::quiet_NaN();
    }
  };
  fit.trace.push_back(objective(theta, alpha));

  for (int it = 1; it <= controls.max_em_iter; ++it) {
    fit.em_iterations = it;
    FitReport theta_fit = fit_emax(rows, firth, theta, controls.inner, controls.penalty_scale, false);
    AlphaReport alpha_fit = fit_missingness(rows, firth, alpha, controls.inner, false);
    if (!theta_fit.converged || !alpha_fit.converged) fit.inner_nonconvergence = true;

    const double delta = std::max(max_abs_diff(theta_fit.theta.as_vector(), theta.as_vector()),
                                  max_abs_diff(alpha_fit.alpha.coefficients, alpha.coefficients));
    theta = theta_fit.theta;
    alpha = alpha_fit.alpha;
    fit.theta_report = std::move(theta_fit);
    fit.alpha_report = std::move(alpha_fit);
    update_weights(rows, theta, alpha);
    fit.trace.push_back(objective(theta, alpha));

    // Without missing outcomes the weights never change: one M-step is the fit.
    if (!has_missing) {
      fit.converged = fit.theta_report.converged;
      break;
    }
    if (delta < controls.em_tol) {
      fit.converged = true;
      break;
    }
  }
  if (fit.inner_nonconvergence) fit.notes.emplace_back("an inner M-step did not converge");
  if (!fit.converged) fit.notes.emplace_back("EM did not converge");

  fit.theta_report.method = method;
  fit.theta_report.alpha = alpha;
  fit.theta_report.iterations = fit.em_iterations;
  fit.theta_report.converged = fit.converged && fit.theta_report.converged;
  fit.theta_report.objective = fit.trace.back();

  const Eigen::Index q = alpha.size();
  const Eigen::Index d = 3 + q;
  fit.vcov = Eigen::MatrixXd::Constant(d, d, std::numeric_limits<double>::quiet_NaN());
  fit.theta_report.vcov.setConstant(std::numeric_limits<double>::quiet_NaN());
  if (controls.compute_variance) {
    try {
      fit.information = louis_information(data, fit);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(fit.information);
      const double max_ev = eig.eigenvalues().cwiseAbs().maxCoeff();
      fit.information_psd = eig.eigenvalues().minCoeff() >= -1e-10 * std::max(1.0, max_ev);
      if (!fit.information_psd) fit.notes.emplace_back("Louis information is not positive semidefinite");

      if (!has_missing) {
        // Block-diagonal: invert separately so a degenerate missingness block
        // cannot contaminate the theta variance.
        fit.vcov.setZero();
        fit.vcov.topLeftCorner(3, 3) =
            fit.information.topLeftCorner(3, 3).ldlt().solve(Eigen::MatrixXd::Identity(3, 3));
        fit.vcov.bottomRightCorner(q, q) =
            fit.information.bottomRightCorner(q, q).ldlt().solve(Eigen::MatrixXd::Identity(q, q));
      } else {
        fit.vcov = fit.information.ldlt().solve(Eigen::MatrixXd::Identity(d, d));
      }
      fit.vcov = 0.5 * (fit.vcov + fit.vcov.transpose());
      fit.theta_report.vcov = fit.vcov.topLeftCorner(3, 3);
      fit.alpha_report.vcov = fit.vcov.bottomRightCorner(q, q);
      fit.alpha_report.se = fit.alpha_report.vcov.diagonal().unaryExpr(
          [](double v) { return v >= 0.0 ? std::sqrt(v) : std::numeric_limits<double>::quiet_NaN(); });
    } catch (const Error& e) {
      fit.information_psd = false;
      fit.notes.emplace_back(std::string("variance unavailable: ") + e.what());
    }
  }
  finalize_report(fit.theta_report, controls.level);
  for (const auto& n : fit.notes) fit.theta_report.notes.push_back(n);
  return fit;
}

double normal_quantile(double p) {
  static const boost::math::normal_distribution<double> standard;
  return boost::math::quantile(standard, p);
}

std::pair<double, double> wald_ci(double estimate, double se, double level) {
  const double z = normal_quantile(0.5 + 0.5 * level);
  return {estimate - z * se, estimate + z * se};
}

}  // namespace emaxem
