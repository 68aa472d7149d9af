#include "emaxem/emax_fit.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

namespace emaxem {

namespace {

constexpr double kMinEd50 = 1e-8;
constexpr double kMinLogDet = -690.7755278982137;  // log(1e-300)

double fd_step(const Eigen::Vector3d& v, int k) {
  double h = std::max(1.0, std::abs(v(k))) * 1e-5;
  if (k == 2) h = std::min(h, 0.5 * v(2));
  return h;
}

// Cholesky of the information; throws if it is not usable for a log-det.
Eigen::LLT<Eigen::Matrix3d> factor_info(const Eigen::Matrix3d& info) {
  Eigen::LLT<Eigen::Matrix3d> llt(info);
  if (llt.info() != Eigen::Success) {
    throw Error("emax_fit",
                "Fisher information for theta is singular; the Jeffreys penalty needs at least "
                "three informative dose levels (add dose levels or data)");
  }
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  if (!(logdet > kMinLogDet)) {
    throw Error("emax_fit",
                "Fisher information for theta is singular (det <= 1e-300); the Jeffreys penalty "
                "needs more dose levels or data");
  }
  return llt;
}

// Score, Hessian and expected information in one pass over the rows.
void accumulate(PseudoSpan pseudo, const EmaxParams& theta, Eigen::Vector3d& score,
                Eigen::Matrix3d& hess, Eigen::Matrix3d& info) {
  score.setZero();
  hess.setZero();
  info.setZero();
  for (const auto& row : pseudo) {
    const double pi = success_prob(row.dose, theta);
    const Eigen::Vector3d g = grad_eta(row.dose, theta);
    const Eigen::Matrix3d gg = (row.weight * pi * (1.0 - pi)) * g * g.transpose();
    score += row.weight * (row.yfill - pi) * g;
    info += gg;
    hess -= gg - (row.weight * (row.yfill - pi)) * hess_eta(row.dose, theta);
  }
  hess = 0.5 * (hess + hess.transpose()).eval();
}

}  // namespace

Eigen::Vector3d emax_score(PseudoSpan pseudo, const EmaxParams& theta) {
  Eigen::Vector3d u = Eigen::Vector3d::Zero();
  for (const auto& row : pseudo) {
    const double pi = success_prob(row.dose, theta);
    u += row.weight * (row.yfill - pi) * grad_eta(row.dose, theta);
  }
  return u;
}

Eigen::Matrix3d emax_hessian(PseudoSpan pseudo, const EmaxParams& theta) {
  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (const auto& row : pseudo) {
    const double pi = success_prob(row.dose, theta);
    const Eigen::Vector3d g = grad_eta(row.dose, theta);
    h += row.weight * ((pi - 1.0) * pi * g * g.transpose() - a_matrix(row.dose, row.yfill, theta));
  }
  return 0.5 * (h + h.transpose());
}

Eigen::Matrix3d fisher_info_theta(PseudoSpan pseudo, const EmaxParams& theta) {
  Eigen::Matrix3d info = Eigen::Matrix3d::Zero();
  for (const auto& row : pseudo) {
    const double pi = success_prob(row.dose, theta);
    const Eigen::Vector3d g = grad_eta(row.dose, theta);
    info += row.weight * pi * (1.0 - pi) * g * g.transpose();
  }
  return info;
}

double jeffreys_penalty_theta(PseudoSpan pseudo, const EmaxParams& theta, PenaltyScale scale) {
  const auto llt = factor_info(fisher_info_theta(pseudo, theta));
  double value = llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  // det of J I J with J = diag(1, 1, ED50)
  if (scale == PenaltyScale::LogEd50) value += std::log(theta.ed50);
  return value;
}

namespace {

// Expected information and its analytic derivatives in one pass.
void info_and_derivatives(PseudoSpan pseudo, const EmaxParams& theta, Eigen::Matrix3d& info,
                          std::array<Eigen::Matrix3d, 3>& d) {
  info.setZero();
  for (auto& m : d) m.setZero();
  for (const auto& row : pseudo) {
    const double pi = success_prob(row.dose, theta);
    const double v = row.weight * pi * (1.0 - pi);
    const Eigen::Vector3d g = grad_eta(row.dose, theta);
    const Eigen::Matrix3d gg = g * g.transpose();
    const Eigen::Matrix3d he = hess_eta(row.dose, theta);
    info += v * gg;
    for (int k = 0; k < 3; ++k) {
      const Eigen::Vector3d hk = he.col(k);
      d[static_cast<std::size_t>(k)] +=
          v * ((1.0 - 2.0 * pi) * g(k) * gg + hk * g.transpose() + g * hk.transpose());
    }
  }
}

}  // namespace

std::array<Eigen::Matrix3d, 3> fisher_info_theta_derivatives(PseudoSpan pseudo,
                                                             const EmaxParams& theta,
                                                             InfoDerivative mode) {
  std::array<Eigen::Matrix3d, 3> d;
  if (mode == InfoDerivative::FiniteDifference) {
    const Eigen::Vector3d v = theta.as_vector();
    for (int k = 0; k < 3; ++k) {
      const double h = fd_step(v, k);
      Eigen::Vector3d up = v, down = v;
      up(k) += h;
      down(k) -= h;
      d[static_cast<std::size_t>(k)] = (fisher_info_theta(pseudo, EmaxParams::from_vector(up)) -
                                        fisher_info_theta(pseudo, EmaxParams::from_vector(down))) /
                                       (2.0 * h);
    }
    return d;
  }
  Eigen::Matrix3d info;
  info_and_derivatives(pseudo, theta, info, d);
  return d;
}

Eigen::Vector3d jeffreys_gradient_theta(PseudoSpan pseudo, const EmaxParams& theta,
                                        InfoDerivative mode, PenaltyScale scale) {
  Eigen::Matrix3d info;
  std::array<Eigen::Matrix3d, 3> derivs;
  info_and_derivatives(pseudo, theta, info, derivs);
  const auto llt = factor_info(info);
  bool finite = std::all_of(derivs.begin(), derivs.end(),
                            [](const Eigen::Matrix3d& m) { return m.allFinite(); });
  if (mode == InfoDerivative::FiniteDifference || !finite) {
    derivs = fisher_info_theta_derivatives(pseudo, theta, InfoDerivative::FiniteDifference);
  }
  Eigen::Vector3d out;
  for (int k = 0; k < 3; ++k) out(k) = 0.5 * llt.solve(derivs[static_cast<std::size_t>(k)]).trace();
  if (scale == PenaltyScale::LogEd50) out(2) += 1.0 / theta.ed50;
  return out;
}

Eigen::Matrix3d jeffreys_hessian_theta(PseudoSpan pseudo, const EmaxParams& theta,
                                       PenaltyScale scale) {
  const Eigen::Vector3d v = theta.as_vector();
  Eigen::Matrix3d h;
  for (int k = 0; k < 3; ++k) {
    const double step = fd_step(v, k);
    Eigen::Vector3d up = v, down = v;
    up(k) += step;
    down(k) -= step;
    h.col(k) = (jeffreys_gradient_theta(pseudo, EmaxParams::from_vector(up), InfoDerivative::Analytic,
                                        PenaltyScale::Ed50) -
                jeffreys_gradient_theta(pseudo, EmaxParams::from_vector(down),
                                        InfoDerivative::Analytic, PenaltyScale::Ed50)) /
               (2.0 * step);
  }
  if (scale == PenaltyScale::LogEd50) h(2, 2) -= 1.0 / (theta.ed50 * theta.ed50);
  return 0.5 * (h + h.transpose());
}

Eigen::Vector3d firth_score_theta(PseudoSpan pseudo, const EmaxParams& theta, InfoDerivative mode,
                                  PenaltyScale scale) {
  return emax_score(pseudo, theta) + jeffreys_gradient_theta(pseudo, theta, mode, scale);
}

double emax_objective(PseudoSpan pseudo, const EmaxParams& theta, bool firth, PenaltyScale scale) {
  double value = emax_loglik(pseudo, theta);
  if (firth) value += jeffreys_penalty_theta(pseudo, theta, scale);
  return value;
}

std::vector<PseudoRecord> pool_by_dose(PseudoSpan pseudo) {
  std::map<std::pair<double, int>, double> cells;
  for (const auto& row : pseudo) cells[{row.dose, row.yfill}] += row.weight;
  std::vector<PseudoRecord> out;
  out.reserve(cells.size());
  for (const auto& [key, weight] : cells) {
    PseudoRecord r;
    r.subject = out.size();
    r.dose = key.first;
    r.yfill = key.second;
    r.weight = weight;
    out.push_back(std::move(r));
  }
  return out;
}

EmaxParams default_emax_init(PseudoSpan pseudo) {
  if (pseudo.empty()) throw Error("emax_fit", "cannot initialize from an empty dataset");
  double lo = pseudo.front().dose, hi = lo;
  std::vector<double> positive;
  for (const auto& row : pseudo) {
    lo = std::min(lo, row.dose);
    hi = std::max(hi, row.dose);
    if (row.dose > 0.0) positive.push_back(row.dose);
  }
  auto arm_rate = [&](double dose) {
    double succ = 0.0, total = 0.0;
    for (const auto& row : pseudo) {
      if (row.dose != dose) continue;
      succ += row.weight * row.yfill;
      total += row.weight;
    }
    const double rate = total > 0.0 ? succ / total : 0.5;
    return std::clamp(rate, 0.02, 0.98);
  };
  auto logit = [](double p) { return std::log(p / (1.0 - p)); };

  EmaxParams init;
  init.e0 = logit(arm_rate(lo));
  init.emax = logit(arm_rate(hi)) - init.e0;
  if (positive.empty()) {
    init.ed50 = 1.0;
  } else {
    const auto mid = positive.begin() + static_cast<std::ptrdiff_t>(positive.size() / 2);
    std::nth_element(positive.begin(), mid, positive.end());
    init.ed50 = *mid;
  }
  return init;
}

FitReport fit_emax(PseudoSpan full_pseudo, bool firth, const EmaxParams& init,
                   const NewtonControls& controls, PenaltyScale scale, bool with_variance) {
  if (full_pseudo.empty()) throw Error("emax_fit", "no records to fit");
  if (distinct_doses(full_pseudo) < 2) {
    throw Error("emax_fit", "the Emax model needs at least 2 distinct dose levels");
  }
  init.validate();
  const std::vector<PseudoRecord> pooled_rows = pool_by_dose(full_pseudo);
  const PseudoSpan pseudo(pooled_rows);

  NewtonProblem problem;
  problem.value = [&](const Eigen::VectorXd& x) {
    return emax_objective(pseudo, EmaxParams::from_vector(x), firth, scale);
  };
  problem.derivatives = [&](const Eigen::VectorXd& x, Eigen::VectorXd& grad, Eigen::MatrixXd& hess,
                            Eigen::MatrixXd& metric) {
    const auto theta = EmaxParams::from_vector(x);
    Eigen::Vector3d u;
    Eigen::Matrix3d h, info;
    accumulate(pseudo, theta, u, h, info);
    grad = u;
    hess = h;
    metric = info;
    if (firth) {
      grad += jeffreys_gradient_theta(pseudo, theta, InfoDerivative::Analytic, scale);
      hess += jeffreys_hessian_theta(pseudo, theta, scale);
    }
  };
  problem.project = [](Eigen::VectorXd& x) { x(2) = std::max(x(2), kMinEd50); };

  const NewtonResult nr = newton_ascent(problem, init.as_vector(), controls);

  FitReport report;
  report.method = firth ? Method::FIL : Method::CC;
  report.theta = EmaxParams::from_vector(nr.x);
  report.iterations = nr.iterations;
  report.converged = nr.converged;
  report.diverged = nr.diverged;
  report.objective = nr.objective;
  report.notes = nr.notes;
  report.log_ed50 = std::log(report.theta.ed50);
  if (!with_variance) return report;

  Eigen::Matrix3d neg_hess = -emax_hessian(pseudo, report.theta);
  if (firth) {
    try {
      neg_hess -= jeffreys_hessian_theta(pseudo, report.theta, scale);
    } catch (const Error& e) {
      report.notes.emplace_back(e.what());
    }
  }
  Eigen::LLT<Eigen::Matrix3d> llt(neg_hess);
  if (llt.info() == Eigen::Success && neg_hess.allFinite()) {
    report.vcov = llt.solve(Eigen::Matrix3d::Identity());
  } else {
    report.notes.emplace_back("observed information is not positive definite; variance unavailable");
  }
  finalize_report(report);
  return report;
}

}  // namespace emaxem
