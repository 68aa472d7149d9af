#include "emaxem/newton.hpp"

#include "emaxem/model_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace emaxem {

namespace {

constexpr double kMaxCondition = 1e12;
constexpr double kAscentSlack = 1e-12;

double relative_change(const Eigen::VectorXd& step, const Eigen::VectorXd& x) {
  double worst = 0.0;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    worst = std::max(worst, std::abs(step(k)) / std::max(1.0, std::abs(x(k))));
  }
  return worst;
}

double safe_value(const NewtonProblem& problem, const Eigen::VectorXd& x) {
  try {
    const double v = problem.value(x);
    return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
  } catch (const Error&) {
    return -std::numeric_limits<double>::infinity();
  }
}

bool well_conditioned_spd(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(a, Eigen::EigenvaluesOnly);
  if (eig.info() != Eigen::Success) return false;
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  return lo > 0.0 && hi / lo < kMaxCondition;
}

}  // namespace

void NewtonControls::validate() const {
  if (max_iter < 1) throw Error("emax_fit", "NewtonControls.max_iter must be >= 1");
  if (!(tol > 0.0)) throw Error("emax_fit", "NewtonControls.tol must be > 0");
  if (max_step_halvings < 0) throw Error("emax_fit", "NewtonControls.max_step_halvings must be >= 0");
  if (!(ridge >= 0.0)) throw Error("emax_fit", "NewtonControls.ridge must be >= 0");
}

bool solve_spd(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, double ridge,
               Eigen::VectorXd& out, bool* loaded) {
  if (loaded) *loaded = false;
  if (a.allFinite() && well_conditioned_spd(a)) {
    out = a.llt().solve(b);
    if (out.allFinite()) return true;
  }
  if (!a.allFinite()) return false;
  const double scale = std::max(a.diagonal().cwiseAbs().mean(), 1e-300);
  double load = std::max(ridge, 1e-12) * scale;
  for (int attempt = 0; attempt < 16; ++attempt, load *= 10.0) {
    Eigen::MatrixXd loaded_a = a;
    loaded_a.diagonal().array() += load;
    if (!well_conditioned_spd(loaded_a)) continue;
    out = loaded_a.llt().solve(b);
    if (out.allFinite()) {
      if (loaded) *loaded = true;
      return true;
    }
  }
  return false;
}

NewtonResult newton_ascent(const NewtonProblem& problem, Eigen::VectorXd init,
                           const NewtonControls& controls) {
  controls.validate();
  NewtonResult result;
  if (problem.project) problem.project(init);
  result.x = std::move(init);
  result.objective = safe_value(problem, result.x);
  result.trace.push_back(result.objective);
  if (!std::isfinite(result.objective)) {
    result.notes.emplace_back("objective undefined at the starting point");
    return result;
  }

  const Eigen::Index dim = result.x.size();
  Eigen::VectorXd grad(dim);
  Eigen::MatrixXd hess(dim, dim);
  Eigen::MatrixXd metric(dim, dim);
  Eigen::VectorXd step(dim);
  bool noted_ridge = false;

  for (int it = 1; it <= controls.max_iter; ++it) {
    result.iterations = it;
    problem.derivatives(result.x, grad, hess, metric);
    if (!grad.allFinite()) {
      result.notes.emplace_back("non-finite gradient");
      return result;
    }

    // Newton direction when -H is well-conditioned positive definite,
    // otherwise scoring with the supplied metric.
    const Eigen::MatrixXd neg_hess = -hess;
    bool have_step = false;
    if (neg_hess.allFinite() && well_conditioned_spd(neg_hess)) {
      step = neg_hess.llt().solve(grad);
      have_step = step.allFinite();
    }
    if (!have_step) {
      bool loaded = false;
      have_step = solve_spd(metric, grad, controls.ridge, step, &loaded);
      if (loaded && !noted_ridge) {
        result.notes.emplace_back("ridge loading applied to an ill-conditioned system");
        noted_ridge = true;
      }
    }
    if (!have_step) {
      result.notes.emplace_back("Newton system could not be solved");
      return result;
    }

    const double rel = relative_change(step, result.x);
    double scale = 1.0;
    bool accepted = false;
    Eigen::VectorXd candidate;
    double cand_value = -std::numeric_limits<double>::infinity();
    for (int h = 0; h <= controls.max_step_halvings; ++h, scale *= 0.5) {
      candidate = result.x + scale * step;
      if (problem.project) problem.project(candidate);
      cand_value = safe_value(problem, candidate);
      if (cand_value >= result.objective - kAscentSlack) {
        accepted = true;
        break;
      }
    }

    if (accepted) {
      result.x = candidate;
      result.objective = cand_value;
      result.trace.push_back(cand_value);
    }
    if (rel < controls.tol) {
      result.converged = true;
      return result;
    }
    if (!accepted) {
      result.notes.emplace_back("step halving failed to improve the objective");
      return result;
    }
    if (result.x.cwiseAbs().maxCoeff() > problem.divergence_bound) {
      result.diverged = true;
      result.notes.emplace_back("estimates diverged");
      return result;
    }
  }
  result.notes.emplace_back("maximum Newton iterations reached");
  return result;
}

}  // namespace emaxem
