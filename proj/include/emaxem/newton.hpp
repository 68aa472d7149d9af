#pragma once

// Damped Newton ascent shared by the Emax and missingness M-steps.

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <vector>

namespace emaxem {

struct NewtonControls {
  int max_iter = 100;
  double tol = 1e-8;           // relative parameter change
  int max_step_halvings = 30;
  double ridge = 1e-8;         // relative diagonal loading for singular systems

  void validate() const;
};

struct NewtonProblem {
  /// Objective to maximize. May throw emaxem::Error where it is undefined;
  /// such points are rejected by the line search.
  std::function<double(const Eigen::VectorXd&)> value;
  /// Gradient and Hessian of the objective plus a positive definite metric
  /// used when the Hessian is not negative definite.
  std::function<void(const Eigen::VectorXd&, Eigen::VectorXd& grad, Eigen::MatrixXd& hess,
                     Eigen::MatrixXd& metric)>
      derivatives;
  std::function<void(Eigen::VectorXd&)> project;  // optional feasibility map
  double divergence_bound = 1e6;
};

struct NewtonResult {
  Eigen::VectorXd x;
  double objective = 0.0;
  int iterations = 0;
  bool converged = false;
  bool diverged = false;
  std::vector<double> trace;  // objective after each accepted step, trace[0] at the start
  std::vector<std::string> notes;
};

NewtonResult newton_ascent(const NewtonProblem& problem, Eigen::VectorXd init,
                           const NewtonControls& controls);

/// Solves A d = b for symmetric positive definite A, loading the diagonal with
/// ridge * mean(diag) (growing tenfold) while A is singular or its condition
/// estimate exceeds 1e12. Returns false if no loading succeeds.
bool solve_spd(const Eigen::MatrixXd& a, const Eigen::VectorXd& b, double ridge,
               Eigen::VectorXd& out, bool* loaded = nullptr);

}  // namespace emaxem
