#include "emaxem/missing_fit.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace emaxem {

namespace {

constexpr double kMinLogDet = -690.7755278982137;  // log(1e-300)

void check_dims(PseudoSpan pseudo, const AlphaParams& alpha) {
  for (const auto& row : pseudo) {
    if (row.z.size() != alpha.size()) {
      throw Error("missing_fit", "design row has length " + std::to_string(row.z.size()) +
                                     " but alpha has length " + std::to_string(alpha.size()));
    }
  }
}

// Design matrix, weights and responses; built once per fit.
struct Design {
  Eigen::MatrixXd z;  // rows x q
  Eigen::VectorXd w;
  Eigen::VectorXd r;  // missingness indicator

  Design(PseudoSpan pseudo, Eigen::Index q) {
    const auto n = static_cast<Eigen::Index>(pseudo.size());
    z.resize(n, q);
    w.resize(n);
    r.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto& row = pseudo[static_cast<std::size_t>(i)];
      if (row.z.size() != q) {
        throw Error("missing_fit", "design row has length " + std::to_string(row.z.size()) +
                                       " but alpha has length " + std::to_string(q));
      }
      z.row(i) = row.z.transpose();
      w(i) = row.weight;
      r(i) = row.missing ? 1.0 : 0.0;
    }
  }
};

// One evaluation of the weighted logistic model at alpha.
struct Pass {
  const Eigen::MatrixXd& z;
  const Eigen::VectorXd& w;
  const Eigen::VectorXd& r;
  Eigen::VectorXd lin;
  Eigen::VectorXd p;  // fitted probabilities
  Eigen::VectorXd v;  // w p (1 - p)

  Pass(const Design& design, const AlphaParams& alpha) : z(design.z), w(design.w), r(design.r) {
    lin = z * alpha.coefficients;
    const Eigen::Index n = lin.size();
    p.resize(n);
    v.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      p(i) = expit(lin(i));
      // p(1-p) without cancellation for large |z'alpha|
      v(i) = w(i) * p(i) * expit(-lin(i));
    }
  }

  Eigen::MatrixXd info() const {
    Eigen::MatrixXd out = z.transpose() * (v.asDiagonal() * z);
    return 0.5 * (out + out.transpose());
  }
  double loglik() const {
    double total = 0.0;
    for (Eigen::Index i = 0; i < lin.size(); ++i) {
      if (w(i) != 0.0) total += w(i) * (r(i) * lin(i) - log1pexp(lin(i)));
    }
    return total;
  }
  Eigen::VectorXd score() const { return z.transpose() * w.cwiseProduct(r - p); }
  Eigen::VectorXd hat(const Eigen::MatrixXd& inv) const {
    return v.cwiseProduct((z * inv).cwiseProduct(z).rowwise().sum());
  }
};

Eigen::LLT<Eigen::MatrixXd> factor_info(const Eigen::MatrixXd& info) {
  Eigen::LLT<Eigen::MatrixXd> llt(info);
  if (llt.info() != Eigen::Success) {
    throw Error("missing_fit",
                "information matrix of the missingness model is singular (check for constant or "
                "collinear covariates)");
  }
  const Eigen::MatrixXd l = llt.matrixL();
  if (!(2.0 * l.diagonal().array().log().sum() > kMinLogDet)) {
    throw Error("missing_fit", "information matrix of the missingness model is singular (det <= 1e-300)");
  }
  return llt;
}

Eigen::MatrixXd inverse(const Eigen::LLT<Eigen::MatrixXd>& llt, Eigen::Index d) {
  return llt.solve(Eigen::MatrixXd::Identity(d, d));
}

Eigen::VectorXd firth_score(const Pass& pass, const Eigen::MatrixXd& inv) {
  const Eigen::VectorXd h = pass.hat(inv);
  const Eigen::VectorXd c =
      pass.w.cwiseProduct(pass.r - pass.p) + h.cwiseProduct((0.5 - pass.p.array()).matrix());
  return pass.z.transpose() * c;
}

// Hessian of 1/2 log det I(alpha), given the inverse information.
//   dI/dalpha_a = Z' diag(c1 z_a) Z,  c1 = v (1 - 2p)
//   second-order trace term Z' diag(c2 q) Z,  c2 = v (1 - 6 v / w),  q_i = z_i' I^-1 z_i
Eigen::MatrixXd penalty_hessian(const Pass& pass, const Eigen::MatrixXd& inv) {
  const Eigen::Index d = inv.rows();
  const Eigen::Index n = pass.z.rows();
  Eigen::VectorXd c1(n), c2q(n);
  const Eigen::VectorXd q = (pass.z * inv).cwiseProduct(pass.z).rowwise().sum();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double var = pass.v(i);
    c1(i) = var * (1.0 - 2.0 * pass.p(i));
    c2q(i) = var * (1.0 - 6.0 * (pass.w(i) > 0.0 ? var / pass.w(i) : 0.0)) * q(i);
  }
  const Eigen::MatrixXd second = pass.z.transpose() * (c2q.asDiagonal() * pass.z);
  std::vector<Eigen::MatrixXd> m(static_cast<std::size_t>(d));
  for (Eigen::Index a = 0; a < d; ++a) {
    const Eigen::VectorXd c = c1.cwiseProduct(pass.z.col(a));
    m[static_cast<std::size_t>(a)] = inv * (pass.z.transpose() * (c.asDiagonal() * pass.z));
  }

  Eigen::MatrixXd h(d, d);
  for (Eigen::Index a = 0; a < d; ++a) {
    for (Eigen::Index b = 0; b <= a; ++b) {
      const double cross = (m[static_cast<std::size_t>(a)] * m[static_cast<std::size_t>(b)]).trace();
      h(a, b) = h(b, a) = 0.5 * (second(a, b) - cross);
    }
  }
  return h;
}

}  // namespace

Eigen::VectorXd alpha_score(PseudoSpan pseudo, const AlphaParams& alpha) {
  return Pass(Design(pseudo, alpha.size()), alpha).score();
}

Eigen::MatrixXd alpha_info(PseudoSpan pseudo, const AlphaParams& alpha) {
  return Pass(Design(pseudo, alpha.size()), alpha).info();
}

Eigen::VectorXd hat_diagonals(PseudoSpan pseudo, const AlphaParams& alpha) {
  const Design design(pseudo, alpha.size());
  const Pass pass(design, alpha);
  return pass.hat(inverse(factor_info(pass.info()), alpha.size()));
}

double jeffreys_penalty_alpha(PseudoSpan pseudo, const AlphaParams& alpha) {
  const auto llt = factor_info(alpha_info(pseudo, alpha));
  const Eigen::MatrixXd l = llt.matrixL();
  return l.diagonal().array().log().sum();
}

Eigen::MatrixXd jeffreys_hessian_alpha(PseudoSpan pseudo, const AlphaParams& alpha) {
  const Design design(pseudo, alpha.size());
  const Pass pass(design, alpha);
  return penalty_hessian(pass, inverse(factor_info(pass.info()), alpha.size()));
}

Eigen::VectorXd firth_score_alpha(PseudoSpan pseudo, const AlphaParams& alpha) {
  const Design design(pseudo, alpha.size());
  const Pass pass(design, alpha);
  return firth_score(pass, inverse(factor_info(pass.info()), alpha.size()));
}

double alpha_objective(PseudoSpan pseudo, const AlphaParams& alpha, bool firth) {
  double value = alpha_loglik(pseudo, alpha);
  if (firth) value += jeffreys_penalty_alpha(pseudo, alpha);
  return value;
}

AlphaReport fit_missingness(PseudoSpan pseudo, bool firth, const AlphaParams& init,
                            const NewtonControls& controls, bool with_variance) {
  if (pseudo.empty()) throw Error("missing_fit", "no records to fit");
  check_dims(pseudo, init);

  const Design design(pseudo, init.size());
  NewtonProblem problem;
  problem.value = [&](const Eigen::VectorXd& x) {
    const Pass pass(design, AlphaParams(x));
    double value = pass.loglik();
    if (firth) {
      const Eigen::MatrixXd l = factor_info(pass.info()).matrixL();
      value += l.diagonal().array().log().sum();
    }
    return value;
  };
  problem.derivatives = [&](const Eigen::VectorXd& x, Eigen::VectorXd& grad, Eigen::MatrixXd& hess,
                            Eigen::MatrixXd& metric) {
    const Pass pass(design, AlphaParams(x));
    metric = pass.info();
    hess = -metric;
    if (firth) {
      const Eigen::MatrixXd inv = inverse(factor_info(metric), x.size());
      grad = firth_score(pass, inv);
      hess += penalty_hessian(pass, inv);
    } else {
      grad = pass.score();
    }
  };

  const NewtonResult nr = newton_ascent(problem, init.coefficients, controls);

  AlphaReport report;
  report.alpha = AlphaParams(nr.x);
  report.iterations = nr.iterations;
  report.converged = nr.converged;
  report.diverged = nr.diverged;
  report.objective = nr.objective;
  report.notes = nr.notes;

  const Eigen::Index d = init.size();
  report.vcov = Eigen::MatrixXd::Constant(d, d, std::numeric_limits<double>::quiet_NaN());
  report.se = Eigen::VectorXd::Constant(d, std::numeric_limits<double>::quiet_NaN());
  if (!with_variance) return report;
  Eigen::MatrixXd neg_hess = alpha_info(pseudo, report.alpha);
  if (firth) {
    try {
      neg_hess -= jeffreys_hessian_alpha(pseudo, report.alpha);
    } catch (const Error& e) {
      report.notes.emplace_back(e.what());
    }
  }
  Eigen::LLT<Eigen::MatrixXd> llt(neg_hess);
  if (llt.info() == Eigen::Success && neg_hess.allFinite()) {
    report.vcov = llt.solve(Eigen::MatrixXd::Identity(d, d));
    report.se = report.vcov.diagonal().cwiseMax(0.0).cwiseSqrt();
  } else {
    report.notes.emplace_back("missingness information is not positive definite; variance unavailable");
  }
  return report;
}

}  // namespace emaxem
