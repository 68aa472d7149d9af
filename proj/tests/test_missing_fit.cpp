#include "emaxem/missing_fit.hpp"
#include "oracles.hpp"

#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <random>

using namespace emaxem;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

PseudoRecord zrow(std::initializer_list<double> z, bool missing, double w = 1.0) {
  PseudoRecord r;
  r.z = Eigen::VectorXd(static_cast<Eigen::Index>(z.size()));
  Eigen::Index k = 0;
  for (double v : z) r.z(k++) = v;
  r.missing = missing;
  r.weight = w;
  return r;
}

// 2x2 table on z = (1, x): x = 0 has 3 missing / 5 observed, x = 1 has 4
// missing / 0 observed (complete separation in x).
std::vector<PseudoRecord> separated_2x2() {
  std::vector<PseudoRecord> rows;
  for (int k = 0; k < 3; ++k) rows.push_back(zrow({1, 0}, true));
  for (int k = 0; k < 5; ++k) rows.push_back(zrow({1, 0}, false));
  for (int k = 0; k < 4; ++k) rows.push_back(zrow({1, 1}, true));
  return rows;
}

// Every placebo subject missing (split into y = 0 / 1 rows), dose 10 mixed,
// dose 40 fully observed. z = (1, dose, y).
std::vector<PseudoRecord> placebo_all_missing() {
  std::vector<PseudoRecord> rows;
  for (int k = 0; k < 6; ++k) {
    rows.push_back(zrow({1, 0, 0}, true, 0.7));
    rows.push_back(zrow({1, 0, 1}, true, 0.3));
  }
  const double doses[] = {10, 10, 10, 10, 40, 40, 40, 40, 40};
  for (int k = 0; k < 9; ++k) rows.push_back(zrow({1, doses[k], static_cast<double>(k % 2)}, false));
  rows.push_back(zrow({1, 10, 0}, true, 0.6));
  rows.push_back(zrow({1, 10, 1}, true, 0.4));
  return rows;
}

std::vector<PseudoRecord> random_rows(std::mt19937_64& rng, int p = 2) {
  std::uniform_int_distribution<int> n(40, 150);
  return oracle::random_pseudo(rng, n(rng), p);
}

}  // namespace

TEST_CASE("alpha score and information match finite differences", "[missing_fit][property]") {
  std::mt19937_64 rng(31);
  for (int k = 0; k < 100; ++k) {
    const auto rows = random_rows(rng);
    const oracle::Vec a = oracle::random_alpha(rng, 2);
    auto loglik = [&](const oracle::Vec& v) { return alpha_loglik(rows, AlphaParams(v)); };
    auto score = [&](const oracle::Vec& v) -> oracle::Vec { return alpha_score(rows, AlphaParams(v)); };
    CHECK(oracle::rel_err(alpha_score(rows, AlphaParams(a)), oracle::fd_gradient(loglik, a)) < 1e-6);
    const Eigen::MatrixXd info = alpha_info(rows, AlphaParams(a));
    CHECK(info.isApprox(info.transpose(), 1e-14));
    CHECK(oracle::rel_err(info, -oracle::fd_jacobian(score, a)) < 1e-5);
    CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(info).eigenvalues().minCoeff() >= -1e-10);
  }
}

TEST_CASE("modified alpha score is the gradient of the penalized objective", "[missing_fit][property]") {
  std::mt19937_64 rng(32);
  for (int k = 0; k < 100; ++k) {
    const auto rows = random_rows(rng);
    const oracle::Vec a = oracle::random_alpha(rng, 2);
    auto objective = [&](const oracle::Vec& v) { return alpha_objective(rows, AlphaParams(v), true); };
    CHECK(oracle::rel_err(firth_score_alpha(rows, AlphaParams(a)), oracle::fd_gradient(objective, a)) < 1e-5);
  }
}

TEST_CASE("penalty Hessian matches second differences", "[missing_fit]") {
  std::mt19937_64 rng(33);
  for (int k = 0; k < 20; ++k) {
    const auto rows = random_rows(rng);
    const oracle::Vec a = oracle::random_alpha(rng, 2);
    // Differences of the penalty gradient, itself checked against differences of the value.
    auto pen_grad = [&](const oracle::Vec& v) -> oracle::Vec {
      return firth_score_alpha(rows, AlphaParams(v)) - alpha_score(rows, AlphaParams(v));
    };
    auto pen = [&](const oracle::Vec& v) { return jeffreys_penalty_alpha(rows, AlphaParams(v)); };
    CHECK(oracle::rel_err(pen_grad(a), oracle::fd_gradient(pen, a)) < 1e-5);
    CHECK(oracle::rel_err(jeffreys_hessian_alpha(rows, AlphaParams(a)), oracle::fd_jacobian(pen_grad, a)) < 1e-5);
  }
}

TEST_CASE("alpha information examples", "[missing_fit]") {
  std::mt19937_64 rng(34);
  const auto rows = random_rows(rng);
  Eigen::MatrixXd ztwz = Eigen::MatrixXd::Zero(5, 5);
  for (const auto& r : rows) ztwz += r.weight * r.z * r.z.transpose();
  CHECK(oracle::rel_err(alpha_info(rows, AlphaParams::zeros(2)), 0.25 * ztwz) < 1e-14);

  auto zero_col = rows;
  for (auto& r : zero_col) r.z(2) = 0.0;
  const Eigen::MatrixXd info = alpha_info(zero_col, AlphaParams::zeros(2));
  CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(info).eigenvalues().minCoeff() < 1e-12);
  CHECK_THROWS_AS(jeffreys_penalty_alpha(zero_col, AlphaParams::zeros(2)), Error);
  CHECK_THROWS_AS(hat_diagonals(zero_col, AlphaParams::zeros(2)), Error);
}

TEST_CASE("alpha score stays finite far out", "[missing_fit]") {
  std::mt19937_64 rng(35);
  auto rows = random_rows(rng);
  for (auto& r : rows) r.missing = false;
  Eigen::VectorXd a = Eigen::VectorXd::Zero(5);
  a(0) = -800.0;
  CHECK(alpha_score(rows, AlphaParams(a)).allFinite());
  CHECK(std::isfinite(alpha_loglik(rows, AlphaParams(a))));
}

TEST_CASE("hat diagonals", "[missing_fit]") {
  // Saturated design: rows are the identity basis.
  std::vector<PseudoRecord> basis;
  for (int k = 0; k < 4; ++k) {
    PseudoRecord r;
    r.z = Eigen::VectorXd::Unit(4, k);
    r.missing = k % 2 == 0;
    basis.push_back(r);
  }
  const Eigen::VectorXd h = hat_diagonals(basis, AlphaParams(Eigen::VectorXd::Constant(4, 0.3)));
  CHECK((h.array() - 1.0).abs().maxCoeff() < 1e-12);

  std::mt19937_64 rng(36);
  for (int k = 0; k < 20; ++k) {
    const auto rows = random_rows(rng);
    const AlphaParams a(oracle::random_alpha(rng, 2));
    const Eigen::VectorXd hd = hat_diagonals(rows, a);
    CHECK_THAT(hd.sum(), WithinAbs(5.0, 1e-8));
    CHECK(hd.minCoeff() >= 0.0);
    CHECK(hd.maxCoeff() <= 1.0 + 1e-12);
  }

  // Explicit product V^1/2 Z (Z'VZ)^-1 Z' V^1/2 on ten rows.
  const auto pool = random_rows(rng);
  const std::vector<PseudoRecord> ten(pool.begin(), pool.begin() + 10);
  const oracle::Vec a = oracle::random_alpha(rng, 2);
  Eigen::MatrixXd z(10, 5);
  Eigen::VectorXd sv(10);
  for (int i = 0; i < 10; ++i) {
    z.row(i) = ten[static_cast<std::size_t>(i)].z.transpose();
    const double p = oracle::sigmoid(ten[static_cast<std::size_t>(i)].z.dot(a));
    sv(i) = std::sqrt(ten[static_cast<std::size_t>(i)].weight * p * (1 - p));
  }
  const Eigen::MatrixXd x = sv.asDiagonal() * z;
  const Eigen::MatrixXd hat = x * (x.transpose() * x).inverse() * x.transpose();
  CHECK((hat_diagonals(ten, AlphaParams(a)) - hat.diagonal()).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("modified score vanishes on balanced data at zero", "[missing_fit]") {
  std::vector<PseudoRecord> rows;
  for (double d : {0.0, 5.0, 20.0}) {
    for (int y : {0, 1}) {
      rows.push_back(zrow({1, d, static_cast<double>(y)}, true, 0.5));
      rows.push_back(zrow({1, d, static_cast<double>(y)}, false, 0.5));
    }
  }
  CHECK(firth_score_alpha(rows, AlphaParams::zeros(0)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("Firth fit on a separated 2x2 table", "[missing_fit]") {
  const auto rows = separated_2x2();
  const AlphaReport ml = fit_missingness(rows, false, AlphaParams(Eigen::VectorXd::Zero(2)));
  CHECK((ml.diverged || !ml.converged || ml.alpha.coefficients.cwiseAbs().maxCoeff() > 1e3));

  const AlphaReport fl = fit_missingness(rows, true, AlphaParams(Eigen::VectorXd::Zero(2)));
  REQUIRE(fl.converged);
  // Saturated 2x2 logistic: Firth estimates are the log odds with 1/2 added to each cell.
  const double a0 = std::log(3.5 / 5.5), a1 = std::log(4.5 / 0.5) - a0;
  CHECK_THAT(fl.alpha.coefficients(0), WithinAbs(a0, 1e-8));
  CHECK_THAT(fl.alpha.coefficients(1), WithinAbs(a1, 1e-8));

  // Independent penalized grid search.
  auto penalized = [&](const oracle::Vec& v) {
    double ll = 0.0;
    Eigen::Matrix2d info = Eigen::Matrix2d::Zero();
    for (const auto& r : rows) {
      const double p = oracle::sigmoid(r.z.dot(v));
      ll += r.missing ? std::log(p) : std::log(1 - p);
      info += p * (1 - p) * r.z * r.z.transpose();
    }
    return ll + 0.5 * std::log(info(0, 0) * info(1, 1) - info(0, 1) * info(1, 0));
  };
  oracle::Vec lo(2), hi(2);
  lo << -5, -5;
  hi << 5, 8;
  const oracle::Vec best = oracle::grid_maximize(penalized, lo, hi, 0.05, 0.01);
  CHECK(std::abs(best(0) - fl.alpha.coefficients(0)) <= 0.01);
  CHECK(std::abs(best(1) - fl.alpha.coefficients(1)) <= 0.01);
  CHECK(firth_score_alpha(rows, fl.alpha).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("quasi-separated missingness by dose", "[missing_fit]") {
  const auto rows = placebo_all_missing();
  const AlphaParams init(Eigen::VectorXd::Zero(3));
  const AlphaReport ml = fit_missingness(rows, false, init);
  CHECK((ml.diverged || !ml.converged || ml.alpha.coefficients.cwiseAbs().maxCoeff() > 1e3));
  const AlphaReport fl = fit_missingness(rows, true, init);
  CHECK(fl.converged);
  CHECK(fl.alpha.coefficients.cwiseAbs().maxCoeff() < 1e3);
  CHECK(fl.se.allFinite());
}

TEST_CASE("unweighted data reproduce plain logistic ML", "[missing_fit]") {
  std::mt19937_64 rng(37);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<PseudoRecord> rows;
  for (int i = 0; i < 400; ++i) {
    const double x = normal(rng), d = (i % 4) * 10.0;
    const int y = i % 3 == 0;
    const double p = oracle::sigmoid(-1.0 + 0.8 * x - 0.02 * d + 0.5 * y);
    rows.push_back(zrow({1, x, d, static_cast<double>(y)}, std::bernoulli_distribution(p)(rng)));
  }
  const AlphaReport fit = fit_missingness(rows, false, AlphaParams(Eigen::VectorXd::Zero(4)));
  REQUIRE(fit.converged);
  CHECK(alpha_score(rows, fit.alpha).cwiseAbs().maxCoeff() < 1e-8);

  // Textbook IRLS on the same rows.
  Eigen::MatrixXd z(400, 4);
  Eigen::VectorXd r(400);
  for (int i = 0; i < 400; ++i) {
    z.row(i) = rows[static_cast<std::size_t>(i)].z.transpose();
    r(i) = rows[static_cast<std::size_t>(i)].missing;
  }
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(4);
  for (int it = 0; it < 50; ++it) {
    const Eigen::VectorXd p = (z * beta).unaryExpr([](double v) { return oracle::sigmoid(v); });
    const Eigen::VectorXd w = p.cwiseProduct((1.0 - p.array()).matrix());
    beta += (z.transpose() * w.asDiagonal() * z).ldlt().solve(z.transpose() * (r - p));
  }
  CHECK((fit.alpha.coefficients - beta).cwiseAbs().maxCoeff() < 1e-8);
  CHECK(fit.se.allFinite());
}

TEST_CASE("outcome coefficient recovered on large data", "[missing_fit]") {
  std::mt19937_64 rng(38);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double doses[] = {0, 7.5, 22.5, 75, 225};
  const double truth[] = {-2.5, 3.0, 0.0, -0.05, 1.0};
  std::vector<PseudoRecord> rows;
  for (int i = 0; i < 100000; ++i) {
    const double d = doses[i % 5];
    const double x1 = normal(rng), x2 = normal(rng);
    const int y = unit(rng) < oracle::emax_pi(d, std::log(1.0 / 9.0), std::log(36.0), 7.5);
    const double lin = truth[0] + truth[1] * x1 + truth[2] * x2 + truth[3] * d + truth[4] * y;
    rows.push_back(zrow({1, x1, x2, d, static_cast<double>(y)}, unit(rng) < oracle::sigmoid(lin)));
  }
  const AlphaReport fit = fit_missingness(rows, false, AlphaParams::zeros(2));
  REQUIRE(fit.converged);
  for (int k = 0; k < 5; ++k) CHECK(std::abs(fit.alpha.coefficients(k) - truth[k]) < 3 * fit.se(k));
}

TEST_CASE("Firth identity, convergence from zero and row order", "[missing_fit][property]") {
  std::mt19937_64 rng(39);
  for (int k = 0; k < 20; ++k) {
    auto rows = random_rows(rng);
    const AlphaReport fit = fit_missingness(rows, true, AlphaParams::zeros(2));
    REQUIRE(fit.converged);
    CHECK(firth_score_alpha(rows, fit.alpha).cwiseAbs().maxCoeff() < 1e-8);
    std::shuffle(rows.begin(), rows.end(), rng);
    const AlphaReport again = fit_missingness(rows, true, AlphaParams::zeros(2));
    CHECK((again.alpha.coefficients - fit.alpha.coefficients).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("dimension mismatch is reported", "[missing_fit]") {
  std::mt19937_64 rng(40);
  const auto rows = random_rows(rng);
  CHECK_THROWS_AS(alpha_score(rows, AlphaParams::zeros(1)), Error);
  CHECK_THROWS_AS(fit_missingness(rows, false, AlphaParams::zeros(3)), Error);
  try {
    alpha_info(rows, AlphaParams::zeros(1));
  } catch (const Error& e) {
    CHECK(e.module() == "missing_fit");
    CHECK(std::string(e.what()).find("length 5") != std::string::npos);
  }
}
