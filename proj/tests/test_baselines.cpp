#include "emaxem/baselines.hpp"
#include "emaxem/simulate.hpp"
#include "oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <vector>

using namespace emaxem;
using Catch::Approx;
using oracle::record;

namespace {

const std::optional<int> NA;

std::vector<TrialRecord> generated(std::uint64_t seed, std::size_t n = 150) {
  SimDesign d;
  d.n = n;
  d.seed = seed;
  return generate_trial(d);
}

void check_same(const FitReport& a, const FitReport& b, double tol) {
  CHECK(a.theta.e0 == Approx(b.theta.e0).margin(tol));
  CHECK(a.theta.emax == Approx(b.theta.emax).margin(tol));
  CHECK(a.theta.ed50 == Approx(b.theta.ed50).margin(tol));
}

// Three arms, three parameters: the fit is saturated, so E0 is the placebo logit.
std::vector<TrialRecord> twenty_records() {
  std::vector<TrialRecord> d;
  for (int y : {1, 1, 0, 0, 0}) d.push_back(record(0, y));
  d.push_back(record(0, NA));
  for (int y : {1, 1, 1, 1, 0, 0, 0}) d.push_back(record(10, y));
  for (int y : {1, 1, 1, 1, 1, 0, 0}) d.push_back(record(100, y));
  return d;
}

}  // namespace

TEST_CASE("CC and NRI equal the full-data fit without missing outcomes", "[baselines]") {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
    auto data = generated(seed);
    for (auto& r : data) {
      if (!r.outcome) r.outcome = 1;
    }
    const auto rows = expand_dataset(data);
    for (bool firth : {false, true}) {
      const auto full = fit_emax(rows, firth, default_emax_init(rows));
      const auto cc = fit_cc(data, firth);
      const auto nri = fit_nri(data, firth);
      check_same(cc, full, 1e-12);
      check_same(nri, full, 1e-12);
      CHECK(cc.method == Method::CC);
      CHECK(nri.method == Method::NRI);
      CHECK(cc.converged == full.converged);
    }
  }
}

TEST_CASE("CC and NRI are invariant to record order", "[baselines]") {
  std::mt19937_64 rng(3);
  for (std::uint64_t seed : {5u, 6u, 7u}) {
    const auto data = generated(seed);
    auto shuffled = data;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    check_same(fit_cc(shuffled), fit_cc(data), 1e-8);
    check_same(fit_nri(shuffled), fit_nri(data), 1e-8);
  }
}

TEST_CASE("a missing placebo record imputed as failure lowers E0", "[baselines]") {
  const auto data = twenty_records();
  const auto cc = fit_cc(data);
  const auto nri = fit_nri(data);
  REQUIRE(cc.converged);
  REQUIRE(nri.converged);
  CHECK(cc.theta.e0 == Approx(std::log(2.0 / 3.0)).margin(1e-6));
  CHECK(nri.theta.e0 == Approx(std::log(2.0 / 4.0)).margin(1e-6));
  CHECK(nri.theta.e0 < cc.theta.e0);
  // The other arms are untouched, so both fits reproduce their proportions.
  for (const auto* f : {&cc, &nri}) {
    CHECK(success_prob(10, f->theta) == Approx(4.0 / 7.0).margin(1e-6));
    CHECK(success_prob(100, f->theta) == Approx(5.0 / 7.0).margin(1e-6));
  }
}

TEST_CASE("imputation fills every missing outcome with a failure", "[baselines]") {
  const auto data = generated(9);
  const auto imputed = impute_nonresponders(data);
  REQUIRE(imputed.size() == data.size());
  std::size_t filled = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    REQUIRE(imputed[i].outcome.has_value());
    if (data[i].outcome) {
      CHECK(*imputed[i].outcome == *data[i].outcome);
    } else {
      CHECK(*imputed[i].outcome == 0);
      ++filled;
    }
    CHECK(imputed[i].dose == data[i].dose);
    CHECK(imputed[i].covariates == data[i].covariates);
  }
  CHECK(filled > 0);
}

TEST_CASE("CC uses exactly the observed records", "[baselines]") {
  const auto data = generated(10);
  std::vector<TrialRecord> observed;
  for (const auto& r : data) {
    if (r.outcome) observed.push_back(r);
  }
  CHECK(observed.size() < data.size());
  check_same(fit_cc(data), fit_cc(observed), 1e-12);
}

TEST_CASE("baselines need two dose levels with observed outcomes", "[baselines]") {
  const std::vector<TrialRecord> data{record(0, 1), record(0, 0), record(5, NA), record(5, NA)};
  CHECK_THROWS_AS(fit_cc(data), Error);
  CHECK_NOTHROW(fit_nri(data));
  const std::vector<TrialRecord> empty;
  CHECK_THROWS_AS(fit_nri(empty), Error);
}

TEST_CASE("level changes the interval but not the estimate", "[baselines]") {
  const auto data = generated(11);
  const auto a = fit_cc(data, false, {}, 0.95);
  const auto b = fit_cc(data, false, {}, 0.80);
  check_same(a, b, 0.0);
  const double z80 = normal_quantile(0.9);
  CHECK(b.ci[0].second - b.ci[0].first == Approx(2.0 * z80 * b.se(0)).epsilon(1e-12));
  CHECK(b.ci[0].second - b.ci[0].first < a.ci[0].second - a.ci[0].first);
}

TEST_CASE("CC bias pattern over 200 generated trials", "[baselines]") {
  SimDesign d;
  const Method methods[] = {Method::CC};
  const auto study = run_replications(d, methods, 200, 4);
  const MetricsRow* log_ed50 = nullptr;
  const MetricsRow* e0 = nullptr;
  for (const auto& row : study.metrics) {
    if (row.parameter == Parameter::LogED50) log_ed50 = &row;
    if (row.parameter == Parameter::E0) e0 = &row;
  }
  REQUIRE(log_ed50 != nullptr);
  REQUIRE(e0 != nullptr);
  CHECK(std::abs(log_ed50->estimate - 2.077) <= 0.15);
  CHECK(std::abs(e0->mbe - (-0.23)) <= 0.1);
}
