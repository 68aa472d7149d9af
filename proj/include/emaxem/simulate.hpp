#pragma once

// Trial generator, replication harness with bias / MSE / coverage metrics,
// and stratified bootstrap dose-response curves.

#include "emaxem/em_engine.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace emaxem {

/// Child seed for stream `k` of a parent seed (SplitMix64 finalizer over the
/// pair). Replicate and bootstrap streams are pure functions of (seed, k), so
/// results do not depend on how work is scheduled across threads.
std::uint64_t child_seed(std::uint64_t seed, std::uint64_t k);

double logit(double p);

struct SimDesign {
  std::size_t n = 450;
  std::vector<double> doses{0.0, 7.5, 22.5, 75.0, 225.0};
  EmaxParams theta_true{logit(0.1), logit(0.8) - logit(0.1), 7.5};
  // (intercept, x1, x2, dose, y); x1 and x2 are independent N(0, 1).
  std::vector<double> alpha_true{-2.5, 3.0, 0.0, -0.05, 1.0};
  std::uint64_t seed = 20240601;

  static constexpr std::size_t kNumCovariates = 2;
  void validate() const;
};

/// One trial: equal arms, y ~ Bernoulli(pi(dose)), outcome masked when
/// r ~ Bernoulli(expit(z' alpha_true)) with z = (1, x1, x2, dose, y) draws 1.
std::vector<TrialRecord> generate_trial(const SimDesign& design);

enum class Parameter { LogED50, Emax, E0 };
std::string_view to_string(Parameter p);
Parameter parse_parameter(std::string_view name);
inline constexpr Parameter kReportedParameters[] = {Parameter::LogED50, Parameter::Emax, Parameter::E0};

double true_value(const EmaxParams& theta, Parameter p);

struct ReplicateEstimate {
  std::size_t replicate = 0;
  Method method = Method::CC;
  Parameter parameter = Parameter::E0;
  double estimate = 0.0;
  double se = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  bool valid = false;
};

struct MetricsRow {
  Parameter parameter = Parameter::E0;
  Method method = Method::CC;
  double estimate = 0.0;   // mean over valid replicates
  double mbe = 0.0;
  double mse = 0.0;
  double est_se = 0.0;
  double cp = 0.0;
  double est_length = 0.0;
  std::size_t valid = 0;   // s
  std::size_t replications = 0;  // N
};

/// Valid-estimate rule: converged, every |estimate| < 1e3, every SE finite.
bool is_valid_fit(const FitReport& report);

/// Estimates of one fitted report on the (log ED50, Emax, E0) scale.
std::vector<ReplicateEstimate> report_estimates(const FitReport& report, std::size_t replicate);

/// Fits one method to one dataset. CC/NRI use unpenalized fits.
FitReport fit_method(DataSpan data, Method method, const EmControls& controls);

/// Metrics per (parameter, method) over the valid estimates; rows ordered by
/// parameter (log ED50, Emax, E0) then by first appearance of the method.
std::vector<MetricsRow> compute_metrics(std::span<const ReplicateEstimate> estimates,
                                        const EmaxParams& truth);

struct ReplicationStudy {
  std::vector<ReplicateEstimate> estimates;
  std::vector<MetricsRow> metrics;
  std::vector<std::string> failures;  // per-replicate errors, in replicate order
  double missing_rate = 0.0;           // over all generated records
};

ReplicationStudy run_replications(const SimDesign& design, std::span<const Method> methods,
                                  std::size_t replications, std::size_t parallelism,
                                  const EmControls& controls = {});

struct CurvePoint {
  double dose = 0.0;
  double point = 0.0;
  double lower = 0.0;
  double upper = 0.0;
};

struct BootstrapCurve {
  Method method = Method::FIL;
  std::vector<CurvePoint> points;
  std::size_t resamples = 0;
  std::size_t failed = 0;
};

/// Resample `b` of the stratified bootstrap: each dose arm is redrawn with
/// replacement at its own size, arms in increasing dose order.
std::vector<TrialRecord> bootstrap_resample(DataSpan data, std::uint64_t seed, std::size_t b);

/// Resamples subjects with replacement within dose arms, refits, and forms
/// percentile intervals for success_prob at each grid dose. The point
/// estimate comes from the fit to the full data. Throws if more than half
/// of the resamples fail.
BootstrapCurve bootstrap_dose_response(DataSpan data, Method method, std::size_t resamples,
                                       double level, std::span<const double> grid,
                                       std::uint64_t seed, std::size_t parallelism = 1,
                                       const EmControls& controls = {});

/// Type-7 (linear interpolation) sample quantile; `values` need not be sorted.
double sample_quantile(std::vector<double> values, double prob);

/// Runs fn(i) for i in [0, count) on up to `parallelism` threads.
void parallel_for(std::size_t count, std::size_t parallelism,
                  const std::function<void(std::size_t)>& fn);

}  // namespace emaxem
