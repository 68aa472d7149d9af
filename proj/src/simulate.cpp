#include "emaxem/simulate.hpp"

#include "emaxem/baselines.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <thread>

namespace emaxem {

namespace {

constexpr double kMaxEstimate = 1e3;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::string subject_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "S%05zu", i + 1);
  return buf;
}

}  // namespace

std::uint64_t child_seed(std::uint64_t seed, std::uint64_t k) {
  return splitmix64(splitmix64(seed) ^ splitmix64(k + 0x632be59bd9b4e019ULL));
}

double logit(double p) { return std::log(p / (1.0 - p)); }

void SimDesign::validate() const {
  if (doses.empty()) throw Error("simulate", "design needs at least one dose arm");
  if (n == 0 || n % doses.size() != 0) {
    throw Error("simulate", "n = " + std::to_string(n) + " is not divisible by the " +
                                std::to_string(doses.size()) + " dose arms");
  }
  std::set<double> seen;
  for (double d : doses) {
    if (!(d >= 0.0) || !std::isfinite(d)) throw Error("simulate", "doses must be finite and nonnegative");
    if (!seen.insert(d).second) throw Error("simulate", "doses must be distinct");
  }
  theta_true.validate();
  if (alpha_true.size() != kNumCovariates + 3) {
    throw Error("simulate", "alpha_true must have length " + std::to_string(kNumCovariates + 3) +
                                " (intercept, x1, x2, dose, y), got " +
                                std::to_string(alpha_true.size()));
  }
  for (double a : alpha_true) {
    if (!std::isfinite(a)) throw Error("simulate", "alpha_true must be finite");
  }
}

std::vector<TrialRecord> generate_trial(const SimDesign& design) {
  design.validate();
  std::mt19937_64 rng(design.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const std::size_t per_arm = design.n / design.doses.size();

  std::vector<TrialRecord> data;
  data.reserve(design.n);
  for (double dose : design.doses) {
    const double pi = success_prob(dose, design.theta_true);
    for (std::size_t m = 0; m < per_arm; ++m) {
      TrialRecord rec;
      rec.id = subject_id(data.size());
      rec.dose = dose;
      const double x1 = normal(rng);
      const double x2 = normal(rng);
      rec.covariates = {x1, x2};
      const int y = unif(rng) < pi ? 1 : 0;
      const double lin = design.alpha_true[0] + design.alpha_true[1] * x1 +
                         design.alpha_true[2] * x2 + design.alpha_true[3] * dose +
                         design.alpha_true[4] * y;
      const bool masked = unif(rng) < expit(lin);
      if (!masked) rec.outcome = y;
      data.push_back(std::move(rec));
    }
  }
  return data;
}

std::string_view to_string(Parameter p) {
  switch (p) {
    case Parameter::LogED50: return "log_ED50";
    case Parameter::Emax: return "Emax";
    case Parameter::E0: return "E0";
  }
  return "?";
}

Parameter parse_parameter(std::string_view name) {
  if (name == "log_ED50") return Parameter::LogED50;
  if (name == "Emax") return Parameter::Emax;
  if (name == "E0") return Parameter::E0;
  throw Error("simulate", "unknown parameter '" + std::string(name) + "'");
}

double true_value(const EmaxParams& theta, Parameter p) {
  switch (p) {
    case Parameter::LogED50: return std::log(theta.ed50);
    case Parameter::Emax: return theta.emax;
    case Parameter::E0: return theta.e0;
  }
  return 0.0;
}

bool is_valid_fit(const FitReport& report) {
  if (!report.converged) return false;
  const Eigen::Vector3d est = report.theta.as_vector();
  if (!est.allFinite() || est.cwiseAbs().maxCoeff() >= kMaxEstimate) return false;
  if (!std::isfinite(report.log_ed50) || std::abs(report.log_ed50) >= kMaxEstimate) return false;
  return report.se.allFinite() && std::isfinite(report.log_ed50_se);
}

std::vector<ReplicateEstimate> report_estimates(const FitReport& report, std::size_t replicate) {
  const bool valid = is_valid_fit(report);
  std::vector<ReplicateEstimate> out;
  for (Parameter p : kReportedParameters) {
    ReplicateEstimate e;
    e.replicate = replicate;
    e.method = report.method;
    e.parameter = p;
    e.valid = valid;
    switch (p) {
      case Parameter::LogED50:
        e.estimate = report.log_ed50;
        e.se = report.log_ed50_se;
        std::tie(e.lower, e.upper) = report.log_ed50_ci;
        break;
      case Parameter::Emax:
        e.estimate = report.theta.emax;
        e.se = report.se(1);
        std::tie(e.lower, e.upper) = report.ci.at(1);
        break;
      case Parameter::E0:
        e.estimate = report.theta.e0;
        e.se = report.se(0);
        std::tie(e.lower, e.upper) = report.ci.at(0);
        break;
    }
    out.push_back(e);
  }
  return out;
}

FitReport fit_method(DataSpan data, Method method, const EmControls& controls) {
  switch (method) {
    case Method::CC: return fit_cc(data, false, controls.inner, controls.level);
    case Method::NRI: return fit_nri(data, false, controls.inner, controls.level);
    case Method::IL:
    case Method::FIL: return em_fit(data, method, controls).theta_report;
  }
  throw Error("simulate", "unsupported method");
}

std::vector<MetricsRow> compute_metrics(std::span<const ReplicateEstimate> estimates,
                                        const EmaxParams& truth) {
  std::vector<Method> method_order;
  std::set<std::size_t> replicates;
  for (const auto& e : estimates) {
    if (std::find(method_order.begin(), method_order.end(), e.method) == method_order.end()) {
      method_order.push_back(e.method);
    }
    replicates.insert(e.replicate);
  }

  std::vector<MetricsRow> rows;
  for (Parameter p : kReportedParameters) {
    const double target = true_value(truth, p);
    for (Method m : method_order) {
      MetricsRow row;
      row.parameter = p;
      row.method = m;
      double sum = 0.0, sum_sq = 0.0, sum_se = 0.0, covered = 0.0, sum_len = 0.0;
      std::size_t total = 0;
      for (const auto& e : estimates) {
        if (e.parameter != p || e.method != m) continue;
        ++total;
        if (!e.valid) continue;
        ++row.valid;
        const double err = e.estimate - target;
        sum += err;
        sum_sq += err * err;
        sum_se += e.se;
        covered += (e.lower <= target && target <= e.upper) ? 1.0 : 0.0;
        sum_len += e.upper - e.lower;
      }
      if (total == 0) continue;
      row.replications = total;
      const double s = static_cast<double>(row.valid);
      if (row.valid > 0) {
        row.mbe = sum / s;
        row.estimate = target + row.mbe;
        row.mse = sum_sq / s;
        row.est_se = sum_se / s;
        row.cp = covered / s;
        row.est_length = sum_len / s;
      } else {
        const double nan = std::numeric_limits<double>::quiet_NaN();
        row.estimate = row.mbe = row.mse = row.est_se = row.cp = row.est_length = nan;
      }
      rows.push_back(row);
    }
  }
  return rows;
}

void parallel_for(std::size_t count, std::size_t parallelism,
                  const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::max<std::size_t>(1, std::min(parallelism, count));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

ReplicationStudy run_replications(const SimDesign& design, std::span<const Method> methods,
                                  std::size_t replications, std::size_t parallelism,
                                  const EmControls& controls) {
  design.validate();
  if (replications < 1) throw Error("simulate", "the number of replications must be >= 1");
  if (methods.empty()) throw Error("simulate", "no methods requested");

  struct Slot {
    std::vector<ReplicateEstimate> estimates;
    std::vector<std::string> failures;
    std::size_t missing = 0;
  };
  std::vector<Slot> slots(replications);

  parallel_for(replications, parallelism, [&](std::size_t k) {
    SimDesign rep = design;
    rep.seed = child_seed(design.seed, k);
    const auto data = generate_trial(rep);
    Slot& slot = slots[k];
    slot.missing = static_cast<std::size_t>(
        std::count_if(data.begin(), data.end(), [](const TrialRecord& r) { return r.missing(); }));
    for (Method m : methods) {
      try {
        auto est = report_estimates(fit_method(data, m, controls), k);
        slot.estimates.insert(slot.estimates.end(), est.begin(), est.end());
      } catch (const std::exception& e) {
        slot.failures.push_back("replicate " + std::to_string(k) + " " + std::string(to_string(m)) +
                                ": " + e.what());
        for (Parameter p : kReportedParameters) {
          ReplicateEstimate bad;
          bad.replicate = k;
          bad.method = m;
          bad.parameter = p;
          bad.estimate = bad.se = bad.lower = bad.upper = std::numeric_limits<double>::quiet_NaN();
          slot.estimates.push_back(bad);
        }
      }
    }
  });

  ReplicationStudy study;
  std::size_t missing = 0;
  for (auto& slot : slots) {
    study.estimates.insert(study.estimates.end(), slot.estimates.begin(), slot.estimates.end());
    study.failures.insert(study.failures.end(), slot.failures.begin(), slot.failures.end());
    missing += slot.missing;
  }
  study.missing_rate = static_cast<double>(missing) / static_cast<double>(replications * design.n);
  study.metrics = compute_metrics(study.estimates, design.theta_true);
  return study;
}

double sample_quantile(std::vector<double> values, double prob) {
  if (values.empty()) throw Error("simulate", "quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = prob * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

std::vector<TrialRecord> bootstrap_resample(DataSpan data, std::uint64_t seed, std::size_t b) {
  std::map<double, std::vector<std::size_t>> arms;
  for (std::size_t i = 0; i < data.size(); ++i) arms[data[i].dose].push_back(i);
  std::mt19937_64 rng(child_seed(seed, b));
  std::vector<TrialRecord> sample;
  sample.reserve(data.size());
  for (const auto& [dose, members] : arms) {
    std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
    for (std::size_t m = 0; m < members.size(); ++m) sample.push_back(data[members[pick(rng)]]);
  }
  return sample;
}

BootstrapCurve bootstrap_dose_response(DataSpan data, Method method, std::size_t resamples,
                                       double level, std::span<const double> grid,
                                       std::uint64_t seed, std::size_t parallelism,
                                       const EmControls& controls) {
  if (resamples < 1) throw Error("simulate", "bootstrap needs at least one resample");
  if (!(level > 0.0 && level < 1.0)) throw Error("simulate", "bootstrap level must lie in (0, 1)");
  if (grid.empty()) throw Error("simulate", "bootstrap dose grid is empty");
  validate_dataset(data, "simulate");

  EmControls full_controls = controls;
  full_controls.compute_variance = false;
  FitReport full;
  EmControls resample_controls = full_controls;
  if (method == Method::IL || method == Method::FIL) {
    const EmFit fit = em_fit(data, method, full_controls);
    full = fit.theta_report;
    resample_controls.theta_init = fit.theta_report.theta;
    resample_controls.alpha_init = fit.alpha_report.alpha;
  } else {
    full = fit_method(data, method, full_controls);
  }
  if (!full.converged) {
    throw Error("simulate", std::string(to_string(method)) + " fit to the full data did not converge");
  }

  std::vector<std::vector<double>> curves(resamples);
  parallel_for(resamples, parallelism, [&](std::size_t b) {
    const auto sample = bootstrap_resample(data, seed, b);
    try {
      FitReport fit = (method == Method::IL || method == Method::FIL)
                          ? em_fit(sample, method, resample_controls).theta_report
                          : fit_method(sample, method, resample_controls);
      const Eigen::Vector3d est = fit.theta.as_vector();
      if (!fit.converged || !est.allFinite() || est.cwiseAbs().maxCoeff() >= kMaxEstimate) return;
      std::vector<double> curve;
      curve.reserve(grid.size());
      for (double d : grid) curve.push_back(success_prob(d, fit.theta));
      curves[b] = std::move(curve);
    } catch (const Error&) {
      // counted as a failed resample below
    }
  });

  BootstrapCurve out;
  out.method = method;
  out.resamples = resamples;
  for (const auto& c : curves) out.failed += c.empty() ? 1 : 0;
  if (2 * out.failed > resamples) {
    throw Error("simulate", std::string(to_string(method)) + " bootstrap failed on " +
                                std::to_string(out.failed) + " of " + std::to_string(resamples) +
                                " resamples (failure rate " +
                                std::to_string(static_cast<double>(out.failed) /
                                               static_cast<double>(resamples)) +
                                ")");
  }
  const double tail = 0.5 * (1.0 - level);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    std::vector<double> values;
    values.reserve(resamples);
    for (const auto& c : curves) {
      if (!c.empty()) values.push_back(c[g]);
    }
    CurvePoint pt;
    pt.dose = grid[g];
    pt.point = success_prob(grid[g], full.theta);
    pt.lower = sample_quantile(values, tail);
    pt.upper = sample_quantile(values, 1.0 - tail);
    out.points.push_back(pt);
  }
  return out;
}

}  // namespace emaxem
