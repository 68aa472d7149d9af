#include "emaxem/baselines.hpp"

namespace emaxem {

namespace {

std::vector<PseudoRecord> unit_rows(DataSpan data) {
  std::vector<PseudoRecord> rows;
  rows.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& rec = data[i];
    if (rec.missing()) continue;
    rows.push_back({i, rec.dose, false, *rec.outcome, 1.0, Eigen::VectorXd()});
  }
  return rows;
}

FitReport fit_rows(const std::vector<PseudoRecord>& rows, Method method, bool firth,
                   const NewtonControls& controls, double level, const char* module) {
  if (distinct_doses(rows) < 2) {
    throw Error(module, "fewer than 2 dose levels have observed outcomes");
  }
  FitReport report = fit_emax(rows, firth, default_emax_init(rows), controls);
  report.method = method;
  if (level != 0.95) finalize_report(report, level);
  return report;
}

}  // namespace

FitReport fit_cc(DataSpan data, bool firth, const NewtonControls& controls, double level) {
  validate_dataset(data, "baselines");
  return fit_rows(unit_rows(data), Method::CC, firth, controls, level, "baselines");
}

std::vector<TrialRecord> impute_nonresponders(DataSpan data) {
  std::vector<TrialRecord> out(data.begin(), data.end());
  for (auto& rec : out) {
    if (rec.missing()) rec.outcome = 0;
  }
  return out;
}

FitReport fit_nri(DataSpan data, bool firth, const NewtonControls& controls, double level) {
  validate_dataset(data, "baselines");
  const auto imputed = impute_nonresponders(data);
  return fit_rows(unit_rows(imputed), Method::NRI, firth, controls, level, "baselines");
}

}  // namespace emaxem
