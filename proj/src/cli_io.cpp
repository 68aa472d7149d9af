#include "emaxem/cli_io.hpp"

#include "emaxem/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <type_traits>

namespace emaxem {

using nlohmann::json;

namespace {

const char* kModule = "cli_io";

[[noreturn]] void fail(const std::string& message) { throw Error(kModule, message); }

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        field.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else {
      field.push_back(c);
    }
  }
  fields.push_back(std::move(field));
  return fields;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

bool parse_double(const std::string& text, double& out) {
  if (text.empty()) return false;
  char* end = nullptr;
  out = std::strtod(text.c_str(), &end);
  return end == text.c_str() + text.size() && std::isfinite(out);
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

json number_json(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double two_sided_p(double z) { return std::erfc(std::abs(z) / std::sqrt(2.0)); }

std::vector<std::string> alpha_names(const ColumnSchema& schema, std::size_t p) {
  std::vector<std::string> names{"intercept"};
  for (std::size_t k = 0; k < p; ++k) {
    names.push_back(k < schema.covariates.size() ? schema.covariates[k] : "x" + std::to_string(k + 1));
  }
  names.emplace_back("dose");
  names.emplace_back("y");
  return names;
}

// Reads a key set, rejecting anything outside `allowed`.
void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) fail("config " + where + " must be a JSON object");
  for (const auto& item : obj.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&](const char* k) { return item.key() == k; });
    if (!known) fail("unknown config key '" + (where.empty() ? "" : where + ".") + item.key() + "'");
  }
}

template <typename T>
T get_as(const json& obj, const char* key, const std::string& where) {
  const std::string name = (where.empty() ? "" : where + ".") + key;
  const json& v = obj.at(key);
  // nlohmann converts -3 to size_t and 1.5 to int silently; refuse both.
  if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
    if (std::is_unsigned_v<T> ? !v.is_number_unsigned() : !v.is_number_integer()) {
      fail("config key '" + name + "' must be " +
           (std::is_unsigned_v<T> ? "a nonnegative integer" : "an integer"));
    }
  }
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    fail("config key '" + name + "' has the wrong type");
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail("cannot open '" + path + "' for writing");
  f << text;
  if (!f) fail("failed writing '" + path + "'");
}

std::string estimates_csv(std::span<const ReplicateEstimate> estimates) {
  std::ostringstream os;
  os << kEstimatesHeader << '\n';
  for (const auto& e : estimates) {
    os << e.replicate << ',' << to_string(e.method) << ',' << to_string(e.parameter) << ','
       << format_number(e.estimate) << ',' << format_number(e.se) << ',' << format_number(e.lower)
       << ',' << format_number(e.upper) << ',' << (e.valid ? 1 : 0) << '\n';
  }
  return os.str();
}

json estimates_json(std::span<const ReplicateEstimate> estimates) {
  json rows = json::array();
  for (const auto& e : estimates) {
    rows.push_back({{"replicate", e.replicate},
                    {"method", to_string(e.method)},
                    {"parameter", to_string(e.parameter)},
                    {"estimate", number_json(e.estimate)},
                    {"std_err", number_json(e.se)},
                    {"ci_lower", number_json(e.lower)},
                    {"ci_upper", number_json(e.upper)},
                    {"valid", e.valid}});
  }
  return rows;
}

std::vector<MethodResult> fit_all(const RunConfig& config, DataSpan data) {
  std::vector<MethodResult> results;
  for (Method m : config.methods) {
    MethodResult r;
    r.method = m;
    if (m == Method::IL || m == Method::FIL) {
      EmFit fit = em_fit(data, m, config.controls);
      r.report = fit.theta_report;
      r.alpha = fit.alpha_report;
    } else {
      r.report = fit_method(data, m, config.controls);
    }
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace

std::string_view to_string(RunMode mode) {
  switch (mode) {
    case RunMode::Fit: return "fit";
    case RunMode::Simulate: return "simulate";
    case RunMode::Bootstrap: return "bootstrap";
  }
  return "?";
}

RunMode parse_mode(std::string_view name) {
  if (name == "fit") return RunMode::Fit;
  if (name == "simulate") return RunMode::Simulate;
  if (name == "bootstrap") return RunMode::Bootstrap;
  fail("unknown mode '" + std::string(name) + "' (expected fit, simulate or bootstrap)");
}

OutputFormat parse_format(std::string_view name) {
  if (name == "csv") return OutputFormat::Csv;
  if (name == "json") return OutputFormat::Json;
  fail("unknown format '" + std::string(name) + "' (expected csv or json)");
}

std::string format_number(double value) {
  if (std::isnan(value)) return "NA";
  if (std::isinf(value)) return value > 0 ? "Inf" : "-Inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

std::string format_error(const std::string& module, const std::string& message) {
  std::string clean;
  for (char c : message) {
    if (c == '\n' || c == '\r') clean += ' ';
    else if (c == '"') clean += '\'';
    else clean += c;
  }
  return "error module=" + module + " message=\"" + clean + "\"";
}

void RunConfig::validate() const {
  if ((mode == RunMode::Fit || mode == RunMode::Bootstrap) && input.empty()) {
    fail("mode '" + std::string(to_string(mode)) + "' requires an input dataset");
  }
  if (methods.empty()) fail("at least one method is required");
  if (mode == RunMode::Simulate) {
    design.validate();
    if (replications < 1) fail("replications must be >= 1");
  }
  if (mode == RunMode::Bootstrap && resamples < 1) fail("resamples must be >= 1");
  if (!(controls.level > 0.0 && controls.level < 1.0)) fail("level must lie in (0, 1)");
  if (threads < 1) fail("threads must be >= 1");
  controls.validate();
}

RunConfig parse_config(const json& doc, RunMode mode) {
  check_keys(doc, {"mode", "input", "columns", "methods", "controls", "level", "design",
                   "replications", "bootstrap", "output", "format", "plot_data", "seed", "threads"},
             "");
  RunConfig cfg;
  cfg.mode = mode;
  if (doc.contains("mode") && parse_mode(get_as<std::string>(doc, "mode", "")) != mode) {
    fail("config mode '" + get_as<std::string>(doc, "mode", "") + "' does not match subcommand '" +
         std::string(to_string(mode)) + "'");
  }
  if (doc.contains("input")) cfg.input = get_as<std::string>(doc, "input", "");
  if (doc.contains("columns")) {
    const json& c = doc.at("columns");
    check_keys(c, {"id", "dose", "outcome", "covariates"}, "columns");
    if (c.contains("id")) cfg.columns.id = get_as<std::string>(c, "id", "columns");
    if (c.contains("dose")) cfg.columns.dose = get_as<std::string>(c, "dose", "columns");
    if (c.contains("outcome")) cfg.columns.outcome = get_as<std::string>(c, "outcome", "columns");
    if (c.contains("covariates")) {
      cfg.columns.covariates = get_as<std::vector<std::string>>(c, "covariates", "columns");
    }
  }
  if (doc.contains("methods")) {
    cfg.methods.clear();
    for (const auto& name : get_as<std::vector<std::string>>(doc, "methods", "")) {
      try {
        cfg.methods.push_back(parse_method(name));
      } catch (const Error& e) {
        fail(std::string("config key 'methods': ") + e.what());
      }
    }
  }
  if (doc.contains("controls")) {
    const json& c = doc.at("controls");
    check_keys(c, {"max_em_iter", "em_tol", "max_iter", "tol", "max_step_halvings", "ridge",
                  "penalty_scale"},
               "controls");
    if (c.contains("max_em_iter")) cfg.controls.max_em_iter = get_as<int>(c, "max_em_iter", "controls");
    if (c.contains("em_tol")) cfg.controls.em_tol = get_as<double>(c, "em_tol", "controls");
    if (c.contains("max_iter")) cfg.controls.inner.max_iter = get_as<int>(c, "max_iter", "controls");
    if (c.contains("tol")) cfg.controls.inner.tol = get_as<double>(c, "tol", "controls");
    if (c.contains("max_step_halvings")) {
      cfg.controls.inner.max_step_halvings = get_as<int>(c, "max_step_halvings", "controls");
    }
    if (c.contains("ridge")) cfg.controls.inner.ridge = get_as<double>(c, "ridge", "controls");
    if (c.contains("penalty_scale")) {
      const auto scale = get_as<std::string>(c, "penalty_scale", "controls");
      if (scale == "log_ed50") {
        cfg.controls.penalty_scale = PenaltyScale::LogEd50;
      } else if (scale == "ed50") {
        cfg.controls.penalty_scale = PenaltyScale::Ed50;
      } else {
        fail("config key 'controls.penalty_scale' must be log_ed50 or ed50, got '" + scale + "'");
      }
    }
  }
  if (doc.contains("level")) cfg.controls.level = get_as<double>(doc, "level", "");
  if (doc.contains("design")) {
    const json& d = doc.at("design");
    check_keys(d, {"n", "doses", "theta", "alpha"}, "design");
    if (d.contains("n")) cfg.design.n = get_as<std::size_t>(d, "n", "design");
    if (d.contains("doses")) cfg.design.doses = get_as<std::vector<double>>(d, "doses", "design");
    if (d.contains("alpha")) cfg.design.alpha_true = get_as<std::vector<double>>(d, "alpha", "design");
    if (d.contains("theta")) {
      const json& t = d.at("theta");
      check_keys(t, {"e0", "emax", "ed50"}, "design.theta");
      if (t.contains("e0")) cfg.design.theta_true.e0 = get_as<double>(t, "e0", "design.theta");
      if (t.contains("emax")) cfg.design.theta_true.emax = get_as<double>(t, "emax", "design.theta");
      if (t.contains("ed50")) cfg.design.theta_true.ed50 = get_as<double>(t, "ed50", "design.theta");
    }
  }
  if (doc.contains("replications")) cfg.replications = get_as<std::size_t>(doc, "replications", "");
  if (doc.contains("bootstrap")) {
    const json& b = doc.at("bootstrap");
    check_keys(b, {"resamples", "grid"}, "bootstrap");
    if (b.contains("resamples")) cfg.resamples = get_as<std::size_t>(b, "resamples", "bootstrap");
    if (b.contains("grid")) cfg.grid = get_as<std::vector<double>>(b, "grid", "bootstrap");
  }
  if (doc.contains("output")) cfg.output = get_as<std::string>(doc, "output", "");
  if (doc.contains("format")) cfg.format = parse_format(get_as<std::string>(doc, "format", ""));
  if (doc.contains("plot_data")) cfg.plot_data = get_as<std::string>(doc, "plot_data", "");
  if (doc.contains("seed")) cfg.seed = get_as<std::uint64_t>(doc, "seed", "");
  if (doc.contains("threads")) cfg.threads = get_as<std::size_t>(doc, "threads", "");
  cfg.design.seed = cfg.seed;
  return cfg;
}

RunConfig load_config(const std::string& path, RunMode mode) {
  std::ifstream f(path);
  if (!f) fail("cannot open config '" + path + "'");
  json doc;
  try {
    doc = json::parse(f);
  } catch (const json::parse_error& e) {
    fail("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(doc, mode);
}

std::vector<TrialRecord> parse_dataset(std::istream& in, const ColumnSchema& schema,
                                       const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) fail(source + ": missing header row");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_csv_line(line);

  auto column = [&](const std::string& name, bool required) -> long {
    for (std::size_t k = 0; k < header.size(); ++k) {
      if (trim(header[k]) == name) return static_cast<long>(k);
    }
    if (required) fail(source + ": header has no column '" + name + "'");
    return -1;
  };
  const long id_col = column(schema.id, false);
  const long dose_col = column(schema.dose, true);
  const long y_col = column(schema.outcome, true);
  std::vector<long> cov_cols;
  for (const auto& name : schema.covariates) cov_cols.push_back(column(name, true));

  std::vector<TrialRecord> data;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size()) {
      fail(source + ": row " + std::to_string(row) + " has " + std::to_string(fields.size()) +
           " fields, header has " + std::to_string(header.size()));
    }
    auto cell = [&](long col) { return trim(fields[static_cast<std::size_t>(col)]); };
    auto where = [&](const std::string& col) {
      return source + ": row " + std::to_string(row) + ", column '" + col + "'";
    };

    TrialRecord rec;
    rec.id = id_col >= 0 ? cell(id_col) : std::to_string(row - 1);
    if (!parse_double(cell(dose_col), rec.dose)) fail(where(schema.dose) + ": malformed number '" + cell(dose_col) + "'");
    if (rec.dose < 0.0) fail(where(schema.dose) + ": negative dose");
    const std::string y = cell(y_col);
    if (y == "0") {
      rec.outcome = 0;
    } else if (y == "1") {
      rec.outcome = 1;
    } else if (!(y.empty() || y == "NA")) {
      fail(where(schema.outcome) + ": outcome must be 0, 1, NA or empty, got '" + y + "'");
    }
    for (std::size_t k = 0; k < cov_cols.size(); ++k) {
      double v = 0.0;
      if (!parse_double(cell(cov_cols[k]), v)) {
        fail(where(schema.covariates[k]) + ": malformed number '" + cell(cov_cols[k]) + "'");
      }
      rec.covariates.push_back(v);
    }
    data.push_back(std::move(rec));
  }
  return data;
}

std::vector<TrialRecord> parse_dataset(const std::string& path, const ColumnSchema& schema) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail("cannot open dataset '" + path + "'");
  return parse_dataset(f, schema, path);
}

void write_dataset(std::ostream& out, DataSpan data, const ColumnSchema& schema) {
  out << csv_quote(schema.id) << ',' << csv_quote(schema.dose) << ',' << csv_quote(schema.outcome);
  for (const auto& c : schema.covariates) out << ',' << csv_quote(c);
  out << '\n';
  for (const auto& rec : data) {
    if (rec.covariates.size() != schema.covariates.size()) {
      fail("record '" + rec.id + "' has " + std::to_string(rec.covariates.size()) +
           " covariates but the schema names " + std::to_string(schema.covariates.size()));
    }
    out << csv_quote(rec.id) << ',' << format_number(rec.dose) << ','
        << (rec.outcome ? std::to_string(*rec.outcome) : std::string("NA"));
    for (double x : rec.covariates) out << ',' << format_number(x);
    out << '\n';
  }
}

void write_dataset(const std::string& path, DataSpan data, const ColumnSchema& schema) {
  std::ostringstream os;
  write_dataset(os, data, schema);
  write_text(path, os.str());
}

std::string fit_results_csv(std::span<const MethodResult> results, const ColumnSchema& schema) {
  std::ostringstream os;
  os << kFitHeader << '\n';
  for (const auto& r : results) {
    const auto& rep = r.report;
    const std::string tail = std::string(",") + (rep.converged ? "1" : "0") + "," +
                             std::to_string(rep.iterations);
    const std::string m(to_string(r.method));
    const char* names[] = {"E0", "Emax", "ED50"};
    const Eigen::Vector3d est = rep.theta.as_vector();
    for (int k = 0; k < 3; ++k) {
      const auto ci = rep.ci.size() == 3 ? rep.ci[static_cast<std::size_t>(k)]
                                         : std::pair{std::nan(""), std::nan("")};
      os << m << ",emax," << names[k] << ',' << format_number(est(k)) << ','
         << format_number(rep.se(k)) << ",NA,NA," << format_number(ci.first) << ','
         << format_number(ci.second) << tail << '\n';
    }
    os << m << ",emax,log_ED50," << format_number(rep.log_ed50) << ','
       << format_number(rep.log_ed50_se) << ",NA,NA," << format_number(rep.log_ed50_ci.first) << ','
       << format_number(rep.log_ed50_ci.second) << tail << '\n';
    if (r.alpha) {
      const auto& a = *r.alpha;
      const auto names_a = alpha_names(schema, a.alpha.num_covariates());
      for (Eigen::Index k = 0; k < a.alpha.size(); ++k) {
        const double b = a.alpha.coefficients(k);
        const double se = a.se.size() == a.alpha.size() ? a.se(k) : std::nan("");
        const double z = b / se;
        const auto ci = std::isfinite(se) ? wald_ci(b, se, 0.95) : std::pair{std::nan(""), std::nan("")};
        os << m << ",missingness," << csv_quote(names_a[static_cast<std::size_t>(k)]) << ','
           << format_number(b) << ',' << format_number(se) << ',' << format_number(z) << ','
           << format_number(std::isfinite(z) ? two_sided_p(z) : std::nan("")) << ','
           << format_number(ci.first) << ',' << format_number(ci.second) << tail << '\n';
      }
    }
  }
  return os.str();
}

json fit_results_json(std::span<const MethodResult> results, const ColumnSchema& schema) {
  json out = json::array();
  for (const auto& r : results) {
    const auto& rep = r.report;
    json j;
    j["method"] = to_string(r.method);
    j["converged"] = rep.converged;
    j["iterations"] = rep.iterations;
    j["objective"] = number_json(rep.objective);
    j["notes"] = rep.notes;
    const char* names[] = {"E0", "Emax", "ED50"};
    const Eigen::Vector3d est = rep.theta.as_vector();
    json theta = json::object();
    for (int k = 0; k < 3; ++k) {
      const auto ci = rep.ci.size() == 3 ? rep.ci[static_cast<std::size_t>(k)]
                                         : std::pair{std::nan(""), std::nan("")};
      theta[names[k]] = {{"estimate", number_json(est(k))},
                         {"std_err", number_json(rep.se(k))},
                         {"ci", {number_json(ci.first), number_json(ci.second)}}};
    }
    theta["log_ED50"] = {{"estimate", number_json(rep.log_ed50)},
                         {"std_err", number_json(rep.log_ed50_se)},
                         {"ci", {number_json(rep.log_ed50_ci.first), number_json(rep.log_ed50_ci.second)}}};
    j["theta"] = theta;
    json vcov = json::array();
    for (int a = 0; a < 3; ++a) {
      json row = json::array();
      for (int b = 0; b < 3; ++b) row.push_back(number_json(rep.vcov(a, b)));
      vcov.push_back(row);
    }
    j["vcov"] = vcov;
    if (r.alpha) {
      const auto& a = *r.alpha;
      const auto names_a = alpha_names(schema, a.alpha.num_covariates());
      json table = json::array();
      for (Eigen::Index k = 0; k < a.alpha.size(); ++k) {
        const double b = a.alpha.coefficients(k);
        const double se = a.se.size() == a.alpha.size() ? a.se(k) : std::nan("");
        const double z = b / se;
        table.push_back({{"variable", names_a[static_cast<std::size_t>(k)]},
                         {"estimate", number_json(b)},
                         {"std_err", number_json(se)},
                         {"z_value", number_json(z)},
                         {"p_value", number_json(std::isfinite(z) ? two_sided_p(z) : std::nan(""))}});
      }
      j["missingness"] = table;
      // The outcome coefficient is the nonignorability diagnostic.
      j["nonignorability"] = table.back();
    }
    out.push_back(j);
  }
  return out;
}

std::string metrics_csv(std::span<const MetricsRow> rows) {
  std::ostringstream os;
  os << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    os << to_string(r.parameter) << ',' << to_string(r.method) << ',' << format_number(r.estimate)
       << ',' << format_number(r.mbe) << ',' << format_number(r.mse) << ','
       << format_number(r.est_se) << ',' << format_number(r.cp) << ','
       << format_number(r.est_length) << ',' << r.valid << ',' << r.replications << '\n';
  }
  return os.str();
}

json metrics_json(const ReplicationStudy& study) {
  json rows = json::array();
  for (const auto& r : study.metrics) {
    rows.push_back({{"parameter", to_string(r.parameter)},
                    {"method", to_string(r.method)},
                    {"estimate", number_json(r.estimate)},
                    {"mbe", number_json(r.mbe)},
                    {"mse", number_json(r.mse)},
                    {"est_se", number_json(r.est_se)},
                    {"cp", number_json(r.cp)},
                    {"est_length", number_json(r.est_length)},
                    {"valid", r.valid},
                    {"replications", r.replications}});
  }
  return {{"metrics", rows}, {"missing_rate", study.missing_rate}, {"failures", study.failures}};
}

std::string curves_csv(std::span<const BootstrapCurve> curves) {
  std::ostringstream os;
  os << kCurveHeader << '\n';
  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      os << to_string(c.method) << ',' << format_number(p.dose) << ',' << format_number(p.point)
         << ',' << format_number(p.lower) << ',' << format_number(p.upper) << ',' << c.resamples
         << ',' << c.failed << '\n';
    }
  }
  return os.str();
}

json curves_json(std::span<const BootstrapCurve> curves) {
  json out = json::array();
  for (const auto& c : curves) {
    json pts = json::array();
    for (const auto& p : c.points) {
      pts.push_back({{"dose", p.dose},
                     {"point", number_json(p.point)},
                     {"lower", number_json(p.lower)},
                     {"upper", number_json(p.upper)}});
    }
    out.push_back({{"method", to_string(c.method)},
                   {"resamples", c.resamples},
                   {"failed", c.failed},
                   {"points", pts}});
  }
  return out;
}

void emit_plot_data(std::span<const ReplicateEstimate> estimates, const std::string& path,
                    OutputFormat format) {
  if (estimates.empty()) fail("no estimates to write");
  write_text(path, format == OutputFormat::Csv ? estimates_csv(estimates)
                                               : estimates_json(estimates).dump(2) + "\n");
}

void emit_plot_data(std::span<const BootstrapCurve> curves, const std::string& path,
                    OutputFormat format) {
  if (curves.empty()) fail("no curves to write");
  write_text(path, format == OutputFormat::Csv ? curves_csv(curves) : curves_json(curves).dump(2) + "\n");
}

std::vector<ReplicateEstimate> parse_estimates_table(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || trim(line) != kEstimatesHeader) fail("estimates table header mismatch");
  auto number = [](const std::string& s) {
    if (s == "NA") return std::numeric_limits<double>::quiet_NaN();
    double v = 0.0;
    if (!parse_double(s, v)) fail("malformed number '" + s + "' in estimates table");
    return v;
  };
  std::vector<ReplicateEstimate> out;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(trim(line));
    if (f.size() != 8) fail("estimates table row has " + std::to_string(f.size()) + " fields");
    ReplicateEstimate e;
    e.replicate = static_cast<std::size_t>(std::stoull(f[0]));
    e.method = parse_method(f[1]);
    e.parameter = parse_parameter(f[2]);
    e.estimate = number(f[3]);
    e.se = number(f[4]);
    e.lower = number(f[5]);
    e.upper = number(f[6]);
    e.valid = f[7] == "1";
    out.push_back(e);
  }
  return out;
}

int run(const RunConfig& config, std::ostream& out, std::ostream& err) {
  try {
    config.validate();
    std::string text;
    switch (config.mode) {
      case RunMode::Fit: {
        const auto data = parse_dataset(config.input, config.columns);
        const auto results = fit_all(config, data);
        text = config.format == OutputFormat::Csv
                   ? fit_results_csv(results, config.columns)
                   : fit_results_json(results, config.columns).dump(2) + "\n";
        break;
      }
      case RunMode::Simulate: {
        SimDesign design = config.design;
        design.seed = config.seed;
        const auto study = run_replications(design, config.methods, config.replications,
                                            config.threads, config.controls);
        for (const auto& f : study.failures) err << "warning: " << f << '\n';
        text = config.format == OutputFormat::Csv ? metrics_csv(study.metrics)
                                                  : metrics_json(study).dump(2) + "\n";
        if (!config.plot_data.empty()) emit_plot_data(study.estimates, config.plot_data, config.format);
        break;
      }
      case RunMode::Bootstrap: {
        const auto data = parse_dataset(config.input, config.columns);
        std::vector<double> grid = config.grid;
        if (grid.empty()) {
          std::set<double> doses;
          for (const auto& r : data) doses.insert(r.dose);
          grid.assign(doses.begin(), doses.end());
        }
        std::vector<BootstrapCurve> curves;
        for (Method m : config.methods) {
          curves.push_back(bootstrap_dose_response(data, m, config.resamples, config.controls.level,
                                                   grid, config.seed, config.threads,
                                                   config.controls));
        }
        text = config.format == OutputFormat::Csv ? curves_csv(curves) : curves_json(curves).dump(2) + "\n";
        if (!config.plot_data.empty()) emit_plot_data(curves, config.plot_data, config.format);
        break;
      }
    }
    if (config.output.empty()) {
      out << text;
    } else {
      write_text(config.output, text);
    }
    return 0;
  } catch (const Error& e) {
    err << format_error(e.module(), e.what()) << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << format_error("cli_io", e.what()) << '\n';
    return 1;
  }
}

}  // namespace emaxem
