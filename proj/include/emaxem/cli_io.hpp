#pragma once

// CSV ingestion, run configuration, and result serialization.
//
// Input dataset (CSV, header row required):
//   <id>,<dose>,<outcome>,<covariate>...
//   outcome is 0, 1, or missing ("NA" or empty).
//
// Output tables (CSV headers below; JSON carries the same fields):
//   fit        kFitHeader, one row per parameter per method
//   simulate   kMetricsHeader, one row per parameter x method
//   bootstrap  kCurveHeader, one row per method x dose
//   plot data  kEstimatesHeader, one row per replicate x method x parameter

#include "emaxem/em_engine.hpp"
#include "emaxem/simulate.hpp"

#include <json.hpp>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace emaxem {

inline constexpr const char* kFitHeader =
    "method,component,parameter,estimate,std_err,z_value,p_value,ci_lower,ci_upper,converged,"
    "iterations";
inline constexpr const char* kMetricsHeader =
    "parameter,method,estimate,mbe,mse,est_se,cp,est_length,valid,replications";
inline constexpr const char* kCurveHeader = "method,dose,point,lower,upper,resamples,failed";
inline constexpr const char* kEstimatesHeader =
    "replicate,method,parameter,estimate,std_err,ci_lower,ci_upper,valid";

enum class RunMode { Fit, Simulate, Bootstrap };
enum class OutputFormat { Csv, Json };

std::string_view to_string(RunMode mode);
RunMode parse_mode(std::string_view name);
OutputFormat parse_format(std::string_view name);

struct ColumnSchema {
  std::string id = "id";
  std::string dose = "dose";
  std::string outcome = "y";
  std::vector<std::string> covariates;
};

struct RunConfig {
  RunMode mode = RunMode::Fit;
  std::string input;
  ColumnSchema columns;
  std::vector<Method> methods{Method::CC, Method::NRI, Method::IL, Method::FIL};
  EmControls controls;
  SimDesign design;
  std::size_t replications = 200;
  std::size_t resamples = 400;
  std::vector<double> grid;  // empty: the dataset's dose levels
  std::string output;        // empty: standard output
  OutputFormat format = OutputFormat::Csv;
  std::string plot_data;     // optional long-format table path
  std::uint64_t seed = 20240601;
  std::size_t threads = 1;

  /// Checks mode-required fields.
  void validate() const;
};

/// Builds a config from JSON. Unknown keys are rejected with the key named.
RunConfig parse_config(const nlohmann::json& doc, RunMode mode);
RunConfig load_config(const std::string& path, RunMode mode);

std::vector<TrialRecord> parse_dataset(std::istream& in, const ColumnSchema& schema,
                                       const std::string& source = "<stream>");
std::vector<TrialRecord> parse_dataset(const std::string& path, const ColumnSchema& schema);
void write_dataset(std::ostream& out, DataSpan data, const ColumnSchema& schema);
void write_dataset(const std::string& path, DataSpan data, const ColumnSchema& schema);

/// Round-trippable decimal text (17 significant digits); NaN becomes "NA".
std::string format_number(double value);

struct MethodResult {
  Method method = Method::CC;
  FitReport report;
  std::optional<AlphaReport> alpha;  // IL / FIL only
};

std::string fit_results_csv(std::span<const MethodResult> results, const ColumnSchema& schema);
nlohmann::json fit_results_json(std::span<const MethodResult> results, const ColumnSchema& schema);
std::string metrics_csv(std::span<const MetricsRow> rows);
nlohmann::json metrics_json(const ReplicationStudy& study);
std::string curves_csv(std::span<const BootstrapCurve> curves);
nlohmann::json curves_json(std::span<const BootstrapCurve> curves);

/// Long-format table of per-replicate estimates (header kEstimatesHeader).
void emit_plot_data(std::span<const ReplicateEstimate> estimates, const std::string& path,
                    OutputFormat format);
/// Per-dose curve table (header kCurveHeader).
void emit_plot_data(std::span<const BootstrapCurve> curves, const std::string& path,
                    OutputFormat format);
/// Reads a CSV long table written by emit_plot_data.
std::vector<ReplicateEstimate> parse_estimates_table(std::istream& in);

/// Executes a configured run, writing artifacts to disk (or `out` when no
/// output path is configured). Returns the process exit status.
int run(const RunConfig& config, std::ostream& out, std::ostream& err);

/// Single-line machine-parsable error: error module=<m> message="<text>".
std::string format_error(const std::string& module, const std::string& message);

}  // namespace emaxem
