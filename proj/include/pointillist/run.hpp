#pragma once

#include "pointillist/filters.hpp"
#include "pointillist/sim.hpp"

#include <json.hpp>

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace pointillist {

/// Invalid configuration; the message starts with the path of the field.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Numerical failure during a run, tagged with the scan index.
class ScanFailure : public std::runtime_error {
 public:
  ScanFailure(int scan, const std::string& what);
  int scan() const { return scan_; }

 private:
  int scan_;
};

struct InitialState {
  std::vector<GaussianDensity> targets;
  std::vector<double> existence;
  GaussianMixture intensity;
  std::vector<double> cardinality;
  std::vector<GaussianMixture> groups;
};

struct RunConfig {
  /// Input document with every default filled in.
  nlohmann::json normalized;
  Scenario scenario;
  /// When set, measurements are read from this CSV instead of simulated.
  std::string scans_file;
  FilterConfig filter;
  InitialState initial;
  /// Posterior statistics from the enumeration reference instead of derivatives.
  bool reference = false;
  MetricOptions metrics;
  std::string out_dir = "out";
};

/// Command-line overrides applied before parsing.
struct ConfigOverrides {
  std::string filter;
  std::string method;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
};

/// `base_dir` resolves relative file paths inside the document.
RunConfig parse_config(nlohmann::json doc, const std::string& base_dir = ".", const ConfigOverrides& ov = {});
RunConfig load_config(const std::string& path, const ConfigOverrides& ov = {});

FilterState initial_state(const RunConfig& cfg);

/// Scan data in the measurements.csv schema; truth is empty.
ScanData read_measurements_csv(const std::string& path);

struct RunResult {
  ScanData data;
  std::vector<std::vector<Estimate>> estimates;
  std::vector<PosteriorStats> stats;
  MetricTable metrics;
  /// |Psi(1, 1) - 1| of the first scan's expression.
  double psi_residual = 0.0;
  /// Scan likelihood of the first scan by each differentiation method.
  nlohmann::json diagnostics;
  double seconds = 0.0;
};

RunResult run_filter(const RunConfig& cfg);

/// Writes tracks.csv, measurements.csv, metrics.csv, summary.json and plot.svg.
void write_outputs(const RunConfig& cfg, const RunResult& r, const std::string& dir);

/// 17 significant digits.
std::string format_double(double v);

std::string tracks_csv(const RunResult& r);
std::string measurements_csv(const ScanData& d);
std::string metrics_csv(const MetricTable& m);
std::string plot_svg(const RunResult& r);

/// Names accepted by demo_config.
const std::vector<std::string>& demo_names();
nlohmann::json demo_config(const std::string& name);

/// Residual above which an expression is reported as not normalized.
inline constexpr double kNormalizationTolerance = 1e-9;

/// Exit status of the normalization check: 0 when |Psi(1,1) - 1| is within
/// tolerance, 3 otherwise (with a diagnostic on `err`).
int check_normalization(const PgflExpr& e, std::ostream& err);

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

/// Entry point of the command-line tool.
int cli_main(int argc, char** argv);

}  // namespace pointillist
