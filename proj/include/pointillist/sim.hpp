#pragma once

#include "pointillist/clutter.hpp"
#include "pointillist/detection.hpp"
#include "pointillist/gaussmath.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace pointillist {

struct TargetSpec {
  /// Alive on scans birth_scan <= k < death_scan.
  int birth_scan = 0;
  int death_scan = 0;
  /// The state at birth is drawn from this density.
  GaussianDensity initial;
};

struct Scenario {
  int duration = 0;
  std::vector<TargetSpec> targets;
  MotionModel motion;
  MeasurementModel mm;
  DetectionModel pd;
  ClutterModel clutter;
  std::optional<double> gate;
  std::uint64_t seed = 0;
};

/// Throws std::invalid_argument naming the offending field.
void validate_scenario(const Scenario& s);

/// Origin tag of a clutter measurement.
inline constexpr std::int64_t kClutterOrigin = -1;

/// Measurement noise draws outside the box before the detection is dropped.
inline constexpr int kMaxRedraws = 1000;

struct TruthState {
  /// Index into Scenario::targets.
  std::int64_t id = 0;
  Vec x;
};

struct Scan {
  std::vector<TruthState> truth;
  std::vector<Vec> measurements;
  /// Target index or kClutterOrigin, aligned with `measurements`.
  std::vector<std::int64_t> origins;
};

struct ScanData {
  std::vector<Scan> scans;
};

/// Ground truth, thinned detections and clutter on one random stream.
/// Target-originated measurements outside the clutter box are redrawn.
ScanData simulate(const Scenario& s);

/// Optimal subpattern assignment distance with cutoff c > 0 and order p >= 1.
double ospa(std::span<const Vec> estimates, std::span<const Vec> truth, double cutoff, double order);

/// Minimum-cost assignment on a rectangular cost matrix (rows <= cols);
/// returns the column assigned to each row.
std::vector<int> min_cost_assignment(const Mat& cost);

struct MetricOptions {
  double cutoff = 10.0;
  double order = 1.0;
  /// Leading state components compared; 0 compares the full vectors.
  int compare_dims = 0;
};

struct ScanMetrics {
  double ospa = 0.0;
  /// |estimated count - true count|.
  double card_err = 0.0;
  /// Root mean square distance over pairs matched within the cutoff.
  double rmse = 0.0;
};

struct MetricTable {
  std::vector<ScanMetrics> rows;
  ScanMetrics mean;
  ScanMetrics max;
};

MetricTable run_metrics(const ScanData& scans, const std::vector<std::vector<Vec>>& estimates,
                        const MetricOptions& opts = {});

}  // namespace pointillist
