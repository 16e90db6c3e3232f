#pragma once

#include "pointillist/pgfl.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace pointillist {

/// Per-item association state used by the enumeration oracle: absent,
/// present but undetected, or detected as measurement j.
struct OracleState {
  static constexpr int kAbsent = 0;
  static constexpr int kMissed = 1;
  static int assigned(int j) { return 2 + j; }
};

struct OracleOptions {
  /// Maximum number of enumerated joint hypotheses.
  std::uint64_t budget = 20'000'000;
  /// Accumulate pairwise state probabilities (needed for second moments).
  bool pairs = false;
};

/// Exact posterior summary of a single-scan association problem, obtained by
/// summing every feasible hypothesis.
class OracleStats {
 public:
  /// Sum of all hypothesis weights; equals the m-th mixed derivative of the
  /// secular function.
  double total = 0.0;
  std::uint64_t hypotheses = 0;
  int num_measurements = 0;

  struct Item {
    TargetLabel label;
    GaussianMixture prior;
    /// Posterior mixture given assignment to measurement j (empty if infeasible).
    std::vector<GaussianMixture> assigned;
  };
  std::vector<Item> items;
  /// state_prob[t][s]: posterior probability that item t is in state s.
  std::vector<std::vector<double>> state_prob;
  /// pair_prob[a][b][sa * S + sb] for a < b when pairs were requested.
  std::vector<std::vector<std::vector<double>>> pair_prob;
  /// Posterior distribution of the number of present items.
  std::vector<double> cardinality_all;

  /// Posterior intensity; an empty or shared label sums over all items.
  double intensity(const TargetLabel& label, const Vec& x) const;
  /// Second factorial moment density over distinct items matching the label.
  double second_factorial_moment(const TargetLabel& label, const Vec& x1, const Vec& x2) const;
  /// Posterior cardinality of the matching items, indexed 0..n_max.
  std::vector<double> cardinality(const TargetLabel& label, int n_max) const;
  /// Posterior probability that item t is present.
  double existence(std::size_t t) const;
  /// Posterior mean of item t conditioned on presence.
  Vec mean(std::size_t t) const;

 private:
  double item_density(std::size_t t, int state, const Vec& x) const;
  bool matches(std::size_t t, const TargetLabel& label) const;
};

/// Enumerates assignments for the single-detection filter kinds (BM, BMD,
/// PDA, JPDA, IPDA, JIPDA, MHT and their superposed forms, MB).
OracleStats enumeration_oracle(const FilterParams& p, std::span<const Vec> measurements,
                               const OracleOptions& opts = {});

/// Number of feasible assignments of n always-present targets to m
/// measurements: sum_k C(n, k) m! / (m - k)!.
std::uint64_t feasible_assignment_count(int n, int m);

/// Closed-form PHD corrector for intensity D, constant pd and Poisson
/// clutter, evaluated at x.
double phd_corrector(const GaussianMixture& intensity, double pd, const MeasurementModel& mm,
                     const PoissonClutter& clutter, std::span<const Vec> measurements, const Vec& x);

/// Enumeration for an unresolved pair under Poisson clutter, integrating the
/// pair's state by tensor Gauss-Hermite cubature.
struct ResolutionOracleStats {
  double total = 0.0;
  /// Probability of 0, 1 and 2 target-originated measurements.
  std::array<double, 3> origin{};
  Vec mean1;
  Vec mean2;
};

ResolutionOracleStats resolution_oracle(const GaussianDensity& prior1, const GaussianDensity& prior2,
                                        const ResolutionModel& rm, const Mat& R, const PoissonClutter& clutter,
                                        std::span<const Vec> measurements, int order = 40);

}  // namespace pointillist
