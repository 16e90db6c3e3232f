#pragma once

#include "pointillist/secular.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace pointillist {

struct BernoulliTrack {
  double existence = 1.0;
  GaussianDensity density;
  std::uint64_t id = 0;
};

struct MixtureReduceOptions {
  double prune_threshold = 1e-5;
  /// Components closer than this Mahalanobis distance to the leading one are merged.
  double merge_distance = 4.0;
  std::size_t max_components = 100;
};

struct ReduceReport {
  /// Weight removed by pruning and truncation.
  double pruned_weight = 0.0;
  std::size_t pruned = 0;
  std::size_t merged = 0;
  std::size_t truncated = 0;
};

/// Prune, merge by moment matching, then keep the largest components.
GaussianMixture mixture_reduce(const GaussianMixture& m, const MixtureReduceOptions& opts = {},
                               ReduceReport* report = nullptr);

/// Recursive state; which fields are used depends on `kind`.
struct FilterState {
  FilterKind kind = FilterKind::JPDA;
  /// Fixed-number filters (BM, PDA, JPDA, PMHT, the unresolved pair and
  /// their superposed forms).
  std::vector<GaussianDensity> targets;
  std::vector<std::uint64_t> target_ids;
  /// Bernoulli filters (IPDA, JIPDA, MHT, MB, JIPDAS).
  std::vector<BernoulliTrack> tracks;
  /// PHD family: unnormalized intensity.
  GaussianMixture intensity;
  /// CPHD cardinality, and the last posterior cardinality of PHD filters.
  std::vector<double> cardinality;
  /// Joint PHD family: one intensity per group.
  std::vector<GaussianMixture> groups;
  std::uint64_t next_id = 1;
};

enum class StateShape { Targets, Tracks, Intensity, Groups };
StateShape state_shape(FilterKind k);

struct BirthModel {
  /// Poisson birth intensity for the PHD family.
  GaussianMixture intensity;
  /// Bernoulli births appended to track lists.
  std::vector<BernoulliTrack> bernoulli;
};

struct FilterConfig {
  FilterKind kind = FilterKind::JPDA;
  MotionModel motion;
  MeasurementModel mm;
  DetectionModel det;
  std::optional<ExtendedTargetPgf> ext;
  std::vector<double> pmht_rates;
  ClutterModel clutter;
  std::optional<double> gate_threshold;
  double survival = 1.0;
  BirthModel birth;
  /// Data-driven births of MHT and MB.
  std::optional<DataBirth> data_birth;
  std::shared_ptr<const SetLikelihood> set_likelihood;
  std::optional<ResolutionModel> resolution;
  int cubature_order = 6;
  DiffOptions diff;
  MixtureReduceOptions reduce;
  int n_max = 64;
  /// Bernoulli tracks at or above this existence are reported.
  double confirm_threshold = 0.5;
  /// Bernoulli tracks below this existence are dropped after an update.
  double track_prune = 1e-3;
};

/// Summary statistics of one scan's posterior.
struct PosteriorStats {
  /// Mixed measurement derivative of the secular function (likelihood of the scan).
  double likelihood = 0.0;
  std::vector<double> cardinality;
  /// Integral of the posterior intensity.
  double expected_count = 0.0;
  std::size_t measurements_used = 0;
};

struct UpdateResult {
  FilterState state;
  PosteriorStats stats;
};

/// Initial state of a filter kind from target priors (fixed-number and
/// Bernoulli kinds) or an intensity (PHD family).
FilterState make_state(FilterKind kind, const std::vector<GaussianDensity>& targets,
                       const std::vector<double>& existence = {}, const GaussianMixture& intensity = {},
                       const std::vector<double>& cardinality = {}, const std::vector<GaussianMixture>& groups = {});

FilterState predict(const FilterState& s, const MotionModel& motion, double survival,
                    const BirthModel* birth = nullptr);

/// Scan parameters for build_filter, including data-driven births.
FilterParams scan_params(const FilterState& s, const FilterConfig& cfg, std::span<const Vec> measurements);

UpdateResult update(const FilterState& s, const FilterConfig& cfg, std::span<const Vec> measurements);

/// Whether reference_update supports the kind.
bool has_reference_update(FilterKind k);

/// Same recursion as update, with posterior statistics taken from the
/// enumeration oracle (single-detection kinds) or the closed-form Gaussian
/// mixture corrector (PHD). Used to produce regression baselines.
UpdateResult reference_update(const FilterState& s, const FilterConfig& cfg, std::span<const Vec> measurements);

struct Estimate {
  Vec state;
  std::optional<double> weight;
  std::optional<std::uint64_t> id;
};

std::vector<Estimate> estimate(const FilterState& s, double confirm_threshold = 0.5);

struct PairStepResult {
  GaussianDensity first;
  GaussianDensity second;
  PosteriorStats stats;
  /// Posterior probability of 0..m target-originated measurements.
  std::vector<double> origin;
};

PairStepResult unresolved_pair_step(const GaussianDensity& first, const GaussianDensity& second,
                                    const ResolutionModel& rm, const MeasurementModel& mm,
                                    const PoissonClutter& clutter, std::span<const Vec> measurements,
                                    const DiffOptions& opts = {});

/// Moment functionals (mass, first and second moments) of a d-dimensional state.
std::vector<StateProbe> moment_probes(Eigen::Index d);

/// Mass and moment-matched Gaussian from the values of moment_probes.
std::pair<double, GaussianDensity> close_moments(std::span<const double> values, Eigen::Index d);

}  // namespace pointillist
