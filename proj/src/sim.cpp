#include "pointillist/sim.hpp"

#include "pointillist/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace pointillist {

void validate_scenario(const Scenario& s) {
  if (s.duration < 0) throw std::invalid_argument("scenario.duration: must be non-negative");
  if (!(s.pd.pd >= 0.0 && s.pd.pd <= 1.0)) throw std::invalid_argument("scenario.pd: detection probability out of range");
  const Eigen::Index d = s.motion.F.rows();
  if (s.motion.F.cols() != d || s.motion.Q.rows() != d || s.mm.H.cols() != d)
    throw std::invalid_argument("scenario.motion: dimension mismatch with the measurement model");
  if (spatial_of(s.clutter).box().dim() != s.mm.H.rows())
    throw std::invalid_argument("scenario.clutter: box dimension differs from the measurement dimension");
  for (std::size_t i = 0; i < s.targets.size(); ++i) {
    const auto& t = s.targets[i];
    const std::string where = "scenario.targets[" + std::to_string(i) + "]";
    if (!(t.birth_scan >= 0 && t.birth_scan < t.death_scan && t.death_scan <= s.duration))
      throw std::invalid_argument(where + ": require 0 <= birth < death <= duration");
    if (t.initial.dim() != d) throw std::invalid_argument(where + ".initial: dimension mismatch");
  }
}

ScanData simulate(const Scenario& s) {
  validate_scenario(s);
  RandomStream rng(s.seed, 0);
  const Box& box = spatial_of(s.clutter).box();
  const GaussianDensity process_noise(Vec::Zero(s.motion.F.rows()), s.motion.Q);
  const GaussianDensity meas_noise(Vec::Zero(s.mm.H.rows()), s.mm.R);
  std::vector<std::optional<Vec>> state(s.targets.size());
  ScanData out;
  out.scans.resize(static_cast<std::size_t>(s.duration));
  for (int k = 0; k < s.duration; ++k) {
    Scan& scan = out.scans[static_cast<std::size_t>(k)];
    for (std::size_t i = 0; i < s.targets.size(); ++i) {
      const auto& t = s.targets[i];
      if (k < t.birth_scan || k >= t.death_scan) {
        state[i].reset();
        continue;
      }
      if (k == t.birth_scan) {
        state[i] = rng.gaussian(t.initial);
      } else {
        state[i] = Vec(s.motion.F * *state[i] + rng.gaussian(process_noise));
      }
      scan.truth.push_back({static_cast<std::int64_t>(i), *state[i]});
      if (!rng.bernoulli(s.pd.pd)) continue;
      const Vec image = s.mm.H * *state[i];
      for (int attempt = 0; attempt < kMaxRedraws; ++attempt) {
        Vec y = image + rng.gaussian(meas_noise);
        if (box.contains(y)) {
          scan.measurements.push_back(std::move(y));
          scan.origins.push_back(static_cast<std::int64_t>(i));
          break;
        }
      }
    }
    for (auto& y : sample_clutter(s.clutter, rng)) {
      scan.measurements.push_back(std::move(y));
      scan.origins.push_back(kClutterOrigin);
    }
  }
  return out;
}

std::vector<int> min_cost_assignment(const Mat& cost) {
  // Hungarian method with row and column potentials.
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  if (n > m) throw std::invalid_argument("min_cost_assignment: more rows than columns");
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n + 1), 0.0), v(static_cast<std::size_t>(m + 1), 0.0);
  std::vector<int> match(static_cast<std::size_t>(m + 1), 0), way(static_cast<std::size_t>(m + 1), 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(m + 1), inf);
    std::vector<char> used(static_cast<std::size_t>(m + 1), 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const int i0 = match[static_cast<std::size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] - v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(match[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (match[static_cast<std::size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<std::size_t>(j0)];
      match[static_cast<std::size_t>(j0)] = match[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> row_to_col(static_cast<std::size_t>(n), -1);
  for (int j = 1; j <= m; ++j)
    if (match[static_cast<std::size_t>(j)] > 0) row_to_col[static_cast<std::size_t>(match[static_cast<std::size_t>(j)] - 1)] = j - 1;
  return row_to_col;
}

namespace {

struct Matching {
  /// Sum of min(d, c)^p over the optimal assignment.
  double cost = 0.0;
  /// Distances of the assigned pairs.
  std::vector<double> distances;
};

Matching optimal_matching(std::span<const Vec> a, std::span<const Vec> b, double c, double p) {
  const bool swap = a.size() > b.size();
  const std::span<const Vec> rows = swap ? b : a;
  const std::span<const Vec> cols = swap ? a : b;
  Matching out;
  if (rows.empty()) return out;
  Mat cost(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  Mat dist(cost.rows(), cost.cols());
  for (Eigen::Index i = 0; i < cost.rows(); ++i)
    for (Eigen::Index j = 0; j < cost.cols(); ++j) {
      const double d = (rows[static_cast<std::size_t>(i)] - cols[static_cast<std::size_t>(j)]).norm();
      dist(i, j) = d;
      cost(i, j) = std::pow(std::min(d, c), p);
    }
  const auto assign = min_cost_assignment(cost);
  for (Eigen::Index i = 0; i < cost.rows(); ++i) {
    const int j = assign[static_cast<std::size_t>(i)];
    out.cost += cost(i, j);
    out.distances.push_back(dist(i, j));
  }
  return out;
}

std::vector<Vec> leading(std::span<const Vec> xs, int dims) {
  std::vector<Vec> out;
  out.reserve(xs.size());
  for (const auto& x : xs) {
    if (dims > 0 && x.size() < dims) throw std::invalid_argument("run_metrics: state shorter than compare_dims");
    out.push_back(dims > 0 ? Vec(x.head(dims)) : x);
  }
  return out;
}

}  // namespace

double ospa(std::span<const Vec> estimates, std::span<const Vec> truth, double cutoff, double order) {
  if (!(cutoff > 0.0)) throw std::invalid_argument("ospa: cutoff must be positive");
  if (!(order >= 1.0)) throw std::invalid_argument("ospa: order must be at least 1");
  const std::size_t n = std::max(estimates.size(), truth.size());
  if (n == 0) return 0.0;
  const std::size_t k = std::min(estimates.size(), truth.size());
  const Matching mt = optimal_matching(estimates, truth, cutoff, order);
  const double total = mt.cost + std::pow(cutoff, order) * static_cast<double>(n - k);
  return std::pow(total / static_cast<double>(n), 1.0 / order);
}

MetricTable run_metrics(const ScanData& scans, const std::vector<std::vector<Vec>>& estimates,
                        const MetricOptions& opts) {
  if (scans.scans.size() != estimates.size()) throw std::invalid_argument("run_metrics: scan counts differ");
  MetricTable t;
  for (std::size_t k = 0; k < estimates.size(); ++k) {
    std::vector<Vec> truth;
    for (const auto& s : scans.scans[k].truth) truth.push_back(s.x);
    const auto est = leading(estimates[k], opts.compare_dims);
    const auto tru = leading(truth, opts.compare_dims);
    ScanMetrics r;
    r.ospa = ospa(est, tru, opts.cutoff, opts.order);
    r.card_err = std::abs(static_cast<double>(est.size()) - static_cast<double>(tru.size()));
    const Matching mt = optimal_matching(est, tru, opts.cutoff, opts.order);
    double sq = 0.0;
    std::size_t matched = 0;
    for (double d : mt.distances)
      if (d < opts.cutoff) {
        sq += d * d;
        ++matched;
      }
    r.rmse = matched > 0 ? std::sqrt(sq / static_cast<double>(matched)) : 0.0;
    t.rows.push_back(r);
  }
  if (!t.rows.empty()) {
    for (const auto& r : t.rows) {
      t.mean.ospa += r.ospa;
      t.mean.card_err += r.card_err;
      t.mean.rmse += r.rmse;
      t.max.ospa = std::max(t.max.ospa, r.ospa);
      t.max.card_err = std::max(t.max.card_err, r.card_err);
      t.max.rmse = std::max(t.max.rmse, r.rmse);
    }
    const double n = static_cast<double>(t.rows.size());
    t.mean.ospa /= n;
    t.mean.card_err /= n;
    t.mean.rmse /= n;
  }
  return t;
}

}  // namespace pointillist
