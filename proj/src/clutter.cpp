#include "pointillist/clutter.hpp"

#include <boost/math/special_functions/erf.hpp>

#include <cmath>
#include <numbers>
#include <numeric>

namespace pointillist {

namespace {

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double std_normal_quantile(double p) { return -std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * p); }

bool gate_inside_box(const Gate& g, const Box& box) {
  if (std::isinf(g.threshold)) return false;
  // Axis half-widths of the ellipsoid: sqrt(t * S_ii).
  for (Eigen::Index i = 0; i < box.dim(); ++i) {
    const double h = std::sqrt(g.threshold * g.center.cov(i, i));
    if (g.center.mean[i] - h < box.low[i] || g.center.mean[i] + h > box.high[i]) return false;
  }
  return true;
}

double ellipsoid_volume(const Gate& g) {
  const double n = static_cast<double>(g.center.dim());
  const double unit = std::pow(std::numbers::pi, n / 2.0) / std::tgamma(n / 2.0 + 1.0);
  return unit * std::pow(g.threshold, n / 2.0) * std::sqrt(g.center.cov.determinant());
}

}  // namespace

Box::Box(Vec lo, Vec hi) : low(std::move(lo)), high(std::move(hi)) {
  if (low.size() != high.size() || low.size() == 0) throw std::invalid_argument("Box: dimension mismatch");
  for (Eigen::Index i = 0; i < low.size(); ++i)
    if (!(high[i] > low[i])) throw std::invalid_argument("Box: upper bound must exceed lower bound");
}

double Box::volume() const { return (high - low).prod(); }

bool Box::contains(const Vec& y) const {
  if (y.size() != low.size()) throw std::invalid_argument("Box: point dimension mismatch");
  return (y.array() >= low.array()).all() && (y.array() <= high.array()).all();
}

SpatialDensity SpatialDensity::uniform(Box box) {
  SpatialDensity s;
  s.box_ = std::move(box);
  s.uniform_ = true;
  return s;
}

SpatialDensity SpatialDensity::truncated_gaussian(GaussianDensity g, Box box) {
  if (g.dim() != box.dim()) throw std::invalid_argument("truncated Gaussian: dimension mismatch");
  const Mat off = g.cov - Mat(g.cov.diagonal().asDiagonal());
  if (off.cwiseAbs().maxCoeff() > 0.0) throw std::invalid_argument("truncated Gaussian: covariance must be diagonal");
  SpatialDensity s;
  s.box_ = std::move(box);
  s.uniform_ = false;
  s.gauss_ = std::move(g);
  double mass = 1.0;
  for (Eigen::Index i = 0; i < s.box_.dim(); ++i) {
    const double sd = std::sqrt(s.gauss_.cov(i, i));
    mass *= std_normal_cdf((s.box_.high[i] - s.gauss_.mean[i]) / sd) -
            std_normal_cdf((s.box_.low[i] - s.gauss_.mean[i]) / sd);
  }
  if (!(mass > 0.0)) throw std::invalid_argument("truncated Gaussian: no mass inside the box");
  s.box_mass_ = mass;
  return s;
}

double SpatialDensity::eval(const Vec& y) const {
  if (!box_.contains(y)) return 0.0;
  if (uniform_) return 1.0 / box_.volume();
  return gaussian_eval(gauss_, y) / box_mass_;
}

Vec SpatialDensity::sample(RandomStream& rng) const {
  Vec y(box_.dim());
  for (Eigen::Index i = 0; i < box_.dim(); ++i) {
    const double u = rng.uniform();
    if (uniform_) {
      y[i] = box_.low[i] + u * (box_.high[i] - box_.low[i]);
    } else {
      // Per-axis inverse CDF; exact because the covariance is diagonal.
      const double sd = std::sqrt(gauss_.cov(i, i));
      const double lo = std_normal_cdf((box_.low[i] - gauss_.mean[i]) / sd);
      const double hi = std_normal_cdf((box_.high[i] - gauss_.mean[i]) / sd);
      const double v = gauss_.mean[i] + sd * std_normal_quantile(lo + u * (hi - lo));
      y[i] = std::clamp(v, box_.low[i], box_.high[i]);
    }
  }
  return y;
}

PoissonClutter::PoissonClutter(double r, SpatialDensity s) : rate(r), spatial(std::move(s)) {
  if (!(r >= 0.0) || !std::isfinite(r)) throw std::invalid_argument("clutter rate must be non-negative");
}

ClusterClutter::ClusterClutter(std::vector<double> c, SpatialDensity s) : card(std::move(c)), spatial(std::move(s)) {
  if (card.empty()) throw std::invalid_argument("cluster clutter cardinality vector is empty");
  for (double v : card)
    if (!(v >= 0.0)) throw std::invalid_argument("cluster clutter cardinality probability negative");
  const double sum = std::accumulate(card.begin(), card.end(), 0.0);
  if (std::abs(sum - 1.0) > kPmfTolerance)
    throw std::invalid_argument("cluster clutter cardinality probabilities must sum to 1");
}

const SpatialDensity& spatial_of(const ClutterModel& c) {
  return std::visit([](const auto& m) -> const SpatialDensity& { return m.spatial; }, c);
}

std::vector<Vec> sample_clutter(const ClutterModel& c, RandomStream& rng) {
  std::uint64_t n = 0;
  if (const auto* p = std::get_if<PoissonClutter>(&c)) {
    n = rng.poisson(p->rate);
  } else {
    const auto& card = std::get<ClusterClutter>(c).card;
    const double u = rng.uniform();
    double cdf = 0.0;
    n = card.size() - 1;
    for (std::size_t k = 0; k < card.size(); ++k) {
      cdf += card[k];
      if (u <= cdf) {
        n = k;
        break;
      }
    }
  }
  std::vector<Vec> out;
  out.reserve(n);
  const SpatialDensity& s = spatial_of(c);
  for (std::uint64_t i = 0; i < n; ++i) out.push_back(s.sample(rng));
  return out;
}

double gated_mass(const SpatialDensity& s, std::span<const Gate> gates, int samples) {
  if (gates.empty()) return 0.0;
  for (const auto& g : gates)
    if (std::isinf(g.threshold)) return 1.0;
  if (s.is_uniform() && gates.size() == 1 && gate_inside_box(gates[0], s.box()))
    return ellipsoid_volume(gates[0]) / s.box().volume();
  RandomStream rng(0x6761746564ULL, 0);
  int hits = 0;
  for (int i = 0; i < samples; ++i) {
    const Vec y = s.sample(rng);
    for (const auto& g : gates)
      if (g.contains(y)) {
        ++hits;
        break;
      }
  }
  return static_cast<double>(hits) / samples;
}

std::vector<double> poisson_pmf(double rate, int K) {
  std::vector<double> p(static_cast<std::size_t>(K) + 1);
  double v = std::exp(-rate);
  for (int k = 0; k <= K; ++k) {
    if (k > 0) v *= rate / k;
    p[static_cast<std::size_t>(k)] = v;
  }
  return p;
}

}  // namespace pointillist
