#pragma once

#include "pointillist/gaussmath.hpp"
#include "pointillist/random.hpp"
#include "pointillist/scalar.hpp"

#include <span>
#include <variant>
#include <vector>

namespace pointillist {

/// Axis-aligned box; the bounded measurement space Y.
struct Box {
  Vec low;
  Vec high;

  Box() = default;
  Box(Vec lo, Vec hi);

  Eigen::Index dim() const { return low.size(); }
  double volume() const;
  bool contains(const Vec& y) const;
};

/// Spatial density over Y: uniform on the box, or a Gaussian with diagonal
/// covariance truncated to the box.
class SpatialDensity {
 public:
  SpatialDensity() = default;
  static SpatialDensity uniform(Box box);
  static SpatialDensity truncated_gaussian(GaussianDensity g, Box box);

  const Box& box() const { return box_; }
  bool is_uniform() const { return uniform_; }
  const GaussianDensity& gaussian() const { return gauss_; }
  double eval(const Vec& y) const;
  Vec sample(RandomStream& rng) const;

 private:
  Box box_;
  bool uniform_ = true;
  GaussianDensity gauss_;
  double box_mass_ = 1.0;
};

struct PoissonClutter {
  double rate = 0.0;
  SpatialDensity spatial;

  PoissonClutter() = default;
  PoissonClutter(double r, SpatialDensity s);

  /// lambda(y) = rate * p(y).
  double intensity(const Vec& y) const { return rate * spatial.eval(y); }
};

struct ClusterClutter {
  std::vector<double> card;  // Pr{C = c}, c = 0..K
  SpatialDensity spatial;

  ClusterClutter() = default;
  ClusterClutter(std::vector<double> c, SpatialDensity s);
};

using ClutterModel = std::variant<PoissonClutter, ClusterClutter>;

/// Tolerance on probability vectors supplied by callers.
inline constexpr double kPmfTolerance = 1e-6;

const SpatialDensity& spatial_of(const ClutterModel& c);

/// Poisson: exp(-L + L (base_g + sum a_i p(y_i))); cluster: G_C(base_g + sum a_i q(y_i)).
template <class T>
T clutter_secular_eval(const ClutterModel& c, int base_g, std::span<const Vec> points, std::span<const T> weights) {
  if (points.size() != weights.size()) throw std::invalid_argument("clutter_secular_eval: size mismatch");
  T inner = scalar_from<T>(static_cast<double>(base_g));
  const SpatialDensity& s = spatial_of(c);
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!s.box().contains(points[i])) throw std::invalid_argument("measurement point outside Y");
    inner = inner + scale(weights[i], s.eval(points[i]));
  }
  if (const auto* p = std::get_if<PoissonClutter>(&c)) {
    return scalar_exp(scale(inner, p->rate) + scalar_from<T>(-p->rate));
  }
  return poly_eval<T>(std::get<ClusterClutter>(c).card, inner);
}

std::vector<Vec> sample_clutter(const ClutterModel& c, RandomStream& rng);

/// Probability mass of the spatial density inside the union of the gates.
/// Closed form for one gate wholly inside a uniform box; otherwise a
/// fixed-seed Monte-Carlo estimate with `samples` draws.
double gated_mass(const SpatialDensity& s, std::span<const Gate> gates, int samples = 200000);

/// Truncates exp(-L + L z) to degree K as a cluster cardinality vector.
std::vector<double> poisson_pmf(double rate, int K);

}  // namespace pointillist
