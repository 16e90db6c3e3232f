#pragma once

#include "pointillist/gaussmath.hpp"
#include "pointillist/scalar.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace pointillist {

/// Bernoulli detection with constant probability pd: G(z) = a + b z.
struct DetectionModel {
  double pd = 1.0;

  DetectionModel() = default;
  explicit DetectionModel(double p);

  double a() const { return 1.0 - pd; }
  double b() const { return pd; }
};

/// Extended target: G(z) = a + b * sum_{m=1..K} d_m z^m.
struct ExtendedTargetPgf {
  static constexpr std::size_t kMaxCount = 32;

  double pd = 1.0;
  std::vector<double> dm;  // dm[0] is d_1

  ExtendedTargetPgf() = default;
  ExtendedTargetPgf(double p, std::vector<double> d);

  double a() const { return 1.0 - pd; }
  double b() const { return pd; }
  double mean_count() const;
};

/// Poisson number of measurements per target: G(z) = exp(-L + L z).
struct PoissonMeasPgf {
  double rate = 0.0;

  PoissonMeasPgf() = default;
  explicit PoissonMeasPgf(double r);
};

/// Either a finite polynomial or a Poisson count PGF; the common currency of
/// the single-target atoms.
struct CountPgf {
  std::vector<double> coeffs;  // polynomial coefficients when !poisson
  bool poisson = false;
  double rate = 0.0;

  static CountPgf polynomial(std::vector<double> c);
  static CountPgf poisson_pgf(double rate);

  /// Highest power with a non-zero coefficient; -1 for the Poisson case.
  int degree() const;
  /// r-th derivative at a real point.
  double derivative(int r, double z) const;
  double mean() const { return derivative(1, 1.0); }

  template <class T>
  T eval(const T& z) const {
    if (poisson) return scalar_exp(scale(z, rate) + scalar_from<T>(-rate));
    return poly_eval<T>(coeffs, z);
  }
};

CountPgf count_pgf(const DetectionModel& m);
CountPgf count_pgf(const ExtendedTargetPgf& m);
CountPgf count_pgf(const PoissonMeasPgf& m);

template <class Model, class T>
T pgf_eval(const Model& model, const T& z) {
  return count_pgf(model).eval(z);
}

/// Two-target resolution model with a Gaussian resolution kernel on H1 x1 - H2 x2.
struct ResolutionModel {
  Mat h1;
  Mat h2;
  Mat sigma;
  double pd1 = 1.0;
  double pd2 = 1.0;
  /// When set, f is this constant instead of the Gaussian kernel.
  std::optional<double> fixed_f;

  ResolutionModel() = default;
  ResolutionModel(Mat H1, Mat H2, Mat Sigma, double p1, double p2);
};

/// exp(-d' Sigma^-1 d / 2) with d = H1 x1 - H2 x2.
double resolution_function(const ResolutionModel& rm, const Vec& x1, const Vec& x2);

/// Coefficients (c0, c1, c2) of the pair's measurement-count PGF for a given f.
std::array<double, 3> resolution_coefficients(const ResolutionModel& rm, double f);

template <class T>
T resolution_pgf(const ResolutionModel& rm, const Vec& x1, const Vec& x2, const T& z) {
  const auto c = resolution_coefficients(rm, resolution_function(rm, x1, x2));
  return poly_eval<T>(std::span<const double>(c.data(), c.size()), z);
}

}  // namespace pointillist
