#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <utility>
#include <vector>

namespace pointillist {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Raised when a computation cannot produce a trustworthy number
/// (singular matrices, vanishing normalizers, invalid probability output).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Condition numbers above this are treated as singular.
inline constexpr double kMaxCondition = 1e12;

struct GaussianDensity {
  Vec mean;
  Mat cov;

  GaussianDensity() = default;
  GaussianDensity(Vec m, Mat p);

  Eigen::Index dim() const { return mean.size(); }
};

/// Weighted sum of Gaussians. Used both as a normalized prior (weights sum
/// to one) and as an unnormalized intensity.
struct GaussianMixture {
  std::vector<double> weights;
  std::vector<GaussianDensity> components;

  GaussianMixture() = default;
  explicit GaussianMixture(GaussianDensity single);
  GaussianMixture(std::vector<double> w, std::vector<GaussianDensity> c);

  std::size_t size() const { return components.size(); }
  Eigen::Index dim() const;
  double mass() const;
  /// Same shape with weights divided by mass().
  GaussianMixture normalized() const;
  double eval(const Vec& x) const;
};

struct MotionModel {
  Mat F;
  Mat Q;

  MotionModel() = default;
  MotionModel(Mat f, Mat q);

  /// Nearly-constant-velocity model on state (p_1..p_d, v_1..v_d).
  static MotionModel constant_velocity(int spatial_dim, double dt, double q);
};

struct MeasurementModel {
  Mat H;
  Mat R;

  MeasurementModel() = default;
  MeasurementModel(Mat h, Mat r);

  Eigen::Index meas_dim() const { return H.rows(); }
  Eigen::Index state_dim() const { return H.cols(); }
  /// Likelihood p(y|x) = N(y; Hx, R).
  double likelihood(const Vec& y, const Vec& x) const;
};

/// Ellipsoidal gate: y is inside when (y - c)' S^-1 (y - c) <= threshold.
struct Gate {
  double threshold = 0.0;
  GaussianDensity center;

  Gate() = default;
  Gate(double t, GaussianDensity c);

  bool contains(const Vec& y) const;
};

/// Throws std::invalid_argument unless m is symmetric positive definite with
/// condition number <= kMaxCondition. `what` names the matrix.
void require_spd(const Mat& m, const char* what);

/// Condition number of a symmetric matrix (infinity when not positive definite).
double spd_condition(const Mat& m);

double gaussian_eval(const GaussianDensity& d, const Vec& point);
/// Log density; same preconditions as gaussian_eval.
double gaussian_log_eval(const GaussianDensity& d, const Vec& point);

GaussianDensity kalman_predict(const GaussianDensity& prior, const MotionModel& motion);
GaussianDensity predicted_measurement(const GaussianDensity& predicted, const MeasurementModel& mm);
GaussianDensity kalman_update(const GaussianDensity& predicted, const MeasurementModel& mm, const Vec& y);

/// Chi-square CDF of the threshold with dim(Y) degrees of freedom.
double gate_probability(const Gate& g);

/// Symmetric square root factor L with L L' = m for a PSD matrix.
Mat psd_sqrt(const Mat& m);

Mat symmetrize(const Mat& m);

/// Single Gaussian with the mixture's normalized mean and covariance.
GaussianDensity moment_match(const GaussianMixture& m);

/// Weighted points integrating against a Gaussian density.
struct CubatureRule {
  std::vector<Vec> nodes;
  std::vector<double> weights;
};

/// n-point probabilists' Gauss-Hermite rule for N(0, 1) (Golub-Welsch);
/// returns (nodes, weights).
std::pair<std::vector<double>, std::vector<double>> gauss_hermite(int n);

/// Tensor-product Gauss-Hermite rule for N(mean, cov) with `order` points per axis.
CubatureRule gauss_hermite_cubature(const GaussianDensity& g, int order);

}  // namespace pointillist
