#include "pointillist/gaussmath.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <string>

namespace pointillist {

namespace {

void require_dims(bool ok, const char* msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void require_psd(const Mat& m, const char* what) {
  if (m.rows() != m.cols()) throw std::invalid_argument(std::string(what) + ": not square");
  if (!m.isApprox(m.transpose(), 1e-9) && (m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12)
    throw std::invalid_argument(std::string(what) + ": not symmetric");
  if (m.size() == 0) return;
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(m), Eigen::EigenvaluesOnly);
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  if (es.eigenvalues().minCoeff() < -1e-9 * scale)
    throw std::invalid_argument(std::string(what) + ": not positive semi-definite");
}

}  // namespace

Mat symmetrize(const Mat& m) { return 0.5 * (m + m.transpose()); }

double spd_condition(const Mat& m) {
  if (m.size() == 0) return 1.0;
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(m), Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  if (!(lo > 0.0)) return std::numeric_limits<double>::infinity();
  return hi / lo;
}

void require_spd(const Mat& m, const char* what) {
  if (m.rows() != m.cols()) throw std::invalid_argument(std::string(what) + ": not square");
  if (spd_condition(m) > kMaxCondition)
    throw NumericalError(std::string(what) + ": singular matrix");
}

GaussianDensity::GaussianDensity(Vec m, Mat p) : mean(std::move(m)), cov(std::move(p)) {
  require_dims(cov.rows() == mean.size() && cov.cols() == mean.size(),
               "GaussianDensity: mean and covariance dimensions disagree");
  require_psd(cov, "GaussianDensity covariance");
}

GaussianMixture::GaussianMixture(GaussianDensity single) : weights{1.0}, components{std::move(single)} {}

GaussianMixture::GaussianMixture(std::vector<double> w, std::vector<GaussianDensity> c)
    : weights(std::move(w)), components(std::move(c)) {
  require_dims(weights.size() == components.size(), "GaussianMixture: weight/component count mismatch");
  for (double v : weights)
    if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("GaussianMixture: negative weight");
  for (const auto& comp : components)
    require_dims(comp.dim() == components.front().dim(), "GaussianMixture: component dimension mismatch");
}

Eigen::Index GaussianMixture::dim() const { return components.empty() ? 0 : components.front().dim(); }

double GaussianMixture::mass() const { return std::accumulate(weights.begin(), weights.end(), 0.0); }

GaussianMixture GaussianMixture::normalized() const {
  const double s = mass();
  if (!(s > 0.0)) throw NumericalError("GaussianMixture: cannot normalize zero mass");
  GaussianMixture out = *this;
  for (double& w : out.weights) w /= s;
  return out;
}

double GaussianMixture::eval(const Vec& x) const {
  double v = 0.0;
  for (std::size_t k = 0; k < size(); ++k) v += weights[k] * gaussian_eval(components[k], x);
  return v;
}

MotionModel::MotionModel(Mat f, Mat q) : F(std::move(f)), Q(std::move(q)) {
  require_dims(F.rows() == F.cols(), "MotionModel: F must be square");
  require_dims(Q.rows() == F.rows() && Q.cols() == F.cols(), "MotionModel: Q dimension mismatch");
  require_psd(Q, "MotionModel Q");
}

MotionModel MotionModel::constant_velocity(int spatial_dim, double dt, double q) {
  const int n = 2 * spatial_dim;
  Mat F = Mat::Identity(n, n);
  Mat Q = Mat::Zero(n, n);
  for (int i = 0; i < spatial_dim; ++i) {
    F(i, spatial_dim + i) = dt;
    Q(i, i) = q * dt * dt * dt / 3.0;
    Q(i, spatial_dim + i) = Q(spatial_dim + i, i) = q * dt * dt / 2.0;
    Q(spatial_dim + i, spatial_dim + i) = q * dt;
  }
  return {F, Q};
}

MeasurementModel::MeasurementModel(Mat h, Mat r) : H(std::move(h)), R(std::move(r)) {
  require_dims(R.rows() == H.rows() && R.cols() == H.rows(), "MeasurementModel: R dimension mismatch");
  require_psd(R, "MeasurementModel R");
  if (spd_condition(R) > kMaxCondition) throw std::invalid_argument("MeasurementModel: R must be positive definite");
}

double MeasurementModel::likelihood(const Vec& y, const Vec& x) const {
  require_dims(x.size() == H.cols() && y.size() == H.rows(), "likelihood: dimension mismatch");
  return gaussian_eval(GaussianDensity{H * x, R}, y);
}

Gate::Gate(double t, GaussianDensity c) : threshold(t), center(std::move(c)) {
  if (!(t >= 0.0)) throw std::invalid_argument("Gate: threshold must be non-negative");
}

bool Gate::contains(const Vec& y) const {
  if (std::isinf(threshold)) return true;
  const Vec d = y - center.mean;
  return d.dot(center.cov.ldlt().solve(d)) <= threshold;
}

double gaussian_log_eval(const GaussianDensity& d, const Vec& point) {
  require_dims(point.size() == d.mean.size(), "gaussian_eval: dimension mismatch");
  require_spd(d.cov, "gaussian_eval covariance");
  Eigen::LLT<Mat> llt(symmetrize(d.cov));
  const Vec diff = point - d.mean;
  const Vec z = llt.matrixL().solve(diff);
  const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double n = static_cast<double>(d.mean.size());
  return -0.5 * (z.squaredNorm() + logdet + n * std::log(2.0 * std::numbers::pi));
}

double gaussian_eval(const GaussianDensity& d, const Vec& point) { return std::exp(gaussian_log_eval(d, point)); }

GaussianDensity kalman_predict(const GaussianDensity& prior, const MotionModel& motion) {
  require_dims(motion.F.cols() == prior.mean.size(), "kalman_predict: dimension mismatch");
  GaussianDensity out;
  out.mean = motion.F * prior.mean;
  out.cov = symmetrize(motion.F * prior.cov * motion.F.transpose() + motion.Q);
  return out;
}

GaussianDensity predicted_measurement(const GaussianDensity& predicted, const MeasurementModel& mm) {
  require_dims(mm.H.cols() == predicted.mean.size(), "predicted_measurement: dimension mismatch");
  GaussianDensity out;
  out.mean = mm.H * predicted.mean;
  out.cov = symmetrize(mm.H * predicted.cov * mm.H.transpose() + mm.R);
  return out;
}

GaussianDensity kalman_update(const GaussianDensity& predicted, const MeasurementModel& mm, const Vec& y) {
  require_dims(y.size() == mm.H.rows(), "kalman_update: measurement dimension mismatch");
  const GaussianDensity pm = predicted_measurement(predicted, mm);
  require_spd(pm.cov, "kalman_update innovation covariance");
  const Mat PHt = predicted.cov * mm.H.transpose();
  const Mat W = pm.cov.ldlt().solve(PHt.transpose()).transpose();
  GaussianDensity out;
  out.mean = predicted.mean + W * (y - pm.mean);
  out.cov = symmetrize(predicted.cov - W * pm.cov * W.transpose());
  return out;
}

double gate_probability(const Gate& g) {
  if (std::isinf(g.threshold)) return 1.0;
  if (g.threshold <= 0.0) return 0.0;
  const double k = static_cast<double>(g.center.dim());
  return boost::math::gamma_p(0.5 * k, 0.5 * g.threshold);
}

GaussianDensity moment_match(const GaussianMixture& m) {
  const double s = m.mass();
  if (!(s > 0.0)) throw NumericalError("moment_match: zero mass");
  Vec mean = Vec::Zero(m.dim());
  for (std::size_t k = 0; k < m.size(); ++k) mean += (m.weights[k] / s) * m.components[k].mean;
  Mat cov = Mat::Zero(m.dim(), m.dim());
  for (std::size_t k = 0; k < m.size(); ++k) {
    const Vec d = m.components[k].mean - mean;
    cov += (m.weights[k] / s) * (m.components[k].cov + d * d.transpose());
  }
  GaussianDensity out;
  out.mean = mean;
  out.cov = symmetrize(cov);
  return out;
}

Mat psd_sqrt(const Mat& m) {
  Eigen::SelfAdjointEigenSolver<Mat> es(symmetrize(m));
  const Vec ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal();
}

std::pair<std::vector<double>, std::vector<double>> gauss_hermite(int n) {
  if (n < 1) throw std::invalid_argument("Gauss-Hermite order must be positive");
  Mat j = Mat::Zero(n, n);
  for (int k = 1; k < n; ++k) j(k, k - 1) = j(k - 1, k) = std::sqrt(static_cast<double>(k));
  Eigen::SelfAdjointEigenSolver<Mat> es(j);
  std::vector<double> x(static_cast<std::size_t>(n)), w(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    x[static_cast<std::size_t>(k)] = es.eigenvalues()[k];
    const double v = es.eigenvectors()(0, k);
    w[static_cast<std::size_t>(k)] = v * v;
  }
  return {x, w};
}

CubatureRule gauss_hermite_cubature(const GaussianDensity& g, int order) {
  const auto [x1, w1] = gauss_hermite(order);
  const Eigen::Index d = g.dim();
  const Mat l = psd_sqrt(g.cov);
  CubatureRule c;
  std::vector<std::size_t> idx(static_cast<std::size_t>(d), 0);
  const auto n = static_cast<std::size_t>(order);
  while (true) {
    Vec xi(d);
    double w = 1.0;
    for (Eigen::Index k = 0; k < d; ++k) {
      xi[k] = x1[idx[static_cast<std::size_t>(k)]];
      w *= w1[idx[static_cast<std::size_t>(k)]];
    }
    c.nodes.push_back(g.mean + l * xi);
    c.weights.push_back(w);
    std::size_t k = 0;
    while (k < idx.size() && ++idx[k] == n) idx[k++] = 0;
    if (k == idx.size()) break;
  }
  return c;
}

}  // namespace pointillist
