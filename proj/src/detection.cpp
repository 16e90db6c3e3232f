#include "pointillist/detection.hpp"

#include <cmath>
#include <numeric>

namespace pointillist {

namespace {

void require_probability(double p, const char* what) {
  if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument(std::string(what) + " out of range");
}

}  // namespace

DetectionModel::DetectionModel(double p) : pd(p) { require_probability(p, "detection probability"); }

ExtendedTargetPgf::ExtendedTargetPgf(double p, std::vector<double> d) : pd(p), dm(std::move(d)) {
  require_probability(p, "detection probability");
  if (dm.empty() || dm.size() > kMaxCount)
    throw std::invalid_argument("extended target count support must have 1..32 entries");
  for (double v : dm)
    if (!(v >= 0.0)) throw std::invalid_argument("extended target count probability negative");
  const double s = std::accumulate(dm.begin(), dm.end(), 0.0);
  if (std::abs(s - 1.0) > 1e-12) throw std::invalid_argument("extended target count probabilities must sum to 1");
}

double ExtendedTargetPgf::mean_count() const {
  double m = 0.0;
  for (std::size_t k = 0; k < dm.size(); ++k) m += static_cast<double>(k + 1) * dm[k];
  return b() * m;
}

PoissonMeasPgf::PoissonMeasPgf(double r) : rate(r) {
  if (!(r >= 0.0) || !std::isfinite(r)) throw std::invalid_argument("measurement rate must be non-negative");
}

CountPgf CountPgf::polynomial(std::vector<double> c) {
  CountPgf g;
  g.coeffs = std::move(c);
  return g;
}

CountPgf CountPgf::poisson_pgf(double r) {
  CountPgf g;
  g.poisson = true;
  g.rate = r;
  return g;
}

int CountPgf::degree() const {
  if (poisson) return -1;
  for (std::size_t k = coeffs.size(); k-- > 0;)
    if (coeffs[k] != 0.0) return static_cast<int>(k);
  return 0;
}

double CountPgf::derivative(int r, double z) const {
  if (poisson) return std::pow(rate, r) * std::exp(-rate + rate * z);
  double acc = 0.0;
  for (int k = static_cast<int>(coeffs.size()) - 1; k >= r; --k) {
    double falling = 1.0;
    for (int j = 0; j < r; ++j) falling *= (k - j);
    acc = acc * z + coeffs[static_cast<std::size_t>(k)] * falling;
  }
  return acc;
}

CountPgf count_pgf(const DetectionModel& m) { return CountPgf::polynomial({m.a(), m.b()}); }

CountPgf count_pgf(const ExtendedTargetPgf& m) {
  std::vector<double> c(m.dm.size() + 1, 0.0);
  c[0] = m.a();
  for (std::size_t k = 0; k < m.dm.size(); ++k) c[k + 1] = m.b() * m.dm[k];
  return CountPgf::polynomial(std::move(c));
}

CountPgf count_pgf(const PoissonMeasPgf& m) { return CountPgf::poisson_pgf(m.rate); }

ResolutionModel::ResolutionModel(Mat H1, Mat H2, Mat Sigma, double p1, double p2)
    : h1(std::move(H1)), h2(std::move(H2)), sigma(std::move(Sigma)), pd1(p1), pd2(p2) {
  require_probability(p1, "detection probability");
  require_probability(p2, "detection probability");
  if (h1.rows() != h2.rows() || sigma.rows() != h1.rows() || sigma.cols() != h1.rows())
    throw std::invalid_argument("ResolutionModel: dimension mismatch");
  if (spd_condition(sigma) > kMaxCondition)
    throw std::invalid_argument("ResolutionModel: sigma must be positive definite");
}

double resolution_function(const ResolutionModel& rm, const Vec& x1, const Vec& x2) {
  if (x1.size() != rm.h1.cols() || x2.size() != rm.h2.cols())
    throw std::invalid_argument("resolution_function: dimension mismatch");
  if (rm.fixed_f) return *rm.fixed_f;
  const Vec d = rm.h1 * x1 - rm.h2 * x2;
  return std::exp(-0.5 * d.dot(rm.sigma.ldlt().solve(d)));
}

std::array<double, 3> resolution_coefficients(const ResolutionModel& rm, double f) {
  const double a1 = 1.0 - rm.pd1, b1 = rm.pd1, a2 = 1.0 - rm.pd2, b2 = rm.pd2;
  return {a1 * a2, a1 * b2 + b1 * a2 + f * b1 * b2, b1 * b2 * (1.0 - f)};
}

}  // namespace pointillist
