#include "pointillist/oracle.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>

using namespace pointillist;
using namespace pointillist::testing;

namespace {

Vec vec1(double a) { return Vec::Constant(1, a); }

FilterParams scalar_params(FilterKind kind, double pd, double clutter_rate) {
  FilterParams p;
  p.kind = kind;
  p.mm = MeasurementModel(Mat::Identity(1, 1), Mat::Constant(1, 1, 0.5));
  p.det = DetectionModel(pd);
  p.clutter = PoissonClutter(clutter_rate, SpatialDensity::uniform(box_of(1)));
  return p;
}

}  // namespace

TEST(Oracle, PdaSingleMeasurementWeights) {
  const double pd = 0.8, rate = 2.0;
  FilterParams p = scalar_params(FilterKind::PDA, pd, rate);
  const GaussianDensity prior(vec1(0.5), Mat::Constant(1, 1, 2.0));
  p.targets.emplace_back(prior);
  const std::vector<Vec> ys = {vec1(1.7)};
  // Clutter density is rate / 20 on the box [-10, 10].
  const double w0 = rate / 20.0 * (1.0 - pd);
  const double w1 = pd * gaussian_eval(predicted_measurement(prior, p.mm), ys[0]);
  const OracleStats o = enumeration_oracle(p, ys);
  EXPECT_NEAR(o.state_prob[0][OracleState::kMissed], w0 / (w0 + w1), 1e-14);
  EXPECT_NEAR(o.state_prob[0][OracleState::assigned(0)], w1 / (w0 + w1), 1e-14);
  // The scan likelihood carries the clutter void probability.
  EXPECT_NEAR(o.total, std::exp(-rate) * (w0 + w1), 1e-15);
  const GaussianDensity post = kalman_update(prior, p.mm, ys[0]);
  const Vec mean = (w0 * prior.mean + w1 * post.mean) / (w0 + w1);
  EXPECT_NEAR(o.mean(0)[0], mean[0], 1e-14);
}

TEST(Oracle, ExistenceWithoutMeasurements) {
  const double pd = 0.6, chi = 0.7;
  FilterParams p = scalar_params(FilterKind::IPDA, pd, 1.0);
  p.targets.emplace_back(GaussianDensity(vec1(0.0), Mat::Identity(1, 1)));
  p.existence = {chi};
  const OracleStats o = enumeration_oracle(p, {});
  EXPECT_NEAR(o.existence(0), chi * (1.0 - pd) / (1.0 - chi * pd), 1e-15);
}

TEST(Oracle, ProbabilitiesSumToOne) {
  for (FilterKind k : {FilterKind::JPDA, FilterKind::JIPDA, FilterKind::MHT, FilterKind::MB}) {
    for (int s = 0; s < 20; ++s) {
      const ScanCase c = random_case(k, 1300 + static_cast<std::uint64_t>(s));
      const OracleStats o = enumeration_oracle(c.params, c.ys);
      if (o.total == 0.0) continue;
      for (const auto& row : o.state_prob) {
        double sum = 0.0;
        for (double v : row) sum += v;
        EXPECT_NEAR(sum, 1.0, 1e-12);
      }
      double sum = 0.0;
      for (double v : o.cardinality_all) sum += v;
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
  }
}

TEST(Oracle, PhdCorrectorWithoutMeasurementsIsMissedIntensity) {
  const GaussianMixture d({2.0}, {GaussianDensity(vec1(1.0), Mat::Identity(1, 1))});
  const MeasurementModel mm(Mat::Identity(1, 1), Mat::Identity(1, 1));
  const PoissonClutter c(1.0, SpatialDensity::uniform(box_of(1)));
  EXPECT_NEAR(phd_corrector(d, 0.9, mm, c, {}, vec1(0.3)), 0.1 * d.eval(vec1(0.3)), 1e-16);
}

TEST(Oracle, NoMeasurementsKeepsPriors) {
  FilterParams p = scalar_params(FilterKind::JPDA, 0.9, 1.0);
  p.targets.emplace_back(GaussianDensity(vec1(-2.0), Mat::Identity(1, 1)));
  p.targets.emplace_back(GaussianDensity(vec1(3.0), Mat::Constant(1, 1, 2.0)));
  const OracleStats o = enumeration_oracle(p, {});
  for (std::size_t i = 0; i < 2; ++i)
    EXPECT_NEAR(o.intensity(target_label(i), vec1(0.5)), p.targets[i].eval(vec1(0.5)), 1e-15);
  const auto card = o.cardinality("", 2);
  EXPECT_NEAR(card[2], 1.0, 1e-15);
}

TEST(Oracle, FeasibleAssignmentCount) {
  auto brute = [](int n, int m) {
    // Targets pick a distinct measurement or none.
    std::uint64_t count = 0;
    std::vector<int> pick(static_cast<std::size_t>(n), -1);
    std::function<void(int)> rec = [&](int t) {
      if (t == n) {
        ++count;
        return;
      }
      for (int j = -1; j < m; ++j) {
        bool used = false;
        for (int u = 0; u < t; ++u) used = used || (j >= 0 && pick[u] == j);
        if (used) continue;
        pick[t] = j;
        rec(t + 1);
      }
    };
    rec(0);
    return count;
  };
  for (int n = 0; n <= 4; ++n)
    for (int m = 0; m <= 6; ++m) EXPECT_EQ(feasible_assignment_count(n, m), brute(n, m)) << n << " " << m;
  FilterParams p = scalar_params(FilterKind::JPDA, 0.9, 1.0);
  p.targets.assign(3, GaussianMixture(GaussianDensity(vec1(0.0), Mat::Identity(1, 1))));
  const std::vector<Vec> ys = {vec1(0.1), vec1(0.2), vec1(-0.3)};
  EXPECT_EQ(enumeration_oracle(p, ys).hypotheses, feasible_assignment_count(3, 3));
}

TEST(Oracle, BudgetExceeded) {
  FilterParams p = scalar_params(FilterKind::JPDA, 0.9, 1.0);
  p.targets.assign(3, GaussianMixture(GaussianDensity(vec1(0.0), Mat::Identity(1, 1))));
  const std::vector<Vec> ys = {vec1(0.1), vec1(0.2), vec1(-0.3)};
  OracleOptions o;
  o.budget = 5;
  EXPECT_THROW(enumeration_oracle(p, ys, o), std::invalid_argument);
}
