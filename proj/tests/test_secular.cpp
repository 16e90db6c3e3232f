#include "pointillist/secular.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <map>

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

DiffOptions cauchy(int nodes = 32) {
  DiffOptions o;
  o.method = DiffMethod::Cauchy;
  o.nodes = nodes;
  return o;
}

DiffOptions fd(double step = 1e-3) {
  DiffOptions o;
  o.method = DiffMethod::FD;
  o.step = step;
  return o;
}

/// Random measurements for any parameter set, trimmed until the scan has
/// non-zero likelihood.
std::vector<Vec> feasible_measurements(RandomStream& r, const FilterParams& p, const PgflExpr& e, int m) {
  std::vector<GaussianMixture> sources = p.targets;
  for (const auto& g : p.intensity.components) sources.emplace_back(g);
  for (const auto& grp : p.groups)
    for (const auto& g : grp.components) sources.emplace_back(g);
  std::vector<Vec> ys;
  if (uses_clutter(p.kind)) {
    ys = random_measurements(r, p, m, sources);
  } else {
    // Without a clutter model every measurement needs a target source.
    for (int j = 0; j < m; ++j) {
      const auto& src = sources[static_cast<std::size_t>(uniform_int(r, 0, static_cast<int>(sources.size()) - 1))];
      const Vec x = r.gaussian(src.components[0]);
      ys.push_back(p.mm.H * x + r.gaussian(GaussianDensity(Vec::Zero(p.mm.H.rows()), p.mm.R)));
    }
  }
  while (!ys.empty() && std::abs(mixed_derivative_ad(e, ys)) <= 1e-250) ys.pop_back();
  return ys;
}

}  // namespace

TEST(Cauchy, IdentityIsExact) {
  const std::vector<double> radii = {0.5};
  const cplx d = cauchy_mixed_derivative([](std::span<const cplx> a) { return a[0]; }, radii, 8);
  EXPECT_NEAR(std::abs(d - cplx(1.0)), 0.0, 1e-12);
}

TEST(Cauchy, ExponentialAliasingBound) {
  const std::vector<double> radii = {0.5};
  const cplx d = cauchy_mixed_derivative([](std::span<const cplx> a) { return std::exp(a[0]); }, radii, 32);
  EXPECT_NEAR(std::abs(d - cplx(1.0)), 0.0, 1e-12);
}

TEST(Cauchy, MixedPolynomialCoefficient) {
  // d^3 / da0 da1 da2 of (1 + a0 a1)(2 + a2) + a0^2 a2 is 1.
  const std::vector<double> radii = {0.5, 0.7, 0.3};
  const cplx d = cauchy_mixed_derivative(
      [](std::span<const cplx> a) { return (1.0 + a[0] * a[1]) * (2.0 + a[2]) + a[0] * a[0] * a[2]; }, radii, 8);
  EXPECT_NEAR(std::abs(d - cplx(1.0)), 0.0, 1e-13);
}

TEST(Cauchy, NodeBudget) {
  DiffOptions o = cauchy();
  EXPECT_EQ(cauchy_nodes(4, o), 32);
  EXPECT_LT(cauchy_nodes(5, o), 32);
  EXPECT_LE(std::pow(cauchy_nodes(5, o), 5), kCauchyNodeBudget);
  o.fit_node_budget = false;
  EXPECT_THROW(cauchy_nodes(5, o), std::invalid_argument);
  o.fit_node_budget = true;
  EXPECT_THROW(cauchy_nodes(20, o), std::invalid_argument);
}

TEST(Cauchy, JpdaTwoTargetsTwoMeasurementsMatchesAd) {
  RandomStream r(30, 0);
  for (int s = 0; s < 10; ++s) {
    CaseOptions o;
    o.allow_cluster = false;
    o.allow_gating = false;
    ScanCase c = random_case(FilterKind::JPDA, 600 + static_cast<std::uint64_t>(s), o);
    c.params.targets.resize(1);
    c.params.targets.emplace_back(random_gaussian(r, static_cast<int>(c.params.mm.H.cols())));
    c.ys = random_measurements(r, c.params, 2, c.params.targets);
    const PgflExpr e = build_filter(c.params);
    EXPECT_LT(rel_err(mixed_derivative_cauchy(e, c.ys, {}, 0.5, 16).real(), mixed_derivative_ad(e, c.ys).real()), 1e-8);
  }
}

TEST(FiniteDifference, LinearIsExactForAnyStep) {
  for (double h : {1e-1, 1e-3, 0.5}) {
    const std::vector<double> steps = {h, h};
    const cquad d = fd_mixed_derivative(
        [](std::span<const cquad> a) { return cquad(2) + cquad(3) * a[0] * a[1] + a[0] - cquad(5) * a[1]; }, steps);
    EXPECT_NEAR(static_cast<double>(d.real()), 3.0, 1e-25);
  }
}

TEST(FiniteDifference, ExponentialWithinSecondOrderBound) {
  const std::vector<double> steps = {1e-3};
  const cquad d = fd_mixed_derivative([](std::span<const cquad> a) { return exp(a[0]); }, steps);
  EXPECT_NEAR(static_cast<double>(d.real()), 1.0, 1e-6);
}

TEST(FiniteDifference, StepHalvingQuartersError) {
  auto f = [](std::span<const cquad> a) { return exp(cquad(2) * a[0] * a[1] + a[0] + sin(a[1])); };
  // d^2/da0 da1 at 0 is 2 + 1 * 1 = 3.
  const std::vector<double> s1 = {1e-2, 1e-2}, s2 = {5e-3, 5e-3};
  const double e1 = std::abs(static_cast<double>(fd_mixed_derivative(f, s1).real()) - 3.0);
  const double e2 = std::abs(static_cast<double>(fd_mixed_derivative(f, s2).real()) - 3.0);
  EXPECT_NEAR(e1 / e2, 4.0, 0.2);
}

TEST(MixedDerivative, BayesMarkovJointDensity) {
  FilterParams p = scalar_params(FilterKind::BM, 1.0, 0.0);
  const GaussianDensity prior(vec1(0.5), Mat::Constant(1, 1, 2.0));
  p.targets.emplace_back(prior);
  const PgflExpr e = build_filter(p);
  const Vec y = vec1(1.3), x = vec1(0.9);
  const double want = gaussian_eval(prior, x) * p.mm.likelihood(y, x);
  const std::vector<Vec> ys = {y};
  EXPECT_NEAR(mixed_derivative_ad(e, ys, {{target_label(0), {x}}}).real(), want, 1e-15);
}

TEST(MixedDerivative, NoVariablesGivesVoidValue) {
  const ScanCase c = random_case(FilterKind::JIPDA, 31);
  const PgflExpr e = build_filter(c.params);
  SecularContext<cplx> ctx;
  ctx.base_g = 0;
  EXPECT_NEAR(std::abs(mixed_derivative_ad(e, {}) - evaluate_secular<cplx>(e, ctx)), 0.0, 1e-16);
}

TEST(PosteriorIntensity, BayesMarkovIsKalmanPosterior) {
  FilterParams p = scalar_params(FilterKind::BM, 1.0, 0.0);
  const GaussianDensity prior(vec1(0.5), Mat::Constant(1, 1, 2.0));
  p.targets.emplace_back(prior);
  const PgflExpr e = build_filter(p);
  const std::vector<Vec> ys = {vec1(1.3)};
  const GaussianDensity post = kalman_update(prior, p.mm, ys[0]);
  for (double x : {-1.0, 0.0, 0.9, 2.5})
    EXPECT_LT(rel_err(posterior_intensity(e, ys, vec1(x), target_label(0)), gaussian_eval(post, vec1(x))), 1e-10);
}

TEST(PosteriorIntensity, PdaWithoutMeasurementsIsPredictedDensity) {
  FilterParams p = scalar_params(FilterKind::PDA, 0.8, 1.0);
  const GaussianDensity prior(vec1(0.5), Mat::Constant(1, 1, 2.0));
  p.targets.emplace_back(prior);
  const PgflExpr e = build_filter(p);
  const OracleStats o = enumeration_oracle(p, {});
  for (double x : {-1.0, 0.9}) {
    EXPECT_LT(rel_err(posterior_intensity(e, {}, vec1(x), target_label(0)), o.intensity(target_label(0), vec1(x))),
              1e-13);
    EXPECT_LT(rel_err(posterior_intensity(e, {}, vec1(x), target_label(0)), gaussian_eval(prior, vec1(x))), 1e-13);
  }
}

TEST(PosteriorIntensity, PdaAssociationWeights) {
  const double pd = 0.8, rate = 2.0;
  FilterParams p = scalar_params(FilterKind::PDA, pd, rate);
  const GaussianDensity prior(vec1(0.5), Mat::Constant(1, 1, 2.0));
  p.targets.emplace_back(prior);
  const std::vector<Vec> ys = {vec1(1.7)};
  const double lambda = rate / 20.0;
  const double w0 = lambda * (1.0 - pd);
  const double w1 = pd * gaussian_eval(predicted_measurement(prior, p.mm), ys[0]);
  const OracleStats o = enumeration_oracle(p, ys);
  EXPECT_NEAR(o.state_prob[0][OracleState::kMissed], w0 / (w0 + w1), 1e-14);
  EXPECT_NEAR(o.state_prob[0][OracleState::assigned(0)], w1 / (w0 + w1), 1e-14);
  const GaussianDensity post = kalman_update(prior, p.mm, ys[0]);
  const PgflExpr e = build_filter(p);
  for (double x : {-1.0, 0.9, 2.0}) {
    const double want = (w0 * gaussian_eval(prior, vec1(x)) + w1 * gaussian_eval(post, vec1(x))) / (w0 + w1);
    EXPECT_LT(rel_err(posterior_intensity(e, ys, vec1(x), target_label(0)), want), 1e-13);
  }
}

TEST(PosteriorIntensity, PhdCorrector) {
  RandomStream r(32, 0);
  for (int s = 0; s < 20; ++s) {
    FilterParams p = random_params(FilterKind::PHD, 700 + static_cast<std::uint64_t>(s));
    p.clutter = PoissonClutter(uniform(r, 0.5, 3.0), SpatialDensity::uniform(box_of(static_cast<int>(p.mm.H.rows()))));
    const PgflExpr e = build_filter(p);
    const auto ys = feasible_measurements(r, p, e, uniform_int(r, 0, 4));
    const Vec x = r.gaussian(p.intensity.components[0]);
    EXPECT_LT(rel_err(posterior_intensity(e, ys, x, kIntensityLabel),
                      phd_corrector(p.intensity, p.det.pd, p.mm, std::get<PoissonClutter>(p.clutter), ys, x)),
              1e-9);
  }
}

TEST(PosteriorIntensity, ZeroDenominatorIsAnError) {
  FilterParams p = scalar_params(FilterKind::JPDA, 0.9, 0.0);
  p.clutter = ClusterClutter({1.0}, SpatialDensity::uniform(box_of(1)));
  p.targets.emplace_back(GaussianDensity(vec1(0.0), Mat::Identity(1, 1)));
  const std::vector<Vec> ys = {vec1(0.1), vec1(0.2)};
  EXPECT_THROW(posterior_intensity(build_filter(p), ys, vec1(0.0), target_label(0)), NumericalError);
}

TEST(PosteriorCardinality, FixedTargetCount) {
  const ScanCase c = random_case(FilterKind::JPDA, 33);
  const int n = static_cast<int>(c.params.targets.size());
  const auto card = posterior_cardinality(build_filter(c.params), c.ys, "", n + 2);
  for (int k = 0; k <= n + 2; ++k) EXPECT_NEAR(card[static_cast<std::size_t>(k)], k == n ? 1.0 : 0.0, 1e-12);
}

TEST(PosteriorCardinality, IpdaWithoutMeasurements) {
  const double pd = 0.7, chi = 0.5;
  FilterParams p = scalar_params(FilterKind::IPDA, pd, 1.0);
  p.targets.emplace_back(GaussianDensity(vec1(0.0), Mat::Identity(1, 1)));
  p.existence = {chi};
  const auto card = posterior_cardinality(build_filter(p), {}, "", 1);
  // Present and missed versus absent.
  const double present = chi * (1.0 - pd) / (1.0 - chi + chi * (1.0 - pd));
  EXPECT_NEAR(card[1], present, 1e-14);
  EXPECT_NEAR(card[0], 1.0 - present, 1e-14);
  const OracleStats o = enumeration_oracle(p, {});
  EXPECT_LT(vec_rel_err(card, o.cardinality("", 1)), 1e-13);
}

TEST(PosteriorCardinality, ValidAndConsistentWithIntensity) {
  RandomStream r(34, 0);
  for (FilterKind k : {FilterKind::JIPDA, FilterKind::MHT, FilterKind::MB, FilterKind::CPHD, FilterKind::PHD}) {
    for (int s = 0; s < 10; ++s) {
      const FilterParams p = random_params(k, 800 + static_cast<std::uint64_t>(s));
      const PgflExpr e = build_filter(p);
      const auto ys = feasible_measurements(r, p, e, uniform_int(r, 0, 4));
      const auto card = posterior_cardinality(e, ys, "", 40);
      double sum = 0.0, mean = 0.0;
      for (std::size_t n = 0; n < card.size(); ++n) {
        EXPECT_GE(card[n], 0.0);
        sum += card[n];
        mean += static_cast<double>(n) * card[n];
      }
      EXPECT_NEAR(sum, 1.0, 1e-9);
      std::map<TargetLabel, std::vector<StateProbe>> probes;
      for (const auto& label : labels_of(e)) probes[label] = {StateProbe::mass()};
      double mass = 0.0;
      for (double v : posterior_functionals(e, ys, probes)) mass += v;
      EXPECT_NEAR(mean, mass, 1e-6) << to_string(k);
    }
  }
}

TEST(FactorialMoment, FirstOrderIsIntensity) {
  const ScanCase c = random_case(FilterKind::JPDAS, 35);
  const PgflExpr e = build_filter(c.params);
  const std::vector<Vec> xs = {c.points[0]};
  EXPECT_LT(rel_err(factorial_moment(e, c.ys, xs, kSharedLabel), posterior_intensity(e, c.ys, xs[0], kSharedLabel)),
            1e-14);
}

TEST(FactorialMoment, SecondOrderMatchesEnumeration) {
  RandomStream r(36, 0);
  for (int s = 0; s < 20; ++s) {
    CaseOptions o;
    o.max_targets = 3;
    ScanCase c = random_case(FilterKind::JPDA, 900 + static_cast<std::uint64_t>(s), o);
    while (c.params.targets.size() < 2)
      c.params.targets.emplace_back(random_gaussian(r, static_cast<int>(c.params.mm.H.cols())));
    FilterParams sup = c.params;
    sup.kind = FilterKind::JPDAS;
    OracleOptions oo;
    oo.pairs = true;
    const OracleStats os = enumeration_oracle(c.params, c.ys, oo);
    const Vec x1 = r.gaussian(c.params.targets[0].components[0]);
    const Vec x2 = r.gaussian(c.params.targets[1].components[0]);
    const std::vector<Vec> xs = {x1, x2};
    EXPECT_LT(rel_err(factorial_moment(build_filter(sup), c.ys, xs, kSharedLabel),
                      os.second_factorial_moment("", x1, x2)),
              1e-8);
  }
}

TEST(Pmht, PosteriorIsLinearInEachTarget) {
  RandomStream r(37, 0);
  for (int s = 0; s < 20; ++s) {
    const FilterParams p = random_params(FilterKind::PMHT, 1000 + static_cast<std::uint64_t>(s));
    const PgflExpr e = build_filter(p);
    const auto ys = feasible_measurements(r, p, e, uniform_int(r, 0, 4));
    std::map<TargetLabel, std::vector<StateProbe>> probes;
    for (std::size_t i = 0; i < p.targets.size(); ++i) probes[target_label(i)] = {StateProbe::mass()};
    for (double v : posterior_functionals(e, ys, probes)) EXPECT_NEAR(v, 1.0, 1e-9);
    const auto card = posterior_cardinality(e, ys, target_label(0), 2);
    EXPECT_NEAR(card[1], 1.0, 1e-12);
  }
}

TEST(TargetOrigin, DistributionIsValid) {
  for (int s = 0; s < 20; ++s) {
    const ScanCase c = random_case(FilterKind::JIPDA, 1100 + static_cast<std::uint64_t>(s));
    const auto d = target_origin_distribution(build_filter(c.params), c.ys);
    ASSERT_EQ(d.size(), c.ys.size() + 1);
    double sum = 0.0;
    for (double v : d) {
      EXPECT_GE(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(MethodAgreement, EveryFilterRow) {
  // AD, Cauchy and FD agree pointwise on the posterior intensity; AD also
  // matches enumeration where it applies.
  RandomStream r(38, 0);
  const auto& kinds = all_filter_kinds();
  for (int trial = 0; trial < 100; ++trial) {
    const FilterKind k = kinds[static_cast<std::size_t>(trial) % kinds.size()];
    const FilterParams p = random_params(k, 1200 + static_cast<std::uint64_t>(trial));
    const PgflExpr e = build_filter(p);
    // Bayes-Markov needs exactly one measurement.
    const int m = k == FilterKind::BM ? 1 : uniform_int(r, 0, 4);
    const auto ys = feasible_measurements(r, p, e, m);
    // Probe where the prior has mass.
    TargetLabel label;
    Vec x;
    if (!p.targets.empty()) {
      label = is_superposed(k) ? kSharedLabel : target_label(0);
      x = r.gaussian(p.targets[0].components[0]);
    } else if (!p.groups.empty()) {
      label = group_label(0);
      x = r.gaussian(p.groups[0].components[0]);
    } else {
      label = kIntensityLabel;
      x = r.gaussian(p.intensity.components[0]);
    }
    const double ad = posterior_intensity(e, ys, x, label);
    EXPECT_LT(rel_err(posterior_intensity(e, ys, x, label, cauchy()), ad), 1e-6) << to_string(k);
    EXPECT_LT(rel_err(posterior_intensity(e, ys, x, label, fd()), ad), 1e-6) << to_string(k);
    const bool enumerable = k == FilterKind::BMD || k == FilterKind::PDA || k == FilterKind::JPDA ||
                            k == FilterKind::IPDA || k == FilterKind::JIPDA || k == FilterKind::MHT ||
                            k == FilterKind::JPDAS || k == FilterKind::JIPDAS || k == FilterKind::MB ||
                            k == FilterKind::BM;
    if (enumerable) EXPECT_LT(rel_err(enumeration_oracle(p, ys).intensity(label, x), ad), 1e-10) << to_string(k);
  }
}
