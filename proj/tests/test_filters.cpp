#include "pointillist/filters.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace pointillist;
using namespace pointillist::testing;

namespace {

Vec vec1(double a) { return Vec::Constant(1, a); }

Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

FilterConfig scalar_config(FilterKind kind, double pd, double clutter_rate) {
  FilterConfig c;
  c.kind = kind;
  c.motion = MotionModel(Mat::Identity(1, 1), Mat::Zero(1, 1));
  c.mm = MeasurementModel(Mat::Identity(1, 1), Mat::Constant(1, 1, 0.5));
  c.det = DetectionModel(pd);
  c.clutter = PoissonClutter(clutter_rate, SpatialDensity::uniform(box_of(1)));
  return c;
}

double max_abs_diff(const Mat& a, const Mat& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace

TEST(Predict, IdentityMotionKeepsState) {
  const FilterState s = make_state(FilterKind::JPDA, {GaussianDensity(vec2(1.0, 2.0), Mat::Identity(2, 2))});
  const FilterState p = predict(s, MotionModel(Mat::Identity(2, 2), Mat::Zero(2, 2)), 1.0);
  ASSERT_EQ(p.targets.size(), 1u);
  EXPECT_EQ(max_abs_diff(p.targets[0].mean, s.targets[0].mean), 0.0);
  EXPECT_EQ(max_abs_diff(p.targets[0].cov, s.targets[0].cov), 0.0);
  EXPECT_EQ(p.target_ids, s.target_ids);
}

TEST(Predict, PhdMassWithSurvivalAndBirth) {
  const GaussianMixture d({1.0, 2.0}, {GaussianDensity(vec1(0.0), Mat::Identity(1, 1)),
                                       GaussianDensity(vec1(3.0), Mat::Identity(1, 1))});
  const FilterState s = make_state(FilterKind::PHD, {}, {}, d);
  BirthModel b;
  b.intensity = GaussianMixture({0.5}, {GaussianDensity(vec1(0.0), Mat::Identity(1, 1) * 4.0)});
  const FilterState p = predict(s, MotionModel(Mat::Identity(1, 1), Mat::Identity(1, 1)), 0.9, &b);
  EXPECT_NEAR(p.intensity.mass(), 3.2, 1e-15);
  EXPECT_EQ(p.intensity.size(), 3u);
  EXPECT_NEAR(p.intensity.components[0].cov(0, 0), 2.0, 1e-15);
}

TEST(Predict, ExistenceMultipliesBySurvival) {
  const FilterState s =
      make_state(FilterKind::JIPDA, {GaussianDensity(vec1(0.0), Mat::Identity(1, 1))}, std::vector<double>{0.8});
  const FilterState p = predict(s, MotionModel(Mat::Identity(1, 1), Mat::Zero(1, 1)), 0.95);
  EXPECT_NEAR(p.tracks[0].existence, 0.76, 1e-15);
  EXPECT_EQ(p.tracks[0].id, s.tracks[0].id);
}

TEST(Predict, DimensionMismatchThrows) {
  const FilterState s = make_state(FilterKind::JPDA, {GaussianDensity(vec1(0.0), Mat::Identity(1, 1))});
  EXPECT_THROW(predict(s, MotionModel(Mat::Identity(2, 2), Mat::Zero(2, 2)), 1.0), std::invalid_argument);
}

TEST(Update, BayesMarkovIsKalman) {
  const FilterConfig cfg = scalar_config(FilterKind::BM, 1.0, 0.0);
  const GaussianDensity prior(vec1(0.5), Mat::Constant(1, 1, 2.0));
  const std::vector<Vec> ys = {vec1(1.3)};
  const UpdateResult r = update(make_state(FilterKind::BM, {prior}), cfg, ys);
  const GaussianDensity want = kalman_update(prior, cfg.mm, ys[0]);
  EXPECT_NEAR(r.state.targets[0].mean[0], want.mean[0], 1e-12);
  EXPECT_NEAR(r.state.targets[0].cov(0, 0), want.cov(0, 0), 1e-12);
}

TEST(Update, PdaMeanIsOracleBlend) {
  const FilterConfig cfg = scalar_config(FilterKind::PDA, 0.8, 2.0);
  const GaussianDensity prior(vec1(0.5), Mat::Constant(1, 1, 2.0));
  const std::vector<Vec> ys = {vec1(1.7)};
  const UpdateResult r = update(make_state(FilterKind::PDA, {prior}), cfg, ys);
  const OracleStats o = enumeration_oracle(scan_params(make_state(FilterKind::PDA, {prior}), cfg, ys), ys);
  const double b0 = o.state_prob[0][OracleState::kMissed];
  const double b1 = o.state_prob[0][OracleState::assigned(0)];
  const double want = b0 * prior.mean[0] + b1 * kalman_update(prior, cfg.mm, ys[0]).mean[0];
  EXPECT_NEAR(r.state.targets[0].mean[0], want, 1e-12);
}

TEST(Update, PhdWithoutMeasurementsThinsIntensity) {
  FilterConfig cfg = scalar_config(FilterKind::PHD, 0.7, 1.0);
  const GaussianMixture d({1.5, 0.5}, {GaussianDensity(vec1(-3.0), Mat::Identity(1, 1)),
                                       GaussianDensity(vec1(4.0), Mat::Constant(1, 1, 2.0))});
  const UpdateResult r = update(make_state(FilterKind::PHD, {}, {}, d), cfg, {});
  for (double x : {-4.0, -3.0, 0.0, 4.0, 6.0})
    EXPECT_NEAR(r.state.intensity.eval(vec1(x)), 0.3 * d.eval(vec1(x)), 1e-12);
  EXPECT_NEAR(r.stats.expected_count, 0.6, 1e-12);
}

TEST(Update, PhdMatchesClosedFormReference) {
  RandomStream r(40, 0);
  for (int s = 0; s < 10; ++s) {
    FilterConfig cfg = scalar_config(FilterKind::PHD, uniform(r, 0.5, 0.95), uniform(r, 0.5, 3.0));
    const GaussianMixture d({uniform(r, 0.5, 2.0), uniform(r, 0.5, 2.0)},
                            {random_gaussian(r, 1), random_gaussian(r, 1)});
    const FilterState st = make_state(FilterKind::PHD, {}, {}, d);
    std::vector<Vec> ys;
    for (int j = 0; j < uniform_int(r, 0, 4); ++j) ys.push_back(vec1(uniform(r, -8.0, 8.0)));
    const UpdateResult a = update(st, cfg, ys);
    const UpdateResult b = reference_update(st, cfg, ys);
    EXPECT_LT(rel_err(a.stats.likelihood, b.stats.likelihood), 1e-10);
    EXPECT_LT(vec_rel_err(a.stats.cardinality, b.stats.cardinality), 1e-9);
    for (double x : {-5.0, 0.0, 2.5}) EXPECT_LT(rel_err(a.state.intensity.eval(vec1(x)), b.state.intensity.eval(vec1(x))), 1e-9);
  }
}

TEST(Update, SingleDetectionKindsMatchReference) {
  for (FilterKind k : {FilterKind::PDA, FilterKind::JPDA, FilterKind::IPDA, FilterKind::JIPDA}) {
    for (int s = 0; s < 10; ++s) {
      CaseOptions o;
      o.allow_gating = false;
      const ScanCase c = random_case(k, 1400 + static_cast<std::uint64_t>(s), o);
      FilterConfig cfg;
      cfg.kind = k;
      const int d = static_cast<int>(c.params.mm.H.cols());
      cfg.motion = MotionModel(Mat::Identity(d, d), Mat::Zero(d, d));
      cfg.mm = c.params.mm;
      cfg.det = c.params.det;
      cfg.clutter = c.params.clutter;
      std::vector<GaussianDensity> priors;
      for (const auto& t : c.params.targets) priors.push_back(t.components[0]);
      const FilterState st = make_state(k, priors, c.params.existence);
      const UpdateResult a = update(st, cfg, c.ys);
      const UpdateResult b = reference_update(st, cfg, c.ys);
      EXPECT_LT(rel_err(a.stats.likelihood, b.stats.likelihood), 1e-10) << to_string(k);
      const auto ea = estimate(a.state, 0.0), eb = estimate(b.state, 0.0);
      ASSERT_EQ(ea.size(), eb.size());
      for (std::size_t i = 0; i < ea.size(); ++i) EXPECT_LT((ea[i].state - eb[i].state).norm(), 1e-9);
    }
  }
}

TEST(Update, PmhtKeepsEveryTarget) {
  FilterConfig cfg = scalar_config(FilterKind::PMHT, 0.9, 1.0);
  cfg.pmht_rates = {0.8, 1.2};
  const FilterState st = make_state(FilterKind::PMHT, {GaussianDensity(vec1(-2.0), Mat::Identity(1, 1)),
                                                        GaussianDensity(vec1(2.0), Mat::Identity(1, 1))});
  const std::vector<Vec> ys = {vec1(-1.8), vec1(2.4), vec1(0.1)};
  const UpdateResult r = update(st, cfg, ys);
  ASSERT_EQ(r.state.targets.size(), 2u);
  EXPECT_LT(r.state.targets[0].mean[0], 0.0);
  EXPECT_GT(r.state.targets[1].mean[0], 0.0);
  EXPECT_LT(r.state.targets[0].cov(0, 0), 1.0);
}

TEST(Update, JointPhdWithOneGroupIsPhd) {
  RandomStream r(41, 0);
  for (int s = 0; s < 10; ++s) {
    FilterConfig cfg = scalar_config(FilterKind::PHD, uniform(r, 0.5, 0.95), uniform(r, 0.5, 3.0));
    const GaussianMixture d({uniform(r, 0.5, 2.0)}, {random_gaussian(r, 1)});
    std::vector<Vec> ys;
    for (int j = 0; j < uniform_int(r, 0, 3); ++j) ys.push_back(vec1(uniform(r, -8.0, 8.0)));
    const UpdateResult a = update(make_state(FilterKind::PHD, {}, {}, d), cfg, ys);
    cfg.kind = FilterKind::JointPHD;
    const UpdateResult b = update(make_state(FilterKind::JointPHD, {}, {}, {}, {}, {d}), cfg, ys);
    EXPECT_LT(rel_err(b.stats.likelihood, a.stats.likelihood), 1e-9);
    for (double x : {-5.0, 0.0, 2.5})
      EXPECT_LT(rel_err(b.state.groups[0].eval(vec1(x)), a.state.intensity.eval(vec1(x))), 1e-9);
  }
}

TEST(Update, JointGenPhdWithProductFormIsJointPhd) {
  RandomStream r(42, 0);
  for (int s = 0; s < 10; ++s) {
    FilterConfig cfg = scalar_config(FilterKind::JointPHD, uniform(r, 0.5, 0.95), uniform(r, 0.5, 3.0));
    const std::vector<GaussianMixture> groups = {GaussianMixture({uniform(r, 0.5, 2.0)}, {random_gaussian(r, 1)}),
                                                 GaussianMixture({uniform(r, 0.5, 2.0)}, {random_gaussian(r, 1)})};
    std::vector<Vec> ys;
    for (int j = 0; j < uniform_int(r, 0, 3); ++j) ys.push_back(vec1(uniform(r, -8.0, 8.0)));
    const FilterState st = make_state(FilterKind::JointPHD, {}, {}, {}, {}, groups);
    const UpdateResult a = update(st, cfg, ys);
    cfg.kind = FilterKind::JointGenPHD;
    cfg.ext = ExtendedTargetPgf(cfg.det.pd, {1.0});
    FilterState sg = st;
    sg.kind = FilterKind::JointGenPHD;
    const UpdateResult b = update(sg, cfg, ys);
    EXPECT_LT(rel_err(b.stats.likelihood, a.stats.likelihood), 1e-9);
    for (std::size_t g = 0; g < groups.size(); ++g)
      for (double x : {-5.0, 0.0, 2.5})
        EXPECT_LT(rel_err(b.state.groups[g].eval(vec1(x)), a.state.groups[g].eval(vec1(x))), 1e-9);
  }
}

TEST(Update, CphdCardinalityIsValid) {
  FilterConfig cfg = scalar_config(FilterKind::CPHD, 0.8, 1.5);
  cfg.n_max = 20;
  const GaussianMixture d({2.0}, {GaussianDensity(vec1(0.0), Mat::Constant(1, 1, 3.0))});
  const FilterState st = make_state(FilterKind::CPHD, {}, {}, d, poisson_pmf(2.0, 20));
  const std::vector<Vec> ys = {vec1(0.3), vec1(-1.0), vec1(6.0)};
  const UpdateResult r = update(st, cfg, ys);
  double sum = 0.0;
  for (double v : r.state.cardinality) {
    EXPECT_GE(v, 0.0);
    sum += v;
  }
  EXPECT_NEAR(sum, 1.0, 1e-9);
  const FilterState p = predict(r.state, cfg.motion, 0.9);
  double psum = 0.0;
  for (double v : p.cardinality) psum += v;
  EXPECT_NEAR(psum, 1.0, 1e-12);
}

TEST(Update, ZeroProbabilityScanThrows) {
  FilterConfig cfg = scalar_config(FilterKind::JPDA, 0.9, 0.0);
  cfg.clutter = ClusterClutter({1.0}, SpatialDensity::uniform(box_of(1)));
  const FilterState st = make_state(FilterKind::JPDA, {GaussianDensity(vec1(0.0), Mat::Identity(1, 1))});
  const std::vector<Vec> ys = {vec1(0.1), vec1(0.2)};
  EXPECT_THROW(update(st, cfg, ys), NumericalError);
}

TEST(MixtureReduce, SingleComponentUnchanged) {
  const GaussianMixture m({0.7}, {GaussianDensity(vec1(1.0), Mat::Constant(1, 1, 2.0))});
  const GaussianMixture r = mixture_reduce(m);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_DOUBLE_EQ(r.weights[0], 0.7);
  EXPECT_DOUBLE_EQ(r.components[0].mean[0], 1.0);
  EXPECT_DOUBLE_EQ(r.components[0].cov(0, 0), 2.0);
}

TEST(MixtureReduce, IdenticalPairMerges) {
  const GaussianDensity g(vec2(1.0, -1.0), Mat::Identity(2, 2) * 3.0);
  const GaussianMixture r = mixture_reduce(GaussianMixture({0.4, 0.4}, {g, g}));
  ASSERT_EQ(r.size(), 1u);
  EXPECT_NEAR(r.weights[0], 0.8, 1e-15);
  EXPECT_LT((r.components[0].mean - g.mean).norm(), 1e-15);
  EXPECT_LT(max_abs_diff(r.components[0].cov, g.cov), 1e-14);
}

TEST(MixtureReduce, PrunedWeightBookkeeping) {
  RandomStream r(43, 0);
  for (int s = 0; s < 50; ++s) {
    GaussianMixture m;
    for (int k = 0; k < uniform_int(r, 1, 30); ++k) {
      m.weights.push_back(std::pow(10.0, uniform(r, -7.0, 0.0)));
      m.components.push_back(random_gaussian(r, 2, 20.0));
    }
    MixtureReduceOptions o;
    o.prune_threshold = 1e-4;
    o.max_components = 5;
    ReduceReport rep;
    const GaussianMixture out = mixture_reduce(m, o, &rep);
    EXPECT_LE(out.size(), 5u);
    EXPECT_NEAR(m.mass() - out.mass(), rep.pruned_weight, 1e-14);
  }
}

TEST(Estimate, BernoulliAllAbsentIsEmpty) {
  const FilterState s = make_state(FilterKind::JIPDA,
                                   {GaussianDensity(vec1(0.0), Mat::Identity(1, 1)),
                                    GaussianDensity(vec1(2.0), Mat::Identity(1, 1))},
                                   std::vector<double>{0.0, 0.0});
  EXPECT_TRUE(estimate(s).empty());
}

TEST(Estimate, FixedCountGivesEveryTarget) {
  const FilterState s = make_state(FilterKind::JPDA, {GaussianDensity(vec1(0.0), Mat::Identity(1, 1)),
                                                      GaussianDensity(vec1(2.0), Mat::Identity(1, 1)),
                                                      GaussianDensity(vec1(5.0), Mat::Identity(1, 1))});
  const auto e = estimate(s);
  ASSERT_EQ(e.size(), 3u);
  EXPECT_EQ(e[1].state[0], 2.0);
  EXPECT_EQ(*e[2].id, s.target_ids[2]);
}

TEST(Estimate, PhdPseudoMap) {
  const GaussianMixture d({1.1, 0.9, 0.05}, {GaussianDensity(vec1(-3.0), Mat::Identity(1, 1)),
                                             GaussianDensity(vec1(2.0), Mat::Identity(1, 1)),
                                             GaussianDensity(vec1(7.0), Mat::Identity(1, 1))});
  const FilterState s = make_state(FilterKind::PHD, {}, {}, d, {0.1, 0.2, 0.6, 0.1});
  const auto e = estimate(s);
  ASSERT_EQ(e.size(), 2u);
  EXPECT_EQ(e[0].state[0], -3.0);
  EXPECT_EQ(e[1].state[0], 2.0);
}

TEST(UnresolvedPair, ResolvedIsJpda) {
  RandomStream r(44, 0);
  for (int s = 0; s < 10; ++s) {
    FilterConfig cfg = scalar_config(FilterKind::JPDA, uniform(r, 0.6, 0.95), uniform(r, 0.5, 2.0));
    const GaussianDensity a = random_gaussian(r, 1), b = random_gaussian(r, 1);
    ResolutionModel rm(cfg.mm.H, cfg.mm.H, Mat::Identity(1, 1), cfg.det.pd, cfg.det.pd);
    rm.fixed_f = 0.0;
    std::vector<Vec> ys;
    for (int j = 0; j < uniform_int(r, 0, 3); ++j) ys.push_back(vec1(uniform(r, -8.0, 8.0)));
    const PairStepResult p = unresolved_pair_step(a, b, rm, cfg.mm, std::get<PoissonClutter>(cfg.clutter), ys);
    const UpdateResult j = update(make_state(FilterKind::JPDA, {a, b}), cfg, ys);
    EXPECT_LT(rel_err(p.stats.likelihood, j.stats.likelihood), 1e-9);
    EXPECT_NEAR(p.first.mean[0], j.state.targets[0].mean[0], 1e-9);
    EXPECT_NEAR(p.second.mean[0], j.state.targets[1].mean[0], 1e-9);
    EXPECT_NEAR(p.first.cov(0, 0), j.state.targets[0].cov(0, 0), 1e-9);
  }
}

TEST(UnresolvedPair, UnresolvedCannotExplainTwoMeasurements) {
  const MeasurementModel mm(Mat::Identity(1, 1), Mat::Constant(1, 1, 0.5));
  ResolutionModel rm(mm.H, mm.H, Mat::Identity(1, 1), 0.9, 0.9);
  rm.fixed_f = 1.0;
  const std::vector<Vec> ys = {vec1(0.2), vec1(-0.4)};
  const PairStepResult p = unresolved_pair_step(GaussianDensity(vec1(0.0), Mat::Identity(1, 1)),
                                                GaussianDensity(vec1(0.5), Mat::Identity(1, 1)), rm, mm,
                                                PoissonClutter(1.0, SpatialDensity::uniform(box_of(1))), ys);
  ASSERT_EQ(p.origin.size(), 3u);
  EXPECT_LE(p.origin[2], 1e-12);
  EXPECT_NEAR(p.origin[0] + p.origin[1], 1.0, 1e-12);
}

TEST(UnresolvedPair, MidResolutionMatchesOracle) {
  const MeasurementModel mm(Mat::Identity(1, 1), Mat::Constant(1, 1, 0.5));
  const ResolutionModel rm(mm.H, mm.H, Mat::Identity(1, 1), 0.9, 0.85);
  const GaussianDensity a(vec1(0.0), Mat::Constant(1, 1, 0.5)), b(vec1(1.0), Mat::Constant(1, 1, 0.5));
  const PoissonClutter c(1.0, SpatialDensity::uniform(box_of(1)));
  const std::vector<Vec> ys = {vec1(0.4), vec1(1.2)};
  const PairStepResult p = unresolved_pair_step(a, b, rm, mm, c, ys);
  const ResolutionOracleStats o = resolution_oracle(a, b, rm, mm.R, c, ys);
  EXPECT_LT(rel_err(p.stats.likelihood, o.total), 1e-8);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(p.origin[k], o.origin[k], 1e-8);
  EXPECT_NEAR(p.first.mean[0], o.mean1[0], 1e-8);
  EXPECT_NEAR(p.second.mean[0], o.mean2[0], 1e-8);
}

TEST(CloseMoments, RecoversGaussian) {
  const GaussianDensity g(vec2(1.0, -2.0), (Mat(2, 2) << 2.0, 0.3, 0.3, 1.0).finished());
  const auto probes = moment_probes(2);
  std::vector<double> vals;
  for (const auto& p : probes) {
    if (p.order == 0) vals.push_back(1.5);
    else if (p.order == 1) vals.push_back(1.5 * g.mean[p.i]);
    else vals.push_back(1.5 * (g.cov(p.i, p.j) + g.mean[p.i] * g.mean[p.j]));
  }
  const auto [mass, out] = close_moments(vals, 2);
  EXPECT_NEAR(mass, 1.5, 1e-15);
  EXPECT_LT((out.mean - g.mean).norm(), 1e-14);
  EXPECT_LT(max_abs_diff(out.cov, g.cov), 1e-14);
}
