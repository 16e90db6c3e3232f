#include "pointillist/pgfl.hpp"
#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace pointillist;
using namespace pointillist::testing;

namespace {

using Ctx = SecularContext<cplx>;

cplx eval(const PgflExpr& e, const Ctx& ctx) { return evaluate_secular<cplx>(e, ctx); }

cplx random_weight(RandomStream& r) { return {uniform(r, -1.0, 1.0), uniform(r, -1.0, 1.0)}; }

Vec vec1(double a) { return Vec::Constant(1, a); }

MeasurementModel scalar_mm(double R) { return {Mat::Identity(1, 1), Mat::Constant(1, 1, R)}; }

BmdAtom bmd(const TargetLabel& label, double mean, double var, double pd) {
  return {label, GaussianMixture(GaussianDensity(vec1(mean), Mat::Constant(1, 1, var))), DetectionModel(pd),
          scalar_mm(0.5), std::nullopt};
}

/// Random context over the labels of `e`, with measurements inside box_of(d).
Ctx random_context(RandomStream& r, const PgflExpr& e, int d, int m) {
  Ctx ctx;
  ctx.base_g = uniform_int(r, 0, 1);
  for (int i = 0; i < m; ++i) {
    Vec y(d);
    for (int k = 0; k < d; ++k) y[k] = uniform(r, -8.0, 8.0);
    ctx.measurements.emplace_back(y, random_weight(r));
  }
  for (const auto& label : labels_of(e)) {
    const auto dim = label_dim(e, label);
    const int n = uniform_int(r, 0, 2);
    for (int k = 0; k < n; ++k) ctx.states[label].emplace_back(r.normal_vec(dim) * 3.0, random_weight(r));
  }
  return ctx;
}

/// Context restricted to one label's state deltas.
Ctx only(Ctx ctx, const TargetLabel& label) {
  for (auto it = ctx.states.begin(); it != ctx.states.end();) it = it->first == label ? std::next(it) : ctx.states.erase(it);
  return ctx;
}

/// The product-form likelihood with the closed form hidden, so the generic
/// cubature path evaluates it.
class OpaqueLikelihood final : public SetLikelihood {
 public:
  explicit OpaqueLikelihood(ProductFormLikelihood inner) : inner_(std::move(inner)) {}
  double missed_mass() const override { return inner_.missed_mass(); }
  int max_count() const override { return inner_.max_count(); }
  double count_mass(int n) const override { return inner_.count_mass(n); }
  double density(std::span<const Vec> ys, const Vec& x) const override { return inner_.density(ys, x); }

 private:
  ProductFormLikelihood inner_;
};

}  // namespace

TEST(Normalization, EveryFilterRow) {
  for (FilterKind k : all_filter_kinds())
    for (int s = 0; s < 20; ++s)
      EXPECT_LE(normalization_residual(build_filter(random_params(k, 100 + static_cast<std::uint64_t>(s)))), 1e-12)
          << to_string(k);
}

TEST(BmdAtom, ClosedFormWithOneMeasurementAndOneState) {
  // a + b alpha phat(y) + beta mu(x) (a + b alpha p(y|x)).
  const BmdAtom a = bmd("t0", 0.5, 2.0, 0.8);
  const Vec y = vec1(1.2), x = vec1(0.3);
  const cplx alpha(0.7, 0.1), beta(-0.4, 0.3);
  Ctx ctx;
  ctx.measurements.emplace_back(y, alpha);
  ctx.states["t0"].emplace_back(x, beta);
  const GaussianDensity prior = a.prior.components[0];
  const double phat = gaussian_eval(predicted_measurement(prior, a.mm), y);
  const double mu = gaussian_eval(prior, x);
  const double lik = a.mm.likelihood(y, x);
  const cplx want = 0.2 + 0.8 * alpha * phat + beta * mu * (0.2 + 0.8 * alpha * lik);
  EXPECT_LT(std::abs(eval(make_atom(a), ctx) - want), 1e-15);
}

TEST(BmdAtom, GateScalesTheIntegratedTerm) {
  BmdAtom a = bmd("t0", 0.5, 2.0, 0.8);
  a.gate = Gate(4.0, predicted_measurement(a.prior.components[0], a.mm));
  const double pg = gate_probability(*a.gate);
  Ctx ctx;
  // No measurement inside the gate: 1 - b P_G.
  EXPECT_NEAR(eval(make_atom(a), ctx).real(), 1.0 - 0.8 * pg, 1e-15);
  ctx.base_g = 1;
  EXPECT_NEAR(eval(make_atom(a), ctx).real(), 1.0, 1e-15);
}

TEST(ClutterAtom, MatchesClutterEvaluation) {
  const ClutterModel c = PoissonClutter(2.0, SpatialDensity::uniform(box_of(1)));
  Ctx ctx;
  ctx.measurements.emplace_back(vec1(1.0), cplx(0.7));
  ctx.measurements.emplace_back(vec1(-3.0), cplx(0.2, 0.4));
  const std::vector<Vec> pts = {vec1(1.0), vec1(-3.0)};
  const std::vector<cplx> w = {cplx(0.7), cplx(0.2, 0.4)};
  EXPECT_LT(std::abs(eval(make_atom(ClutterAtom{c, {}, 1.0}), ctx) - clutter_secular_eval<cplx>(c, 0, pts, w)), 1e-16);
}

TEST(Product, SingleChildIsItself) {
  const PgflExpr a = make_atom(bmd("t0", 0.0, 1.0, 0.9));
  EXPECT_EQ(compose_product({a}), a);
}

TEST(Product, FactorizesExactly) {
  RandomStream r(20, 0);
  const PgflExpr a = make_atom(bmd("t0", 0.0, 1.0, 0.9));
  const PgflExpr b = make_atom(bmd("t1", 2.0, 0.5, 0.6));
  const PgflExpr c = make_atom(ClutterAtom{PoissonClutter(1.5, SpatialDensity::uniform(box_of(1))), {}, 1.0});
  const PgflExpr p = compose_product({a, b, c});
  for (int i = 0; i < 100; ++i) {
    const Ctx ctx = random_context(r, p, 1, uniform_int(r, 0, 3));
    EXPECT_EQ(eval(p, ctx), eval(a, only(ctx, "t0")) * eval(b, only(ctx, "t1")) * eval(c, only(ctx, "")));
  }
}

TEST(Product, RejectsDuplicateLabels) {
  const PgflExpr a = make_atom(bmd("t0", 0.0, 1.0, 0.9));
  EXPECT_THROW(compose_product({a, a}), std::invalid_argument);
}

TEST(ExistenceWrap, LimitsAndArithmetic) {
  // A missed-detection-only context gives the child value 1 - pd = 0.6.
  const PgflExpr child = make_atom(bmd("t0", 0.0, 1.0, 0.4));
  Ctx ctx;
  EXPECT_NEAR(eval(child, ctx).real(), 0.6, 1e-16);
  EXPECT_NEAR(eval(wrap_existence(0.5, child), ctx).real(), 0.8, 1e-16);
  EXPECT_EQ(eval(wrap_existence(0.0, child), ctx), cplx(1.0));
  RandomStream r(21, 0);
  for (int i = 0; i < 50; ++i) {
    const Ctx c = random_context(r, child, 1, uniform_int(r, 0, 3));
    EXPECT_EQ(eval(wrap_existence(1.0, child), c), eval(child, c));
  }
  EXPECT_THROW(wrap_existence(1.3, child), std::invalid_argument);
}

TEST(PoissonWrap, NoMeasurementFactorialMomentFactorizes) {
  // exp(-N + N Psi): with no data the second factorial moment is D(x1) D(x2).
  const double mean = 2.5;
  const PgflExpr e = wrap_poisson(mean, make_atom(bmd("phd", 0.0, 1.0, 0.7)));
  const std::vector<Vec> xs = {vec1(0.3), vec1(-0.8)};
  const GaussianDensity prior(vec1(0.0), Mat::Identity(1, 1));
  const double f1 = 0.3 * mean * gaussian_eval(prior, xs[0]);
  const double f2 = 0.3 * mean * gaussian_eval(prior, xs[1]);
  // Posterior given zero measurements: intensity (1 - pd) D(x).
  EXPECT_NEAR(factorial_moment(e, {}, xs, "phd"), f1 * f2, 1e-14);
}

TEST(Wraps, RejectInvalidParameters) {
  EXPECT_NO_THROW(wrap_existence(0.5, make_atom(bmd("t0", 0.0, 1.0, 0.4))));
  EXPECT_THROW(wrap_poisson(-1.0, make_atom(bmd("t0", 0.0, 1.0, 0.4))), std::invalid_argument);
  EXPECT_THROW(wrap_cluster({0.5, 0.6}, make_atom(bmd("t0", 0.0, 1.0, 0.4))), std::invalid_argument);
}

TEST(Superpose, SingleLabelKeepsValues) {
  RandomStream r(22, 0);
  const PgflExpr a = make_atom(bmd("t0", 0.0, 1.0, 0.9));
  const PgflExpr s = superpose(a, {"t0"}, "s");
  for (int i = 0; i < 50; ++i) {
    Ctx ctx = random_context(r, a, 1, uniform_int(r, 0, 3));
    Ctx cs = ctx;
    cs.states.clear();
    if (ctx.states.count("t0")) cs.states["s"] = ctx.states["t0"];
    EXPECT_EQ(eval(s, cs), eval(a, ctx));
  }
}

TEST(Superpose, BindingSharedLabelEqualsBindingEachOriginal) {
  RandomStream r(23, 0);
  const PgflExpr p = compose_product({make_atom(bmd("t0", 0.0, 1.0, 0.9)), make_atom(bmd("t1", 2.0, 0.5, 0.6)),
                                      make_atom(bmd("t2", -1.0, 2.0, 0.7))});
  const PgflExpr s = superpose(p, {"t0", "t1"}, "s");
  EXPECT_EQ(labels_of(s), (std::set<TargetLabel>{"s", "t2"}));
  for (int i = 0; i < 50; ++i) {
    Ctx cs = random_context(r, s, 1, uniform_int(r, 0, 3));
    Ctx ctx = cs;
    ctx.states.erase("s");
    if (cs.states.count("s")) ctx.states["t0"] = ctx.states["t1"] = cs.states["s"];
    EXPECT_LT(std::abs(eval(s, cs) - eval(p, ctx)), 1e-15 * (1.0 + std::abs(eval(p, ctx))));
  }
  EXPECT_THROW(superpose(p, {"t9"}, "s"), std::invalid_argument);
  EXPECT_THROW(superpose(p, {"t0"}, "t2"), std::invalid_argument);
}

TEST(Marginalize, AllLabelsIsNormalizedAtOne) {
  const PgflExpr p = compose_product({make_atom(bmd("t0", 0.0, 1.0, 0.9)), make_atom(bmd("t1", 2.0, 0.5, 0.6))});
  const PgflExpr m = marginalize(p, {"t0", "t1"});
  EXPECT_TRUE(labels_of(m).empty());
  Ctx ctx;
  ctx.base_g = 1;
  EXPECT_NEAR(eval(m, ctx).real(), 1.0, 1e-15);
  EXPECT_THROW(marginalize(p, {"x"}), std::invalid_argument);
}

TEST(Marginalize, EqualsUnitTestFunction) {
  RandomStream r(24, 0);
  const PgflExpr p = compose_product({make_atom(bmd("t0", 0.0, 1.0, 0.9)), make_atom(bmd("t1", 2.0, 0.5, 0.6))});
  const PgflExpr m = marginalize(p, {"t1"});
  for (int i = 0; i < 50; ++i) {
    Ctx ctx = random_context(r, p, 1, uniform_int(r, 0, 3));
    Ctx cm = ctx;
    ctx.states.erase("t1");
    cm.states.erase("t1");
    EXPECT_EQ(eval(m, cm), eval(p, ctx));
  }
}

TEST(LabelDim, ReportsStateDimension) {
  const FilterParams p = random_params(FilterKind::JPDA, 3);
  const PgflExpr e = build_filter(p);
  EXPECT_EQ(label_dim(e, target_label(0)), p.mm.H.cols());
  EXPECT_THROW(label_dim(e, "nobody"), std::invalid_argument);
}

TEST(BuildFilter, ReductionsAreValueIdentical) {
  RandomStream r(25, 0);
  for (int s = 0; s < 50; ++s) {
    CaseOptions o;
    o.allow_gating = false;
    const ScanCase c = random_case(FilterKind::PDA, 300 + static_cast<std::uint64_t>(s), o);
    FilterParams ipda = c.params;
    ipda.kind = FilterKind::IPDA;
    ipda.existence = {1.0};
    FilterParams gated = c.params;
    gated.gate_threshold = 1e12;
    const PgflExpr e = build_filter(c.params);
    const int d = static_cast<int>(c.params.mm.H.rows());
    const Ctx ctx = random_context(r, e, d, static_cast<int>(c.ys.size()));
    EXPECT_LT(std::abs(eval(build_filter(ipda), ctx) - eval(e, ctx)), 1e-15 * (1.0 + std::abs(eval(e, ctx))));
    EXPECT_LT(std::abs(eval(build_filter(gated), ctx) - eval(e, ctx)), 1e-14 * (1.0 + std::abs(eval(e, ctx))));
  }
}

TEST(BuildFilter, MultiBernoulliIsSuperposedDataDrivenJipda) {
  RandomStream r(26, 0);
  for (int s = 0; s < 50; ++s) {
    const ScanCase c = random_case(FilterKind::MHT, 400 + static_cast<std::uint64_t>(s));
    FilterParams mb = c.params;
    mb.kind = FilterKind::MB;
    const PgflExpr mht = build_filter(c.params);
    const auto labels = labels_of(mht);
    const PgflExpr sup = superpose(mht, labels, kSharedLabel);
    const PgflExpr e = build_filter(mb);
    const int d = static_cast<int>(c.params.mm.H.rows());
    Ctx ctx = random_context(r, e, d, 0);
    ctx.measurements.clear();
    for (const auto& y : c.ys) ctx.measurements.emplace_back(y, random_weight(r));
    EXPECT_LT(std::abs(eval(e, ctx) - eval(sup, ctx)), 1e-14 * (1.0 + std::abs(eval(sup, ctx))));
  }
}

TEST(BuildFilter, RejectsUnsupportedCombinations) {
  FilterParams p = random_params(FilterKind::PDAE, 5);
  p.gate_threshold = 9.0;
  EXPECT_THROW(build_filter(p), std::invalid_argument);
  FilterParams q = random_params(FilterKind::JIPDA, 6);
  q.existence[0] = 1.3;
  EXPECT_THROW(build_filter(q), std::invalid_argument);
  FilterParams c = random_params(FilterKind::CPHD, 7);
  c.cardinality.clear();
  EXPECT_THROW(build_filter(c), std::invalid_argument);
  EXPECT_THROW(parse_filter_kind("kalmanish"), std::invalid_argument);
}

TEST(FilterKind, NamesRoundTrip) {
  for (FilterKind k : all_filter_kinds()) EXPECT_EQ(parse_filter_kind(to_string(k)), k);
}

TEST(GenPhdAtom, ProductFormMatchesExtendedTargetAtom) {
  RandomStream r(27, 0);
  for (int s = 0; s < 20; ++s) {
    const GaussianDensity prior = random_gaussian(r, 1);
    const ExtendedTargetPgf ext(uniform(r, 0.5, 0.95), random_pmf(r, 3));
    // A likelihood wider than the prior keeps the Gauss-Hermite rule accurate.
    const MeasurementModel mm = scalar_mm(uniform(r, 3.0, 5.0));
    const PgflExpr bme = make_atom(BmeAtom{"t0", GaussianMixture(prior), ext, mm});
    const auto closed = std::make_shared<ProductFormLikelihood>(ext, mm);
    const auto opaque = std::make_shared<OpaqueLikelihood>(ProductFormLikelihood(ext, mm));
    const PgflExpr gc = make_atom(GenPhdAtom{"t0", GaussianMixture(prior), closed, 6});
    const PgflExpr go = make_atom(GenPhdAtom{"t0", GaussianMixture(prior), opaque, 40});
    // The generic path evaluates measurement deltas only against g = 0.
    Ctx ctx = random_context(r, bme, 1, 0);
    ctx.base_g = 0;
    const GaussianDensity pred = predicted_measurement(prior, mm);
    for (int i = uniform_int(r, 0, 3); i > 0; --i) ctx.measurements.emplace_back(r.gaussian(pred), random_weight(r));
    const cplx want = eval(bme, ctx);
    EXPECT_LT(std::abs(eval(gc, ctx) - want), 1e-14 * (1.0 + std::abs(want)));
    EXPECT_LT(std::abs(eval(go, ctx) - want), 1e-10 * (1.0 + std::abs(want)));
  }
}

TEST(ResolutionAtom, ResolvedPairIsProductOfDetections) {
  RandomStream r(28, 0);
  for (int s = 0; s < 20; ++s) {
    const GaussianDensity p1 = random_gaussian(r, 1), p2 = random_gaussian(r, 1);
    const double pd = uniform(r, 0.5, 0.95);
    ResolutionModel rm(Mat::Identity(1, 1), Mat::Identity(1, 1), Mat::Identity(1, 1), pd, pd);
    rm.fixed_f = 0.0;
    const MeasurementModel mm = scalar_mm(0.5);
    const PgflExpr res = make_atom(ResolutionAtom{"t0", "t1", p1, p2, rm, mm.R});
    const PgflExpr pair = compose_product({make_atom(BmdAtom{"t0", GaussianMixture(p1), DetectionModel(pd), mm, {}}),
                                           make_atom(BmdAtom{"t1", GaussianMixture(p2), DetectionModel(pd), mm, {}})});
    const Ctx ctx = random_context(r, pair, 1, uniform_int(r, 0, 3));
    EXPECT_LT(std::abs(eval(res, ctx) - eval(pair, ctx)), 1e-13 * (1.0 + std::abs(eval(pair, ctx))));
  }
}
