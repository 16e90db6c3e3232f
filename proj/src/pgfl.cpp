#include "pointillist/pgfl.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pointillist {

namespace {

constexpr double kWrapTolerance = 1e-9;

void require_normalized(const PgflExpr& child, const char* what) {
  const double r = normalization_residual(child);
  if (!(std::abs(r) <= kWrapTolerance))
    throw NumericalError(std::string(what) + ": child is not normalized (residual " + std::to_string(r) + ")");
}

template <class F>
void visit_atoms(const PgflExpr& e, F&& f) {
  std::visit(
      [&](const auto& n) {
        using N = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<N, ProductNode>) {
          for (const auto& c : n.children) visit_atoms(c, f);
        } else if constexpr (std::is_same_v<N, ExistenceWrapNode> || std::is_same_v<N, PoissonWrapNode> ||
                             std::is_same_v<N, ClusterWrapNode> || std::is_same_v<N, MarginalNode>) {
          visit_atoms(n.child, f);
        } else {
          f(n);
        }
      },
      e->node);
}

void collect_labels(const PgflExpr& e, const std::set<TargetLabel>& bound, std::set<TargetLabel>& out) {
  std::visit(
      [&](const auto& n) {
        using N = std::decay_t<decltype(n)>;
        auto add = [&](const TargetLabel& l) {
          if (!bound.count(l)) out.insert(l);
        };
        if constexpr (std::is_same_v<N, ProductNode>) {
          for (const auto& c : n.children) collect_labels(c, bound, out);
        } else if constexpr (std::is_same_v<N, MarginalNode>) {
          std::set<TargetLabel> b = bound;
          b.insert(n.labels.begin(), n.labels.end());
          collect_labels(n.child, b, out);
        } else if constexpr (std::is_same_v<N, ExistenceWrapNode> || std::is_same_v<N, PoissonWrapNode> ||
                             std::is_same_v<N, ClusterWrapNode>) {
          collect_labels(n.child, bound, out);
        } else if constexpr (std::is_same_v<N, ResolutionAtom>) {
          add(n.label1);
          add(n.label2);
        } else if constexpr (std::is_same_v<N, ClutterAtom>) {
        } else {
          add(n.label);
        }
      },
      e->node);
}

PgflExpr relabel(const PgflExpr& e, const std::set<TargetLabel>& labels, const TargetLabel& shared) {
  auto map = [&](const TargetLabel& l) { return labels.count(l) ? shared : l; };
  return std::visit(
      [&](const auto& n) -> PgflExpr {
        using N = std::decay_t<decltype(n)>;
        N copy = n;
        if constexpr (std::is_same_v<N, ProductNode>) {
          for (auto& c : copy.children) c = relabel(c, labels, shared);
        } else if constexpr (std::is_same_v<N, ExistenceWrapNode> || std::is_same_v<N, PoissonWrapNode> ||
                             std::is_same_v<N, ClusterWrapNode>) {
          copy.child = relabel(n.child, labels, shared);
        } else if constexpr (std::is_same_v<N, MarginalNode>) {
          copy.labels.clear();
          for (const auto& l : n.labels) copy.labels.insert(map(l));
          copy.child = relabel(n.child, labels, shared);
        } else if constexpr (std::is_same_v<N, ResolutionAtom>) {
          copy.label1 = map(n.label1);
          copy.label2 = map(n.label2);
        } else if constexpr (!std::is_same_v<N, ClutterAtom>) {
          copy.label = map(n.label);
        }
        return std::make_shared<PgflNode>(std::move(copy));
      },
      e->node);
}

void require_prior(const GaussianMixture& m, const char* what) {
  if (m.size() == 0) throw std::invalid_argument(std::string(what) + ": prior has no components");
  if (std::abs(m.mass() - 1.0) > 1e-9) throw std::invalid_argument(std::string(what) + ": prior must integrate to 1");
}

}  // namespace

ProductFormLikelihood::ProductFormLikelihood(ExtendedTargetPgf ext, MeasurementModel mm)
    : ext_(std::move(ext)), mm_(std::move(mm)) {}

double ProductFormLikelihood::count_mass(int n) const {
  if (n < 1 || n > max_count()) return 0.0;
  return ext_.b() * ext_.dm[static_cast<std::size_t>(n - 1)];
}

double ProductFormLikelihood::density(std::span<const Vec> ys, const Vec& x) const {
  const int n = static_cast<int>(ys.size());
  if (n == 0) return missed_mass();
  double v = count_mass(n);
  for (const auto& y : ys) v *= mm_.likelihood(y, x);
  return v;
}

PgflExpr make_atom(BmdAtom a) {
  require_prior(a.prior, "BMD atom");
  return std::make_shared<PgflNode>(std::move(a));
}
PgflExpr make_atom(BmeAtom a) {
  require_prior(a.prior, "BME atom");
  return std::make_shared<PgflNode>(std::move(a));
}
PgflExpr make_atom(PoissonMeasAtom a) {
  require_prior(a.prior, "PPP-measurement atom");
  return std::make_shared<PgflNode>(std::move(a));
}
PgflExpr make_atom(DataAtom a) {
  require_prior(a.birth, "data atom");
  return std::make_shared<PgflNode>(std::move(a));
}
PgflExpr make_atom(ResolutionAtom a) {
  if (a.rm.h1.cols() != a.prior1.dim() || a.rm.h2.cols() != a.prior2.dim() || a.R.rows() != a.rm.h1.rows())
    throw std::invalid_argument("resolution atom: dimension mismatch");
  if (a.label1 == a.label2) throw std::invalid_argument("resolution atom: labels must differ");
  return std::make_shared<PgflNode>(std::move(a));
}
PgflExpr make_atom(GenPhdAtom a) {
  require_prior(a.prior, "generalized PHD atom");
  if (!a.likelihood) throw std::invalid_argument("generalized PHD atom: missing likelihood");
  if (a.cubature_order < 1) throw std::invalid_argument("generalized PHD atom: cubature order must be positive");
  return std::make_shared<PgflNode>(std::move(a));
}
PgflExpr make_atom(ClutterAtom a) {
  if (!(a.gated_mass >= 0.0 && a.gated_mass <= 1.0)) throw std::invalid_argument("clutter gated mass out of range");
  return std::make_shared<PgflNode>(std::move(a));
}

PgflExpr compose_product(std::vector<PgflExpr> children) {
  if (children.empty()) throw std::invalid_argument("compose_product: no children");
  if (children.size() == 1) return children.front();
  std::set<TargetLabel> seen;
  for (const auto& c : children) {
    for (const auto& l : labels_of(c))
      if (!seen.insert(l).second) throw std::invalid_argument("compose_product: duplicate target label '" + l + "'");
  }
  return std::make_shared<PgflNode>(ProductNode{std::move(children)});
}

PgflExpr wrap_existence(double chi, PgflExpr child) {
  if (!(chi >= 0.0 && chi <= 1.0)) throw std::invalid_argument("existence probability out of range");
  require_normalized(child, "existence wrap");
  return std::make_shared<PgflNode>(ExistenceWrapNode{chi, std::move(child)});
}

PgflExpr wrap_poisson(double mean, PgflExpr child) {
  if (!(mean >= 0.0) || !std::isfinite(mean)) throw std::invalid_argument("Poisson mean out of range");
  require_normalized(child, "Poisson wrap");
  return std::make_shared<PgflNode>(PoissonWrapNode{mean, std::move(child)});
}

PgflExpr wrap_cluster(std::vector<double> card, PgflExpr child) {
  if (card.empty()) throw std::invalid_argument("cardinality distribution is empty");
  for (double v : card)
    if (!(v >= 0.0)) throw std::invalid_argument("cardinality probability negative");
  if (std::abs(std::accumulate(card.begin(), card.end(), 0.0) - 1.0) > kPmfTolerance)
    throw std::invalid_argument("cardinality probabilities must sum to 1");
  require_normalized(child, "cluster wrap");
  return std::make_shared<PgflNode>(ClusterWrapNode{std::move(card), std::move(child)});
}

PgflExpr superpose(const PgflExpr& e, const std::set<TargetLabel>& labels, const TargetLabel& shared) {
  const auto present = labels_of(e);
  std::optional<Eigen::Index> dim;
  for (const auto& l : labels) {
    if (!present.count(l)) throw std::invalid_argument("superpose: unknown label '" + l + "'");
    const Eigen::Index d = label_dim(e, l);
    if (dim && *dim != d) throw std::invalid_argument("superpose: state dimension mismatch among superposed targets");
    dim = d;
  }
  if (present.count(shared) && !labels.count(shared))
    throw std::invalid_argument("superpose: shared label already in use");
  return relabel(e, labels, shared);
}

PgflExpr marginalize(const PgflExpr& e, const std::set<TargetLabel>& labels) {
  const auto present = labels_of(e);
  for (const auto& l : labels)
    if (!present.count(l)) throw std::invalid_argument("marginalize: unknown label '" + l + "'");
  return std::make_shared<PgflNode>(MarginalNode{labels, e});
}

std::set<TargetLabel> labels_of(const PgflExpr& e) {
  std::set<TargetLabel> out;
  collect_labels(e, {}, out);
  return out;
}

Eigen::Index label_dim(const PgflExpr& e, const TargetLabel& label) {
  std::optional<Eigen::Index> dim;
  visit_atoms(e, [&](const auto& a) {
    using A = std::decay_t<decltype(a)>;
    if constexpr (std::is_same_v<A, ResolutionAtom>) {
      if (a.label1 == label) dim = a.prior1.dim();
      if (a.label2 == label) dim = a.prior2.dim();
    } else if constexpr (std::is_same_v<A, DataAtom>) {
      if (a.label == label) dim = a.birth.dim();
    } else if constexpr (!std::is_same_v<A, ClutterAtom>) {
      if (a.label == label) dim = a.prior.dim();
    }
  });
  if (!dim) throw std::invalid_argument("unknown label '" + label + "'");
  return *dim;
}

StateProbe StateProbe::delta(Vec point) {
  StateProbe p;
  p.kind = Kind::Delta;
  p.x = std::move(point);
  return p;
}

StateProbe StateProbe::mass() {
  StateProbe p;
  p.kind = Kind::Moment;
  p.order = 0;
  return p;
}

StateProbe StateProbe::first(int i) {
  StateProbe p = mass();
  p.order = 1;
  p.i = i;
  return p;
}

StateProbe StateProbe::second(int i, int j) {
  StateProbe p = mass();
  p.order = 2;
  p.i = i;
  p.j = j;
  return p;
}

double normalization_residual(const PgflExpr& e) {
  SecularPoints pts;
  pts.base_g = 1;
  auto c = std::make_shared<CompiledSecular>(compile_secular(e, pts));
  const SecularKernel k = specialize(c, {}, BaseValues{});
  const cplx v = evaluate_kernel<cplx>(k, {});
  return std::abs(v - 1.0);
}

// ---------------------------------------------------------------------------

namespace {

struct KindName {
  FilterKind kind;
  std::string_view name;
};

constexpr KindName kKindNames[] = {
    {FilterKind::BM, "bm"},         {FilterKind::BMD, "bmd"},
    {FilterKind::BME, "bme"},       {FilterKind::PDA, "pda"},
    {FilterKind::PDAE, "pdae"},     {FilterKind::JPDA, "jpda"},
    {FilterKind::PMHT, "pmht"},     {FilterKind::IPDA, "ipda"},
    {FilterKind::JIPDA, "jipda"},   {FilterKind::MHT, "mht"},
    {FilterKind::JPDAS, "jpdas"},   {FilterKind::JIPDAS, "jipdas"},
    {FilterKind::PMHTS, "pmhts"},   {FilterKind::PHD, "phd"},
    {FilterKind::CPHD, "cphd"},     {FilterKind::GenPHD, "genphd"},
    {FilterKind::MB, "mb"},         {FilterKind::JointPHD, "jointphd"},
    {FilterKind::JointGenPHD, "jointgenphd"}, {FilterKind::ResJPDA, "resjpda"},
};

bool is_bernoulli(FilterKind k) {
  return k == FilterKind::IPDA || k == FilterKind::JIPDA || k == FilterKind::MHT || k == FilterKind::JIPDAS ||
         k == FilterKind::MB;
}

bool has_data_targets(FilterKind k) { return k == FilterKind::MHT || k == FilterKind::MB; }

std::size_t expected_targets(FilterKind k) {
  switch (k) {
    case FilterKind::BM:
    case FilterKind::BMD:
    case FilterKind::BME:
    case FilterKind::PDA:
    case FilterKind::PDAE:
    case FilterKind::IPDA:
      return 1;
    case FilterKind::ResJPDA:
      return 2;
    default:
      return 0;
  }
}

bool uses_target_list(FilterKind k) {
  switch (k) {
    case FilterKind::PHD:
    case FilterKind::CPHD:
    case FilterKind::GenPHD:
    case FilterKind::JointPHD:
    case FilterKind::JointGenPHD:
      return false;
    default:
      return true;
  }
}

std::shared_ptr<const SetLikelihood> set_likelihood_of(const FilterParams& p) {
  if (p.set_likelihood) return p.set_likelihood;
  return std::make_shared<ProductFormLikelihood>(p.ext.value_or(ExtendedTargetPgf(p.det.pd, {1.0})), p.mm);
}

double clutter_intensity(const ClutterModel& c, const Vec& y) {
  if (const auto* pc = std::get_if<PoissonClutter>(&c)) return pc->intensity(y);
  const auto& cc = std::get<ClusterClutter>(c);
  double mean = 0.0;
  for (std::size_t k = 0; k < cc.card.size(); ++k) mean += static_cast<double>(k) * cc.card[k];
  return mean * cc.spatial.eval(y);
}

}  // namespace

std::string_view to_string(FilterKind k) {
  for (const auto& kn : kKindNames)
    if (kn.kind == k) return kn.name;
  return "unknown";
}

FilterKind parse_filter_kind(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  for (const auto& kn : kKindNames)
    if (kn.name == lower) return kn.kind;
  throw std::invalid_argument("filter.kind: unknown filter '" + std::string(name) + "'");
}

const std::vector<FilterKind>& all_filter_kinds() {
  static const std::vector<FilterKind> kinds = [] {
    std::vector<FilterKind> v;
    for (const auto& kn : kKindNames) v.push_back(kn.kind);
    return v;
  }();
  return kinds;
}

TargetLabel target_label(std::size_t i) { return "t" + std::to_string(i); }
TargetLabel data_label(std::size_t j) { return "d" + std::to_string(j); }
TargetLabel group_label(std::size_t g) { return "g" + std::to_string(g); }

bool is_superposed(FilterKind k) {
  return k == FilterKind::JPDAS || k == FilterKind::JIPDAS || k == FilterKind::PMHTS || k == FilterKind::MB;
}

bool uses_clutter(FilterKind k) { return k != FilterKind::BM && k != FilterKind::BMD && k != FilterKind::BME; }

bool supports_gating(FilterKind k) {
  switch (k) {
    case FilterKind::PDA:
    case FilterKind::JPDA:
    case FilterKind::IPDA:
    case FilterKind::JIPDA:
    case FilterKind::MHT:
    case FilterKind::JPDAS:
    case FilterKind::JIPDAS:
    case FilterKind::MB:
      return true;
    default:
      return false;
  }
}

std::vector<Gate> filter_gates(const FilterParams& p) {
  std::vector<Gate> gates;
  if (!p.gate_threshold) return gates;
  if (!supports_gating(p.kind))
    throw std::invalid_argument(std::string("unsupported parameter combination: gating with filter '") +
                                std::string(to_string(p.kind)) + "'");
  for (const auto& t : p.targets) gates.emplace_back(*p.gate_threshold, predicted_measurement(moment_match(t), p.mm));
  if (has_data_targets(p.kind))
    for (const auto& d : p.data_priors)
      gates.emplace_back(*p.gate_threshold, predicted_measurement(moment_match(d), p.mm));
  return gates;
}

std::vector<Vec> gate_measurements(const FilterParams& p, std::span<const Vec> ys) {
  const auto gates = filter_gates(p);
  if (gates.empty()) return {ys.begin(), ys.end()};
  std::vector<Vec> out;
  for (const auto& y : ys)
    if (std::any_of(gates.begin(), gates.end(), [&](const Gate& g) { return g.contains(y); })) out.push_back(y);
  return out;
}

void attach_data_births(FilterParams& p, const DataBirth& birth, std::span<const Vec> ys) {
  if (birth.cov.rows() != p.mm.state_dim() || birth.cov.cols() != p.mm.state_dim())
    throw std::invalid_argument("birth.cov: dimension mismatch");
  const Mat pinv = p.mm.H.completeOrthogonalDecomposition().pseudoInverse();
  p.data_priors.clear();
  p.data_gamma.clear();
  for (const auto& y : ys) {
    p.data_priors.emplace_back(GaussianDensity(pinv * y, birth.cov));
    double g = 0.0;
    if (birth.gamma) {
      g = *birth.gamma;
    } else {
      const double lam = clutter_intensity(p.clutter, y);
      g = (birth.rate + lam) > 0.0 ? birth.rate / (birth.rate + lam) : 0.0;
    }
    if (!(g >= 0.0 && g <= 1.0)) throw std::invalid_argument("birth.gamma: existence probability out of range");
    p.data_gamma.push_back(g);
  }
}

PgflExpr build_filter(const FilterParams& p) {
  const FilterKind k = p.kind;
  if (uses_target_list(k)) {
    const bool may_be_empty = k == FilterKind::JIPDA || k == FilterKind::JIPDAS || k == FilterKind::MHT || k == FilterKind::MB;
    if (p.targets.empty() && !may_be_empty)
      throw std::invalid_argument("filter.targets: at least one target is required");
    const std::size_t want = expected_targets(k);
    if (want != 0 && p.targets.size() != want)
      throw std::invalid_argument("filter.targets: filter '" + std::string(to_string(k)) + "' needs exactly " +
                                  std::to_string(want) + " target(s)");
  }
  if (is_bernoulli(k) && p.existence.size() != p.targets.size())
    throw std::invalid_argument("filter.existence: one existence probability per target is required");
  for (double chi : p.existence)
    if (!(chi >= 0.0 && chi <= 1.0)) throw std::invalid_argument("existence probability out of range");
  if (has_data_targets(k) && p.data_priors.size() != p.data_gamma.size())
    throw std::invalid_argument("filter.data: birth prior and gamma counts differ");
  if (k == FilterKind::PDAE && p.gate_threshold)
    throw std::invalid_argument("unsupported parameter combination: gating with extended targets");

  const std::vector<Gate> gates = filter_gates(p);
  auto gate_of = [&](std::size_t i) -> std::optional<Gate> {
    if (gates.empty()) return std::nullopt;
    return gates[i];
  };

  std::vector<PgflExpr> factors;
  if (uses_clutter(k)) {
    ClutterAtom c{p.clutter, gates, 1.0};
    if (!gates.empty()) c.gated_mass = gated_mass(spatial_of(p.clutter), gates);
    factors.push_back(make_atom(std::move(c)));
  }

  auto bmd = [&](std::size_t i, const DetectionModel& det) {
    return make_atom(BmdAtom{target_label(i), p.targets[i], det, p.mm, gate_of(i)});
  };

  switch (k) {
    case FilterKind::BM:
      factors.push_back(bmd(0, DetectionModel(1.0)));
      break;
    case FilterKind::BMD:
      factors.push_back(bmd(0, p.det));
      break;
    case FilterKind::BME:
    case FilterKind::PDAE:
      factors.push_back(
          make_atom(BmeAtom{target_label(0), p.targets[0], p.ext.value_or(ExtendedTargetPgf(p.det.pd, {1.0})), p.mm}));
      break;
    case FilterKind::PDA:
    case FilterKind::JPDA:
    case FilterKind::JPDAS:
      for (std::size_t i = 0; i < p.targets.size(); ++i) factors.push_back(bmd(i, p.det));
      break;
    case FilterKind::PMHT:
    case FilterKind::PMHTS:
      if (p.pmht_rates.size() != p.targets.size())
        throw std::invalid_argument("filter.pmht_rates: one rate per target is required");
      for (std::size_t i = 0; i < p.targets.size(); ++i)
        factors.push_back(
            make_atom(PoissonMeasAtom{target_label(i), p.targets[i], PoissonMeasPgf(p.pmht_rates[i]), p.mm}));
      break;
    case FilterKind::IPDA:
    case FilterKind::JIPDA:
    case FilterKind::JIPDAS:
    case FilterKind::MHT:
    case FilterKind::MB:
      for (std::size_t i = 0; i < p.targets.size(); ++i) factors.push_back(wrap_existence(p.existence[i], bmd(i, p.det)));
      if (has_data_targets(k)) {
        for (std::size_t j = 0; j < p.data_priors.size(); ++j) {
          std::optional<Gate> g;
          if (!gates.empty()) g = gates[p.targets.size() + j];
          factors.push_back(
              wrap_existence(p.data_gamma[j], make_atom(DataAtom{data_label(j), p.data_priors[j], p.det, p.mm, g})));
        }
      }
      break;
    case FilterKind::PHD:
    case FilterKind::CPHD:
    case FilterKind::GenPHD: {
      if (p.intensity.size() == 0) throw std::invalid_argument("filter.intensity: no components");
      const double mass = p.intensity.mass();
      const GaussianMixture mu = mass > 0.0 ? p.intensity.normalized()
                                            : GaussianMixture(std::vector<double>(p.intensity.size(),
                                                                                  1.0 / static_cast<double>(p.intensity.size())),
                                                              p.intensity.components);
      PgflExpr atom = k == FilterKind::GenPHD
                          ? make_atom(GenPhdAtom{kIntensityLabel, mu, set_likelihood_of(p), p.cubature_order})
                          : make_atom(BmdAtom{kIntensityLabel, mu, p.det, p.mm, std::nullopt});
      if (k == FilterKind::CPHD) {
        if (p.cardinality.empty()) throw std::invalid_argument("filter.cardinality: required for CPHD");
        factors.push_back(wrap_cluster(p.cardinality, atom));
      } else {
        factors.push_back(wrap_poisson(mass, atom));
      }
      break;
    }
    case FilterKind::JointPHD:
    case FilterKind::JointGenPHD:
      if (p.groups.empty()) throw std::invalid_argument("filter.groups: at least one group is required");
      for (std::size_t g = 0; g < p.groups.size(); ++g) {
        const GaussianMixture mu = p.groups[g].normalized();
        PgflExpr atom = k == FilterKind::JointGenPHD
                            ? make_atom(GenPhdAtom{group_label(g), mu, set_likelihood_of(p), p.cubature_order})
                            : make_atom(BmdAtom{group_label(g), mu, p.det, p.mm, std::nullopt});
        factors.push_back(wrap_poisson(p.groups[g].mass(), atom));
      }
      break;
    case FilterKind::ResJPDA: {
      if (!p.resolution) throw std::invalid_argument("filter.resolution: required for the unresolved-pair filter");
      if (p.targets[0].size() != 1 || p.targets[1].size() != 1)
        throw std::invalid_argument("filter.targets: the unresolved pair needs single-Gaussian priors");
      factors.push_back(make_atom(ResolutionAtom{target_label(0), target_label(1), p.targets[0].components[0],
                                                 p.targets[1].components[0], *p.resolution, p.mm.R}));
      break;
    }
  }

  PgflExpr e = compose_product(std::move(factors));
  if (is_superposed(k)) e = superpose(e, labels_of(e), kSharedLabel);
  return e;
}

}  // namespace pointillist
