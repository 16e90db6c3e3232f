#pragma once

#include "pointillist/clutter.hpp"
#include "pointillist/detection.hpp"
#include "pointillist/gaussmath.hpp"

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace pointillist {

/// Identifies a target test function h_i. The measurement test function g is
/// implicit and shared by every atom.
using TargetLabel = std::string;

/// Generalized symmetric likelihood p_n(y_1..y_n | x) of a single target.
///
/// density() integrates over ordered n-tuples to count_mass(n); missed_mass()
/// plus all count masses must equal one.
class SetLikelihood {
 public:
  virtual ~SetLikelihood() = default;
  virtual double missed_mass() const = 0;
  virtual int max_count() const = 0;
  virtual double count_mass(int n) const = 0;
  virtual double density(std::span<const Vec> ys, const Vec& x) const = 0;
  /// Non-null when the likelihood is the i.i.d. product form, which admits a
  /// closed-form evaluation.
  virtual const class ProductFormLikelihood* product_form() const { return nullptr; }
};

/// p_n = pd * d_n * prod_k N(y_k; H x, R).
class ProductFormLikelihood final : public SetLikelihood {
 public:
  ProductFormLikelihood(ExtendedTargetPgf ext, MeasurementModel mm);

  double missed_mass() const override { return ext_.a(); }
  int max_count() const override { return static_cast<int>(ext_.dm.size()); }
  double count_mass(int n) const override;
  double density(std::span<const Vec> ys, const Vec& x) const override;
  const ProductFormLikelihood* product_form() const override { return this; }

  const ExtendedTargetPgf& ext() const { return ext_; }
  const MeasurementModel& mm() const { return mm_; }

 private:
  ExtendedTargetPgf ext_;
  MeasurementModel mm_;
};

struct BmdAtom {
  TargetLabel label;
  GaussianMixture prior;
  DetectionModel det;
  MeasurementModel mm;
  std::optional<Gate> gate;
};

struct BmeAtom {
  TargetLabel label;
  GaussianMixture prior;
  ExtendedTargetPgf ext;
  MeasurementModel mm;
};

struct PoissonMeasAtom {
  TargetLabel label;
  GaussianMixture prior;
  PoissonMeasPgf pm;
  MeasurementModel mm;
};

/// Data-induced target: a Bernoulli-detected target whose prior is the birth
/// density xi_j attached to measurement j.
struct DataAtom {
  TargetLabel label;
  GaussianMixture birth;
  DetectionModel det;
  MeasurementModel mm;
  std::optional<Gate> gate;
};

/// Two poorly resolved targets sharing one count PGF c0 + c1 z + c2 z^2.
/// A merged measurement is N(y; (H1 x1 + H2 x2) / 2, R).
struct ResolutionAtom {
  TargetLabel label1;
  TargetLabel label2;
  GaussianDensity prior1;
  GaussianDensity prior2;
  ResolutionModel rm;
  Mat R;
};

struct GenPhdAtom {
  TargetLabel label;
  GaussianMixture prior;
  std::shared_ptr<const SetLikelihood> likelihood;
  int cubature_order = 6;
};

/// Clutter process, optionally restricted to the union of `gates` whose
/// spatial mass is `gated_mass`.
struct ClutterAtom {
  ClutterModel model;
  std::vector<Gate> gates;
  double gated_mass = 1.0;
};

class PgflNode;
using PgflExpr = std::shared_ptr<const PgflNode>;

struct ProductNode {
  std::vector<PgflExpr> children;
};
struct ExistenceWrapNode {
  double chi = 1.0;
  PgflExpr child;
};
struct PoissonWrapNode {
  double mean = 0.0;
  PgflExpr child;
};
struct ClusterWrapNode {
  std::vector<double> card;
  PgflExpr child;
};
/// Binds the listed labels to the constant test function 1.
struct MarginalNode {
  std::set<TargetLabel> labels;
  PgflExpr child;
};

class PgflNode {
 public:
  using Variant = std::variant<BmdAtom, BmeAtom, PoissonMeasAtom, DataAtom, ResolutionAtom, GenPhdAtom, ClutterAtom,
                               ProductNode, ExistenceWrapNode, PoissonWrapNode, ClusterWrapNode, MarginalNode>;

  explicit PgflNode(Variant v) : node(std::move(v)) {}
  Variant node;
};

PgflExpr make_atom(BmdAtom a);
PgflExpr make_atom(BmeAtom a);
PgflExpr make_atom(PoissonMeasAtom a);
PgflExpr make_atom(DataAtom a);
PgflExpr make_atom(ResolutionAtom a);
PgflExpr make_atom(GenPhdAtom a);
PgflExpr make_atom(ClutterAtom a);

/// Product of PGFLs over disjoint target labels; one child is returned as is.
PgflExpr compose_product(std::vector<PgflExpr> children);
/// 1 - chi + chi * child.
PgflExpr wrap_existence(double chi, PgflExpr child);
/// exp(-mean + mean * child).
PgflExpr wrap_poisson(double mean, PgflExpr child);
/// G_N(child) for a finite cardinality distribution.
PgflExpr wrap_cluster(std::vector<double> card, PgflExpr child);
/// Relabels `labels` to `shared`: evaluation on the diagonal.
PgflExpr superpose(const PgflExpr& e, const std::set<TargetLabel>& labels, const TargetLabel& shared);
PgflExpr marginalize(const PgflExpr& e, const std::set<TargetLabel>& labels);

/// Free target labels of an expression, in sorted order.
std::set<TargetLabel> labels_of(const PgflExpr& e);
/// State dimension attached to a label (throws if absent).
Eigen::Index label_dim(const PgflExpr& e, const TargetLabel& label);

// ---------------------------------------------------------------------------
// Secular substitution and evaluation

/// A state-side probe: either a Dirac delta at `x` or a polynomial moment
/// functional 1, x_i, or x_i x_j of the posterior. A restriction keeps only
/// mixture component `component` and the measurement monomial `alphas`.
struct StateProbe {
  enum class Kind { Delta, Moment };
  struct Restriction {
    int component = 0;
    std::vector<int> alphas;
  };

  Kind kind = Kind::Delta;
  Vec x;
  int order = 0;
  int i = 0;
  int j = 0;
  std::optional<Restriction> restriction;

  static StateProbe delta(Vec point);
  static StateProbe mass();
  static StateProbe first(int i);
  static StateProbe second(int i, int j);
};

/// The points of a secular substitution. Measurement deltas occupy variables
/// 0..m-1; the probes follow in label order, then list order.
struct SecularPoints {
  int base_g = 0;
  std::vector<Vec> measurements;
  std::map<TargetLabel, std::vector<StateProbe>> probes;
};

struct CompileOptions {
  /// Drop monomials with a repeated variable (sufficient for multi-dual
  /// evaluation, which annihilates them anyway).
  bool square_free = false;
  /// Series truncation beyond the measurement count for non-polynomial count
  /// PGFs in integrated terms.
  int extra_degree = 6;
};

/// sum of coef * prod base_h[label] * mark^alpha_degree * prod var^pow.
struct PolyTerm {
  double coef = 0.0;
  std::vector<std::pair<int, int>> powers;
  std::array<int, 2> hlabels{-1, -1};
  int alpha_degree = 0;
};

/// weight * prod base_h * prod beta * G(c0 + sum c_i alpha_i), with the
/// alphas multiplied by the mark for target atoms.
struct ComposeTerm {
  double weight = 1.0;
  std::vector<int> betas;
  std::array<int, 2> hlabels{-1, -1};
  CountPgf pgf;
  double c0 = 0.0;
  std::vector<std::pair<int, double>> lin;
  bool target = true;
};

struct CompiledNode {
  enum class Kind { Atom, Product, Existence, Poisson, Cluster };
  Kind kind = Kind::Atom;
  std::vector<int> children;
  std::vector<PolyTerm> poly;
  std::vector<ComposeTerm> compose;
  double param = 0.0;
  std::vector<double> card;
};

/// A PGFL with its secular substitution resolved into closed-form terms.
struct CompiledSecular {
  int num_measurements = 0;
  int num_vars = 0;
  std::vector<TargetLabel> labels;
  /// Label and probe position of each probe variable (index num_measurements + k).
  std::vector<std::pair<TargetLabel, int>> probe_vars;
  std::vector<CompiledNode> nodes;
  int root = -1;

  int label_index(const TargetLabel& l) const;
  int probe_var(const TargetLabel& label, int k) const;
};

CompiledSecular compile_secular(const PgflExpr& e, const SecularPoints& points, const CompileOptions& opts = {});

/// Values of the base test functions (label -> h value, default 1) and of the
/// target-origin mark (default 1).
struct BaseValues {
  std::map<TargetLabel, cplx> base_h;
  cplx all_h = 1.0;  // applied to labels absent from base_h
  cplx mark = 1.0;
};

/// The compiled secular function restricted to `active` variables (all others
/// held at zero) and re-indexed so active[k] becomes variable k.
struct SecularKernel {
  struct Poly {
    cplx coef;
    std::vector<std::pair<int, int>> powers;
  };
  struct Compose {
    cplx weight;
    std::uint32_t beta_mask = 0;
    std::vector<int> betas;
    const CountPgf* pgf = nullptr;
    cplx c0;
    std::vector<std::pair<int, cplx>> lin;
  };
  struct Node {
    CompiledNode::Kind kind;
    std::vector<int> children;
    std::vector<Poly> poly;
    std::vector<Compose> compose;
    double param = 0.0;
    const std::vector<double>* card = nullptr;
  };

  int num_vars = 0;
  bool complex_coefficients = false;
  std::vector<Node> nodes;
  int root = -1;
  std::shared_ptr<const CompiledSecular> source;
};

SecularKernel specialize(std::shared_ptr<const CompiledSecular> c, std::span<const int> active, const BaseValues& base);

/// Evaluates the kernel at the given variable values (scalar kinds: cplx,
/// MultiDual, quad, cquad).
template <class T>
T evaluate_kernel(const SecularKernel& k, std::span<const T> vars);

/// Evaluates the kernel with variable v set to the multi-dual unit e_v.
MultiDual evaluate_kernel_ad(const SecularKernel& k);

/// Mixed partial in all measurement variables (`value`) and, for each probe
/// variable, the same partial times d/d beta (`probes`), all at zero. One
/// forward and one reverse multi-dual sweep serve every probe.
struct ProbeGradient {
  cplx value;
  std::vector<cplx> probes;
};
ProbeGradient probe_gradient_ad(std::shared_ptr<const CompiledSecular> c, const BaseValues& base = {});

/// Generic evaluation with explicit weights, matching the substitution
/// g = base_g + sum alpha_i delta_{y_i}, h_l = base_h[l] + sum beta delta_{x}.
template <class T>
struct SecularContext {
  int base_g = 0;
  std::map<TargetLabel, cplx> base_h;
  std::vector<std::pair<Vec, T>> measurements;
  std::map<TargetLabel, std::vector<std::pair<Vec, T>>> states;
};

template <class T>
T evaluate_secular(const PgflExpr& e, const SecularContext<T>& ctx);

/// |Psi(1, 1) - 1| for the expression.
double normalization_residual(const PgflExpr& e);

// ---------------------------------------------------------------------------
// Filter construction

enum class FilterKind {
  BM,
  BMD,
  BME,
  PDA,
  PDAE,
  JPDA,
  PMHT,
  IPDA,
  JIPDA,
  MHT,
  JPDAS,
  JIPDAS,
  PMHTS,
  PHD,
  CPHD,
  GenPHD,
  MB,
  JointPHD,
  JointGenPHD,
  ResJPDA,
};

std::string_view to_string(FilterKind k);
/// Throws std::invalid_argument naming the unknown kind.
FilterKind parse_filter_kind(std::string_view name);
const std::vector<FilterKind>& all_filter_kinds();

/// Data-driven birth: xi_j = N(H^+ y_j, cov), gamma_j = rate / (rate + lambda(y_j))
/// unless a fixed gamma is given.
struct DataBirth {
  double rate = 0.0;
  Mat cov;
  std::optional<double> gamma;
};

struct FilterParams {
  FilterKind kind = FilterKind::PDA;
  MeasurementModel mm;
  DetectionModel det;
  std::optional<ExtendedTargetPgf> ext;
  std::vector<double> pmht_rates;
  ClutterModel clutter;
  std::optional<double> gate_threshold;
  std::vector<GaussianMixture> targets;
  std::vector<double> existence;
  std::vector<GaussianMixture> data_priors;
  std::vector<double> data_gamma;
  GaussianMixture intensity;
  std::vector<double> cardinality;
  std::vector<GaussianMixture> groups;
  std::shared_ptr<const SetLikelihood> set_likelihood;
  std::optional<ResolutionModel> resolution;
  int cubature_order = 6;
};

/// Label conventions used by build_filter.
TargetLabel target_label(std::size_t i);
TargetLabel data_label(std::size_t j);
TargetLabel group_label(std::size_t g);
inline const TargetLabel kIntensityLabel = "phd";
inline const TargetLabel kSharedLabel = "s";

bool is_superposed(FilterKind k);
bool uses_clutter(FilterKind k);
bool supports_gating(FilterKind k);

/// Gates of the targets (and data targets) of a parameter set; empty when ungated.
std::vector<Gate> filter_gates(const FilterParams& p);
/// Keeps measurements inside at least one gate (all of them when ungated).
std::vector<Vec> gate_measurements(const FilterParams& p, std::span<const Vec> ys);

/// Birth priors and new-target probabilities for the given measurements.
void attach_data_births(FilterParams& p, const DataBirth& birth, std::span<const Vec> ys);

PgflExpr build_filter(const FilterParams& p);

}  // namespace pointillist
