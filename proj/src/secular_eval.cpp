#include "pointillist/gaussfunc.hpp"
#include "pointillist/pgfl.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace pointillist {

namespace {

double factorial(int n) {
  double f = 1.0;
  for (int k = 2; k <= n; ++k) f *= k;
  return f;
}

/// Calls f(counts) for every multiset over `n` slots with total in [lo, hi]
/// and per-slot count <= max_pow.
template <class F>
void for_each_multiset(int n, int lo, int hi, int max_pow, F&& f) {
  std::vector<int> c(static_cast<std::size_t>(n), 0);
  auto rec = [&](auto&& self, int pos, int total) -> void {
    if (pos == n) {
      if (total >= lo) f(c);
      return;
    }
    for (int k = 0; k <= max_pow && total + k <= hi; ++k) {
      c[static_cast<std::size_t>(pos)] = k;
      self(self, pos + 1, total + k);
    }
    c[static_cast<std::size_t>(pos)] = 0;
  };
  if (hi >= lo) rec(rec, 0, 0);
}

/// E[prod_k z_{idx_k}] under N(mean, cov) by Stein's recursion.
double gaussian_product_moment(const Vec& mean, const Mat& cov, std::vector<Eigen::Index> idx) {
  if (idx.empty()) return 1.0;
  const Eigen::Index a = idx.back();
  idx.pop_back();
  double v = mean[a] * gaussian_product_moment(mean, cov, idx);
  for (std::size_t k = 0; k < idx.size(); ++k) {
    std::vector<Eigen::Index> rest = idx;
    rest.erase(rest.begin() + static_cast<std::ptrdiff_t>(k));
    v += cov(a, idx[k]) * gaussian_product_moment(mean, cov, rest);
  }
  return v;
}

/// Coordinates whose product the probe's moment functional takes, offset by
/// the probe's slot position.
std::vector<Eigen::Index> moment_coords(const StateProbe& p, Eigen::Index offset, Eigen::Index dim) {
  std::vector<Eigen::Index> out;
  if (p.order >= 1) {
    if (p.i < 0 || p.i >= dim) throw std::invalid_argument("moment probe index out of range");
    out.push_back(offset + p.i);
  }
  if (p.order >= 2) {
    if (p.j < 0 || p.j >= dim) throw std::invalid_argument("moment probe index out of range");
    out.push_back(offset + p.j);
  }
  if (p.order < 0 || p.order > 2) throw std::invalid_argument("moment probe order must be 0, 1 or 2");
  return out;
}

double functional_moment(const GaussianFunctional& f, const std::vector<Eigen::Index>& coords) {
  if (coords.empty()) return 1.0;
  std::vector<Eigen::Index> local;
  for (auto c : coords) local.push_back(f.local(c));
  return gaussian_product_moment(f.mean, f.cov, local);
}

class Compiler {
 public:
  Compiler(const PgflExpr& e, const SecularPoints& pts, const CompileOptions& opts) : pts_(pts), opts_(opts) {
    if (pts.base_g != 0 && pts.base_g != 1) throw std::invalid_argument("base_g must be 0 or 1");
    const auto labels = labels_of(e);
    out_.labels.assign(labels.begin(), labels.end());
    out_.num_measurements = static_cast<int>(pts.measurements.size());
    int v = out_.num_measurements;
    for (const auto& [label, probes] : pts.probes) {
      if (!labels.count(label)) throw std::invalid_argument("probe on unknown label '" + label + "'");
      auto& ids = probe_ids_[label];
      for (std::size_t k = 0; k < probes.size(); ++k) {
        ids.push_back(v++);
        out_.probe_vars.emplace_back(label, static_cast<int>(k));
      }
    }
    out_.num_vars = v;
    out_.root = compile(e, {});
  }

  CompiledSecular take() { return std::move(out_); }

 private:
  int label_index(const TargetLabel& l, const std::set<TargetLabel>& bound) const {
    if (bound.count(l)) return -1;
    return out_.label_index(l);
  }

  struct ProbeRef {
    int var;
    const StateProbe* probe;
  };

  /// Moment probes of one label, split into unrestricted ones and restricted
  /// ones keyed by (component, sorted alphas).
  struct ProbeIndex {
    std::vector<std::size_t> unrestricted;
    std::map<std::pair<int, std::vector<int>>, std::vector<std::size_t>> restricted;

    explicit ProbeIndex(const std::vector<ProbeRef>& probes) {
      for (std::size_t p = 0; p < probes.size(); ++p) {
        const StateProbe& sp = *probes[p].probe;
        if (sp.kind != StateProbe::Kind::Moment) continue;
        if (!sp.restriction) {
          unrestricted.push_back(p);
          continue;
        }
        auto key = sp.restriction->alphas;
        std::sort(key.begin(), key.end());
        if (std::adjacent_find(key.begin(), key.end()) != key.end())
          throw std::invalid_argument("probe restriction repeats a measurement");
        restricted[{sp.restriction->component, std::move(key)}].push_back(p);
      }
    }

    const std::vector<std::size_t>* find(int comp, const std::vector<int>& alphas) const {
      const auto it = restricted.find({comp, alphas});
      return it == restricted.end() ? nullptr : &it->second;
    }
  };

  std::vector<ProbeRef> probes_for(int label_idx) const {
    std::vector<ProbeRef> out;
    if (label_idx < 0) return out;
    const auto& label = out_.labels[static_cast<std::size_t>(label_idx)];
    const auto it = pts_.probes.find(label);
    if (it == pts_.probes.end()) return out;
    const auto& ids = probe_ids_.at(label);
    for (std::size_t k = 0; k < it->second.size(); ++k) out.push_back({ids[k], &it->second[k]});
    return out;
  }

  int push(CompiledNode n) {
    out_.nodes.push_back(std::move(n));
    return static_cast<int>(out_.nodes.size()) - 1;
  }

  int compile(const PgflExpr& e, const std::set<TargetLabel>& bound) {
    return std::visit(
        [&](const auto& n) -> int {
          using N = std::decay_t<decltype(n)>;
          if constexpr (std::is_same_v<N, ProductNode>) {
            CompiledNode c;
            c.kind = CompiledNode::Kind::Product;
            for (const auto& ch : n.children) c.children.push_back(compile(ch, bound));
            return push(std::move(c));
          } else if constexpr (std::is_same_v<N, MarginalNode>) {
            std::set<TargetLabel> b = bound;
            b.insert(n.labels.begin(), n.labels.end());
            return compile(n.child, b);
          } else if constexpr (std::is_same_v<N, ExistenceWrapNode>) {
            CompiledNode c;
            c.kind = CompiledNode::Kind::Existence;
            c.param = n.chi;
            c.children.push_back(compile(n.child, bound));
            return push(std::move(c));
          } else if constexpr (std::is_same_v<N, PoissonWrapNode>) {
            CompiledNode c;
            c.kind = CompiledNode::Kind::Poisson;
            c.param = n.mean;
            c.children.push_back(compile(n.child, bound));
            return push(std::move(c));
          } else if constexpr (std::is_same_v<N, ClusterWrapNode>) {
            CompiledNode c;
            c.kind = CompiledNode::Kind::Cluster;
            c.card = n.card;
            c.children.push_back(compile(n.child, bound));
            return push(std::move(c));
          } else {
            CompiledNode c;
            c.kind = CompiledNode::Kind::Atom;
            atom(c, n, bound);
            return push(std::move(c));
          }
        },
        e->node);
  }

  void check_measurement_dims(Eigen::Index q) const {
    for (const auto& y : pts_.measurements)
      if (y.size() != q) throw std::invalid_argument("measurement dimension mismatch");
  }

  // --- single-slot atoms -----------------------------------------------------

  void single_slot(CompiledNode& node, int label_idx, const GaussianMixture& prior, const CountPgf& g,
                   const MeasurementModel& mm, const std::optional<Gate>& gate) {
    check_measurement_dims(mm.meas_dim());
    const int m = static_cast<int>(pts_.measurements.size());
    std::vector<int> eligible;
    for (int i = 0; i < m; ++i)
      if (!gate || gate->contains(pts_.measurements[static_cast<std::size_t>(i)])) eligible.push_back(i);
    const double p_gate = gate ? gate_probability(*gate) : 1.0;
    const double c0 = gate ? 1.0 - p_gate + p_gate * pts_.base_g : static_cast<double>(pts_.base_g);
    const int ne = static_cast<int>(eligible.size());
    const int reach = opts_.square_free ? ne : ne + opts_.extra_degree;
    const int max_deg = g.poisson ? reach : std::min(g.degree(), reach);
    const int max_pow = opts_.square_free ? 1 : max_deg;
    const Eigen::Index dim = prior.dim();
    const auto probes = probes_for(label_idx);
    const ProbeIndex index(probes);

    for_each_multiset(ne, 0, max_deg, max_pow, [&](const std::vector<int>& c) {
      const int r = std::accumulate(c.begin(), c.end(), 0);
      double denom = 1.0;
      for (int ck : c) denom *= factorial(ck);
      const double gr = g.derivative(r, c0) / denom;
      if (gr == 0.0) return;
      std::vector<LinearGaussianFactor> factors;
      std::vector<std::pair<int, int>> powers;
      std::vector<int> alpha_set;
      for (int k = 0; k < ne; ++k) {
        const int i = eligible[static_cast<std::size_t>(k)];
        if (c[static_cast<std::size_t>(k)] == 0) continue;
        powers.emplace_back(i, c[static_cast<std::size_t>(k)]);
        alpha_set.push_back(i);
        for (int rep = 0; rep < c[static_cast<std::size_t>(k)]; ++rep)
          factors.push_back({pts_.measurements[static_cast<std::size_t>(i)], mm.H, mm.R, 1.0});
      }
      const bool square_free = static_cast<int>(alpha_set.size()) == r;
      double base = 0.0;
      std::map<std::size_t, double> probe_val;
      for (std::size_t comp = 0; comp < prior.size(); ++comp) {
        const auto f = gaussian_functional(prior.components[comp], factors);
        const double w = prior.weights[comp] * gr * f.weight;
        base += w;
        auto add = [&](std::size_t p) {
          probe_val[p] += w * functional_moment(f, moment_coords(*probes[p].probe, 0, dim));
        };
        for (std::size_t p : index.unrestricted) add(p);
        if (square_free)
          if (const auto* list = index.find(static_cast<int>(comp), alpha_set))
            for (std::size_t p : *list) add(p);
      }
      PolyTerm t;
      t.coef = base;
      t.powers = powers;
      t.hlabels = {label_idx, -1};
      t.alpha_degree = r;
      if (base != 0.0) node.poly.push_back(t);
      for (const auto& [p, v] : probe_val) {
        if (v == 0.0) continue;
        PolyTerm pt;
        pt.coef = v;
        pt.powers = powers;
        pt.powers.emplace_back(probes[p].var, 1);
        pt.alpha_degree = r;
        node.poly.push_back(std::move(pt));
      }
    });

    for (const auto& pr : probes) {
      const StateProbe& sp = *pr.probe;
      if (sp.kind != StateProbe::Kind::Delta) continue;
      if (sp.restriction) throw std::invalid_argument("restricted delta probes are not supported");
      if (sp.x.size() != dim) throw std::invalid_argument("state probe dimension mismatch");
      ComposeTerm ct;
      ct.weight = prior.eval(sp.x);
      ct.betas = {pr.var};
      ct.pgf = g;
      ct.c0 = c0;
      for (int i : eligible) {
        const double l = mm.likelihood(pts_.measurements[static_cast<std::size_t>(i)], sp.x);
        if (l != 0.0) ct.lin.emplace_back(i, l);
      }
      node.compose.push_back(std::move(ct));
    }
  }

  // --- generalized PHD with an arbitrary set likelihood ----------------------

  void general_set(CompiledNode& node, int label_idx, const GenPhdAtom& a) {
    const SetLikelihood& lik = *a.likelihood;
    const int m = static_cast<int>(pts_.measurements.size());
    if (pts_.base_g == 1 && m > 0)
      throw std::invalid_argument("general set likelihood: base_g = 1 with measurement deltas is not supported");
    double constant = lik.missed_mass();
    if (pts_.base_g == 1)
      for (int n = 1; n <= lik.max_count(); ++n) constant += lik.count_mass(n);
    const Eigen::Index dim = a.prior.dim();
    const auto probes = probes_for(label_idx);
    const ProbeIndex index(probes);

    std::vector<CubatureRule> cubs;
    for (const auto& comp : a.prior.components) cubs.push_back(gauss_hermite_cubature(comp, a.cubature_order));

    auto emit = [&](const std::vector<int>& c, const std::vector<int>& idx_of_slot) {
      // Ordered tuple with repeats, multiplicity n! / prod c!.
      std::vector<Vec> ys;
      std::vector<std::pair<int, int>> powers;
      std::vector<int> alpha_set;
      double denom = 1.0;
      for (std::size_t k = 0; k < c.size(); ++k) {
        if (c[k] == 0) continue;
        const int i = idx_of_slot[k];
        powers.emplace_back(i, c[k]);
        alpha_set.push_back(i);
        denom *= factorial(c[k]);
        for (int rep = 0; rep < c[k]; ++rep) ys.push_back(pts_.measurements[static_cast<std::size_t>(i)]);
      }
      const int n = static_cast<int>(ys.size());
      const double mult = n == 0 ? 1.0 : factorial(n) / denom;
      const bool square_free = static_cast<int>(alpha_set.size()) == n;
      double base = 0.0;
      std::vector<double> probe_val(probes.size(), 0.0);
      for (std::size_t comp = 0; comp < a.prior.size(); ++comp) {
        const auto& cub = cubs[comp];
        for (std::size_t q = 0; q < cub.nodes.size(); ++q) {
          const Vec& x = cub.nodes[q];
          const double v = n == 0 ? constant : lik.density(ys, x);
          const double w = a.prior.weights[comp] * cub.weights[q] * mult * v;
          base += w;
          auto add = [&](std::size_t p) {
            double phi = 1.0;
            for (auto ci : moment_coords(*probes[p].probe, 0, dim)) phi *= x[ci];
            probe_val[p] += w * phi;
          };
          for (std::size_t p : index.unrestricted) add(p);
          if (square_free)
            if (const auto* list = index.find(static_cast<int>(comp), alpha_set))
              for (std::size_t p : *list) add(p);
        }
      }
      if (base != 0.0) node.poly.push_back(PolyTerm{base, powers, {label_idx, -1}, n});
      for (std::size_t p = 0; p < probes.size(); ++p) {
        if (probe_val[p] == 0.0) continue;
        auto pw = powers;
        pw.emplace_back(probes[p].var, 1);
        node.poly.push_back(PolyTerm{probe_val[p], std::move(pw), {-1, -1}, n});
      }
      for (const auto& pr : probes) {
        const StateProbe& sp = *pr.probe;
        if (sp.kind != StateProbe::Kind::Delta) continue;
        if (sp.restriction) throw std::invalid_argument("restricted delta probes are not supported");
        if (sp.x.size() != dim) throw std::invalid_argument("state probe dimension mismatch");
        const double v = (n == 0 ? constant : lik.density(ys, sp.x)) * mult * a.prior.eval(sp.x);
        if (v == 0.0) continue;
        auto pw = powers;
        pw.emplace_back(pr.var, 1);
        node.poly.push_back(PolyTerm{v, std::move(pw), {-1, -1}, n});
      }
    };

    std::vector<int> all(static_cast<std::size_t>(m));
    std::iota(all.begin(), all.end(), 0);
    const int reach = opts_.square_free ? m : m + opts_.extra_degree;
    const int hi = std::min(lik.max_count(), reach);
    emit(std::vector<int>(static_cast<std::size_t>(m), 0), all);
    for_each_multiset(m, 1, hi, opts_.square_free ? 1 : hi, [&](const std::vector<int>& c) { emit(c, all); });
  }

  // --- unresolved pair --------------------------------------------------------

  struct ResFactor {
    enum Kind { P1, P2, P12, F } kind;
    int i = -1;
  };
  struct ResIntegrand {
    double coef;
    std::vector<int> alphas;  // with repeats
    std::vector<ResFactor> factors;
  };

  void resolution(CompiledNode& node, const ResolutionAtom& a, const std::set<TargetLabel>& bound) {
    check_measurement_dims(a.R.rows());
    const int m = static_cast<int>(pts_.measurements.size());
    const double a1 = 1.0 - a.rm.pd1, b1 = a.rm.pd1, a2 = 1.0 - a.rm.pd2, b2 = a.rm.pd2;
    const double bg = pts_.base_g;
    const bool has_f = !a.rm.fixed_f || *a.rm.fixed_f != 0.0;
    const double f_const = a.rm.fixed_f ? *a.rm.fixed_f : 1.0;

    std::vector<ResIntegrand> terms;
    terms.push_back({a1 * a2 + bg * (a1 * b2 + b1 * a2 + b1 * b2), {}, {}});
    for (int i = 0; i < m; ++i) {
      terms.push_back({a1 * b2 + bg * b1 * b2, {i}, {{ResFactor::P2, i}}});
      terms.push_back({b1 * a2 + bg * b1 * b2, {i}, {{ResFactor::P1, i}}});
      if (has_f) {
        std::vector<ResFactor> fk;
        if (!a.rm.fixed_f) fk.push_back({ResFactor::F, -1});
        auto with = [&](ResFactor r) {
          auto v = fk;
          v.push_back(r);
          return v;
        };
        terms.push_back({b1 * b2 * f_const, {i}, with({ResFactor::P12, i})});
        if (bg != 0.0) {
          terms.push_back({-bg * b1 * b2 * f_const, {i}, with({ResFactor::P1, i})});
          terms.push_back({-bg * b1 * b2 * f_const, {i}, with({ResFactor::P2, i})});
        }
      }
    }
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) {
        if (opts_.square_free && i == j) continue;
        terms.push_back({b1 * b2, {i, j}, {{ResFactor::P1, i}, {ResFactor::P2, j}}});
        if (has_f) {
          std::vector<ResFactor> fk{{ResFactor::P1, i}, {ResFactor::P2, j}};
          if (!a.rm.fixed_f) fk.push_back({ResFactor::F, -1});
          terms.push_back({-b1 * b2 * f_const, {i, j}, fk});
        }
      }

    const Eigen::Index d1 = a.prior1.dim(), d2 = a.prior2.dim(), n = d1 + d2;
    const Eigen::Index q = a.R.rows();
    Vec mean(n);
    mean << a.prior1.mean, a.prior2.mean;
    Mat cov = Mat::Zero(n, n);
    cov.topLeftCorner(d1, d1) = a.prior1.cov;
    cov.bottomRightCorner(d2, d2) = a.prior2.cov;
    GaussianDensity joint;
    joint.mean = mean;
    joint.cov = cov;

    Mat a_p1 = Mat::Zero(q, n), a_p2 = Mat::Zero(q, n), a_p12(q, n), a_f(q, n);
    a_p1.leftCols(d1) = a.rm.h1;
    a_p2.rightCols(d2) = a.rm.h2;
    a_p12 << 0.5 * a.rm.h1, 0.5 * a.rm.h2;
    a_f << a.rm.h1, -a.rm.h2;
    const double kappa = std::pow(2.0 * std::numbers::pi, 0.5 * static_cast<double>(q)) *
                         std::sqrt(a.rm.sigma.determinant());

    auto make_factors = [&](const ResIntegrand& t) {
      std::vector<LinearGaussianFactor> out;
      for (const auto& rf : t.factors) {
        switch (rf.kind) {
          case ResFactor::P1:
            out.push_back({pts_.measurements[static_cast<std::size_t>(rf.i)], a_p1, a.R, 1.0});
            break;
          case ResFactor::P2:
            out.push_back({pts_.measurements[static_cast<std::size_t>(rf.i)], a_p2, a.R, 1.0});
            break;
          case ResFactor::P12:
            out.push_back({pts_.measurements[static_cast<std::size_t>(rf.i)], a_p12, a.R, 1.0});
            break;
          case ResFactor::F:
            out.push_back({Vec::Zero(q), a_f, a.rm.sigma, kappa});
            break;
        }
      }
      return out;
    };

    // Each side is either the base value of h or one of its probes.
    struct Side {
      int hlabel = -1;
      int var = -1;
      const StateProbe* probe = nullptr;
    };
    auto sides_for = [&](const TargetLabel& l) {
      std::vector<Side> s;
      const int li = label_index(l, bound);
      s.push_back({li, -1, nullptr});
      for (const auto& pr : probes_for(li)) {
        if (pr.probe->restriction) throw std::invalid_argument("restricted probes are not supported on unresolved pairs");
        s.push_back({-1, pr.var, pr.probe});
      }
      return s;
    };
    const auto s1 = sides_for(a.label1);
    const auto s2 = sides_for(a.label2);

    for (const auto& o1 : s1)
      for (const auto& o2 : s2) {
        if (opts_.square_free && o1.var >= 0 && o1.var == o2.var) continue;
        std::vector<PinnedBlock> pins;
        std::vector<Eigen::Index> coords;
        auto apply = [&](const Side& s, Eigen::Index off, Eigen::Index dim) {
          if (!s.probe) return;
          if (s.probe->kind == StateProbe::Kind::Delta) {
            if (s.probe->x.size() != dim) throw std::invalid_argument("state probe dimension mismatch");
            pins.push_back({off, s.probe->x});
          } else {
            for (auto c : moment_coords(*s.probe, off, dim)) coords.push_back(c);
          }
        };
        apply(o1, 0, d1);
        apply(o2, d1, d2);
        if (o1.probe && o2.probe && o1.probe->kind == StateProbe::Kind::Delta &&
            o2.probe->kind == StateProbe::Kind::Delta) {
          // Both blocks pinned; nothing is integrated.
        }
        for (const auto& t : terms) {
          if (t.coef == 0.0) continue;
          const auto f = gaussian_functional(joint, make_factors(t), pins);
          const double v = t.coef * f.weight * functional_moment(f, coords);
          if (v == 0.0) continue;
          PolyTerm pt;
          pt.coef = v;
          std::map<int, int> pw;
          for (int i : t.alphas) ++pw[i];
          if (o1.var >= 0) ++pw[o1.var];
          if (o2.var >= 0) ++pw[o2.var];
          pt.powers.assign(pw.begin(), pw.end());
          pt.hlabels = {o1.probe ? -1 : o1.hlabel, o2.probe ? -1 : o2.hlabel};
          pt.alpha_degree = static_cast<int>(t.alphas.size());
          node.poly.push_back(std::move(pt));
        }
      }
  }

  // --- clutter -----------------------------------------------------------------

  void clutter(CompiledNode& node, const ClutterAtom& a) {
    const SpatialDensity& s = spatial_of(a.model);
    check_measurement_dims(s.box().dim());
    const double mass = a.gates.empty() ? 1.0 : a.gated_mass;
    ComposeTerm ct;
    ct.weight = 1.0;
    ct.target = false;
    ct.c0 = 1.0 - mass + mass * pts_.base_g;
    if (const auto* p = std::get_if<PoissonClutter>(&a.model)) {
      ct.pgf = CountPgf::poisson_pgf(p->rate);
    } else {
      ct.pgf = CountPgf::polynomial(std::get<ClusterClutter>(a.model).card);
    }
    for (std::size_t i = 0; i < pts_.measurements.size(); ++i) {
      const Vec& y = pts_.measurements[i];
      if (!s.box().contains(y)) throw std::invalid_argument("measurement point outside Y");
      if (!a.gates.empty() && std::none_of(a.gates.begin(), a.gates.end(), [&](const Gate& g) { return g.contains(y); }))
        continue;
      const double v = s.eval(y);
      if (v != 0.0) ct.lin.emplace_back(static_cast<int>(i), v);
    }
    node.compose.push_back(std::move(ct));
  }

  template <class A>
  void atom(CompiledNode& c, const A& n, const std::set<TargetLabel>& bound) {
    if constexpr (std::is_same_v<A, BmdAtom>) {
      single_slot(c, label_index(n.label, bound), n.prior, count_pgf(n.det), n.mm, n.gate);
    } else if constexpr (std::is_same_v<A, DataAtom>) {
      single_slot(c, label_index(n.label, bound), n.birth, count_pgf(n.det), n.mm, n.gate);
    } else if constexpr (std::is_same_v<A, BmeAtom>) {
      single_slot(c, label_index(n.label, bound), n.prior, count_pgf(n.ext), n.mm, std::nullopt);
    } else if constexpr (std::is_same_v<A, PoissonMeasAtom>) {
      single_slot(c, label_index(n.label, bound), n.prior, count_pgf(n.pm), n.mm, std::nullopt);
    } else if constexpr (std::is_same_v<A, GenPhdAtom>) {
      if (const auto* pf = n.likelihood->product_form()) {
        single_slot(c, label_index(n.label, bound), n.prior, count_pgf(pf->ext()), pf->mm(), std::nullopt);
      } else {
        general_set(c, label_index(n.label, bound), n);
      }
    } else if constexpr (std::is_same_v<A, ResolutionAtom>) {
      resolution(c, n, bound);
    } else if constexpr (std::is_same_v<A, ClutterAtom>) {
      clutter(c, n);
    }
  }

  const SecularPoints& pts_;
  CompileOptions opts_;
  CompiledSecular out_;
  std::map<TargetLabel, std::vector<int>> probe_ids_;
};

template <class T>
T from_c(cplx v) {
  return scalar_from<T>(v);
}

template <class T>
T ipow(const T& x, int p) {
  T r = x;
  for (int k = 1; k < p; ++k) r = r * x;
  return r;
}

std::vector<cplx> label_values(const CompiledSecular& c, const BaseValues& base) {
  std::vector<cplx> h(c.labels.size(), base.all_h);
  for (const auto& [label, val] : base.base_h) {
    const int li = c.label_index(label);
    if (li < 0) throw std::invalid_argument("base value for unknown label '" + label + "'");
    h[static_cast<std::size_t>(li)] = val;
  }
  return h;
}

cplx label_factor(const std::vector<cplx>& h, const std::array<int, 2>& hl) {
  cplx f = 1.0;
  for (int l : hl)
    if (l >= 0) f *= h[static_cast<std::size_t>(l)];
  return f;
}

}  // namespace

int CompiledSecular::label_index(const TargetLabel& l) const {
  const auto it = std::lower_bound(labels.begin(), labels.end(), l);
  if (it == labels.end() || *it != l) return -1;
  return static_cast<int>(it - labels.begin());
}

int CompiledSecular::probe_var(const TargetLabel& label, int k) const {
  for (std::size_t v = 0; v < probe_vars.size(); ++v)
    if (probe_vars[v].first == label && probe_vars[v].second == k) return num_measurements + static_cast<int>(v);
  throw std::invalid_argument("unknown probe");
}

CompiledSecular compile_secular(const PgflExpr& e, const SecularPoints& points, const CompileOptions& opts) {
  Compiler c(e, points, opts);
  return c.take();
}

SecularKernel specialize(std::shared_ptr<const CompiledSecular> c, std::span<const int> active, const BaseValues& base) {
  SecularKernel k;
  k.num_vars = static_cast<int>(active.size());
  std::vector<int> remap(static_cast<std::size_t>(c->num_vars), -1);
  for (std::size_t a = 0; a < active.size(); ++a) {
    const int v = active[a];
    if (v < 0 || v >= c->num_vars) throw std::invalid_argument("active variable out of range");
    if (remap[static_cast<std::size_t>(v)] >= 0) throw std::invalid_argument("duplicate active variable");
    remap[static_cast<std::size_t>(v)] = static_cast<int>(a);
  }
  const std::vector<cplx> h = label_values(*c, base);
  auto hfactor = [&](const std::array<int, 2>& hl) { return label_factor(h, hl); };
  auto note = [&](cplx v) {
    if (v.imag() != 0.0) k.complex_coefficients = true;
  };

  for (const auto& n : c->nodes) {
    SecularKernel::Node kn;
    kn.kind = n.kind;
    kn.children = n.children;
    kn.param = n.param;
    kn.card = &n.card;
    for (const auto& t : n.poly) {
      SecularKernel::Poly p;
      bool keep = true;
      for (const auto& [v, pw] : t.powers) {
        const int r = remap[static_cast<std::size_t>(v)];
        if (r < 0) {
          keep = false;
          break;
        }
        p.powers.emplace_back(r, pw);
      }
      if (!keep) continue;
      p.coef = t.coef * hfactor(t.hlabels) * std::pow(base.mark, t.alpha_degree);
      if (p.coef == cplx(0.0)) continue;
      note(p.coef);
      kn.poly.push_back(std::move(p));
    }
    for (const auto& t : n.compose) {
      SecularKernel::Compose cp;
      bool keep = true;
      for (int b : t.betas) {
        const int r = remap[static_cast<std::size_t>(b)];
        if (r < 0) {
          keep = false;
          break;
        }
        cp.betas.push_back(r);
        cp.beta_mask |= (1u << r);
      }
      if (!keep) continue;
      cp.weight = t.weight * hfactor(t.hlabels);
      if (cp.weight == cplx(0.0)) continue;
      note(cp.weight);
      cp.pgf = &t.pgf;
      cp.c0 = t.c0;
      for (const auto& [v, coef] : t.lin) {
        const int r = remap[static_cast<std::size_t>(v)];
        if (r < 0) continue;
        const cplx cc = coef * (t.target ? base.mark : cplx(1.0));
        note(cc);
        cp.lin.emplace_back(r, cc);
      }
      kn.compose.push_back(std::move(cp));
    }
    k.nodes.push_back(std::move(kn));
  }
  k.root = c->root;
  k.source = std::move(c);
  return k;
}

template <class T>
T evaluate_kernel(const SecularKernel& k, std::span<const T> vars) {
  if (static_cast<int>(vars.size()) != k.num_vars) throw std::invalid_argument("evaluate_kernel: variable count mismatch");
  thread_local std::vector<T> val;
  val.assign(k.nodes.size(), from_c<T>(0.0));
  for (std::size_t ni = 0; ni < k.nodes.size(); ++ni) {
    const auto& n = k.nodes[ni];
    T v = from_c<T>(0.0);
    switch (n.kind) {
      case CompiledNode::Kind::Atom: {
        for (const auto& t : n.poly) {
          T term = from_c<T>(t.coef);
          for (const auto& [vi, pw] : t.powers) term = term * ipow(vars[static_cast<std::size_t>(vi)], pw);
          v = v + term;
        }
        for (const auto& t : n.compose) {
          T arg = from_c<T>(t.c0);
          for (const auto& [vi, cc] : t.lin) arg = arg + from_c<T>(cc) * vars[static_cast<std::size_t>(vi)];
          T term = from_c<T>(t.weight) * t.pgf->eval(arg);
          for (int b : t.betas) term = term * vars[static_cast<std::size_t>(b)];
          v = v + term;
        }
        break;
      }
      case CompiledNode::Kind::Product:
        v = from_c<T>(1.0);
        for (int ch : n.children) v = v * val[static_cast<std::size_t>(ch)];
        break;
      case CompiledNode::Kind::Existence:
        v = from_c<T>(1.0 - n.param) + scale(val[static_cast<std::size_t>(n.children[0])], n.param);
        break;
      case CompiledNode::Kind::Poisson:
        v = scalar_exp(scale(val[static_cast<std::size_t>(n.children[0])], n.param) + from_c<T>(-n.param));
        break;
      case CompiledNode::Kind::Cluster:
        v = poly_eval<T>(*n.card, val[static_cast<std::size_t>(n.children[0])]);
        break;
    }
    val[ni] = std::move(v);
  }
  return val[static_cast<std::size_t>(k.root)];
}

namespace {

/// Emits (mask, value) for the expansion of weight * prod beta * G(c0 + sum c_v e_v):
/// monomial S | beta_mask carries G^(|S|)(c0) prod_{v in S} c_v.
template <class Emit>
void expand_compose(int n, const std::vector<std::pair<int, cplx>>& lin, std::uint32_t beta_mask, const CountPgf& pgf,
                    double c0, cplx weight, Emit&& emit) {
  std::uint32_t lin_mask = 0;
  std::vector<cplx> c(static_cast<std::size_t>(std::max(n, 1)), cplx(0.0));
  for (const auto& [vi, cc] : lin) {
    c[static_cast<std::size_t>(vi)] += cc;
    lin_mask |= 1u << vi;
  }
  const int deg_cap = pgf.poisson ? n : std::min(n, std::max(pgf.degree(), 0));
  std::vector<cplx> d(static_cast<std::size_t>(n) + 1, cplx(0.0));
  for (int r = 0; r <= deg_cap; ++r) d[static_cast<std::size_t>(r)] = pgf.derivative(r, c0);
  const std::uint32_t free = lin_mask & ~beta_mask;
  for (std::uint32_t s = free;; s = (s - 1) & free) {
    const int r = std::popcount(s);
    if (d[static_cast<std::size_t>(r)] != cplx(0.0)) {
      cplx prod = d[static_cast<std::size_t>(r)] * weight;
      for (std::uint32_t b = s; b; b &= b - 1) prod *= c[static_cast<std::size_t>(std::countr_zero(b))];
      emit(s | beta_mask, prod);
    }
    if (s == 0) break;
  }
}

/// Square-free monomial mask of a term, or nullopt if a power exceeds one.
std::optional<std::uint32_t> square_free_mask(const std::vector<std::pair<int, int>>& powers) {
  std::uint32_t mask = 0;
  for (const auto& [vi, pw] : powers) {
    if (pw != 1 || (mask & (1u << vi))) return std::nullopt;
    mask |= 1u << vi;
  }
  return mask;
}

/// Derivatives 0..upto of a polynomial at a complex point.
std::vector<cplx> polynomial_derivatives(const std::vector<double>& coeffs, cplx z, int upto) {
  std::vector<cplx> d(static_cast<std::size_t>(upto) + 1, cplx(0.0));
  for (int r = 0; r <= upto; ++r) {
    cplx acc = 0.0;
    for (int n = static_cast<int>(coeffs.size()) - 1; n >= r; --n) {
      double falling = 1.0;
      for (int k = 0; k < r; ++k) falling *= n - k;
      acc = acc * z + coeffs[static_cast<std::size_t>(n)] * falling;
    }
    d[static_cast<std::size_t>(r)] = acc;
  }
  return d;
}

MultiDual zero_dual(int n) {
  MultiDual z = n == 0 ? MultiDual(0.0) : MultiDual::variable(0, n, 0.0);
  if (n > 0) z.coeff_ref(1) = 0.0;
  return z;
}

std::vector<MultiDual> kernel_node_values_ad(const SecularKernel& k) {
  const int n = k.num_vars;
  if (n > MultiDual::kMaxVars) throw std::invalid_argument("multi-dual variable budget exceeded");
  std::vector<MultiDual> val(k.nodes.size());
  for (std::size_t ni = 0; ni < k.nodes.size(); ++ni) {
    const auto& node = k.nodes[ni];
    MultiDual v;
    switch (node.kind) {
      case CompiledNode::Kind::Atom: {
        v = zero_dual(n);
        for (const auto& t : node.poly)
          if (const auto mask = square_free_mask(t.powers)) v.coeff_ref(*mask) += t.coef;
        for (const auto& t : node.compose)
          expand_compose(n, t.lin, t.beta_mask, *t.pgf, t.c0.real(), t.weight,
                         [&](std::uint32_t mask, cplx value) { v.coeff_ref(mask) += value; });
        break;
      }
      case CompiledNode::Kind::Product:
        v = MultiDual(1.0);
        for (int ch : node.children) v = v * val[static_cast<std::size_t>(ch)];
        break;
      case CompiledNode::Kind::Existence:
        v = val[static_cast<std::size_t>(node.children[0])] * node.param + (1.0 - node.param);
        break;
      case CompiledNode::Kind::Poisson:
        v = exp(val[static_cast<std::size_t>(node.children[0])] * node.param + (-node.param));
        break;
      case CompiledNode::Kind::Cluster: {
        const MultiDual& x = val[static_cast<std::size_t>(node.children[0])];
        v = taylor_apply(x, polynomial_derivatives(*node.card, x.constant(), x.nvars()));
        break;
      }
    }
    val[ni] = std::move(v);
  }
  return val;
}

}  // namespace

MultiDual evaluate_kernel_ad(const SecularKernel& k) {
  auto val = kernel_node_values_ad(k);
  return std::move(val[static_cast<std::size_t>(k.root)]);
}

ProbeGradient probe_gradient_ad(std::shared_ptr<const CompiledSecular> c, const BaseValues& base) {
  const int m = c->num_measurements;
  std::vector<int> active(static_cast<std::size_t>(m));
  std::iota(active.begin(), active.end(), 0);
  const SecularKernel k = specialize(c, active, base);
  const std::vector<MultiDual> val = kernel_node_values_ad(k);
  const std::uint32_t full = m >= 32 ? 0xffffffffu : ((1u << m) - 1u);

  // Reverse sweep: adj[n] = d root / d node n, as multi-duals in the alphas.
  std::vector<MultiDual> adj(k.nodes.size(), zero_dual(m));
  adj[static_cast<std::size_t>(k.root)] = MultiDual(1.0);
  for (std::size_t ni = k.nodes.size(); ni-- > 0;) {
    const auto& node = k.nodes[ni];
    const MultiDual& a = adj[ni];
    if (node.kind == CompiledNode::Kind::Atom || a.is_zero()) continue;
    switch (node.kind) {
      case CompiledNode::Kind::Product: {
        const std::size_t nc = node.children.size();
        std::vector<MultiDual> prefix(nc + 1, MultiDual(1.0)), suffix(nc + 1, MultiDual(1.0));
        for (std::size_t i = 0; i < nc; ++i)
          prefix[i + 1] = prefix[i] * val[static_cast<std::size_t>(node.children[i])];
        for (std::size_t i = nc; i-- > 0;)
          suffix[i] = suffix[i + 1] * val[static_cast<std::size_t>(node.children[i])];
        for (std::size_t i = 0; i < nc; ++i)
          adj[static_cast<std::size_t>(node.children[i])] += a * (prefix[i] * suffix[i + 1]);
        break;
      }
      case CompiledNode::Kind::Existence:
        adj[static_cast<std::size_t>(node.children[0])] += a * node.param;
        break;
      case CompiledNode::Kind::Poisson:
        adj[static_cast<std::size_t>(node.children[0])] += a * val[ni] * node.param;
        break;
      case CompiledNode::Kind::Cluster: {
        const MultiDual& x = val[static_cast<std::size_t>(node.children[0])];
        auto d = polynomial_derivatives(*node.card, x.constant(), x.nvars() + 1);
        d.erase(d.begin());
        adj[static_cast<std::size_t>(node.children[0])] += a * taylor_apply(x, d);
        break;
      }
      case CompiledNode::Kind::Atom:
        break;
    }
  }

  ProbeGradient out;
  out.value = val[static_cast<std::size_t>(k.root)].top(m);
  out.probes.assign(static_cast<std::size_t>(c->num_vars - m), cplx(0.0));
  const std::vector<cplx> h = label_values(*c, base);
  for (std::size_t ni = 0; ni < c->nodes.size(); ++ni) {
    const auto& node = c->nodes[ni];
    if (node.kind != CompiledNode::Kind::Atom) continue;
    const MultiDual& a = adj[ni];
    if (a.is_zero()) continue;
    for (const auto& t : node.poly) {
      int probe = -1;
      std::uint32_t mask = 0;
      bool ok = true;
      for (const auto& [vi, pw] : t.powers) {
        if (vi >= m) {
          if (probe >= 0 || pw != 1) ok = false;
          probe = vi;
          continue;
        }
        if (pw != 1) ok = false;
        mask |= 1u << vi;
      }
      if (!ok || probe < 0) continue;
      const cplx coef = t.coef * label_factor(h, t.hlabels) * std::pow(base.mark, t.alpha_degree);
      out.probes[static_cast<std::size_t>(probe - m)] += coef * a.coeff(full & ~mask);
    }
    for (const auto& t : node.compose) {
      if (t.betas.size() != 1) continue;
      std::vector<std::pair<int, cplx>> lin;
      for (const auto& [vi, cc] : t.lin) lin.emplace_back(vi, cc * (t.target ? base.mark : cplx(1.0)));
      cplx sum = 0.0;
      expand_compose(m, lin, 0u, t.pgf, t.c0, t.weight * label_factor(h, t.hlabels),
                     [&](std::uint32_t mask, cplx value) { sum += value * a.coeff(full & ~mask); });
      out.probes[static_cast<std::size_t>(t.betas[0] - m)] += sum;
    }
  }
  return out;
}

template <class T>
T evaluate_secular(const PgflExpr& e, const SecularContext<T>& ctx) {
  SecularPoints pts;
  pts.base_g = ctx.base_g;
  std::vector<T> weights;
  for (const auto& [y, w] : ctx.measurements) {
    pts.measurements.push_back(y);
    weights.push_back(w);
  }
  for (const auto& [label, states] : ctx.states)
    for (const auto& [x, w] : states) {
      pts.probes[label].push_back(StateProbe::delta(x));
      weights.push_back(w);
    }
  auto c = std::make_shared<CompiledSecular>(compile_secular(e, pts));
  std::vector<int> active(static_cast<std::size_t>(c->num_vars));
  std::iota(active.begin(), active.end(), 0);
  BaseValues base;
  base.base_h = ctx.base_h;
  const SecularKernel k = specialize(c, active, base);
  return evaluate_kernel<T>(k, weights);
}

template cplx evaluate_kernel<cplx>(const SecularKernel&, std::span<const cplx>);
template MultiDual evaluate_kernel<MultiDual>(const SecularKernel&, std::span<const MultiDual>);
template quad evaluate_kernel<quad>(const SecularKernel&, std::span<const quad>);
template cquad evaluate_kernel<cquad>(const SecularKernel&, std::span<const cquad>);
template cplx evaluate_secular<cplx>(const PgflExpr&, const SecularContext<cplx>&);
template MultiDual evaluate_secular<MultiDual>(const PgflExpr&, const SecularContext<MultiDual>&);
template quad evaluate_secular<quad>(const PgflExpr&, const SecularContext<quad>&);
template cquad evaluate_secular<cquad>(const PgflExpr&, const SecularContext<cquad>&);

}  // namespace pointillist
