#include "pointillist/oracle.hpp"

#include <algorithm>
#include <cmath>

namespace pointillist {

namespace {

struct OracleItem {
  TargetLabel label;
  double chi = 1.0;
  double pd = 1.0;
  double gate_prob = 1.0;
  GaussianMixture prior;
  std::optional<Gate> gate;
  std::vector<double> lik;  // integrated likelihood per measurement, 0 when outside the gate
};

double integrated_likelihood(const GaussianMixture& prior, const MeasurementModel& mm, const Vec& y) {
  double s = 0.0;
  for (std::size_t k = 0; k < prior.size(); ++k)
    s += prior.weights[k] * gaussian_eval(predicted_measurement(prior.components[k], mm), y);
  return s;
}

GaussianMixture assigned_posterior(const GaussianMixture& prior, const MeasurementModel& mm, const Vec& y) {
  GaussianMixture out;
  double total = 0.0;
  for (std::size_t k = 0; k < prior.size(); ++k) {
    const double w = prior.weights[k] * gaussian_eval(predicted_measurement(prior.components[k], mm), y);
    out.weights.push_back(w);
    out.components.push_back(kalman_update(prior.components[k], mm, y));
    total += w;
  }
  for (double& w : out.weights) w /= total;
  return out;
}

bool oracle_supports(FilterKind k) {
  switch (k) {
    case FilterKind::BM:
    case FilterKind::BMD:
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

bool has_existence(FilterKind k) {
  return k == FilterKind::IPDA || k == FilterKind::JIPDA || k == FilterKind::MHT || k == FilterKind::JIPDAS ||
         k == FilterKind::MB;
}

}  // namespace

bool OracleStats::matches(std::size_t t, const TargetLabel& label) const {
  return label.empty() || label == kSharedLabel || items[t].label == label;
}

double OracleStats::item_density(std::size_t t, int state, const Vec& x) const {
  if (state == OracleState::kAbsent) return 0.0;
  if (state == OracleState::kMissed) return items[t].prior.eval(x);
  return items[t].assigned[static_cast<std::size_t>(state - 2)].eval(x);
}

double OracleStats::intensity(const TargetLabel& label, const Vec& x) const {
  double s = 0.0;
  for (std::size_t t = 0; t < items.size(); ++t) {
    if (!matches(t, label)) continue;
    for (std::size_t st = 1; st < state_prob[t].size(); ++st)
      if (state_prob[t][st] != 0.0) s += state_prob[t][st] * item_density(t, static_cast<int>(st), x);
  }
  return s;
}

double OracleStats::second_factorial_moment(const TargetLabel& label, const Vec& x1, const Vec& x2) const {
  if (pair_prob.empty()) throw std::logic_error("oracle pair probabilities were not accumulated");
  const std::size_t ns = static_cast<std::size_t>(num_measurements) + 2;
  double s = 0.0;
  for (std::size_t a = 0; a < items.size(); ++a)
    for (std::size_t b = a + 1; b < items.size(); ++b) {
      if (!matches(a, label) || !matches(b, label)) continue;
      for (std::size_t sa = 1; sa < ns; ++sa)
        for (std::size_t sb = 1; sb < ns; ++sb) {
          const double p = pair_prob[a][b][sa * ns + sb];
          if (p == 0.0) continue;
          const int ia = static_cast<int>(sa), ib = static_cast<int>(sb);
          s += p * (item_density(a, ia, x1) * item_density(b, ib, x2) + item_density(a, ia, x2) * item_density(b, ib, x1));
        }
    }
  return s;
}

std::vector<double> OracleStats::cardinality(const TargetLabel& label, int n_max) const {
  std::vector<double> out(static_cast<std::size_t>(n_max) + 1, 0.0);
  if (label.empty() || label == kSharedLabel) {
    for (std::size_t n = 0; n < cardinality_all.size() && n < out.size(); ++n) out[n] = cardinality_all[n];
    return out;
  }
  for (std::size_t t = 0; t < items.size(); ++t) {
    if (items[t].label != label) continue;
    out[0] = 1.0 - existence(t);
    if (out.size() > 1) out[1] = existence(t);
    return out;
  }
  throw std::invalid_argument("unknown target label '" + label + "'");
}

double OracleStats::existence(std::size_t t) const { return 1.0 - state_prob[t][OracleState::kAbsent]; }

Vec OracleStats::mean(std::size_t t) const {
  Vec m = Vec::Zero(items[t].prior.dim());
  double present = 0.0;
  for (std::size_t st = 1; st < state_prob[t].size(); ++st) {
    const double p = state_prob[t][st];
    if (p == 0.0) continue;
    const GaussianMixture& g = st == 1 ? items[t].prior : items[t].assigned[st - 2];
    m += p * moment_match(g).mean;
    present += p;
  }
  return present > 0.0 ? Vec(m / present) : m;
}

std::uint64_t feasible_assignment_count(int n, int m) {
  std::uint64_t total = 0;
  for (int k = 0; k <= std::min(n, m); ++k) {
    std::uint64_t c = 1;
    for (int i = 0; i < k; ++i) c = c * static_cast<std::uint64_t>(n - i) / static_cast<std::uint64_t>(i + 1);
    std::uint64_t perm = 1;
    for (int i = 0; i < k; ++i) perm *= static_cast<std::uint64_t>(m - i);
    total += c * perm;
  }
  return total;
}

OracleStats enumeration_oracle(const FilterParams& p, std::span<const Vec> ys, const OracleOptions& opts) {
  if (!oracle_supports(p.kind))
    throw std::invalid_argument("enumeration oracle: unsupported filter kind '" + std::string(to_string(p.kind)) + "'");
  const int m = static_cast<int>(ys.size());
  if (m > 30) throw std::invalid_argument("enumeration oracle: too many measurements");
  const std::vector<Gate> gates = filter_gates(p);
  const double pd = p.kind == FilterKind::BM ? 1.0 : p.det.pd;

  std::vector<OracleItem> items;
  for (std::size_t i = 0; i < p.targets.size(); ++i) {
    OracleItem it;
    it.label = target_label(i);
    it.chi = has_existence(p.kind) ? p.existence.at(i) : 1.0;
    it.pd = pd;
    it.prior = p.targets[i];
    if (!gates.empty()) it.gate = gates[i];
    items.push_back(std::move(it));
  }
  if (p.kind == FilterKind::MHT || p.kind == FilterKind::MB) {
    if (p.data_priors.size() != p.data_gamma.size())
      throw std::invalid_argument("filter.data: birth prior and gamma counts differ");
    for (std::size_t j = 0; j < p.data_priors.size(); ++j) {
      OracleItem it;
      it.label = data_label(j);
      it.chi = p.data_gamma[j];
      it.pd = pd;
      it.prior = p.data_priors[j];
      if (!gates.empty()) it.gate = gates[p.targets.size() + j];
      items.push_back(std::move(it));
    }
  }
  for (auto& it : items) {
    if (it.gate) it.gate_prob = gate_probability(*it.gate);
    for (const auto& y : ys)
      it.lik.push_back(!it.gate || it.gate->contains(y) ? integrated_likelihood(it.prior, p.mm, y) : 0.0);
  }

  // Clutter: weight of a clutter set depends on its size and the product of
  // spatial densities.
  const bool clutter = uses_clutter(p.kind);
  std::vector<double> q(static_cast<std::size_t>(m), 0.0);
  std::vector<double> clutter_count_factor(static_cast<std::size_t>(m) + 1, 0.0);
  if (clutter) {
    const SpatialDensity& s = spatial_of(p.clutter);
    const double mass = gates.empty() ? 1.0 : gated_mass(s, gates);
    for (int i = 0; i < m; ++i) {
      const Vec& y = ys[static_cast<std::size_t>(i)];
      if (!s.box().contains(y)) throw std::invalid_argument("measurement point outside Y");
      const bool in = gates.empty() || std::any_of(gates.begin(), gates.end(), [&](const Gate& g) { return g.contains(y); });
      q[static_cast<std::size_t>(i)] = in ? s.eval(y) : 0.0;
    }
    if (const auto* pc = std::get_if<PoissonClutter>(&p.clutter)) {
      for (int c = 0; c <= m; ++c)
        clutter_count_factor[static_cast<std::size_t>(c)] = std::pow(pc->rate, c) * std::exp(-pc->rate * mass);
    } else {
      const auto& card = std::get<ClusterClutter>(p.clutter).card;
      const CountPgf g = CountPgf::polynomial(card);
      for (int c = 0; c <= m; ++c) clutter_count_factor[static_cast<std::size_t>(c)] = g.derivative(c, 1.0 - mass);
    }
  } else {
    clutter_count_factor[0] = 1.0;
  }

  const std::size_t n_items = items.size();
  const std::size_t ns = static_cast<std::size_t>(m) + 2;
  OracleStats out;
  out.num_measurements = m;
  out.state_prob.assign(n_items, std::vector<double>(ns, 0.0));
  if (opts.pairs) {
    out.pair_prob.assign(n_items, std::vector<std::vector<double>>(n_items));
    for (std::size_t a = 0; a < n_items; ++a)
      for (std::size_t b = a + 1; b < n_items; ++b) out.pair_prob[a][b].assign(ns * ns, 0.0);
  }
  out.cardinality_all.assign(n_items + 1, 0.0);

  std::vector<int> state(n_items, 0);
  auto leaf = [&](double w, std::uint32_t used) {
    if (++out.hypotheses > opts.budget) throw std::invalid_argument("enumeration oracle: combinatorial budget exceeded");
    int count = 0;
    double cw = 1.0;
    for (int i = 0; i < m; ++i) {
      if (used & (1u << i)) continue;
      cw *= q[static_cast<std::size_t>(i)];
      ++count;
    }
    cw *= clutter_count_factor[static_cast<std::size_t>(count)];
    const double total = w * cw;
    if (total == 0.0) return;
    out.total += total;
    int present = 0;
    for (std::size_t t = 0; t < n_items; ++t) {
      out.state_prob[t][static_cast<std::size_t>(state[t])] += total;
      if (state[t] != OracleState::kAbsent) ++present;
    }
    out.cardinality_all[static_cast<std::size_t>(present)] += total;
    if (opts.pairs)
      for (std::size_t a = 0; a < n_items; ++a)
        for (std::size_t b = a + 1; b < n_items; ++b)
          out.pair_prob[a][b][static_cast<std::size_t>(state[a]) * ns + static_cast<std::size_t>(state[b])] += total;
  };
  auto rec = [&](auto&& self, std::size_t t, double w, std::uint32_t used) -> void {
    if (t == n_items) {
      leaf(w, used);
      return;
    }
    const OracleItem& it = items[t];
    if (it.chi < 1.0) {
      state[t] = OracleState::kAbsent;
      self(self, t + 1, w * (1.0 - it.chi), used);
    }
    if (it.chi > 0.0) {
      state[t] = OracleState::kMissed;
      self(self, t + 1, w * it.chi * (1.0 - it.pd * it.gate_prob), used);
      if (it.pd > 0.0)
        for (int j = 0; j < m; ++j) {
          if ((used & (1u << j)) || it.lik[static_cast<std::size_t>(j)] == 0.0) continue;
          state[t] = OracleState::assigned(j);
          self(self, t + 1, w * it.chi * it.pd * it.lik[static_cast<std::size_t>(j)], used | (1u << j));
        }
    }
  };
  rec(rec, 0, 1.0, 0u);

  if (out.total > 0.0) {
    for (auto& row : out.state_prob)
      for (double& v : row) v /= out.total;
    for (auto& row : out.pair_prob)
      for (auto& cell : row)
        for (double& v : cell) v /= out.total;
    for (double& v : out.cardinality_all) v /= out.total;
  }
  for (const auto& it : items) {
    OracleStats::Item oi;
    oi.label = it.label;
    oi.prior = it.prior;
    for (int j = 0; j < m; ++j)
      oi.assigned.push_back(it.lik[static_cast<std::size_t>(j)] > 0.0
                                ? assigned_posterior(it.prior, p.mm, ys[static_cast<std::size_t>(j)])
                                : GaussianMixture());
    out.items.push_back(std::move(oi));
  }
  return out;
}

double phd_corrector(const GaussianMixture& d, double pd, const MeasurementModel& mm, const PoissonClutter& clutter,
                     std::span<const Vec> ys, const Vec& x) {
  const double dx = d.eval(x);
  double v = (1.0 - pd) * dx;
  for (const auto& y : ys) {
    double integral = 0.0;
    for (std::size_t k = 0; k < d.size(); ++k)
      integral += d.weights[k] * gaussian_eval(predicted_measurement(d.components[k], mm), y);
    v += pd * mm.likelihood(y, x) * dx / (clutter.intensity(y) + pd * integral);
  }
  return v;
}

ResolutionOracleStats resolution_oracle(const GaussianDensity& prior1, const GaussianDensity& prior2,
                                        const ResolutionModel& rm, const Mat& R, const PoissonClutter& clutter,
                                        std::span<const Vec> ys, int order) {
  const int m = static_cast<int>(ys.size());
  const auto r1 = gauss_hermite_cubature(prior1, order);
  const auto r2 = gauss_hermite_cubature(prior2, order);
  const double a1 = 1.0 - rm.pd1, b1 = rm.pd1, a2 = 1.0 - rm.pd2, b2 = rm.pd2;
  std::vector<double> lam(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) lam[static_cast<std::size_t>(i)] = clutter.intensity(ys[static_cast<std::size_t>(i)]);
  auto all_clutter_except = [&](int i, int j) {
    double w = std::exp(-clutter.rate);
    for (int k = 0; k < m; ++k)
      if (k != i && k != j) w *= lam[static_cast<std::size_t>(k)];
    return w;
  };
  ResolutionOracleStats out;
  out.mean1 = Vec::Zero(prior1.dim());
  out.mean2 = Vec::Zero(prior2.dim());
  for (std::size_t u = 0; u < r1.nodes.size(); ++u)
    for (std::size_t v = 0; v < r2.nodes.size(); ++v) {
      const Vec& x1 = r1.nodes[u];
      const Vec& x2 = r2.nodes[v];
      const double cw = r1.weights[u] * r2.weights[v];
      const double f = resolution_function(rm, x1, x2);
      const Vec merged = 0.5 * (rm.h1 * x1 + rm.h2 * x2);
      auto p1 = [&](const Vec& y) { return gaussian_eval(GaussianDensity(rm.h1 * x1, R), y); };
      auto p2 = [&](const Vec& y) { return gaussian_eval(GaussianDensity(rm.h2 * x2, R), y); };
      auto p12 = [&](const Vec& y) { return gaussian_eval(GaussianDensity(merged, R), y); };
      std::array<double, 3> by_origin{};
      by_origin[0] = a1 * a2 * all_clutter_except(-1, -1);
      for (int i = 0; i < m; ++i) {
        const Vec& y = ys[static_cast<std::size_t>(i)];
        by_origin[1] += (a1 * b2 * p2(y) + b1 * a2 * p1(y) + b1 * b2 * f * p12(y)) * all_clutter_except(i, -1);
        for (int j = i + 1; j < m; ++j) {
          const Vec& yj = ys[static_cast<std::size_t>(j)];
          by_origin[2] += b1 * b2 * (1.0 - f) * (p1(y) * p2(yj) + p1(yj) * p2(y)) * all_clutter_except(i, j);
        }
      }
      const double w = cw * (by_origin[0] + by_origin[1] + by_origin[2]);
      for (int k = 0; k < 3; ++k) out.origin[static_cast<std::size_t>(k)] += cw * by_origin[static_cast<std::size_t>(k)];
      out.total += w;
      out.mean1 += w * x1;
      out.mean2 += w * x2;
    }
  if (out.total > 0.0) {
    for (double& o : out.origin) o /= out.total;
    out.mean1 /= out.total;
    out.mean2 /= out.total;
  }
  return out;
}

}  // namespace pointillist
