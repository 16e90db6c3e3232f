#include "pointillist/filters.hpp"

#include "pointillist/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pointillist {

namespace {

FilterKind labeled_kind(FilterKind k) {
  switch (k) {
    case FilterKind::JPDAS:
      return FilterKind::JPDA;
    case FilterKind::JIPDAS:
      return FilterKind::JIPDA;
    case FilterKind::PMHTS:
      return FilterKind::PMHT;
    case FilterKind::MB:
      return FilterKind::MHT;
    default:
      return k;
  }
}

bool has_data_births(FilterKind k) { return k == FilterKind::MHT || k == FilterKind::MB; }

Mat repair_covariance(const Mat& c) {
  const Mat s = symmetrize(c);
  Eigen::SelfAdjointEigenSolver<Mat> es(s);
  const double top = std::max(es.eigenvalues().maxCoeff(), 0.0);
  if (es.eigenvalues().minCoeff() > 1e-12 * top && top > 0.0) return s;
  if (!(top > 0.0)) throw NumericalError("moment closing produced a non-positive covariance");
  const Vec ev = es.eigenvalues().cwiseMax(1e-12 * top);
  return symmetrize(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
}

std::vector<double> predict_cardinality(const std::vector<double>& card, double survival, double birth_mass) {
  const std::size_t n = card.size();
  std::vector<double> thinned(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    if (card[j] == 0.0) continue;
    // Binomial(j, survival) via the log-gamma normalizer.
    for (std::size_t s = 0; s <= j; ++s) {
      const double logc = std::lgamma(static_cast<double>(j) + 1.0) - std::lgamma(static_cast<double>(s) + 1.0) -
                          std::lgamma(static_cast<double>(j - s) + 1.0);
      double term = std::exp(logc);
      term *= survival == 0.0 ? (s == 0 ? 1.0 : 0.0) : std::pow(survival, static_cast<double>(s));
      term *= survival == 1.0 ? (s == j ? 1.0 : 0.0) : std::pow(1.0 - survival, static_cast<double>(j - s));
      thinned[s] += card[j] * term;
    }
  }
  if (birth_mass <= 0.0) return thinned;
  const std::vector<double> birth = poisson_pmf(birth_mass, static_cast<int>(n) - 1);
  std::vector<double> out(n, 0.0);
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; a + b < n; ++b) out[a + b] += thinned[a] * birth[b];
  const double total = std::accumulate(out.begin(), out.end(), 0.0);
  for (double& v : out) v /= total;
  return out;
}

/// Probe set for the restricted closing of an intensity label: for each
/// mixture component and each measurement set in `sets`, either the mass
/// alone or the full moment set.
std::vector<StateProbe> restricted_probes(std::size_t components, const std::vector<std::vector<int>>& sets,
                                          Eigen::Index d, bool moments) {
  std::vector<StateProbe> out;
  const std::vector<StateProbe> base = moments ? moment_probes(d) : std::vector<StateProbe>{StateProbe::mass()};
  for (std::size_t k = 0; k < components; ++k)
    for (const auto& s : sets)
      for (StateProbe p : base) {
        p.restriction = StateProbe::Restriction{static_cast<int>(k), s};
        out.push_back(std::move(p));
      }
  return out;
}

std::vector<std::vector<int>> measurement_sets(int m, int max_size) {
  std::vector<std::vector<int>> sets{{}};
  if (max_size >= 1)
    for (int j = 0; j < m; ++j) sets.push_back({j});
  if (max_size >= 2)
    for (int i = 0; i < m; ++i)
      for (int j = i + 1; j < m; ++j) sets.push_back({i, j});
  return sets;
}

GaussianMixture normalized_or_uniform(const GaussianMixture& g) {
  if (g.mass() > 0.0) return g.normalized();
  return GaussianMixture(std::vector<double>(g.size(), 1.0 / static_cast<double>(g.size())), g.components);
}

/// Posterior intensity of one PHD-type label as a Gaussian mixture.
GaussianMixture close_intensity(const PgflExpr& e, const TargetLabel& label, const GaussianMixture& prior,
                                bool generic, const FilterConfig& cfg, std::span<const Vec> ys, double* likelihood) {
  const GaussianMixture mu = normalized_or_uniform(prior);
  const int m = static_cast<int>(ys.size());
  const Eigen::Index d = prior.dim();
  GaussianMixture out;
  if (!generic) {
    // Constant detection: component shapes are the prior or its Kalman update.
    const auto sets = measurement_sets(m, 1);
    std::map<TargetLabel, std::vector<StateProbe>> probes{{label, restricted_probes(mu.size(), sets, d, false)}};
    const auto vals = posterior_functionals(e, ys, probes, cfg.diff, likelihood);
    std::size_t idx = 0;
    for (std::size_t k = 0; k < mu.size(); ++k)
      for (const auto& s : sets) {
        const double w = vals[idx++];
        if (!(w > 0.0)) continue;
        out.weights.push_back(w);
        out.components.push_back(s.empty() ? mu.components[k]
                                           : kalman_update(mu.components[k], cfg.mm, ys[static_cast<std::size_t>(s[0])]));
      }
    return out;
  }
  const int max_count = cfg.set_likelihood ? cfg.set_likelihood->max_count()
                        : cfg.ext        ? static_cast<int>(cfg.ext->dm.size())
                                         : 1;
  const int max_size = std::min(max_count, 2);
  const auto sets = measurement_sets(m, max_size);
  std::map<TargetLabel, std::vector<StateProbe>> probes{{label, restricted_probes(mu.size(), sets, d, true)}};
  const auto vals = posterior_functionals(e, ys, probes, cfg.diff, likelihood);
  const std::size_t stride = moment_probes(d).size();
  for (std::size_t b = 0; b + stride <= vals.size(); b += stride) {
    if (!(vals[b] > 0.0)) continue;
    const auto [mass, g] = close_moments(std::span<const double>(vals).subspan(b, stride), d);
    out.weights.push_back(mass);
    out.components.push_back(g);
  }
  return out;
}

}  // namespace

std::vector<StateProbe> moment_probes(Eigen::Index d) {
  std::vector<StateProbe> out{StateProbe::mass()};
  for (Eigen::Index i = 0; i < d; ++i) out.push_back(StateProbe::first(static_cast<int>(i)));
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = i; j < d; ++j) out.push_back(StateProbe::second(static_cast<int>(i), static_cast<int>(j)));
  return out;
}

std::pair<double, GaussianDensity> close_moments(std::span<const double> v, Eigen::Index d) {
  const double mass = v[0];
  if (!(mass > kZeroDenominator)) throw NumericalError("moment closing: zero posterior mass");
  Vec mean(d);
  for (Eigen::Index i = 0; i < d; ++i) mean[i] = v[static_cast<std::size_t>(1 + i)] / mass;
  Mat cov(d, d);
  std::size_t idx = static_cast<std::size_t>(1 + d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = i; j < d; ++j) {
      cov(i, j) = cov(j, i) = v[idx++] / mass - mean[i] * mean[j];
    }
  return {mass, GaussianDensity(mean, repair_covariance(cov))};
}

GaussianMixture mixture_reduce(const GaussianMixture& m, const MixtureReduceOptions& opts, ReduceReport* report) {
  if (!(opts.prune_threshold >= 0.0) || !(opts.merge_distance >= 0.0) || opts.max_components == 0)
    throw std::invalid_argument("mixture_reduce: parameters must be positive");
  ReduceReport rep;
  std::vector<std::size_t> live;
  for (std::size_t k = 0; k < m.size(); ++k) {
    if (m.weights[k] < opts.prune_threshold) {
      rep.pruned_weight += m.weights[k];
      ++rep.pruned;
    } else {
      live.push_back(k);
    }
  }
  GaussianMixture out;
  while (!live.empty()) {
    const auto lead_it = std::max_element(live.begin(), live.end(),
                                          [&](std::size_t a, std::size_t b) { return m.weights[a] < m.weights[b]; });
    const std::size_t lead = *lead_it;
    const GaussianDensity& g = m.components[lead];
    const Eigen::LDLT<Mat> ldlt(g.cov);
    std::vector<std::size_t> group, rest;
    for (std::size_t k : live) {
      const Vec diff = m.components[k].mean - g.mean;
      const double d2 = diff.dot(ldlt.solve(diff));
      (k == lead || std::sqrt(std::max(d2, 0.0)) < opts.merge_distance ? group : rest).push_back(k);
    }
    if (group.size() == 1) {
      out.weights.push_back(m.weights[lead]);
      out.components.push_back(g);
    } else {
      GaussianMixture sub;
      double w = 0.0;
      for (std::size_t k : group) {
        sub.weights.push_back(m.weights[k]);
        sub.components.push_back(m.components[k]);
        w += m.weights[k];
      }
      out.weights.push_back(w);
      out.components.push_back(moment_match(sub));
      rep.merged += group.size() - 1;
    }
    live = std::move(rest);
  }
  if (out.size() > opts.max_components) {
    std::vector<std::size_t> order(out.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return out.weights[a] > out.weights[b]; });
    GaussianMixture kept;
    for (std::size_t i = 0; i < order.size(); ++i) {
      if (i < opts.max_components) {
        kept.weights.push_back(out.weights[order[i]]);
        kept.components.push_back(out.components[order[i]]);
      } else {
        rep.pruned_weight += out.weights[order[i]];
        ++rep.truncated;
      }
    }
    out = std::move(kept);
  }
  if (report) *report = rep;
  return out;
}

StateShape state_shape(FilterKind k) {
  switch (k) {
    case FilterKind::IPDA:
    case FilterKind::JIPDA:
    case FilterKind::JIPDAS:
    case FilterKind::MHT:
    case FilterKind::MB:
      return StateShape::Tracks;
    case FilterKind::PHD:
    case FilterKind::CPHD:
    case FilterKind::GenPHD:
      return StateShape::Intensity;
    case FilterKind::JointPHD:
    case FilterKind::JointGenPHD:
      return StateShape::Groups;
    default:
      return StateShape::Targets;
  }
}

FilterState make_state(FilterKind kind, const std::vector<GaussianDensity>& targets,
                       const std::vector<double>& existence, const GaussianMixture& intensity,
                       const std::vector<double>& cardinality, const std::vector<GaussianMixture>& groups) {
  FilterState s;
  s.kind = kind;
  switch (state_shape(kind)) {
    case StateShape::Targets:
      s.targets = targets;
      for (std::size_t i = 0; i < targets.size(); ++i) s.target_ids.push_back(s.next_id++);
      break;
    case StateShape::Tracks:
      if (!existence.empty() && existence.size() != targets.size())
        throw std::invalid_argument("filter.existence: one existence probability per target is required");
      for (std::size_t i = 0; i < targets.size(); ++i) {
        const double chi = existence.empty() ? 1.0 : existence[i];
        if (!(chi >= 0.0 && chi <= 1.0)) throw std::invalid_argument("existence probability out of range");
        s.tracks.push_back({chi, targets[i], s.next_id++});
      }
      break;
    case StateShape::Intensity:
      s.intensity = intensity;
      s.cardinality = cardinality;
      break;
    case StateShape::Groups:
      s.groups = groups;
      break;
  }
  return s;
}

FilterState predict(const FilterState& s, const MotionModel& motion, double survival, const BirthModel* birth) {
  if (!(survival >= 0.0 && survival <= 1.0)) throw std::invalid_argument("survival probability out of range");
  FilterState out = s;
  for (auto& t : out.targets) t = kalman_predict(t, motion);
  for (auto& t : out.tracks) {
    t.existence *= survival;
    t.density = kalman_predict(t.density, motion);
  }
  for (auto& c : out.intensity.components) c = kalman_predict(c, motion);
  for (double& w : out.intensity.weights) w *= survival;
  for (auto& g : out.groups) {
    for (auto& c : g.components) c = kalman_predict(c, motion);
    for (double& w : g.weights) w *= survival;
  }
  if (s.kind == FilterKind::CPHD && !out.cardinality.empty())
    out.cardinality = predict_cardinality(out.cardinality, survival, birth ? birth->intensity.mass() : 0.0);
  if (birth) {
    const StateShape shape = state_shape(s.kind);
    if (shape == StateShape::Intensity) {
      for (std::size_t k = 0; k < birth->intensity.size(); ++k) {
        out.intensity.weights.push_back(birth->intensity.weights[k]);
        out.intensity.components.push_back(birth->intensity.components[k]);
      }
    } else if (shape == StateShape::Tracks && s.kind != FilterKind::IPDA) {
      for (auto b : birth->bernoulli) {
        b.id = out.next_id++;
        out.tracks.push_back(std::move(b));
      }
    }
  }
  if (s.kind == FilterKind::PHD) out.cardinality.clear();
  return out;
}

FilterParams scan_params(const FilterState& s, const FilterConfig& cfg, std::span<const Vec> ys) {
  if (s.kind != cfg.kind) throw std::invalid_argument("filter state kind does not match the configuration");
  FilterParams p;
  p.kind = cfg.kind;
  p.mm = cfg.mm;
  p.det = cfg.det;
  p.ext = cfg.ext;
  p.pmht_rates = cfg.pmht_rates;
  p.clutter = cfg.clutter;
  p.gate_threshold = cfg.gate_threshold;
  p.set_likelihood = cfg.set_likelihood;
  p.resolution = cfg.resolution;
  p.cubature_order = cfg.cubature_order;
  switch (state_shape(cfg.kind)) {
    case StateShape::Targets:
      for (const auto& t : s.targets) p.targets.emplace_back(t);
      break;
    case StateShape::Tracks:
      for (const auto& t : s.tracks) {
        p.targets.emplace_back(t.density);
        p.existence.push_back(std::clamp(t.existence, 0.0, 1.0));
      }
      break;
    case StateShape::Intensity:
      p.intensity = s.intensity;
      p.cardinality = s.cardinality;
      break;
    case StateShape::Groups:
      p.groups = s.groups;
      break;
  }
  if (has_data_births(cfg.kind)) {
    if (!cfg.data_birth) throw std::invalid_argument("filter.data_birth: required for data-induced targets");
    attach_data_births(p, *cfg.data_birth, ys);
  }
  return p;
}

namespace {

struct ScanSetup {
  FilterParams params;
  std::vector<Vec> used;
};

ScanSetup setup_scan(const FilterState& s, const FilterConfig& cfg, std::span<const Vec> ys) {
  ScanSetup out{scan_params(s, cfg, ys), std::vector<Vec>(ys.begin(), ys.end())};
  if (out.params.gate_threshold && supports_gating(out.params.kind)) out.used = gate_measurements(out.params, ys);
  if (has_data_births(cfg.kind) && out.used.size() != ys.size()) {
    // Data-induced targets follow the gated measurement set.
    out.params = scan_params(s, cfg, out.used);
  }
  return out;
}

/// Posterior mass and moment-matched density of one target or data item.
struct ItemPosterior {
  double mass = 0.0;
  GaussianDensity density;
};

/// Writes the closed per-item posteriors (targets first, then data items)
/// into the next state.
void apply_item_closing(const FilterState& s, const FilterConfig& cfg, std::size_t n_targets,
                        const std::vector<ItemPosterior>& items, UpdateResult& r) {
  for (const auto& it : items) r.stats.expected_count += it.mass;
  if (state_shape(cfg.kind) == StateShape::Targets) {
    for (std::size_t i = 0; i < n_targets; ++i) {
      if (!(items[i].mass > kZeroDenominator)) throw NumericalError("target posterior has zero mass");
      r.state.targets[i] = items[i].density;
    }
    return;
  }
  std::vector<BernoulliTrack> tracks;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const double chi = std::min(items[i].mass, 1.0);
    if (chi < cfg.track_prune || !(items[i].mass > kZeroDenominator)) continue;
    tracks.push_back({chi, items[i].density, i < n_targets ? s.tracks[i].id : r.state.next_id++});
  }
  r.state.tracks = std::move(tracks);
}

}  // namespace

UpdateResult update(const FilterState& s, const FilterConfig& cfg, std::span<const Vec> ys) {
  const ScanSetup setup = setup_scan(s, cfg, ys);
  const FilterParams& p = setup.params;
  const std::vector<Vec>& used = setup.used;

  UpdateResult r;
  r.state = s;
  r.stats.measurements_used = used.size();
  const StateShape shape = state_shape(cfg.kind);

  if (shape == StateShape::Targets || shape == StateShape::Tracks) {
    FilterParams lp = p;
    lp.kind = labeled_kind(p.kind);
    const PgflExpr e = build_filter(lp);
    const std::size_t n_targets = lp.targets.size();
    const std::size_t n_items = n_targets + lp.data_priors.size();
    if (n_items == 0) {
      r.stats.cardinality = {1.0};
      r.stats.likelihood = mixed_derivative(e, used, {}, cfg.diff).real();
      if (shape == StateShape::Tracks) r.state.tracks.clear();
      return r;
    }
    // Probe values come back in label order, which is lexicographic.
    std::map<TargetLabel, std::pair<std::size_t, Eigen::Index>> item_of;
    std::map<TargetLabel, std::vector<StateProbe>> probes;
    for (std::size_t i = 0; i < n_items; ++i) {
      const bool data = i >= n_targets;
      const TargetLabel label = data ? data_label(i - n_targets) : target_label(i);
      const Eigen::Index d = data ? lp.data_priors[i - n_targets].dim() : lp.targets[i].dim();
      item_of[label] = {i, d};
      probes[label] = moment_probes(d);
    }
    const auto vals = posterior_functionals(e, used, probes, cfg.diff, &r.stats.likelihood);
    std::vector<ItemPosterior> items(n_items);
    std::size_t idx = 0;
    for (const auto& [label, list] : probes) {
      const auto [i, d] = item_of.at(label);
      const std::span<const double> v(vals.data() + idx, list.size());
      idx += list.size();
      if (!(v[0] > kZeroDenominator)) continue;
      const auto c = close_moments(v, d);
      items[i] = {c.first, c.second};
    }
    r.stats.cardinality = posterior_cardinality(e, used, "", static_cast<int>(n_items), cfg.diff);
    apply_item_closing(s, cfg, n_targets, items, r);
    return r;
  }

  const PgflExpr e = build_filter(p);
  const bool generic = cfg.kind == FilterKind::GenPHD || cfg.kind == FilterKind::JointGenPHD;
  if (shape == StateShape::Intensity) {
    GaussianMixture post = close_intensity(e, kIntensityLabel, p.intensity, generic, cfg, used, &r.stats.likelihood);
    r.stats.expected_count = post.mass();
    r.stats.cardinality = posterior_cardinality(e, used, kIntensityLabel, cfg.n_max, cfg.diff);
    r.state.intensity = post.size() > 0 ? mixture_reduce(post, cfg.reduce) : post;
    r.state.cardinality = r.stats.cardinality;
    return r;
  }
  for (std::size_t g = 0; g < p.groups.size(); ++g) {
    GaussianMixture post = close_intensity(e, group_label(g), p.groups[g], generic, cfg, used, &r.stats.likelihood);
    r.stats.expected_count += post.mass();
    r.state.groups[g] = post.size() > 0 ? mixture_reduce(post, cfg.reduce) : post;
  }
  r.stats.cardinality = posterior_cardinality(e, used, "", cfg.n_max, cfg.diff);
  return r;
}

bool has_reference_update(FilterKind k) {
  switch (labeled_kind(k)) {
    case FilterKind::BM:
    case FilterKind::BMD:
    case FilterKind::PDA:
    case FilterKind::JPDA:
    case FilterKind::IPDA:
    case FilterKind::JIPDA:
    case FilterKind::MHT:
    case FilterKind::PHD:
      return true;
    default:
      return false;
  }
}

UpdateResult reference_update(const FilterState& s, const FilterConfig& cfg, std::span<const Vec> ys) {
  if (!has_reference_update(cfg.kind))
    throw std::invalid_argument("method: no enumeration reference for filter '" + std::string(to_string(cfg.kind)) + "'");
  const ScanSetup setup = setup_scan(s, cfg, ys);
  const std::vector<Vec>& used = setup.used;
  UpdateResult r;
  r.state = s;
  r.stats.measurements_used = used.size();

  if (cfg.kind == FilterKind::PHD) {
    // Closed-form Gaussian-mixture corrector. Each measurement contributes an
    // independent Bernoulli to the posterior count.
    const auto* clutter = std::get_if<PoissonClutter>(&cfg.clutter);
    if (!clutter) throw std::invalid_argument("method: the PHD reference needs Poisson clutter");
    const GaussianMixture& D = s.intensity;
    const double pd = cfg.det.pd;
    GaussianMixture post;
    for (std::size_t k = 0; k < D.size(); ++k) {
      post.weights.push_back((1.0 - pd) * D.weights[k]);
      post.components.push_back(D.components[k]);
    }
    std::vector<double> card = poisson_pmf((1.0 - pd) * D.mass(), cfg.n_max);
    double likelihood = std::exp(-D.mass() * pd - clutter->rate);
    for (const auto& y : used) {
      std::vector<double> w(D.size());
      double total = 0.0;
      for (std::size_t k = 0; k < D.size(); ++k) {
        w[k] = pd * D.weights[k] * gaussian_eval(predicted_measurement(D.components[k], cfg.mm), y);
        total += w[k];
      }
      const double denom = clutter->intensity(y) + total;
      if (!(denom > kZeroDenominator)) throw NumericalError("reference update: zero-probability measurement");
      likelihood *= denom;
      for (std::size_t k = 0; k < D.size(); ++k) {
        post.weights.push_back(w[k] / denom);
        post.components.push_back(kalman_update(D.components[k], cfg.mm, y));
      }
      const double rj = total / denom;
      for (std::size_t n = card.size() - 1; n > 0; --n) card[n] = card[n] * (1.0 - rj) + card[n - 1] * rj;
      card[0] *= 1.0 - rj;
    }
    const double sum = std::accumulate(card.begin(), card.end(), 0.0);
    for (double& v : card) v /= sum;
    r.stats.likelihood = likelihood;
    r.stats.expected_count = post.mass();
    r.stats.cardinality = card;
    r.state.intensity = mixture_reduce(post, cfg.reduce);
    r.state.cardinality = card;
    return r;
  }

  FilterParams lp = setup.params;
  lp.kind = labeled_kind(lp.kind);
  const OracleStats o = enumeration_oracle(lp, used);
  const std::size_t n_targets = lp.targets.size();
  std::vector<ItemPosterior> items(o.items.size());
  for (std::size_t t = 0; t < o.items.size(); ++t) {
    const auto& sp = o.state_prob[t];
    GaussianMixture shape;
    auto add = [&](double w, const GaussianMixture& m) {
      if (!(w > 0.0)) return;
      for (std::size_t k = 0; k < m.size(); ++k) {
        shape.weights.push_back(w * m.weights[k]);
        shape.components.push_back(m.components[k]);
      }
    };
    add(sp[OracleState::kMissed], o.items[t].prior);
    for (std::size_t j = 0; j < o.items[t].assigned.size(); ++j)
      add(sp[static_cast<std::size_t>(OracleState::assigned(static_cast<int>(j)))], o.items[t].assigned[j]);
    items[t].mass = 1.0 - sp[OracleState::kAbsent];
    if (shape.size() > 0 && items[t].mass > kZeroDenominator) items[t].density = moment_match(shape);
  }
  r.stats.likelihood = o.total;
  r.stats.cardinality = o.cardinality("", static_cast<int>(o.items.size()));
  apply_item_closing(s, cfg, n_targets, items, r);
  return r;
}

std::vector<Estimate> estimate(const FilterState& s, double confirm_threshold) {
  std::vector<Estimate> out;
  const bool labeled = !is_superposed(s.kind);
  auto top_components = [&](const GaussianMixture& g, std::size_t n) {
    std::vector<std::size_t> order(g.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return g.weights[a] > g.weights[b]; });
    for (std::size_t i = 0; i < std::min(n, order.size()); ++i)
      out.push_back({g.components[order[i]].mean, g.weights[order[i]], std::nullopt});
  };
  switch (state_shape(s.kind)) {
    case StateShape::Targets:
      for (std::size_t i = 0; i < s.targets.size(); ++i)
        out.push_back({s.targets[i].mean, std::nullopt,
                       labeled && i < s.target_ids.size() ? std::optional<std::uint64_t>(s.target_ids[i]) : std::nullopt});
      break;
    case StateShape::Tracks:
      for (const auto& t : s.tracks)
        if (t.existence >= confirm_threshold)
          out.push_back({t.density.mean, t.existence, labeled ? std::optional<std::uint64_t>(t.id) : std::nullopt});
      break;
    case StateShape::Intensity: {
      std::size_t n = 0;
      if (!s.cardinality.empty()) {
        n = static_cast<std::size_t>(std::max_element(s.cardinality.begin(), s.cardinality.end()) - s.cardinality.begin());
      } else {
        n = static_cast<std::size_t>(std::floor(s.intensity.mass()));
      }
      top_components(s.intensity, n);
      break;
    }
    case StateShape::Groups:
      for (const auto& g : s.groups) top_components(g, static_cast<std::size_t>(std::floor(g.mass())));
      break;
  }
  return out;
}

PairStepResult unresolved_pair_step(const GaussianDensity& first, const GaussianDensity& second,
                                    const ResolutionModel& rm, const MeasurementModel& mm,
                                    const PoissonClutter& clutter, std::span<const Vec> ys, const DiffOptions& opts) {
  FilterParams p;
  p.kind = FilterKind::ResJPDA;
  p.mm = mm;
  p.clutter = clutter;
  p.targets = {GaussianMixture(first), GaussianMixture(second)};
  p.resolution = rm;
  const PgflExpr e = build_filter(p);
  std::map<TargetLabel, std::vector<StateProbe>> probes{{target_label(0), moment_probes(first.dim())},
                                                        {target_label(1), moment_probes(second.dim())}};
  PairStepResult r;
  const auto vals = posterior_functionals(e, ys, probes, opts, &r.stats.likelihood);
  const std::size_t n1 = probes.at(target_label(0)).size();
  const auto c1 = close_moments(std::span<const double>(vals).subspan(0, n1), first.dim());
  const auto c2 = close_moments(std::span<const double>(vals).subspan(n1), second.dim());
  r.first = c1.second;
  r.second = c2.second;
  r.stats.expected_count = c1.first + c2.first;
  r.stats.cardinality = posterior_cardinality(e, ys, "", 2, opts);
  r.stats.measurements_used = ys.size();
  r.origin = target_origin_distribution(e, ys, opts);
  return r;
}

}  // namespace pointillist
