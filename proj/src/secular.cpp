#include "pointillist/secular.hpp"

#include "pointillist/parallel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <numeric>

namespace pointillist {

std::string_view to_string(DiffMethod m) {
  switch (m) {
    case DiffMethod::AD:
      return "ad";
    case DiffMethod::Cauchy:
      return "cauchy";
    case DiffMethod::FD:
      return "fd";
  }
  return "ad";
}

DiffMethod parse_diff_method(std::string_view name) {
  if (name == "ad") return DiffMethod::AD;
  if (name == "cauchy") return DiffMethod::Cauchy;
  if (name == "fd") return DiffMethod::FD;
  throw std::invalid_argument("method: unknown differentiation method '" + std::string(name) + "'");
}

int cauchy_nodes(int k, const DiffOptions& opts) {
  if (opts.nodes < 1) throw std::invalid_argument("method.nodes must be positive");
  if (k == 0) return opts.nodes;
  const double grid = std::pow(static_cast<double>(opts.nodes), k);
  if (grid <= kCauchyNodeBudget) return opts.nodes;
  if (!opts.fit_node_budget) throw std::invalid_argument("contour node budget exceeded");
  int n = static_cast<int>(std::floor(std::pow(kCauchyNodeBudget, 1.0 / k) + 1e-9));
  while (std::pow(static_cast<double>(n), k) > kCauchyNodeBudget) --n;
  if (n < kCauchyMinNodes) throw std::invalid_argument("contour node budget exceeded");
  return n;
}

cplx cauchy_mixed_derivative(const SecularFunction& f, std::span<const double> radii, int nodes, int threads) {
  const std::size_t k = radii.size();
  if (nodes < 1) throw std::invalid_argument("contour nodes must be positive");
  for (double r : radii)
    if (!(r > 0.0)) throw std::invalid_argument("contour radius must be positive");
  if (std::pow(static_cast<double>(nodes), static_cast<double>(k)) > kCauchyNodeBudget)
    throw std::invalid_argument("contour node budget exceeded");
  if (k == 0) return f({});

  const auto n = static_cast<std::size_t>(nodes);
  std::vector<std::vector<cplx>> point(k), weight(k);
  for (std::size_t v = 0; v < k; ++v) {
    for (std::size_t j = 0; j < n; ++j) {
      const double th = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(nodes);
      const cplx w = std::polar(1.0, th);
      point[v].push_back(radii[v] * w);
      weight[v].push_back(std::conj(w) / radii[v]);
    }
  }
  std::size_t total = 1;
  for (std::size_t v = 0; v < k; ++v) total *= n;

  // Fixed chunking keeps the summation order independent of the worker count.
  const std::size_t chunks = std::min<std::size_t>(total, 256);
  std::vector<cplx> partial(chunks, cplx(0.0));
  parallel_for(chunks, worker_count(threads), [&](std::size_t c) {
    const std::size_t begin = total * c / chunks, end = total * (c + 1) / chunks;
    std::vector<std::size_t> idx(k);
    std::size_t rem = begin;
    for (std::size_t v = 0; v < k; ++v) {
      idx[v] = rem % n;
      rem /= n;
    }
    std::vector<cplx> a(k);
    cplx sum = 0.0;
    for (std::size_t flat = begin; flat < end; ++flat) {
      cplx w = 1.0;
      for (std::size_t v = 0; v < k; ++v) {
        a[v] = point[v][idx[v]];
        w *= weight[v][idx[v]];
      }
      sum += f(a) * w;
      for (std::size_t v = 0; v < k && ++idx[v] == n; ++v) idx[v] = 0;
    }
    partial[c] = sum;
  });
  cplx sum = 0.0;
  for (const auto& p : partial) sum += p;
  return sum / static_cast<double>(total);
}

cquad fd_mixed_derivative(const QuadSecularFunction& f, std::span<const double> steps) {
  const std::size_t k = steps.size();
  for (double h : steps)
    if (!(h > 0.0)) throw std::invalid_argument("finite-difference step must be positive");
  if (k >= 31) throw std::invalid_argument("finite-difference variable count too large");
  std::vector<cquad> a(k);
  cquad sum(0);
  for (std::uint32_t s = 0; s < (1u << k); ++s) {
    int sign = 1;
    for (std::size_t v = 0; v < k; ++v) {
      const bool neg = (s >> v) & 1u;
      a[v] = cquad(neg ? -quad(steps[v]) : quad(steps[v]), 0);
      if (neg) sign = -sign;
    }
    const cquad val = f(a);
    sum = sign > 0 ? sum + val : sum - val;
  }
  quad denom = 1;
  for (double h : steps) denom *= 2 * quad(h);
  return sum / cquad(denom, 0);
}

cplx kernel_derivative_ad(const SecularKernel& k) { return evaluate_kernel_ad(k).top(k.num_vars); }

std::vector<double> kernel_scales(const SecularKernel& k) {
  constexpr int kScaleOrder = 4;
  const auto n = static_cast<std::size_t>(k.num_vars);
  std::vector<double> scales(n, 1.0);
  std::vector<MultiDual> vars(n);
  for (std::size_t v = 0; v < n; ++v) {
    for (double base : {0.0, 1.0}) {
      for (std::size_t u = 0; u < n; ++u) vars[u] = MultiDual(base);
      // Four nilpotent copies: the coefficient of the first q copies is the
      // q-th derivative.
      MultiDual a(base);
      for (int q = 0; q < kScaleOrder; ++q) a += MultiDual::variable(q, kScaleOrder);
      vars[v] = a;
      const MultiDual j = evaluate_kernel<MultiDual>(k, vars);
      const double j0 = std::abs(j.constant()), d = std::abs(j.coeff(1));
      if (j0 > kZeroDenominator && d > 0.0 && std::isfinite(d / j0)) {
        // No Taylor term may exceed the value at the base on the circle.
        double s = j0 / d, fact = 1.0;
        for (int q = 2; q <= kScaleOrder; ++q) {
          fact *= q;
          const double cq = std::abs(j.coeff((1u << q) - 1u)) / fact;
          if (cq > 0.0 && std::isfinite(cq)) s = std::min(s, std::pow(j0 / cq, 1.0 / q));
        }
        scales[v] = s;
        break;
      }
    }
  }
  // Joint pass: cross terms can dominate on the polytorus even when each
  // variable alone is tame. Shrink so that |c_S| prod_S r_v <= |c_0| for
  // every square-free coefficient, smallest subsets first.
  if (n < 2 || n > static_cast<std::size_t>(MultiDual::kMaxVars)) return scales;
  const MultiDual j = evaluate_kernel_ad(k);
  const double c0 = std::abs(j.constant());
  if (!(c0 > kZeroDenominator) || !std::isfinite(c0)) return scales;
  std::vector<std::uint32_t> masks;
  for (std::uint32_t m = 1; m < (1u << n); ++m)
    if (std::popcount(m) >= 2) masks.push_back(m);
  std::stable_sort(masks.begin(), masks.end(),
                   [](std::uint32_t a, std::uint32_t b) { return std::popcount(a) < std::popcount(b); });
  for (std::uint32_t m : masks) {
    const double c = std::abs(j.coeff(m));
    if (!(c > 0.0) || !std::isfinite(c)) continue;
    double prod = c;
    for (std::size_t v = 0; v < n; ++v)
      if ((m >> v) & 1u) prod *= scales[v];
    if (prod <= c0) continue;
    const double shrink = std::pow(c0 / prod, 1.0 / std::popcount(m));
    for (std::size_t v = 0; v < n; ++v)
      if ((m >> v) & 1u) scales[v] *= shrink;
  }
  return scales;
}

std::vector<double> fd_scales(const SecularKernel& k) {
  std::vector<double> scales = kernel_scales(k);
  const int n = k.num_vars;
  if (n == 0 || n + 2 > MultiDual::kMaxVars) return scales;
  const double target = std::abs(kernel_derivative_ad(k));
  if (!(target > 0.0) || !std::isfinite(target)) return scales;
  // The central stencil's leading error in variable v is h_v^2 c3_v, where
  // c3_v is the coefficient of a_v^3 times the other variables. Three
  // nilpotent copies of a_v carry it as 3! c3_v on the top coefficient.
  std::vector<MultiDual> vars(static_cast<std::size_t>(n));
  for (int v = 0; v < n; ++v) {
    int next = 0;
    for (int u = 0; u < n; ++u) {
      if (u == v) {
        vars[static_cast<std::size_t>(u)] = MultiDual::variable(next, n + 2) + MultiDual::variable(next + 1, n + 2) +
                                            MultiDual::variable(next + 2, n + 2);
        next += 3;
      } else {
        vars[static_cast<std::size_t>(u)] = MultiDual::variable(next++, n + 2);
      }
    }
    const double c3 = std::abs(evaluate_kernel<MultiDual>(k, vars).top(n + 2)) / 6.0;
    // Each variable keeps its share of the relative error below step^2 / 4.
    if (c3 > 0.0 && std::isfinite(c3))
      scales[static_cast<std::size_t>(v)] =
          std::min(scales[static_cast<std::size_t>(v)], std::sqrt(target / (4.0 * n * c3)));
  }
  return scales;
}

cplx kernel_derivative_cauchy(const SecularKernel& k, const DiffOptions& opts) {
  if (!(opts.radius > 0.0)) throw std::invalid_argument("method.radius must be positive");
  const int nodes = cauchy_nodes(k.num_vars, opts);
  std::vector<double> radii = kernel_scales(k);
  for (double& r : radii) r *= opts.radius;
  return cauchy_mixed_derivative([&](std::span<const cplx> a) { return evaluate_kernel<cplx>(k, a); }, radii, nodes,
                                 opts.threads);
}

cplx kernel_derivative_fd(const SecularKernel& k, const DiffOptions& opts) {
  if (!(opts.step > 0.0 && opts.step <= 0.5)) throw std::invalid_argument("method.step must lie in (0, 0.5]");
  std::vector<double> steps = fd_scales(k);
  for (double& h : steps) h *= opts.step;
  cquad d;
  if (k.complex_coefficients) {
    d = fd_mixed_derivative([&](std::span<const cquad> a) { return evaluate_kernel<cquad>(k, a); }, steps);
  } else {
    d = fd_mixed_derivative(
        [&](std::span<const cquad> a) {
          std::vector<quad> r(a.size());
          for (std::size_t v = 0; v < a.size(); ++v) r[v] = a[v].real();
          return cquad(evaluate_kernel<quad>(k, r), 0);
        },
        steps);
  }
  return to_cplx(d);
}

cplx kernel_derivative(const SecularKernel& k, const DiffOptions& opts) {
  switch (opts.method) {
    case DiffMethod::AD:
      return kernel_derivative_ad(k);
    case DiffMethod::Cauchy:
      return kernel_derivative_cauchy(k, opts);
    case DiffMethod::FD:
      return kernel_derivative_fd(k, opts);
  }
  return kernel_derivative_ad(k);
}

namespace {

std::shared_ptr<const CompiledSecular> compile_for(const PgflExpr& e, std::span<const Vec> ys,
                                                   std::map<TargetLabel, std::vector<StateProbe>> probes,
                                                   DiffMethod method) {
  SecularPoints pts;
  pts.base_g = 0;
  pts.measurements.assign(ys.begin(), ys.end());
  pts.probes = std::move(probes);
  CompileOptions opts;
  // A monomial with a repeated variable integrates to zero on the contour
  // unless its power reaches nodes + 1, far beyond the series truncation;
  // only finite differences see those terms.
  opts.square_free = method != DiffMethod::FD;
  return std::make_shared<const CompiledSecular>(compile_secular(e, pts, opts));
}

std::map<TargetLabel, std::vector<StateProbe>> delta_probes(const StatePoints& states) {
  std::map<TargetLabel, std::vector<StateProbe>> out;
  for (const auto& [label, xs] : states)
    for (const auto& x : xs) out[label].push_back(StateProbe::delta(x));
  return out;
}

std::vector<int> range(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

cplx derivative_at(const std::shared_ptr<const CompiledSecular>& c, std::span<const int> active,
                   const BaseValues& base, const DiffOptions& opts) {
  return kernel_derivative(specialize(c, active, base), opts);
}

cplx require_denominator(cplx d) {
  if (!(std::abs(d) >= kZeroDenominator))
    throw NumericalError("zero denominator: the measurement set has zero probability under the model");
  return d;
}

void require_label(const CompiledSecular& c, const TargetLabel& label) {
  if (c.label_index(label) < 0) throw std::invalid_argument("unknown target label '" + label + "'");
}

/// Taylor coefficients 0..n-1 of a polynomial sampled on the unit circle.
std::vector<cplx> circle_coefficients(std::span<const cplx> samples) {
  const std::size_t n = samples.size();
  std::vector<cplx> out(n, cplx(0.0));
  for (std::size_t r = 0; r < n; ++r) {
    cplx s = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double th = -2.0 * std::numbers::pi * static_cast<double>((r * k) % n) / static_cast<double>(n);
      s += samples[k] * std::polar(1.0, th);
    }
    out[r] = s / static_cast<double>(n);
  }
  return out;
}

std::vector<double> probability_vector(std::span<const cplx> coeffs, std::size_t keep, const char* what) {
  std::vector<double> p(keep, 0.0);
  double sum = 0.0;
  for (std::size_t n = 0; n < coeffs.size(); ++n) {
    double v = coeffs[n].real();
    if (std::abs(coeffs[n].imag()) > kCardinalityTolerance)
      throw NumericalError(std::string(what) + ": complex coefficient in a probability vector");
    if (v < 0.0) {
      if (v < -kCardinalityTolerance) throw NumericalError(std::string(what) + ": negative probability");
      v = 0.0;
    }
    if (n < keep) {
      p[n] = v;
      sum += v;
    }
  }
  if (std::abs(sum - 1.0) > kCardinalityTolerance)
    throw NumericalError(std::string(what) + ": probabilities do not sum to one (support exceeds the range)");
  return p;
}

}  // namespace

cplx mixed_derivative(const PgflExpr& e, std::span<const Vec> measurements, const StatePoints& states,
                      const DiffOptions& opts) {
  const auto c = compile_for(e, measurements, delta_probes(states), opts.method);
  return derivative_at(c, range(c->num_vars), {}, opts);
}

cplx mixed_derivative_ad(const PgflExpr& e, std::span<const Vec> measurements, const StatePoints& states) {
  return mixed_derivative(e, measurements, states, DiffOptions{});
}

cplx mixed_derivative_cauchy(const PgflExpr& e, std::span<const Vec> measurements, const StatePoints& states,
                             double radius, int nodes) {
  DiffOptions o;
  o.method = DiffMethod::Cauchy;
  o.radius = radius;
  o.nodes = nodes;
  o.fit_node_budget = false;
  return mixed_derivative(e, measurements, states, o);
}

cplx mixed_derivative_fd(const PgflExpr& e, std::span<const Vec> measurements, const StatePoints& states,
                         double step) {
  DiffOptions o;
  o.method = DiffMethod::FD;
  o.step = step;
  return mixed_derivative(e, measurements, states, o);
}

std::vector<double> posterior_functionals(const PgflExpr& e, std::span<const Vec> measurements,
                                          const std::map<TargetLabel, std::vector<StateProbe>>& probes,
                                          const DiffOptions& opts, double* denominator) {
  const auto c = compile_for(e, measurements, probes, opts.method);
  const int m = c->num_measurements;
  if (opts.method == DiffMethod::AD) {
    const ProbeGradient g = probe_gradient_ad(c);
    const cplx den = require_denominator(g.value);
    if (denominator) *denominator = den.real();
    std::vector<double> out;
    for (const auto& v : g.probes) out.push_back((v / den).real());
    return out;
  }
  std::vector<int> active = range(m);
  const cplx den = require_denominator(derivative_at(c, active, {}, opts));
  if (denominator) *denominator = den.real();
  std::vector<double> out;
  active.push_back(0);
  for (int v = m; v < c->num_vars; ++v) {
    active.back() = v;
    out.push_back((derivative_at(c, active, {}, opts) / den).real());
  }
  return out;
}

std::vector<double> posterior_intensities(const PgflExpr& e, std::span<const Vec> measurements,
                                          std::span<const Vec> xs, const TargetLabel& label,
                                          const DiffOptions& opts) {
  std::map<TargetLabel, std::vector<StateProbe>> probes;
  auto& list = probes[label];
  for (const auto& x : xs) list.push_back(StateProbe::delta(x));
  return posterior_functionals(e, measurements, probes, opts);
}

double posterior_intensity(const PgflExpr& e, std::span<const Vec> measurements, const Vec& x,
                           const TargetLabel& label, const DiffOptions& opts) {
  return posterior_intensities(e, measurements, std::span<const Vec>(&x, 1), label, opts).front();
}

double factorial_moment(const PgflExpr& e, std::span<const Vec> measurements, std::span<const Vec> xs,
                        const TargetLabel& label, const DiffOptions& opts) {
  StatePoints states;
  states[label].assign(xs.begin(), xs.end());
  const auto c = compile_for(e, measurements, delta_probes(states), opts.method);
  const cplx den = require_denominator(derivative_at(c, range(c->num_measurements), {}, opts));
  return (derivative_at(c, range(c->num_vars), {}, opts) / den).real();
}

std::vector<double> posterior_cardinality(const PgflExpr& e, std::span<const Vec> measurements,
                                          const TargetLabel& label, int n_max, const DiffOptions& opts) {
  if (n_max < 0) throw std::invalid_argument("n_max must be non-negative");
  const auto c = compile_for(e, measurements, {}, opts.method);
  if (!label.empty()) require_label(*c, label);
  const std::vector<int> active = range(c->num_measurements);
  const std::size_t nz = 2 * (static_cast<std::size_t>(n_max) + 1);
  std::vector<cplx> samples(nz);
  for (std::size_t k = 0; k < nz; ++k) {
    const cplx z =
        k == 0 ? cplx(1.0) : std::polar(1.0, 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(nz));
    BaseValues base;
    if (label.empty()) {
      base.all_h = z;
    } else {
      base.base_h[label] = z;
    }
    samples[k] = derivative_at(c, active, base, opts);
  }
  const cplx den = require_denominator(samples[0]);
  for (auto& s : samples) s /= den;
  return probability_vector(circle_coefficients(samples), static_cast<std::size_t>(n_max) + 1, "posterior cardinality");
}

std::vector<double> target_origin_distribution(const PgflExpr& e, std::span<const Vec> measurements,
                                               const DiffOptions& opts) {
  const auto c = compile_for(e, measurements, {}, opts.method);
  const std::vector<int> active = range(c->num_measurements);
  const std::size_t nw = measurements.size() + 1;
  std::vector<cplx> samples(nw);
  for (std::size_t k = 0; k < nw; ++k) {
    BaseValues base;
    base.mark =
        k == 0 ? cplx(1.0) : std::polar(1.0, 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(nw));
    samples[k] = derivative_at(c, active, base, opts);
  }
  const cplx den = require_denominator(samples[0]);
  for (auto& s : samples) s /= den;
  return probability_vector(circle_coefficients(samples), nw, "target-origin distribution");
}

}  // namespace pointillist
