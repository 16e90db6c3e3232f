#pragma once

#include "pointillist/pgfl.hpp"

#include <functional>
#include <map>
#include <span>
#include <string_view>
#include <vector>

namespace pointillist {

enum class DiffMethod { AD, Cauchy, FD };

std::string_view to_string(DiffMethod m);
/// Accepts "ad", "cauchy", "fd".
DiffMethod parse_diff_method(std::string_view name);

/// Contour grids larger than this are rejected.
inline constexpr double kCauchyNodeBudget = 1e7;
/// Fewest contour nodes per variable accepted when fitting the budget.
inline constexpr int kCauchyMinNodes = 8;
/// Denominators below this are treated as zero.
inline constexpr double kZeroDenominator = 1e-300;

struct DiffOptions {
  DiffMethod method = DiffMethod::AD;
  /// Contour radius, relative to each variable's natural scale.
  double radius = 0.5;
  /// Contour nodes per variable.
  int nodes = 32;
  /// When the grid exceeds the budget, lower the per-variable node count to
  /// fit instead of failing.
  bool fit_node_budget = true;
  /// Finite-difference step, relative to each variable's natural scale.
  double step = 1e-3;
  /// Worker threads for contour grids; 0 uses POINTILLIST_THREADS.
  int threads = 0;
};

/// Nodes per variable actually used for a k-variable contour grid.
int cauchy_nodes(int k, const DiffOptions& opts);

// ---------------------------------------------------------------------------
// Generic drivers on analytic functions of k complex variables

using SecularFunction = std::function<cplx(std::span<const cplx>)>;
using QuadSecularFunction = std::function<cquad(std::span<const cquad>)>;

/// Coefficient of a_0 a_1 ... a_{k-1} by the tensor trapezoidal rule on the
/// circles |a_v| = radii[v] with `nodes` points each.
cplx cauchy_mixed_derivative(const SecularFunction& f, std::span<const double> radii, int nodes, int threads = 0);

/// Central-difference tensor stencil for the mixed first-order partial at 0.
cquad fd_mixed_derivative(const QuadSecularFunction& f, std::span<const double> steps);

// ---------------------------------------------------------------------------
// Kernel drivers

/// Exact mixed partial in all kernel variables at 0.
cplx kernel_derivative_ad(const SecularKernel& k);
cplx kernel_derivative_cauchy(const SecularKernel& k, const DiffOptions& opts);
cplx kernel_derivative_fd(const SecularKernel& k, const DiffOptions& opts);
cplx kernel_derivative(const SecularKernel& k, const DiffOptions& opts);

/// Per-variable scale min_q |J / c_q|^(1/q), q = 1..4, over the Taylor
/// coefficients c_q of each variable; sizes contours and steps.
std::vector<double> kernel_scales(const SecularKernel& k);
/// kernel_scales, shrunk so the leading central-difference truncation term
/// stays below step^2 / 4 relative to the mixed derivative.
std::vector<double> fd_scales(const SecularKernel& k);

// ---------------------------------------------------------------------------
// Expression-level derivatives (base_g = 0, base_h = 1)

using StatePoints = std::map<TargetLabel, std::vector<Vec>>;

cplx mixed_derivative_ad(const PgflExpr& e, std::span<const Vec> measurements, const StatePoints& states = {});
cplx mixed_derivative_cauchy(const PgflExpr& e, std::span<const Vec> measurements, const StatePoints& states,
                             double radius = 0.5, int nodes = 32);
cplx mixed_derivative_fd(const PgflExpr& e, std::span<const Vec> measurements, const StatePoints& states,
                         double step = 1e-3);
cplx mixed_derivative(const PgflExpr& e, std::span<const Vec> measurements, const StatePoints& states,
                      const DiffOptions& opts);

// ---------------------------------------------------------------------------
// Posterior statistics

/// Intensity of the posterior process on `label` at x.
double posterior_intensity(const PgflExpr& e, std::span<const Vec> measurements, const Vec& x,
                           const TargetLabel& label, const DiffOptions& opts = {});

/// Intensities at several states, sharing the denominator.
std::vector<double> posterior_intensities(const PgflExpr& e, std::span<const Vec> measurements,
                                          std::span<const Vec> xs, const TargetLabel& label,
                                          const DiffOptions& opts = {});

/// Posterior cardinality p(0..n_max) of `label`; an empty label counts all
/// labels.
std::vector<double> posterior_cardinality(const PgflExpr& e, std::span<const Vec> measurements,
                                          const TargetLabel& label, int n_max, const DiffOptions& opts = {});

/// k-th factorial moment density of `label` at x_1..x_k.
double factorial_moment(const PgflExpr& e, std::span<const Vec> measurements, std::span<const Vec> xs,
                        const TargetLabel& label, const DiffOptions& opts = {});

/// Posterior value of each probe functional (mass, moments, restricted
/// moments, deltas), in label order then list order.
/// `denominator`, when given, receives the mixed measurement derivative.
std::vector<double> posterior_functionals(const PgflExpr& e, std::span<const Vec> measurements,
                                          const std::map<TargetLabel, std::vector<StateProbe>>& probes,
                                          const DiffOptions& opts = {}, double* denominator = nullptr);

/// Posterior distribution of the number of target-originated measurements,
/// indexed 0..m.
std::vector<double> target_origin_distribution(const PgflExpr& e, std::span<const Vec> measurements,
                                               const DiffOptions& opts = {});

/// Tolerance used to accept a computed cardinality vector.
inline constexpr double kCardinalityTolerance = 1e-9;

}  // namespace pointillist
