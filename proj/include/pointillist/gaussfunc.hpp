#pragma once

#include "pointillist/gaussmath.hpp"

#include <span>
#include <vector>

namespace pointillist {

/// scale * N(b; A z, C), a linear-Gaussian factor in the stacked state z.
struct LinearGaussianFactor {
  Vec b;
  Mat A;
  Mat C;
  double scale = 1.0;
};

/// A pinned block of z: z[offset .. offset + value.size()) = value.
struct PinnedBlock {
  Eigen::Index offset = 0;
  Vec value;
};

/// Result of integrating N(z; m, P) * prod_k factor_k over the free part of
/// z. `weight` is the integral; `mean`/`cov` describe the normalized
/// posterior over the free coordinates, listed in `free_index` order.
struct GaussianFunctional {
  double weight = 0.0;
  Vec mean;
  Mat cov;
  std::vector<Eigen::Index> free_index;

  /// Position of full coordinate `i` within the free coordinates.
  Eigen::Index local(Eigen::Index i) const;
  /// E[z_i] under the posterior.
  double first_moment(Eigen::Index i) const { return mean[local(i)]; }
  /// E[z_i z_j] under the posterior.
  double second_moment(Eigen::Index i, Eigen::Index j) const;
};

/// Pinned blocks contribute the prior marginal density at their value and
/// condition the remaining coordinates; the factors are then absorbed by a
/// stacked Kalman update.
GaussianFunctional gaussian_functional(const GaussianDensity& prior, std::span<const LinearGaussianFactor> factors,
                                       std::span<const PinnedBlock> pinned = {});

}  // namespace pointillist
