#pragma once

#include "pointillist/gaussmath.hpp"

#include <array>
#include <cstdint>

namespace pointillist {

/// Philox4x64-10 block function (Salmon et al., Random123).
std::array<std::uint64_t, 4> philox4x64(std::array<std::uint64_t, 4> counter, std::array<std::uint64_t, 2> key);

/// Deterministic random stream backed by Philox4x64-10.
///
/// The key is (seed, stream id); the counter walks the block index. Streams
/// with distinct ids never overlap, and the sequence depends only on
/// (seed, stream, draw order).
class RandomStream {
 public:
  RandomStream(std::uint64_t seed, std::uint64_t stream);

  std::uint64_t next_u64();
  /// Uniform on the open interval (0, 1), 53-bit resolution.
  double uniform();
  /// Standard normal via Box-Muller (one output per two uniforms).
  double normal();
  Vec normal_vec(Eigen::Index n);
  /// Draw from N(mean, cov) for a PSD covariance.
  Vec gaussian(const GaussianDensity& d);
  std::uint64_t poisson(double lambda);
  bool bernoulli(double p);

  /// Independent child stream derived from this stream's key.
  RandomStream child(std::uint64_t id) const;

 private:
  std::array<std::uint64_t, 2> key_;
  std::uint64_t block_ = 0;
  std::array<std::uint64_t, 4> buf_{};
  int pos_ = 4;
};

}  // namespace pointillist
