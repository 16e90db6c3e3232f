#include "pointillist/random.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace pointillist {

namespace {

constexpr std::uint64_t kM0 = 0xD2E7470EE14C6C93ULL;
constexpr std::uint64_t kM1 = 0xCA5A826395121157ULL;
constexpr std::uint64_t kW0 = 0x9E3779B97F4A7C15ULL;
constexpr std::uint64_t kW1 = 0xBB67AE8584CAA73BULL;

inline void mulhilo(std::uint64_t a, std::uint64_t b, std::uint64_t& hi, std::uint64_t& lo) {
  const unsigned __int128 p = static_cast<unsigned __int128>(a) * b;
  hi = static_cast<std::uint64_t>(p >> 64);
  lo = static_cast<std::uint64_t>(p);
}

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

std::array<std::uint64_t, 4> philox4x64(std::array<std::uint64_t, 4> c, std::array<std::uint64_t, 2> k) {
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      k[0] += kW0;
      k[1] += kW1;
    }
    std::uint64_t hi0, lo0, hi1, lo1;
    mulhilo(kM0, c[0], hi0, lo0);
    mulhilo(kM1, c[2], hi1, lo1);
    c = {hi1 ^ c[1] ^ k[0], lo1, hi0 ^ c[3] ^ k[1], lo0};
  }
  return c;
}

RandomStream::RandomStream(std::uint64_t seed, std::uint64_t stream) : key_{seed, stream} {}

std::uint64_t RandomStream::next_u64() {
  if (pos_ == 4) {
    buf_ = philox4x64({block_, 0, 0, 0}, key_);
    ++block_;
    pos_ = 0;
  }
  return buf_[static_cast<std::size_t>(pos_++)];
}

double RandomStream::uniform() {
  // (k + 0.5) / 2^53 lies strictly inside (0, 1).
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

double RandomStream::normal() {
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

Vec RandomStream::normal_vec(Eigen::Index n) {
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
  return v;
}

Vec RandomStream::gaussian(const GaussianDensity& d) { return d.mean + psd_sqrt(d.cov) * normal_vec(d.dim()); }

std::uint64_t RandomStream::poisson(double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw std::invalid_argument("poisson: rate must be non-negative");
  if (lambda == 0.0) return 0;
  if (lambda > 500.0) {
    // Split into equal parts so the inversion below never underflows.
    const auto parts = static_cast<std::uint64_t>(std::ceil(lambda / 500.0));
    std::uint64_t total = 0;
    for (std::uint64_t i = 0; i < parts; ++i) total += poisson(lambda / static_cast<double>(parts));
    return total;
  }
  const double u = uniform();
  std::uint64_t k = 0;
  double p = std::exp(-lambda);
  double cdf = p;
  while (u > cdf && p > 0.0) {
    ++k;
    p *= lambda / static_cast<double>(k);
    cdf += p;
  }
  return k;
}

bool RandomStream::bernoulli(double p) { return uniform() < p; }

RandomStream RandomStream::child(std::uint64_t id) const {
  return RandomStream(splitmix(key_[0] ^ splitmix(key_[1])), splitmix(id ^ 0xA0761D6478BD642FULL));
}

}  // namespace pointillist
