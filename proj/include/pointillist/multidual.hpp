#pragma once

#include <complex>
#include <cstdint>
#include <span>
#include <vector>

namespace pointillist {

using cplx = std::complex<double>;

/// Truncated polynomial in formal variables e_0..e_{n-1} with e_i^2 = 0.
///
/// Coefficients are stored densely, indexed by the bitmask of the monomial.
/// Values with different variable counts mix freely: a value over fewer
/// variables is treated as not depending on the higher ones.
class MultiDual {
 public:
  static constexpr int kMaxVars = 24;

  MultiDual() : c_(1, cplx(0.0)) {}
  MultiDual(cplx v) : c_(1, v) {}  // NOLINT(google-explicit-constructor)
  MultiDual(double v) : c_(1, cplx(v)) {}  // NOLINT(google-explicit-constructor)

  /// value + e_index, over nvars variables.
  static MultiDual variable(int index, int nvars, cplx value = cplx(0.0));

  int nvars() const { return nvars_; }
  std::size_t size() const { return c_.size(); }

  cplx constant() const { return c_[0]; }
  /// Coefficient of the monomial given by mask (zero if out of range).
  cplx coeff(std::uint32_t mask) const { return mask < c_.size() ? c_[mask] : cplx(0.0); }
  cplx& coeff_ref(std::uint32_t mask) { return c_[mask]; }
  /// Coefficient of e_0 e_1 ... e_{n-1}; the mixed first-order partial at the base point.
  cplx top(int n) const { return coeff(n >= 32 ? 0xffffffffu : ((1u << n) - 1u)); }

  bool is_zero() const;

  MultiDual& operator+=(const MultiDual& o);
  MultiDual& operator-=(const MultiDual& o);
  MultiDual& operator*=(const MultiDual& o);
  MultiDual& operator*=(cplx s);
  MultiDual& operator*=(double s) { return *this *= cplx(s); }
  MultiDual& operator+=(cplx s) {
    c_[0] += s;
    return *this;
  }
  MultiDual& operator+=(double s) { return *this += cplx(s); }

  friend MultiDual operator+(MultiDual a, const MultiDual& b) { return a += b; }
  friend MultiDual operator-(MultiDual a, const MultiDual& b) { return a -= b; }
  friend MultiDual operator*(const MultiDual& a, const MultiDual& b);
  friend MultiDual operator*(MultiDual a, cplx s) { return a *= s; }
  friend MultiDual operator*(cplx s, MultiDual a) { return a *= s; }
  friend MultiDual operator*(MultiDual a, double s) { return a *= s; }
  friend MultiDual operator*(double s, MultiDual a) { return a *= s; }
  friend MultiDual operator+(MultiDual a, double s) { return a += s; }
  friend MultiDual operator+(double s, MultiDual a) { return a += s; }
  friend MultiDual operator-(MultiDual a) { return a *= -1.0; }

  /// f(c + n) = sum_r f^(r)(c) n^r / r!, where c is the constant part.
  /// derivs[r] must hold f^(r)(c) for r up to nvars (missing entries are zero).
  friend MultiDual taylor_apply(const MultiDual& x, std::span<const cplx> derivs);
  friend MultiDual exp(const MultiDual& x);

 private:
  void widen(int n);

  int nvars_ = 0;
  std::vector<cplx> c_;
};

}  // namespace pointillist
