#pragma once

#include "pointillist/multidual.hpp"

#include <boost/multiprecision/complex128.hpp>
#include <boost/multiprecision/float128.hpp>

#include <cmath>
#include <complex>
#include <span>
#include <stdexcept>
#include <type_traits>

namespace pointillist {

/// Binary128 real and complex types used by the finite-difference stencil.
using quad = boost::multiprecision::float128;
using cquad = boost::multiprecision::complex128;

template <class T>
inline constexpr bool is_multidual_v = std::is_same_v<T, MultiDual>;

/// Embeds a complex double into scalar kind T. Real kinds reject a non-zero
/// imaginary part.
template <class T>
T scalar_from(cplx v) {
  if constexpr (std::is_same_v<T, cplx>) {
    return v;
  } else if constexpr (std::is_same_v<T, MultiDual>) {
    return MultiDual(v);
  } else if constexpr (std::is_same_v<T, double> || std::is_same_v<T, quad>) {
    if (v.imag() != 0.0) throw std::invalid_argument("real scalar kind cannot carry a complex value");
    return T(v.real());
  } else if constexpr (std::is_same_v<T, cquad>) {
    return cquad(quad(v.real()), quad(v.imag()));
  } else {
    static_assert(sizeof(T) == 0, "unsupported scalar kind");
  }
}

template <class T>
T scalar_from(double v) {
  return scalar_from<T>(cplx(v));
}

/// Value at the base point (constant part for MultiDual), as complex double.
template <class T>
cplx to_cplx(const T& v) {
  if constexpr (std::is_same_v<T, cplx>) {
    return v;
  } else if constexpr (std::is_same_v<T, MultiDual>) {
    return v.constant();
  } else if constexpr (std::is_same_v<T, double> || std::is_same_v<T, quad>) {
    return cplx(static_cast<double>(v));
  } else {
    return cplx(static_cast<double>(v.real()), static_cast<double>(v.imag()));
  }
}

template <class T>
bool scalar_is_zero(const T& v) {
  if constexpr (std::is_same_v<T, MultiDual>) {
    return v.is_zero();
  } else if constexpr (std::is_same_v<T, cplx>) {
    return v == cplx(0.0);
  } else if constexpr (std::is_same_v<T, double> || std::is_same_v<T, quad>) {
    return v == 0;
  } else {
    return v.real() == 0 && v.imag() == 0;
  }
}

template <class T>
T scalar_exp(const T& v) {
  using std::exp;
  using boost::multiprecision::exp;
  return exp(v);
}

/// Multiply a scalar of kind T by a double coefficient.
template <class T>
T scale(const T& v, double s) {
  if constexpr (std::is_same_v<T, quad>) {
    return v * quad(s);
  } else if constexpr (std::is_same_v<T, cquad>) {
    return v * cquad(quad(s), quad(0));
  } else {
    return v * s;
  }
}

/// Evaluates sum_k c_k z^k. MultiDual arguments use the Taylor form around the
/// constant part, which needs at most nvars products.
template <class T>
T poly_eval(std::span<const double> c, const T& z) {
  if constexpr (std::is_same_v<T, MultiDual>) {
    const cplx z0 = z.constant();
    const int n = z.nvars();
    std::vector<cplx> derivs(static_cast<std::size_t>(n) + 1, cplx(0.0));
    for (int r = 0; r <= n && r < static_cast<int>(c.size()); ++r) {
      // Horner for sum_{k>=r} c_k k!/(k-r)! z0^(k-r).
      cplx acc(0.0);
      for (int k = static_cast<int>(c.size()) - 1; k >= r; --k) {
        double falling = 1.0;
        for (int j = 0; j < r; ++j) falling *= (k - j);
        acc = acc * z0 + c[static_cast<std::size_t>(k)] * falling;
      }
      derivs[static_cast<std::size_t>(r)] = acc;
    }
    return taylor_apply(z, derivs);
  } else {
    T acc = scalar_from<T>(0.0);
    for (std::size_t k = c.size(); k-- > 0;) acc = acc * z + scalar_from<T>(c[k]);
    return acc;
  }
}

}  // namespace pointillist
