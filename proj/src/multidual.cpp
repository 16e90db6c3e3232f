#include "pointillist/multidual.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace pointillist {

MultiDual MultiDual::variable(int index, int nvars, cplx value) {
  if (nvars < 0 || nvars > kMaxVars) throw std::invalid_argument("MultiDual: variable budget exceeded");
  if (index < 0 || index >= nvars) throw std::invalid_argument("MultiDual: variable index out of range");
  MultiDual out;
  out.widen(nvars);
  out.c_[0] = value;
  out.c_[std::size_t{1} << index] = 1.0;
  return out;
}

void MultiDual::widen(int n) {
  if (n <= nvars_) return;
  if (n > kMaxVars) throw std::invalid_argument("MultiDual: variable budget exceeded");
  c_.resize(std::size_t{1} << n, cplx(0.0));
  nvars_ = n;
}

bool MultiDual::is_zero() const {
  return std::all_of(c_.begin(), c_.end(), [](const cplx& v) { return v == cplx(0.0); });
}

MultiDual& MultiDual::operator+=(const MultiDual& o) {
  widen(o.nvars_);
  for (std::size_t i = 0; i < o.c_.size(); ++i) c_[i] += o.c_[i];
  return *this;
}

MultiDual& MultiDual::operator-=(const MultiDual& o) {
  widen(o.nvars_);
  for (std::size_t i = 0; i < o.c_.size(); ++i) c_[i] -= o.c_[i];
  return *this;
}

MultiDual& MultiDual::operator*=(cplx s) {
  for (auto& v : c_) v *= s;
  return *this;
}

MultiDual& MultiDual::operator*=(const MultiDual& o) {
  *this = *this * o;
  return *this;
}

MultiDual operator*(const MultiDual& a, const MultiDual& b) {
  if (a.nvars_ == 0) return b * a.c_[0];
  if (b.nvars_ == 0) return a * b.c_[0];
  const int n = std::max(a.nvars_, b.nvars_);
  MultiDual out;
  out.widen(n);
  const std::uint32_t full = (n >= 32) ? 0xffffffffu : ((1u << n) - 1u);
  const std::uint32_t bmask = static_cast<std::uint32_t>(b.c_.size() - 1);
  for (std::uint32_t i = 0; i < a.c_.size(); ++i) {
    const cplx ai = a.c_[i];
    if (ai == cplx(0.0)) continue;
    const std::uint32_t comp = full & ~i & bmask;
    for (std::uint32_t j = comp;; j = (j - 1) & comp) {
      out.c_[i | j] += ai * b.c_[j];
      if (j == 0) break;
    }
  }
  return out;
}

MultiDual taylor_apply(const MultiDual& x, std::span<const cplx> derivs) {
  MultiDual nil = x;
  nil.c_[0] = 0.0;
  MultiDual out(derivs.empty() ? cplx(0.0) : derivs[0]);
  MultiDual power(1.0);
  double fact = 1.0;
  for (int r = 1; r <= x.nvars_ && r < static_cast<int>(derivs.size()); ++r) {
    power = power * nil;
    if (power.is_zero()) break;
    fact *= r;
    if (derivs[r] != cplx(0.0)) out += power * (derivs[r] / fact);
  }
  return out;
}

MultiDual exp(const MultiDual& x) {
  // d y / d e_v = y * d x / d e_v gives y[S] = sum_{T subset S, low(S) in T} x[T] y[S \ T].
  MultiDual y;
  y.widen(x.nvars_);
  y.c_[0] = std::exp(x.c_[0]);
  for (std::uint32_t s = 1; s < y.c_.size(); ++s) {
    const std::uint32_t low = s & (~s + 1u);
    const std::uint32_t rest = s ^ low;
    cplx acc = 0.0;
    for (std::uint32_t t = rest;; t = (t - 1) & rest) {
      const std::uint32_t with = t | low;
      if (x.c_[with] != cplx(0.0)) acc += x.c_[with] * y.c_[s ^ with];
      if (t == 0) break;
    }
    y.c_[s] = acc;
  }
  return y;
}

}  // namespace pointillist
