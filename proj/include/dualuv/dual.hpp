#pragma once

// Forward-mode dual numbers with a fixed number of tangent lanes.
//
// A Dual<W> carries a value and W partial derivatives. Gradients over an
// n-dimensional parameter vector are assembled in ceil(n / W) passes, each
// seeding W of the parameters (chunked forward mode).

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <ostream>
#include <span>
#include <vector>

namespace dualuv {

template <int W>
struct Dual {
  double v = 0.0;
  std::array<double, W> d{};

  constexpr Dual() = default;
  constexpr Dual(double value) : v(value) {}  // NOLINT: implicit lift of constants
  constexpr Dual(double value, int lane) : v(value) { d[lane] = 1.0; }

  Dual& operator+=(const Dual& o) {
    v += o.v;
    for (int i = 0; i < W; ++i) d[i] += o.d[i];
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    v -= o.v;
    for (int i = 0; i < W; ++i) d[i] -= o.d[i];
    return *this;
  }
  Dual& operator*=(const Dual& o) {
    for (int i = 0; i < W; ++i) d[i] = d[i] * o.v + v * o.d[i];
    v *= o.v;
    return *this;
  }
  Dual& operator/=(const Dual& o) {
    const double inv = 1.0 / o.v;
    const double q = v * inv;
    for (int i = 0; i < W; ++i) d[i] = (d[i] - q * o.d[i]) * inv;
    v = q;
    return *this;
  }
  Dual& operator+=(double s) { v += s; return *this; }
  Dual& operator-=(double s) { v -= s; return *this; }
  Dual& operator*=(double s) {
    v *= s;
    for (auto& x : d) x *= s;
    return *this;
  }
  Dual& operator/=(double s) { return *this *= (1.0 / s); }
};

template <int W> Dual<W> operator-(Dual<W> a) {
  a.v = -a.v;
  for (auto& x : a.d) x = -x;
  return a;
}
template <int W> Dual<W> operator+(const Dual<W>& a) { return a; }

template <int W> Dual<W> operator+(Dual<W> a, const Dual<W>& b) { return a += b; }
template <int W> Dual<W> operator-(Dual<W> a, const Dual<W>& b) { return a -= b; }
template <int W> Dual<W> operator*(Dual<W> a, const Dual<W>& b) { return a *= b; }
template <int W> Dual<W> operator/(Dual<W> a, const Dual<W>& b) { return a /= b; }

template <int W> Dual<W> operator+(Dual<W> a, double s) { return a += s; }
template <int W> Dual<W> operator+(double s, Dual<W> a) { return a += s; }
template <int W> Dual<W> operator-(Dual<W> a, double s) { return a -= s; }
template <int W> Dual<W> operator-(double s, const Dual<W>& a) { return -a + s; }
template <int W> Dual<W> operator*(Dual<W> a, double s) { return a *= s; }
template <int W> Dual<W> operator*(double s, Dual<W> a) { return a *= s; }
template <int W> Dual<W> operator/(Dual<W> a, double s) { return a /= s; }
template <int W> Dual<W> operator/(double s, const Dual<W>& a) {
  Dual<W> r(s / a.v);
  const double k = -s / (a.v * a.v);
  for (int i = 0; i < W; ++i) r.d[i] = k * a.d[i];
  return r;
}

// Comparisons look at the value only.
template <int W> bool operator<(const Dual<W>& a, const Dual<W>& b) { return a.v < b.v; }
template <int W> bool operator>(const Dual<W>& a, const Dual<W>& b) { return a.v > b.v; }
template <int W> bool operator<=(const Dual<W>& a, const Dual<W>& b) { return a.v <= b.v; }
template <int W> bool operator>=(const Dual<W>& a, const Dual<W>& b) { return a.v >= b.v; }
template <int W> bool operator==(const Dual<W>& a, const Dual<W>& b) { return a.v == b.v; }
template <int W> bool operator!=(const Dual<W>& a, const Dual<W>& b) { return a.v != b.v; }
template <int W> bool operator<(const Dual<W>& a, double b) { return a.v < b; }
template <int W> bool operator>(const Dual<W>& a, double b) { return a.v > b; }
template <int W> bool operator<=(const Dual<W>& a, double b) { return a.v <= b; }
template <int W> bool operator>=(const Dual<W>& a, double b) { return a.v >= b; }
template <int W> bool operator<(double a, const Dual<W>& b) { return a < b.v; }
template <int W> bool operator>(double a, const Dual<W>& b) { return a > b.v; }

namespace detail {
template <int W>
Dual<W> chain(const Dual<W>& a, double value, double slope) {
  Dual<W> r(value);
  for (int i = 0; i < W; ++i) r.d[i] = slope * a.d[i];
  return r;
}
}  // namespace detail

template <int W> Dual<W> sqrt(const Dual<W>& a) {
  const double s = std::sqrt(a.v);
  return detail::chain(a, s, 0.5 / s);
}
template <int W> Dual<W> sin(const Dual<W>& a) { return detail::chain(a, std::sin(a.v), std::cos(a.v)); }
template <int W> Dual<W> cos(const Dual<W>& a) { return detail::chain(a, std::cos(a.v), -std::sin(a.v)); }
template <int W> Dual<W> exp(const Dual<W>& a) {
  const double e = std::exp(a.v);
  return detail::chain(a, e, e);
}
template <int W> Dual<W> log(const Dual<W>& a) { return detail::chain(a, std::log(a.v), 1.0 / a.v); }
template <int W> Dual<W> abs(const Dual<W>& a) { return a.v < 0.0 ? -a : a; }
template <int W> Dual<W> abs2(const Dual<W>& a) { return a * a; }
template <int W> Dual<W> atan2(const Dual<W>& y, const Dual<W>& x) {
  const double r2 = x.v * x.v + y.v * y.v;
  Dual<W> r(std::atan2(y.v, x.v));
  for (int i = 0; i < W; ++i) r.d[i] = (x.v * y.d[i] - y.v * x.d[i]) / r2;
  return r;
}
template <int W> bool isfinite(const Dual<W>& a) {
  if (!std::isfinite(a.v)) return false;
  return std::all_of(a.d.begin(), a.d.end(), [](double x) { return std::isfinite(x); });
}

template <int W>
std::ostream& operator<<(std::ostream& os, const Dual<W>& a) {
  os << a.v << "[";
  for (int i = 0; i < W; ++i) os << (i ? "," : "") << a.d[i];
  return os << "]";
}

/// Value part of a scalar, whether plain or dual.
inline double value_of(double x) { return x; }
template <int W> double value_of(const Dual<W>& x) { return x.v; }

/// Chunk width used by the gradient driver below.
inline constexpr int kGradientChunk = 8;
using GradDual = Dual<kGradientChunk>;

/// Value and gradient of `fn` at `x` by chunked forward mode.
///
/// `fn` must be callable as `fn(std::span<const GradDual>) -> GradDual`.
template <class Fn>
double value_and_gradient(Fn&& fn, std::span<const double> x, std::span<double> grad) {
  const std::size_t n = x.size();
  std::vector<GradDual> seeded(n);
  for (std::size_t i = 0; i < n; ++i) seeded[i] = GradDual(x[i]);
  double value = 0.0;
  if (n == 0) {
    value = fn(std::span<const GradDual>(seeded)).v;
    return value;
  }
  for (std::size_t start = 0; start < n; start += kGradientChunk) {
    const std::size_t stop = std::min(n, start + kGradientChunk);
    for (std::size_t i = start; i < stop; ++i) seeded[i].d[i - start] = 1.0;
    const GradDual out = fn(std::span<const GradDual>(seeded));
    value = out.v;
    for (std::size_t i = start; i < stop; ++i) {
      grad[i] = out.d[i - start];
      seeded[i].d[i - start] = 0.0;
    }
  }
  return value;
}

}  // namespace dualuv

namespace Eigen {

template <int W>
struct NumTraits<dualuv::Dual<W>> : GenericNumTraits<double> {
  using Real = dualuv::Dual<W>;
  using NonInteger = dualuv::Dual<W>;
  using Nested = dualuv::Dual<W>;
  using Literal = dualuv::Dual<W>;
  enum {
    IsComplex = 0,
    IsInteger = 0,
    IsSigned = 1,
    RequireInitialization = 1,
    ReadCost = 1,
    AddCost = 1 + W,
    MulCost = 1 + 2 * W,
  };
  static inline Real epsilon() { return Real(std::numeric_limits<double>::epsilon()); }
  static inline Real dummy_precision() { return Real(1e-12); }
  static inline Real highest() { return Real(std::numeric_limits<double>::max()); }
  static inline Real lowest() { return Real(std::numeric_limits<double>::lowest()); }
  static inline int digits10() { return std::numeric_limits<double>::digits10; }
};

template <int W, typename BinaryOp>
struct ScalarBinaryOpTraits<dualuv::Dual<W>, double, BinaryOp> {
  using ReturnType = dualuv::Dual<W>;
};
template <int W, typename BinaryOp>
struct ScalarBinaryOpTraits<double, dualuv::Dual<W>, BinaryOp> {
  using ReturnType = dualuv::Dual<W>;
};

}  // namespace Eigen
