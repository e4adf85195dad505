#pragma once
#include <array>
#include <cmath>
#include <complex>
#include <cstddef>

namespace crlab {

using C = std::complex<double>;

/* Forward-mode scalar: value plus partial derivatives along N independent
 * real directions.  T is complex<double> or another Dual (nested duals give
 * mixed second derivatives). */
template <class T, int N> struct Dual {
  T v{};
  std::array<T, N> d{};

  Dual() = default;
  Dual(double x) : v(x) {}
  Dual(const T& x) : v(x) {}
  Dual(const T& x, int dir, const T& scale = T(1)) : v(x) { d[dir] = scale; }

  Dual& operator+=(const Dual& o) {
    v += o.v;
    for (int i = 0; i < N; ++i) d[i] += o.d[i];
    return *this;
  }
  Dual& operator-=(const Dual& o) {
    v -= o.v;
    for (int i = 0; i < N; ++i) d[i] -= o.d[i];
    return *this;
  }
  Dual& operator*=(const Dual& o) { return *this = *this * o; }
  Dual& operator/=(const Dual& o) { return *this = *this / o; }

  friend Dual operator+(Dual a, const Dual& b) { return a += b; }
  friend Dual operator-(Dual a, const Dual& b) { return a -= b; }
  friend Dual operator-(const Dual& a) {
    Dual r;
    r.v = -a.v;
    for (int i = 0; i < N; ++i) r.d[i] = -a.d[i];
    return r;
  }
  friend Dual operator*(const Dual& a, const Dual& b) {
    Dual r;
    r.v = a.v * b.v;
    for (int i = 0; i < N; ++i) r.d[i] = a.v * b.d[i] + b.v * a.d[i];
    return r;
  }
  friend Dual operator/(const Dual& a, const Dual& b) {
    Dual r;
    r.v = a.v / b.v;
    for (int i = 0; i < N; ++i) r.d[i] = (a.d[i] - r.v * b.d[i]) / b.v;
    return r;
  }
};

inline double value_of(double x) { return x; }
inline C value_of(const C& x) { return x; }
template <class T, int N> auto value_of(const Dual<T, N>& x) { return value_of(x.v); }

using std::conj;
using std::exp;
using std::sqrt;

/* conj/real/imag are valid on duals because every derivative direction is a
 * real coordinate. */
template <class T, int N> Dual<T, N> conj(const Dual<T, N>& a) {
  Dual<T, N> r;
  r.v = conj(a.v);
  for (int i = 0; i < N; ++i) r.d[i] = conj(a.d[i]);
  return r;
}
inline C re_part(const C& a) { return C(a.real(), 0.0); }
inline C im_part(const C& a) { return C(a.imag(), 0.0); }
template <class T, int N> Dual<T, N> re_part(const Dual<T, N>& a) {
  Dual<T, N> r;
  r.v = re_part(a.v);
  for (int i = 0; i < N; ++i) r.d[i] = re_part(a.d[i]);
  return r;
}
template <class T, int N> Dual<T, N> im_part(const Dual<T, N>& a) {
  Dual<T, N> r;
  r.v = im_part(a.v);
  for (int i = 0; i < N; ++i) r.d[i] = im_part(a.d[i]);
  return r;
}
template <class S> S abs2(const S& a) { return a * conj(a); }

template <class T, int N> Dual<T, N> sqrt(const Dual<T, N>& a) {
  Dual<T, N> r;
  r.v = sqrt(a.v);
  T inv = T(0.5) / r.v;
  for (int i = 0; i < N; ++i) r.d[i] = a.d[i] * inv;
  return r;
}
template <class T, int N> Dual<T, N> exp(const Dual<T, N>& a) {
  Dual<T, N> r;
  r.v = exp(a.v);
  for (int i = 0; i < N; ++i) r.d[i] = a.d[i] * r.v;
  return r;
}

/* lift a complex constant into any scalar (nested duals need the recursion;
 * two implicit user conversions would be required otherwise) */
template <class S> struct FromC;
template <> struct FromC<C> {
  static C get(const C& c) { return c; }
};
template <class T, int N> struct FromC<Dual<T, N>> {
  static Dual<T, N> get(const C& c) {
    Dual<T, N> r;
    r.v = FromC<T>::get(c);
    return r;
  }
};
template <class S> S from_c(const C& c) { return FromC<S>::get(c); }

template <class S> S ipow(S base, int e) {
  S r(1.0);
  while (e > 0) {
    if (e & 1) r = r * base;
    base = base * base;
    e >>= 1;
  }
  return r;
}

/* mixed ops with the base scalar so polynomials over double coefficients
 * stay cheap */
template <class T, int N> Dual<T, N> operator*(double c, const Dual<T, N>& a) {
  Dual<T, N> r;
  r.v = c * a.v;
  for (int i = 0; i < N; ++i) r.d[i] = c * a.d[i];
  return r;
}
template <class T, int N> Dual<T, N> operator*(const Dual<T, N>& a, double c) { return c * a; }

}  // namespace crlab
