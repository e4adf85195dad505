#pragma once
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "crlab/dual.hpp"

namespace crlab {

/* Dense row-major matrix over an arbitrary scalar (complex or dual).  Used
 * for the small kernel-side solves where Eigen's fixed scalar set does not
 * reach; plain double/complex work stays on Eigen. */
template <class S> struct SMat {
  int r = 0, c = 0;
  std::vector<S> a;
  SMat() = default;
  SMat(int r_, int c_) : r(r_), c(c_), a(size_t(r_) * c_) {}
  S& operator()(int i, int j) { return a[size_t(i) * c + j]; }
  const S& operator()(int i, int j) const { return a[size_t(i) * c + j]; }
};

/* LU with partial pivoting by |value|; returns det, overwrites m, fills perm.
 * Solves are separate so determinant-only callers stay cheap. */
template <class S> S lu_decompose(SMat<S>& m, std::vector<int>& piv, bool* singular = nullptr) {
  int n = m.r;
  piv.resize(n);
  S det(1.0);
  if (singular) *singular = false;
  for (int k = 0; k < n; ++k) {
    int p = k;
    double best = std::abs(value_of(m(k, k)));
    for (int i = k + 1; i < n; ++i) {
      double v = std::abs(value_of(m(i, k)));
      if (v > best) {
        best = v;
        p = i;
      }
    }
    piv[k] = p;
    if (best == 0.0) {
      if (singular) *singular = true;
      return S(0.0);
    }
    if (p != k) {
      for (int j = 0; j < n; ++j) std::swap(m(k, j), m(p, j));
      det = -det;
    }
    det = det * m(k, k);
    S inv = S(1.0) / m(k, k);
    for (int i = k + 1; i < n; ++i) {
      S f = m(i, k) * inv;
      m(i, k) = f;
      for (int j = k + 1; j < n; ++j) m(i, j) -= f * m(k, j);
    }
  }
  return det;
}

template <class S> S det(SMat<S> m) {
  std::vector<int> piv;
  return lu_decompose(m, piv);
}

template <class S> void lu_solve(const SMat<S>& lu, const std::vector<int>& piv, S* x) {
  int n = lu.r;
  for (int k = 0; k < n; ++k)
    if (piv[k] != k) std::swap(x[k], x[piv[k]]);
  for (int i = 1; i < n; ++i)
    for (int j = 0; j < i; ++j) x[i] -= lu(i, j) * x[j];
  for (int i = n - 1; i >= 0; --i) {
    for (int j = i + 1; j < n; ++j) x[i] -= lu(i, j) * x[j];
    x[i] = x[i] / lu(i, i);
  }
}

template <class S> bool solve(SMat<S> m, std::vector<S>& rhs) {
  std::vector<int> piv;
  bool sing = false;
  lu_decompose(m, piv, &sing);
  if (sing) return false;
  lu_solve(m, piv, rhs.data());
  return true;
}

/* modified Gram-Schmidt on rows, hermitian inner product sum conj(u) v */
template <class S> void mgs_rows(SMat<S>& m) {
  for (int i = 0; i < m.r; ++i) {
    for (int k = 0; k < i; ++k) {
      S dot(0.0);
      for (int j = 0; j < m.c; ++j) dot += conj(m(k, j)) * m(i, j);
      for (int j = 0; j < m.c; ++j) m(i, j) -= dot * m(k, j);
    }
    S nrm(0.0);
    for (int j = 0; j < m.c; ++j) nrm += conj(m(i, j)) * m(i, j);
    nrm = sqrt(nrm);
    for (int j = 0; j < m.c; ++j) m(i, j) = m(i, j) / nrm;
  }
}

/* --- deterministic randomness ------------------------------------------- */

/* Thin mt19937_64 wrapper with its own distributions; std:: distribution
 * implementations are not pinned by the standard and would break
 * byte-identical reports. */
struct Rng {
  uint64_t s[4];
  explicit Rng(uint64_t seed) {
    // splitmix64 expansion of the seed
    uint64_t x = seed;
    for (auto& si : s) {
      x += 0x9e3779b97f4a7c15ULL;
      uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      si = z ^ (z >> 31);
    }
  }
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  uint64_t next() {  // xoshiro256++
    uint64_t r = rotl(s[0] + s[3], 23) + s[0];
    uint64_t t = s[1] << 17;
    s[2] ^= s[0];
    s[3] ^= s[1];
    s[1] ^= s[2];
    s[0] ^= s[3];
    s[2] ^= t;
    s[3] = rotl(s[3], 45);
    return r;
  }
  double u01() { return double(next() >> 11) * 0x1.0p-53; }
  double uniform(double a, double b) { return a + (b - a) * u01(); }
  double normal() {
    if (have_) {
      have_ = false;
      return cached_;
    }
    double u1 = 0, u2 = 0;
    do {
      u1 = u01();
    } while (u1 <= 1e-300);
    u2 = u01();
    double r = std::sqrt(-2.0 * std::log(u1)), a = 6.283185307179586476925287 * u2;
    cached_ = r * std::sin(a);
    have_ = true;
    return r * std::cos(a);
  }
  C cnormal() { return C(normal(), normal()); }

 private:
  bool have_ = false;
  double cached_ = 0;
};

/* Halton radical-inverse sequence, dimension d < 16 */
inline double radical_inverse(uint64_t i, int base) {
  double f = 1.0, r = 0.0;
  while (i) {
    f /= base;
    r += f * double(i % base);
    i /= base;
  }
  return r;
}
inline double halton(uint64_t i, int dim) {
  static const int primes[16] = {2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53};
  return radical_inverse(i + 1, primes[dim]);
}

/* Pairwise tree reduction: result depends only on element order, never on
 * chunking or thread count. */
template <class T> T tree_sum(std::vector<T>& v) {
  if (v.empty()) return T{};
  size_t n = v.size();
  while (n > 1) {
    size_t h = 0;
    for (size_t i = 0; i + 1 < n; i += 2) v[h++] = v[i] + v[i + 1];
    if (n & 1) v[h++] = v[n - 1];
    n = h;
  }
  return v[0];
}

/* Gauss-Legendre nodes/weights on [-1,1] by Newton on Legendre polynomials */
inline void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  x.resize(n);
  w.resize(n);
  for (int i = 0; i < n; ++i) {
    double t = std::cos(3.14159265358979323846 * (i + 0.75) / (n + 0.5));
    for (int it = 0; it < 100; ++it) {
      double p0 = 1, p1 = t;
      for (int k = 2; k <= n; ++k) {
        double p2 = ((2 * k - 1) * t * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      double dp = n * (t * p1 - p0) / (t * t - 1);
      double dt = p1 / dp;
      t -= dt;
      if (std::abs(dt) < 1e-15) break;
    }
    double p0 = 1, p1 = t;
    for (int k = 2; k <= n; ++k) {
      double p2 = ((2 * k - 1) * t * p1 - (k - 1) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    double dp = n * (t * p1 - p0) / (t * t - 1);
    x[i] = t;
    w[i] = 2.0 / ((1 - t * t) * dp * dp);
  }
}

}  // namespace crlab
