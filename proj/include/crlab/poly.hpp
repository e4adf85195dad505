#pragma once
#include <array>
#include <cstdint>
#include <map>
#include <vector>

#include "crlab/dual.hpp"

namespace crlab {

constexpr int kMaxN = 6;           // complex dimension cap for the bundled machinery
constexpr int kMaxVars = 2 * kMaxN;

/* Real polynomial in the 2n real coordinates (x_1..x_n, y_1..y_n) of C^n,
 * z_j = x_j + i y_j.  Derivatives are exact (term-by-term), evaluation is
 * generic over the scalar so dual numbers flow through unchanged. */
struct RealPoly {
  int nv = 0;
  struct Term {
    double c;
    std::array<uint8_t, kMaxVars> e;
  };
  std::vector<Term> terms;

  static RealPoly zero(int nv) { return RealPoly{nv, {}}; }

  void add_term(double c, const std::array<uint8_t, kMaxVars>& e) {
    terms.push_back({c, e});
  }

  RealPoly d(int var) const {
    RealPoly r{nv, {}};
    for (const auto& t : terms)
      if (t.e[var] > 0) {
        Term s = t;
        s.c *= t.e[var];
        s.e[var] -= 1;
        r.terms.push_back(s);
      }
    r.normalize();
    return r;
  }

  void normalize() {
    std::map<std::array<uint8_t, kMaxVars>, double> acc;
    for (const auto& t : terms) acc[t.e] += t.c;
    terms.clear();
    for (const auto& [e, c] : acc)
      if (c != 0.0) terms.push_back({c, e});
  }

  RealPoly operator*(double s) const {
    RealPoly r = *this;
    for (auto& t : r.terms) t.c *= s;
    return r;
  }
  RealPoly operator+(const RealPoly& o) const {
    RealPoly r = *this;
    r.terms.insert(r.terms.end(), o.terms.begin(), o.terms.end());
    r.normalize();
    return r;
  }
  RealPoly operator*(const RealPoly& o) const {
    RealPoly r{nv, {}};
    for (const auto& a : terms)
      for (const auto& b : o.terms) {
        Term t;
        t.c = a.c * b.c;
        for (int i = 0; i < kMaxVars; ++i) t.e[i] = uint8_t(a.e[i] + b.e[i]);
        r.terms.push_back(t);
      }
    r.normalize();
    return r;
  }

  int degree() const {
    int d = 0;
    for (const auto& t : terms) {
      int s = 0;
      for (int i = 0; i < nv; ++i) s += t.e[i];
      if (s > d) d = s;
    }
    return d;
  }

  template <class S> S eval(const S* xy) const {
    S acc(0.0);
    for (const auto& t : terms) {
      S p(t.c);
      for (int i = 0; i < nv; ++i)
        if (t.e[i]) p = p * ipow(xy[i], t.e[i]);
      acc += p;
    }
    return acc;
  }
};

/* split complex points into the real coordinate layout polynomials use */
template <class S> void to_xy(const S* z, int n, S* xy) {
  for (int i = 0; i < n; ++i) {
    xy[i] = re_part(z[i]);
    xy[n + i] = im_part(z[i]);
  }
}

}  // namespace crlab
