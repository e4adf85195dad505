#pragma once
#include <bit>
#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include "crlab/geometry.hpp"

namespace crlab {

/* Two sparse exterior algebras share one container.
 *
 * Kernel algebra (integral kernels in zeta, z, t):
 *   bits [0,6)  dzetabar_i   [6,12) dzbar_i   12 dt   [13,19) dzeta_i
 * Holomorphic dz_i is never carried: every kernel is wedged against
 * omega(z), so dz components die identically.
 *
 * Chart algebra (forms of one variable group in graph coordinates):
 *   bits [0,6)  dwbar_j   [6,12) dw_j   [12,18) dy_k   [18,24) dx_k
 */
inline uint32_t mzetabar(int i) { return 1u << i; }
inline uint32_t mzbar(int i) { return 1u << (6 + i); }
inline uint32_t mt() { return 1u << 12; }
inline uint32_t mzeta(int i) { return 1u << (13 + i); }
constexpr uint32_t kZetabarMask = 0x3fu;
constexpr uint32_t kZbarMask = 0x3fu << 6;
constexpr uint32_t kTMask = 1u << 12;
constexpr uint32_t kZetaMask = 0x3fu << 13;

inline uint32_t mwbar(int j) { return 1u << j; }
inline uint32_t mw(int j) { return 1u << (6 + j); }
inline uint32_t my(int k) { return 1u << (12 + k); }
inline uint32_t mx(int k) { return 1u << (18 + k); }
constexpr uint32_t kWbarMask = 0x3fu;
constexpr uint32_t kWMask = 0x3fu << 6;
constexpr uint32_t kYMask = 0x3fu << 12;
constexpr uint32_t kXMask = 0x3fu << 18;

inline int mask_degree(uint32_t m) { return std::popcount(m); }

/* sign of merging two strictly increasing factor lists; 0 on overlap */
inline int wedge_sign(uint32_t a, uint32_t b) {
  if (a & b) return 0;
  int s = 0;
  for (uint32_t x = b; x; x &= x - 1) {
    int i = std::countr_zero(x);
    s += std::popcount(a >> (i + 1));
  }
  return (s & 1) ? -1 : 1;
}

std::string mask_to_string(uint32_t mask, bool chart);

template <class S> struct GradedForm {
  std::map<uint32_t, S> c;

  static GradedForm scalar(const S& v) {
    GradedForm f;
    f.c[0] = v;
    return f;
  }
  static GradedForm monomial(uint32_t mask, const S& v) {
    GradedForm f;
    f.c[mask] = v;
    return f;
  }

  GradedForm& add(uint32_t mask, const S& v) {
    auto [it, fresh] = c.try_emplace(mask, v);
    if (!fresh) it->second += v;
    return *this;
  }
  S coeff(uint32_t mask) const {
    auto it = c.find(mask);
    return it == c.end() ? S(0.0) : it->second;
  }

  GradedForm operator+(const GradedForm& o) const {
    GradedForm r = *this;
    for (const auto& [m, v] : o.c) r.add(m, v);
    return r;
  }
  GradedForm operator-(const GradedForm& o) const {
    GradedForm r = *this;
    for (const auto& [m, v] : o.c) r.add(m, S(-1.0) * v);
    return r;
  }
  GradedForm operator*(const S& s) const {
    GradedForm r = *this;
    for (auto& [m, v] : r.c) v = v * s;
    return r;
  }
  GradedForm wedge(const GradedForm& o) const {
    GradedForm r;
    for (const auto& [ma, va] : c)
      for (const auto& [mb, vb] : o.c) {
        int sg = wedge_sign(ma, mb);
        if (sg) r.add(ma | mb, double(sg) * (va * vb));
      }
    return r;
  }
  /* drop coefficients that are exactly zero in every component */
  GradedForm pruned() const {
    GradedForm r;
    for (const auto& [m, v] : c)
      if (std::abs(value_of(v)) != 0.0) r.c.emplace(m, v);
    return r;
  }
};

template <class S> double form_norm(const GradedForm<S>& f) {
  double s = 0;
  for (const auto& [m, v] : f.c) s += std::abs(value_of(v));
  return s;
}
template <class S> double form_dist(const GradedForm<S>& a, const GradedForm<S>& b) {
  return form_norm(a - b);
}

/* keep only monomials with zero dzeta degree (what survives wedging with
 * omega(zeta)) */
template <class S> GradedForm<S> project_dzeta_free(const GradedForm<S>& f) {
  GradedForm<S> r;
  for (const auto& [m, v] : f.c)
    if (!(m & kZetaMask)) r.c.emplace(m, v);
  return r;
}

template <class S> GradedForm<S> omega_holo(int n) {
  uint32_t mask = 0;
  for (int i = 0; i < n; ++i) mask |= mzeta(i);
  return GradedForm<S>::monomial(mask, S(1.0));
}

/* pinned-scalar packaging of a kernel form field with declared bidegree
 * bounds; the generic lambdas underneath stay usable for dual scalars */
template <class S> struct FormField {
  int n = 0;
  int max_zbar = 0;       // dzbar degree bound
  int max_zetabar_t = 0;  // combined dzetabar+dt degree bound
  std::function<GradedForm<S>(const S*, const S*, const S&)> eval;

  GradedForm<S> operator()(const S* zeta, const S* z, const S& t) const {
    GradedForm<S> f = eval(zeta, z, t);
    for (const auto& [m, v] : f.c) {
      (void)v;
      if (mask_degree(m & kZbarMask) > max_zbar ||
          mask_degree(m & (kZetabarMask | kTMask)) > max_zetabar_t)
        throw DegreeOutOfRange("form field exceeds its declared bidegree bounds");
    }
    return f;
  }
};

/* ---- Leray sections ------------------------------------------------------ */

/* first-order data of a section eta(zeta, z, t) at one probe */
template <class S> struct LeraySample {
  int n = 0;
  std::vector<S> eta;       // n
  std::vector<S> dzeta;     // n*n, (k,i) = d eta_k / d zeta_i
  std::vector<S> dzetabar;  // n*n
  std::vector<S> dzbar;     // n*n
  std::vector<S> dt;        // n
  const S& dz_(int k, int i) const { return dzeta[size_t(k) * n + i]; }
};

/* evaluate a scalar-generic section callable under dual seeds in all
 * 4n+1 real directions and Wirtinger-combine.  Signature of the callable:
 * eta(const T* zeta, const T* z, const T& t, T* out). */
template <class S, class F>
LeraySample<S> sample_section(int n, F&& eta, const S* zeta, const S* z, const S& t) {
  constexpr int K = 4 * kMaxN + 1;
  using D = Dual<S, K>;
  std::vector<D> zd(n), wd(n), out(n);
  for (int i = 0; i < n; ++i) {
    zd[i] = D(zeta[i]);
    zd[i].d[2 * i] = S(1.0);
    zd[i].d[2 * i + 1] = from_c<S>(C(0, 1));
    wd[i] = D(z[i]);
    wd[i].d[2 * n + 2 * i] = S(1.0);
    wd[i].d[2 * n + 2 * i + 1] = from_c<S>(C(0, 1));
  }
  D td(t);
  td.d[4 * n] = S(1.0);
  eta(zd.data(), wd.data(), td, out.data());
  LeraySample<S> s;
  s.n = n;
  s.eta.resize(n);
  s.dzeta.resize(size_t(n) * n);
  s.dzetabar.resize(size_t(n) * n);
  s.dzbar.resize(size_t(n) * n);
  s.dt.resize(n);
  const S half = S(0.5);
  const S half_i = from_c<S>(C(0, 0.5));
  for (int k = 0; k < n; ++k) {
    s.eta[k] = out[k].v;
    s.dt[k] = out[k].d[4 * n];
    for (int i = 0; i < n; ++i) {
      const S& dx = out[k].d[2 * i];
      const S& dy = out[k].d[2 * i + 1];
      s.dzeta[size_t(k) * n + i] = half * dx - half_i * dy;
      s.dzetabar[size_t(k) * n + i] = half * dx + half_i * dy;
      const S& dzx = out[k].d[2 * n + 2 * i];
      const S& dzy = out[k].d[2 * n + 2 * i + 1];
      s.dzbar[size_t(k) * n + i] = half * dzx + half_i * dzy;
    }
  }
  return s;
}

template <class S>
void leray_check(const LeraySample<S>& s, const S* zeta, const S* z, double tol = 1e-10) {
  S acc(0.0);
  for (int k = 0; k < s.n; ++k) acc += s.eta[k] * (zeta[k] - z[k]);
  if (std::abs(value_of(acc) - C(1.0)) > tol)
    throw ConfigInvalid("section violates the Leray normalization");
}

/* d eta_k as a kernel-algebra 1-form (no dz carried) */
template <class S> GradedForm<S> section_differential(const LeraySample<S>& s, int k) {
  GradedForm<S> f;
  for (int i = 0; i < s.n; ++i) {
    f.add(mzeta(i), s.dzeta[size_t(k) * s.n + i]);
    f.add(mzetabar(i), s.dzetabar[size_t(k) * s.n + i]);
    f.add(mzbar(i), s.dzbar[size_t(k) * s.n + i]);
  }
  f.add(mt(), s.dt[k]);
  return f;
}

/* omega'(eta) = sum_k (-1)^{k-1} eta_k wedge_{j != k} d eta_j */
template <class S>
GradedForm<S> omega_prime(const LeraySample<S>& s, const S* zeta, const S* z) {
  leray_check(s, zeta, z);
  const int n = s.n;
  std::vector<GradedForm<S>> d(n);
  for (int j = 0; j < n; ++j) d[j] = section_differential(s, j);
  GradedForm<S> out;
  for (int k = 0; k < n; ++k) {
    GradedForm<S> w = GradedForm<S>::scalar(s.eta[k] * double(k % 2 ? -1 : 1));
    for (int j = 0; j < n; ++j)
      if (j != k) w = w.wedge(d[j]);
    out = out + w;
  }
  return out;
}

/* omega'_r(eta) = 1/((n-r-1)! r!) Det[eta, (dbar_z eta)^r, (dbar_{zeta,t} eta)^{n-r-1}]
 * expanded literally over permutations, wedge factors ordered by column */
template <class S>
GradedForm<S> omega_prime_r(const LeraySample<S>& s, int r, const S* zeta, const S* z) {
  const int n = s.n;
  if (r < 0 || r > n - 1) throw DegreeOutOfRange("omega'_r needs 0 <= r <= n-1");
  leray_check(s, zeta, z);
  std::vector<GradedForm<S>> u(n), v(n);  // dbar_z eta_k and dbar_{zeta,t} eta_k
  for (int k = 0; k < n; ++k) {
    for (int i = 0; i < n; ++i) {
      u[k].add(mzbar(i), s.dzbar[size_t(k) * n + i]);
      v[k].add(mzetabar(i), s.dzetabar[size_t(k) * n + i]);
    }
    v[k].add(mt(), s.dt[k]);
  }
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  GradedForm<S> out;
  int sign = 1;
  // iterate permutations in lexicographic order, tracking parity
  while (true) {
    GradedForm<S> w = GradedForm<S>::scalar(double(sign) * s.eta[perm[0]]);
    for (int col = 1; col < n; ++col)
      w = w.wedge(col <= r ? u[perm[col]] : v[perm[col]]);
    out = out + w;
    int i = n - 2;
    while (i >= 0 && perm[i] >= perm[i + 1]) --i;
    if (i < 0) break;
    int j = n - 1;
    while (perm[j] <= perm[i]) --j;
    std::swap(perm[i], perm[j]);
    sign = -sign;
    for (int a = i + 1, b = n - 1; a < b; ++a, --b) {
      std::swap(perm[a], perm[b]);
      sign = -sign;
    }
  }
  double fact = 1;
  for (int a = 2; a <= r; ++a) fact *= a;
  for (int a = 2; a <= n - r - 1; ++a) fact *= a;
  return out * S(1.0 / fact);
}

/* ---- split exterior derivatives ------------------------------------------ */

enum class SplitVar { t, zetabar, zbar };

/* exterior derivative of a kernel form field in one variable group.
 * field: generic callable (const T* zeta, const T* z, const T& t) -> GradedForm<T>. */
template <class S, class F>
GradedForm<S> split_derivative(int n, F&& field, SplitVar which, const S* zeta, const S* z,
                               const S& t) {
  if (which == SplitVar::t) {
    using D = Dual<S, 1>;
    std::vector<D> zd(zeta, zeta + n), wd(z, z + n);
    D td(t);
    td.d[0] = S(1.0);
    GradedForm<D> f = field(zd.data(), wd.data(), td);
    GradedForm<S> out;
    GradedForm<S> gen = GradedForm<S>::monomial(mt(), S(1.0));
    for (const auto& [m, v] : f.c)
      out = out + gen.wedge(GradedForm<S>::monomial(m, v.d[0]));
    return out;
  }
  constexpr int K = 2 * kMaxN;
  using D = Dual<S, K>;
  std::vector<D> zd(zeta, zeta + n), wd(z, z + n);
  D td(t);
  std::vector<D>& seeded = (which == SplitVar::zetabar) ? zd : wd;
  for (int i = 0; i < n; ++i) {
    seeded[i].d[2 * i] = S(1.0);
    seeded[i].d[2 * i + 1] = from_c<S>(C(0, 1));
  }
  GradedForm<D> f = field(zd.data(), wd.data(), td);
  const S half = S(0.5);
  const S half_i = from_c<S>(C(0, 0.5));
  GradedForm<S> out;
  for (int i = 0; i < n; ++i) {
    uint32_t gen = (which == SplitVar::zetabar) ? mzetabar(i) : mzbar(i);
    GradedForm<S> gform = GradedForm<S>::monomial(gen, S(1.0));
    for (const auto& [m, v] : f.c) {
      S dbar = half * v.d[2 * i] + half_i * v.d[2 * i + 1];
      out = out + gform.wedge(GradedForm<S>::monomial(m, dbar));
    }
  }
  return out;
}

/* ---- chart-side operators ------------------------------------------------ */

/* extension operator E: a form on M in graph coordinates becomes an ambient
 * field constant in x_1..x_m.  Wraps a callable (const T* Y, const T* W) ->
 * GradedForm<T> in chart-algebra masks. */
template <class F> struct ExtendedField {
  F g;
  template <class S>
  GradedForm<S> operator()(const S* /*X*/, const S* Y, const S* W) const {
    GradedForm<S> val = g(Y, W);
    for (const auto& [m, v] : val.c) {
      (void)v;
      if (m & kXMask) throw BadCoordinateFrame("extension input carries dx factors");
    }
    return val;
  }
};
template <class F> ExtendedField<F> extend(F g) { return ExtendedField<F>{std::move(g)}; }

/* rewrite a chart-algebra form as a kernel-algebra form in the zeta group:
 * dx_k = (dzeta_k + dzetabar_k)/2, dy_k = (dzeta_k - dzetabar_k)/2i,
 * dw_j = dzeta_{m+j}, dwbar_j = dzetabar_{m+j} */
template <class S> GradedForm<S> chart_to_ambient(const GradedForm<S>& g, int n, int m) {
  const S half = S(0.5);
  const S neg_half_i = from_c<S>(C(0, -0.5));
  GradedForm<S> out;
  for (const auto& [mask, v] : g.c) {
    GradedForm<S> w = GradedForm<S>::scalar(v);
    for (uint32_t x = mask; x; x &= x - 1) {
      int bit = std::countr_zero(x);
      GradedForm<S> f;
      if (bit < 6) {
        f.add(mzetabar(m + bit), S(1.0));
      } else if (bit < 12) {
        f.add(mzeta(m + bit - 6), S(1.0));
      } else if (bit < 18) {
        int k = bit - 12;
        f.add(mzeta(k), neg_half_i);
        f.add(mzetabar(k), S(-1.0) * neg_half_i);
      } else {
        int k = bit - 18;
        f.add(mzeta(k), half);
        f.add(mzetabar(k), half);
      }
      w = w.wedge(f);
    }
    out = out + w;
    (void)n;
  }
  return out;
}

template <class S>
void chart_bounds_check(const Chart& chart, int n, int m, const S* Y, const S* W) {
  const double pad = 1e-9;
  for (int k = 0; k < m; ++k)
    if (std::abs(value_of(Y[k]).real() - chart.center[k].imag()) > chart.radius + pad)
      throw OutOfChart("Y outside the chart box");
  for (int j = 0; j < n - m; ++j) {
    C d = value_of(W[j]) - chart.center[m + j];
    if (std::abs(d.real()) > chart.radius + pad || std::abs(d.imag()) > chart.radius + pad)
      throw OutOfChart("W outside the chart box");
  }
}

/* pullback of a zeta-group kernel form under the graph parametrization
 * (Y, W) -> (phi(Y,W) + iY, W): substitutes dzeta_k -> dphi_k + i dy_k,
 * dzetabar_k -> dphi_k - i dy_k, dzeta_{m+j} -> dw_j, dzetabar_{m+j} -> dwbar_j */
template <class S>
GradedForm<S> restrict_to_M(const GradedForm<S>& F, const ChartGraph& graph, const S* Y,
                            const S* W) {
  const int n = graph.sys->n, m = graph.sys->m;
  chart_bounds_check(graph.chart, n, m, Y, W);
  for (const auto& [mask, v] : F.c) {
    (void)v;
    if (mask & (kZbarMask | kTMask))
      throw BadCoordinateFrame("restriction expects a form of the zeta group only");
  }
  // graph differential via dual seeds over (y, Re w, Im w)
  constexpr int K = kMaxN + 2 * kMaxN;
  using D = Dual<S, K>;
  const int dims = m + 2 * (n - m);
  std::vector<D> Yd(m), Wd(n - m), Xd(m);
  for (int k = 0; k < m; ++k) Yd[k] = D(Y[k], k);
  for (int j = 0; j < n - m; ++j) {
    Wd[j] = D(W[j]);
    Wd[j].d[m + 2 * j] = S(1.0);
    Wd[j].d[m + 2 * j + 1] = from_c<S>(C(0, 1));
  }
  graph.phi(Yd.data(), Wd.data(), Xd.data());
  const S half = S(0.5);
  const S half_i = from_c<S>(C(0, 0.5));
  const S iu = from_c<S>(C(0, 1));
  // dphi_k in chart generators; dRe w = (dw + dwbar)/2, dIm w = (dw - dwbar)/2i
  std::vector<GradedForm<S>> dphi(m);
  for (int k = 0; k < m; ++k) {
    for (int l = 0; l < m; ++l) dphi[k].add(my(l), Xd[k].d[l]);
    for (int j = 0; j < n - m; ++j) {
      const S& du = Xd[k].d[m + 2 * j];
      const S& dv = Xd[k].d[m + 2 * j + 1];
      dphi[k].add(mw(j), half * du - half_i * dv);
      dphi[k].add(mwbar(j), half * du + half_i * dv);
    }
  }
  GradedForm<S> out;
  for (const auto& [mask, v] : F.c) {
    GradedForm<S> w = GradedForm<S>::scalar(v);
    for (uint32_t x = mask; x; x &= x - 1) {
      int bit = std::countr_zero(x);
      GradedForm<S> f;
      if (bit < 6) {  // dzetabar_i
        int i = bit;
        if (i < m) {
          f = dphi[i];
          f.add(my(i), S(-1.0) * iu);
        } else {
          f.add(mwbar(i - m), S(1.0));
        }
      } else {  // dzeta_i
        int i = bit - 13;
        if (i < m) {
          f = dphi[i];
          f.add(my(i), iu);
        } else {
          f.add(mw(i - m), S(1.0));
        }
      }
      w = w.wedge(f);
    }
    out = out + w;
  }
  (void)dims;
  return out;
}

/* antiholomorphic tangential frame: a(k, j) solves
 * sum_k (d rho_l / d zbar_k) a(k, j) = -(d rho_l / d wbar_j),
 * so Lbar_j = d/dwbar_j + sum_k a(k,j) d/dzbar_k is tangent to M */
template <class S>
SMat<S> antiholo_frame(const DefiningSystem& sys, const S* xy) {
  const int n = sys.n, m = sys.m;
  const S half = S(0.5);
  const S half_i = from_c<S>(C(0, 0.5));
  SMat<S> A(m, m);
  for (int l = 0; l < m; ++l)
    for (int k = 0; k < m; ++k)
      A(l, k) = half * sys.d1[l][k].eval(xy) + half_i * sys.d1[l][n + k].eval(xy);
  std::vector<int> piv;
  bool sing = false;
  lu_decompose(A, piv, &sing);
  if (sing) throw DegenerateChart("antiholomorphic normal matrix singular");
  SMat<S> a(m, n - m);
  std::vector<S> rhs(m);
  for (int j = 0; j < n - m; ++j) {
    for (int l = 0; l < m; ++l)
      rhs[l] = S(-1.0) * (half * sys.d1[l][m + j].eval(xy) + half_i * sys.d1[l][n + m + j].eval(xy));
    lu_solve(A, piv, rhs.data());
    for (int k = 0; k < m; ++k) a(k, j) = rhs[k];
  }
  return a;
}

/* projection onto tangential (0,*) forms: dzbar_k -> sum_j a(k,j) dwbar_j
 * for k < m, dzbar_{m+j} -> dwbar_j.  Input is a z-group (0,s) kernel form
 * at an ambient point of M given in graph coordinates. */
template <class S>
GradedForm<S> pr_M(const GradedForm<S>& F, const ChartGraph& graph, const S* Y, const S* W) {
  const int n = graph.sys->n, m = graph.sys->m;
  std::vector<S> z(n), xy(2 * n);
  graph.ambient(Y, W, z.data());
  to_xy(z.data(), n, xy.data());
  SMat<S> a = antiholo_frame(*graph.sys, xy.data());
  GradedForm<S> out;
  for (const auto& [mask, v] : F.c) {
    if (mask & ~kZbarMask)
      throw BadCoordinateFrame("tangential projection expects a (0,s) form of the z group");
    GradedForm<S> w = GradedForm<S>::scalar(v);
    for (uint32_t x = mask; x; x &= x - 1) {
      int k = std::countr_zero(x) - 6;
      GradedForm<S> f;
      if (k < m)
        for (int j = 0; j < n - m; ++j) f.add(mwbar(j), a(k, j));
      else
        f.add(mwbar(k - m), S(1.0));
      w = w.wedge(f);
    }
    out = out + w;
  }
  return out;
}

/* tangential Cauchy-Riemann operator on (0,r) forms in graph coordinates.
 * g: generic callable (const T* Y, const T* W) -> GradedForm<T> with
 * dwbar-only monomials.  dbar_M(sum c_K dwbar_K) = sum (Lbar_j c_K)
 * dwbar_j ^ dwbar_K; the Lbar_j commute exactly, so dbar_M^2 = 0. */
template <class S, class G>
GradedForm<S> dbar_M(const ChartGraph& graph, G&& g, const S* Y, const S* W) {
  const int n = graph.sys->n, m = graph.sys->m;
  const int nw = n - m;
  constexpr int K = kMaxN + 2 * kMaxN;
  using D = Dual<S, K>;
  std::vector<D> Yd(m), Wd(nw);
  for (int k = 0; k < m; ++k) Yd[k] = D(Y[k], k);
  for (int j = 0; j < nw; ++j) {
    Wd[j] = D(W[j]);
    Wd[j].d[m + 2 * j] = S(1.0);
    Wd[j].d[m + 2 * j + 1] = from_c<S>(C(0, 1));
  }
  GradedForm<D> val = g(Yd.data(), Wd.data());
  for (const auto& [mask, v] : val.c) {
    (void)v;
    if (mask & ~kWbarMask) throw BadCoordinateFrame("dbar_M input must be a (0,r) form");
    if (mask_degree(mask) > nw - 1) throw DegreeOutOfRange("dbar_M input already has top degree");
  }
  std::vector<S> z(n), xy(2 * n);
  graph.ambient(Y, W, z.data());
  to_xy(z.data(), n, xy.data());
  SMat<S> a = antiholo_frame(*graph.sys, xy.data());
  const S half = S(0.5);
  const S half_i = from_c<S>(C(0, 0.5));
  GradedForm<S> out;
  for (int j = 0; j < nw; ++j) {
    GradedForm<S> gen = GradedForm<S>::monomial(mwbar(j), S(1.0));
    for (const auto& [mask, v] : val.c) {
      S lj = half * v.d[m + 2 * j] + half_i * v.d[m + 2 * j + 1];
      for (int k = 0; k < m; ++k) lj += a(k, j) * (half_i * v.d[k]);
      out = out + gen.wedge(GradedForm<S>::monomial(mask, lj));
    }
  }
  return out;
}

}  // namespace crlab
