#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "crlab/forms.hpp"

using namespace crlab;

static std::string data_dir() { return std::string(CRLAB_DATA_DIR) + "/manifolds/"; }

/* Bochner-Martinelli section and a weighted variant; the t-interpolation of
 * the two is a Leray section with genuine t-dependence */
struct TestSections {
  int n;
  std::vector<double> g;
  explicit TestSections(int n_) : n(n_), g(n_) {
    for (int i = 0; i < n; ++i) g[i] = 1.0 + 0.5 * i;
  }
  template <class T> void bm(const T* zeta, const T* z, const T& /*t*/, T* out) const {
    T den(0.0);
    for (int i = 0; i < n; ++i) den += (zeta[i] - z[i]) * conj(zeta[i] - z[i]);
    for (int k = 0; k < n; ++k) out[k] = conj(zeta[k] - z[k]) / den;
  }
  template <class T> void mixed(const T* zeta, const T* z, const T& t, T* out) const {
    T den(0.0), deng(0.0);
    for (int i = 0; i < n; ++i) {
      T a = (zeta[i] - z[i]) * conj(zeta[i] - z[i]);
      den += a;
      deng += g[i] * a;
    }
    for (int k = 0; k < n; ++k)
      out[k] = (T(1.0) - t) * conj(zeta[k] - z[k]) / den +
               t * (g[k] * conj(zeta[k] - z[k])) / deng;
  }
};

static void random_probe(Rng& rng, int n, std::vector<C>& zeta, std::vector<C>& z, C& t) {
  zeta.resize(n);
  z.resize(n);
  while (true) {
    double d2 = 0;
    for (int i = 0; i < n; ++i) {
      zeta[i] = C(rng.uniform(-1, 1), rng.uniform(-1, 1));
      z[i] = C(rng.uniform(-1, 1), rng.uniform(-1, 1));
      d2 += std::norm(zeta[i] - z[i]);
    }
    if (d2 > 0.09) break;
  }
  t = C(rng.uniform(0.1, 0.9));
}

TEST_CASE("wedge algebra signs and linearity") {
  using GF = GradedForm<C>;
  GF a = GF::monomial(mzetabar(0), C(1));
  CHECK(form_norm(a.wedge(a)) == 0.0);
  GF b = GF::monomial(mzetabar(1), C(1));
  CHECK(form_dist(a.wedge(b), b.wedge(a) * C(-1)) == 0.0);
  GF c = GF::monomial(mzetabar(0), C(1)) + GF::monomial(mzbar(0), C(1));
  GF dt = GF::monomial(mt(), C(1));
  GF lhs = c.wedge(dt);
  CHECK(std::abs(lhs.coeff(mzetabar(0) | mt()) - C(1)) == 0.0);
  CHECK(std::abs(lhs.coeff(mzbar(0) | mt()) - C(1)) == 0.0);
  // graded commutativity and associativity on random low-degree forms
  Rng rng(2);
  uint32_t gens[5] = {mzetabar(0), mzetabar(1), mzbar(0), mt(), mzeta(1)};
  for (int trial = 0; trial < 20; ++trial) {
    auto rnd1 = [&] {
      GF f;
      for (uint32_t gmask : gens) f.add(gmask, C(rng.uniform(-1, 1), rng.uniform(-1, 1)));
      return f;
    };
    GF x = rnd1(), y = rnd1(), w = rnd1();
    CHECK(form_dist(x.wedge(y), y.wedge(x) * C(-1)) < 1e-14);           // odd * odd
    CHECK(form_dist(x.wedge(y).wedge(w), x.wedge(y.wedge(w))) < 1e-14); // associativity
    GF xy = x.wedge(y);                                                  // even element
    CHECK(form_dist(xy.wedge(w), w.wedge(xy)) < 1e-14);
  }
}

TEST_CASE("omega' in one variable is the Cauchy kernel scalar") {
  auto eta = [](const auto* zeta, const auto* z, const auto& t, auto* out) {
    (void)t;
    out[0] = decltype(out[0] + out[0])(1.0) / (zeta[0] - z[0]);
  };
  C zeta[1] = {C(0.7, 0.3)}, z[1] = {C(0.1, -0.2)}, t(0.5);
  auto s = sample_section<C>(1, eta, zeta, z, t);
  auto w = omega_prime(s, zeta, z);
  CHECK(std::abs(w.coeff(0) - C(1) / (zeta[0] - z[0])) < 1e-14);
  CHECK(w.c.size() <= 1);
}

TEST_CASE("omega' of the Bochner-Martinelli section at a frozen probe") {
  TestSections sec(2);
  auto eta = [&](const auto* zeta, const auto* z, const auto& t, auto* out) {
    sec.bm(zeta, z, t, out);
  };
  C zeta[2] = {C(1), C(0)}, z[2] = {C(0), C(0)}, t(0.0);
  auto s = sample_section<C>(2, eta, zeta, z, t);
  auto w = omega_prime(s, zeta, z);
  // hand expansion: b = (1, 0), db1 = -dzeta1, db2 = dzetabar2 - dzbar2,
  // omega' = b1 db2 = dzetabar2 - dzbar2
  auto wp = w.pruned();
  CHECK(wp.c.size() == 2);
  CHECK(std::abs(wp.coeff(mzetabar(1)) - C(1)) < 1e-14);
  CHECK(std::abs(wp.coeff(mzbar(1)) + C(1)) < 1e-14);
  auto w0 = omega_prime_r(s, 0, zeta, z).pruned();
  CHECK(w0.c.size() == 1);
  CHECK(std::abs(w0.coeff(mzetabar(1)) - C(1)) < 1e-14);
  auto w1 = omega_prime_r(s, 1, zeta, z).pruned();
  CHECK(w1.c.size() == 1);
  CHECK(std::abs(w1.coeff(mzbar(1)) + C(1)) < 1e-14);
}

TEST_CASE("sections violating the Leray normalization are rejected") {
  TestSections sec(2);
  auto bad = [&](const auto* zeta, const auto* z, const auto& t, auto* out) {
    sec.bm(zeta, z, t, out);
    out[0] = 2.0 * out[0];
    out[1] = 2.0 * out[1];
  };
  C zeta[2] = {C(1), C(0)}, z[2] = {C(0), C(0)}, t(0.0);
  auto s = sample_section<C>(2, bad, zeta, z, t);
  CHECK_THROWS_AS((void)omega_prime(s, zeta, z), ConfigInvalid);
  CHECK_THROWS_AS((void)omega_prime_r(s, 0, zeta, z), ConfigInvalid);
}

TEST_CASE("omega'_r bidegrees, range errors, and column counts") {
  const int n = 3;
  TestSections sec(n);
  auto eta = [&](const auto* zeta, const auto* z, const auto& t, auto* out) {
    sec.mixed(zeta, z, t, out);
  };
  Rng rng(11);
  std::vector<C> zeta, z;
  C t;
  for (int trial = 0; trial < 10; ++trial) {
    random_probe(rng, n, zeta, z, t);
    auto s = sample_section<C>(n, eta, zeta.data(), z.data(), t);
    for (int r = 0; r < n; ++r) {
      auto w = omega_prime_r(s, r, zeta.data(), z.data()).pruned();
      CHECK(!w.c.empty());
      for (const auto& [m, v] : w.c) {
        (void)v;
        CHECK(mask_degree(m & kZbarMask) == r);
        CHECK(mask_degree(m & (kZetabarMask | kTMask)) == n - r - 1);
        CHECK((m & kZetaMask) == 0u);
      }
    }
    CHECK_THROWS_AS((void)omega_prime_r(s, n, zeta.data(), z.data()), DegreeOutOfRange);
    CHECK_THROWS_AS((void)omega_prime_r(s, -1, zeta.data(), z.data()), DegreeOutOfRange);
    // zero dbar_z oracle: every column of the r >= 1 determinants dies
    auto s0 = s;
    std::fill(s0.dzbar.begin(), s0.dzbar.end(), C(0));
    for (int r = 1; r < n; ++r)
      CHECK(form_norm(omega_prime_r(s0, r, zeta.data(), z.data())) == 0.0);
  }
}

TEST_CASE("bidegree decomposition of omega' matches the determinant forms") {
  const int n = 3;
  TestSections sec(n);
  auto eta = [&](const auto* zeta, const auto* z, const auto& t, auto* out) {
    sec.mixed(zeta, z, t, out);
  };
  Rng rng(13);
  std::vector<C> zeta, z;
  C t;
  for (int trial = 0; trial < 100; ++trial) {
    random_probe(rng, n, zeta, z, t);
    auto s = sample_section<C>(n, eta, zeta.data(), z.data(), t);
    auto pure = project_dzeta_free(omega_prime(s, zeta.data(), z.data()));
    GradedForm<C> total;
    for (int r = 0; r < n; ++r)
      total = total + omega_prime_r(s, r, zeta.data(), z.data());
    CHECK(form_dist(pure, total) < 1e-10);
  }
}

TEST_CASE("split derivatives of simple fields") {
  const int n = 2;
  auto constant = [](const auto* zeta, const auto* /*z*/, const auto& t) {
    using T = std::decay_t<decltype(t)>;
    (void)zeta;
    return GradedForm<T>::monomial(mzetabar(0), T(2.5));
  };
  C zeta[2] = {C(0.3), C(0.1)}, z[2] = {C(0), C(0)}, t(0.4);
  CHECK(form_norm(split_derivative(n, constant, SplitVar::t, zeta, z, t)) == 0.0);
  CHECK(form_norm(split_derivative(n, constant, SplitVar::zetabar, zeta, z, t)) == 0.0);
  CHECK(form_norm(split_derivative(n, constant, SplitVar::zbar, zeta, z, t)) == 0.0);
  // F = t^2 dzetabar1: d_t F = 2t dt ^ dzetabar1
  auto ft = [](const auto* /*zeta*/, const auto* /*z*/, const auto& tt) {
    using T = std::decay_t<decltype(tt)>;
    return GradedForm<T>::monomial(mzetabar(0), tt * tt);
  };
  auto dt = split_derivative(n, ft, SplitVar::t, zeta, z, t);
  auto expect = GradedForm<C>::monomial(mt(), C(1)).wedge(
      GradedForm<C>::monomial(mzetabar(0), C(2) * t));
  CHECK(form_dist(dt, expect) < 1e-14);
  CHECK(form_norm(split_derivative(n, ft, SplitVar::zbar, zeta, z, t)) == 0.0);
}

TEST_CASE("derivation identity for graded kernel pieces") {
  const int n = 3;
  TestSections sec(n);
  auto eta = [&](const auto* zeta, const auto* z, const auto& t, auto* out) {
    sec.mixed(zeta, z, t, out);
  };
  Rng rng(17);
  std::vector<C> zeta, z;
  C t;
  auto field_r = [&](int r) {
    return [&, r](const auto* zt, const auto* zz, const auto& tt) {
      using T = std::decay_t<decltype(tt)>;
      auto s = sample_section<T>(n, eta, zt, zz, tt);
      return omega_prime_r(s, r, zt, zz);
    };
  };
  for (int trial = 0; trial < 100; ++trial) {
    random_probe(rng, n, zeta, z, t);
    for (int r = 0; r <= n; ++r) {
      GradedForm<C> lhs;
      if (r <= n - 1) {
        lhs = lhs + split_derivative(n, field_r(r), SplitVar::t, zeta.data(), z.data(), t);
        lhs = lhs + split_derivative(n, field_r(r), SplitVar::zetabar, zeta.data(), z.data(), t);
      }
      if (r >= 1)
        lhs = lhs + split_derivative(n, field_r(r - 1), SplitVar::zbar, zeta.data(), z.data(), t);
      CHECK(form_norm(lhs) < 1e-8);
    }
  }
}

TEST_CASE("derivation identity for the full kernel form") {
  const int n = 3;
  TestSections sec(n);
  auto eta = [&](const auto* zeta, const auto* z, const auto& t, auto* out) {
    sec.mixed(zeta, z, t, out);
  };
  auto field = [&](const auto* zt, const auto* zz, const auto& tt) {
    using T = std::decay_t<decltype(tt)>;
    auto s = sample_section<T>(n, eta, zt, zz, tt);
    return project_dzeta_free(omega_prime(s, zt, zz));
  };
  Rng rng(19);
  std::vector<C> zeta, z;
  C t;
  for (int trial = 0; trial < 25; ++trial) {
    random_probe(rng, n, zeta, z, t);
    GradedForm<C> lhs =
        split_derivative(n, field, SplitVar::t, zeta.data(), z.data(), t) +
        split_derivative(n, field, SplitVar::zetabar, zeta.data(), z.data(), t) +
        split_derivative(n, field, SplitVar::zbar, zeta.data(), z.data(), t);
    CHECK(form_norm(lhs) < 1e-8);
  }
}

TEST_CASE("form field bidegree bounds are enforced") {
  FormField<C> f;
  f.n = 2;
  f.max_zbar = 0;
  f.max_zetabar_t = 1;
  f.eval = [](const C*, const C*, const C&) {
    return GradedForm<C>::monomial(mzbar(0), C(1));
  };
  C zeta[2] = {C(1), C(0)}, z[2] = {C(0), C(0)};
  CHECK_THROWS_AS((void)f(zeta, z, C(0)), DegreeOutOfRange);
  f.max_zbar = 1;
  CHECK(form_norm(f(zeta, z, C(0))) == 1.0);
}

TEST_CASE("extension is constant transverse to the manifold") {
  auto g = [](const auto* Y, const auto* W) {
    using T = std::decay_t<decltype(Y[0] + W[0])>;
    GradedForm<T> f = GradedForm<T>::scalar(Y[0]);
    f.add(mwbar(1), W[0] * conj(W[1]));
    return f;
  };
  auto eg = extend(g);
  C Y[1] = {C(0.3)}, W[2] = {C(0.2, 0.1), C(-0.4, 0.5)};
  C X1[1] = {C(7.0)}, X2[1] = {C(-3.0)};
  auto v1 = eg(X1, Y, W), v2 = eg(X2, Y, W);
  CHECK(form_dist(v1, v2) == 0.0);
  CHECK(std::abs(v1.coeff(0) - C(0.3)) == 0.0);
  CHECK(std::abs(v1.coeff(mwbar(1)) - W[0] * std::conj(W[1])) == 0.0);
  // dual probe along x1
  using D = Dual<C, 1>;
  D Xd[1] = {D(C(7.0), 0)};
  D Yd[1] = {D(C(0.3))}, Wd[2] = {D(W[0]), D(W[1])};
  auto vd = eg(Xd, Yd, Wd);
  for (const auto& [m, v] : vd.c) {
    (void)m;
    CHECK(std::abs(v.d[0]) == 0.0);
  }
  auto gbad = [](const auto* Y, const auto* W) {
    using T = std::decay_t<decltype(Y[0] + W[0])>;
    (void)W;
    return GradedForm<T>::monomial(mx(0), T(1.0));
  };
  auto ebad = extend(gbad);
  CHECK_THROWS_AS((void)ebad(X1, Y, W), BadCoordinateFrame);
}

/* n=2 graph rho = x1 - |w|^2 */
static DefiningSystem simple_graph_system() {
  DefiningSystem sys;
  sys.n = 2;
  sys.m = 1;
  sys.id = "paraboloid";
  sys.scales = {1.0};
  RealPoly p = RealPoly::zero(4);
  std::array<uint8_t, kMaxVars> e{};
  e[0] = 1;
  p.add_term(1.0, e);
  e = {};
  e[1] = 2;
  p.add_term(-1.0, e);
  e = {};
  e[3] = 2;
  p.add_term(-1.0, e);
  sys.rho = {p};
  sys.chart.center = {C(0), C(0)};
  sys.chart.radius = 0.9;
  sys.finalize();
  return sys;
}

TEST_CASE("restriction substitutes the graph differential") {
  auto sys = simple_graph_system();
  auto g = fit_graph(sys, sys.chart);
  C Y[1] = {C(0.2)}, W[1] = {C(0.3, -0.4)};
  // dx1 -> wbar dw + w dwbar
  auto dx1 = chart_to_ambient(GradedForm<C>::monomial(mx(0), C(1)), 2, 1);
  auto r = restrict_to_M(dx1, g, Y, W).pruned();
  CHECK(r.c.size() == 2);
  CHECK(std::abs(r.coeff(mw(0)) - std::conj(W[0])) < 1e-12);
  CHECK(std::abs(r.coeff(mwbar(0)) - W[0]) < 1e-12);
  // d rho -> 0
  std::vector<C> z(2), xy(4);
  g.ambient(Y, W, z.data());
  to_xy(z.data(), 2, xy.data());
  GradedForm<C> drho;
  drho.add(mx(0), sys.d1[0][0].eval(xy.data()));
  drho.add(my(0), sys.d1[0][2].eval(xy.data()));
  GradedForm<C> dre = GradedForm<C>::monomial(mw(0), C(0.5)) +
                      GradedForm<C>::monomial(mwbar(0), C(0.5));
  GradedForm<C> dim = GradedForm<C>::monomial(mw(0), C(0, -0.5)) +
                      GradedForm<C>::monomial(mwbar(0), C(0, 0.5));
  GradedForm<C> chart_drho = drho + dre * sys.d1[0][1].eval(xy.data()) +
                             dim * sys.d1[0][3].eval(xy.data());
  auto rr = restrict_to_M(chart_to_ambient(chart_drho, 2, 1), g, Y, W);
  CHECK(form_norm(rr) < 1e-10);
}

TEST_CASE("restriction inverts extension on tangential forms") {
  auto sys = simple_graph_system();
  auto g = fit_graph(sys, sys.chart);
  Rng rng(23);
  uint32_t gens[3] = {mwbar(0), mw(0), my(0)};
  for (int trial = 0; trial < 20; ++trial) {
    GradedForm<C> form;
    for (int sub = 0; sub < 8; ++sub) {
      uint32_t mask = 0;
      for (int b = 0; b < 3; ++b)
        if (sub & (1 << b)) mask |= gens[b];
      form.add(mask, C(rng.uniform(-1, 1), rng.uniform(-1, 1)));
    }
    C Y[1] = {C(rng.uniform(-0.5, 0.5))};
    C W[1] = {C(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5))};
    auto back = restrict_to_M(chart_to_ambient(form, 2, 1), g, Y, W);
    CHECK(form_dist(back, form) < 1e-10);
  }
}

TEST_CASE("restriction rejects points outside the chart") {
  auto sys = simple_graph_system();
  auto g = fit_graph(sys, sys.chart);
  C Y[1] = {C(2.0)}, W[1] = {C(0)};
  auto f = chart_to_ambient(GradedForm<C>::monomial(mx(0), C(1)), 2, 1);
  CHECK_THROWS_AS((void)restrict_to_M(f, g, Y, W), OutOfChart);
}

TEST_CASE("high antiholomorphic degree dies under restriction") {
  auto sys = DefiningSystem::from_json_file(data_dir() + "hyperquadric_q1.json");
  auto g = fit_graph(sys, sys.chart);
  uint32_t mask = 0;
  for (int i = 0; i < 3; ++i) mask |= mzetabar(i) | mzeta(i);
  C Y[1] = {C(0.1)}, W[2] = {C(0.2, 0.1), C(-0.1, 0.3)};
  auto r = restrict_to_M(GradedForm<C>::monomial(mask, C(1)), g, Y, W);
  CHECK(form_norm(r) < 1e-12);
}

TEST_CASE("tangential Cauchy-Riemann operator") {
  auto sys = DefiningSystem::from_json_file(data_dir() + "hyperquadric_q1.json");
  auto g = fit_graph(sys, sys.chart);
  C Y[1] = {C(0.15)}, W[2] = {C(0.3, -0.2), C(0.1, 0.25)};

  auto constant = [](const auto* Y_, const auto* W_) {
    using T = std::decay_t<decltype(Y_[0] + W_[0])>;
    return GradedForm<T>::scalar(T(3.0));
  };
  CHECK(form_norm(dbar_M(g, constant, Y, W)) == 0.0);

  auto cr_w = [](const auto* Y_, const auto* W_) {
    using T = std::decay_t<decltype(Y_[0] + W_[0])>;
    return GradedForm<T>::scalar(W_[0] * W_[1]);
  };
  CHECK(form_norm(dbar_M(g, cr_w, Y, W)) < 1e-14);

  // z1 restricted to M is CR: phi(Y,W) + iY annihilated by every Lbar_j
  auto cr_z1 = [&](const auto* Y_, const auto* W_) {
    using T = std::decay_t<decltype(Y_[0] + W_[0])>;
    T X[1];
    g.phi(Y_, W_, X);
    const T iu = from_c<T>(C(0, 1));
    return GradedForm<T>::scalar(X[0] + iu * Y_[0]);
  };
  CHECK(form_norm(dbar_M(g, cr_z1, Y, W)) < 1e-11);

  // zbar1 restricted to M is not CR; its tangential differential is nonzero
  auto anti_z1 = [&](const auto* Y_, const auto* W_) {
    using T = std::decay_t<decltype(Y_[0] + W_[0])>;
    T X[1];
    g.phi(Y_, W_, X);
    const T iu = from_c<T>(C(0, 1));
    return GradedForm<T>::scalar(X[0] - iu * Y_[0]);
  };
  CHECK(form_norm(dbar_M(g, anti_z1, Y, W)) > 1e-3);
}

TEST_CASE("dbar_M input contracts") {
  auto sys = DefiningSystem::from_json_file(data_dir() + "hyperquadric_q1.json");
  auto g = fit_graph(sys, sys.chart);
  C Y[1] = {C(0.1)}, W[2] = {C(0.2), C(0.1)};
  auto top = [](const auto* Y_, const auto* W_) {
    using T = std::decay_t<decltype(Y_[0] + W_[0])>;
    return GradedForm<T>::monomial(mwbar(0) | mwbar(1), T(1.0));
  };
  CHECK_THROWS_AS((void)dbar_M(g, top, Y, W), DegreeOutOfRange);
  auto holo = [](const auto* Y_, const auto* W_) {
    using T = std::decay_t<decltype(Y_[0] + W_[0])>;
    return GradedForm<T>::monomial(mw(0), T(1.0));
  };
  CHECK_THROWS_AS((void)dbar_M(g, holo, Y, W), BadCoordinateFrame);
}

TEST_CASE("tangential operator squares to zero") {
  auto sys = DefiningSystem::from_json_file(data_dir() + "hyperquadric_q1.json");
  auto g = fit_graph(sys, sys.chart);
  auto poly = [](const auto* Y_, const auto* W_) {
    using T = std::decay_t<decltype(Y_[0] + W_[0])>;
    T u = Y_[0] * Y_[0] * conj(W_[0]) + W_[0] * conj(W_[1]) * conj(W_[1]) +
          from_c<T>(C(0.3, 0.7)) * conj(W_[0]) * W_[1] * Y_[0];
    return GradedForm<T>::scalar(u);
  };
  auto first = [&](const auto* Y_, const auto* W_) {
    return dbar_M(g, poly, Y_, W_);
  };
  Rng rng(31);
  for (int trial = 0; trial < 6; ++trial) {
    C Y[1] = {C(rng.uniform(-0.4, 0.4))};
    C W[2] = {C(rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4)),
              C(rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4))};
    CHECK(form_norm(dbar_M(g, first, Y, W)) < 1e-8);
  }
}

TEST_CASE("frame derivative agrees with projected ambient antiholomorphic derivative") {
  auto sys = DefiningSystem::from_json_file(data_dir() + "hyperquadric_q1.json");
  auto g = fit_graph(sys, sys.chart);
  auto u = [](const auto* Y_, const auto* W_) {
    using T = std::decay_t<decltype(Y_[0] + W_[0])>;
    return Y_[0] * conj(W_[0]) + W_[1] * W_[1] * Y_[0] + conj(W_[1]) * W_[0];
  };
  Rng rng(37);
  const int n = 3, m = 1, nw = 2;
  for (int trial = 0; trial < 10; ++trial) {
    C Y[1] = {C(rng.uniform(-0.4, 0.4))};
    C W[2] = {C(rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4)),
              C(rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4))};
    // dbar of the x-independent extension, as a z-group (0,1) kernel form
    using D = Dual<C, 18>;
    D Yd[1] = {D(Y[0], 0)};
    D Wd[2];
    for (int j = 0; j < nw; ++j) {
      Wd[j] = D(W[j]);
      Wd[j].d[m + 2 * j] = C(1);
      Wd[j].d[m + 2 * j + 1] = C(0, 1);
    }
    D ud = u(Yd, Wd);
    GradedForm<C> dbar_ambient;
    for (int k = 0; k < m; ++k) dbar_ambient.add(mzbar(k), C(0, 0.5) * ud.d[k]);
    for (int j = 0; j < nw; ++j)
      dbar_ambient.add(mzbar(m + j), 0.5 * ud.d[m + 2 * j] + C(0, 0.5) * ud.d[m + 2 * j + 1]);
    auto projected = pr_M(dbar_ambient, g, Y, W);
    auto field = [&](const auto* Y_, const auto* W_) {
      using T = std::decay_t<decltype(Y_[0] + W_[0])>;
      return GradedForm<T>::scalar(u(Y_, W_));
    };
    auto frame = dbar_M(g, field, Y, W);
    CHECK(form_dist(projected, frame) < 1e-11);
    (void)n;
  }
}
