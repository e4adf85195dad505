#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "crlab/geometry.hpp"

#include <cmath>

using namespace crlab;

static std::string data_dir() { return std::string(CRLAB_DATA_DIR) + "/manifolds/"; }

/* independent finite-difference oracle for polynomial partials */
static double fd_partial(const RealPoly& p, std::vector<double> xy, int var) {
  const double h = 1e-6;
  auto at = [&](double v) {
    std::vector<C> c(xy.begin(), xy.end());
    c[var] = v;
    return value_of(p.eval(c.data())).real();
  };
  return (at(xy[var] + h) - at(xy[var] - h)) / (2 * h);
}

TEST_CASE("polynomial partials match finite differences") {
  auto sys = DefiningSystem::from_json_file(data_dir() + "hyperquadric_q1.json");
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> xy(6);
    for (auto& v : xy) v = rng.uniform(-1, 1);
    for (int var = 0; var < 6; ++var) {
      std::vector<C> c(xy.begin(), xy.end());
      double exact = value_of(sys.d1[0][var].eval(c.data())).real();
      CHECK(std::abs(exact - fd_partial(sys.rho[0], xy, var)) < 1e-7);
    }
  }
}

TEST_CASE("dual numbers reproduce polynomial gradients exactly") {
  auto sys = DefiningSystem::from_json_file(data_dir() + "quadric22_q2.json");
  Rng rng(11);
  std::vector<Dual<C, 10>> xy(10);
  std::vector<C> plain(10);
  for (int i = 0; i < 10; ++i) {
    double v = rng.uniform(-1, 1);
    plain[i] = v;
    xy[i] = Dual<C, 10>(C(v), i);
  }
  auto r = sys.rho[0].eval(xy.data());
  for (int i = 0; i < 10; ++i) {
    C exact = sys.d1[0][i].eval(plain.data());
    CHECK(std::abs(r.d[i] - exact) < 1e-14);
  }
}

TEST_CASE("Levi form of the hyperquadric is diag(0, s, -s)") {
  auto sys = DefiningSystem::from_json_file(data_dir() + "hyperquadric_q1.json");
  CVecX z = CVecX::Zero(3);
  CMatX L = levi_form(sys, 0, z);
  CHECK(std::abs(L(0, 0)) < 1e-14);
  CHECK(std::abs(L(1, 1) - C(0.5)) < 1e-14);
  CHECK(std::abs(L(2, 2) + C(0.5)) < 1e-14);
  CHECK(std::abs(L(1, 2)) < 1e-14);
  // hermitian at a generic point
  z << C(0.1, 0.2), C(-0.3, 0.05), C(0.2, -0.4);
  L = levi_form(sys, 0, z);
  CHECK((L - L.adjoint()).norm() < 1e-13);
}

TEST_CASE("directional Levi eigenvalues at the hyperquadric center") {
  auto sys = DefiningSystem::from_json_file(data_dir() + "hyperquadric_q1.json");
  CVecX z = CVecX::Zero(3);
  RVecX th(1);
  th << 1.0;
  auto dl = directional_levi(sys, th, z);
  // gradient normalization doubles the raw combination; spectrum is (-1, 1)
  CHECK(dl.eigenvalues.size() == 2);
  CHECK(std::abs(dl.eigenvalues(0) + 1.0) < 1e-12);
  CHECK(std::abs(dl.eigenvalues(1) - 1.0) < 1e-12);
  th << -1.0;
  dl = directional_levi(sys, th, z);
  CHECK(std::abs(dl.eigenvalues(0) + 1.0) < 1e-12);
}

TEST_CASE("directional Levi on the codimension-2 quadric") {
  auto sys = DefiningSystem::from_json_file(data_dir() + "codim2_q1.json");
  CVecX z = CVecX::Zero(5);
  RVecX th(2);
  th << 0.0, -1.0;
  auto dl = directional_levi(sys, th, z);
  CHECK(dl.eigenvalues.size() == 3);
  CHECK(std::abs(dl.eigenvalues(0) + 1.0) < 1e-12);
  CHECK(std::abs(dl.eigenvalues(1) - 1.0) < 1e-12);
  CHECK(std::abs(dl.eigenvalues(2) - 1.0) < 1e-12);
}

TEST_CASE("q-pseudoconcavity certificates on the bundled quadrics") {
  // min margins land well below the center values: the gradient
  // normalization divides the eigenvalues by |grad rho|, which grows
  // toward the box corners
  auto hyper = DefiningSystem::from_json_file(data_dir() + "hyperquadric_q1.json");
  auto c1 = certify_q_pseudoconcave(hyper, 1);
  CHECK(c1.certified);
  CHECK(c1.min_margin > 1e-3);

  auto quad = DefiningSystem::from_json_file(data_dir() + "quadric22_q2.json");
  auto c2 = certify_q_pseudoconcave(quad, 2);
  CHECK(c2.certified);
  CHECK(c2.min_margin > 1e-3);

  auto codim2 = DefiningSystem::from_json_file(data_dir() + "codim2_q1.json");
  auto c3 = certify_q_pseudoconcave(codim2, 1);
  CHECK(c3.certified);
  CHECK(c3.min_margin > 1e-3);
}

TEST_CASE("flat model refuses certification inside the floor") {
  auto flat = DefiningSystem::from_json_file(data_dir() + "flat.json");
  CHECK_THROWS_AS((void)certify_q_pseudoconcave(flat, 1), SamplingTooCoarse);
}

TEST_CASE("over-claimed concavity order is rejected with a witness") {
  auto hyper = DefiningSystem::from_json_file(data_dir() + "hyperquadric_q1.json");
  auto cert = certify_q_pseudoconcave(hyper, 2);  // only 1-pseudoconcave
  CHECK(!cert.certified);
  CHECK(cert.min_margin < 0);
}

TEST_CASE("negative subspaces of the signature-(2,2) quadric") {
  auto sys = DefiningSystem::from_json_file(data_dir() + "quadric22_q2.json");
  CVecX z = CVecX::Zero(5);
  RVecX th(1);
  th << 1.0;
  auto ns = negative_subspaces(sys, th, z, 2);
  // -L_theta - L_{rho^2} = diag(-1/8, -1, -1, 1, 1) up to ordering
  CHECK(std::abs(ns.eigenvalues(0) + 1.0) < 1e-12);
  CHECK(std::abs(ns.eigenvalues(1) + 1.0) < 1e-12);
  CHECK(std::abs(ns.eigenvalues(2) + 0.125) < 1e-12);
  CHECK(std::abs(ns.eigenvalues(3) - 1.0) < 1e-12);
  CHECK(ns.e_basis.cols() == 3);
  CHECK(ns.a_frame.rows() == 2);
  // complement frame lies in span(e4, e5)
  for (int r = 0; r < 2; ++r) {
    double inside = std::norm(ns.a_frame(r, 3)) + std::norm(ns.a_frame(r, 4));
    CHECK(std::abs(inside - 1.0) < 1e-12);
  }
}

TEST_CASE("degenerate spectrum raises an eigenvalue tie") {
  auto flat = DefiningSystem::from_json_file(data_dir() + "flat.json");
  CVecX z = CVecX::Zero(3);
  RVecX th(1);
  th << 1.0;
  CHECK_THROWS_AS((void)negative_subspaces(flat, th, z, 1), EigenvalueTie);
}

TEST_CASE("graph fit reproduces the quadric graph map") {
  auto sys = DefiningSystem::from_json_file(data_dir() + "hyperquadric_q1.json");
  auto g = fit_graph(sys, sys.chart);
  CHECK(g.max_residual < 1e-12);
  C Y[1] = {C(0.3)};
  C W[2] = {C(0.5, 0.0), C(0.0, 0.2)};
  C X[1];
  g.phi(Y, W, X);
  // x1 = -|w1|^2 + |w2|^2
  CHECK(std::abs(X[0] - C(-0.25 + 0.04)) < 1e-12);
  // dual evaluation gives the graph differential; oracle d x1/d Re(w1) = -2 Re(w1)
  Dual<C, 2> Yd[1] = {Dual<C, 2>(C(0.3))};
  Dual<C, 2> Wd[2] = {Dual<C, 2>(C(0.5, 0.0), 0), Dual<C, 2>(C(0.0, 0.2), 1, C(0, 1))};
  Dual<C, 2> Xd[1];
  g.phi(Yd, Wd, Xd);
  CHECK(std::abs(Xd[0].d[0] - C(-1.0)) < 1e-12);  // -2*0.5
  CHECK(std::abs(Xd[0].d[1] - C(0.4)) < 1e-12);   // +2*0.2 along Im(w2)
}

TEST_CASE("graph fit failure modes") {
  DefiningSystem bad;
  bad.n = 2;
  bad.m = 1;
  bad.id = "no-graph";
  bad.scales = {1.0};
  {
    RealPoly p = RealPoly::zero(4);
    std::array<uint8_t, kMaxVars> e{};
    e[0] = 2;  // x1^2
    p.add_term(1.0, e);
    std::array<uint8_t, kMaxVars> one{};
    p.add_term(1.0, one);  // +1, no real root
    bad.rho = {p};
  }
  bad.chart.center = {C(0), C(0)};
  bad.chart.radius = 0.5;
  bad.finalize();
  CHECK_THROWS_AS((void)fit_graph(bad, bad.chart), DegenerateChart);
  bad.chart.center = {C(1.0), C(0)};
  CHECK_THROWS_AS((void)fit_graph(bad, bad.chart), NewtonDiverged);
}

TEST_CASE("tube grid over the flat model has the exact surface measure") {
  auto flat = DefiningSystem::from_json_file(data_dir() + "flat.json");
  GridSpec spec;
  spec.counts = {3, 3, 3, 3, 3};
  auto grid = tube_grid(flat, 0.1, spec);
  CHECK(grid.nodes.size() == 2 * 243);
  // two sheets x1 = +-0.1, box volume 2 * 2^4 each
  CHECK(std::abs(grid.total_surface - 64.0) < 1e-9);
  for (const auto& nd : grid.nodes) CHECK(std::abs(std::abs(nd.zeta[0].real()) - 0.1) < 1e-13);
}

TEST_CASE("tube grid nodes sit on the tube and carry exact Jacobians") {
  auto sys = DefiningSystem::from_json_file(data_dir() + "hyperquadric_q1.json");
  GridSpec spec;
  spec.counts = {2, 3, 2, 3, 2};
  double eps = 0.05;
  auto grid = tube_grid(sys, eps, spec);
  ChartGraph g{&sys, sys.chart};
  std::vector<C> xy(6);
  int checked = 0;
  for (size_t idx = 0; idx < grid.nodes.size(); idx += 17) {
    const auto& nd = grid.nodes[idx];
    to_xy(nd.zeta.data(), 3, xy.data());
    CHECK(std::abs(value_of(sys.tube_radius(xy.data())).real() - eps) < 1e-12);
    // finite-difference check of d zeta / d u for the y1 and Re(w1) directions
    const double h = 1e-6;
    double y1 = nd.zeta[0].imag();
    C W[2] = {nd.zeta[1], nd.zeta[2]};
    C rhs[1] = {C(eps * nd.theta[0])};
    auto solve_at = [&](double y, C w1) {
      C Yv[1] = {C(y)};
      C Wv[2] = {w1, W[1]};
      C X[1];
      g.phi_offset(Yv, Wv, X, rhs);
      return C(X[0].real(), y);
    };
    C dz0_dy1 = (solve_at(y1 + h, W[0]) - solve_at(y1 - h, W[0])) / (2 * h);
    C dz0_drw1 = (solve_at(y1, W[0] + h) - solve_at(y1, W[0] - h)) / (2 * h);
    CHECK(std::abs(nd.jac[0 * 5 + 0] - dz0_dy1) < 1e-7);
    CHECK(std::abs(nd.jac[0 * 5 + 1] - dz0_drw1) < 1e-7);
    ++checked;
  }
  CHECK(checked > 3);
}

TEST_CASE("tube grid on the codimension-2 quadric covers the angular fiber") {
  auto sys = DefiningSystem::from_json_file(data_dir() + "codim2_q1.json");
  GridSpec spec;
  spec.counts = {2, 2, 2, 2, 2, 2, 2, 2};  // m + 2(n-m) = 8 dims
  spec.theta_count = 8;
  auto grid = tube_grid(sys, 0.05, spec);
  CHECK(grid.nodes.size() == 8u * 256u);
  std::vector<C> xy(10);
  for (size_t idx = 0; idx < grid.nodes.size(); idx += 101) {
    const auto& nd = grid.nodes[idx];
    to_xy(nd.zeta.data(), 5, xy.data());
    CHECK(std::abs(value_of(sys.tube_radius(xy.data())).real() - 0.05) < 1e-12);
  }
}

TEST_CASE("tube grid rejects empty layouts") {
  auto flat = DefiningSystem::from_json_file(data_dir() + "flat.json");
  GridSpec spec;
  CHECK_THROWS_AS((void)tube_grid(flat, 0.1, spec), EmptyGrid);
  spec.counts = {3, 3, 0, 3, 3};
  CHECK_THROWS_AS((void)tube_grid(flat, 0.1, spec), EmptyGrid);
}

TEST_CASE("atlas partition of unity sums to one inside the cover") {
  AtlasCover cover;
  for (double cx : {-0.4, 0.4}) {
    CoverPatch p;
    p.chart.center = {C(0), C(cx), C(0)};
    p.chart.radius = 1.0;
    p.weight.cy = {0.0};
    p.weight.cw = {C(cx), C(0)};
    p.weight.plateau = 0.45;
    p.weight.support = 0.9;
    p.plateau_one = p.weight;
    p.plateau_one.plateau = 0.95;
    p.plateau_one.support = 1.4;
    cover.patches.push_back(p);
  }
  Rng rng(3);
  for (int s = 0; s < 50; ++s) {
    double Y[1] = {0.0};
    C W[2] = {C(rng.uniform(-0.6, 0.6), 0), C(0)};
    if (cover.raw_sum(Y, W, 1, 2) < 1e-9) continue;
    C Yc[1] = {C(Y[0])};
    C sum = 0;
    for (size_t i = 0; i < cover.patches.size(); ++i)
      sum += value_of(cover.partition(i, Yc, W, 1, 2));
    CHECK(std::abs(sum - C(1)) < 1e-12);
    // plateau companion is identically 1 wherever its member is active
    for (size_t i = 0; i < cover.patches.size(); ++i) {
      double w = value_of(cover.patches[i].weight.eval(Yc, W, 1, 2)).real();
      if (w > 1e-12)
        CHECK(std::abs(value_of(cover.patches[i].plateau_one.eval(Yc, W, 1, 2)) - C(1)) < 1e-14);
    }
  }
}

TEST_CASE("manifold json round trip") {
  auto sys = DefiningSystem::from_json_file(data_dir() + "codim2_q1.json");
  auto again = DefiningSystem::from_json_text(sys.to_json_text());
  CHECK(again.n == sys.n);
  CHECK(again.m == sys.m);
  Rng rng(5);
  std::vector<C> xy(10);
  for (int t = 0; t < 10; ++t) {
    for (auto& v : xy) v = rng.uniform(-1, 1);
    for (int k = 0; k < sys.m; ++k)
      CHECK(std::abs(sys.rho[k].eval(xy.data()) - again.rho[k].eval(xy.data())) < 1e-14);
  }
}
