#include "crlab/geometry.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>

namespace crlab {

using nlohmann::json;

void DefiningSystem::finalize() {
  const int nv = 2 * n;
  d1.assign(m, {});
  d2.assign(m, {});
  for (int k = 0; k < m; ++k) {
    d1[k].resize(nv);
    d2[k].resize(nv * nv);
    for (int v = 0; v < nv; ++v) d1[k][v] = rho[k].d(v);
    for (int v = 0; v < nv; ++v)
      for (int w = 0; w < nv; ++w) d2[k][v * nv + w] = d1[k][v].d(w);
  }
  rho_sq = RealPoly::zero(nv);
  for (int k = 0; k < m; ++k) rho_sq = rho_sq + rho[k] * rho[k];
  sq_d1.resize(nv);
  sq_d2.resize(nv * nv);
  for (int v = 0; v < nv; ++v) sq_d1[v] = rho_sq.d(v);
  for (int v = 0; v < nv; ++v)
    for (int w = 0; w < nv; ++w) sq_d2[v * nv + w] = sq_d1[v].d(w);
}

DefiningSystem DefiningSystem::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const std::exception& e) {
    throw ConfigInvalid(std::string("manifold json: ") + e.what());
  }
  DefiningSystem s;
  s.n = j.at("n").get<int>();
  s.m = j.at("m").get<int>();
  if (s.n < 2 || s.n > kMaxN || s.m < 1 || s.m >= s.n)
    throw ConfigInvalid("manifold dimensions out of supported range");
  s.q = j.value("q", 0);
  s.id = j.value("id", std::string("manifold"));
  const auto& rr = j.at("rho");
  s.scales.assign(s.m, 1.0);
  if (j.contains("scales")) {
    auto sc = j.at("scales").get<std::vector<double>>();
    if ((int)sc.size() != s.m) throw ConfigInvalid("scales size != m");
    s.scales = sc;
  }
  if ((int)rr.size() != s.m) throw ConfigInvalid("rho size != m");
  for (int k = 0; k < s.m; ++k) {
    RealPoly p = RealPoly::zero(2 * s.n);
    for (const auto& t : rr[k]) {
      std::array<uint8_t, kMaxVars> e{};
      auto ev = t.at("e").get<std::vector<int>>();
      if ((int)ev.size() != 2 * s.n) throw ConfigInvalid("exponent list size != 2n");
      for (int i = 0; i < 2 * s.n; ++i) {
        if (ev[i] < 0 || ev[i] > 12) throw ConfigInvalid("exponent out of range");
        e[i] = uint8_t(ev[i]);
      }
      p.add_term(t.at("c").get<double>() * s.scales[k], e);
    }
    p.normalize();
    if (p.terms.empty()) throw ConfigInvalid("empty defining function");
    s.rho.push_back(p);
  }
  const auto& ch = j.at("chart");
  for (const auto& c : ch.at("center")) s.chart.center.push_back(C(c.at(0).get<double>(), c.at(1).get<double>()));
  if ((int)s.chart.center.size() != s.n) throw ConfigInvalid("chart center size != n");
  s.chart.radius = ch.at("radius").get<double>();
  if (!(s.chart.radius > 0)) throw ConfigInvalid("chart radius must be positive");
  s.finalize();
  return s;
}

DefiningSystem DefiningSystem::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigInvalid("cannot open manifold file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_text(ss.str());
}

std::string DefiningSystem::to_json_text() const {
  json j;
  j["id"] = id;
  j["n"] = n;
  j["m"] = m;
  if (q) j["q"] = q;
  json rr = json::array();
  for (int k = 0; k < m; ++k) {
    json terms = json::array();
    for (const auto& t : rho[k].terms) {
      json tj;
      tj["c"] = t.c / scales[k];
      tj["e"] = std::vector<int>(t.e.begin(), t.e.begin() + 2 * n);
      terms.push_back(tj);
    }
    rr.push_back(terms);
  }
  j["rho"] = rr;
  j["scales"] = scales;
  json cc = json::array();
  for (const auto& c : chart.center) cc.push_back({c.real(), c.imag()});
  j["chart"] = {{"center", cc}, {"radius", chart.radius}};
  return j.dump(2);
}

/* ---- Levi analysis ------------------------------------------------------ */

CMatX levi_form(const DefiningSystem& sys, int k, const CVecX& z) {
  if (k < 0 || k >= sys.m) throw ConfigInvalid("levi_form: bad function index");
  std::vector<C> xy(2 * sys.n);
  to_xy(z.data(), sys.n, xy.data());
  SMat<C> h;
  sys.hess_mixed(k, xy.data(), h);
  CMatX out(sys.n, sys.n);
  for (int i = 0; i < sys.n; ++i)
    for (int j = 0; j < sys.n; ++j) out(i, j) = h(i, j);
  return out;
}

/* orthonormalize the real gradients of the defining functions at z; returns
 * the real m x m combination matrix T (rows give the orthonormal combos) */
static RMatX gradient_orthonormalizer(const DefiningSystem& sys, const std::vector<C>& xy) {
  const int m = sys.m, nv = 2 * sys.n;
  RMatX G(m, nv);
  for (int k = 0; k < m; ++k)
    for (int v = 0; v < nv; ++v) G(k, v) = sys.d1[k][v].eval(xy.data()).real();
  RMatX T = RMatX::Identity(m, m);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < i; ++j) {
      double dot = G.row(i).dot(G.row(j));
      G.row(i) -= dot * G.row(j);
      T.row(i) -= dot * T.row(j);
    }
    double nrm = G.row(i).norm();
    if (nrm < 1e-10) throw DegenerateChart("defining gradients linearly dependent");
    G.row(i) /= nrm;
    T.row(i) /= nrm;
  }
  return T;
}

/* hermitian-orthonormal basis of T^c_z as columns, via projector onto the
 * complement of span{conj(grad_hol rho_k)} */
static CMatX tangent_basis(const DefiningSystem& sys, const std::vector<C>& xy) {
  const int n = sys.n, m = sys.m;
  CMatX nor(m, n);
  std::vector<C> g(n);
  for (int k = 0; k < m; ++k) {
    sys.grad_hol(k, xy.data(), g.data());
    for (int i = 0; i < n; ++i) nor(k, i) = std::conj(g[i]);
  }
  // orthonormalize normal rows
  for (int k = 0; k < m; ++k) {
    for (int j = 0; j < k; ++j) nor.row(k) -= nor.row(j).dot(nor.row(k)) * nor.row(j);
    double nrm = nor.row(k).norm();
    if (nrm < 1e-10) throw DegenerateChart("complex normals degenerate");
    nor.row(k) /= nrm;
  }
  // project the coordinate axes and keep the n-m largest, greedily
  CMatX B(n, n - m);
  std::vector<CVecX> cand;
  for (int i = 0; i < n; ++i) {
    CVecX e = CVecX::Zero(n);
    e(i) = 1;
    for (int k = 0; k < m; ++k) e -= nor.row(k).dot(e) * nor.row(k).adjoint();
    cand.push_back(e);
  }
  int got = 0;
  for (int step = 0; step < n && got < n - m; ++step) {
    int best = -1;
    double bn = 1e-8;
    for (int i = 0; i < n; ++i)
      if (cand[i].norm() > bn) {
        bn = cand[i].norm();
        best = i;
      }
    if (best < 0) throw DegenerateChart("tangent basis extraction failed");
    CVecX u = cand[best] / cand[best].norm();
    B.col(got++) = u;
    for (int i = 0; i < n; ++i) cand[i] -= u.dot(cand[i]) * u;
  }
  return B;
}

DirectionalLevi directional_levi(const DefiningSystem& sys, const RVecX& theta, const CVecX& z) {
  const int n = sys.n, m = sys.m;
  if (theta.size() != m) throw ConfigInvalid("directional_levi: theta size != m");
  std::vector<C> xy(2 * n);
  to_xy(z.data(), n, xy.data());
  RMatX T = gradient_orthonormalizer(sys, xy);
  RVecX combo = T.transpose() * theta;
  CMatX L = CMatX::Zero(n, n);
  for (int k = 0; k < m; ++k) L += combo(k) * levi_form(sys, k, z);
  CMatX B = tangent_basis(sys, xy);
  CMatX Lt = B.adjoint() * (-L) * B;  // directional Levi <theta, L_z(M)> = -L_{rho_theta}
  Eigen::SelfAdjointEigenSolver<CMatX> es((Lt + Lt.adjoint()) / 2.0);
  DirectionalLevi out;
  out.eigenvalues = es.eigenvalues();
  out.tangent_basis = B;
  out.combo = combo;
  return out;
}

static std::vector<RVecX> theta_samples_for(int m, int count) {
  std::vector<RVecX> ths;
  if (m == 1) {
    RVecX a(1), b(1);
    a << 1.0;
    b << -1.0;
    ths = {a, b};
  } else if (m == 2) {
    for (int i = 0; i < count; ++i) {
      double t = 2.0 * M_PI * i / count;
      RVecX v(2);
      v << std::cos(t), std::sin(t);
      ths.push_back(v);
    }
  } else {
    throw ConfigInvalid("theta sampling implemented for m <= 2");
  }
  return ths;
}

LeviCertificate certify_q_pseudoconcave(const DefiningSystem& sys, int q, const CertifyOptions& opt) {
  const int n = sys.n, m = sys.m;
  if (q < 1 || q > n - m) throw ConfigInvalid("certify: q out of range");
  LeviCertificate cert;
  cert.q = q;
  cert.min_margin = 1e300;
  auto ths = theta_samples_for(m, opt.theta_count);
  ChartGraph graph{&sys, sys.chart};
  Rng rng(opt.seed);
  std::vector<CVecX> zs;
  {
    // chart center plus seeded samples of the graph box
    std::vector<C> Y(m);
    std::vector<C> W(n - m), z(n);
    for (int s = 0; s < opt.z_count; ++s) {
      double shrink = 0.9;
      for (int k = 0; k < m; ++k)
        Y[k] = sys.chart.center[k].imag() + (s ? shrink * sys.chart.radius * (2 * rng.u01() - 1) : 0.0);
      for (int j = 0; j < n - m; ++j) {
        C c = sys.chart.center[m + j];
        W[j] = s ? c + shrink * sys.chart.radius * C(2 * rng.u01() - 1, 2 * rng.u01() - 1) : c;
      }
      graph.ambient(Y.data(), W.data(), z.data());
      zs.push_back(Eigen::Map<CVecX>(z.data(), n));
    }
  }
  cert.z_samples = (int)zs.size();
  cert.theta_samples = (int)ths.size();
  cert.certified = true;
  double prev_lambda = 0;
  for (const auto& z : zs) {
    for (size_t ti = 0; ti < ths.size(); ++ti) {
      auto dl = directional_levi(sys, ths[ti], z);
      double lam_q = dl.eigenvalues(q - 1);  // q-th smallest; need <= -floor
      double margin = -lam_q;
      if (ti > 0 && m > 1 && std::signbit(lam_q) != std::signbit(prev_lambda) &&
          std::min(std::abs(lam_q), std::abs(prev_lambda)) < opt.floor)
        throw SamplingTooCoarse("eigenvalue sign crossing between adjacent direction samples");
      prev_lambda = lam_q;
      if (margin < cert.min_margin) {
        cert.min_margin = margin;
        cert.witness_theta = ths[ti];
        cert.witness_z = z;
      }
      if (margin < opt.floor) {
        if (margin > -opt.floor)
          throw SamplingTooCoarse("concavity margin inside the nondegeneracy floor");
        cert.certified = false;
      }
    }
  }
  return cert;
}

NegativeSubspaces negative_subspaces(const DefiningSystem& sys, const RVecX& theta, const CVecX& z,
                                     int q, double tie_tol) {
  const int n = sys.n, m = sys.m;
  const int sel = q + m;
  if (sel < 1 || sel >= n) throw ConfigInvalid("negative_subspaces: q+m out of range");
  std::vector<C> xy(2 * n);
  to_xy(z.data(), n, xy.data());
  RMatX T = gradient_orthonormalizer(sys, xy);
  RVecX combo = T.transpose() * theta;
  CMatX L = CMatX::Zero(n, n);
  for (int k = 0; k < m; ++k) L += combo(k) * levi_form(sys, k, z);
  SMat<C> hs;
  sys.hess_mixed_sq(xy.data(), hs);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) L(i, j) += hs(i, j);
  CMatX B = -(L + L.adjoint()) / 2.0;
  Eigen::SelfAdjointEigenSolver<CMatX> es(B);
  const RVecX& ev = es.eigenvalues();
  double scale = std::max(1.0, std::abs(ev(0)));
  if (ev(sel) - ev(sel - 1) < tie_tol * scale)
    throw EigenvalueTie("spectral gap at the subspace cut is below tolerance");
  NegativeSubspaces out;
  out.eigenvalues = ev;
  out.e_basis = es.eigenvectors().leftCols(sel);
  out.a_frame = es.eigenvectors().rightCols(n - sel).adjoint();
  return out;
}

/* ---- graph fit ----------------------------------------------------------- */

ChartGraph fit_graph(const DefiningSystem& sys, const Chart& chart, int grid_per_dim) {
  const int n = sys.n, m = sys.m;
  ChartGraph g{&sys, chart};
  {
    std::vector<C> xy(2 * n);
    std::vector<C> z0 = chart.center;
    to_xy(z0.data(), n, xy.data());
    RMatX jac(m, m);
    for (int k = 0; k < m; ++k)
      for (int j = 0; j < m; ++j) jac(k, j) = sys.d1[k][j].eval(xy.data()).real();
    Eigen::FullPivLU<RMatX> lu(jac);
    if (!lu.isInvertible()) throw DegenerateChart("graph Jacobian singular at chart center");
  }
  // sample the (Y, W) box by Halton and record the worst Newton residual
  int dims = m + 2 * (n - m);
  int count = 1;
  for (int d = 0; d < dims; ++d) {
    count *= grid_per_dim;
    if (count >= 512) {
      count = 512;
      break;
    }
  }
  std::vector<C> Y(m);
  std::vector<C> W(n - m), z(n), xy(2 * n);
  for (int s = 0; s < count; ++s) {
    int d = 0;
    for (int k = 0; k < m; ++k)
      Y[k] = chart.center[k].imag() + chart.radius * (2 * halton(s, d++) - 1);
    for (int j = 0; j < n - m; ++j) {
      C c = chart.center[m + j];
      W[j] = c + chart.radius * C(2 * halton(s, d++) - 1, 2 * halton(s, d++) - 1);
    }
    g.ambient(Y.data(), W.data(), z.data());
    to_xy(z.data(), n, xy.data());
    for (int k = 0; k < m; ++k)
      g.max_residual = std::max(g.max_residual, std::abs(value_of(sys.rho[k].eval(xy.data()))));
  }
  return g;
}

/* ---- tube grid ----------------------------------------------------------- */

TubeGrid tube_grid(const DefiningSystem& sys, double eps, const GridSpec& spec) {
  const int n = sys.n, m = sys.m;
  if (!(eps > 0)) throw ConfigInvalid("tube_grid: eps must be positive");
  const int dims = m + 2 * (n - m);  // graph parameters per angular fiber
  TubeGrid grid;
  grid.eps = eps;
  grid.n = n;
  grid.m = m;

  // angular fiber: two points for m==1, uniform circle for m==2
  struct Fiber {
    std::vector<double> theta;
    std::vector<double> dtheta;  // d theta / d angle (single angle for m==2)
    double weight;
  };
  std::vector<Fiber> fibers;
  if (m == 1) {
    fibers.push_back({{1.0}, {0.0}, 1.0});
    fibers.push_back({{-1.0}, {0.0}, 1.0});
  } else if (m == 2) {
    int nt = std::max(4, spec.theta_count);
    for (int i = 0; i < nt; ++i) {
      double t = 2.0 * M_PI * (i + 0.5) / nt;
      fibers.push_back({{std::cos(t), std::sin(t)}, {-std::sin(t), std::cos(t)}, 2.0 * M_PI / nt});
    }
  } else {
    throw ConfigInvalid("tube_grid implemented for m <= 2");
  }

  // graph-parameter layout per fiber: product Gauss-Legendre or Halton
  struct PNode {
    std::vector<double> u;
    double w;
  };
  std::vector<PNode> pnodes;
  const Chart& chart = sys.chart;
  auto lo = [&](int d) {
    if (d < m) return chart.center[d].imag() - chart.radius;
    int j = (d - m) / 2;
    bool im = (d - m) % 2;
    return (im ? chart.center[m + j].imag() : chart.center[m + j].real()) - chart.radius;
  };
  double side = 2 * chart.radius;
  if (!spec.counts.empty()) {
    if ((int)spec.counts.size() != dims) throw ConfigInvalid("tube_grid: counts size mismatch");
    long total = 1;
    for (int c : spec.counts) {
      if (c <= 0) throw EmptyGrid("tube_grid: nonpositive count");
      total *= c;
    }
    std::vector<std::vector<double>> xs(dims), ws(dims);
    for (int d = 0; d < dims; ++d) gauss_legendre(spec.counts[d], xs[d], ws[d]);
    std::vector<int> idx(dims, 0);
    for (long t = 0; t < total; ++t) {
      PNode p;
      p.u.resize(dims);
      p.w = 1;
      for (int d = 0; d < dims; ++d) {
        p.u[d] = lo(d) + side * 0.5 * (xs[d][idx[d]] + 1.0);
        p.w *= ws[d][idx[d]] * side * 0.5;
      }
      pnodes.push_back(std::move(p));
      for (int d = dims - 1; d >= 0; --d) {
        if (++idx[d] < spec.counts[d]) break;
        idx[d] = 0;
      }
    }
  } else {
    if (spec.qmc_count <= 0) throw EmptyGrid("tube_grid: no counts and no qmc budget");
    double vol = std::pow(side, dims);
    for (int s = 0; s < spec.qmc_count; ++s) {
      PNode p;
      p.u.resize(dims);
      for (int d = 0; d < dims; ++d) p.u[d] = lo(d) + side * halton(s, d);
      p.w = vol / spec.qmc_count;
      pnodes.push_back(std::move(p));
    }
  }

  ChartGraph graph{&sys, chart};
  const int udims = (m == 1 ? dims : dims + 1);  // +1 angle for m==2
  std::vector<C> Y(m);
  std::vector<C> W(n - m);
  std::vector<C> rhs(m);
  std::vector<C> X(m);
  std::vector<C> xy(2 * n);
  for (const Fiber& f : fibers) {
    for (const auto& p : pnodes) {
      for (int k = 0; k < m; ++k) Y[k] = p.u[k];
      for (int j = 0; j < n - m; ++j) W[j] = C(p.u[m + 2 * j], p.u[m + 2 * j + 1]);
      for (int k = 0; k < m; ++k) rhs[k] = C(eps * f.theta[k]);
      graph.phi_offset(Y.data(), W.data(), X.data(), rhs.data());

      TubeNode node;
      node.zeta.resize(n);
      for (int k = 0; k < m; ++k) node.zeta[k] = C(X[k].real(), Y[k].real());
      for (int j = m; j < n; ++j) node.zeta[j] = W[j - m];
      node.theta.assign(f.theta.begin(), f.theta.end());

      // implicit derivative of X w.r.t. parameters
      to_xy(node.zeta.data(), n, xy.data());
      RMatX dFdx(m, m);
      for (int k = 0; k < m; ++k)
        for (int j = 0; j < m; ++j) dFdx(k, j) = sys.d1[k][j].eval(xy.data()).real();
      Eigen::PartialPivLU<RMatX> lu(dFdx);
      RMatX dFdu(m, udims);
      for (int k = 0; k < m; ++k) {
        int d = 0;
        for (int l = 0; l < m; ++l) dFdu(k, d++) = sys.d1[k][n + l].eval(xy.data()).real();
        for (int j = 0; j < n - m; ++j) {
          dFdu(k, d++) = sys.d1[k][m + j].eval(xy.data()).real();
          dFdu(k, d++) = sys.d1[k][n + m + j].eval(xy.data()).real();
        }
        if (m == 2) dFdu(k, d++) = -eps * f.dtheta[k];
      }
      RMatX dXdu = -lu.solve(dFdu);

      node.jac.assign(size_t(n) * udims, C(0));
      auto J = [&](int i, int d) -> C& { return node.jac[size_t(i) * udims + d]; };
      for (int i = 0; i < m; ++i)
        for (int d = 0; d < udims; ++d) J(i, d) = dXdu(i, d);
      for (int l = 0; l < m; ++l) J(l, l) += C(0, 1);  // zeta_l = X_l + i Y_l
      for (int j = 0; j < n - m; ++j) {
        J(m + j, m + 2 * j) = C(1, 0);
        J(m + j, m + 2 * j + 1) = C(0, 1);
      }

      // Riemannian surface weight via the real Gram determinant
      RMatX R(2 * n, udims);
      for (int i = 0; i < n; ++i)
        for (int d = 0; d < udims; ++d) {
          R(i, d) = J(i, d).real();
          R(n + i, d) = J(i, d).imag();
        }
      double gram = (R.transpose() * R).determinant();
      node.w_param = p.w * f.weight;
      node.w_surf = node.w_param * std::sqrt(std::max(0.0, gram));
      grid.total_surface += node.w_surf;
      grid.nodes.push_back(std::move(node));
    }
  }
  if (grid.nodes.empty()) throw EmptyGrid("tube_grid produced no nodes");
  return grid;
}

double AtlasCover::raw_sum(const double* Y, const C* W, int m, int nw) const {
  double s = 0;
  for (const auto& p : patches) {
    std::vector<double> yv(Y, Y + m);
    std::vector<C> wv(W, W + nw);
    std::vector<C> ys(m);
    for (int k = 0; k < m; ++k) ys[k] = C(yv[k], 0);
    s += value_of(p.weight.eval(ys.data(), wv.data(), m, nw)).real();
  }
  return s;
}

}  // namespace crlab
