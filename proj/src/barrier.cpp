#include "crlab/barrier.hpp"

#include <algorithm>
#include <cmath>

namespace crlab {

Barrier build_barrier(const DefiningSystem& sys, int q, const Chart& chart,
                      BarrierOptions opt) {
  Barrier b;
  b.sys = sys;
  b.sys.chart = chart;
  b.q = q;
  b.opt = opt;
  if (q < 0 || q + sys.m >= sys.n)
    throw ConfigInvalid("barrier: q + m must stay below n");
  /* Normalize each defining function by its gradient size at the chart
   * center. This pins the balance between the Levi term and the rho^2
   * term of the construction and cancels any common rescaling of the
   * defining functions exactly. */
  std::vector<C> xy(2 * sys.n);
  to_xy(chart.center.data(), sys.n, xy.data());
  for (int k = 0; k < sys.m; ++k) {
    double s2 = 0;
    for (int v = 0; v < 2 * sys.n; ++v) {
      double g = b.sys.d1[k][v].eval(xy.data()).real();
      s2 += g * g;
    }
    double s = std::sqrt(s2);
    if (s < 1e-10) throw DegenerateChart("defining gradient vanishes at the chart center");
    for (auto& t : b.sys.rho[k].terms) t.c /= s;
    b.sys.scales[k] /= s;
  }
  b.sys.finalize();
  if (q >= 1) {
    LeviCertificate cert = certify_q_pseudoconcave(b.sys, q);
    if (!cert.certified)
      throw ConfigInvalid("chart is not q-pseudoconcave at the requested order");
    b.cert_margin = cert.min_margin;
  }
  b.graph = fit_graph(b.sys, chart);
  b.graph.sys = &b.sys;
  return b;
}

Barrier build_barrier(const DefiningSystem& sys, int q, BarrierOptions opt) {
  return build_barrier(sys, q, sys.chart, opt);
}

BarrierSection interpolated_section(const Barrier& b) { return BarrierSection{&b}; }

namespace {

/* flat layout of a (z, zeta) pair in graph coordinates with tube offsets:
 * [Y_z | Re/Im W_z | Y_zeta | Re/Im W_zeta | delta] */
struct PairParams {
  int n, m, nw, total;
  explicit PairParams(const Barrier& b)
      : n(b.n()), m(b.m()), nw(b.n() - b.m()), total(2 * (b.m() + 2 * (b.n() - b.m())) + b.m()) {}
  int z_at() const { return 0; }
  int zeta_at() const { return m + 2 * nw; }
  int delta_at() const { return 2 * (m + 2 * nw); }
};

template <class S>
void pair_points(const Barrier& b, const PairParams& pp, const S* p, S* zeta, S* z) {
  const S iu = from_c<S>(C(0, 1));
  std::vector<S> Y(pp.m), W(pp.nw), X(pp.m);
  for (int k = 0; k < pp.m; ++k) Y[k] = p[pp.z_at() + k];
  for (int j = 0; j < pp.nw; ++j)
    W[j] = p[pp.z_at() + pp.m + 2 * j] + iu * p[pp.z_at() + pp.m + 2 * j + 1];
  b.graph.phi(Y.data(), W.data(), X.data());
  for (int k = 0; k < pp.m; ++k) z[k] = X[k] + iu * Y[k];
  for (int j = 0; j < pp.nw; ++j) z[pp.m + j] = W[j];
  for (int k = 0; k < pp.m; ++k) Y[k] = p[pp.zeta_at() + k];
  for (int j = 0; j < pp.nw; ++j)
    W[j] = p[pp.zeta_at() + pp.m + 2 * j] + iu * p[pp.zeta_at() + pp.m + 2 * j + 1];
  b.graph.phi_offset(Y.data(), W.data(), X.data(), p + pp.delta_at());
  for (int k = 0; k < pp.m; ++k) zeta[k] = X[k] + iu * Y[k];
  for (int j = 0; j < pp.nw; ++j) zeta[pp.m + j] = W[j];
}

/* |Phi|^2 / (rho + |zeta - z|^2)^2, the squared barrier ratio */
template <class S> S ratio_sq(const Barrier& b, const S* zeta, const S* z) {
  auto ev = b.eval(zeta, z);
  S d2(0.0);
  for (int i = 0; i < b.n(); ++i) d2 += (zeta[i] - z[i]) * conj(zeta[i] - z[i]);
  S den = b.rho_norm(zeta) + d2;
  return ev.phi * conj(ev.phi) / (den * den);
}

}  // namespace

BarrierCheck verify_barrier(const Barrier& b, const VerifyOptions& vo) {
  const PairParams pp(b);
  const double halfw = 0.6 * b.graph.chart.radius;
  Rng rng(vo.seed);
  BarrierCheck out;
  out.min_ratio = 1e300;
  std::vector<std::pair<double, std::vector<double>>> worst;
  std::vector<double> p(pp.total);
  std::vector<C> pc(pp.total), zeta(pp.n), z(pp.n);
  for (int s = 0; s < vo.samples; ++s) {
    for (int i = 0; i < pp.delta_at(); ++i) p[i] = rng.uniform(-halfw, halfw);
    for (int k = 0; k < pp.m; ++k) {
      double mag = vo.eps_max * (1e-3 + 0.999 * rng.u01());
      p[pp.delta_at() + k] = rng.u01() < 0.5 ? -mag : mag;
    }
    double r;
    try {
      for (int i = 0; i < pp.total; ++i) pc[i] = C(p[i]);
      pair_points(b, pp, pc.data(), zeta.data(), z.data());
      r = std::sqrt(value_of(ratio_sq(b, zeta.data(), z.data())).real());
    } catch (const Error&) {
      continue;
    }
    if (r < out.min_ratio) {
      out.min_ratio = r;
      out.witness_zeta = Eigen::Map<CVecX>(zeta.data(), pp.n);
      out.witness_z = Eigen::Map<CVecX>(z.data(), pp.n);
    }
    worst.push_back({r, p});
    std::sort(worst.begin(), worst.end(),
              [](const auto& a, const auto& c) { return a.first < c.first; });
    if ((int)worst.size() > vo.descent_from) worst.pop_back();
    ++out.samples;
  }
  if (out.samples == 0) {
    out.min_ratio = out.refined_ratio = 0;
    return out;
  }
  /* Random sampling cannot certify the absence of a Phi zero: it lives on a
   * codimension-2 set the sweep almost surely misses. Descend on the squared
   * ratio from the worst samples to hunt for a crossing; a healthy barrier
   * bottoms out near its true constant instead. */
  out.refined_ratio = out.min_ratio;
  using D = Dual<C, 24>;
  for (auto& [r0, pw] : worst) {
    std::vector<double> cur = pw;
    double lr = 1e-3, fcur = r0 * r0;
    for (int it = 0; it < vo.descent_iters && lr > 1e-14; ++it) {
      std::vector<D> pd(pp.total), zetad(pp.n), zd(pp.n);
      for (int i = 0; i < pp.total; ++i) {
        pd[i] = D(C(cur[i]));
        pd[i].d[i] = C(1);
      }
      D f2;
      try {
        pair_points(b, pp, pd.data(), zetad.data(), zd.data());
        f2 = ratio_sq(b, zetad.data(), zd.data());
      } catch (const Error&) {
        break;
      }
      fcur = f2.v.real();
      if (fcur < vo.ratio_floor * vo.ratio_floor * 1e-4) break;  // found a crossing
      double gn = 0;
      for (int i = 0; i < pp.total; ++i) gn += f2.d[i].real() * f2.d[i].real();
      gn = std::sqrt(gn);
      if (gn < 1e-16) break;
      bool stepped = false;
      for (int bt = 0; bt < 30 && !stepped; ++bt, lr *= 0.5) {
        std::vector<double> trial(pp.total);
        for (int i = 0; i < pp.total; ++i) trial[i] = cur[i] - lr * f2.d[i].real() / gn;
        for (int i = 0; i < pp.delta_at(); ++i)
          trial[i] = std::clamp(trial[i], -halfw, halfw);
        for (int k = 0; k < pp.m; ++k) {
          double& d = trial[pp.delta_at() + k];
          double mag = std::clamp(std::abs(d), 1e-6, vo.eps_max);
          d = std::copysign(mag, d);
        }
        try {
          std::vector<C> tc(pp.total), zt(pp.n), zzt(pp.n);
          for (int i = 0; i < pp.total; ++i) tc[i] = C(trial[i]);
          pair_points(b, pp, tc.data(), zt.data(), zzt.data());
          double ft = value_of(ratio_sq(b, zt.data(), zzt.data())).real();
          if (ft < fcur) {
            cur = trial;
            fcur = ft;
            stepped = true;
            lr *= 4.0;
          }
        } catch (const Error&) {
        }
      }
      if (!stepped) break;
    }
    out.refined_ratio = std::min(out.refined_ratio, std::sqrt(std::max(fcur, 0.0)));
  }
  out.passed = out.refined_ratio > vo.ratio_floor;
  return out;
}

TaylorReport verify_re_phi_taylor(const Barrier& b, const RVecX& Yz, const CVecX& Wz,
                                  const CVecX& direction, const std::vector<double>& ladder) {
  const int n = b.n(), m = b.m();
  TaylorReport rep;
  std::vector<C> Y(m), W(n - m), z(n);
  for (int k = 0; k < m; ++k) Y[k] = C(Yz(k));
  for (int j = 0; j < n - m; ++j) W[j] = Wz(j);
  b.graph.ambient(Y.data(), W.data(), z.data());
  std::vector<C> xy(2 * n);
  to_xy(z.data(), n, xy.data());
  SMat<C> hsq(n, n), hk(n, n);
  b.sys.hess_mixed_sq(xy.data(), hsq);
  std::vector<C> zeta(n);
  for (double h : ladder) {
    for (int i = 0; i < n; ++i) zeta[i] = z[i] + h * direction(i);
    auto ev = b.eval(zeta.data(), z.data());
    double rho = value_of(b.rho_norm(zeta.data())).real();
    double lth = 0, lsq = 0;
    for (int k = 0; k < m; ++k) {
      b.sys.hess_mixed(k, xy.data(), hk);
      C acc(0);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          acc += hk(i, j) * (zeta[i] - z[i]) * std::conj(zeta[j] - z[j]);
      lth += value_of(ev.theta[k]).real() * acc.real();
    }
    {
      C acc(0);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
          acc += hsq(i, j) * (zeta[i] - z[i]) * std::conj(zeta[j] - z[j]);
      lsq = acc.real();
    }
    double model = 0.5 * (rho - rho * rho + lth + lsq) + value_of(ev.amount).real();
    rep.h.push_back(h);
    rep.residual.push_back(std::abs(value_of(ev.phi).real() - model));
  }
  double mx = 0;
  for (double r : rep.residual) mx = std::max(mx, r);
  if (mx < 1e-13) {
    rep.exact_to_machine = true;
    rep.slope = 99;
    return rep;
  }
  // least-squares slope on the log-log ladder, skipping floored residuals
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int cnt = 0;
  for (size_t i = 0; i < rep.h.size(); ++i) {
    if (rep.residual[i] < 1e-14) continue;
    double x = std::log(rep.h[i]), y = std::log(rep.residual[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++cnt;
  }
  if (cnt < 2) {
    rep.exact_to_machine = true;
    rep.slope = 99;
    return rep;
  }
  rep.slope = (cnt * sxy - sx * sy) / (cnt * sxx - sx * sx);
  return rep;
}

PositivityReport verify_positivity(const Barrier& b, int theta_count, int z_count,
                                   uint64_t seed) {
  const int n = b.n(), m = b.m();
  PositivityReport rep;
  rep.min_eig = 1e300;
  rep.max_selected_form = -1e300;
  Rng rng(seed);
  std::vector<RVecX> thetas;
  if (m == 1) {
    thetas.push_back(RVecX::Constant(1, 1.0));
    thetas.push_back(RVecX::Constant(1, -1.0));
  } else {
    for (int t = 0; t < theta_count; ++t) {
      RVecX th(m);
      double nrm = 0;
      for (int k = 0; k < m; ++k) {
        th(k) = rng.normal();
        nrm += th(k) * th(k);
      }
      thetas.push_back(th / std::sqrt(nrm));
    }
  }
  std::vector<C> Y(m), W(n - m), z(n), xy(2 * n);
  SMat<C> hm(n, n);
  for (int s = 0; s < z_count; ++s) {
    for (int k = 0; k < m; ++k)
      Y[k] = b.graph.chart.center[k].imag() +
             (s ? 0.8 * b.graph.chart.radius * (2 * rng.u01() - 1) : 0.0);
    for (int j = 0; j < n - m; ++j) {
      C c = b.graph.chart.center[m + j];
      W[j] = s ? c + 0.8 * b.graph.chart.radius * C(2 * rng.u01() - 1, 2 * rng.u01() - 1) : c;
    }
    b.graph.ambient(Y.data(), W.data(), z.data());
    to_xy(z.data(), n, xy.data());
    CVecX zv = Eigen::Map<CVecX>(z.data(), n);
    for (const auto& th : thetas) {
      // raw theta combination: the quadratic term of the Re Phi expansion
      CMatX H = CMatX::Zero(n, n);
      for (int k = 0; k < m; ++k) {
        b.sys.hess_mixed(k, xy.data(), hm);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) H(i, j) += th(k) * hm(i, j);
      }
      b.sys.hess_mixed_sq(xy.data(), hm);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) H(i, j) += hm(i, j);
      CMatX Hraw = (H + H.adjoint()) / 2.0;
      std::vector<C> thc(m);
      for (int k = 0; k < m; ++k) thc[k] = C(th(k));
      SMat<C> Pi = b.complement_projector(thc, z.data());
      CMatX Hfull = Hraw / 2.0;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) Hfull(i, j) += Pi(i, j);
      Eigen::SelfAdjointEigenSolver<CMatX> es((Hfull + Hfull.adjoint()) / 2.0);
      rep.min_eig = std::min(rep.min_eig, es.eigenvalues()(0));
      auto ns = negative_subspaces(b.sys, th, zv, b.q, b.opt.tie_tol);
      for (int c = 0; c < ns.e_basis.cols(); ++c) {
        CVecX v = ns.e_basis.col(c);
        double val = -(v.adjoint() * Hraw * v)(0).real();
        rep.max_selected_form = std::max(rep.max_selected_form, val);
      }
      ++rep.samples;
    }
  }
  rep.positive = rep.min_eig > 0 && rep.max_selected_form < 0;
  return rep;
}

FormField<C> h_kernel(const Barrier& b, int r) {
  if (r < 1 || r > b.n() - 1)
    throw DegreeOutOfRange("kernel piece needs 1 <= r <= n-1");
  FormField<C> f;
  f.n = b.n();
  f.max_zbar = r;
  f.max_zetabar_t = b.n() - 1 - r;
  const Barrier* bp = &b;
  f.eval = [bp, r](const C* zeta, const C* z, const C& t) {
    auto sec = [bp](const auto* zt, const auto* zz, const auto& tt, auto* out) {
      (void)tt;
      auto ev = bp->eval(zt, zz);
      if (std::abs(value_of(ev.phi)) < bp->opt.phi_floor)
        throw SingularPoint("Phi below floor");
      for (int i = 0; i < bp->n(); ++i) out[i] = ev.p[i] / ev.phi;
    };
    auto s = sample_section<C>(bp->n(), sec, zeta, z, t);
    return omega_prime_r(s, r, zeta, z).wedge(omega_holo<C>(bp->n()));
  };
  return f;
}

HVanishReport check_h_vanishing(const Barrier& b, int r, int probes, uint64_t seed) {
  auto field = h_kernel(b, r);
  const int n = b.n(), m = b.m();
  const double halfw = 0.55 * b.graph.chart.radius;
  Rng rng(seed);
  HVanishReport rep;
  std::vector<C> Y(m), W(n - m), X(m), delta(m), zeta(n), z(n), zy(m), zw(n - m);
  int attempts = 0;
  while (rep.probes < probes) {
    if (++attempts > 50 * probes)
      throw SamplingTooCoarse("too few usable probes inside the chart");
    for (int k = 0; k < m; ++k) Y[k] = C(rng.uniform(-halfw, halfw));
    for (int j = 0; j < n - m; ++j)
      W[j] = C(rng.uniform(-halfw, halfw), rng.uniform(-halfw, halfw));
    for (int k = 0; k < m; ++k) {
      double mag = rng.uniform(0.02, 0.15);
      delta[k] = C(rng.u01() < 0.5 ? -mag : mag);
    }
    for (int k = 0; k < m; ++k) zy[k] = C(rng.uniform(-halfw, halfw));
    for (int j = 0; j < n - m; ++j)
      zw[j] = C(rng.uniform(-halfw, halfw), rng.uniform(-halfw, halfw));
    try {
      b.graph.phi_offset(Y.data(), W.data(), X.data(), delta.data());
      for (int k = 0; k < m; ++k) zeta[k] = X[k] + C(0, 1) * Y[k];
      for (int j = 0; j < n - m; ++j) zeta[m + j] = W[j];
      b.graph.ambient(zy.data(), zw.data(), z.data());
      double d2 = 0;
      for (int i = 0; i < n; ++i) d2 += std::norm(zeta[i] - z[i]);
      if (d2 < 0.01) continue;
      rep.max_coeff = std::max(rep.max_coeff, form_norm(field(zeta.data(), z.data(), C(0))));
    } catch (const Error&) {
      continue;
    }
    ++rep.probes;
  }
  return rep;
}

MuChiReport mu_chi_split(const Barrier& b, int probes, uint64_t seed) {
  const int n = b.n(), m = b.m(), nc = b.complement_dim();
  const double halfw = 0.5 * b.graph.chart.radius;
  Rng rng(seed);
  MuChiReport rep;
  using D = Dual<C, 2 * kMaxN>;
  std::vector<C> Y(m), W(n - m), X(m), delta(m), zeta(n), z(n), zy(m), zw(n - m);
  SMat<C> hsq(n, n);
  int attempts = 0;
  while (rep.probes < probes) {
    if (++attempts > 50 * probes)
      throw SamplingTooCoarse("too few usable probes inside the chart");
    for (int k = 0; k < m; ++k) Y[k] = C(rng.uniform(-halfw, halfw));
    for (int j = 0; j < n - m; ++j)
      W[j] = C(rng.uniform(-halfw, halfw), rng.uniform(-halfw, halfw));
    for (int k = 0; k < m; ++k) {
      double mag = rng.uniform(0.02, 0.12);
      delta[k] = C(rng.u01() < 0.5 ? -mag : mag);
    }
    for (int k = 0; k < m; ++k) zy[k] = C(rng.uniform(-halfw, halfw));
    for (int j = 0; j < n - m; ++j)
      zw[j] = C(rng.uniform(-halfw, halfw), rng.uniform(-halfw, halfw));
    try {
      b.graph.phi_offset(Y.data(), W.data(), X.data(), delta.data());
      for (int k = 0; k < m; ++k) zeta[k] = X[k] + C(0, 1) * Y[k];
      for (int j = 0; j < n - m; ++j) zeta[m + j] = W[j];
      b.graph.ambient(zy.data(), zw.data(), z.data());
      double d2 = 0;
      for (int i = 0; i < n; ++i) d2 += std::norm(zeta[i] - z[i]);
      if (d2 < 0.01) continue;

      std::vector<D> zd(n), zc(n);
      for (int i = 0; i < n; ++i) {
        zd[i] = D(zeta[i]);
        zd[i].d[2 * i] = C(1);
        zd[i].d[2 * i + 1] = C(0, 1);
        zc[i] = D(z[i]);
      }
      auto thd = b.theta(zd.data());
      RVecX thv(m);
      for (int k = 0; k < m; ++k) thv(k) = value_of(thd[k]).real();
      CMatX ref = b.a_frame_ref(thv, Eigen::Map<CVecX>(z.data(), n));
      SMat<D> A = b.a_frame_smooth(thd, zc.data(), ref);
      for (int j = 0; j < nc; ++j) {
        D Aj(0.0);
        for (int i = 0; i < n; ++i) Aj += A(j, i) * (zd[i] - zc[i]);
        D Abar = conj(Aj);
        GradedForm<C> lhs, tau, nu;
        for (int g = 0; g < n; ++g) {
          lhs.add(mzetabar(g), 0.5 * Abar.d[2 * g] + C(0, 0.5) * Abar.d[2 * g + 1]);
          tau.add(mzetabar(g), std::conj(value_of(A(j, g))));
          C acc(0);
          for (int i = 0; i < n; ++i) {
            D abar = conj(A(j, i));
            acc += std::conj(zeta[i] - z[i]) *
                   (0.5 * abar.d[2 * g] + C(0, 0.5) * abar.d[2 * g + 1]);
          }
          nu.add(mzetabar(g), acc);
        }
        rep.max_mu_residual = std::max(rep.max_mu_residual, form_dist(lhs, tau + nu));
        rep.max_mu_nu = std::max(rep.max_mu_nu, form_norm(nu));
      }
      auto evd = b.eval(zd.data(), zc.data());
      std::vector<C> xy(2 * n);
      to_xy(z.data(), n, xy.data());
      b.sys.hess_hol_sq(xy.data(), hsq);
      for (int k = 0; k < m; ++k)
        for (int i = 0; i < n; ++i) {
          C hw(0);
          for (int j = 0; j < n; ++j) hw += hsq(i, j) * (zeta[j] - z[j]);
          GradedForm<C> lhs, chi;
          for (int g = 0; g < n; ++g) {
            const D& qv = evd.q[size_t(k) * n + i];
            lhs.add(mzetabar(g), 0.5 * qv.d[2 * g] + C(0, 0.5) * qv.d[2 * g + 1]);
            chi.add(mzetabar(g),
                    -0.5 * hw * (0.5 * thd[k].d[2 * g] + C(0, 0.5) * thd[k].d[2 * g + 1]));
          }
          rep.max_chi_residual = std::max(rep.max_chi_residual, form_dist(lhs, chi));
          rep.max_chi = std::max(rep.max_chi, form_norm(chi));
        }
    } catch (const Error&) {
      continue;
    }
    ++rep.probes;
  }
  return rep;
}

}  // namespace crlab
