#pragma once
#include "crlab/forms.hpp"
#include "crlab/geometry.hpp"

/* Strong barrier for a pseudoconcave defining system: the support-function
 * analog Phi = <P, zeta - z> built from theta-weighted Levi polynomials plus
 * a positive hermitian correction on the complement subspace. All evaluation
 * paths are generic over the scalar so kernel code can push dual numbers
 * through theta, the spectral projector, P and Phi. */

namespace crlab {

struct BarrierOptions {
  double tie_tol = 1e-6;     // spectral gap floor at the subspace cut
  int sign_iters = 60;       // Newton-Schulz cap for the spectral projector
  int settle_passes = 3;     // extra iterations after value convergence (duals)
  double dist_floor = 1e-9;  // section refuses |zeta - z| below this
  double phi_floor = 1e-12;  // section refuses |Phi| below this
  double theta_sign = -1.0;  // +1 deliberately falsifies theta (verifier failure path)
};

template <class S> struct BarrierEval {
  std::vector<S> theta;  // m
  std::vector<S> q;      // m x n row-major, row k = Q^{(k)}
  std::vector<S> f;      // m
  std::vector<S> p;      // n
  S phi;
  S amount;  // the hermitian sum A = sum_j |A_j|^2 = <Pi w, w>
};

namespace detail {
template <class S> SMat<S> smat_mul(const SMat<S>& a, const SMat<S>& b) {
  SMat<S> r(a.r, b.c);
  for (int i = 0; i < a.r; ++i)
    for (int k = 0; k < a.c; ++k) {
      const S& v = a(i, k);
      for (int j = 0; j < b.c; ++j) r(i, j) += v * b(k, j);
    }
  return r;
}
}  // namespace detail

struct Barrier {
  DefiningSystem sys;  // defining functions normalized by gradient size at the center
  ChartGraph graph;    // points at this->sys; copies and moves re-target it
  int q = 0;
  BarrierOptions opt;
  double cert_margin = 0;

  Barrier() = default;
  Barrier(const Barrier& o)
      : sys(o.sys), graph(o.graph), q(o.q), opt(o.opt), cert_margin(o.cert_margin) {
    graph.sys = &sys;
  }
  Barrier(Barrier&& o) noexcept
      : sys(std::move(o.sys)), graph(std::move(o.graph)), q(o.q), opt(o.opt),
        cert_margin(o.cert_margin) {
    graph.sys = &sys;
  }
  Barrier& operator=(Barrier o) noexcept {
    std::swap(sys, o.sys);
    std::swap(graph, o.graph);
    std::swap(q, o.q);
    std::swap(opt, o.opt);
    std::swap(cert_margin, o.cert_margin);
    graph.sys = &sys;
    return *this;
  }

  int n() const { return sys.n; }
  int m() const { return sys.m; }
  int complement_dim() const { return sys.n - q - sys.m; }

  /* rho(zeta) = sqrt(sum_k rho_k^2), the tube distance function */
  template <class S> S rho_norm(const S* zeta) const {
    std::vector<S> xy(2 * sys.n), r(sys.m);
    to_xy(zeta, sys.n, xy.data());
    sys.eval_rho(xy.data(), r.data());
    S acc(0.0);
    for (int k = 0; k < sys.m; ++k) acc += r[k] * r[k];
    return sqrt(acc);
  }

  template <class S> std::vector<S> theta(const S* zeta) const {
    std::vector<S> xy(2 * sys.n), th(sys.m);
    to_xy(zeta, sys.n, xy.data());
    sys.eval_rho(xy.data(), th.data());
    S acc(0.0);
    for (int k = 0; k < sys.m; ++k) acc += th[k] * th[k];
    S r = sqrt(acc);
    if (std::abs(value_of(r)) < 1e-300) throw SingularPoint("theta undefined on M");
    for (int k = 0; k < sys.m; ++k) th[k] = opt.theta_sign * th[k] / r;
    return th;
  }

  /* -L_{rho_theta} - L_{rho^2} at z with the gradient-orthonormalized
   * combination, mirroring the eigen-selection of negative_subspaces */
  template <class S> SMat<S> quadratic_form(const std::vector<S>& th, const S* z) const {
    const int n = sys.n, m = sys.m;
    std::vector<S> xy(2 * n);
    to_xy(z, n, xy.data());
    // modified Gram-Schmidt on the real gradients, tracking the transform
    SMat<S> G(m, 2 * n), T(m, m);
    for (int k = 0; k < m; ++k) {
      T(k, k) = S(1.0);
      for (int v = 0; v < 2 * n; ++v) G(k, v) = re_part(sys.d1[k][v].eval(xy.data()));
    }
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < i; ++j) {
        S dot(0.0);
        for (int v = 0; v < 2 * n; ++v) dot += G(i, v) * G(j, v);
        for (int v = 0; v < 2 * n; ++v) G(i, v) -= dot * G(j, v);
        for (int l = 0; l < m; ++l) T(i, l) -= dot * T(j, l);
      }
      S nrm(0.0);
      for (int v = 0; v < 2 * n; ++v) nrm += G(i, v) * G(i, v);
      nrm = sqrt(nrm);
      if (std::abs(value_of(nrm)) < 1e-10)
        throw DegenerateChart("defining gradients linearly dependent");
      for (int v = 0; v < 2 * n; ++v) G(i, v) = G(i, v) / nrm;
      for (int l = 0; l < m; ++l) T(i, l) = T(i, l) / nrm;
    }
    std::vector<S> combo(m);
    for (int k = 0; k < m; ++k) {
      combo[k] = S(0.0);
      for (int l = 0; l < m; ++l) combo[k] += T(l, k) * th[l];
    }
    SMat<S> B(n, n), H(n, n);
    sys.hess_mixed_sq(xy.data(), H);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) B(i, j) = S(-1.0) * H(i, j);
    for (int k = 0; k < m; ++k) {
      sys.hess_mixed(k, xy.data(), H);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) B(i, j) -= combo[k] * H(i, j);
    }
    // hermitize
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < i; ++j) {
        S s = (B(i, j) + conj(B(j, i))) * 0.5;
        B(i, j) = s;
        B(j, i) = conj(s);
      }
    return B;
  }

  /* Orthogonal projector onto the complement of the q+m most negative
   * directions of quadratic_form, via the matrix sign function. The Newton-
   * Schulz iteration is plain polynomial algebra, so dual parts ride along
   * and converge to the spectral-projector derivative. The cut point and
   * scaling come from the value-level spectrum; the projector is locally
   * constant in both, so seeding them as constants is exact. */
  template <class S> SMat<S> complement_projector(const std::vector<S>& th, const S* z) const {
    const int n = sys.n;
    const int sel = q + sys.m;
    SMat<S> B = quadratic_form(th, z);
    CMatX Bv(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) Bv(i, j) = value_of(B(i, j));
    Eigen::SelfAdjointEigenSolver<CMatX> es(Bv);
    const RVecX& ev = es.eigenvalues();
    double scale = std::max(1.0, std::abs(ev(0)));
    if (ev(sel) - ev(sel - 1) < opt.tie_tol * scale)
      throw EigenvalueTie("spectral gap at the subspace cut is below tolerance");
    const double mu = 0.5 * (ev(sel - 1) + ev(sel));
    const double span = 1.0000001 * std::max(ev(n - 1) - mu, mu - ev(0));
    SMat<S> X(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        X(i, j) = B(i, j) * (1.0 / span);
        if (i == j) X(i, j) -= S(mu / span);
      }
    int settle = -1;
    for (int it = 0; it < opt.sign_iters; ++it) {
      SMat<S> X2 = detail::smat_mul(X, X);
      if (settle < 0) {
        double err = 0;
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j)
            err = std::max(err, std::abs(value_of(X2(i, j)) - (i == j ? C(1) : C(0))));
        if (err < 1e-14) settle = opt.settle_passes;
      }
      SMat<S> X3 = detail::smat_mul(X, X2);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) X(i, j) = 1.5 * X(i, j) - 0.5 * X3(i, j);
      if (settle >= 0 && settle-- == 0) {
        SMat<S> P(n, n);
        for (int i = 0; i < n; ++i)
          for (int j = 0; j < n; ++j) {
            P(i, j) = 0.5 * X(i, j);
            if (i == j) P(i, j) += S(0.5);
          }
        return P;
      }
    }
    throw ConfigInvalid("spectral projector iteration did not converge");
  }

  /* reference frame from the eigensolver (plain values, arbitrary gauge) */
  CMatX a_frame_ref(const RVecX& th, const CVecX& z) const {
    return negative_subspaces(sys, th, z, q, opt.tie_tol).a_frame;
  }

  /* gauge-fixed smooth frame: project the reference rows through the
   * dual-valued projector and re-orthonormalize */
  template <class S>
  SMat<S> a_frame_smooth(const std::vector<S>& th, const S* z, const CMatX& ref) const {
    const int n = sys.n, nc = complement_dim();
    SMat<S> Pi = complement_projector(th, z);
    SMat<S> A(nc, n);
    for (int j = 0; j < nc; ++j)
      for (int i = 0; i < n; ++i) {
        A(j, i) = S(0.0);
        for (int l = 0; l < n; ++l) A(j, i) += from_c<S>(ref(j, l)) * Pi(l, i);
      }
    mgs_rows(A);
    return A;
  }

  template <class S> BarrierEval<S> eval(const S* zeta, const S* z) const {
    const int n = sys.n, m = sys.m;
    BarrierEval<S> ev;
    ev.theta = theta(zeta);
    std::vector<S> w(n);
    double d2 = 0;
    for (int i = 0; i < n; ++i) {
      w[i] = zeta[i] - z[i];
      d2 += std::norm(value_of(w[i]));
    }
    if (d2 < opt.dist_floor * opt.dist_floor)
      throw SingularPoint("barrier evaluated on the diagonal");
    std::vector<S> xy(2 * n);
    to_xy(z, n, xy.data());
    SMat<S> hsq(n, n), h(n, n);
    sys.hess_hol_sq(xy.data(), hsq);
    std::vector<S> hsqw(n);
    for (int i = 0; i < n; ++i) {
      hsqw[i] = S(0.0);
      for (int j = 0; j < n; ++j) hsqw[i] += hsq(i, j) * w[j];
    }
    ev.q.assign(m * n, S(0.0));
    ev.f.assign(m, S(0.0));
    std::vector<S> grad(n);
    for (int k = 0; k < m; ++k) {
      sys.grad_hol(k, xy.data(), grad.data());
      sys.hess_hol(k, xy.data(), h);
      for (int i = 0; i < n; ++i) {
        S acc = S(-1.0) * grad[i];
        for (int j = 0; j < n; ++j) acc -= 0.5 * (h(i, j) * w[j]);
        acc -= 0.5 * (ev.theta[k] * hsqw[i]);
        ev.q[k * n + i] = acc;
        ev.f[k] += acc * w[i];
      }
    }
    SMat<S> Pi = complement_projector(ev.theta, z);
    ev.p.assign(n, S(0.0));
    ev.amount = S(0.0);
    for (int i = 0; i < n; ++i) {
      S piw(0.0);
      for (int j = 0; j < n; ++j) piw += Pi(i, j) * w[j];
      ev.p[i] = conj(piw);
      ev.amount += conj(w[i]) * piw;
    }
    ev.phi = S(0.0);
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < m; ++k) ev.p[i] += ev.theta[k] * ev.q[k * n + i];
      ev.phi += ev.p[i] * w[i];
    }
    return ev;
  }
};

/* Leray section (1-t) (zetabar - zbar)/|zeta - z|^2 + t P/Phi, the integrand
 * section of the local homotopy operator */
struct BarrierSection {
  const Barrier* b = nullptr;
  template <class T> void operator()(const T* zeta, const T* z, const T& t, T* out) const {
    const int n = b->n();
    auto ev = b->eval(zeta, z);
    if (std::abs(value_of(ev.phi)) < b->opt.phi_floor)
      throw SingularPoint("Phi below floor");
    T den(0.0);
    for (int i = 0; i < n; ++i) den += (zeta[i] - z[i]) * conj(zeta[i] - z[i]);
    for (int i = 0; i < n; ++i)
      out[i] = (T(1.0) - t) * conj(zeta[i] - z[i]) / den + t * ev.p[i] / ev.phi;
  }
};

Barrier build_barrier(const DefiningSystem& sys, int q, BarrierOptions opt = {});
Barrier build_barrier(const DefiningSystem& sys, int q, const Chart& chart,
                      BarrierOptions opt = {});
BarrierSection interpolated_section(const Barrier& b);

struct BarrierCheck {
  double min_ratio = 0;       // over the sample sweep
  double refined_ratio = 0;   // after descent from the worst samples
  bool passed = false;
  CVecX witness_zeta, witness_z;
  int samples = 0;
};
struct VerifyOptions {
  int samples = 10000;
  double eps_max = 0.2;      // tube offsets drawn from (0, eps_max]
  double ratio_floor = 1e-3;
  uint64_t seed = 7;
  int descent_from = 5;      // how many worst samples seed the descent
  int descent_iters = 200;
};
BarrierCheck verify_barrier(const Barrier& b, const VerifyOptions& vo = {});

struct TaylorReport {
  double slope = 0;             // log-log fit of the cubic remainder
  bool exact_to_machine = false;
  std::vector<double> h, residual;
};
TaylorReport verify_re_phi_taylor(const Barrier& b, const RVecX& Yz, const CVecX& Wz,
                                  const CVecX& direction, const std::vector<double>& ladder);

struct PositivityReport {
  double min_eig = 0;            // of 1/2 (L_theta + L_{rho^2}) + Pi over samples
  double max_selected_form = 0;  // of -L_theta - L_{rho^2} on the selected basis
  bool positive = false;
  int samples = 0;
};
PositivityReport verify_positivity(const Barrier& b, int theta_count, int z_count,
                                   uint64_t seed);

/* omega'_r(P/Phi) ^ omega(zeta); identically zero for r < q */
FormField<C> h_kernel(const Barrier& b, int r);
struct HVanishReport {
  double max_coeff = 0;
  int probes = 0;
};
HVanishReport check_h_vanishing(const Barrier& b, int r, int probes, uint64_t seed);

struct MuChiReport {
  double max_mu_residual = 0;   // |dbar_zeta Abar_j - mu_tau - mu_nu|
  double max_chi_residual = 0;  // |dbar_zeta Q - chi|
  double max_mu_nu = 0;         // size of the nu piece (0 when theta is locally constant)
  double max_chi = 0;
  int probes = 0;
};
MuChiReport mu_chi_split(const Barrier& b, int probes, uint64_t seed);

}  // namespace crlab
