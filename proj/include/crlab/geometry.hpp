#pragma once
#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "crlab/errors.hpp"
#include "crlab/la.hpp"
#include "crlab/poly.hpp"

namespace crlab {

using CMatX = Eigen::MatrixXcd;
using CVecX = Eigen::VectorXcd;
using RMatX = Eigen::MatrixXd;
using RVecX = Eigen::VectorXd;

struct Chart {
  std::vector<C> center;  // size n
  double radius = 1.0;
};

/* A generic CR submanifold of C^n cut out by m real polynomial defining
 * functions in graph position: rho_j = x_j - h_j(y_1..y_m, z_{m+1}..z_n).
 * Scales are applied to the polynomials at load time. */
struct DefiningSystem {
  int n = 0, m = 0;
  int q = 0;  // declared concavity order (0 = unknown)
  std::string id;
  std::vector<RealPoly> rho;       // scaled defining functions, variables (x, y)
  std::vector<double> scales;
  Chart chart;

  // exact derivative caches
  std::vector<std::vector<RealPoly>> d1;   // [k][v]      v in 0..2n-1
  std::vector<std::vector<RealPoly>> d2;   // [k][v*2n+w]
  RealPoly rho_sq;                         // sum_k rho_k^2
  std::vector<RealPoly> sq_d1;
  std::vector<RealPoly> sq_d2;

  void finalize();  // builds caches; call after filling rho

  static DefiningSystem from_json_file(const std::string& path);
  static DefiningSystem from_json_text(const std::string& text);
  std::string to_json_text() const;

  /* value of every defining function at a complex point */
  template <class S> void eval_rho(const S* xy, S* out) const {
    for (int k = 0; k < m; ++k) out[k] = rho[k].eval(xy);
  }
  /* holomorphic gradient d rho_k / d zeta_i = (d_x - i d_y)/2 */
  template <class S> void grad_hol(int k, const S* xy, S* out) const {
    const S half_i = from_c<S>(C(0, 0.5));
    for (int i = 0; i < n; ++i)
      out[i] = 0.5 * d1[k][i].eval(xy) - half_i * d1[k][n + i].eval(xy);
  }
  /* mixed (Levi) Hessian d^2 rho_k / d zeta_i d zetabar_j */
  template <class S> void hess_mixed(int k, const S* xy, SMat<S>& out) const {
    hess_mixed_of(d2[k], xy, out);
  }
  /* holomorphic Hessian d^2 rho_k / d zeta_i d zeta_j */
  template <class S> void hess_hol(int k, const S* xy, SMat<S>& out) const {
    hess_hol_of(d2[k], xy, out);
  }
  template <class S> void hess_mixed_sq(const S* xy, SMat<S>& out) const {
    hess_mixed_of(sq_d2, xy, out);
  }
  template <class S> void hess_hol_sq(const S* xy, SMat<S>& out) const {
    hess_hol_of(sq_d2, xy, out);
  }

  template <class S>
  void hess_mixed_of(const std::vector<RealPoly>& dd, const S* xy, SMat<S>& out) const {
    out = SMat<S>(n, n);
    const S quarter_i = from_c<S>(C(0, 0.25));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        S xx = dd[i * 2 * n + j].eval(xy), yy = dd[(n + i) * 2 * n + (n + j)].eval(xy);
        S xy_ = dd[i * 2 * n + (n + j)].eval(xy), yx = dd[(n + i) * 2 * n + j].eval(xy);
        out(i, j) = 0.25 * (xx + yy) + quarter_i * (xy_ - yx);
      }
  }
  template <class S>
  void hess_hol_of(const std::vector<RealPoly>& dd, const S* xy, SMat<S>& out) const {
    out = SMat<S>(n, n);
    const S quarter_i = from_c<S>(C(0, 0.25));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        S xx = dd[i * 2 * n + j].eval(xy), yy = dd[(n + i) * 2 * n + (n + j)].eval(xy);
        S xy_ = dd[i * 2 * n + (n + j)].eval(xy), yx = dd[(n + i) * 2 * n + j].eval(xy);
        out(i, j) = 0.25 * (xx - yy) - quarter_i * (xy_ + yx);
      }
  }

  /* tube radius function rho = (sum rho_k^2)^(1/2) */
  template <class S> S tube_radius(const S* xy) const {
    S acc(0.0);
    for (int k = 0; k < m; ++k) {
      S r = rho[k].eval(xy);
      acc += r * r;
    }
    return sqrt(acc);
  }
};

/* ---- Levi analysis ------------------------------------------------------ */

CMatX levi_form(const DefiningSystem& sys, int k, const CVecX& z);

struct DirectionalLevi {
  RVecX eigenvalues;   // ascending, on T^c (dimension n-m)
  CMatX tangent_basis; // columns: orthonormal basis of T^c
  RVecX combo;         // real coefficients c with rho_theta = sum c_l rho_l
};
DirectionalLevi directional_levi(const DefiningSystem& sys, const RVecX& theta, const CVecX& z);

struct LeviCertificate {
  bool certified = false;
  int q = 0;
  double min_margin = 0;        // min over samples of -(lambda_q)
  RVecX witness_theta;
  CVecX witness_z;
  int theta_samples = 0, z_samples = 0;
};
struct CertifyOptions {
  int theta_count = 64;   // ignored for m == 1
  int z_count = 128;
  double floor = 1e-3;    // nondegeneracy floor c
  uint64_t seed = 1;
};
LeviCertificate certify_q_pseudoconcave(const DefiningSystem& sys, int q,
                                        const CertifyOptions& opt = {});

struct NegativeSubspaces {
  RVecX eigenvalues;  // of -L_theta - L_{rho^2}, ascending
  CMatX e_basis;      // n x (q+m), spans E_{q+m}
  CMatX a_frame;      // (n-q-m) x n rows: orthonormal frame of the complement
};
NegativeSubspaces negative_subspaces(const DefiningSystem& sys, const RVecX& theta,
                                     const CVecX& z, int q, double tie_tol = 1e-6);

/* ---- graph coordinates --------------------------------------------------- */

/* Graph map for M over (Y, W) = (y_1..y_m, z_{m+1}..z_n); X = phi(Y, W) is
 * produced by Newton on the defining functions, exact to solver tolerance,
 * dual numbers supported. */
struct ChartGraph {
  const DefiningSystem* sys = nullptr;
  Chart chart;
  double max_residual = 0;  // over the fit sample grid
  int newton_steps = 12;

  template <class S> void phi(const S* Y, const S* W, S* X) const {
    phi_offset(Y, W, X, static_cast<const S*>(nullptr));
  }
  /* rho_k(zeta) = rhs_k instead of 0 when rhs != nullptr (tube slices) */
  template <class S> void phi_offset(const S* Y, const S* W, S* X, const S* rhs) const {
    const int n = sys->n, m = sys->m;
    std::vector<S> xy(2 * n);
    for (int k = 0; k < m; ++k) {
      X[k] = S(chart.center[k].real());
      xy[n + k] = Y[k];
    }
    for (int j = m; j < n; ++j) {
      xy[j] = re_part(W[j - m]);
      xy[n + j] = im_part(W[j - m]);
    }
    SMat<S> jac(m, m);
    std::vector<S> f(m);
    double last = 1e300;
    for (int it = 0; it < newton_steps; ++it) {
      for (int k = 0; k < m; ++k) xy[k] = X[k];
      for (int k = 0; k < m; ++k) {
        f[k] = sys->rho[k].eval(xy.data());
        if (rhs) f[k] -= rhs[k];
        for (int j = 0; j < m; ++j) jac(k, j) = sys->d1[k][j].eval(xy.data());
      }
      if (!solve(jac, f)) throw NewtonDiverged("singular graph Jacobian");
      double step = 0;
      for (int k = 0; k < m; ++k) {
        X[k] -= f[k];
        step = std::max(step, std::abs(value_of(f[k])));
      }
      if (step < 1e-14 && last < 1e-13) return;  // one extra pass settles dual parts
      last = step;
    }
    if (last > 1e-10) throw NewtonDiverged("graph Newton did not settle");
  }

  template <class S> void ambient(const S* Y, const S* W, S* z) const {
    const int n = sys->n, m = sys->m;
    const S iu = from_c<S>(C(0, 1));
    std::vector<S> X(m);
    phi(Y, W, X.data());
    for (int k = 0; k < m; ++k) z[k] = X[k] + iu * Y[k];
    for (int j = m; j < n; ++j) z[j] = W[j - m];
  }
};

ChartGraph fit_graph(const DefiningSystem& sys, const Chart& chart, int grid_per_dim = 5);

/* ---- tube grids ---------------------------------------------------------- */

struct TubeNode {
  std::vector<C> zeta;      // point with tube radius eps
  std::vector<C> jac;       // n x (2n-1) row-major: d zeta / d u
  double w_param = 0;       // parameter-space quadrature weight
  double w_surf = 0;        // Riemannian surface weight
  std::vector<double> theta;
};
struct TubeGrid {
  double eps = 0;
  int n = 0, m = 0;
  std::vector<TubeNode> nodes;
  double total_surface = 0;
};
struct GridSpec {
  std::vector<int> counts;  // per parameter dimension (product rule), or
  int qmc_count = 0;        // Halton count when the dimension is too high
  int theta_count = 16;     // angular resolution for m >= 2
};
TubeGrid tube_grid(const DefiningSystem& sys, double eps, const GridSpec& spec);

/* ---- covers -------------------------------------------------------------- */

/* smooth plateau bump: 1 on [0, a], exp(1 - 1/(1-t^2)) ramp on (a, b), 0 after */
struct BumpProfile {
  std::vector<double> cy;   // center in Y
  std::vector<C> cw;        // center in W
  double plateau = 0.5, support = 1.0;

  template <class S> S eval(const S* Y, const S* W, int m, int nw) const {
    S s2(0.0);
    for (int k = 0; k < m; ++k) {
      S d = Y[k] - cy[k];
      s2 += d * d;
    }
    for (int j = 0; j < nw; ++j) {
      S d = W[j] - cw[j];
      s2 += re_part(d * conj(d));
    }
    double v2 = value_of(s2).real();
    if (v2 <= plateau * plateau) return S(1.0);
    if (v2 >= support * support * (1.0 - 1e-12)) return S(0.0);
    S s = sqrt(s2);
    S t = (s - plateau) * (1.0 / (support - plateau));
    S one_minus = S(1.0) - t * t;
    return exp(S(1.0) - S(1.0) / one_minus);
  }
};

struct CoverPatch {
  Chart chart;
  BumpProfile weight;        // numerator of the partition member
  BumpProfile plateau_one;   // identically 1 on supp(weight)
};
struct AtlasCover {
  std::vector<CoverPatch> patches;
  /* normalized partition value and the raw sum (for the cover check) */
  template <class S> S partition(int i, const S* Y, const S* W, int m, int nw) const {
    S num = patches[i].weight.eval(Y, W, m, nw);
    S den(0.0);
    for (const auto& p : patches) den += p.weight.eval(Y, W, m, nw);
    return num / den;
  }
  double raw_sum(const double* Y, const C* W, int m, int nw) const;
};

}  // namespace crlab
