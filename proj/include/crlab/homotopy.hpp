#pragma once
#include <functional>
#include <string>
#include <utility>

#include "crlab/barrier.hpp"

/* Quadrature realization of the tangential homotopy operators.  R_r pairs a
 * compactly supported (0,r) form with omega'_{r-1} of the interpolated Leray
 * section over the tube boundary {|rho| = eps} times [0,1]; H_r pairs it with
 * omega'_r of the barrier section alone.  Both push dual numbers through the
 * kernel so dbar_M of an operator output is the quadrature sum of exact
 * z-derivatives, never a finite difference. */

namespace crlab {

/* ---- test forms ----------------------------------------------------------- */

/* (0,r) form on M in graph coordinates: sum of pieces, each a plateau bump
 * times a real polynomial in (Y, Re W, Im W) times a complex scale on one
 * dwbar multi-index.  Pieces keep their identity through the operators so
 * additivity of the quadrature is exact, not just up to rounding. */
struct TestForm {
  std::string name;
  int n = 0, m = 0, r = 0;
  struct Piece {
    uint32_t mask = 0;  // chart-algebra dwbar bits, degree r
    C scale{1.0, 0.0};
    RealPoly poly;      // variables (Y_1..Y_m, Re w_1, Im w_1, ...)
    BumpProfile bump;
  };
  std::vector<Piece> pieces;

  template <class S> GradedForm<S> operator()(const S* Y, const S* W) const {
    const int nw = n - m;
    GradedForm<S> out;
    std::vector<S> vars(m + 2 * nw);
    for (int k = 0; k < m; ++k) vars[k] = Y[k];
    for (int j = 0; j < nw; ++j) {
      vars[m + 2 * j] = re_part(W[j]);
      vars[m + 2 * j + 1] = im_part(W[j]);
    }
    for (const Piece& p : pieces) {
      S v = from_c<S>(p.scale) * p.bump.eval(Y, W, m, nw) * p.poly.eval(vars.data());
      out.add(p.mask, v);
    }
    return out;
  }

  TestForm scaled(const C& a) const;
  TestForm operator+(const TestForm& o) const;  // concatenates pieces
};

/* single-piece builder; the support ball must sit strictly inside the chart
 * box or the extension by constants would leak through the boundary */
TestForm bump_form(const DefiningSystem& sys, std::string name, int r,
                   const std::vector<int>& wbar, const std::vector<double>& cy,
                   const std::vector<C>& cw, double plateau, double support,
                   const RealPoly* poly = nullptr);

/* runtime view the quadrature consumes: plain-complex coefficient callables
 * plus a support ball per piece for the node skip test */
struct MPiece {
  std::function<GradedForm<C>(const double* Y, const C* W)> eval;
  std::vector<double> cy;
  std::vector<C> cw;
  double support = 0;
};
struct FormOnM {
  int r = 0;  // dwbar degree of every monomial every piece returns
  std::vector<MPiece> pieces;
};
FormOnM on_m(const TestForm& g);
FormOnM dbar_on_m(const ChartGraph& graph, const TestForm& g);

/* ---- evaluation points and operator outputs ------------------------------- */

struct ZSamples {
  std::vector<RVecX> Y;
  std::vector<CVecX> W;
  int size() const { return int(Y.size()); }
};
/* deterministic draws from the plateau of a bump (where a form built on it
 * has full amplitude) */
ZSamples z_samples_in(const BumpProfile& bump, int m, int nw, int count, uint64_t seed);

struct FormTable {
  int r = 0;                      // dwbar degree of the entries
  std::vector<GradedForm<C>> at;  // one tangential form per z sample
};

/* sup over samples and monomials of the coefficient magnitude */
double table_sup(const FormTable& t);

/* ---- tube grids for the kernel -------------------------------------------- */

/* product/QMC grid over the support box of g (tube_grid over a shrunk chart);
 * nodes outside every support ball never see the barrier */
TubeGrid support_grid(const DefiningSystem& sys, const FormOnM& g, double eps,
                      const GridSpec& spec);

/* log-radial importance grid around one evaluation point: directions uniform
 * on the graph-coordinate sphere, radii log-uniform in [rmin_frac*eps, rmax].
 * The kernel peak at zeta -> z carries O(1) mass in a parameter ball of
 * radius ~eps, which a box-uniform rule cannot see in high dimension; the
 * r^{-dims} node density makes every node contribution O(1) instead.  Weights
 * are importance weights, so sums over the grid remain plain quadratures. */
TubeGrid peaked_grid(const DefiningSystem& sys, double eps, const RVecX& Yz,
                     const CVecX& Wz, double rmax, int count,
                     double rmin_frac = 0.05, int theta_count = 16);

/* radius that covers every support ball of g as seen from one evaluation
 * point (the rmax the operator drivers hand to peaked_grid) */
double peak_reach(const FormOnM& g, const RVecX& Yz, const CVecX& Wz);

/* ---- local operators ------------------------------------------------------- */

/* R_r(g): (0,r) -> (0,r-1), the t-interpolated kernel integrated over
 * grid x [0,1] with Gauss-Legendre in t (exact: the dt coefficient is
 * polynomial of degree <= n-1 in t).  H_r(g): (0,r) -> (0,r), barrier section
 * alone, no t integral.  Errors: DegreeOutOfRange on a degree mismatch,
 * SingularPoint if a node lands on the barrier's zero set (never for valid
 * grids around verified charts). */
FormTable local_R(const Barrier& b, const FormOnM& g, int r, const TubeGrid& grid,
                  const ZSamples& zs, int t_order = 8);
FormTable local_H(const Barrier& b, const FormOnM& g, int r, const TubeGrid& grid,
                  const ZSamples& zs);

/* ---- homotopy residual ----------------------------------------------------- */

struct RungSpec {
  double eps = 0;
  int nodes = 0;  // importance nodes per evaluation point (before sheets)
};
struct RungRow {
  double eps = 0;
  long nodes = 0;       // total kernel nodes actually placed
  double residual = 0;  // relative: max_z sup|g - dbar_M R_r g - R_{r+1} dbar_M g - H_r g| / max_z sup|g|
  double seconds = 0;
};
struct OperatorRun {
  std::string manifold;
  int r = 0;
  int t_order = 8;
  uint64_t seed = 0;
  std::vector<RungRow> rows;     // ordered by refinement
  double sup_g = 0;              // normalization used for the relative residual
  double holder_half = 0;        // C^{1/2} seminorm of the finest residual over the samples
};

/* evaluates g - dbar_M R_r(g) - R_{r+1}(dbar_M g) - H_r(g) at the samples for
 * every rung of the (eps, nodes) ladder.  dbar_M of the R_r output is the
 * quadrature sum of dual-number z-derivatives of the kernel. */
OperatorRun homotopy_residual(const Barrier& b, const TestForm& g, int r,
                              const std::vector<RungSpec>& ladder, const ZSamples& zs,
                              int t_order = 8);

void write_run_csv(const OperatorRun& run, const std::string& path,
                   bool mask_seconds = false);
void write_run_manifest(const OperatorRun& run, const std::string& path);

/* ---- global assembly ------------------------------------------------------- */

/* R_M(g) = sum_i theta'_i R_r(theta_i g) and the companion H_M(g) =
 * sum_i [ -dbar_M theta'_i ^ R_r(theta_i g) + theta'_i R_{r+1}(dbar_M theta_i ^ g)
 *         + theta'_i H_r(theta_i g) ],
 * with {theta_i} the normalized partition of the cover and theta'_i its
 * plateau companion (identically 1 on supp theta_i).  Every patch integrates
 * over its own grid; the kernel itself is chart-independent, so two covers
 * differ only by quadrature error.  Throws CoverMismatch when the raw weight
 * sum vanishes somewhere on the needed supports or a plateau companion fails
 * to be 1 on its partner's support. */
struct GlobalParts {
  FormTable r_part;  // degree r-1
  FormTable h_part;  // degree r
};
GlobalParts assemble_global(const Barrier& b, const AtlasCover& cover, const TestForm& g,
                            int r, double eps, int nodes_per_patch, const ZSamples& zs,
                            int t_order = 8);

/* ---- Cauchy kernel reproduction ------------------------------------------- */

/* Monte Carlo surface integral of f against omega'((zetabar-zbar)/|zeta-z|^2)
 * ^ omega(zeta) over the sphere |zeta| = radius; reproduces f(z) for
 * holomorphic f, error ~ N^{-1/2}.  Pins the orientation convention (outward
 * normal first) and the (2 pi i)^{-n} normalization shared with the tube
 * operators. */
C bm_reproduce(int n, const std::function<C(const C*)>& f, double radius, const CVecX& z,
               int samples, uint64_t seed);

/* ---- model integrals ------------------------------------------------------ */

/* The two scalar integrals that dominate the kernel estimates:
 *   I1 over V(delta) = {|e_1| + sum_{i>1} e_i^2 + sum |w_j|^2 < delta^2},
 *   I2 over B(1) \ V(delta),
 * of de dw dwbar / [(eps + sum|e_i| + sum|w_j|)^k
 *                   (sqrt(eps) + sqrt|e_1| + sum_{i>1}|e_i| + sum|w_j|)^{2h}].
 * The substitution |e_1| = tau^2 turns V(delta) into a ball, so a
 * hyperspherical rule with a log-radial split at eps integrates both
 * regions.  The finite-part classification in (k, h):
 *   k >= 2n-m-1:  k+h >= 2n-m   -> eps^{2n-m-k-h} log^2        (branch 1)
 *                 k+h <= 2n-m-1 -> bounded, O(delta)           (branch 2)
 *   k <= 2n-m-2:  k+2h >= 2n-m+1 -> eps^{(2n-m-k-2h+1)/2} log  (branch 3)
 *                 k+2h <= 2n-m   -> bounded, O(delta)          (branch 4)
 * and I2 = O(1/delta) on the branches where it is unbounded. */
struct ModelIntegralFit {
  int k = 0;
  double h = 0;
  int n = 0, m = 0;
  int branch = 0;
  double predicted = 0;  // eps exponent of the classification
  int log_power = 0;     // power of log eps accompanying it
  std::vector<double> eps, i1;
  double fitted = 0;     // LSQ exponent of i1 with the log factor removed
  std::vector<double> delta, i2;  // I2 under delta halving (fixed smallest eps)
  bool i2_unbounded = false;      // classification says I2 ~ 1/delta
};
ModelIntegralFit model_integrals(int k, double h, const std::vector<double>& eps_ladder,
                                 double delta, int n, int m);

/* ---- cross-validation probe ------------------------------------------------ */

/* Parameter-space density of one kernel at one node: coefficient of
 * dzbar_L ^ du ^ (dt) per ambient multi-index L, before orientation, weights
 * and the global constant.  `fast` is the production determinant assembly;
 * `reference` expands the same wedge through the graded-form algebra.  The
 * two must agree to rounding on any node. */
struct IntegrandProbe {
  GradedForm<C> fast, reference;
};
IntegrandProbe integrand_probe(const Barrier& b, const FormOnM& g, int deg, bool with_t,
                               const TubeNode& node, int udims, const CVecX& z, double t);

}  // namespace crlab
