#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "pelab/charts.hpp"
#include "pelab/tensorcalc.hpp"
#include "pelab/weights.hpp"

namespace pelab {

// ---------------------------------------------------------------------------
// Grids

/// Uniform node lattice over a coordinate box in two active coordinates; the remaining
/// coordinates are frozen at `base`. Nodes on the outer ring, outside the chart, or with
/// sigma < eps carry homogeneous Dirichlet data.
class Grid2D {
 public:
  Grid2D(Chart chart, std::array<int, 2> axes, ChartPoint base, std::array<double, 2> lo,
         std::array<double, 2> hi, std::array<int, 2> nodes, double eps)
      : chart_(std::move(chart)), axes_(axes), base_(std::move(base)), lo_(lo), hi_(hi),
        nodes_(nodes), eps_(eps) {
    const int n = chart_.dim();
    if (base_.size() != n) throw InvalidArgument("grid base point has the wrong dimension");
    if (axes_[0] == axes_[1] || axes_[0] < 0 || axes_[1] < 0 || axes_[0] >= n || axes_[1] >= n)
      throw InvalidArgument("grid axes must be two distinct chart coordinates");
    for (int a = 0; a < 2; ++a) {
      if (nodes_[a] < 8) throw InvalidArgument("grid too coarse: need at least 8 nodes per axis");
      if (!(hi_[a] > lo_[a])) throw InvalidArgument("grid box must have positive extent");
      spacing_[a] = (hi_[a] - lo_[a]) / (nodes_[a] - 1);
    }
    if (!(eps_ >= 0.0)) throw InvalidArgument("eps must be nonnegative");
    const std::size_t total = static_cast<std::size_t>(nodes_[0]) * nodes_[1];
    valid_.assign(total, 0);
    sigma_.assign(total, 0.0);
    for (int i = 0; i < nodes_[0]; ++i)
      for (int j = 0; j < nodes_[1]; ++j) {
        const ChartPoint p = point(i, j);
        if (chart_.contains(p)) {
          valid_[index(i, j)] = 1;
          sigma_[index(i, j)] = sigma_at(chart_, p);
        }
      }
  }

  const Chart& chart() const { return chart_; }
  std::array<int, 2> axes() const { return axes_; }
  const ChartPoint& base() const { return base_; }
  std::array<int, 2> nodes() const { return nodes_; }
  std::array<double, 2> spacing() const { return spacing_; }
  std::array<double, 2> lo() const { return lo_; }
  std::array<double, 2> hi() const { return hi_; }
  double eps() const { return eps_; }
  int size() const { return nodes_[0] * nodes_[1]; }
  int index(int i, int j) const { return i * nodes_[1] + j; }

  ChartPoint point(double i, double j) const {
    ChartPoint p = base_;
    p(axes_[0]) = lo_[0] + i * spacing_[0];
    p(axes_[1]) = lo_[1] + j * spacing_[1];
    return p;
  }
  bool valid(int i, int j) const { return valid_[index(i, j)] != 0; }
  double sigma(int i, int j) const { return sigma_[index(i, j)]; }
  bool on_ring(int i, int j) const {
    return i == 0 || j == 0 || i == nodes_[0] - 1 || j == nodes_[1] - 1;
  }
  /// Unknown node: interior, inside the chart, in the exhaustion domain.
  bool is_unknown(int i, int j) const {
    return !on_ring(i, j) && valid(i, j) && sigma(i, j) >= eps_;
  }

  Grid2D with_eps(double eps) const {
    return Grid2D(chart_, axes_, base_, lo_, hi_, nodes_, eps);
  }

 private:
  Chart chart_;
  std::array<int, 2> axes_;
  ChartPoint base_;
  std::array<double, 2> lo_, hi_;
  std::array<int, 2> nodes_;
  std::array<double, 2> spacing_{};
  double eps_;
  std::vector<char> valid_;
  std::vector<double> sigma_;
};

/// Node values of a scalar field (components = 1) or a symmetric d x d tensor field
/// (components = d(d+1)/2, packed upper-triangular row by row).
struct DiscreteField {
  Grid2D grid;
  int components = 1;
  Mat values;  ///< size() x components

  static DiscreteField zeros(const Grid2D& g, int components = 1) {
    return {g, components, Mat::Zero(g.size(), components)};
  }

  double& operator()(int i, int j, int c = 0) { return values(grid.index(i, j), c); }
  double operator()(int i, int j, int c = 0) const { return values(grid.index(i, j), c); }

  int block() const {
    int d = 0;
    while (d * (d + 1) / 2 < components) ++d;
    return d;
  }
  Mat tensor(int i, int j) const {
    const int d = block();
    Mat t(d, d);
    int c = 0;
    for (int a = 0; a < d; ++a)
      for (int b = a; b < d; ++b) t(a, b) = t(b, a) = values(grid.index(i, j), c++);
    return t;
  }
  void set_tensor(int i, int j, const Mat& t) {
    const int d = block();
    int c = 0;
    for (int a = 0; a < d; ++a)
      for (int b = a; b < d; ++b) values(grid.index(i, j), c++) = t(a, b);
  }
};

/// Sample fn at every node inside the chart; other nodes get 0.
inline DiscreteField sample(const Grid2D& g, const std::function<double(const ChartPoint&)>& fn) {
  DiscreteField out = DiscreteField::zeros(g);
  for (int i = 0; i < g.nodes()[0]; ++i)
    for (int j = 0; j < g.nodes()[1]; ++j)
      if (g.valid(i, j)) out(i, j) = fn(g.point(i, j));
  return out;
}

/// sigma^mu: the boundary defining functions of the chart raised to their weights.
/// Cusp: cos(theta0)^mu0 * r^mu1 (truncated); collar and upper half space: rho^mu0;
/// maximal cusp: r^mu1.
inline double weight_function_at(const Chart& chart, const WeightVector& w, const ChartPoint& p) {
  const Truncation& tr = chart.truncation();
  auto first_mu = [&]() {
    if (w.mus.empty()) throw InvalidArgument("weight vector has no cusp weight for this chart");
    return w.mus[0];
  };
  chart.check(p);
  switch (chart.kind()) {
    case ChartKind::IntermediateCusp:
      return std::pow(truncate_bdf(std::cos(p(1)), tr), w.mu0) *
             std::pow(truncate_bdf(p(0), tr), first_mu());
    case ChartKind::MaximalCusp: return std::pow(truncate_bdf(p(0), tr), first_mu());
    case ChartKind::Collar:
    case ChartKind::UpperHalfSpace: return std::pow(truncate_bdf(p(0), tr), w.mu0);
  }
  return 1.0;
}

// ---------------------------------------------------------------------------
// Operators

/// Discrete (Delta + K) on the unknown nodes of a grid, in divergence form
///   (Delta u)_c = -(1/J_c) sum_a [A_{a+}(u_{a+} - u_c) - A_{a-}(u_c - u_{a-})] / d_a^2,
/// with A = J g^{aa} at the half points. Rows scaled by J_c d_0 d_1 give the symmetric
/// matrix B; the unscaled operator is W^{-1} B.
struct SparseOperator {
  struct Stencil {
    int node = 0;                 ///< full-grid index of the centre
    std::array<int, 4> nbr{};     ///< full-grid neighbours (-0, +0, -1, +1)
    double centre = 0.0;          ///< coefficient on u_c of (Delta + K)
    std::array<double, 4> off{};  ///< coefficients on the neighbours
  };

  Grid2D grid;
  double K = 0.0;
  std::vector<Stencil> rows;
  std::vector<int> unknown_of;  ///< full index -> unknown index or -1
  Eigen::SparseMatrix<double, Eigen::RowMajor> B;
  Vec weight;
  bool symmetric = false;

  int unknowns() const { return static_cast<int>(rows.size()); }

  /// (Delta + K) applied to full-grid values, returned on the unknown nodes.
  Vec apply_full(const DiscreteField& u) const {
    Vec out(unknowns());
    for (int k = 0; k < unknowns(); ++k) {
      const Stencil& s = rows[k];
      double v = s.centre * u.values(s.node, 0);
      for (int m = 0; m < 4; ++m) v += s.off[m] * u.values(s.nbr[m], 0);
      out(k) = v;
    }
    return out;
  }

  DiscreteField to_field(const Vec& x) const {
    DiscreteField f = DiscreteField::zeros(grid);
    for (int k = 0; k < unknowns(); ++k) f.values(rows[k].node, 0) = x(k);
    return f;
  }
  Vec restrict(const DiscreteField& f) const {
    Vec x(unknowns());
    for (int k = 0; k < unknowns(); ++k) x(k) = f.values(rows[k].node, 0);
    return x;
  }
};

inline SparseOperator assemble(const Grid2D& grid, double K) {
  const Chart& chart = grid.chart();
  const auto [a0, a1] = grid.axes();
  const auto [d0, d1] = grid.spacing();
  const auto [N0, N1] = grid.nodes();
  const int n = chart.dim();

  SparseOperator op{grid, K, {}, std::vector<int>(grid.size(), -1), {}, {}, false};
  for (int i = 0; i < N0; ++i)
    for (int j = 0; j < N1; ++j)
      if (grid.is_unknown(i, j)) {
        op.unknown_of[grid.index(i, j)] = static_cast<int>(op.rows.size());
        op.rows.push_back({grid.index(i, j), {}, 0.0, {}});
      }
  if (op.rows.empty()) throw InvalidArgument("grid has no unknown nodes");

  auto half_coef = [&](double i, double j, int axis) {
    const ChartPoint p = grid.point(i, j);
    const Mat g = metric_at(chart, p);
    for (int b = 0; b < n; ++b)
      if (b != axis && g(axis, b) != 0.0)
        throw InvalidArgument("assemble needs a metric diagonal in the active coordinates");
    return volume_density_at(chart, p) / g(axis, axis);
  };

  std::vector<Eigen::Triplet<double>> trip;
  op.weight.resize(op.unknowns());
  for (auto& s : op.rows) {
    const int i = s.node / N1, j = s.node % N1;
    const double J = volume_density_at(chart, grid.point(i, j));
    const std::array<double, 4> A = {half_coef(i - 0.5, j, a0), half_coef(i + 0.5, j, a0),
                                     half_coef(i, j - 0.5, a1), half_coef(i, j + 0.5, a1)};
    const std::array<double, 4> dd = {d0 * d0, d0 * d0, d1 * d1, d1 * d1};
    s.nbr = {grid.index(i - 1, j), grid.index(i + 1, j), grid.index(i, j - 1),
             grid.index(i, j + 1)};
    s.centre = K;
    for (int m = 0; m < 4; ++m) {
      s.off[m] = -A[m] / (J * dd[m]);
      s.centre -= s.off[m];
    }
    const double W = J * d0 * d1;
    const int row = op.unknown_of[s.node];
    op.weight(row) = W;
    trip.emplace_back(row, row, W * s.centre);
    for (int m = 0; m < 4; ++m) {
      const int col = op.unknown_of[s.nbr[m]];
      if (col >= 0) trip.emplace_back(row, col, W * s.off[m]);
    }
  }
  op.B.resize(op.unknowns(), op.unknowns());
  op.B.setFromTriplets(trip.begin(), trip.end());
  const Eigen::SparseMatrix<double, Eigen::RowMajor> asym =
      op.B - Eigen::SparseMatrix<double, Eigen::RowMajor>(op.B.transpose());
  op.symmetric = asym.norm() <= 1e-12 * op.B.norm();
  return op;
}

// ---------------------------------------------------------------------------
// Linear solves

struct SolveOptions {
  double rtol = 1e-8;
  int max_iterations = 0;         ///< 0: 50 sqrt(unknowns)
  bool allow_indefinite = false;  ///< fall back to a sparse LU factorisation
};

struct SolveResult {
  DiscreteField u;
  int iterations = 0;
  double residual = 0.0;  ///< ||(Delta+K)u - f||_inf / ||f||_inf on unknown nodes
  std::string method;
};

namespace detail {

inline double scaled_residual(const SparseOperator& op, const Vec& r_sym, double fnorm) {
  return (r_sym.cwiseQuotient(op.weight)).lpNorm<Eigen::Infinity>() / fnorm;
}

}  // namespace detail

/// Solve (Delta + K) u = f on the unknown nodes with u = 0 on Dirichlet nodes.
/// Preconditioned conjugate gradients on the symmetrised system; throws NonConvergence when
/// the iteration cap is reached or the operator turns out to be indefinite.
inline SolveResult solve_dirichlet(const SparseOperator& op, const DiscreteField& f,
                                   const SolveOptions& opt = {}) {
  const int N = op.unknowns();
  const Vec fr = op.restrict(f);
  const double fnorm = fr.lpNorm<Eigen::Infinity>();
  if (fnorm == 0.0) return {DiscreteField::zeros(op.grid), 0, 0.0, "trivial"};

  const Vec b = op.weight.cwiseProduct(fr);
  const Vec diag = op.B.diagonal();
  const int cap = opt.max_iterations > 0
                      ? opt.max_iterations
                      : std::max(1, static_cast<int>(50.0 * std::sqrt(static_cast<double>(N))));

  auto direct = [&](int its) {
    Eigen::SparseMatrix<double> Bc(op.B);
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(Bc);
    if (lu.info() != Eigen::Success)
      throw NonConvergence(NonConvergence::Reason::Indefinite, INFINITY, its);
    const Vec x = lu.solve(b);
    const double res = detail::scaled_residual(op, b - op.B * x, fnorm);
    return SolveResult{op.to_field(x), its, res, "sparse-lu"};
  };

  if (!op.symmetric || (diag.array() <= 0.0).any()) {
    if (opt.allow_indefinite) return direct(0);
    throw NonConvergence(NonConvergence::Reason::Indefinite, 1.0, 0);
  }

  const Vec dinv = diag.cwiseInverse();
  Vec x = Vec::Zero(N);
  Vec r = b;
  Vec z = dinv.cwiseProduct(r);
  Vec p = z;
  double rz = r.dot(z);
  double res = 1.0;
  for (int it = 1; it <= cap; ++it) {
    const Vec Bp = op.B * p;
    const double pBp = p.dot(Bp);
    if (!(pBp > 0.0)) {
      if (opt.allow_indefinite) return direct(it);
      throw NonConvergence(NonConvergence::Reason::Indefinite, res, it);
    }
    const double alpha = rz / pBp;
    x += alpha * p;
    r -= alpha * Bp;
    res = detail::scaled_residual(op, r, fnorm);
    if (res <= opt.rtol) {
      // Confirm with a true residual to guard against drift in the recurrence.
      res = detail::scaled_residual(op, b - op.B * x, fnorm);
      if (res <= opt.rtol) return {op.to_field(x), it, res, "pcg-jacobi"};
      r = b - op.B * x;
    }
    z = dinv.cwiseProduct(r);
    const double rz_new = r.dot(z);
    p = z + (rz_new / rz) * p;
    rz = rz_new;
  }
  throw NonConvergence(NonConvergence::Reason::IterationCap, res, cap);
}

/// max |u| / sigma^mu over nodes inside the chart (tensor mode: pointwise norm first).
inline double weighted_sup_norm(const DiscreteField& u, const WeightVector& w) {
  const Grid2D& g = u.grid;
  const Chart& chart = g.chart();
  const int d = u.block();
  double best = 0.0;
  for (int i = 0; i < g.nodes()[0]; ++i)
    for (int j = 0; j < g.nodes()[1]; ++j) {
      if (!g.valid(i, j)) continue;
      const ChartPoint p = g.point(i, j);
      double mag;
      if (u.components == 1) {
        mag = std::abs(u(i, j));
      } else {
        const Mat gm = metric_at(chart, p);
        Mat block;
        if (d == chart.dim()) {
          block = gm;
        } else if (d == 2) {
          const auto ax = g.axes();
          block.resize(2, 2);
          for (int a = 0; a < 2; ++a)
            for (int b = 0; b < 2; ++b) block(a, b) = gm(ax[a], ax[b]);
        } else {
          throw InvalidArgument("tensor block must be 2 or the chart dimension");
        }
        mag = tensor_norm(checked_inverse(block), u.tensor(i, j));
      }
      if (mag == 0.0) continue;
      best = std::max(best, mag / weight_function_at(chart, w, p));
    }
  return best;
}

// ---------------------------------------------------------------------------
// Exhaustion sweep

struct SweepRow {
  double eps = 0.0;
  int unknowns = 0;
  int iterations = 0;
  double norm_u = 0.0;
  double norm_f = 0.0;
  double ratio = 0.0;
  double residual = 0.0;
  double mms_error = NAN;  ///< relative sup error of the manufactured solve (NaN if not run)
};

struct SweepResult {
  std::vector<SweepRow> rows;
  double plateau_factor = NAN;  ///< max ratio / min ratio
  double worst_mms_error = NAN;
};

/// Solve (Delta + K) u = f on each exhaustion domain of `grid` (eps taken from eps_list)
/// and tabulate ||u||_{0,mu} / ||f||_{0,mu}. When `manufactured` is given, also solve for
/// f* = (Delta + K) u* and record the relative error against u*.
inline SweepResult exhaustion_sweep(const Grid2D& grid, double K, const WeightVector& w,
                                    const std::function<double(const ChartPoint&)>& f,
                                    const std::vector<double>& eps_list,
                                    const std::function<double(const ChartPoint&)>& manufactured = {},
                                    const SolveOptions& opt = {1e-12, 0, false}) {
  if (eps_list.empty()) throw InvalidArgument("eps list is empty");
  for (std::size_t k = 1; k < eps_list.size(); ++k)
    if (!(eps_list[k] < eps_list[k - 1])) throw InvalidArgument("eps list must be decreasing");
  SweepResult out;
  double lo = INFINITY, hi = 0.0;
  for (double eps : eps_list) {
    if (!(eps > 0.0)) throw InvalidArgument("eps must be positive");
    const Grid2D g = grid.with_eps(eps);
    const SparseOperator op = assemble(g, K);
    DiscreteField fd = sample(g, f);
    // data lives on the exhaustion domain
    for (int i = 0; i < g.nodes()[0]; ++i)
      for (int j = 0; j < g.nodes()[1]; ++j)
        if (!g.is_unknown(i, j)) fd(i, j) = 0.0;
    const SolveResult sol = solve_dirichlet(op, fd, opt);
    SweepRow row;
    row.eps = eps;
    row.unknowns = op.unknowns();
    row.iterations = sol.iterations;
    row.residual = sol.residual;
    row.norm_u = weighted_sup_norm(sol.u, w);
    row.norm_f = weighted_sup_norm(fd, w);
    row.ratio = row.norm_u / row.norm_f;
    if (manufactured) {
      const DiscreteField us = sample(g, manufactured);
      const Vec rhs = op.apply_full(us);
      const DiscreteField fs = op.to_field(rhs);
      const SolveResult ms = solve_dirichlet(op, fs, opt);
      row.mms_error = (ms.u.values - us.values).lpNorm<Eigen::Infinity>() /
                      us.values.lpNorm<Eigen::Infinity>();
      out.worst_mms_error =
          std::isnan(out.worst_mms_error) ? row.mms_error : std::max(out.worst_mms_error, row.mms_error);
    }
    lo = std::min(lo, row.ratio);
    hi = std::max(hi, row.ratio);
    out.rows.push_back(row);
  }
  out.plateau_factor = hi / lo;
  return out;
}

// ---------------------------------------------------------------------------
// Maximum principle

struct MaxPrincipleReport {
  double min_ratio = INFINITY;           ///< min over checked nodes of (Delta+K)s / s
  double min_closed_form = INFINITY;     ///< min over the same nodes of the closed form
  double closed_form_margin = NAN;       ///< delta from the barrier coefficients
  double max_deviation = 0.0;            ///< max |discrete - closed form|
  int nodes_checked = 0;
  double tolerance = 0.0;
  bool pass = false;
};

/// Evaluate the discrete (Delta + K) sigma^mu / sigma^mu at unknown nodes with
/// sigma < core_sigma (outside the compact core) and compare with the closed forms.
inline MaxPrincipleReport maximum_principle_check(const Grid2D& grid, double K,
                                                  const WeightVector& w, double core_sigma = 1.0,
                                                  double tolerance = 1e-2) {
  const SparseOperator op = assemble(grid, K);
  const Chart& chart = grid.chart();
  const int n = chart.dim();
  DiscreteField s = DiscreteField::zeros(grid);
  for (int i = 0; i < grid.nodes()[0]; ++i)
    for (int j = 0; j < grid.nodes()[1]; ++j)
      if (grid.valid(i, j)) s(i, j) = weight_function_at(chart, w, grid.point(i, j));
  const Vec Ls = op.apply_full(s);

  MaxPrincipleReport rep;
  rep.tolerance = tolerance;
  std::optional<BarrierCoefficients> coef;
  switch (chart.kind()) {
    case ChartKind::IntermediateCusp:
      coef = barrier_cusp(K, w.mus.at(0), w.mu0, chart.rank(), n);
      rep.closed_form_margin = coef->margin();
      break;
    case ChartKind::MaximalCusp: rep.closed_form_margin = barrier_maximal(K, w.mus.at(0), n); break;
    default: rep.closed_form_margin = barrier_H0(K, w.mu0, n); break;
  }
  for (int k = 0; k < op.unknowns(); ++k) {
    const auto& st = op.rows[k];
    bool neighbours_ok = true;
    for (int m = 0; m < 4; ++m)
      neighbours_ok = neighbours_ok && grid.valid(st.nbr[m] / grid.nodes()[1], st.nbr[m] % grid.nodes()[1]);
    const int i = st.node / grid.nodes()[1], j = st.node % grid.nodes()[1];
    if (!neighbours_ok || grid.sigma(i, j) >= core_sigma) continue;
    const ChartPoint p = grid.point(i, j);
    const double ratio = Ls(k) / s(i, j);
    const double cf = coef ? coef->at(p(1)) : rep.closed_form_margin;
    rep.min_ratio = std::min(rep.min_ratio, ratio);
    rep.min_closed_form = std::min(rep.min_closed_form, cf);
    rep.max_deviation = std::max(rep.max_deviation, std::abs(ratio - cf));
    ++rep.nodes_checked;
  }
  rep.pass = rep.nodes_checked > 0 && rep.min_ratio >= rep.closed_form_margin - tolerance;
  return rep;
}

// ---------------------------------------------------------------------------
// Koiso quadrature

struct KoisoResult {
  double grad_sq = 0.0;     ///< ||nabla u||^2
  double T_sq = 0.0;        ///< ||T||^2
  double div_sq = 0.0;      ///< ||div u||^2
  double tr_sq = 0.0;       ///< ||tr u||^2
  double u_sq = 0.0;        ///< ||u||^2
  double pairing = 0.0;     ///< (u, nabla*nabla u)
  double lhs = 0.0;         ///< ||nabla u||^2
  double rhs = 0.0;         ///< (1/2)||T||^2 + ||div u||^2 - ||tr u||^2 + n ||u||^2
  double gap = 0.0;         ///< |lhs - rhs|
  double slack = 0.0;       ///< (u, P2 u) - (n + K)||u||^2
  double K = -2.0;
};

/// Integrals of the Koiso identity for a tensor field sampled on a grid of a hyperbolic
/// chart. The field may depend only on the two active coordinates; derivatives along the
/// frozen coordinates vanish. `u` holds full n x n tensors (components n(n+1)/2).
inline KoisoResult koiso_quadrature(const DiscreteField& u, double K = -2.0, int margin = 3,
                                    double christoffel_step = 1e-3) {
  const Grid2D& g = u.grid;
  const Chart& chart = g.chart();
  const int n = chart.dim();
  if (u.block() != n || u.components != n * (n + 1) / 2)
    throw InvalidArgument("koiso_quadrature needs full n x n tensor samples");
  const auto [N0, N1] = g.nodes();
  const auto [d0, d1] = g.spacing();
  const auto ax = g.axes();
  for (int i = 0; i < N0; ++i)
    for (int j = 0; j < N1; ++j) {
      if (!g.valid(i, j)) throw InvalidArgument("Koiso patch must lie inside the chart");
      const bool near_edge = i < margin || j < margin || i >= N0 - margin || j >= N1 - margin;
      if (near_edge && u.values.row(g.index(i, j)).cwiseAbs().maxCoeff() > 0.0)
        throw SupportViolation("tensor support reaches within " + std::to_string(margin) +
                               " nodes of the grid boundary");
    }
  const MetricField h = model_metric(chart);

  // Per-node geometry.
  std::vector<Mat> ginv(g.size());
  std::vector<Tensor3> gam(g.size());
  std::vector<double> J(g.size());
  for (int i = 0; i < N0; ++i)
    for (int j = 0; j < N1; ++j) {
      const ChartPoint p = g.point(i, j);
      const int id = g.index(i, j);
      ginv[id] = checked_inverse(h(p));
      J[id] = volume_density_at(chart, p);
      if (i > 0 && j > 0 && i < N0 - 1 && j < N1 - 1) gam[id] = christoffels_richardson_at(h, p, christoffel_step);
    }

  // nabla u at interior nodes: D(k,i,j) = nabla_k u_ij.
  std::vector<Tensor3> D(g.size(), Tensor3(n));
  auto U = [&](int i, int j) { return u.tensor(i, j); };
  for (int i = 1; i < N0 - 1; ++i)
    for (int j = 1; j < N1 - 1; ++j) {
      const int id = g.index(i, j);
      std::vector<Mat> du(n, Mat::Zero(n, n));
      du[ax[0]] = (U(i + 1, j) - U(i - 1, j)) / (2 * d0);
      du[ax[1]] = (U(i, j + 1) - U(i, j - 1)) / (2 * d1);
      const Mat uc = U(i, j);
      Tensor3& Dk = D[id];
      for (int k = 0; k < n; ++k)
        for (int a = 0; a < n; ++a)
          for (int b = 0; b < n; ++b) {
            double v = du[k](a, b);
            for (int m = 0; m < n; ++m) v -= gam[id](m, k, a) * uc(m, b) + gam[id](m, k, b) * uc(a, m);
            Dk(k, a, b) = v;
          }
    }

  KoisoResult res;
  res.K = K;
  const double cell = d0 * d1;
  for (int i = 2; i < N0 - 2; ++i)
    for (int j = 2; j < N1 - 2; ++j) {
      const int id = g.index(i, j);
      const Mat& gi = ginv[id];
      const Mat uc = U(i, j);
      const Tensor3& Dc = D[id];
      const double w = J[id] * cell;

      // T_abc = nabla_c u_ab - nabla_a u_bc
      Tensor3 T(n);
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b)
          for (int c = 0; c < n; ++c) T(a, b, c) = Dc(c, a, b) - Dc(a, b, c);
      // divergence (delta u)_k = -g^{ab} nabla_a u_bk
      Vec dv = Vec::Zero(n);
      for (int k = 0; k < n; ++k)
        for (int a = 0; a < n; ++a)
          for (int b = 0; b < n; ++b) dv(k) -= gi(a, b) * Dc(a, b, k);
      // nabla*nabla u = -g^{ab}(d_a D_b.. - Gamma terms)
      std::vector<Tensor3> dD(n, Tensor3(n));
      dD[ax[0]] = (1.0 / (2 * d0)) * (D[g.index(i + 1, j)] - D[g.index(i - 1, j)]);
      dD[ax[1]] = (1.0 / (2 * d1)) * (D[g.index(i, j + 1)] - D[g.index(i, j - 1)]);
      const Tensor3& G = gam[id];
      Mat lap = Mat::Zero(n, n);
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) {
          if (gi(a, b) == 0.0) continue;
          for (int p = 0; p < n; ++p)
            for (int q = 0; q < n; ++q) {
              double v = dD[a](b, p, q);
              for (int m = 0; m < n; ++m)
                v -= G(m, a, b) * Dc(m, p, q) + G(m, a, p) * Dc(b, m, q) + G(m, a, q) * Dc(b, p, m);
              lap(p, q) -= gi(a, b) * v;
            }
        }
      const double tr = (gi * uc).trace();
      res.grad_sq += w * tensor3_norm_sq(gi, Dc);
      res.T_sq += w * tensor3_norm_sq(gi, T);
      res.div_sq += w * dv.dot(gi * dv);
      res.tr_sq += w * tr * tr;
      res.u_sq += w * tensor_dot(gi, uc, uc);
      res.pairing += w * tensor_dot(gi, uc, lap);
    }
  res.lhs = res.grad_sq;
  res.rhs = 0.5 * res.T_sq + res.div_sq - res.tr_sq + n * res.u_sq;
  res.gap = std::abs(res.lhs - res.rhs);
  res.slack = res.pairing + K * res.u_sq - (n + K) * res.u_sq;
  return res;
}

/// Smooth trace-free tensor bump on the active coordinates of a grid, with random
/// coefficients from `seed`. The support is the ellipse of the given radii around `centre`.
inline DiscreteField random_tracefree_bump(const Grid2D& g, unsigned seed,
                                           std::array<double, 2> centre,
                                           std::array<double, 2> radii) {
  const Chart& chart = g.chart();
  const int n = chart.dim();
  std::mt19937 rng(seed);
  std::normal_distribution<double> N01(0.0, 1.0);
  std::vector<Mat> coef(3, Mat(n, n));
  for (auto& c : coef) {
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b) c(a, b) = N01(rng);
    c = sym(c);
  }
  std::uniform_real_distribution<double> Uf(0.5, 2.0);
  const double k0 = Uf(rng), k1 = Uf(rng);
  const auto ax = g.axes();
  DiscreteField out = DiscreteField::zeros(g, n * (n + 1) / 2);
  for (int i = 0; i < g.nodes()[0]; ++i)
    for (int j = 0; j < g.nodes()[1]; ++j) {
      const ChartPoint p = g.point(i, j);
      const double x = (p(ax[0]) - centre[0]) / radii[0];
      const double y = (p(ax[1]) - centre[1]) / radii[1];
      const double r2 = x * x + y * y;
      if (r2 >= 1.0) continue;
      const double bump = std::exp(1.0 - 1.0 / (1.0 - r2));
      const Mat hp = metric_at(chart, p);
      // scale components by the metric so the tensor has unit size in h-norm terms
      const Mat s = hp.diagonal().cwiseSqrt().asDiagonal();
      Mat t = s * (coef[0] + std::sin(k0 * x) * coef[1] + std::cos(k1 * y) * coef[2]) * s;
      t -= (checked_inverse(hp) * t).trace() / n * hp;
      out.set_tensor(i, j, bump * t);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Schauder rescaling scan

/// One family of rescaling cases parameterised by eps.
struct CaseFamily {
  std::string name;
  std::function<RescalingCase(double eps)> make;
};

inline CaseFamily near_axis_family(int n, int f, double ratio) {
  return {"near-axis", [=](double eps) {
            Vec v0 = Vec::Zero(n - 1 - f);
            v0(0) = ratio * eps;
            return RescalingCase{RescalingKind::CuspNearAxis, n, f, v0, eps, 1.0, Chart::collar(n)};
          }};
}

inline CaseFamily off_axis_family(int n, int f, double ratio) {
  return {"off-axis", [=](double eps) {
            Vec v0 = Vec::Zero(n - 1 - f);
            v0(0) = ratio * eps;
            return RescalingCase{RescalingKind::CuspOffAxis, n, f, v0, eps, 1.0, Chart::collar(n)};
          }};
}

inline CaseFamily collar_family(const Chart& collar, const Vec& y0) {
  return {"collar", [=](double eps) {
            return RescalingCase{RescalingKind::CollarCase, collar.dim(), 0, y0, eps, 1.0, collar};
          }};
}

struct SchauderRow {
  double eps = 0.0;
  double min_eig = 0.0;
  double max_eig = 0.0;
  double cond = 0.0;
  double max_first_difference = 0.0;  ///< max |g(q) - g(q')| / |q - q'| over lattice neighbours
};

/// Lattice of m^n cell-centred points strictly inside B+: a cube of half-width
/// 0.95/sqrt(n) in every slot, with s shifted to [0, 0.95/sqrt(n)].
inline std::vector<Vec> half_ball_lattice(int n, int m) {
  const double hw = 0.95 / std::sqrt(static_cast<double>(n));
  std::vector<Vec> pts;
  std::vector<int> idx(n, 0);
  while (true) {
    Vec q(n);
    q(0) = hw * (idx[0] + 0.5) / m;
    for (int k = 1; k < n; ++k) q(k) = -hw + 2 * hw * (idx[k] + 0.5) / m;
    pts.push_back(q);
    int k = 0;
    while (k < n && ++idx[k] == m) idx[k++] = 0;
    if (k == n) break;
  }
  return pts;
}

inline std::vector<SchauderRow> schauder_coefficient_scan(const CaseFamily& family,
                                                          const std::vector<double>& eps_list,
                                                          int lattice = 9) {
  std::vector<SchauderRow> rows;
  for (double eps : eps_list) {
    const RescalingCase rc = family.make(eps);
    rc.validate();
    const auto pts = half_ball_lattice(rc.n, lattice);
    SchauderRow row;
    row.eps = eps;
    row.min_eig = INFINITY;
    std::vector<Mat> gs;
    gs.reserve(pts.size());
    for (const Vec& q : pts) {
      const Mat g = rescaled_metric_at(rc, q);
      Eigen::SelfAdjointEigenSolver<Mat> es(g, Eigen::EigenvaluesOnly);
      row.min_eig = std::min(row.min_eig, es.eigenvalues().minCoeff());
      row.max_eig = std::max(row.max_eig, es.eigenvalues().maxCoeff());
      gs.push_back(g);
    }
    // neighbours along the first lattice axis are consecutive entries
    for (std::size_t k = 1; k < pts.size(); ++k) {
      const double dq = (pts[k] - pts[k - 1]).norm();
      if (dq > 0.2) continue;
      row.max_first_difference =
          std::max(row.max_first_difference, (gs[k] - gs[k - 1]).cwiseAbs().maxCoeff() / dq);
    }
    row.cond = row.max_eig / row.min_eig;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace pelab
