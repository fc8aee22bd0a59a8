#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "pelab/tensorcalc.hpp"

namespace pelab {

// ---------------------------------------------------------------------------
// Boundary data on a Euclidean collar patch U of H0.
//
// Coordinates are (rho, y^1 .. y^{n-1}); h = rho^-2 (d rho^2 + dy^2).

struct BoundaryData {
  int n = 4;
  Vec U_lo;                               ///< lower corner of U
  Vec U_hi;                               ///< upper corner of U
  std::function<Mat(const Vec&)> qhat;    ///< (n-1)x(n-1) perturbation of h-hat
  Vec centre;                             ///< declared support: ball(centre, radius)
  double radius = 0.0;
  double delta = 0.5;                     ///< psi = 1 for rho < delta/2, 0 for rho >= delta
  double sup_norm = 0.0;                  ///< max |qhat_ab|

  Chart chart() const { return Chart::collar(n); }

  double psi_rho(double rho) const {
    return 1.0 - detail::smooth_step((rho - 0.5 * delta) / (0.5 * delta));
  }

  /// Equal to 1 on the inner 80% of U, 0 near its faces.
  double psi_y(const Vec& y) const {
    double v = 1.0;
    for (int k = 0; k < n - 1; ++k) {
      const double mid = 0.5 * (U_lo(k) + U_hi(k));
      const double half = 0.5 * (U_hi(k) - U_lo(k));
      const double t = std::abs(y(k) - mid) / half;
      v *= 1.0 - detail::smooth_step((t - 0.8) / 0.15);
    }
    return v;
  }

  double psi(double rho, const Vec& y) const { return psi_rho(rho) * psi_y(y); }

  bool in_U(const Vec& y) const {
    for (int k = 0; k < n - 1; ++k)
      if (!(y(k) > U_lo(k) && y(k) < U_hi(k))) return false;
    return true;
  }

  Mat qhat_at(const Vec& y) const {
    if (!qhat) return Mat::Zero(n - 1, n - 1);
    return (y - centre).norm() < radius ? qhat(y) : Mat::Zero(n - 1, n - 1);
  }

  /// Boundary metric h-hat + q-hat at y.
  Mat boundary_metric(const Vec& y) const {
    return Mat::Identity(n - 1, n - 1) + qhat_at(y);
  }

  void validate() const {
    if (n < 3) throw InvalidArgument("boundary data needs n >= 3");
    if (U_lo.size() != n - 1 || U_hi.size() != n - 1 || centre.size() != n - 1)
      throw InvalidArgument("boundary data: U and centre need n-1 coordinates");
    if (!(delta > 0.0)) throw InvalidArgument("boundary data: delta must be positive");
    // psi_y is 1 on the inner 80% of U; the support ball must sit inside it
    for (int k = 0; k < n - 1; ++k) {
      const double mid = 0.5 * (U_lo(k) + U_hi(k));
      const double half = 0.5 * (U_hi(k) - U_lo(k));
      if (!(half > 0.0)) throw InvalidArgument("boundary data: U is empty");
      if (std::abs(centre(k) - mid) + radius >= 0.8 * half)
        throw SupportViolation("support of qhat is not strictly inside U");
    }
    const int m = 9;
    const int total = static_cast<int>(std::pow(m, n - 1));
    for (int idx = 0; idx < total; ++idx) {
      Vec y(n - 1);
      int rem = idx;
      for (int k = 0; k < n - 1; ++k) {
        y(k) = centre(k) + radius * (2.0 * (rem % m) / (m - 1) - 1.0);
        rem /= m;
      }
      Eigen::SelfAdjointEigenSolver<Mat> es(boundary_metric(y));
      if (!(es.eigenvalues().minCoeff() > 0.0))
        throw InvalidArgument("h-hat + q-hat is not positive definite");
    }
  }
};

/// q-hat = amplitude * bump(|y - centre| / radius) * A, with A a seeded symmetric matrix
/// scaled to max |A_ab| = 1.
inline BoundaryData bump_boundary_data(int n, std::uint64_t seed, double amplitude = 0.05,
                                       double radius = 0.6) {
  BoundaryData bd;
  bd.n = n;
  bd.U_lo = Vec::Constant(n - 1, -1.0);
  bd.U_hi = Vec::Constant(n - 1, 1.0);
  bd.centre = Vec::Zero(n - 1);
  bd.radius = radius;
  bd.sup_norm = amplitude;
  if (amplitude != 0.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    Mat A(n - 1, n - 1);
    for (int a = 0; a < n - 1; ++a)
      for (int b = 0; b < n - 1; ++b) A(a, b) = U(rng);
    A = sym(A);
    A /= A.cwiseAbs().maxCoeff();
    const Vec c = bd.centre;
    bd.qhat = [A, c, amplitude, radius](const Vec& y) -> Mat {
      const double t2 = (y - c).squaredNorm() / (radius * radius);
      if (t2 >= 1.0) return Mat::Zero(A.rows(), A.cols());
      return amplitude * std::exp(1.0 - 1.0 / (1.0 - t2)) * A;
    };
  }
  bd.validate();
  return bd;
}

// ---------------------------------------------------------------------------
// Expansion metrics g = rho^-2 gbar, gbar = I + psi qbar + sum_j rho^j psi qhat_j.

struct ExpansionSettings {
  double y_step = 0.05;         ///< absolute finite-difference step in y
  double rho_step = 0.05;       ///< relative finite-difference step in rho
  double rho0 = 1.0 / 16.0;     ///< largest extraction radius
  int extraction_points = 5;    ///< rho0 * 2^-k, k < extraction_points
  int newton_steps = 1;         ///< extra indicial solves per y
  double indicial_step = 1e-2;  ///< FD step used for the indicial matrix
  double singular_rcond = 1e-4;
};

class ExpansionMetric;

namespace detail {

struct Lattice {
  static std::vector<long long> key(const Vec& y) {
    std::vector<long long> k(static_cast<std::size_t>(y.size()));
    for (Eigen::Index i = 0; i < y.size(); ++i) k[i] = std::llround(y(i) * 1e9);
    return k;
  }
};

}  // namespace detail

/// One term rho^{exponent} coeff(y) in component scale (so gbar gains rho^{exponent+2} coeff).
struct ExpansionTerm {
  int exponent = -2;
  std::function<Mat(const Vec&)> coeff;  ///< n x n components
  std::string label;
};

class ExpansionMetric {
 public:
  ExpansionMetric() = default;
  ExpansionMetric(BoundaryData bd, std::vector<ExpansionTerm> terms, int order)
      : bd_(std::move(bd)), terms_(std::move(terms)), order_(order) {
    for (std::size_t k = 1; k < terms_.size(); ++k)
      if (!(terms_[k].exponent > terms_[k - 1].exponent))
        throw CaseInvariantViolated("expansion exponents must increase strictly");
    if (!terms_.empty() && terms_.front().exponent != -2)
      throw CaseInvariantViolated("expansion must start at exponent -2");
  }

  int dim() const { return bd_.n; }
  int order() const { return order_; }
  const BoundaryData& data() const { return bd_; }
  const std::vector<ExpansionTerm>& terms() const { return terms_; }
  std::vector<int> exponents() const {
    std::vector<int> e;
    for (const auto& t : terms_) e.push_back(t.exponent);
    return e;
  }

  /// gbar = rho^2 g at (rho, y).
  Mat bar(double rho, const Vec& y) const {
    const int n = bd_.n;
    Mat gb = Mat::Identity(n, n);
    const double psi = bd_.psi(rho, y);
    if (psi == 0.0) return gb;
    for (const auto& t : terms_) gb += psi * std::pow(rho, t.exponent + 2) * t.coeff(y);
    return gb;
  }

  Mat bar(const ChartPoint& p) const { return bar(p(0), p.tail(bd_.n - 1)); }

  MetricField metric() const {
    const ExpansionMetric self = *this;
    return {bd_.chart(),
            [self](const ChartPoint& p) -> Mat { return self.bar(p) / (p(0) * p(0)); },
            "g" + std::to_string(order_)};
  }

  MetricField compactified() const {
    const ExpansionMetric self = *this;
    return {bd_.chart(), [self](const ChartPoint& p) -> Mat { return self.bar(p); },
            "gbar" + std::to_string(order_)};
  }

  ExpansionMetric with_term(ExpansionTerm t) const {
    auto terms = terms_;
    terms.push_back(std::move(t));
    return {bd_, std::move(terms), order_ + 1};
  }

 private:
  BoundaryData bd_;
  std::vector<ExpansionTerm> terms_;
  int order_ = 1;
};

/// E(g-hat) = h-bar + psi q-bar. In product coordinates E_rho,rho = 1, the mixed components
/// vanish and the tangential block is I + psi q-hat(y).
inline MetricField extend(const BoundaryData& bd) {
  bd.validate();
  const BoundaryData d = bd;
  return {bd.chart(),
          [d](const ChartPoint& p) -> Mat {
            const int n = d.n;
            const Vec y = p.tail(n - 1);
            Mat e = Mat::Identity(n, n);
            const double psi = d.psi(p(0), y);
            if (psi == 0.0) return e;
            e.bottomRightCorner(n - 1, n - 1) += psi * d.qhat_at(y);
            return e;
          },
          "E"};
}

inline ExpansionMetric first_stage(const BoundaryData& bd) {
  bd.validate();
  const BoundaryData d = bd;
  ExpansionTerm t{-2,
                  [d](const Vec& y) -> Mat {
                    const int n = d.n;
                    Mat q = Mat::Zero(n, n);
                    q.bottomRightCorner(n - 1, n - 1) = d.qhat_at(y);
                    return q;
                  },
                  "psi*qbar"};
  return {bd, {t}, 1};
}

/// T(g-hat) = rho^-2 E(g-hat) = h + rho^-2 psi q-bar.
inline MetricField T_map(const BoundaryData& bd) {
  const MetricField E = extend(bd);
  return {E.chart, [E](const ChartPoint& p) -> Mat { return E(p) / (p(0) * p(0)); }, "T"};
}

// ---------------------------------------------------------------------------
// Q in compactified form. With g = rho^-2 gbar and t = rho^-2 tbar:
//   Rc(g) + (n-1) g = Rc(gbar) + (n-2) rho^-1 Hess(rho) + rho^-1 (tr Hess rho) gbar
//                     + (n-1) rho^-2 (1 - |d rho|^2) gbar,
// Hess(rho)_ij = -Gammabar^0_ij, and the gauge field is assembled from Gamma(g) = Gammabar + C,
// C^k_ij = -rho^-1 (delta^k_i rho_j + delta^k_j rho_i - gbar_ij gbar^{kl} rho_l).

struct QSplit {
  Mat einstein;  ///< Rc(g) + (n-1) g
  Mat gauge;     ///< delta*_g w
  Mat Q;
  double h_norm = 0.0;      ///< |Q|_h
  double gauge_norm = 0.0;  ///< |gauge|_h
};

namespace detail {

inline Tensor3 conformal_C(const Mat& gbinv, const Mat& gb, double rho) {
  const int n = static_cast<int>(gb.rows());
  Tensor3 C(n);
  const Vec up = gbinv.col(0);  // gbar^{k0}
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double v = 0.0;
        if (k == i && j == 0) v += 1.0;
        if (k == j && i == 0) v += 1.0;
        v -= gb(i, j) * up(k);
        C(k, i, j) = -v / rho;
      }
  return C;
}

/// Gauge covector w = gbar tbar^-1 B at q.
inline Vec gauge_covector(const MetricField& gbar, const MetricField& tbar, const ChartPoint& q,
                          const Vec& h) {
  const int n = static_cast<int>(q.size());
  const Mat gb = gbar(q);
  const Mat gi = checked_inverse(gb);
  const Mat tb = tbar(q);
  std::vector<Mat> dg(static_cast<std::size_t>(n)), dt(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    dg[k] = fd::central(gbar.chart, q, h, k, gbar.eval);
    dt[k] = fd::central(tbar.chart, q, h, k, tbar.eval);
  }
  const double tr = (gi * tb).trace();
  const Mat S = tb - 0.5 * tr * gb;
  std::vector<Mat> dS(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    const Mat dgi = -gi * dg[k] * gi;
    const double dtr = (dgi * tb).trace() + (gi * dt[k]).trace();
    dS[k] = dt[k] - 0.5 * dtr * gb - 0.5 * tr * dg[k];
  }
  const Tensor3 G = christoffels_from(gi, dg) + conformal_C(gi, gb, q(0));
  const double rho = q(0);
  Vec B = Vec::Zero(n);
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        if (gi(i, j) == 0.0) continue;
        double v = dS[i](j, k);
        if (i == 0) v -= 2.0 / rho * S(j, k);
        for (int l = 0; l < n; ++l) v -= G(l, i, j) * S(l, k) + G(l, i, k) * S(j, l);
        B(k) -= gi(i, j) * v;
      }
  return gb * checked_inverse(tb) * B;
}

}  // namespace detail

/// Q(g, t) at p from the compactified fields, with steps (rho_step * rho, y_step, ...).
inline QSplit Q_split_at(const MetricField& gbar, const MetricField& tbar, const ChartPoint& p,
                         double rho_step, double y_step) {
  const int n = static_cast<int>(p.size());
  const double rho = p(0);
  Vec h = Vec::Constant(n, y_step);
  h(0) = rho_step * rho;
  const Mat gb = gbar(p);
  const Mat gi = checked_inverse(gb);
  std::vector<Mat> dg(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) dg[k] = fd::central(gbar.chart, p, h, k, gbar.eval);
  const Tensor3 Gb = detail::christoffels_from(gi, dg);
  const Mat ric = detail::ricci_from(Gb, detail::christoffel_derivs(gbar, p, h));
  Mat hess(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) hess(i, j) = -Gb(0, i, j);
  const double lap = (gi * hess).trace();
  QSplit out;
  out.einstein = ric + (n - 2) / rho * hess + lap / rho * gb +
                 (n - 1) / (rho * rho) * (1.0 - gi(0, 0)) * gb;

  auto w = [&](const ChartPoint& q) { return detail::gauge_covector(gbar, tbar, q, h); };
  const Vec wp = w(p);
  Mat dw(n, n);
  for (int i = 0; i < n; ++i) dw.row(i) = fd::central(gbar.chart, p, h, i, w).transpose();
  const Tensor3 G = Gb + detail::conformal_C(gi, gb, rho);
  Mat gauge = sym(dw);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) gauge(i, j) -= G(k, i, j) * wp(k);
  out.gauge = gauge;
  out.Q = out.einstein - out.gauge;
  // |T|_h for g ~ rho^-2 gbar measured against h = rho^-2 I
  out.h_norm = rho * rho * out.Q.norm();
  out.gauge_norm = rho * rho * out.gauge.norm();
  return out;
}

inline QSplit Q_split_at(const ExpansionMetric& gL, const ExpansionMetric& gR, double rho,
                         const Vec& y, const ExpansionSettings& s = {}) {
  ChartPoint p(gL.dim());
  p(0) = rho;
  p.tail(gL.dim() - 1) = y;
  return Q_split_at(gL.compactified(), gR.compactified(), p, s.rho_step, s.y_step);
}

// ---------------------------------------------------------------------------
// Indicial matrices

/// Index pairs (a <= b) of the symmetric component basis.
inline std::vector<std::pair<int, int>> sym_basis(int n) {
  std::vector<std::pair<int, int>> out;
  for (int a = 0; a < n; ++a)
    for (int b = a; b < n; ++b) out.emplace_back(a, b);
  return out;
}

inline Vec sym_to_vec(const Mat& m) {
  const auto basis = sym_basis(static_cast<int>(m.rows()));
  Vec v(static_cast<Eigen::Index>(basis.size()));
  for (std::size_t k = 0; k < basis.size(); ++k) v(k) = m(basis[k].first, basis[k].second);
  return v;
}

inline Mat vec_to_sym(const Vec& v, int n) {
  const auto basis = sym_basis(n);
  Mat m = Mat::Zero(n, n);
  for (std::size_t k = 0; k < basis.size(); ++k) {
    m(basis[k].first, basis[k].second) = v(k);
    m(basis[k].second, basis[k].first) = v(k);
  }
  return m;
}

struct IndicialMatrix {
  int n = 0;
  double s = 0.0;
  Mat I;                  ///< acts on sym_to_vec coordinates
  double residual = 0.0;  ///< spread of the rho-extrapolation
  double rcond = 0.0;

  Mat apply(const Mat& C) const { return vec_to_sym(I * sym_to_vec(C), n); }
};

/// I(s) with L(rho^s C dx dx / rho^2) = rho^s (I(s) C) dx dx / rho^2 + o(rho^s) on the
/// Euclidean collar, extracted from L_at over rho = 2^-k.
inline IndicialMatrix indicial_matrix(int n, double s, double step = 1e-2, int samples = 4) {
  if (n < 3) throw InvalidArgument("indicial_matrix needs n >= 3");
  const Chart c = Chart::collar(n);
  const MetricField h = model_metric(c);
  const auto basis = sym_basis(n);
  const int m = static_cast<int>(basis.size());
  std::vector<Mat> est;
  for (int k = 0; k < samples; ++k) {
    const double rho = std::ldexp(1.0, -k);
    ChartPoint p = ChartPoint::Zero(n);
    p(0) = rho;
    Mat I(m, m);
    for (int col = 0; col < m; ++col) {
      Mat E = Mat::Zero(n, n);
      E(basis[col].first, basis[col].second) = 1.0;
      E(basis[col].second, basis[col].first) = 1.0;
      const SymTensorField r{c, [E, s](const ChartPoint& q) -> Mat {
                               return std::pow(q(0), s - 2.0) * E;
                             },
                             "rho^s E"};
      const Mat Lr =
          fd::richardson([&](double st) { return L_at(h, r, p, st); }, step) /
          std::pow(rho, s - 2.0);
      I.col(col) = sym_to_vec(Lr);
    }
    est.push_back(I);
  }
  // Neville extrapolation in rho to rho = 0
  std::vector<Mat> P = est;
  for (int lvl = 1; lvl < samples; ++lvl)
    for (int k = samples - 1; k >= lvl; --k) {
      const double rk = std::ldexp(1.0, -k), rkl = std::ldexp(1.0, -(k - lvl));
      P[k] = (rkl * P[k] - rk * P[k - 1]) / (rkl - rk);
    }
  IndicialMatrix out;
  out.n = n;
  out.s = s;
  out.I = P[samples - 1];
  double spread = 0.0;
  for (const auto& e : est) spread = std::max(spread, (e - out.I).cwiseAbs().maxCoeff());
  out.residual = spread;
  const double scale = std::max(1.0, out.I.cwiseAbs().maxCoeff());
  if (!std::isfinite(spread) || spread > 1e-4 * scale)
    throw IndicialExtractionFailure("indicial matrix at s = " + std::to_string(s) +
                                    " did not stabilise (spread " + std::to_string(spread) +
                                    ")");
  Eigen::JacobiSVD<Mat> svd(out.I);
  const Vec sv = svd.singularValues();
  out.rcond = sv(sv.size() - 1) / sv(0);
  return out;
}

/// I(s) transported to the boundary metric gbar(0, y) = F^T F.
inline Mat indicial_at(const IndicialMatrix& flat, const Mat& gbar0) {
  const int n = flat.n;
  const Eigen::LLT<Mat> llt(gbar0);
  if (llt.info() != Eigen::Success) throw SingularMetric("boundary metric not positive definite");
  const Mat F = llt.matrixL().transpose();
  const Mat Finv = checked_inverse(F);
  const auto basis = sym_basis(n);
  const int m = static_cast<int>(basis.size());
  Mat I(m, m);
  for (int col = 0; col < m; ++col) {
    Mat E = Mat::Zero(n, n);
    E(basis[col].first, basis[col].second) = 1.0;
    E(basis[col].second, basis[col].first) = 1.0;
    const Mat Cp = Finv.transpose() * E * Finv;
    I.col(col) = sym_to_vec(F.transpose() * flat.apply(Cp) * F);
  }
  return I;
}

// ---------------------------------------------------------------------------
// Coefficient extraction and correction

struct Extraction {
  Mat coefficient;
  double residual = 0.0;
};

/// Coefficient of rho^m in Q(gL, gR)(rho, y), by Neville extrapolation of rho^-m Q over
/// rho0 * 2^-k.
inline Extraction extract_coefficient(const ExpansionMetric& gL, const ExpansionMetric& gR,
                                      const Vec& y, int m, const ExpansionSettings& s) {
  const int K = s.extraction_points;
  if (K < 2) throw InvalidArgument("extraction needs at least two radii");
  std::vector<Mat> P;
  std::vector<double> r;
  const MetricField gb = gL.compactified(), tb = gR.compactified();
  for (int k = 0; k < K; ++k) {
    const double rho = s.rho0 * std::ldexp(1.0, -k);
    ChartPoint p(gL.dim());
    p(0) = rho;
    p.tail(gL.dim() - 1) = y;
    P.push_back(Q_split_at(gb, tb, p, s.rho_step, s.y_step).Q * std::pow(rho, -m));
    r.push_back(rho);
  }
  Mat prev_best = P[K - 1];
  Mat best = P[K - 1];
  for (int lvl = 1; lvl < K; ++lvl) {
    for (int k = K - 1; k >= lvl; --k) P[k] = (r[k - lvl] * P[k] - r[k] * P[k - 1]) / (r[k - lvl] - r[k]);
    prev_best = best;
    best = P[K - 1];
  }
  Extraction out{best, (best - prev_best).cwiseAbs().maxCoeff()};
  if (!best.allFinite())
    throw IndicialExtractionFailure("non-finite coefficient extraction");
  return out;
}

namespace detail {

struct CorrectionCache {
  ExpansionMetric gj;
  ExpansionMetric g1;
  ExpansionSettings settings;
  IndicialMatrix flat;
  int exponent = 0;  ///< component exponent of the correction, j - 2
  std::map<std::vector<long long>, Mat> memo;
  double worst_residual = 0.0;

  Mat solve(const Vec& y) {
    const auto key = Lattice::key(y);
    const auto it = memo.find(key);
    if (it != memo.end()) return it->second;
    const int n = gj.dim();
    Mat C = Mat::Zero(n, n);
    const BoundaryData& bd = gj.data();
    if (bd.psi_y(y) == 0.0) {
      memo.emplace(key, C);
      return C;
    }
    Extraction a = extract_coefficient(gj, g1, y, exponent, settings);
    if (a.coefficient.isZero(0.0)) {
      memo.emplace(key, C);
      return C;
    }
    Mat gbar0 = Mat::Identity(n, n);
    gbar0.bottomRightCorner(n - 1, n - 1) = bd.boundary_metric(y);
    const Mat I = indicial_at(flat, gbar0);
    const Eigen::FullPivLU<Mat> lu(I);
    C = vec_to_sym(-lu.solve(sym_to_vec(a.coefficient)), n);
    for (int it2 = 0; it2 < settings.newton_steps; ++it2) {
      const Mat Cc = C;
      const ExpansionMetric trial =
          gj.with_term({exponent, [Cc](const Vec&) { return Cc; }, "trial"});
      const Extraction r = extract_coefficient(trial, g1, y, exponent, settings);
      C += vec_to_sym(-lu.solve(sym_to_vec(r.coefficient)), n);
      worst_residual = std::max(worst_residual, r.residual);
    }
    worst_residual = std::max(worst_residual, a.residual);
    memo.emplace(key, C);
    return C;
  }
};

}  // namespace detail

/// Handle to a memoised correction coefficient qhat_j(y).
struct Correction {
  std::shared_ptr<detail::CorrectionCache> cache;
  Mat operator()(const Vec& y) const { return cache->solve(y); }
  std::size_t evaluations() const { return cache->memo.size(); }
};

/// g_{j+1} = g_j + rho^{j-2} psi qhat_j with I_y(j) qhat_j = -{rho^2 Q(g_j, g_1)}_j.
inline ExpansionMetric correction_step(const ExpansionMetric& gj, const ExpansionMetric& g1,
                                       const ExpansionSettings& s = {}) {
  const int j = gj.order();
  const int n = gj.dim();
  const IndicialMatrix flat = indicial_matrix(n, static_cast<double>(j), s.indicial_step);
  if (flat.rcond < s.singular_rcond) throw CharacteristicExponentHit(static_cast<double>(j), j);
  auto cache = std::make_shared<detail::CorrectionCache>();
  cache->gj = gj;
  cache->g1 = g1;
  cache->settings = s;
  cache->flat = flat;
  cache->exponent = j - 2;
  const Correction corr{cache};
  return gj.with_term({j - 2, corr, "qhat" + std::to_string(j)});
}

// ---------------------------------------------------------------------------
// Vanishing order

struct VanishingOrder {
  double slope = 0.0;  ///< +inf when Q vanishes identically
  double fit_residual = 0.0;
  std::vector<double> rho;
  std::vector<double> sup_norm;  ///< max_y |Q|_h per rho
  std::vector<double> per_y_slope;
  std::vector<double> per_y_residual;
  double max_gauge = 0.0;  ///< max |gauge|_h over samples
  bool exact_zero() const { return std::isinf(slope); }
};

namespace detail {

inline std::pair<double, double> loglog_fit(const std::vector<double>& x,
                                            const std::vector<double>& v) {
  const int m = static_cast<int>(x.size());
  Mat A(m, 2);
  Vec b(m);
  for (int k = 0; k < m; ++k) {
    A(k, 0) = std::log(x[k]);
    A(k, 1) = 1.0;
    b(k) = std::log(v[k]);
  }
  const Vec c = A.colPivHouseholderQr().solve(b);
  const double res = (A * c - b).norm() / std::sqrt(static_cast<double>(m));
  return {c(0), res};
}

}  // namespace detail

inline VanishingOrder vanishing_order(const ExpansionMetric& gL, const ExpansionMetric& gR,
                                      const std::vector<double>& rho_samples,
                                      const std::vector<Vec>& y_samples,
                                      const ExpansionSettings& s = {}) {
  if (rho_samples.size() < 2 || y_samples.empty())
    throw InvalidArgument("vanishing_order needs >= 2 radii and >= 1 boundary point");
  for (std::size_t k = 1; k < rho_samples.size(); ++k)
    if (!(rho_samples[k] < rho_samples[k - 1]))
      throw InvalidArgument("rho samples must decrease");
  const Chart c = gL.data().chart();
  VanishingOrder out;
  out.rho = rho_samples;
  std::vector<std::vector<double>> per_y(y_samples.size());
  for (double rho : rho_samples) {
    double best = 0.0;
    for (std::size_t i = 0; i < y_samples.size(); ++i) {
      ChartPoint p(gL.dim());
      p(0) = rho;
      p.tail(gL.dim() - 1) = y_samples[i];
      c.check(p);
      const QSplit q = Q_split_at(gL, gR, rho, y_samples[i], s);
      per_y[i].push_back(q.h_norm);
      best = std::max(best, q.h_norm);
      out.max_gauge = std::max(out.max_gauge, q.gauge_norm);
    }
    out.sup_norm.push_back(best);
  }
  const bool zero = std::all_of(out.sup_norm.begin(), out.sup_norm.end(),
                                [](double v) { return !(v > 0.0); });
  if (zero) {
    out.slope = std::numeric_limits<double>::infinity();
    return out;
  }
  if (std::any_of(out.sup_norm.begin(), out.sup_norm.end(), [](double v) { return !(v > 0.0); }))
    throw IndicialExtractionFailure("|Q|_h vanishes at some radii but not others");
  std::tie(out.slope, out.fit_residual) = detail::loglog_fit(rho_samples, out.sup_norm);
  for (const auto& v : per_y) {
    if (std::all_of(v.begin(), v.end(), [](double x) { return x > 0.0; })) {
      const auto [sl, res] = detail::loglog_fit(rho_samples, v);
      out.per_y_slope.push_back(sl);
      out.per_y_residual.push_back(res);
    } else {
      out.per_y_slope.push_back(std::numeric_limits<double>::infinity());
      out.per_y_residual.push_back(0.0);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ladder

struct LadderStage {
  int stage = 0;
  std::vector<int> exponents;
  VanishingOrder order;          ///< of Q(g_j, g_1)
  double self_gauge = 0.0;       ///< max |gauge of Q(g_j, g_j)|_h
  std::size_t coefficient_solves = 0;
};

struct Ladder {
  std::vector<LadderStage> stages;
  std::vector<ExpansionMetric> metrics;
  std::string stop_reason;
};

/// Default boundary samples: the support centre and points at half the support radius.
inline std::vector<Vec> default_y_samples(const BoundaryData& bd, double y_step) {
  std::vector<Vec> ys;
  const int m = bd.n - 1;
  auto snap = [&](Vec y) {
    for (int k = 0; k < m; ++k) y(k) = y_step * std::round(y(k) / y_step);
    return y;
  };
  ys.push_back(snap(bd.centre));
  for (int k = 0; k < m; ++k) {
    Vec y = bd.centre;
    y(k) += 0.4 * bd.radius;
    ys.push_back(snap(y));
  }
  return ys;
}

inline Ladder build_ladder(const BoundaryData& bd, int stages, const std::vector<double>& rho,
                           const std::vector<Vec>& ys, const ExpansionSettings& s = {}) {
  if (stages < 1) throw InvalidArgument("ladder needs at least one stage");
  Ladder out;
  const ExpansionMetric g1 = first_stage(bd);
  ExpansionMetric g = g1;
  for (int j = 1; j <= stages; ++j) {
    if (j > 1) {
      try {
        g = correction_step(g, g1, s);
      } catch (const CharacteristicExponentHit& e) {
        out.stop_reason = e.what();
        break;
      }
    }
    LadderStage st;
    st.stage = j;
    st.exponents = g.exponents();
    st.order = vanishing_order(g, g1, rho, ys, s);
    st.self_gauge = vanishing_order(g, g, rho, ys, s).max_gauge;
    for (const auto& t : g.terms())
      if (const auto* c = t.coeff.target<Correction>()) st.coefficient_solves += c->evaluations();
    out.stages.push_back(st);
    out.metrics.push_back(g);
  }
  if (out.stop_reason.empty())
    out.stop_reason = stages >= bd.n - 1 ? "stage limit n-1" : "requested stages";
  return out;
}

}  // namespace pelab
