#pragma once

#include <array>
#include <functional>
#include <string>
#include <type_traits>
#include <utility>

#include "pelab/charts.hpp"
#include "pelab/linalg.hpp"

namespace pelab {

/// Symmetric positive-definite field of component matrices on a chart.
struct MetricField {
  Chart chart;
  std::function<Mat(const ChartPoint&)> eval;
  std::string label;

  Mat operator()(const ChartPoint& p) const { return eval(p); }
};

/// Symmetric 2-tensor field (no positivity requirement).
struct SymTensorField {
  Chart chart;
  std::function<Mat(const ChartPoint&)> eval;
  std::string label;

  Mat operator()(const ChartPoint& p) const { return eval(p); }
};

struct ScalarField {
  std::function<double(const ChartPoint&)> eval;
  std::string label;
  double operator()(const ChartPoint& p) const { return eval(p); }
};

struct CovectorField {
  std::function<Vec(const ChartPoint&)> eval;
  std::string label;
  Vec operator()(const ChartPoint& p) const { return eval(p); }
};

struct Tensor3Field {
  Chart chart;
  std::function<Tensor3(const ChartPoint&)> eval;
  std::string label;
};

/// The chart's own hyperbolic metric h.
inline MetricField model_metric(const Chart& chart) {
  return {chart, [chart](const ChartPoint& p) { return metric_at(chart, p); },
          "h(" + to_string(chart.kind()) + ")"};
}

inline SymTensorField as_tensor(const MetricField& g) { return {g.chart, g.eval, g.label}; }

/// g + s * e, as a metric.
inline MetricField perturb(const MetricField& g, const SymTensorField& e, double s) {
  return {g.chart, [g, e, s](const ChartPoint& p) -> Mat { return g(p) + s * e(p); },
          g.label + "+" + std::to_string(s) + "*" + e.label};
}

// ---------------------------------------------------------------------------
// Finite-difference plumbing. All derivatives are second-order central differences
// with per-coordinate steps h_i = step / max(1, sqrt(g_ii(p))); nested stencils reuse h.

namespace fd {

inline Vec steps(const Mat& gp, double step) {
  if (!(step > 0.0)) throw InvalidArgument("finite-difference step must be positive");
  Vec h(gp.rows());
  for (Eigen::Index i = 0; i < gp.rows(); ++i) {
    if (!(gp(i, i) > 0.0)) throw SingularMetric("metric diagonal not positive");
    h(i) = step / std::max(1.0, std::sqrt(gp(i, i)));
  }
  return h;
}

inline ChartPoint shift(const Chart& chart, const ChartPoint& p, int k, double d) {
  ChartPoint q = p;
  q(k) += d;
  if (!chart.contains(q))
    throw StencilError("stencil point leaves the chart along coordinate " + std::to_string(k));
  return q;
}

inline ChartPoint shift2(const Chart& chart, const ChartPoint& p, int k, double dk, int l,
                         double dl) {
  ChartPoint q = p;
  q(k) += dk;
  q(l) += dl;
  if (!chart.contains(q)) throw StencilError("stencil point leaves the chart");
  return q;
}

/// d/dx_k of fn at p.
template <class F>
auto central(const Chart& chart, const ChartPoint& p, const Vec& h, int k, F&& fn) {
  using R = std::decay_t<decltype(fn(p))>;
  const R plus = fn(shift(chart, p, k, h(k)));
  const R minus = fn(shift(chart, p, k, -h(k)));
  R out = (0.5 / h(k)) * (plus - minus);
  return out;
}

/// Richardson combination of a second-order quantity evaluated at `step` and `step/2`.
template <class F>
auto richardson(F&& fn, double step) {
  using R = std::decay_t<decltype(fn(step))>;
  const R coarse = fn(step);
  const R fine = fn(0.5 * step);
  R out = (1.0 / 3.0) * (4.0 * fine - coarse);
  return out;
}

}  // namespace fd

namespace detail {

inline Tensor3 christoffels_from(const Mat& ginv, const std::vector<Mat>& dg) {
  const int n = static_cast<int>(ginv.rows());
  Tensor3 gam(n);
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j)
      for (int l = 0; l < n; ++l) {
        const double low = 0.5 * (dg[i](j, l) + dg[j](i, l) - dg[l](i, j));
        for (int k = 0; k < n; ++k) {
          gam(k, i, j) += ginv(k, l) * low;
        }
      }
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < i; ++j) gam(k, i, j) = gam(k, j, i);
  return gam;
}

inline Tensor3 christoffels_h(const MetricField& g, const ChartPoint& p, const Vec& h) {
  const int n = static_cast<int>(p.size());
  std::vector<Mat> dg(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) dg[k] = fd::central(g.chart, p, h, k, g.eval);
  return christoffels_from(checked_inverse(g(p)), dg);
}

/// dGamma[l](k,i,j) = d_l Gamma^k_ij.
inline std::vector<Tensor3> christoffel_derivs(const MetricField& g, const ChartPoint& p,
                                               const Vec& h) {
  const int n = static_cast<int>(p.size());
  std::vector<Tensor3> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int l = 0; l < n; ++l)
    out.push_back(fd::central(g.chart, p, h, l,
                              [&](const ChartPoint& q) { return christoffels_h(g, q, h); }));
  return out;
}

inline Mat ricci_from(const Tensor3& gam, const std::vector<Tensor3>& dgam) {
  const int n = gam.dim();
  Mat ric = Mat::Zero(n, n);
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k) {
      double v = 0.0;
      for (int i = 0; i < n; ++i) {
        v += dgam[i](i, j, k) - dgam[j](i, i, k);
        for (int m = 0; m < n; ++m) v += gam(i, i, m) * gam(m, j, k) - gam(i, j, m) * gam(m, i, k);
      }
      ric(j, k) = v;
    }
  return sym(ric);
}

inline Mat ricci_h(const MetricField& g, const ChartPoint& p, const Vec& h) {
  return ricci_from(christoffels_h(g, p, h), christoffel_derivs(g, p, h));
}

/// D(k,i,j) = nabla_k u_ij.
inline Tensor3 cov_deriv_h(const MetricField& g, const SymTensorField& u, const ChartPoint& p,
                           const Vec& h, const Tensor3& gam) {
  const int n = static_cast<int>(p.size());
  const Mat up = u(p);
  Tensor3 d(n);
  for (int k = 0; k < n; ++k) {
    const Mat du = fd::central(g.chart, p, h, k, u.eval);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double v = du(i, j);
        for (int m = 0; m < n; ++m) v -= gam(m, k, i) * up(m, j) + gam(m, k, j) * up(i, m);
        d(k, i, j) = v;
      }
  }
  return d;
}

inline Tensor3 cov_deriv_h(const MetricField& g, const SymTensorField& u, const ChartPoint& p,
                           const Vec& h) {
  return cov_deriv_h(g, u, p, h, christoffels_h(g, p, h));
}

inline Mat rough_laplacian_h(const MetricField& g, const SymTensorField& u, const ChartPoint& p,
                             const Vec& h) {
  const int n = static_cast<int>(p.size());
  const Tensor3 gam = christoffels_h(g, p, h);
  const Tensor3 D = cov_deriv_h(g, u, p, h, gam);
  const Mat ginv = checked_inverse(g(p));
  Mat out = Mat::Zero(n, n);
  for (int a = 0; a < n; ++a) {
    const Tensor3 dD = fd::central(g.chart, p, h, a,
                                   [&](const ChartPoint& q) { return cov_deriv_h(g, u, q, h); });
    for (int b = 0; b < n; ++b) {
      if (ginv(a, b) == 0.0) continue;
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          double v = dD(b, i, j);
          for (int m = 0; m < n; ++m)
            v -= gam(m, a, b) * D(m, i, j) + gam(m, a, i) * D(b, m, j) + gam(m, a, j) * D(b, i, m);
          out(i, j) -= ginv(a, b) * v;
        }
    }
  }
  return sym(out);
}

/// (delta_g t)_k = -g^{ij} nabla_i t_jk.
inline Vec divergence_h(const MetricField& g, const SymTensorField& t, const ChartPoint& p,
                        const Vec& h) {
  const int n = static_cast<int>(p.size());
  const Tensor3 D = cov_deriv_h(g, t, p, h);
  const Mat ginv = checked_inverse(g(p));
  Vec out = Vec::Zero(n);
  for (int k = 0; k < n; ++k)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) out(k) -= ginv(i, j) * D(i, j, k);
  return out;
}

/// (delta*_g w)_ij = (1/2)(nabla_i w_j + nabla_j w_i).
template <class W>
Mat sym_gradient_h(const MetricField& g, W&& w, const ChartPoint& p, const Vec& h) {
  const int n = static_cast<int>(p.size());
  const Tensor3 gam = christoffels_h(g, p, h);
  const Vec wp = w(p);
  Mat dw(n, n);
  for (int i = 0; i < n; ++i) dw.row(i) = fd::central(g.chart, p, h, i, w).transpose();
  Mat out = sym(dw);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k) out(i, j) -= gam(k, i, j) * wp(k);
  return out;
}

}  // namespace detail

/// (G_g t)_ij = t_ij - (1/2) (tr_g t) g_ij.
inline Mat bianchi_G(const Mat& g, const Mat& t) {
  const double tr = (checked_inverse(g) * t).trace();
  return t - 0.5 * tr * g;
}

inline Tensor3 christoffels_at(const MetricField& g, const ChartPoint& p, double step) {
  return detail::christoffels_h(g, p, fd::steps(g(p), step));
}

/// Richardson-extrapolated Christoffels (fourth order).
inline Tensor3 christoffels_richardson_at(const MetricField& g, const ChartPoint& p, double step) {
  const Mat gp = g(p);
  return fd::richardson(
      [&](double s) { return detail::christoffels_h(g, p, fd::steps(gp, s)); }, step);
}

inline Mat ricci_at(const MetricField& g, const ChartPoint& p, double step) {
  return detail::ricci_h(g, p, fd::steps(g(p), step));
}

/// Rm(a,b,c,d) = g_dm R^m_abc with R(d_a, d_b) d_c = R^m_abc d_m. For constant
/// curvature K this is K (g_ad g_bc - g_ac g_bd); Ricci is the (a,d) trace.
inline Tensor4 riemann_at(const MetricField& g, const ChartPoint& p, double step) {
  const Mat gp = g(p);
  const Vec h = fd::steps(gp, step);
  const int n = static_cast<int>(p.size());
  const Tensor3 gam = detail::christoffels_h(g, p, h);
  const auto dgam = detail::christoffel_derivs(g, p, h);
  Tensor4 up(n);
  for (int m = 0; m < n; ++m)
    for (int a = 0; a < n; ++a)
      for (int b = 0; b < n; ++b)
        for (int c = 0; c < n; ++c) {
          double v = dgam[a](m, b, c) - dgam[b](m, a, c);
          for (int e = 0; e < n; ++e) v += gam(m, a, e) * gam(e, b, c) - gam(m, b, e) * gam(e, a, c);
          up(m, a, b, c) = v;
        }
  Tensor4 rm(n);
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      for (int c = 0; c < n; ++c)
        for (int d = 0; d < n; ++d) {
          double v = 0.0;
          for (int m = 0; m < n; ++m) v += gp(d, m) * up(m, a, b, c);
          rm(a, b, c, d) = v;
        }
  return rm;
}

/// Difference tensor A^p_ij = -(1/2) g^{pm} (nabla^h_i e_jm + nabla^h_j e_im - nabla^h_m e_ij),
/// e = g - h. Equals Gamma(h) - Gamma(g).
inline Tensor3 difference_tensor_at(const MetricField& g, const MetricField& hm,
                                    const ChartPoint& p, double step) {
  const Vec h = fd::steps(hm(p), step);
  const int n = static_cast<int>(p.size());
  const SymTensorField e{g.chart, [&](const ChartPoint& q) -> Mat { return g(q) - hm(q); }, "e"};
  const Tensor3 De = detail::cov_deriv_h(hm, e, p, h);
  const Mat ginv = checked_inverse(g(p));
  Tensor3 A(n);
  for (int q = 0; q < n; ++q)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        double v = 0.0;
        for (int m = 0; m < n; ++m) v += ginv(q, m) * (De(i, j, m) + De(j, i, m) - De(m, i, j));
        A(q, i, j) = -0.5 * v;
      }
  return A;
}

/// Ricci of g rebuilt from Ric(h) and B = Gamma(g) - Gamma(h) = -A:
/// Ric(g)_jk = Ric(h)_jk + nabla_i B^i_jk - nabla_j B^i_ik + B^i_im B^m_jk - B^i_jm B^m_ik.
inline Mat ricci_from_split_at(const MetricField& g, const MetricField& hm, const ChartPoint& p,
                               double step) {
  const Vec h = fd::steps(hm(p), step);
  const int n = static_cast<int>(p.size());
  auto B_at = [&](const ChartPoint& q) {
    return detail::christoffels_h(g, q, h) - detail::christoffels_h(hm, q, h);
  };
  const Tensor3 gam = detail::christoffels_h(hm, p, h);
  const Tensor3 B = B_at(p);
  // nabla_i B^l_jk
  std::vector<Tensor3> dB;
  for (int i = 0; i < n; ++i) dB.push_back(fd::central(g.chart, p, h, i, B_at));
  auto nablaB = [&](int i, int l, int j, int k) {
    double v = dB[i](l, j, k);
    for (int m = 0; m < n; ++m)
      v += gam(l, i, m) * B(m, j, k) - gam(m, i, j) * B(l, m, k) - gam(m, i, k) * B(l, j, m);
    return v;
  };
  Mat ric = detail::ricci_h(hm, p, h);
  for (int j = 0; j < n; ++j)
    for (int k = 0; k < n; ++k) {
      double v = 0.0;
      for (int i = 0; i < n; ++i) {
        v += nablaB(i, i, j, k) - nablaB(j, i, i, k);
        for (int m = 0; m < n; ++m) v += B(i, i, m) * B(m, j, k) - B(i, j, m) * B(m, i, k);
      }
      ric(j, k) += v;
    }
  return sym(ric);
}

/// Nonnegative Laplacian Delta u = -g^{ij}(d_i d_j u - Gamma^k_ij d_k u).
inline double laplacian_scalar_at(const MetricField& g, const ScalarField& u, const ChartPoint& p,
                                  double step) {
  const Mat gp = g(p);
  const Vec h = fd::steps(gp, step);
  const int n = static_cast<int>(p.size());
  const Mat ginv = checked_inverse(gp);
  const Tensor3 gam = detail::christoffels_h(g, p, h);
  const double u0 = u(p);
  Vec du(n);
  Mat ddu(n, n);
  for (int i = 0; i < n; ++i) {
    const double up = u(fd::shift(g.chart, p, i, h(i)));
    const double um = u(fd::shift(g.chart, p, i, -h(i)));
    du(i) = (up - um) / (2 * h(i));
    ddu(i, i) = (up - 2 * u0 + um) / (h(i) * h(i));
  }
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      if (ginv(i, j) == 0.0) {
        ddu(i, j) = ddu(j, i) = 0.0;
        continue;
      }
      const double pp = u(fd::shift2(g.chart, p, i, h(i), j, h(j)));
      const double pm = u(fd::shift2(g.chart, p, i, h(i), j, -h(j)));
      const double mp = u(fd::shift2(g.chart, p, i, -h(i), j, h(j)));
      const double mm = u(fd::shift2(g.chart, p, i, -h(i), j, -h(j)));
      ddu(i, j) = ddu(j, i) = (pp - pm - mp + mm) / (4 * h(i) * h(j));
    }
  double lap = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double hess = ddu(i, j);
      for (int k = 0; k < n; ++k) hess -= gam(k, i, j) * du(k);
      lap -= ginv(i, j) * hess;
    }
  return lap;
}

/// Rough Laplacian nabla^* nabla u = -g^{ab} nabla_a nabla_b u.
inline Mat rough_laplacian_tensor_at(const MetricField& g, const SymTensorField& u,
                                     const ChartPoint& p, double step) {
  return detail::rough_laplacian_h(g, u, p, fd::steps(g(p), step));
}

/// nabla_k u_ij as D(k, i, j).
inline Tensor3 covariant_derivative_at(const MetricField& g, const SymTensorField& u,
                                       const ChartPoint& p, double step) {
  return detail::cov_deriv_h(g, u, p, fd::steps(g(p), step));
}

struct LichnerowiczResult {
  Mat general;     ///< nabla*nabla u + 2 Rc u - 2 Rm u from finite-difference curvature
  Mat hyperbolic;  ///< nabla*nabla u - 2n u + 2 (tr_h u) h
};

inline LichnerowiczResult lichnerowicz_at(const MetricField& hm, const SymTensorField& u,
                                          const ChartPoint& p, double step) {
  const int n = static_cast<int>(p.size());
  const Mat hp = hm(p);
  const Mat hinv = checked_inverse(hp);
  const Mat up = u(p);
  const Mat rough = rough_laplacian_tensor_at(hm, u, p, step);
  const Mat ric = ricci_at(hm, p, step);
  const Tensor4 rm = riemann_at(hm, p, step);
  const Mat ric_u = 0.5 * (ric * hinv * up + up * hinv * ric);
  const Mat uup = hinv * up * hinv;
  Mat rm_u = Mat::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k)
        for (int l = 0; l < n; ++l) rm_u(i, j) += rm(i, k, l, j) * uup(k, l);
  LichnerowiczResult out;
  out.general = sym(rough + 2.0 * ric_u - 2.0 * rm_u);
  out.hyperbolic = rough - 2.0 * n * up + 2.0 * (hinv * up).trace() * hp;
  return out;
}

/// delta_g t.
inline Vec divergence_at(const MetricField& g, const SymTensorField& t, const ChartPoint& p,
                         double step) {
  return detail::divergence_h(g, t, p, fd::steps(g(p), step));
}

/// delta*_g w.
inline Mat sym_gradient_at(const MetricField& g, const CovectorField& w, const ChartPoint& p,
                           double step) {
  return detail::sym_gradient_h(g, w.eval, p, fd::steps(g(p), step));
}

struct BianchiOps {
  Vec divergence;      ///< delta_g t
  Mat G;               ///< G_g t
  Mat sym_grad_of_div; ///< delta*_g (delta_g t)
};

inline BianchiOps bianchi_ops_at(const MetricField& g, const SymTensorField& t, const ChartPoint& p,
                                 double step) {
  const Vec h = fd::steps(g(p), step);
  BianchiOps out;
  out.divergence = detail::divergence_h(g, t, p, h);
  out.G = bianchi_G(g(p), t(p));
  out.sym_grad_of_div = detail::sym_gradient_h(
      g, [&](const ChartPoint& q) { return detail::divergence_h(g, t, q, h); }, p, h);
  return out;
}

namespace detail {

inline Vec deturck_h(const MetricField& g, const MetricField& tau, const ChartPoint& p,
                     const Vec& h) {
  const SymTensorField S{g.chart,
                         [&](const ChartPoint& q) -> Mat { return bianchi_G(g(q), tau(q)); }, "G"};
  const Vec div = divergence_h(g, S, p, h);
  return g(p) * checked_inverse(tau(p)) * div;
}

}  // namespace detail

/// w = g tau^{-1} delta_g G_g tau.
inline Vec deturck_field_at(const MetricField& g, const MetricField& tau, const ChartPoint& p,
                            double step) {
  return detail::deturck_h(g, tau, p, fd::steps(g(p), step));
}

struct QParts {
  Mat ricci;  ///< Rc(g)
  Mat gauge;  ///< delta*_g (g t^{-1} delta_g G_g t)
  Mat Q;      ///< Rc(g) + (n-1) g - gauge
};

inline QParts Q_parts_at(const MetricField& g, const MetricField& t, const ChartPoint& p,
                         double step) {
  const Mat gp = g(p);
  const Vec h = fd::steps(gp, step);
  const int n = static_cast<int>(p.size());
  QParts out;
  out.ricci = detail::ricci_h(g, p, h);
  out.gauge = detail::sym_gradient_h(
      g, [&](const ChartPoint& q) { return detail::deturck_h(g, t, q, h); }, p, h);
  out.Q = out.ricci + (n - 1) * gp - out.gauge;
  return out;
}

/// Gauge-adjusted Einstein operator Q(g, t) = Rc(g) + (n-1) g - delta*_g(g t^{-1} delta_g G_g t).
inline Mat Q_at(const MetricField& g, const MetricField& t, const ChartPoint& p, double step) {
  return Q_parts_at(g, t, p, step).Q;
}

/// L r = (1/2)((Delta + K_trace)(u h) + (Delta + K_free) r0), u = tr_h r / n, r0 = r - u h,
/// Delta the rough Laplacian. Default constants are (2(n-1), -2).
inline Mat L_at(const MetricField& hm, const SymTensorField& r, const ChartPoint& p, double step,
                std::pair<double, double> K_pair = {NAN, NAN}) {
  const int n = static_cast<int>(p.size());
  const double k_trace = std::isnan(K_pair.first) ? 2.0 * (n - 1) : K_pair.first;
  const double k_free = std::isnan(K_pair.second) ? -2.0 : K_pair.second;
  const SymTensorField trace_part{
      hm.chart,
      [&](const ChartPoint& q) -> Mat {
        const Mat hq = hm(q);
        return (checked_inverse(hq) * r(q)).trace() / n * hq;
      },
      "uh"};
  const SymTensorField free_part{hm.chart,
                                 [&](const ChartPoint& q) -> Mat { return r(q) - trace_part(q); },
                                 "r0"};
  const Vec h = fd::steps(hm(p), step);
  const Mat a = detail::rough_laplacian_h(hm, trace_part, p, h) + k_trace * trace_part(p);
  const Mat b = detail::rough_laplacian_h(hm, free_part, p, h) + k_free * free_part(p);
  return 0.5 * (a + b);
}

}  // namespace pelab
