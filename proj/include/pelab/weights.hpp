#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pelab/errors.hpp"

namespace pelab {

/// Open interval (lo, hi); `empty` when no real number satisfies the defining inequalities.
struct Window {
  double lo = 0.0;
  double hi = 0.0;
  bool empty = true;

  bool contains(double x) const { return !empty && x > lo && x < hi; }
  double midpoint() const { return 0.5 * (lo + hi); }
  static Window none() { return {}; }
  static Window open(double a, double b) { return {a, b, !(a < b)}; }
};

/// Multi-weight (mu0; mu_1 .. mu_nc) for a manifold with cusps of ranks f_1 .. f_nc.
struct WeightVector {
  int n = 4;
  double mu0 = 0.0;
  std::vector<double> mus;
  std::vector<int> ranks;

  void validate() const {
    if (mus.size() != ranks.size()) throw InvalidArgument("mus and ranks differ in length");
    for (int f : ranks)
      if (f < 1 || f > n - 1)
        throw InvalidArgument("cusp rank " + std::to_string(f) + " outside [1, n-1]");
  }
};

/// Margin of (Delta + K) sigma^mu >= delta sigma^mu on one end.
struct EstimateMargin {
  std::string end_kind;  ///< "H0", "cusp", "maximal"
  double delta = 0.0;
  double K = -2.0;
  double mu = 0.0;
  double nu = 0.0;
  int f = 0;
  int b = 0;
  int n = 0;
};

/// mu0 > (n-1)/2 and mu_j > -f_j/2, all strict.
inline bool l2_cutoff_check(const WeightVector& w) {
  w.validate();
  if (!(w.mu0 > 0.5 * (w.n - 1))) return false;
  for (std::size_t j = 0; j < w.mus.size(); ++j)
    if (!(w.mus[j] > -0.5 * w.ranks[j])) return false;
  return true;
}

struct BarrierCoefficients {
  double c_cos = 0.0;  ///< coefficient of cos^2 theta0
  double c_sin = 0.0;  ///< coefficient of sin^2 theta0
  double margin() const { return std::min(c_cos, c_sin); }
  /// (Delta + K)(r^mu cos^nu) / (r^mu cos^nu) at angle theta0.
  double at(double theta0) const {
    const double c = std::cos(theta0), s = std::sin(theta0);
    return c_cos * c * c + c_sin * s * s;
  }
};

/// (Delta + K)(r^mu cos^nu theta0) = [c_cos cos^2 + c_sin sin^2] r^mu cos^nu theta0 on an
/// intermediate cusp of rank f.
inline BarrierCoefficients barrier_cusp(double K, double mu, double nu, int f, int n) {
  const int b = n - 1 - f;
  if (f < 1 || b < 1)
    throw InvalidArgument("barrier_cusp needs 1 <= f <= n-2; use barrier_maximal for f = n-1");
  return {K - (mu * mu + f * mu - b * nu), K - nu * (nu - (n - 1))};
}

/// (Delta + K) r^mu / r^mu on a maximal cusp.
inline double barrier_maximal(double K, double mu, int n) { return K - mu * (mu + n - 1); }

/// (Delta + K) rho^nu / rho^nu near the conformal infinity.
inline double barrier_H0(double K, double nu, int n) { return K - nu * (nu - (n - 1)); }

/// Roots of nu (nu - (n-1)) = K, ascending.
inline std::pair<double, double> indicial_roots(double K, int n) {
  const double disc = (n - 1.0) * (n - 1.0) + 4.0 * K;
  if (disc < 0.0)
    throw NoRealIndicialRoots("(n-1)^2 + 4K = " + std::to_string(disc) + " < 0");
  const double sq = std::sqrt(disc);
  return {0.5 * ((n - 1) - sq), 0.5 * ((n - 1) + sq)};
}

/// {nu > (n-1)/2} intersected with {barrier_H0(K, nu, n) > 0}.
inline Window mu0_window(int n, double K = -2.0) {
  if (n < 2) throw InvalidArgument("mu0_window needs n >= 2");
  const double disc = (n - 1.0) * (n - 1.0) + 4.0 * K;
  if (disc <= 0.0) return Window::none();
  const double sq = std::sqrt(disc);
  return Window::open(0.5 * (n - 1), 0.5 * ((n - 1) + sq));
}

/// (0, mu*) with mu* the positive root of mu^2 + f mu - ((n-1-f) mu0 + K).
inline Window cusp_weight_window(int n, int f, double mu0, double K = -2.0) {
  const int b = n - 1 - f;
  if (f < 1 || b < 1) throw InvalidArgument("cusp_weight_window needs 1 <= f <= n-2");
  const double c = b * mu0 + K;
  if (!(c > 0.0)) return Window::none();
  return Window::open(0.0, 0.5 * (-f + std::sqrt(f * f + 4.0 * c)));
}

/// Smallest mu0 for which a rank-f cusp window is nonempty: b mu0 + K > 0.
inline double cusp_mu0_threshold(int n, int f, double K = -2.0) { return -K / (n - 1 - f); }

struct CuspWeightEntry {
  int index = 0;
  int f = 0;
  Window window;
  double closed_form = 0.0;         ///< 1/(n-2)
  bool closed_form_passes = false;  ///< evaluated against the barrier inequality
  BarrierCoefficients closed_form_coefficients;
  double chosen = 0.0;
  BarrierCoefficients coefficients;  ///< at the chosen weight
  EstimateMargin margin;
  std::optional<BarrierCoefficients> coefficients_trace_block;  ///< K = 2(n-1) double-check
};

struct AdmissibilityReport {
  int n = 0;
  double K = -2.0;
  std::vector<int> ranks;
  Window mu0_window;
  double mu0 = 0.0;
  std::string mu0_rule;
  EstimateMargin h0_margin;
  std::vector<CuspWeightEntry> cusps;
  bool l2_ok = false;
  bool margins_ok = false;
  double delta_min = 1e-6;
  std::vector<std::string> notes;
  std::optional<WeightVector> weights;
};

/// Search for an admissible multi-weight. Throws AdmissibilityObstruction for a maximal
/// cusp or an intermediate cusp whose window is empty for every admissible mu0, and
/// DimensionTooSmall when the mu0 window is empty. A given mu0 replaces the default rule;
/// if it misses the window the report simply carries no weights.
inline AdmissibilityReport admissible_weights(int n, const std::vector<int>& ranks,
                                              double K = -2.0, double delta_min = 1e-6,
                                              std::optional<double> given_mu0 = std::nullopt) {
  AdmissibilityReport rep;
  rep.n = n;
  rep.K = K;
  rep.ranks = ranks;
  rep.delta_min = delta_min;
  if (n < 2) throw InvalidArgument("dimension must be at least 2");
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    const int f = ranks[i];
    if (f < 1 || f > n - 1)
      throw InvalidArgument("cusp rank " + std::to_string(f) + " outside [1, n-1]");
    if (f == n - 1)
      throw AdmissibilityObstruction(
          "cusp " + std::to_string(i + 1) + " (rank " + std::to_string(f) + ")",
          "maximal-rank cusp: K - mu(mu + n - 1) < 0 for every mu > 0");
  }
  rep.mu0_window = mu0_window(n, K);
  if (rep.mu0_window.empty)
    throw DimensionTooSmall("mu0 window is empty for n = " + std::to_string(n) +
                            " ((n-1)^2 + 4K <= 0)");
  const Window& W = rep.mu0_window;

  double mu0 = W.contains(n - 2.0) ? n - 2.0 : W.midpoint();
  rep.mu0_rule = W.contains(n - 2.0) ? "n-2" : "window midpoint";
  double need = W.lo;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    const double t = cusp_mu0_threshold(n, ranks[i], K);
    if (t >= W.hi)
      throw AdmissibilityObstruction(
          "cusp " + std::to_string(i + 1) + " (rank " + std::to_string(ranks[i]) + ")",
          "rank-" + std::to_string(ranks[i]) + " cusp in n=" + std::to_string(n) +
              ": cusp weight window empty for every mu0 in the mu0 window");
    need = std::max(need, t);
  }
  if (given_mu0) {
    mu0 = *given_mu0;
    rep.mu0_rule = "given";
  } else if (mu0 <= need) {
    mu0 = 0.5 * (need + W.hi);
    rep.mu0_rule = "raised to midpoint of (" + std::to_string(need) + ", window top)";
  }
  rep.mu0 = mu0;
  rep.h0_margin = {"H0", barrier_H0(K, mu0, n), K, 0.0, mu0, 0, 0, n};

  WeightVector w{n, mu0, {}, ranks};
  bool margins_ok = rep.h0_margin.delta >= delta_min;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    CuspWeightEntry e;
    e.index = static_cast<int>(i) + 1;
    e.f = ranks[i];
    e.window = cusp_weight_window(n, e.f, mu0, K);
    e.closed_form = 1.0 / (n - 2.0);
    e.closed_form_coefficients = barrier_cusp(K, e.closed_form, mu0, e.f, n);
    e.closed_form_passes = e.closed_form_coefficients.margin() > 0.0;
    e.chosen = e.window.contains(e.closed_form) ? e.closed_form : 0.5 * e.window.hi;
    e.coefficients = barrier_cusp(K, e.chosen, mu0, e.f, n);
    e.margin = {"cusp", e.coefficients.margin(), K, e.chosen, mu0, e.f, n - 1 - e.f, n};
    e.coefficients_trace_block = barrier_cusp(2.0 * (n - 1), e.chosen, mu0, e.f, n);
    if (!e.closed_form_passes)
      rep.notes.push_back("cusp " + std::to_string(e.index) + " (rank " + std::to_string(e.f) +
                          "): closed-form weight 1/(n-2) = " + std::to_string(e.closed_form) +
                          " violates the cusp barrier inequality (margin " +
                          std::to_string(e.closed_form_coefficients.margin()) +
                          "); using mu*/2 = " + std::to_string(e.chosen));
    margins_ok = margins_ok && e.margin.delta >= delta_min;
    w.mus.push_back(e.chosen);
    rep.cusps.push_back(e);
  }
  rep.l2_ok = l2_cutoff_check(w);
  rep.margins_ok = margins_ok;
  if (rep.l2_ok && rep.margins_ok) rep.weights = w;
  return rep;
}

}  // namespace pelab
