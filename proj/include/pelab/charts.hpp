#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "pelab/errors.hpp"
#include "pelab/linalg.hpp"

namespace pelab {

using ChartPoint = Vec;

enum class ChartKind { IntermediateCusp, MaximalCusp, Collar, UpperHalfSpace };

inline std::string to_string(ChartKind k) {
  switch (k) {
    case ChartKind::IntermediateCusp: return "cusp";
    case ChartKind::MaximalCusp: return "maximal";
    case ChartKind::Collar: return "collar";
    case ChartKind::UpperHalfSpace: return "uhs";
  }
  return "?";
}

/// Boundary family h_U(rho) for collar charts.
enum class BoundaryFamily { Euclidean, Round, Custom };

/// Coordinate interval. Endpoints are excluded unless the matching flag is set.
struct Interval {
  double lo = -std::numeric_limits<double>::infinity();
  double hi = std::numeric_limits<double>::infinity();
  bool lo_closed = false;
  bool hi_closed = false;

  bool contains(double x) const {
    const bool above = lo_closed ? x >= lo : x > lo;
    const bool below = hi_closed ? x <= hi : x < hi;
    return above && below;
  }
};

/// Truncation of boundary defining functions to 1 outside a tube of width `tube_width`;
/// the transition occupies the outer `transition` fraction of the tube.
struct Truncation {
  double tube_width = 1.0;
  double transition = 0.2;
};

namespace detail {

inline double smooth_step(double t) {
  if (t <= 0.0) return 0.0;
  if (t >= 1.0) return 1.0;
  const double a = std::exp(-1.0 / t);
  const double b = std::exp(-1.0 / (1.0 - t));
  return a / (a + b);
}

/// Round metric on S^m in hyperspherical angles (phi_1 .. phi_m), phi_m the azimuth.
inline Vec round_sphere_diag(const Vec& phi) {
  const auto m = phi.size();
  Vec d(m);
  double prod = 1.0;
  for (Eigen::Index k = 0; k < m; ++k) {
    d(k) = prod;
    const double s = std::sin(phi(k));
    prod *= s * s;
  }
  return d;
}

}  // namespace detail

/// x truncated to 1 past the tube; identity below (1 - transition) * width.
inline double truncate_bdf(double x, const Truncation& tr) {
  const double w = tr.tube_width;
  const double start = (1.0 - tr.transition) * w;
  if (x <= start) return x;
  if (x >= w) return 1.0;
  const double t = (x - start) / (tr.transition * w);
  return x + (1.0 - x) * detail::smooth_step(t);
}

using BoundaryMetricFn = std::function<Mat(double rho, const Vec& y)>;

/// A model coordinate patch with a closed-form hyperbolic metric.
///
/// Coordinates:
///   IntermediateCusp  (r, theta0, phi_1..phi_{b-1}, w_1..w_f)
///   MaximalCusp       (r, x_1..x_{n-1})
///   Collar            (rho, y_1..y_{n-1})
///   UpperHalfSpace    (u, v_1..v_b, z_1..z_f)
class Chart {
 public:
  static Chart intermediate_cusp(int n, int f, double pole_margin = 1e-3) {
    if (n < 3 || f < 1 || f > n - 2)
      throw InvalidArgument("intermediate cusp needs 1 <= f <= n-2 (n=" + std::to_string(n) +
                            ", f=" + std::to_string(f) + ")");
    Chart c(ChartKind::IntermediateCusp, n, f);
    c.pole_margin_ = pole_margin;
    const int b = n - 1 - f;
    const double half_pi = std::numbers::pi / 2;
    c.ranges_.push_back({0.0, INFINITY});
    if (b == 1)
      c.ranges_.push_back({-half_pi, half_pi});
    else
      c.ranges_.push_back({pole_margin, half_pi, true, false});
    for (int k = 0; k < b - 1; ++k) {
      if (k < b - 2)
        c.ranges_.push_back({pole_margin, std::numbers::pi - pole_margin, true, true});
      else
        c.ranges_.push_back({});
    }
    for (int k = 0; k < f; ++k) c.ranges_.push_back({});
    return c;
  }

  static Chart maximal_cusp(int n) {
    if (n < 2) throw InvalidArgument("maximal cusp needs n >= 2");
    Chart c(ChartKind::MaximalCusp, n, n - 1);
    c.ranges_.push_back({0.0, INFINITY});
    for (int k = 1; k < n; ++k) c.ranges_.push_back({});
    return c;
  }

  static Chart collar(int n, BoundaryFamily family = BoundaryFamily::Euclidean,
                      double pole_margin = 1e-3) {
    if (n < 2) throw InvalidArgument("collar needs n >= 2");
    if (family == BoundaryFamily::Custom)
      throw InvalidArgument("use Chart::collar_custom for a custom boundary family");
    Chart c(ChartKind::Collar, n, 0);
    c.family_ = family;
    c.pole_margin_ = pole_margin;
    if (family == BoundaryFamily::Round) {
      c.ranges_.push_back({0.0, 2.0});
      for (int k = 0; k < n - 1; ++k) {
        if (k < n - 2)
          c.ranges_.push_back({pole_margin, std::numbers::pi - pole_margin, true, true});
        else
          c.ranges_.push_back({});
      }
    } else {
      c.ranges_.push_back({0.0, INFINITY});
      for (int k = 0; k < n - 1; ++k) c.ranges_.push_back({});
    }
    return c;
  }

  static Chart collar_custom(int n, BoundaryMetricFn h_U, std::vector<Interval> ranges) {
    if (static_cast<int>(ranges.size()) != n) throw InvalidArgument("need n coordinate ranges");
    Chart c(ChartKind::Collar, n, 0);
    c.family_ = BoundaryFamily::Custom;
    c.custom_ = std::move(h_U);
    c.ranges_ = std::move(ranges);
    return c;
  }

  static Chart upper_half_space(int n, int f) {
    if (n < 2 || f < 0 || f > n - 1) throw InvalidArgument("upper half space needs 0 <= f <= n-1");
    Chart c(ChartKind::UpperHalfSpace, n, f);
    c.ranges_.push_back({0.0, INFINITY});
    for (int k = 1; k < n; ++k) c.ranges_.push_back({});
    return c;
  }

  ChartKind kind() const { return kind_; }
  int dim() const { return n_; }
  int rank() const { return f_; }
  int transverse_dim() const { return n_ - 1 - f_; }
  BoundaryFamily family() const { return family_; }
  double pole_margin() const { return pole_margin_; }
  const std::vector<Interval>& ranges() const { return ranges_; }
  const Truncation& truncation() const { return trunc_; }

  Chart& set_truncation(Truncation t) {
    if (!(t.tube_width > 0.0) || !(t.transition > 0.0) || t.transition > 1.0)
      throw InvalidArgument("truncation needs tube_width > 0 and transition in (0, 1]");
    trunc_ = t;
    return *this;
  }
  /// Narrow one coordinate range (must stay inside the existing one).
  Chart& restrict_range(int i, Interval iv) {
    ranges_.at(static_cast<std::size_t>(i)) = iv;
    return *this;
  }

  bool contains(const ChartPoint& p) const {
    if (p.size() != n_) return false;
    for (int i = 0; i < n_; ++i)
      if (!ranges_[static_cast<std::size_t>(i)].contains(p(i))) return false;
    return !is_degenerate(p);
  }

  /// Throws DegeneratePoint or OutOfRange.
  void check(const ChartPoint& p) const {
    if (p.size() != n_)
      throw OutOfRange("point has " + std::to_string(p.size()) + " coordinates, chart needs " +
                       std::to_string(n_));
    if (is_degenerate(p)) throw DegeneratePoint("degenerate point on the singular boundary");
    for (int i = 0; i < n_; ++i)
      if (!ranges_[static_cast<std::size_t>(i)].contains(p(i)))
        throw OutOfRange("coordinate " + std::to_string(i) + " = " + std::to_string(p(i)) +
                         " outside its range");
  }

  /// Boundary metric h_U(rho) at y (collar charts only).
  Mat boundary_metric(double rho, const Vec& y) const {
    switch (family_) {
      case BoundaryFamily::Euclidean: return Mat::Identity(n_ - 1, n_ - 1);
      case BoundaryFamily::Round: {
        const double a = 1.0 - rho * rho / 4.0;
        return (a * a * detail::round_sphere_diag(y)).asDiagonal();
      }
      case BoundaryFamily::Custom: return custom_(rho, y);
    }
    return {};
  }

 private:
  Chart(ChartKind k, int n, int f) : kind_(k), n_(n), f_(f) {}

  bool is_degenerate(const ChartPoint& p) const {
    switch (kind_) {
      case ChartKind::IntermediateCusp:
        return p(0) == 0.0 || std::abs(std::cos(p(1))) < 1e-300 ||
               std::abs(p(1)) == std::numbers::pi / 2;
      default: return p(0) == 0.0;
    }
  }

  ChartKind kind_;
  int n_;
  int f_;
  BoundaryFamily family_ = BoundaryFamily::Euclidean;
  BoundaryMetricFn custom_;
  double pole_margin_ = 1e-3;
  std::vector<Interval> ranges_;
  Truncation trunc_;
};

/// Closed-form components of the model metric at p.
inline Mat metric_at(const Chart& chart, const ChartPoint& p) {
  chart.check(p);
  const int n = chart.dim();
  Mat g = Mat::Zero(n, n);
  switch (chart.kind()) {
    case ChartKind::IntermediateCusp: {
      const int f = chart.rank();
      const int b = chart.transverse_dim();
      const double r = p(0);
      const double c = std::cos(p(1));
      const double s = std::sin(p(1));
      const double c2 = c * c;
      g(0, 0) = 1.0 / (r * r * c2);
      g(1, 1) = 1.0 / c2;
      if (b >= 2) {
        const Vec d = detail::round_sphere_diag(p.segment(2, b - 1));
        for (int k = 0; k < b - 1; ++k) g(2 + k, 2 + k) = s * s / c2 * d(k);
      }
      for (int k = 0; k < f; ++k) g(1 + b + k, 1 + b + k) = r * r / c2;
      break;
    }
    case ChartKind::MaximalCusp: {
      const double r = p(0);
      g(0, 0) = 1.0 / (r * r);
      for (int k = 1; k < n; ++k) g(k, k) = r * r;
      break;
    }
    case ChartKind::Collar: {
      const double rho = p(0);
      g(0, 0) = 1.0;
      g.bottomRightCorner(n - 1, n - 1) = chart.boundary_metric(rho, p.tail(n - 1));
      g /= rho * rho;
      break;
    }
    case ChartKind::UpperHalfSpace: {
      const int f = chart.rank();
      const int b = n - 1 - f;
      const double u = p(0);
      const double v2 = p.segment(1, b).squaredNorm();
      const double a = u * u + v2;
      g(0, 0) = 1.0;
      for (int k = 0; k < b; ++k) g(1 + k, 1 + k) = 1.0;
      for (int k = 0; k < f; ++k) g(1 + b + k, 1 + b + k) = a * a;
      g /= u * u;
      break;
    }
  }
  return g;
}

/// sqrt(det h). Closed form for the cusp; the other charts use the diagonal product
/// (or a determinant for custom boundary families).
inline double volume_density_at(const Chart& chart, const ChartPoint& p) {
  chart.check(p);
  const int n = chart.dim();
  if (chart.kind() == ChartKind::IntermediateCusp) {
    const int f = chart.rank();
    const int b = chart.transverse_dim();
    const double r = p(0);
    const double c = std::cos(p(1));
    const double s = std::sin(p(1));
    double sphere = 1.0;
    if (b >= 2) sphere = std::sqrt(detail::round_sphere_diag(p.segment(2, b - 1)).prod());
    return std::pow(r, f - 1) * std::pow(std::abs(s), b - 1) / std::pow(std::abs(c), n) * sphere;
  }
  const Mat g = metric_at(chart, p);
  if (chart.kind() == ChartKind::Collar && chart.family() == BoundaryFamily::Custom)
    return std::sqrt(g.determinant());
  return std::sqrt(g.diagonal().prod());
}

/// Total boundary defining function, truncated to 1 outside the tubes.
inline double sigma_at(const Chart& chart, const ChartPoint& p) {
  chart.check(p);
  const Truncation& tr = chart.truncation();
  switch (chart.kind()) {
    case ChartKind::IntermediateCusp:
      return truncate_bdf(p(0), tr) * truncate_bdf(std::cos(p(1)), tr);
    case ChartKind::MaximalCusp:
    case ChartKind::Collar:
    case ChartKind::UpperHalfSpace: return truncate_bdf(p(0), tr);
  }
  return 1.0;
}

/// Membership in the exhaustion domain {sigma >= eps}.
inline bool in_exhaustion(const Chart& chart, const ChartPoint& p, double eps) {
  if (!(eps > 0.0)) throw InvalidArgument("exhaustion parameter must be positive");
  return sigma_at(chart, p) >= eps;
}

// ---------------------------------------------------------------------------
// Rescaling maps onto the reference half ball.

enum class RescalingKind { CuspNearAxis, CuspOffAxis, CollarCase };

inline std::string to_string(RescalingKind k) {
  switch (k) {
    case RescalingKind::CuspNearAxis: return "near-axis";
    case RescalingKind::CuspOffAxis: return "off-axis";
    case RescalingKind::CollarCase: return "collar";
  }
  return "?";
}

/// Base point and scale for one rescaling. For the cusp cases `v0` is the transverse
/// offset (length b = n-1-f); for the collar case it is the boundary point y0 (length n-1)
/// and `collar` supplies h_U.
struct RescalingCase {
  RescalingKind kind = RescalingKind::CuspNearAxis;
  int n = 3;
  int f = 1;
  Vec v0;
  double eps = 0.1;
  double C = 1.0;
  Chart collar = Chart::collar(3);

  void validate() const {
    if (!(eps > 0.0)) throw CaseInvariantViolated("eps must be positive");
    const double a = v0.norm();
    switch (kind) {
      case RescalingKind::CuspNearAxis:
        if (v0.size() != n - 1 - f) throw CaseInvariantViolated("v0 must have length n-1-f");
        if (a > C * eps) throw CaseInvariantViolated("near-axis case needs |v0| <= C eps");
        break;
      case RescalingKind::CuspOffAxis:
        if (v0.size() != n - 1 - f) throw CaseInvariantViolated("v0 must have length n-1-f");
        if (!(eps < a && a < 1.0))
          throw CaseInvariantViolated("off-axis case needs eps < |v0| < 1");
        break;
      case RescalingKind::CollarCase:
        if (v0.size() != n - 1) throw CaseInvariantViolated("y0 must have length n-1");
        if (collar.kind() != ChartKind::Collar || collar.dim() != n)
          throw CaseInvariantViolated("collar case needs a collar chart of dimension n");
        break;
    }
  }
};

/// Reference half ball B+ = {|q| < 1, s >= 0}; q = (s, p..., q...).
inline bool in_half_ball(const Vec& q) { return q.size() > 0 && q(0) >= 0.0 && q.norm() < 1.0; }

/// Pullback of the model metric under the rescaling map, in (s, p, q) coordinates.
inline Mat rescaled_metric_at(const RescalingCase& rc, const Vec& q) {
  rc.validate();
  if (q.size() != rc.n) throw CaseInvariantViolated("point has wrong dimension");
  if (!in_half_ball(q)) throw CaseInvariantViolated("point outside the reference half ball");
  const int n = rc.n;
  const double s = q(0);
  const double e2s = std::exp(-2.0 * s);
  Mat g = Mat::Zero(n, n);
  g(0, 0) = 1.0;
  if (rc.kind == RescalingKind::CollarCase) {
    const Vec y = rc.v0 + rc.eps * q.tail(n - 1);
    const double rho = rc.eps * std::exp(s);
    g.bottomRightCorner(n - 1, n - 1) = e2s * rc.collar.boundary_metric(rho, y);
    return g;
  }
  const int f = rc.f;
  const int b = n - 1 - f;
  const Vec p = q.segment(1, b);
  const Vec ratio = rc.v0 / rc.eps;
  double coef = 0.0;
  if (rc.kind == RescalingKind::CuspNearAxis) {
    const double a = std::exp(2.0 * s) + (ratio + p).squaredNorm();
    coef = e2s * a * a;
  } else {
    const double a2 = ratio.squaredNorm();
    const double num = std::exp(2.0 * s) + a2 + 2.0 * ratio.dot(p) + p.squaredNorm();
    coef = e2s * num * num / ((1.0 + a2) * (1.0 + a2));
  }
  for (int k = 0; k < b; ++k) g(1 + k, 1 + k) = e2s;
  for (int k = 0; k < f; ++k) g(1 + b + k, 1 + b + k) = coef;
  return g;
}

// ---------------------------------------------------------------------------
// Structured text configuration: one `key = value` per line, '#' starts a comment.
// Keys: kind (cusp|maximal|collar|uhs), n, f, h_U (euclidean|round), pole_margin,
// tube_width, transition, ranges ("lo:hi" per coordinate separated by ';', '*' keeps default).

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::map<std::string, std::string> parse_key_values(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InvalidArgument("line " + std::to_string(lineno) + ": expected key = value");
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline double parse_double(const std::string& s, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (trim(s.substr(pos)).empty()) return v;
  } catch (const std::exception&) {
  }
  throw InvalidArgument("key '" + key + "': not a number: " + s);
}

inline int parse_int(const std::string& s, const std::string& key) {
  const double v = parse_double(s, key);
  if (v != std::floor(v)) throw InvalidArgument("key '" + key + "': not an integer: " + s);
  return static_cast<int>(v);
}

}  // namespace detail

inline Chart parse_chart_config(const std::string& text) {
  auto kv = detail::parse_key_values(text);
  auto get = [&](const std::string& k, const std::string& dflt) {
    auto it = kv.find(k);
    return it == kv.end() ? dflt : it->second;
  };
  if (!kv.count("kind")) throw InvalidArgument("chart config needs 'kind'");
  if (!kv.count("n")) throw InvalidArgument("chart config needs 'n'");
  const std::string kind = get("kind", "");
  const int n = detail::parse_int(kv["n"], "n");
  const double margin = detail::parse_double(get("pole_margin", "1e-3"), "pole_margin");
  Chart chart = [&] {
    if (kind == "cusp") return Chart::intermediate_cusp(n, detail::parse_int(get("f", "1"), "f"), margin);
    if (kind == "maximal") return Chart::maximal_cusp(n);
    if (kind == "uhs") return Chart::upper_half_space(n, detail::parse_int(get("f", "1"), "f"));
    if (kind == "collar") {
      const std::string fam = get("h_U", "euclidean");
      if (fam == "euclidean") return Chart::collar(n, BoundaryFamily::Euclidean, margin);
      if (fam == "round") return Chart::collar(n, BoundaryFamily::Round, margin);
      throw InvalidArgument("unknown h_U family: " + fam);
    }
    throw InvalidArgument("unknown chart kind: " + kind);
  }();
  Truncation tr;
  tr.tube_width = detail::parse_double(get("tube_width", "1"), "tube_width");
  tr.transition = detail::parse_double(get("transition", "0.2"), "transition");
  chart.set_truncation(tr);
  if (kv.count("ranges")) {
    std::istringstream rs(kv["ranges"]);
    std::string item;
    int i = 0;
    while (std::getline(rs, item, ';')) {
      item = detail::trim(item);
      if (i >= n) throw InvalidArgument("too many ranges");
      if (item != "*") {
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw InvalidArgument("range must be lo:hi");
        Interval iv{detail::parse_double(item.substr(0, colon), "ranges"),
                    detail::parse_double(item.substr(colon + 1), "ranges")};
        const Interval& old = chart.ranges()[static_cast<std::size_t>(i)];
        if (!(iv.lo < iv.hi) || iv.lo < old.lo || iv.hi > old.hi)
          throw InvalidArgument("range " + std::to_string(i) + " must narrow the default");
        chart.restrict_range(i, iv);
      }
      ++i;
    }
  }
  return chart;
}

}  // namespace pelab
