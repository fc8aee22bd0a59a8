#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "pelab/charts.hpp"

using namespace pelab;
namespace {

constexpr double kPi = std::numbers::pi;

ChartPoint pt(std::initializer_list<double> xs) {
  ChartPoint p(static_cast<Eigen::Index>(xs.size()));
  Eigen::Index i = 0;
  for (double x : xs) p(i++) = x;
  return p;
}

std::vector<std::pair<Chart, ChartPoint>> sample_points(int count, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  std::vector<Chart> charts = {Chart::intermediate_cusp(4, 1), Chart::intermediate_cusp(5, 2),
                               Chart::intermediate_cusp(5, 1), Chart::maximal_cusp(4),
                               Chart::collar(4), Chart::collar(3, BoundaryFamily::Round),
                               Chart::upper_half_space(4, 2)};
  std::vector<std::pair<Chart, ChartPoint>> out;
  for (int s = 0; s < count; ++s) {
    const Chart& c = charts[s % charts.size()];
    ChartPoint p(c.dim());
    for (int i = 0; i < c.dim(); ++i) {
      const Interval& iv = c.ranges()[i];
      const double lo = std::isfinite(iv.lo) ? iv.lo : -2.0;
      const double hi = std::isfinite(iv.hi) ? iv.hi : 2.0;
      p(i) = lo + (hi - lo) * (0.05 + 0.9 * U(rng));
    }
    out.emplace_back(c, p);
  }
  return out;
}

}  // namespace

TEST(MetricAt, CuspAwayFromPole) {
  // r = 0.5, theta0 = pi/4: (1/(r^2 c^2), 1/c^2, s^2/c^2, r^2/c^2) with c^2 = s^2 = 1/2.
  const Chart c = Chart::intermediate_cusp(4, 1);
  const Mat g = metric_at(c, pt({0.5, kPi / 4, 0.3, 0.0}));
  EXPECT_NEAR(g(0, 0), 8.0, 1e-12);
  EXPECT_NEAR(g(1, 1), 2.0, 1e-12);
  EXPECT_NEAR(g(2, 2), 1.0, 1e-12);
  EXPECT_NEAR(g(3, 3), 0.5, 1e-12);
  EXPECT_NEAR((g - Mat(g.diagonal().asDiagonal())).norm(), 0.0, 0.0);
}

TEST(MetricAt, PoleIsExcludedWhenTransverseSphereIsNontrivial) {
  const Chart c = Chart::intermediate_cusp(4, 1);
  EXPECT_THROW(metric_at(c, pt({0.5, 0.0, 0.0, 0.0})), OutOfRange);
  EXPECT_NO_THROW(metric_at(c, pt({0.5, 1e-3, 0.0, 0.0})));
}

TEST(MetricAt, RankOneTransverseCircleAtThetaZero) {
  // n = 3, f = 1: b = 1, no angular block, so theta0 = 0 is an ordinary point.
  const Chart c = Chart::intermediate_cusp(3, 1);
  const Mat g = metric_at(c, pt({0.5, 0.0, 0.7}));
  EXPECT_NEAR(g(0, 0), 4.0, 1e-14);
  EXPECT_NEAR(g(1, 1), 1.0, 1e-14);
  EXPECT_NEAR(g(2, 2), 0.25, 1e-14);
}

TEST(MetricAt, DegeneratePointsRejected) {
  const Chart c = Chart::intermediate_cusp(4, 1);
  EXPECT_THROW(metric_at(c, pt({0.0, 0.5, 0.0, 0.0})), DegeneratePoint);
  EXPECT_THROW(metric_at(c, pt({0.5, kPi / 2, 0.0, 0.0})), DegeneratePoint);
  EXPECT_THROW(metric_at(Chart::collar(3), pt({0.0, 0.1, 0.2})), DegeneratePoint);
  EXPECT_THROW(metric_at(Chart::collar(3), pt({-0.1, 0.1, 0.2})), OutOfRange);
  EXPECT_THROW(metric_at(Chart::collar(3), pt({0.1, 0.2})), OutOfRange);
}

TEST(MetricAt, MaximalCuspAtUnitRadius) {
  const Mat g = metric_at(Chart::maximal_cusp(3), pt({1.0, 0.4, -2.0}));
  EXPECT_NEAR((g - Mat::Identity(3, 3)).norm(), 0.0, 1e-15);
}

TEST(MetricAt, EuclideanCollar) {
  const Mat g = metric_at(Chart::collar(4), pt({0.1, 0.0, 1.0, -1.0}));
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(g(i, i), 100.0, 1e-10);
}

TEST(MetricAt, UpperHalfSpace) {
  // u = 0.5, v = 0.5, z anything: (u^2 + |v|^2)^2 = 0.25, divided by u^2 -> 1.
  const Mat g = metric_at(Chart::upper_half_space(3, 1), pt({0.5, 0.5, 3.0}));
  EXPECT_NEAR(g(0, 0), 4.0, 1e-14);
  EXPECT_NEAR(g(1, 1), 4.0, 1e-14);
  EXPECT_NEAR(g(2, 2), 1.0, 1e-14);
}

TEST(VolumeDensity, Closed) {
  const Chart c = Chart::intermediate_cusp(4, 1);
  EXPECT_NEAR(volume_density_at(c, pt({0.5, kPi / 4, 0.0, 0.0})), 2.0 * std::sqrt(2.0), 1e-12);
  EXPECT_NEAR(volume_density_at(Chart::collar(3), pt({0.1, 0.3, 0.3})), 1000.0, 1e-9);
}

TEST(VolumeDensity, SquaresToDeterminant) {
  for (const auto& [c, p] : sample_points(300, 7)) {
    const double v = volume_density_at(c, p);
    const double det = metric_at(c, p).determinant();
    EXPECT_NEAR(v * v / det, 1.0, 1e-12) << to_string(c.kind());
  }
}

TEST(MetricAt, SymmetricPositiveDefinite) {
  for (const auto& [c, p] : sample_points(300, 11)) {
    const Mat g = metric_at(c, p);
    EXPECT_EQ((g - g.transpose()).norm(), 0.0);
    Eigen::SelfAdjointEigenSolver<Mat> es(g);
    EXPECT_GT(es.eigenvalues().minCoeff(), 0.0) << to_string(c.kind());
  }
}

TEST(MetricAt, TranslationInvariantAlongFibre) {
  const Chart c = Chart::intermediate_cusp(5, 2);
  for (double w : {-3.0, 0.0, 0.7, 12.0}) {
    const Mat a = metric_at(c, pt({0.3, 0.8, 1.0, 0.0, 0.0}));
    const Mat b = metric_at(c, pt({0.3, 0.8, 1.0, w, -w}));
    EXPECT_EQ((a - b).norm(), 0.0);
  }
}

TEST(Sigma, ProductOfDefiningFunctions) {
  const Chart c = Chart::intermediate_cusp(4, 1);
  EXPECT_NEAR(sigma_at(c, pt({0.2, kPi / 3, 0.0, 0.0})), 0.1, 1e-14);
  EXPECT_NEAR(sigma_at(Chart::collar(3), pt({0.05, 0.0, 0.0})), 0.05, 1e-15);
  EXPECT_EQ(sigma_at(Chart::collar(3), pt({1.5, 0.0, 0.0})), 1.0);
  EXPECT_EQ(sigma_at(Chart::maximal_cusp(3), pt({4.0, 0.0, 0.0})), 1.0);
}

TEST(Sigma, TruncationIsMonotoneAndSmoothlyCapped) {
  Truncation tr;
  double prev = 0.0;
  for (int i = 1; i <= 2000; ++i) {
    const double x = 1.2 * i / 2000.0;
    const double y = truncate_bdf(x, tr);
    EXPECT_GE(y, prev - 1e-15);
    EXPECT_LE(y, 1.0);
    prev = y;
  }
  EXPECT_EQ(truncate_bdf(0.8, tr), 0.8);
  EXPECT_EQ(truncate_bdf(1.0, tr), 1.0);
}

TEST(Exhaustion, NonStrictBoundary) {
  const Chart c = Chart::collar(3);
  EXPECT_TRUE(in_exhaustion(c, pt({0.1, 0, 0}), 0.05));
  EXPECT_TRUE(in_exhaustion(c, pt({0.1, 0, 0}), 0.1));
  EXPECT_FALSE(in_exhaustion(c, pt({0.01, 0, 0}), 0.05));
  EXPECT_THROW(in_exhaustion(c, pt({0.1, 0, 0}), 0.0), InvalidArgument);
}

TEST(Rescaling, NearAxisOriginIsIdentity) {
  RescalingCase rc{RescalingKind::CuspNearAxis, 3, 1, Vec::Zero(1), 0.01};
  const Mat g = rescaled_metric_at(rc, Vec::Zero(3));
  EXPECT_NEAR((g - Mat::Identity(3, 3)).norm(), 0.0, 1e-15);
}

TEST(Rescaling, OffAxisUnitFibreCoefficientAtOrigin) {
  RescalingCase rc{RescalingKind::CuspOffAxis, 3, 1, Vec::Constant(1, 0.5), 0.01};
  const Mat g = rescaled_metric_at(rc, Vec::Zero(3));
  EXPECT_NEAR(g(2, 2), 1.0, 1e-14);
}

TEST(Rescaling, NearAxisAgreesWithOffAxisFormulaAtZeroOffset) {
  // With v0 = 0 the two displays coincide.
  RescalingCase near{RescalingKind::CuspNearAxis, 4, 2, Vec::Zero(1), 0.1};
  const Vec q = (Vec(4) << 0.3, -0.2, 0.1, 0.4).finished();
  const Mat a = rescaled_metric_at(near, q);
  const double s = q(0), p = q(1);
  const double coef = std::exp(-2 * s) * std::pow(std::exp(2 * s) + p * p, 2);
  EXPECT_NEAR(a(2, 2), coef, 1e-14);
  EXPECT_NEAR(a(3, 3), coef, 1e-14);
  EXPECT_NEAR(a(1, 1), std::exp(-2 * s), 1e-15);
}

TEST(Rescaling, InvariantsEnforced) {
  RescalingCase near{RescalingKind::CuspNearAxis, 3, 1, Vec::Constant(1, 0.5), 0.1};
  EXPECT_THROW(rescaled_metric_at(near, Vec::Zero(3)), CaseInvariantViolated);
  RescalingCase off{RescalingKind::CuspOffAxis, 3, 1, Vec::Constant(1, 0.05), 0.1};
  EXPECT_THROW(rescaled_metric_at(off, Vec::Zero(3)), CaseInvariantViolated);
  RescalingCase ok{RescalingKind::CuspNearAxis, 3, 1, Vec::Zero(1), 0.1};
  EXPECT_THROW(rescaled_metric_at(ok, (Vec(3) << -0.1, 0, 0).finished()), CaseInvariantViolated);
  EXPECT_THROW(rescaled_metric_at(ok, (Vec(3) << 0.5, 0.9, 0).finished()), CaseInvariantViolated);
}

TEST(Rescaling, EigenvalueBandUniformInEps) {
  // Off-axis with fixed ratio |v0|/eps and the Euclidean collar: eps-independent bands.
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> U(-0.55, 0.55);
  for (double ratio : {2.0, 5.0}) {
    double lo = INFINITY, hi = 0;
    std::vector<std::pair<double, double>> bands;
    for (double eps : {1e-1, 1e-2, 1e-3, 1e-4}) {
      RescalingCase rc{RescalingKind::CuspOffAxis, 3, 1, Vec::Constant(1, ratio * eps), eps};
      double blo = INFINITY, bhi = 0;
      std::mt19937 local(5);
      for (int k = 0; k < 200; ++k) {
        Vec q(3);
        q << std::abs(U(local)), U(local), U(local);
        Eigen::SelfAdjointEigenSolver<Mat> es(rescaled_metric_at(rc, q));
        blo = std::min(blo, es.eigenvalues().minCoeff());
        bhi = std::max(bhi, es.eigenvalues().maxCoeff());
      }
      bands.emplace_back(blo, bhi);
      lo = std::min(lo, blo);
      hi = std::max(hi, bhi);
    }
    EXPECT_GT(lo, 0.1);
    EXPECT_LT(hi, 10.0);
    for (const auto& b : bands) {
      EXPECT_NEAR(b.first, bands[0].first, 1e-12);
      EXPECT_NEAR(b.second, bands[0].second, 1e-12);
    }
  }
}

TEST(ChartConfig, Parses) {
  const Chart c = parse_chart_config(
      "# cusp patch\nkind = cusp\nn = 4\nf = 1\ntube_width = 1\ntransition=0.25\n"
      "ranges = 0.01:0.9; 0.6:1.5; *; *\n");
  EXPECT_EQ(c.kind(), ChartKind::IntermediateCusp);
  EXPECT_EQ(c.dim(), 4);
  EXPECT_EQ(c.transverse_dim(), 2);
  EXPECT_DOUBLE_EQ(c.ranges()[0].hi, 0.9);
  EXPECT_DOUBLE_EQ(c.truncation().transition, 0.25);
  EXPECT_FALSE(c.contains(pt({0.95, 1.0, 0.0, 0.0})));

  const Chart r = parse_chart_config("kind=collar\nn=3\nh_U=round\n");
  EXPECT_EQ(r.family(), BoundaryFamily::Round);
  EXPECT_THROW(parse_chart_config("kind=cusp\nn=4\nf=3\n"), InvalidArgument);
  EXPECT_THROW(parse_chart_config("kind=torus\nn=4\n"), InvalidArgument);
  EXPECT_THROW(parse_chart_config("n=4\n"), InvalidArgument);
  EXPECT_THROW(parse_chart_config("kind=cusp\nn=four\n"), InvalidArgument);
}
