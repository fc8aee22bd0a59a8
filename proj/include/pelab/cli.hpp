#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numbers>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pelab/expansion.hpp"
#include "pelab/solver.hpp"
#include "pelab/weights.hpp"

namespace pelab::cli {

using nlohmann::json;

enum ExitCode : int { kPass = 0, kUsage = 1, kObstruction = 2, kNumerical = 3 };

struct RunConfig {
  std::string subcommand;
  // chart
  std::string chart = "cusp";
  int n = 4;
  int f = 1;
  std::string h_U = "euclidean";
  std::string chart_file;  ///< key = value chart description; overrides chart, n, f, h_U
  // weights
  std::vector<int> ranks;
  std::optional<double> mu0;
  std::string weights = "auto";
  double K = -2.0;
  double delta_min = 1e-6;
  // grids
  int nodes = 65;
  std::vector<double> eps{0.2, 0.1, 0.05, 0.025};
  bool allow_indefinite = false;
  int max_iterations = 0;
  // finite differences and tolerances
  double step = 1e-3;
  std::optional<double> tol;
  int samples = 200;
  bool perturb = false;
  bool flat = false;
  // koiso
  int refine = 3;
  int seeds = 20;
  unsigned seed = 1;
  // schauder
  int lattice = 9;
  std::vector<double> schauder_eps{1e-1, 1e-2, 1e-3, 1e-4};
  // expansion
  int stages = 3;
  double amplitude = 0.05;
  bool allow_large = false;
  // output
  std::string output_dir;
  bool quiet = false;

  void validate() const {
    if (n < 2) throw InvalidArgument("n must be at least 2");
    if (nodes < 8) throw InvalidArgument("nodes must be at least 8");
    if (!(step > 0.0)) throw InvalidArgument("step must be positive");
    if (samples < 1) throw InvalidArgument("samples must be positive");
    if (refine < 2) throw InvalidArgument("refine must be at least 2");
    if (seeds < 1) throw InvalidArgument("seeds must be positive");
    if (lattice < 2) throw InvalidArgument("lattice must be at least 2");
    if (stages < 1) throw InvalidArgument("stages must be positive");
    if (tol && !(*tol > 0.0)) throw InvalidArgument("tol must be positive");
    for (double e : eps)
      if (!(e > 0.0)) throw InvalidArgument("eps values must be positive");
    for (std::size_t k = 1; k < eps.size(); ++k)
      if (!(eps[k] < eps[k - 1])) throw InvalidArgument("eps list must be strictly decreasing");
    for (std::size_t k = 1; k < schauder_eps.size(); ++k)
      if (!(schauder_eps[k] < schauder_eps[k - 1]))
        throw InvalidArgument("schauder eps list must be strictly decreasing");
  }
};

// ---------------------------------------------------------------------------
// Reports

struct Check {
  std::string name;
  double value = 0.0;
  std::string comparison;  ///< "<=", ">=", "<", ">"
  double tolerance = 0.0;
  std::string anchor;
  bool pass = false;
};

inline bool compare(double v, const std::string& op, double t) {
  if (op == "<=") return v <= t;
  if (op == ">=") return v >= t;
  if (op == "<") return v < t;
  if (op == ">") return v > t;
  throw InvalidArgument("unknown comparison " + op);
}

class Report {
 public:
  explicit Report(std::string subcommand) : subcommand_(std::move(subcommand)) {
    body_["subcommand"] = subcommand_;
  }

  json& body() { return body_; }
  const std::vector<Check>& checks() const { return checks_; }

  const Check& check(std::string name, double value, std::string op, double tol,
                     std::string anchor) {
    Check c{std::move(name), value, std::move(op), tol, std::move(anchor), false};
    c.pass = std::isfinite(value) ? compare(value, c.comparison, tol)
                                  : (std::isinf(value) && value > 0 && c.comparison[0] == '>');
    checks_.push_back(c);
    return checks_.back();
  }

  bool all_pass() const {
    return std::all_of(checks_.begin(), checks_.end(), [](const Check& c) { return c.pass; });
  }

  json finish(int exit_code) {
    json cs = json::array();
    for (const auto& c : checks_)
      cs.push_back({{"name", c.name},
                    {"value", number(c.value)},
                    {"comparison", c.comparison},
                    {"tolerance", c.tolerance},
                    {"anchor", c.anchor},
                    {"pass", c.pass}});
    body_["checks"] = cs;
    body_["exit_code"] = exit_code;
    body_["status"] = exit_code == kPass          ? "pass"
                      : exit_code == kObstruction ? "obstruction"
                      : exit_code == kUsage       ? "usage-error"
                                                  : "fail";
    return body_;
  }

  static json number(double v) {
    if (std::isfinite(v)) return v;
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return "nan";
  }

 private:
  std::string subcommand_;
  json body_;
  std::vector<Check> checks_;
};

inline std::filesystem::path output_dir(const RunConfig& cfg) {
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  if (const char* env = std::getenv("PELAB_OUTPUT_DIR"); env && *env) return env;
  return "pelab-out";
}

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header)
      : path_(path) {
    std::filesystem::create_directories(path.parent_path());
    out_.open(path);
    if (!out_) throw InvalidArgument("cannot write " + path.string());
    out_.imbue(std::locale::classic());
    out_ << std::setprecision(12);
    row(header);
  }

  template <class... T>
  void values(const T&... v) {
    bool first = true;
    ((out_ << (first ? "" : ",") << v, first = false), ...);
    out_ << '\n';
    out_.flush();
  }

  void row(const std::vector<std::string>& cells) {
    for (std::size_t k = 0; k < cells.size(); ++k) out_ << (k ? "," : "") << cells[k];
    out_ << '\n';
    out_.flush();
  }

  std::string path() const { return path_.string(); }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

inline json window_json(const Window& w) {
  if (w.empty) return {{"empty", true}};
  return {{"empty", false}, {"lo", w.lo}, {"hi", w.hi}};
}

inline json coefficients_json(const BarrierCoefficients& c) {
  return {{"c_cos", c.c_cos}, {"c_sin", c.c_sin}, {"margin", c.margin()}};
}

// ---------------------------------------------------------------------------
// weights

inline int cmd_weights(const RunConfig& cfg, Report& rep) {
  json& out = rep.body();
  out["n"] = cfg.n;
  out["K"] = cfg.K;
  out["ranks"] = cfg.ranks;
  AdmissibilityReport a;
  try {
    a = admissible_weights(cfg.n, cfg.ranks, cfg.K, cfg.delta_min, cfg.mu0);
  } catch (const AdmissibilityObstruction& e) {
    out["obstruction"] = {{"end", e.end()}, {"reason", e.reason()}};
    out["mu0_window"] = window_json(mu0_window(cfg.n, cfg.K));
    return kObstruction;
  } catch (const DimensionTooSmall& e) {
    out["obstruction"] = {{"end", "H0"}, {"reason", e.what()}};
    out["mu0_window"] = window_json(mu0_window(cfg.n, cfg.K));
    return kObstruction;
  }
  out["mu0_window"] = window_json(a.mu0_window);
  out["mu0"] = a.mu0;
  out["mu0_rule"] = a.mu0_rule;
  out["h0_margin"] = a.h0_margin.delta;
  json cusps = json::array();
  for (const auto& c : a.cusps) {
    cusps.push_back({{"index", c.index},
                     {"rank", c.f},
                     {"window", window_json(c.window)},
                     {"closed_form", c.closed_form},
                     {"closed_form_passes", c.closed_form_passes},
                     {"closed_form_coefficients", coefficients_json(c.closed_form_coefficients)},
                     {"chosen", c.chosen},
                     {"coefficients", coefficients_json(c.coefficients)},
                     {"margin", c.margin.delta}});
  }
  out["cusps"] = cusps;
  out["l2_ok"] = a.l2_ok;
  out["notes"] = a.notes;
  rep.check("H0 barrier margin", a.h0_margin.delta, ">=", cfg.delta_min,
            "(Delta + K) rho^mu0 = (K - mu0 (mu0 - (n-1))) rho^mu0");
  for (const auto& c : a.cusps)
    rep.check("cusp " + std::to_string(c.index) + " barrier margin", c.margin.delta, ">=",
              cfg.delta_min, "(Delta + K)(r^mu cos^nu theta0) coefficient bounds");
  rep.check("L2 cutoff (mu0 - (n-1)/2)", a.mu0 - 0.5 * (cfg.n - 1), ">", 0.0,
            "mu0 > (n-1)/2 embeds weighted spaces into L2");
  if (!a.weights) {
    out["weights"] = nullptr;
    return kObstruction;
  }
  out["weights"] = {{"mu0", a.weights->mu0}, {"mus", a.weights->mus}};
  return rep.all_pass() ? kPass : kObstruction;
}

// ---------------------------------------------------------------------------
// curvature

struct CurvatureSample {
  std::string kind;
  ChartPoint p;
  double defect = 0.0;
  double defect_half = 0.0;
};

/// Interior samples of the four model charts in dimension n, kept away from sphere poles.
inline std::vector<std::pair<Chart, ChartPoint>> curvature_points(int n, int count,
                                                                  unsigned seed) {
  if (n < 3) throw InvalidArgument("curvature sampling needs n >= 3");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(0.0, 1.0);
  const std::vector<Chart> charts{Chart::intermediate_cusp(n, 1), Chart::maximal_cusp(n),
                                  Chart::collar(n, BoundaryFamily::Round),
                                  Chart::upper_half_space(n, 1)};
  auto angles = [&](ChartPoint& p, int from, int m) {
    for (int k = 0; k < m; ++k)
      p(from + k) = (k + 1 < m) ? 0.6 + 1.9 * U(rng) : 6.0 * U(rng);
  };
  std::vector<std::pair<Chart, ChartPoint>> out;
  for (int k = 0; k < count; ++k) {
    const Chart& c = charts[k % 4];
    ChartPoint p = ChartPoint::Zero(n);
    switch (c.kind()) {
      case ChartKind::IntermediateCusp: {
        const int b = c.transverse_dim();
        p(0) = 0.1 + 0.8 * U(rng);
        p(1) = b == 1 ? -1.2 + 2.4 * U(rng) : 0.45 + 0.95 * U(rng);
        angles(p, 2, b - 1);
        for (int j = 0; j < c.rank(); ++j) p(1 + b + j) = U(rng);
        break;
      }
      case ChartKind::MaximalCusp:
        p(0) = 0.2 + 2.0 * U(rng);
        for (int j = 1; j < n; ++j) p(j) = U(rng);
        break;
      case ChartKind::Collar:
        p(0) = 0.05 + 1.15 * U(rng);
        angles(p, 1, n - 1);
        break;
      case ChartKind::UpperHalfSpace:
        p(0) = 0.1 + U(rng);
        for (int j = 1; j < n; ++j) p(j) = U(rng) - 0.5;
        break;
    }
    out.emplace_back(c, p);
  }
  return out;
}

struct CurvatureRun {
  std::vector<CurvatureSample> samples;
  double max_defect = 0.0;
  double max_defect_half = 0.0;
  double order = NAN;
};

inline CurvatureRun curvature_run(int n, int count, double step, unsigned seed, bool perturbed,
                                  bool flat) {
  CurvatureRun run;
  for (const auto& [c, p] : curvature_points(n, count, seed)) {
    MetricField g = model_metric(c);
    if (perturbed)
      g = {c, [c](const ChartPoint& q) -> Mat {
             return (1.0 + 0.2 * std::sin(q.sum())) * metric_at(c, q);
           },
           "perturbed"};
    if (flat) g = {c, [n](const ChartPoint&) -> Mat { return Mat::Identity(n, n); }, "flat"};
    const Mat gp = g(p);
    const Mat gi = checked_inverse(gp);
    const double shift = flat ? 0.0 : (n - 1.0);
    CurvatureSample s{to_string(c.kind()), p,
                      tensor_norm(gi, ricci_at(g, p, step) + shift * gp),
                      tensor_norm(gi, ricci_at(g, p, step / 2) + shift * gp)};
    run.max_defect = std::max(run.max_defect, s.defect);
    run.max_defect_half = std::max(run.max_defect_half, s.defect_half);
    run.samples.push_back(s);
  }
  run.order = std::log2(run.max_defect / run.max_defect_half);
  return run;
}

inline int cmd_curvature(const RunConfig& cfg, Report& rep) {
  const double tol = cfg.tol.value_or(1e-4);
  json& out = rep.body();
  out["n"] = cfg.n;
  out["step"] = cfg.step;
  out["mode"] = cfg.flat ? "flat" : cfg.perturb ? "perturbed" : "hyperbolic";
  const CurvatureRun run = curvature_run(cfg.n, cfg.samples, cfg.step, cfg.seed, cfg.perturb,
                                         cfg.flat);
  CsvWriter csv(output_dir(cfg) / "curvature.csv", {"kind", "sample", "defect_step",
                                                    "defect_half_step", "order"});
  std::map<std::string, std::pair<double, double>> per_kind;
  for (std::size_t k = 0; k < run.samples.size(); ++k) {
    const auto& s = run.samples[k];
    csv.values(s.kind, k, s.defect, s.defect_half, std::log2(s.defect / s.defect_half));
    auto& pk = per_kind[s.kind];
    pk.first = std::max(pk.first, s.defect);
    pk.second = std::max(pk.second, s.defect_half);
  }
  json table = json::array();
  for (const auto& [kind, d] : per_kind)
    table.push_back({{"kind", kind},
                     {"max_defect", d.first},
                     {"max_defect_half_step", d.second},
                     {"order", Report::number(std::log2(d.first / d.second))}});
  out["orders"] = table;
  out["samples"] = run.samples.size();
  out["csv"] = csv.path();
  if (cfg.flat) {
    rep.check("max |Ric(flat)|", run.max_defect, "<=", tol, "flat metric has Ric = 0");
  } else {
    rep.check("max |Ric(h) + (n-1) h|_h", run.max_defect, "<=", tol, "Rc(h) = -(n-1) h");
    rep.check("Richardson order", run.order, ">=", 1.9, "second-order central differences");
  }
  return rep.all_pass() ? kPass : kNumerical;
}

// ---------------------------------------------------------------------------
// solve / sweep

inline Chart chart_from(const RunConfig& cfg) {
  if (!cfg.chart_file.empty()) {
    std::ifstream in(cfg.chart_file);
    if (!in) throw InvalidArgument("cannot read chart file " + cfg.chart_file);
    std::stringstream text;
    text << in.rdbuf();
    const Chart c = parse_chart_config(text.str());
    if (c.dim() != cfg.n) throw InvalidArgument("chart file dimension differs from --n");
    return c;
  }
  if (cfg.chart == "cusp") return Chart::intermediate_cusp(cfg.n, cfg.f);
  if (cfg.chart == "maximal") return Chart::maximal_cusp(cfg.n);
  if (cfg.chart == "collar") {
    if (cfg.h_U == "euclidean") return Chart::collar(cfg.n);
    if (cfg.h_U == "round") return Chart::collar(cfg.n, BoundaryFamily::Round);
    throw InvalidArgument("unknown h_U family " + cfg.h_U);
  }
  throw InvalidArgument("solve/sweep support chart = cusp | maximal | collar, got " + cfg.chart);
}

inline Grid2D default_grid(const Chart& c, int nodes, double eps) {
  const int n = c.dim();
  ChartPoint base = ChartPoint::Zero(n);
  switch (c.kind()) {
    case ChartKind::IntermediateCusp: {
      const int b = c.transverse_dim();
      for (int k = 0; k < b - 1; ++k) base(2 + k) = (k + 2 < b) ? 0.5 * std::numbers::pi : 1.0;
      const double tlo = b == 1 ? -1.3 : 0.65;
      return Grid2D(c, {0, 1}, base, {0.0, tlo}, {0.8, 1.55}, {nodes, nodes}, eps);
    }
    case ChartKind::MaximalCusp:
      return Grid2D(c, {0, 1}, base, {0.0, -1.0}, {0.8, 1.0}, {nodes, nodes}, eps);
    case ChartKind::Collar:
      if (c.family() == BoundaryFamily::Round) {
        for (int k = 1; k < n; ++k) base(k) = (k + 1 < n) ? 0.5 * std::numbers::pi : 0.0;
        return Grid2D(c, {0, 1}, base, {0.0, 0.6}, {0.8, 2.5}, {nodes, nodes}, eps);
      }
      return Grid2D(c, {0, 1}, base, {0.0, -1.0}, {0.8, 1.0}, {nodes, nodes}, eps);
    case ChartKind::UpperHalfSpace: break;
  }
  throw InvalidArgument("no default grid for this chart");
}

inline WeightVector weights_from(const RunConfig& cfg, const Chart& c) {
  std::vector<int> ranks;
  if (c.kind() == ChartKind::IntermediateCusp || c.kind() == ChartKind::MaximalCusp)
    ranks.push_back(c.rank());
  if (cfg.weights == "auto") {
    const auto a = admissible_weights(cfg.n, ranks, cfg.K, cfg.delta_min, cfg.mu0);
    if (!a.weights)
      throw AdmissibilityObstruction("weights", "no admissible weight vector for this chart");
    return *a.weights;
  }
  std::vector<double> v;
  std::stringstream ss(cfg.weights);
  std::string item;
  while (std::getline(ss, item, ',')) v.push_back(detail::parse_double(item, "weights"));
  if (v.size() != 1 + ranks.size())
    throw InvalidArgument("weights must list mu0 followed by one weight per cusp");
  WeightVector w{cfg.n, v[0], {v.begin() + 1, v.end()}, ranks};
  w.validate();
  return w;
}

inline json weights_json(const WeightVector& w) { return {{"mu0", w.mu0}, {"mus", w.mus}}; }

/// sigma^mu times a bump inside the grid box; the manufactured solution equals it.
inline std::function<double(const ChartPoint&)> manufactured(const Grid2D& g,
                                                             const WeightVector& w) {
  const auto ax = g.axes();
  const auto lo = g.lo(), hi = g.hi();
  const Chart c = g.chart();
  auto bump = [](double x, double a, double b) {
    const double t = (2 * x - a - b) / (b - a);
    return std::abs(t) < 1 ? std::exp(1 - 1 / (1 - t * t)) : 0.0;
  };
  const double a0 = lo[0] + 0.55 * (hi[0] - lo[0]), b0 = lo[0] + 0.95 * (hi[0] - lo[0]);
  const double a1 = lo[1] + 0.05 * (hi[1] - lo[1]), b1 = lo[1] + 0.35 * (hi[1] - lo[1]);
  return [=](const ChartPoint& p) {
    return weight_function_at(c, w, p) * bump(p(ax[0]), a0, b0) * bump(p(ax[1]), a1, b1);
  };
}

inline int cmd_solve(const RunConfig& cfg, Report& rep) {
  json& out = rep.body();
  const Chart c = chart_from(cfg);
  // Weights only scale the reported norms here, so an inadmissible K still reaches the solver.
  std::optional<WeightVector> w;
  try {
    w = weights_from(cfg, c);
  } catch (const AdmissibilityObstruction&) {
  } catch (const DimensionTooSmall&) {
  }
  const double eps = cfg.eps.empty() ? 0.05 : cfg.eps.back();
  const Grid2D g = default_grid(c, cfg.nodes, eps);
  out["chart"] = to_string(c.kind());
  out["n"] = cfg.n;
  out["K"] = cfg.K;
  out["eps"] = eps;
  out["weights"] = w ? weights_json(*w) : json(nullptr);
  const WeightVector unit{cfg.n, 0.0, {0.0}, {1}};
  const auto us = manufactured(g, w ? *w : unit);
  const SparseOperator op = assemble(g, cfg.K);
  const DiscreteField exact = sample(g, us);
  const DiscreteField f = op.to_field(op.apply_full(exact));
  SolveOptions opt{1e-12, cfg.max_iterations, cfg.allow_indefinite};
  const SolveResult sol = solve_dirichlet(op, f, opt);
  const double err = (sol.u.values - exact.values).lpNorm<Eigen::Infinity>() /
                     exact.values.lpNorm<Eigen::Infinity>();
  CsvWriter csv(output_dir(cfg) / "solve.csv",
                {"eps", "unknowns", "method", "iterations", "residual", "mms_error",
                 "norm_u", "norm_f"});
  const double nu = w ? weighted_sup_norm(sol.u, *w) : NAN;
  const double nf = w ? weighted_sup_norm(f, *w) : NAN;
  csv.values(eps, op.unknowns(), sol.method, sol.iterations, sol.residual, err, nu, nf);
  out["method"] = sol.method;
  out["iterations"] = sol.iterations;
  out["unknowns"] = op.unknowns();
  out["norm_u"] = Report::number(nu);
  out["norm_f"] = Report::number(nf);
  out["csv"] = csv.path();
  rep.check("relative residual", sol.residual, "<=", 1e-10, "discrete (Delta + K) u = f");
  rep.check("manufactured-solution error", err, "<=", cfg.tol.value_or(1e-6),
            "u = sigma^mu bump reproduced by the solver");
  return rep.all_pass() ? kPass : kNumerical;
}

inline int cmd_sweep(const RunConfig& cfg, Report& rep) {
  json& out = rep.body();
  const Chart c = chart_from(cfg);
  const WeightVector w = weights_from(cfg, c);
  if (cfg.eps.size() < 2) throw InvalidArgument("sweep needs at least two eps values");
  const Grid2D g = default_grid(c, cfg.nodes, cfg.eps.front());
  out["chart"] = to_string(c.kind());
  out["n"] = cfg.n;
  out["K"] = cfg.K;
  out["weights"] = weights_json(w);
  out["nodes"] = cfg.nodes;
  const auto f = manufactured(g, w);
  CsvWriter csv(output_dir(cfg) / "sweep.csv", {"eps", "unknowns", "iterations", "norm_u",
                                                "norm_f", "ratio", "residual", "mms_error"});
  const SweepResult res = exhaustion_sweep(g, cfg.K, w, f, cfg.eps, f);
  json rows = json::array();
  for (const auto& r : res.rows) {
    csv.values(r.eps, r.unknowns, r.iterations, r.norm_u, r.norm_f, r.ratio, r.residual,
               r.mms_error);
    rows.push_back({{"eps", r.eps}, {"unknowns", r.unknowns}, {"ratio", r.ratio},
                    {"mms_error", r.mms_error}});
  }
  out["rows"] = rows;
  out["plateau_factor"] = res.plateau_factor;
  out["csv"] = csv.path();
  rep.check("ratio plateau max/min", res.plateau_factor, "<=", 2.0,
            "uniform weighted estimate across the exhaustion");
  rep.check("worst manufactured-solution error", res.worst_mms_error, "<=",
            cfg.tol.value_or(1e-6), "exact recovery of sigma^mu bump data");
  return rep.all_pass() ? kPass : kNumerical;
}

// ---------------------------------------------------------------------------
// koiso

struct KoisoRun {
  std::vector<int> nodes;
  std::vector<double> spacing;
  std::vector<std::vector<KoisoResult>> per_seed;  ///< [seed][level]
  std::vector<double> orders;
  double min_order = INFINITY;
  double worst_slack_ratio = INFINITY;  ///< min over seeds of slack / (10 finest gap)
  bool slack_ok = true;
};

inline KoisoRun koiso_run(int refine, int seeds, unsigned seed0, double K) {
  KoisoRun run;
  for (int l = 0; l < refine; ++l) run.nodes.push_back((1 << (l + 4)) + 1);
  for (int s = 0; s < seeds; ++s) {
    std::vector<KoisoResult> levels;
    std::vector<double> hs;
    for (int N : run.nodes) {
      const Grid2D g(Chart::collar(4), {0, 1}, ChartPoint::Zero(4), {0.5, -0.5}, {1.5, 0.5},
                     {N, N}, 0.0);
      const auto u = random_tracefree_bump(g, seed0 + static_cast<unsigned>(s), {1.0, 0.0},
                                           {0.3, 0.3});
      levels.push_back(koiso_quadrature(u, K));
      hs.push_back(g.spacing()[0]);
    }
    if (s == 0) run.spacing = hs;
    const double order = std::log(levels.front().gap / levels.back().gap) /
                         std::log(hs.front() / hs.back());
    run.orders.push_back(order);
    run.min_order = std::min(run.min_order, order);
    const auto& fin = levels.back();
    if (!(fin.slack >= -10.0 * fin.gap)) run.slack_ok = false;
    run.worst_slack_ratio = std::min(run.worst_slack_ratio, fin.slack + 10.0 * fin.gap);
    run.per_seed.push_back(levels);
  }
  return run;
}

inline int cmd_koiso(const RunConfig& cfg, Report& rep) {
  json& out = rep.body();
  out["K"] = cfg.K;
  out["patch"] = "n=4 Euclidean collar, rho in [0.5, 1.5], y1 in [-0.5, 0.5]";
  const KoisoRun run = koiso_run(cfg.refine, cfg.seeds, cfg.seed, cfg.K);
  CsvWriter csv(output_dir(cfg) / "koiso.csv",
                {"seed", "nodes", "lhs", "rhs", "gap", "u_sq", "slack", "tr_sq"});
  for (std::size_t s = 0; s < run.per_seed.size(); ++s)
    for (std::size_t l = 0; l < run.nodes.size(); ++l) {
      const auto& r = run.per_seed[s][l];
      csv.values(cfg.seed + s, run.nodes[l], r.lhs, r.rhs, r.gap, r.u_sq, r.slack, r.tr_sq);
    }
  out["nodes"] = run.nodes;
  out["orders"] = run.orders;
  out["csv"] = csv.path();
  rep.check("min fitted gap order", run.min_order, ">=", 1.8,
            "integration-by-parts identity for |nabla u|^2");
  rep.check("min (slack + 10 gap)", run.worst_slack_ratio, ">=", 0.0,
            "(u, P2 u) >= (n + K) ||u||^2");
  return rep.all_pass() ? kPass : kNumerical;
}

// ---------------------------------------------------------------------------
// schauder

struct SchauderRun {
  std::vector<std::pair<std::string, std::vector<SchauderRow>>> families;
  double worst_spread = 0.0;  ///< max |cond / median - 1|
};

inline std::vector<CaseFamily> schauder_families() {
  Vec y0(2);
  y0 << 0.5 * std::numbers::pi, 0.0;
  return {near_axis_family(3, 1, 0.5), off_axis_family(3, 1, 5.0),
          collar_family(Chart::collar(3, BoundaryFamily::Round), y0)};
}

inline SchauderRun schauder_run(const std::vector<double>& eps, int lattice) {
  SchauderRun run;
  for (const auto& fam : schauder_families()) {
    const auto rows = schauder_coefficient_scan(fam, eps, lattice);
    std::vector<double> c;
    for (const auto& r : rows) c.push_back(r.cond);
    std::vector<double> sorted = c;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t m = sorted.size();
    const double median = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
    for (double v : c) run.worst_spread = std::max(run.worst_spread, std::abs(v / median - 1.0));
    run.families.emplace_back(fam.name, rows);
  }
  return run;
}

inline int cmd_schauder(const RunConfig& cfg, Report& rep) {
  json& out = rep.body();
  const SchauderRun run = schauder_run(cfg.schauder_eps, cfg.lattice);
  CsvWriter csv(output_dir(cfg) / "schauder.csv",
                {"family", "eps", "min_eig", "max_eig", "cond", "max_first_difference"});
  json fams = json::array();
  for (const auto& [name, rows] : run.families) {
    json jr = json::array();
    for (const auto& r : rows) {
      csv.values(name, r.eps, r.min_eig, r.max_eig, r.cond, r.max_first_difference);
      jr.push_back({{"eps", r.eps}, {"cond", r.cond}, {"min_eig", r.min_eig},
                    {"max_eig", r.max_eig}});
    }
    fams.push_back({{"family", name}, {"rows", jr}});
  }
  out["families"] = fams;
  out["lattice"] = cfg.lattice;
  out["csv"] = csv.path();
  rep.check("max |cond / family median - 1|", run.worst_spread, "<", 0.05,
            "rescaled metrics uniformly equivalent to the Euclidean metric on B+");
  return rep.all_pass() ? kPass : kNumerical;
}

// ---------------------------------------------------------------------------
// expand

inline double ladder_threshold(int stage) {
  static const double t[] = {0.9, 1.85, 2.7};
  return stage <= 3 ? t[stage - 1] : stage - 0.3;
}

inline std::vector<double> ladder_radii() {
  std::vector<double> r;
  for (int k = 3; k <= 8; ++k) r.push_back(std::ldexp(1.0, -k));
  return r;
}

inline int cmd_expand(const RunConfig& cfg, Report& rep) {
  json& out = rep.body();
  if (cfg.n < 4) throw InvalidArgument("expand needs n >= 4");
  if (cfg.n > 4 && !cfg.allow_large)
    throw InvalidArgument("n > 4 is slow; pass --allow-large to run it");
  const BoundaryData bd = bump_boundary_data(cfg.n, cfg.seed, cfg.amplitude);
  const ExpansionSettings s;
  const auto ys = default_y_samples(bd, s.y_step);
  const auto rho = ladder_radii();
  out["n"] = cfg.n;
  out["seed"] = cfg.seed;
  out["qhat_sup"] = bd.sup_norm;
  out["rho"] = rho;
  const Ladder L = build_ladder(bd, cfg.stages, rho, ys, s);
  CsvWriter csv(output_dir(cfg) / "expand.csv", {"stage", "y_index", "slope", "residual"});
  CsvWriter norms(output_dir(cfg) / "expand_norms.csv", {"stage", "rho", "sup_Q_h"});
  json stages = json::array();
  for (const auto& st : L.stages) {
    for (std::size_t i = 0; i < st.order.per_y_slope.size(); ++i)
      csv.values(st.stage, i, st.order.per_y_slope[i], st.order.per_y_residual[i]);
    for (std::size_t k = 0; k < st.order.rho.size(); ++k)
      norms.values(st.stage, st.order.rho[k], st.order.sup_norm[k]);
    stages.push_back({{"stage", st.stage},
                      {"exponents", st.exponents},
                      {"slope", Report::number(st.order.slope)},
                      {"fit_residual", st.order.fit_residual},
                      {"self_gauge", st.self_gauge},
                      {"coefficient_solves", st.coefficient_solves}});
  }
  out["stages"] = stages;
  out["stop_reason"] = L.stop_reason;
  out["csv"] = {csv.path(), norms.path()};
  for (const auto& st : L.stages) {
    rep.check("stage " + std::to_string(st.stage) + " vanishing order", st.order.slope, ">=",
              ladder_threshold(st.stage), "|Q(g_j, g_1)|_h = O(rho^j)");
    rep.check("stage " + std::to_string(st.stage) + " gauge of Q(g_j, g_j)", st.self_gauge,
              "<", 10 * s.y_step * s.y_step, "gauge term vanishes when both arguments agree");
  }
  if (static_cast<int>(L.stages.size()) < std::min(cfg.stages, cfg.n - 1))
    rep.check("stages completed", static_cast<double>(L.stages.size()), ">=",
              std::min(cfg.stages, cfg.n - 1), "construction proceeds to stage n-1");
  return rep.all_pass() ? kPass : kNumerical;
}

inline std::string checks_table(const json& summary) {
  std::ostringstream os;
  os << summary["subcommand"].get<std::string>() << ": " << summary["status"].get<std::string>()
     << '\n';
  for (const auto& c : summary["checks"]) {
    std::ostringstream v;
    if (c["value"].is_number()) v << std::setprecision(6) << c["value"].get<double>();
    else v << c["value"].get<std::string>();
    os << "  " << (c["pass"].get<bool>() ? "PASS " : "FAIL ") << std::left << std::setw(44)
       << c["name"].get<std::string>() << ' ' << std::setw(14) << v.str() << ' '
       << c["comparison"].get<std::string>() << ' ' << c["tolerance"].get<double>() << '\n';
  }
  if (summary.contains("obstruction"))
    os << "  obstruction at " << summary["obstruction"]["end"].get<std::string>() << ": "
       << summary["obstruction"]["reason"].get<std::string>() << '\n';
  if (summary.contains("error"))
    os << "  error: " << summary["error"]["message"].get<std::string>() << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// dispatch

/// Runs one subcommand; the JSON summary is returned through `summary`, and also written to
/// <output dir>/<subcommand>.json.
inline int run(const RunConfig& cfg, json& summary) {
  Report rep(cfg.subcommand);
  int code = kPass;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    cfg.validate();
    if (cfg.subcommand == "weights") code = cmd_weights(cfg, rep);
    else if (cfg.subcommand == "curvature") code = cmd_curvature(cfg, rep);
    else if (cfg.subcommand == "solve") code = cmd_solve(cfg, rep);
    else if (cfg.subcommand == "sweep") code = cmd_sweep(cfg, rep);
    else if (cfg.subcommand == "koiso") code = cmd_koiso(cfg, rep);
    else if (cfg.subcommand == "schauder") code = cmd_schauder(cfg, rep);
    else if (cfg.subcommand == "expand") code = cmd_expand(cfg, rep);
    else throw InvalidArgument("unknown subcommand '" + cfg.subcommand + "'");
  } catch (const AdmissibilityObstruction& e) {
    rep.body()["error"] = {{"type", "AdmissibilityObstruction"}, {"message", e.what()},
                           {"end", e.end()}, {"reason", e.reason()}};
    code = kObstruction;
  } catch (const DimensionTooSmall& e) {
    rep.body()["error"] = {{"type", "DimensionTooSmall"}, {"message", e.what()}};
    code = kObstruction;
  } catch (const NonConvergence& e) {
    rep.body()["error"] = {
        {"type", "NonConvergence"},
        {"reason", e.reason() == NonConvergence::Reason::Indefinite ? "indefinite"
                                                                    : "iteration-cap"},
        {"residual", Report::number(e.residual())},
        {"message", e.what()}};
    code = kNumerical;
  } catch (const InvalidArgument& e) {
    rep.body()["error"] = {{"type", "InvalidArgument"}, {"message", e.what()}};
    code = kUsage;
  } catch (const Error& e) {
    rep.body()["error"] = {{"type", "NumericalError"}, {"message", e.what()}};
    code = kNumerical;
  }
  rep.body()["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  summary = rep.finish(code);
  if (code != kUsage) {
    try {
      const auto dir = output_dir(cfg);
      std::filesystem::create_directories(dir);
      std::ofstream(dir / (cfg.subcommand + ".json")) << summary.dump(2) << '\n';
    } catch (const std::exception&) {
      // the summary still reaches stdout
    }
  }
  return code;
}

}  // namespace pelab::cli
