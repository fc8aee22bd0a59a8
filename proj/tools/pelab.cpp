// pelab: numerical checks for Poincare-Einstein constructions on model ends.

#include <iostream>

#include <CLI11.hpp>

#include "pelab/cli.hpp"

namespace {

const char* kSubcommands[][2] = {
    {"weights", "admissible multi-weights for a list of cusp ranks"},
    {"curvature", "Ric(h) + (n-1) h on random samples of the model charts"},
    {"solve", "one Dirichlet solve of (Delta + K) u = f with a manufactured solution"},
    {"sweep", "weighted-norm ratios across an exhaustion"},
    {"koiso", "discrete Bochner identity and (u, P2 u) lower bound"},
    {"schauder", "uniform equivalence of rescaled metrics on the half ball"},
    {"expand", "formal expansion ladder and vanishing orders of Q"},
};

}  // namespace

int main(int argc, char** argv) {
  pelab::cli::RunConfig cfg;
  CLI::App app{"pelab: checks for weighted estimates and formal expansions on hyperbolic ends"};
  app.set_config("--config", "", "key = value file; command-line flags take precedence");
  app.require_subcommand(1, 1);

  std::string mu0;
  app.add_option("--chart", cfg.chart, "cusp | maximal | collar")->capture_default_str();
  app.add_option("--n", cfg.n, "dimension")->capture_default_str();
  app.add_option("--f", cfg.f, "cusp rank")->capture_default_str();
  app.add_option("--h-U,--h_U", cfg.h_U, "collar boundary family: euclidean | round")
      ->capture_default_str();
  app.add_option("--chart-file", cfg.chart_file, "chart description (kind, n, f, h_U, ranges, ...)")
      ->check(CLI::ExistingFile);
  app.add_option("--ranks", cfg.ranks, "cusp ranks, comma separated")->delimiter(',');
  app.add_option("--mu0", mu0, "weight at H0 (default: chosen automatically)");
  app.add_option("--weights", cfg.weights, "auto, or mu0,mu1,... for the chart")
      ->capture_default_str();
  app.add_option("--K", cfg.K, "zeroth-order coefficient of Delta + K")->capture_default_str();
  app.add_option("--delta-min", cfg.delta_min, "minimum barrier margin")->capture_default_str();
  app.add_option("--nodes", cfg.nodes, "grid nodes per axis")->capture_default_str();
  app.add_option("--eps", cfg.eps, "exhaustion parameters, decreasing")->delimiter(',');
  app.add_flag("--allow-indefinite", cfg.allow_indefinite, "fall back to sparse LU");
  app.add_option("--max-iterations", cfg.max_iterations, "iteration cap (0: automatic)");
  app.add_option("--step", cfg.step, "finite-difference step")->capture_default_str();
  app.add_option("--tol", cfg.tol, "pass tolerance");
  app.add_option("--samples", cfg.samples, "curvature samples")->capture_default_str();
  app.add_flag("--perturb", cfg.perturb, "conformally perturb the metric (curvature)");
  app.add_flag("--flat", cfg.flat, "use the flat metric (curvature)");
  app.add_option("--refine", cfg.refine, "refinement levels (koiso)")->capture_default_str();
  app.add_option("--seeds", cfg.seeds, "random fields (koiso)")->capture_default_str();
  app.add_option("--seed", cfg.seed, "random seed")->capture_default_str();
  app.add_option("--lattice", cfg.lattice, "lattice points per axis (schauder)")
      ->capture_default_str();
  app.add_option("--schauder-eps", cfg.schauder_eps, "rescaling parameters, decreasing")
      ->delimiter(',');
  app.add_option("--stages", cfg.stages, "expansion stages")->capture_default_str();
  app.add_option("--amplitude", cfg.amplitude, "size of the boundary bump")
      ->capture_default_str();
  app.add_flag("--allow-large", cfg.allow_large, "permit expand with n > 4");
  app.add_option("--output-dir,-o", cfg.output_dir,
                 "output directory (default: $PELAB_OUTPUT_DIR, then ./pelab-out)");
  app.add_flag("--quiet,-q", cfg.quiet, "suppress the JSON summary on stdout");

  for (const auto& [name, help] : kSubcommands)
    app.add_subcommand(name, help)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return pelab::cli::kUsage;
  }

  cfg.subcommand = app.get_subcommands().front()->get_name();
  if (!mu0.empty() && mu0 != "auto") {
    try {
      cfg.mu0 = pelab::detail::parse_double(mu0, "mu0");
    } catch (const pelab::Error& e) {
      std::cerr << e.what() << '\n';
      return pelab::cli::kUsage;
    }
  }

  nlohmann::json summary;
  const int code = pelab::cli::run(cfg, summary);
  if (!cfg.quiet) std::cout << summary.dump(2) << '\n';
  std::cerr << pelab::cli::checks_table(summary);
  return code;
}
