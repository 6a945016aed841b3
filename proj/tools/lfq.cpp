#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "lfq/cli.hpp"

namespace {

constexpr int kAllPass = 0, kCheckFailed = 2, kInputError = 3, kInternalError = 4;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lagrange-Finsler geometry and Fedosov quantization checks"};
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::string config, out;
  lfq::Overrides ov;
  int points = -1, kmax = 0, rmax = 0;
  std::uint64_t seed = 0;
  double tol_scale = 1;
  unsigned threads = 0;
  bool no_timing = false;
  app.add_option("--config", config, "run configuration (JSON)")->required();
  app.add_option("--out", out, "report path, stdout when omitted");
  auto* o_points = app.add_option("--points", points, "number of seeded random points");
  auto* o_seed = app.add_option("--seed", seed, "seed of the MT19937-64 point generator");
  auto* o_kmax = app.add_option("--kmax", kmax, "Deg to which the Fedosov connection is solved");
  auto* o_rmax = app.add_option("--rmax", rmax, "star product order");
  auto* o_tol = app.add_option("--tol-scale", tol_scale, "multiply every tolerance");
  app.add_option("--threads", threads, "worker threads, 0 for one per core");
  app.add_flag("--no-timing", no_timing, "omit the timing block");

  const char* names[] = {"geom", "star", "einstein", "check", "frames"};
  const char* help[] = {"geometry and d-connection pipeline", "Fedosov connection and star product",
                        "Einstein and deformed Einstein residuals", "every suite", "vielbein solver"};
  for (int k = 0; k < 5; ++k) app.add_subcommand(names[k], help[k]);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInputError;
  }
  if (*o_points) ov.points = points;
  if (*o_seed) ov.seed = seed;
  if (*o_kmax) ov.kmax = kmax;
  if (*o_rmax) ov.rmax = rmax;
  if (*o_tol) ov.tol_scale = tol_scale;

  try {
    lfq::RunConfig cfg = lfq::load_config(config, ov);
    lfq::Report rep = lfq::run_suite(cfg, lfq::suite_from(app.get_subcommands().front()->get_name()), threads);
    std::string text = rep.to_json(!no_timing).dump(2) + "\n";
    if (out.empty()) {
      std::cout << text;
    } else {
      std::ofstream f(out);
      if (!f) {
        std::cerr << "error: cannot write " << out << "\n";
        return kInputError;
      }
      f << text;
    }
    return rep.overall_pass() ? kAllPass : kCheckFailed;
  } catch (const lfq::StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.input ? kInputError : kInternalError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return lfq::is_input_error(e) ? kInputError : kInternalError;
  }
}
