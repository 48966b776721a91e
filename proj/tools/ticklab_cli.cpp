#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

#include "ticklab/tick_io.hpp"

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ticklab::Error("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ticklab: tick-size distortion analysis and compensation"};
  app.require_subcommand(0, 1);

  std::string config_path;
  app.add_option("--config", config_path,
                 "run a command described by a JSON config file");

  ticklab::RunConfig rc;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--out", rc.out, "output path");
    cmd->add_option("--seed", rc.seed, "random seed");
    cmd->add_option("--workers", rc.workers,
                    "worker threads (default: TICKLAB_WORKERS or hardware)");
  };
  auto add_file_inputs = [&](CLI::App* cmd, bool pair) {
    cmd->add_option("--a", rc.a, "tick CSV for the first asset")->required();
    if (pair)
      cmd->add_option("--b", rc.b, "tick CSV for the second asset")->required();
    cmd->add_option("--q", rc.q, "tick-size as a decimal string");
    cmd->add_option("--step", rc.step, "sampling grid step in seconds");
    cmd->add_option("--dt", rc.dt, "return intervals in grid steps")
        ->delimiter(',');
    cmd->add_option("--split", rc.splits,
                    "declared split points as session:timestamp")
        ->delimiter(',');
  };

  CLI::App* simulate = app.add_subcommand(
      "simulate", "model pair: latent correlation, GBM prices, tick rounding");
  simulate->add_option("--c", rc.c, "latent correlation");
  simulate->add_option("--s0", [&rc](const CLI::results_t& res) {
    if (res.size() != 2) return false;
    rc.s0_1 = std::stod(res[0]);
    rc.s0_2 = std::stod(res[1]);
    return true;
  }, "starting prices in ticks (two values)")->expected(2);
  simulate->add_option("--sigma", rc.sigma, "per-step volatility");
  simulate->add_option("--steps", rc.steps, "path length");
  simulate->add_option("--dt", rc.dt, "return intervals")->delimiter(',');
  simulate->add_option("--mode", rc.mode, "term set: full|dominant");
  simulate->add_option("--benchmark-dt", rc.benchmark_dt,
                       "also emit the mean-error table at this interval");
  add_common(simulate);

  CLI::App* tails = app.add_subcommand(
      "tails", "tail-shape experiment: price changes vs synthesized returns");
  tails->add_option("--law", rc.law, "price-change law: gaussian|powerlaw");
  tails->add_option("--ratio", rc.ratio, "price range s_max/s_min");
  tails->add_option("--sigma-ticks", rc.sigma_ticks,
                    "price-change scale in ticks");
  tails->add_option("--samples", rc.samples, "sample count");
  tails->add_option("--q", rc.q, "tick-size as a decimal string");
  add_common(tails);

  CLI::App* micro = app.add_subcommand(
      "microstructure", "decompose returns by price change, with bounds");
  add_file_inputs(micro, false);
  add_common(micro);

  CLI::App* fit = app.add_subcommand(
      "fit", "interpolate the price-change distribution, emit density JSON");
  add_file_inputs(fit, false);
  fit->add_option("--density", rc.density,
                  "model: gaussian|powerlaw|tabulated");
  fit->add_option("--residual", rc.residual,
                  "residual cells: uniform|triangular");
  add_common(fit);

  CLI::App* comp = app.add_subcommand(
      "compensate", "tick-size corrected return correlation per interval");
  add_file_inputs(comp, true);
  comp->add_option("--mode", rc.mode, "term set: full|dominant");
  comp->add_option("--density", rc.density,
                   "model: gaussian|powerlaw|tabulated");
  add_common(comp);

  CLI::App* curve = app.add_subcommand(
      "epps-curve", "raw vs compensated correlation across intervals");
  add_file_inputs(curve, true);
  curve->add_option("--mode", rc.mode, "term set: full|dominant");
  curve->add_option("--density", rc.density,
                    "model: gaussian|powerlaw|tabulated");
  curve->add_option("--normalize-dt", rc.normalize_dt,
                    "normalize the curve to its value at this interval");
  add_common(curve);

  CLI11_PARSE(app, argc, argv);

  try {
    if (!config_path.empty())
      return ticklab::run(ticklab::RunConfig::from_json(read_file(config_path)));
    const auto subs = app.get_subcommands();
    if (subs.empty()) {
      std::cout << app.help();
      return 0;
    }
    rc.command = subs[0]->get_name();
    return ticklab::run(rc);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
