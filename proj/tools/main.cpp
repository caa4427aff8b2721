// dickeprobe command-line driver.
//
//   dickeprobe <verb> --config cfg.json [--out DIR] [--seed S] [--threads T]
//
// Verbs: optimize, evaluate, pulse, sense, qfunc.  Every run writes a
// manifest.json into the output directory with the echoed config, its hash,
// and the list of artifacts.  Exit codes: 0 ok, 2 config error, 3 numerical
// failure, 4 regression tolerance exceeded (evaluate only).

#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dickeprobe/experiments.hpp"
#include "dickeprobe/types.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Dicke-subspace probe preparation and sensing toolkit"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "./out";
  std::uint64_t seed = 1;
  int threads = 0;

  const char* verbs[] = {"optimize", "evaluate", "pulse", "sense", "qfunc"};
  const char* blurbs[] = {
      "multi-start protocol optimization over an (N, C, gamma/kappa) grid",
      "re-evaluate stored protocol parameters against tabulated targets",
      "synthesize sin^2 drive pulses and invert to the lab frame",
      "dephasing-limited variance time series for a prepared probe",
      "Husimi Q snapshots along the preparation trajectory"};
  for (int i = 0; i < 5; ++i) {
    CLI::App* sub = app.add_subcommand(verbs[i], blurbs[i]);
    sub->add_option("--config", config_path, "JSON config file")
        ->required();
    sub->add_option("--out", out_dir, "output directory (default ./out)");
    sub->add_option("--seed", seed, "RNG seed (default 1)");
    sub->add_option("--threads", threads,
                    "worker threads, 0 = hardware default");
  }

  CLI11_PARSE(app, argc, argv);

  try {
    const std::string verb = app.get_subcommands().at(0)->get_name();
    if (verb == "optimize")
      return dickeprobe::cmd_optimize(config_path, out_dir, seed, threads);
    if (verb == "evaluate")
      return dickeprobe::cmd_evaluate(config_path, out_dir, seed, threads);
    if (verb == "pulse")
      return dickeprobe::cmd_pulse(config_path, out_dir, seed, threads);
    if (verb == "sense")
      return dickeprobe::cmd_sense(config_path, out_dir, seed, threads);
    if (verb == "qfunc")
      return dickeprobe::cmd_qfunc(config_path, out_dir, seed, threads);
    std::cerr << "unknown verb: " << verb << "\n";
    return 2;
  } catch (const dickeprobe::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const dickeprobe::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
