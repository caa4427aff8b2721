#pragma once

// Experiment plumbing shared by the CLI and the test suites: reference-row
// fixtures, scan drivers, power-law fits, manifests, and the five command
// implementations (optimize / evaluate / pulse / sense / qfunc).

#include <cstdint>
#include <string>
#include <vector>

#include "dickeprobe/optimizer.hpp"
#include "dickeprobe/protocol.hpp"
#include "dickeprobe/types.hpp"

namespace dickeprobe {

// Compile-time data directory (in-repo fixtures); overridable per call.
std::string default_data_dir();

struct TableRow {
  int N = 0;
  double C = 0.0;
  double gamma_over_kappa = 0.0;
  double target = 0.0;   // tabulated N*(Delta beta)^2
  double tol_rel = 0.10;
  double tol_abs = 0.005;
  std::vector<double> Delta;  // per-step atom-drive detunings, units of g
  ProtocolParams params;      // evaluated by the regression gate
  bool has_nominal = false;   // params was refined from the 2-decimal nominal
  ProtocolParams params_nominal;
};

struct TableFixture {
  std::string name;  // "s1" | "s2"
  SensingTask task;
  ChannelMode mode;
  std::vector<TableRow> rows;
};

TableFixture load_table_fixture(const std::string& path);
// "s1" or "s2" resolved inside data_dir (default_data_dir() when empty).
TableFixture load_table(const std::string& which,
                        const std::string& data_dir = "");
// nullptr when no row matches.
const TableRow* find_row(const TableFixture& f, int N, double C,
                         double gamma_over_kappa);

struct RowEvaluation {
  double variance = 0.0;    // (Delta beta)^2
  double n_variance = 0.0;  // N * variance
  double target = 0.0;
  double rel_err = 0.0;     // (n_variance - target)/target
  double trace_loss = 0.0;
  bool pass = false;
  bool divergent = false;
};
RowEvaluation evaluate_row(const TableFixture& f, const TableRow& row,
                           bool normalize = false);

// Least-squares slope of log(y) vs log(N) for y ~ c * N^{-alpha};
// returns alpha (positive for decreasing y).
double fit_power_law_exponent(const std::vector<double>& Ns,
                              const std::vector<double>& ys);

std::uint64_t fnv1a(const std::string& bytes);

// Command implementations, each returning a process exit code:
// 0 success, 2 config error, 3 numerical failure, 4 regression-tolerance
// failure (evaluate only).  Configs are strict-key JSON files; every
// command writes <out_dir>/manifest.json recording the config, its hash,
// the seed, and the emitted files.
int cmd_optimize(const std::string& config_path, const std::string& out_dir,
                 std::uint64_t seed, int threads);
int cmd_evaluate(const std::string& config_path, const std::string& out_dir,
                 std::uint64_t seed, int threads);
int cmd_pulse(const std::string& config_path, const std::string& out_dir,
              std::uint64_t seed, int threads);
int cmd_sense(const std::string& config_path, const std::string& out_dir,
              std::uint64_t seed, int threads);
int cmd_qfunc(const std::string& config_path, const std::string& out_dir,
              std::uint64_t seed, int threads);

}  // namespace dickeprobe
