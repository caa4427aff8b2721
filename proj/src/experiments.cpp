#include "dickeprobe/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "dickeprobe/basis.hpp"
#include "dickeprobe/gpg.hpp"
#include "dickeprobe/sensing.hpp"

namespace dickeprobe {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "1.0.0";
constexpr double kIdealCooperativity = 1e30;  // above this: kappa = gamma = 0

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", v);
  return buf;
}

json json_from_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ConfigError("bad JSON in " + path + ": " + e.what());
  }
  return j;
}

void require_keys(const json& j, std::initializer_list<const char*> allowed,
                  const std::string& ctx) {
  if (!j.is_object()) throw ConfigError(ctx + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed)
      if (it.key() == k) ok = true;
    if (!ok) throw ConfigError(ctx + ": unknown key '" + it.key() + "'");
  }
}

std::vector<double> as_vector(const json& v, const std::string& ctx) {
  std::vector<double> out;
  if (v.is_number()) {
    out.push_back(v.get<double>());
  } else if (v.is_array()) {
    for (const auto& e : v) out.push_back(e.get<double>());
  } else {
    throw ConfigError(ctx + ": expected number or array");
  }
  if (out.empty()) throw ConfigError(ctx + ": empty list");
  return out;
}

NoiseRates rates_for(double C, double gamma_over_kappa) {
  if (C >= kIdealCooperativity) return NoiseRates{1.0, 0.0, 0.0};
  return rates_from_cooperativity(C, gamma_over_kappa);
}

SensingTask task_by_name(const std::string& name, bool normalize) {
  if (name == "ghz") return parity_task(normalize);
  if (name == "dicke") return jz2_task(normalize);
  throw ConfigError("task must be \"ghz\" or \"dicke\", got \"" + name + "\"");
}

ChannelMode mode_from_config(const json& j) {
  ChannelMode mode;
  const std::string m = j.value("mode", std::string("finite"));
  if (m == "adiabatic") {
    mode.adiabatic = true;
  } else if (m == "finite") {
    mode.adiabatic = false;
  } else {
    throw ConfigError("mode must be \"adiabatic\" or \"finite\"");
  }
  mode.T = j.value("gT", 40.0);
  mode.n_samples = j.value("n_samples", 4001);
  return mode;
}

void write_manifest(const std::string& out_dir, const std::string& command,
                    const json& config, std::uint64_t seed, int threads,
                    const std::vector<std::string>& outputs,
                    const json& extra) {
  json m;
  m["command"] = command;
  m["version"] = kVersion;
  m["seed"] = seed;
  m["threads"] = threads;
  m["config"] = config;
  char hex[32];
  std::snprintf(hex, sizeof(hex), "%016llx",
                static_cast<unsigned long long>(fnv1a(config.dump())));
  m["config_hash"] = hex;
  m["outputs"] = outputs;
  if (!extra.is_null()) m["extra"] = extra;
  std::ofstream f(fs::path(out_dir) / "manifest.json");
  if (!f) throw ConfigError("cannot write manifest in " + out_dir);
  f << m.dump(2) << "\n";
}

std::string prepare_out_dir(const std::string& out_dir) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw ConfigError("cannot create output directory: " + out_dir);
  return out_dir;
}

ProtocolParams params_from_json_value(const json& j) {
  return protocol_params_from_json(j.dump());
}

// Probe with the measurement-angle offset folded in: prepare, rotate by
// beta + extra_final_rotation about the field axis, renormalize.
CMat sensing_probe(int N, const ProtocolParams& params,
                   const NoiseRates& rates, const SensingTask& task,
                   const ChannelMode& mode) {
  CMat rho = prepare_probe(N, params, rates, mode);
  const double beta_tot = params.beta + params.extra_final_rotation;
  if (beta_tot != 0.0) {
    const CMat U = task.field_axis == FieldAxis::Z
                       ? euler_rotation(N, beta_tot, 0.0, 0.0)
                       : euler_rotation(N, 0.0, beta_tot, 0.0);
    rho = U * rho * U.adjoint();
  }
  const double tr = rho.trace().real();
  if (!(tr > 0)) throw NumericalError("sensing_probe: zero-trace state");
  return rho / tr;
}

}  // namespace

std::string default_data_dir() {
#ifdef DICKEPROBE_DATA_DIR
  return DICKEPROBE_DATA_DIR;
#else
  return "data";
#endif
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

TableFixture load_table_fixture(const std::string& path) {
  const json j = json_from_file(path);
  require_keys(j, {"name", "task", "mode", "gT", "n_samples", "rows"},
               "table fixture");
  TableFixture f;
  f.name = j.at("name").get<std::string>();
  f.task = task_by_name(j.at("task").get<std::string>(), false);
  f.mode = mode_from_config(j);
  for (const auto& rj : j.at("rows")) {
    require_keys(rj,
                 {"N", "C", "gamma_over_kappa", "target", "tol_rel", "tol_abs",
                  "Delta", "params", "params_nominal"},
                 "table row");
    TableRow row;
    row.N = rj.at("N").get<int>();
    row.C = rj.at("C").get<double>();
    row.gamma_over_kappa = rj.at("gamma_over_kappa").get<double>();
    row.target = rj.at("target").get<double>();
    row.tol_rel = rj.value("tol_rel", 0.10);
    row.tol_abs = rj.value("tol_abs", 0.005);
    if (rj.contains("Delta"))
      for (const auto& d : rj.at("Delta")) row.Delta.push_back(d.get<double>());
    row.params = params_from_json_value(rj.at("params"));
    if (rj.contains("params_nominal")) {
      row.has_nominal = true;
      row.params_nominal = params_from_json_value(rj.at("params_nominal"));
    }
    f.rows.push_back(std::move(row));
  }
  return f;
}

TableFixture load_table(const std::string& which, const std::string& data_dir) {
  if (which != "s1" && which != "s2")
    throw ConfigError("table must be \"s1\" or \"s2\"");
  const std::string dir = data_dir.empty() ? default_data_dir() : data_dir;
  return load_table_fixture((fs::path(dir) / ("table_" + which + ".json")).string());
}

const TableRow* find_row(const TableFixture& f, int N, double C,
                         double gamma_over_kappa) {
  for (const auto& r : f.rows) {
    if (r.N != N) continue;
    if (std::abs(r.C - C) > 1e-9 * std::max(1.0, std::abs(C))) continue;
    if (std::abs(r.gamma_over_kappa - gamma_over_kappa) >
        1e-9 * std::max(1.0, std::abs(gamma_over_kappa)))
      continue;
    return &r;
  }
  return nullptr;
}

RowEvaluation evaluate_row(const TableFixture& f, const TableRow& row,
                           bool normalize) {
  SensingTask task = f.task;
  task.normalize_before_measure = normalize;
  const NoiseRates rates = rates_for(row.C, row.gamma_over_kappa);
  const CostResult r = evaluate_cost(row.N, row.params, rates, task, f.mode);
  RowEvaluation e;
  e.variance = r.variance;
  e.n_variance = row.N * r.variance;
  e.target = row.target;
  e.rel_err = (e.n_variance - row.target) / row.target;
  e.trace_loss = r.trace_loss;
  e.divergent = r.divergent;
  e.pass = !r.divergent && std::abs(e.n_variance - row.target) <=
                               row.tol_rel * row.target + row.tol_abs;
  return e;
}

double fit_power_law_exponent(const std::vector<double>& Ns,
                              const std::vector<double>& ys) {
  if (Ns.size() != ys.size() || Ns.size() < 2)
    throw ConfigError("fit_power_law_exponent: need >= 2 points");
  const int n = int(Ns.size());
  double mx = 0, my = 0;
  for (int i = 0; i < n; ++i) {
    mx += std::log(Ns[i]);
    my += std::log(ys[i]);
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (int i = 0; i < n; ++i) {
    const double dx = std::log(Ns[i]) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(ys[i]) - my);
  }
  return -sxy / sxx;  // y ~ N^{-alpha}
}

// ---- commands ----

int cmd_optimize(const std::string& config_path, const std::string& out_dir,
                 std::uint64_t seed, int threads) {
  const json cfg = json_from_file(config_path);
  require_keys(cfg,
               {"task", "N", "C", "gamma_over_kappa", "P", "mode", "gT",
                "n_samples", "restarts", "max_iters", "grad_tol", "normalize",
                "fit_alpha"},
               "optimize config");
  const std::string task_name = cfg.at("task").get<std::string>();
  const bool normalize = cfg.value("normalize", false);
  const SensingTask task = task_by_name(task_name, normalize);
  const int P = cfg.value("P", task_name == "ghz" ? 1 : 3);
  json mode_cfg = cfg;
  if (!cfg.contains("mode")) mode_cfg["mode"] = "adiabatic";
  ChannelMode mode = mode_from_config(mode_cfg);
  const std::vector<double> Ns = as_vector(cfg.at("N"), "N");
  const std::vector<double> Cs = as_vector(cfg.at("C"), "C");
  const std::vector<double> Gs =
      as_vector(cfg.at("gamma_over_kappa"), "gamma_over_kappa");
  OptimizerConfig ocfg;
  ocfg.n_restarts = cfg.value("restarts", 0);
  ocfg.max_iters = cfg.value("max_iters", 300);
  ocfg.grad_tol = cfg.value("grad_tol", 1e-9);
  ocfg.rng_seed = seed;
  const bool fit_alpha = cfg.value("fit_alpha", true);

  prepare_out_dir(out_dir);
  std::vector<std::string> outputs;
  std::ofstream scan(fs::path(out_dir) / "scan.csv");
  scan << "task,N,C,gamma_over_kappa,P,n_variance,variance,best_restart,"
          "converged\n";
  scan.precision(17);
  outputs.push_back("scan.csv");
  std::ofstream alpha_csv;
  if (fit_alpha) {
    alpha_csv.open(fs::path(out_dir) / "alpha.csv");
    alpha_csv << "task,C,gamma_over_kappa,alpha,n_points\n";
    alpha_csv.precision(17);
    outputs.push_back("alpha.csv");
  }
  json extra = json::array();
  for (double C : Cs) {
    for (double gok : Gs) {
      std::vector<double> fitted_N, fitted_y;
      for (double Nd : Ns) {
        const int N = int(Nd);
        const NoiseRates rates = rates_for(C, gok);
        RestartReport rep =
            multi_start(N, task, rates, P, ocfg, mode, threads);
        const double nv = N * rep.best_variance;
        scan << task_name << "," << N << "," << fmt_g(C) << "," << fmt_g(gok)
             << "," << P << "," << nv << "," << rep.best_variance << ","
             << rep.best_index << ","
             << (rep.restarts[rep.best_index].converged ? 1 : 0) << "\n";
        const std::string theta_name = "theta_" + task_name + "_N" +
                                       std::to_string(N) + "_C" + fmt_g(C) +
                                       "_g" + fmt_g(gok) + ".json";
        std::ofstream tf(fs::path(out_dir) / theta_name);
        tf << protocol_params_to_json(rep.best_params) << "\n";
        outputs.push_back(theta_name);
        if (!rep.all_diverged) {
          fitted_N.push_back(N);
          fitted_y.push_back(rep.best_variance);
        }
        json pt;
        pt["N"] = N;
        pt["C"] = C;
        pt["gamma_over_kappa"] = gok;
        pt["n_variance"] = nv;
        pt["all_diverged"] = rep.all_diverged;
        extra.push_back(pt);
        std::cout << "optimize " << task_name << " N=" << N << " C=" << fmt_g(C)
                  << " gamma/kappa=" << fmt_g(gok) << " -> N(dbeta)^2 = " << nv
                  << "\n";
      }
      if (fit_alpha && fitted_N.size() >= 2) {
        const double a = fit_power_law_exponent(fitted_N, fitted_y);
        alpha_csv << task_name << "," << fmt_g(C) << "," << fmt_g(gok) << ","
                  << a << "," << fitted_N.size() << "\n";
        std::cout << "  series C=" << fmt_g(C) << " gamma/kappa=" << fmt_g(gok)
                  << ": alpha = " << a << "\n";
      }
    }
  }
  write_manifest(out_dir, "optimize", cfg, seed, threads, outputs, extra);
  return 0;
}

int cmd_evaluate(const std::string& config_path, const std::string& out_dir,
                 std::uint64_t seed, int threads) {
  const json cfg = json_from_file(config_path);
  prepare_out_dir(out_dir);
  std::vector<std::string> outputs;
  if (cfg.contains("table")) {
    require_keys(cfg, {"table", "data_dir", "normalize", "use_nominal"},
                 "evaluate config");
    const TableFixture f = load_table(cfg.at("table").get<std::string>(),
                                      cfg.value("data_dir", std::string()));
    const bool normalize = cfg.value("normalize", false);
    const bool use_nominal = cfg.value("use_nominal", false);
    std::ofstream rep(fs::path(out_dir) / "evaluate_report.csv");
    rep << "table,N,C,gamma_over_kappa,target,n_variance,rel_err,trace_loss,"
           "pass\n";
    rep.precision(17);
    outputs.push_back("evaluate_report.csv");
    bool all_pass = true;
    json extra = json::array();
    for (const TableRow& row : f.rows) {
      TableRow r = row;
      if (use_nominal && row.has_nominal) r.params = row.params_nominal;
      const RowEvaluation e = evaluate_row(f, r, normalize);
      all_pass = all_pass && e.pass;
      rep << f.name << "," << r.N << "," << fmt_g(r.C) << ","
          << fmt_g(r.gamma_over_kappa) << "," << r.target << ","
          << e.n_variance << "," << e.rel_err << "," << e.trace_loss << ","
          << (e.pass ? 1 : 0) << "\n";
      std::cout << f.name << " N=" << r.N << " C=" << fmt_g(r.C)
                << " gamma/kappa=" << fmt_g(r.gamma_over_kappa)
                << ": N(dbeta)^2 = " << e.n_variance << " (target "
                << r.target << ", " << (e.pass ? "pass" : "FAIL") << ")\n";
      json je;
      je["N"] = r.N;
      je["C"] = r.C;
      je["gamma_over_kappa"] = r.gamma_over_kappa;
      je["n_variance"] = e.n_variance;
      je["pass"] = e.pass;
      extra.push_back(je);
    }
    write_manifest(out_dir, "evaluate", cfg, seed, threads, outputs, extra);
    return all_pass ? 0 : 4;
  }
  require_keys(cfg,
               {"theta", "N", "C", "gamma_over_kappa", "task", "mode", "gT",
                "n_samples", "normalize"},
               "evaluate config");
  const std::string theta_path = cfg.at("theta").get<std::string>();
  std::ifstream tf(theta_path);
  if (!tf) throw ConfigError("cannot open theta file: " + theta_path);
  std::stringstream ss;
  ss << tf.rdbuf();
  const ProtocolParams params = protocol_params_from_json(ss.str());
  const int N = cfg.at("N").get<int>();
  const double C = cfg.at("C").get<double>();
  const double gok = cfg.at("gamma_over_kappa").get<double>();
  const SensingTask task = task_by_name(cfg.at("task").get<std::string>(),
                                        cfg.value("normalize", false));
  const ChannelMode mode = mode_from_config(cfg);
  const NoiseRates rates = rates_for(C, gok);
  const CostResult r = evaluate_cost(N, params, rates, task, mode);
  std::cout << "variance (dbeta)^2 = " << r.variance
            << (r.divergent ? "  [divergent sentinel]" : "")
            << "\nN(dbeta)^2 = " << N * r.variance
            << "\ntrace loss = " << r.trace_loss << "\n";
  json extra;
  extra["variance"] = r.variance;
  extra["n_variance"] = N * r.variance;
  extra["trace_loss"] = r.trace_loss;
  extra["divergent"] = r.divergent;
  extra["steps"] = json::array();
  for (int j = 0; j < params.P(); ++j) {
    const auto& s = params.steps[j];
    GpgPhaseMatrix pm = channel_phases(N, make_gpg_params(s, rates, mode));
    json js;
    js["phi"] = s.phi;
    js["delta"] = s.delta;
    js["residual"] = pm.residual;
    extra["steps"].push_back(js);
    std::cout << "step " << j + 1 << ": phi=" << s.phi << " delta=" << s.delta
              << " residual=" << pm.residual << "\n";
  }
  std::ofstream rf(fs::path(out_dir) / "evaluate_report.json");
  rf << extra.dump(2) << "\n";
  outputs.push_back("evaluate_report.json");
  write_manifest(out_dir, "evaluate", cfg, seed, threads, outputs, extra);
  return 0;
}

namespace {

// Resolve a {"table": ...} or {"theta": ...} source into protocol
// parameters plus context.  Used by pulse / sense / qfunc.
struct SourceSpec {
  int N = 0;
  NoiseRates rates;
  ProtocolParams params;
  SensingTask task;
  ChannelMode mode;
  std::vector<double> Delta;
  double tabulated = -1.0;  // N(dbeta)^2 when from a table row
};

SourceSpec resolve_source(const json& src, const json& top) {
  require_keys(src,
               {"table", "data_dir", "theta", "N", "C", "gamma_over_kappa",
                "task"},
               "source");
  SourceSpec out;
  if (src.contains("table")) {
    const TableFixture f = load_table(src.at("table").get<std::string>(),
                                      src.value("data_dir", std::string()));
    const TableRow* row =
        find_row(f, src.at("N").get<int>(), src.at("C").get<double>(),
                 src.at("gamma_over_kappa").get<double>());
    if (!row) throw ConfigError("source: no matching table row");
    out.N = row->N;
    out.rates = rates_for(row->C, row->gamma_over_kappa);
    out.params = row->params;
    out.task = f.task;
    out.mode = f.mode;
    out.Delta = row->Delta;
    out.tabulated = row->target;
  } else {
    const std::string theta_path = src.at("theta").get<std::string>();
    std::ifstream tf(theta_path);
    if (!tf) throw ConfigError("cannot open theta file: " + theta_path);
    std::stringstream ss;
    ss << tf.rdbuf();
    out.params = protocol_params_from_json(ss.str());
    out.N = src.at("N").get<int>();
    out.rates = rates_for(src.at("C").get<double>(),
                          src.at("gamma_over_kappa").get<double>());
    out.task = task_by_name(src.value("task", std::string("ghz")), false);
    out.mode = mode_from_config(top);
  }
  return out;
}

}  // namespace

int cmd_pulse(const std::string& config_path, const std::string& out_dir,
              std::uint64_t seed, int threads) {
  const json cfg = json_from_file(config_path);
  require_keys(cfg, {"source", "Delta", "gT", "n_samples", "mode"},
               "pulse config");
  json top = cfg;
  top["mode"] = "finite";
  const SourceSpec src = resolve_source(cfg.at("source"), top);
  const double T = cfg.value("gT", src.mode.T);
  const int n_samples = cfg.value("n_samples", src.mode.n_samples);
  std::vector<double> Delta = src.Delta;
  if (cfg.contains("Delta")) Delta = as_vector(cfg.at("Delta"), "Delta");
  if (int(Delta.size()) != src.params.P())
    throw ConfigError("pulse: need one Delta per protocol step");

  prepare_out_dir(out_dir);
  std::vector<std::string> outputs;
  json extra;
  extra["steps"] = json::array();
  if (src.tabulated >= 0) extra["tabulated_n_variance"] = src.tabulated;
  for (int j = 0; j < src.params.P(); ++j) {
    const auto& s = src.params.steps[j];
    json js;
    js["phi"] = s.phi;
    js["delta"] = s.delta;
    js["Delta"] = Delta[j];
    const std::string name = "pulse_step" + std::to_string(j + 1) + ".csv";
    if (s.phi == 0.0) {
      // identity gate: zero drive
      PulseGrid zero;
      zero.times = Vec::LinSpaced(n_samples, 0.0, T);
      zero.zeta = CVec::Zero(n_samples);
      zero.eta = CVec::Zero(n_samples);
      write_pulse_csv(zero, (fs::path(out_dir) / name).string());
      js["identity"] = true;
    } else {
      PulseGrid pulse;
      try {
        pulse = sin2_pulse(s.phi, s.delta, T, n_samples);
        pulse = invert_zeta_to_eta(pulse, s.delta, src.rates.kappa, Delta[j],
                                   src.rates.g);
      } catch (const ConfigError& e) {
        throw NumericalError("pulse step " + std::to_string(j + 1) + ": " +
                             e.what());
      }
      const double resid = pulse_roundtrip_residual(
          pulse, s.delta, src.rates.kappa, src.rates.g);
      js["roundtrip_residual"] = resid;
      write_pulse_csv(pulse, (fs::path(out_dir) / name).string());
      std::cout << "pulse step " << j + 1 << ": max|zeta| = "
                << pulse.zeta.cwiseAbs().maxCoeff()
                << ", roundtrip residual = " << resid << "\n";
    }
    outputs.push_back(name);
    extra["steps"].push_back(js);
  }
  write_manifest(out_dir, "pulse", cfg, seed, threads, outputs, extra);
  return 0;
}

int cmd_sense(const std::string& config_path, const std::string& out_dir,
              std::uint64_t seed, int threads) {
  const json cfg = json_from_file(config_path);
  require_keys(cfg,
               {"probe", "gamma_phi_over_J", "t_max", "n_points", "rtol",
                "fixed_step", "fixed_dt", "closed_form_reference", "oracle",
                "mode", "gT", "n_samples", "max_N"},
               "sense config");
  const json& probe_cfg = cfg.at("probe");
  require_keys(probe_cfg,
               {"table", "data_dir", "theta", "N", "C", "gamma_over_kappa",
                "task", "ideal"},
               "probe");
  int N = 0;
  CMat probe;
  SensingTask task = parity_task();
  std::string ideal;
  if (probe_cfg.contains("ideal")) {
    ideal = probe_cfg.at("ideal").get<std::string>();
    N = probe_cfg.at("N").get<int>();
    if (ideal == "ghz") {
      const CVec psi = ghz_state(N);
      const CMat U = euler_rotation(N, kPi / (2.0 * N), 0.0, 0.0);
      const CVec v = U * psi;
      probe = v * v.adjoint();
      task = parity_task();
    } else if (ideal == "dicke") {
      if (N % 2 != 0) throw ConfigError("ideal dicke probe needs even N");
      const CVec v = dicke_state(N, N / 2);
      probe = v * v.adjoint();
      task = jz2_task();
    } else {
      throw ConfigError("probe.ideal must be \"ghz\" or \"dicke\"");
    }
  } else {
    const SourceSpec src = resolve_source(probe_cfg, cfg);
    N = src.N;
    task = src.task;
    probe = sensing_probe(src.N, src.params, src.rates, src.task, src.mode);
  }
  const int max_N = cfg.value("max_N", 64);
  if (N > max_N)
    throw ConfigError("sense: N exceeds the PI dimension guardrail");

  DephasingConfig dcfg;
  dcfg.field_axis = task.field_axis;
  const double t_max = cfg.value("t_max", 2.0);
  const int n_points = cfg.value("n_points", 81);
  dcfg.t_grid = Vec::LinSpaced(n_points, 0.0, t_max);
  dcfg.rtol = cfg.value("rtol", 1e-10);
  dcfg.fixed_step = cfg.value("fixed_step", false);
  dcfg.fixed_dt = cfg.value("fixed_dt", 1e-3);
  const bool want_reference =
      cfg.value("closed_form_reference", !ideal.empty());
  const bool want_oracle = cfg.value("oracle", false);
  if (want_oracle && N > 8)
    throw ConfigError("sense: oracle column requires N <= 8");

  prepare_out_dir(out_dir);
  std::vector<std::string> outputs;
  json extra = json::array();
  for (double gp : as_vector(cfg.at("gamma_phi_over_J"), "gamma_phi_over_J")) {
    dcfg.gamma_phi_over_J = gp;
    const std::vector<VariancePoint> series =
        variance_timeseries(probe, task, dcfg);
    std::vector<double> reference;
    if (want_reference && !ideal.empty()) {
      for (int i = 0; i < dcfg.t_grid.size(); ++i) {
        const double t = dcfg.t_grid(i);
        reference.push_back(ideal == "ghz"
                                ? ghz_variance_closed_form(N, gp, 1.0, t)
                                : dicke_variance_closed_form(N, gp, t, t));
      }
    }
    std::vector<double> oracle;
    if (want_oracle) {
      const CMat H = full_field_hamiltonian(N, task.field_axis, 1.0);
      const std::vector<CMat> jumps = full_dephasing_jumps(N, gp);
      const CMat rho0 = pi_to_full(embed_symmetric(probe));
      const std::vector<CMat> states =
          brute_force_lindblad(N, H, jumps, rho0, dcfg.t_grid);
      for (const CMat& rf : states) {
        const PIDensity rho = full_to_pi(N, rf);
        const PIDensity drho = pi_rhs(rho, 1.0, gp, task.field_axis);
        double num = 0, d1 = 0;
        if (task.observable == Observable::ParityX) {
          const double e = pi_parity_expectation(rho);
          num = 1.0 - e * e;
          d1 = pi_parity_expectation(drho);
        } else {
          const auto m = pi_case2_moments(rho);
          num = m[3] - m[0] * m[0];
          d1 = pi_case2_moments(drho)[0];
        }
        oracle.push_back(std::abs(d1) < 1e-14 ? 1e6
                                              : std::min(num / (d1 * d1), 1e6));
      }
    }
    const std::string name = "sense_gp" + fmt_g(gp) + ".csv";
    std::ofstream f(fs::path(out_dir) / name);
    f.precision(17);
    f << "Jt,variance,trace,purity";
    if (!reference.empty()) f << ",closed_form";
    if (!oracle.empty()) f << ",oracle";
    f << "\n";
    for (size_t i = 0; i < series.size(); ++i) {
      const VariancePoint& p = series[i];
      f << p.t << "," << p.variance << "," << p.trace << "," << p.purity;
      if (!reference.empty()) f << "," << reference[i];
      if (!oracle.empty()) f << "," << oracle[i];
      f << "\n";
    }
    outputs.push_back(name);
    json je;
    je["gamma_phi_over_J"] = gp;
    je["variance_at_t0"] = series.front().variance;
    je["n_variance_at_t0"] = N * series.front().variance;
    extra.push_back(je);
    std::cout << "sense gamma_phi/J=" << fmt_g(gp)
              << ": N(dbeta)^2 at Jt=0 is " << N * series.front().variance
              << "\n";
  }
  write_manifest(out_dir, "sense", cfg, seed, threads, outputs, extra);
  return 0;
}

int cmd_qfunc(const std::string& config_path, const std::string& out_dir,
              std::uint64_t seed, int threads) {
  const json cfg = json_from_file(config_path);
  require_keys(cfg, {"source", "n_theta", "n_phi", "mode", "gT", "n_samples"},
               "qfunc config");
  const SourceSpec src = resolve_source(cfg.at("source"), cfg);
  const int n_theta = cfg.value("n_theta", 181);
  const int n_phi = cfg.value("n_phi", 360);
  const std::vector<CMat> traj =
      trajectory(src.N, src.params, src.rates, src.mode);

  prepare_out_dir(out_dir);
  std::vector<std::string> outputs;
  json extra = json::array();
  for (size_t step = 0; step < traj.size(); ++step) {
    const QFuncGrid grid = husimi_q(traj[step], n_theta, n_phi);
    const std::string name = "qfunc_step" + std::to_string(step) + ".csv";
    std::ofstream f(fs::path(out_dir) / name);
    f.precision(17);
    f << "theta,phi,q\n";
    for (int i = 0; i < grid.thetas.size(); ++i)
      for (int j = 0; j < grid.phis.size(); ++j)
        f << grid.thetas(i) << "," << grid.phis(j) << "," << grid.values(i, j)
          << "\n";
    outputs.push_back(name);
    // quadrature check: (N+1)/(4 pi) * int Q dOmega should equal trace(rho)
    double integral = 0.0;
    const double dth = kPi / (grid.thetas.size() - 1);
    const double dph = 2.0 * kPi / grid.phis.size();
    for (int i = 0; i < grid.thetas.size(); ++i) {
      const double w = (i == 0 || i + 1 == grid.thetas.size()) ? 0.5 : 1.0;
      for (int j = 0; j < grid.phis.size(); ++j)
        integral += w * grid.values(i, j) * std::sin(grid.thetas(i));
    }
    integral *= dth * dph * (src.N + 1) / (4.0 * kPi);
    json je;
    je["step"] = int(step);
    je["quadrature_trace"] = integral;
    je["trace"] = traj[step].trace().real();
    je["max_q"] = grid.values.maxCoeff();
    extra.push_back(je);
    std::cout << "qfunc step " << step << ": max Q = " << grid.values.maxCoeff()
              << ", quadrature trace = " << integral << "\n";
  }
  write_manifest(out_dir, "qfunc", cfg, seed, threads, outputs, extra);
  return 0;
}

}  // namespace dickeprobe
