#include "dickeprobe/protocol.hpp"

#include <array>
#include <cmath>
#include <map>
#include <mutex>

#include <json.hpp>

#include "dickeprobe/basis.hpp"

namespace dickeprobe {

namespace {

using nlohmann::json;

constexpr double kDivergenceCap = 1e6;
constexpr double kDenomFloor = 1e-14;

bool finite_triple(const double* t) {
  return std::isfinite(t[0]) && std::isfinite(t[1]) && std::isfinite(t[2]);
}

// A contractive channel never grows the trace; amplification means the
// finite-duration quadrature left its validity range.
void check_trace_physical(double tau) {
  if (!(tau <= 1.0 + 1e-8))
    throw NumericalError("probe trace exceeds 1: amplifying channel");
}

// The nine static operators of the Case II trigonometric closed forms,
// cached per N: Jz^2, Jx^2, {Jz,Jx}, Jz^4, Jx^4, {Jz,Jx}^2, {Jz^2,Jx^2},
// {Jz^2,{Jz,Jx}}, {Jx^2,{Jz,Jx}}.
const std::array<CMat, 9>& moment_ops(int N) {
  static std::map<int, std::array<CMat, 9>> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(N);
  if (it != cache.end()) return it->second;
  CollectiveOperators ops = build_collective_operators(N);
  const CMat Jz2 = ops.Jz * ops.Jz;
  const CMat Jx2 = ops.Jx * ops.Jx;
  const CMat Azx = ops.Jz * ops.Jx + ops.Jx * ops.Jz;
  std::array<CMat, 9> m;
  m[0] = Jz2;
  m[1] = Jx2;
  m[2] = Azx;
  m[3] = Jz2 * Jz2;
  m[4] = Jx2 * Jx2;
  m[5] = Azx * Azx;
  m[6] = Jz2 * Jx2 + Jx2 * Jz2;
  m[7] = Jz2 * Azx + Azx * Jz2;
  m[8] = Jx2 * Azx + Azx * Jx2;
  return cache.emplace(N, std::move(m)).first->second;
}

double trace_re(const CMat& op, const CMat& rho) {
  return (op.transpose().cwiseProduct(rho)).sum().real();
}

// Case I scalars at angle beta: E = <Px>, D1 = dE/dbeta, D2 = d^2E/dbeta^2.
// <Px(beta)> = sum_n exp(-i*beta*(N-2n)) * rho(N-n, n).
struct ParityScalars {
  double E = 0, D1 = 0, D2 = 0;
};
ParityScalars parity_scalars(const CMat& rho, double beta) {
  const int N = int(rho.rows()) - 1;
  ParityScalars s;
  for (int n = 0; n <= N; ++n) {
    const double k = N - 2.0 * n;
    const Complex w = std::exp(Complex(0, -beta * k)) * rho(N - n, n);
    s.E += w.real();
    s.D1 += (Complex(0, -k) * w).real();
    s.D2 += (-k * k * w).real();
  }
  return s;
}

// Shared final assembly: numerator/denominator with the normalization
// switch, divergence sentinel, and the quotient-rule gradient pieces.
struct Assembled {
  double variance = 0;
  bool divergent = false;
};

Assembled finish_variance(double num, double d1) {
  Assembled a;
  // num >= 0 for any sub-normalized state (tau - E^2 >= tau - tau^2 in Case
  // I, Cauchy-Schwarz in Case II); a negative value marks an amplifying
  // channel evaluation (undersampled quadrature at extreme detuning)
  if (!std::isfinite(num) || num < 0.0 || std::abs(d1) < kDenomFloor) {
    a.variance = kDivergenceCap;
    a.divergent = true;
    return a;
  }
  a.variance = num / (d1 * d1);
  if (!std::isfinite(a.variance) || a.variance > kDivergenceCap) {
    a.variance = kDivergenceCap;
    a.divergent = true;
  }
  return a;
}

}  // namespace

void ProtocolParams::validate() const {
  if (!finite_triple(theta0) || !std::isfinite(beta) ||
      !std::isfinite(extra_final_rotation))
    throw ConfigError("ProtocolParams: non-finite angle");
  for (const auto& s : steps) {
    if (!finite_triple(s.theta) || !std::isfinite(s.phi) ||
        !std::isfinite(s.delta))
      throw ConfigError("ProtocolParams: non-finite step entry");
    if (s.phi != 0.0 && s.delta != 0.0 && (s.phi > 0) != (s.delta > 0))
      throw ConfigError("ProtocolParams: step with sign(phi) != sign(delta)");
  }
}

void SensingTask::validate() const {
  const bool ok = (observable == Observable::ParityX && field_axis == FieldAxis::Z) ||
                  (observable == Observable::JzSquared && field_axis == FieldAxis::Y);
  if (!ok)
    throw ConfigError(
        "SensingTask: ParityX pairs with field Z, JzSquared with field Y");
}

std::string protocol_params_to_json(const ProtocolParams& p) {
  json j;
  j["theta0"] = {p.theta0[0], p.theta0[1], p.theta0[2]};
  j["steps"] = json::array();
  for (const auto& s : p.steps) {
    json js;
    js["theta"] = {s.theta[0], s.theta[1], s.theta[2]};
    js["phi"] = s.phi;
    js["delta"] = s.delta;
    j["steps"].push_back(js);
  }
  j["beta"] = p.beta;
  j["extra_final_rotation"] = p.extra_final_rotation;
  return j.dump(2);
}

ProtocolParams protocol_params_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("protocol params JSON: ") + e.what());
  }
  ProtocolParams p;
  try {
    auto t0 = j.at("theta0");
    for (int k = 0; k < 3; ++k) p.theta0[k] = t0.at(k).get<double>();
    for (const auto& js : j.value("steps", json::array())) {
      ProtocolStep s;
      auto th = js.at("theta");
      for (int k = 0; k < 3; ++k) s.theta[k] = th.at(k).get<double>();
      s.phi = js.at("phi").get<double>();
      s.delta = js.at("delta").get<double>();
      p.steps.push_back(s);
    }
    p.beta = j.value("beta", 0.0);
    p.extra_final_rotation = j.value("extra_final_rotation", 0.0);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("protocol params JSON: ") + e.what());
  }
  p.validate();
  return p;
}

GpgParams make_gpg_params(const ProtocolStep& s, const NoiseRates& rates,
                          const ChannelMode& mode) {
  GpgParams g;
  g.phi = s.phi;
  g.delta = s.delta;
  g.rates = rates;
  g.adiabatic = mode.adiabatic;
  g.T = mode.T;
  g.n_samples = mode.n_samples;
  return g;
}

std::vector<CMat> trajectory(int N, const ProtocolParams& params,
                             const NoiseRates& rates, const ChannelMode& mode) {
  params.validate();
  std::vector<CMat> out;
  out.reserve(params.P() + 1);
  CMat rho = CMat::Zero(N + 1, N + 1);
  rho(0, 0) = 1.0;  // |D_0><D_0|
  CMat U0 = euler_rotation(N, params.theta0[0], params.theta0[1], params.theta0[2]);
  rho = U0 * rho * U0.adjoint();
  out.push_back(rho);
  for (const auto& s : params.steps) {
    GpgPhaseMatrix pm = channel_phases(N, make_gpg_params(s, rates, mode));
    rho = apply_channel(pm, rho);
    CMat U = euler_rotation(N, s.theta[0], s.theta[1], s.theta[2]);
    rho = U * rho * U.adjoint();
    out.push_back(rho);
  }
  return out;
}

CMat prepare_probe(int N, const ProtocolParams& params, const NoiseRates& rates,
                   const ChannelMode& mode) {
  return trajectory(N, params, rates, mode).back();
}

CostResult variance_parity(const CMat& probe, double beta, bool normalize) {
  CostResult r;
  r.probe = probe;
  const double tau = probe.trace().real();
  check_trace_physical(tau);
  r.trace_loss = 1.0 - tau;
  const ParityScalars s = parity_scalars(probe, beta);
  const double num = normalize ? tau * tau - s.E * s.E : tau - s.E * s.E;
  const Assembled a = finish_variance(num, s.D1);
  r.variance = a.variance;
  r.divergent = a.divergent;
  return r;
}

std::array<double, 9> case2_moments(const CMat& rho) {
  const int N = int(rho.rows()) - 1;
  const auto& ops = moment_ops(N);
  std::array<double, 9> m;
  for (int i = 0; i < 9; ++i) m[i] = trace_re(ops[i], rho);
  return m;
}

Case2Scalars case2_scalars(const std::array<double, 9>& m, double beta) {
  const double c = std::cos(beta), sn = std::sin(beta);
  Case2Scalars s;
  s.E2 = m[0] * c * c + m[1] * sn * sn - m[2] * sn * c;
  s.E4 = m[3] * c * c * c * c + m[4] * sn * sn * sn * sn +
         (m[5] + m[6]) * c * c * sn * sn - m[7] * c * c * c * sn -
         m[8] * c * sn * sn * sn;
  s.D1 = 2.0 * (m[1] - m[0]) * c * sn - m[2] * (c * c - sn * sn);
  return s;
}

CostResult variance_jz2(const CMat& probe, double beta, bool normalize) {
  CostResult r;
  r.probe = probe;
  const double tau = probe.trace().real();
  check_trace_physical(tau);
  r.trace_loss = 1.0 - tau;
  const Case2Scalars s = case2_scalars(case2_moments(probe), beta);
  const double num = normalize ? tau * s.E4 - s.E2 * s.E2 : s.E4 - s.E2 * s.E2;
  const Assembled a = finish_variance(num, s.D1);
  r.variance = a.variance;
  r.divergent = a.divergent;
  return r;
}

namespace {

// Forward-mode state: the value rho and its derivatives with respect to the
// K-1 preparation parameters (beta handled separately at measurement time).
struct Chain {
  CMat rho;
  std::vector<CMat> d;  // aligned with pack layout minus the final beta slot
};

void apply_rotation_with_grad(int N, const double* theta, Chain& ch,
                              int slot) {
  const CMat U = euler_rotation(N, theta[0], theta[1], theta[2]);
  const CollectiveOperators& ops = [&]() -> const CollectiveOperators& {
    static std::map<int, CollectiveOperators> cache;
    static std::mutex mu;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(N);
    if (it == cache.end())
      it = cache.emplace(N, build_collective_operators(N)).first;
    return it->second;
  }();
  // Propagate existing derivatives through the rotation.
  for (auto& dm : ch.d) dm = U * dm * U.adjoint();
  const CMat rho_post = U * ch.rho * U.adjoint();
  if (slot >= 0) {
    // d/d(alpha): -i[Jz, rho'];  d/d(beta): -i[Za Jy Za^dag, rho'];
    // d/d(gamma): U(-i[Jz, rho])U^dag.
    const int d = N + 1;
    CVec za(d);
    for (int n = 0; n < d; ++n)
      za(n) = std::exp(Complex(0, -theta[0] * (n - 0.5 * N)));
    CMat Ka(d, d);
    for (int a = 0; a < d; ++a)
      for (int b = 0; b < d; ++b)
        Ka(a, b) = za(a) * std::conj(za(b)) * ops.Jy(a, b);
    const Complex mi(0, -1);
    ch.d[slot + 0] = mi * (ops.Jz * rho_post - rho_post * ops.Jz);
    ch.d[slot + 1] = mi * (Ka * rho_post - rho_post * Ka);
    ch.d[slot + 2] = U * (mi * (ops.Jz * ch.rho - ch.rho * ops.Jz)) * U.adjoint();
  }
  ch.rho = rho_post;
}

void apply_channel_with_grad(int N, const ProtocolStep& s,
                             const NoiseRates& rates, const ChannelMode& mode,
                             Chain& ch, int slot) {
  const GpgPhasesWithGrad pg =
      channel_phases_with_grad(N, make_gpg_params(s, rates, mode));
  const int d = N + 1;
  CMat X(d, d);
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b)
      X(a, b) = std::exp(Complex(0, 1) * pg.value.phases(a, b));
  for (auto& dm : ch.d) dm = X.cwiseProduct(dm);
  if (slot >= 0) {
    const Complex i1(0, 1);
    ch.d[slot + 3] = (i1 * pg.dphi).cwiseProduct(X).cwiseProduct(ch.rho);
    ch.d[slot + 4] = (i1 * pg.ddelta).cwiseProduct(X).cwiseProduct(ch.rho);
  }
  ch.rho = X.cwiseProduct(ch.rho);
}

}  // namespace

CostResult analytic_gradient(int N, const ProtocolParams& params,
                             const NoiseRates& rates, const SensingTask& task,
                             const ChannelMode& mode) {
  params.validate();
  task.validate();
  const int P = params.P();
  const int K = 4 + 5 * P;  // theta0(3) + 5 per step + beta
  const int d = N + 1;

  Chain ch;
  ch.rho = CMat::Zero(d, d);
  ch.rho(0, 0) = 1.0;
  ch.d.assign(K - 1, CMat::Zero(d, d));

  // theta0 occupies slots 0..2; step j occupies slots 3+5j .. 3+5j+4 with
  // the rotation angles first and (phi, delta) last, matching pack_params.
  apply_rotation_with_grad(N, params.theta0, ch, 0);
  for (int j = 0; j < P; ++j) {
    const int slot = 3 + 5 * j;
    apply_channel_with_grad(N, params.steps[j], rates, mode, ch, slot);
    apply_rotation_with_grad(N, params.steps[j].theta, ch, slot);
  }

  const double beta_tot = params.beta + params.extra_final_rotation;
  CostResult r;
  r.probe = ch.rho;
  const double tau = ch.rho.trace().real();
  check_trace_physical(tau);
  r.trace_loss = 1.0 - tau;
  r.gradient = Vec::Zero(K);

  const bool norm = task.normalize_before_measure;
  if (task.observable == Observable::ParityX) {
    const ParityScalars s = parity_scalars(ch.rho, beta_tot);
    const double num = norm ? tau * tau - s.E * s.E : tau - s.E * s.E;
    const Assembled a = finish_variance(num, s.D1);
    r.variance = a.variance;
    r.divergent = a.divergent;
    if (!a.divergent) {
      const double D1 = s.D1;
      for (int k = 0; k < K - 1; ++k) {
        const ParityScalars ds = parity_scalars(ch.d[k], beta_tot);
        const double dtau = ch.d[k].trace().real();
        const double dnum = norm ? 2.0 * tau * dtau - 2.0 * s.E * ds.E
                                 : dtau - 2.0 * s.E * ds.E;
        r.gradient(k) = dnum / (D1 * D1) - 2.0 * num * ds.D1 / (D1 * D1 * D1);
      }
      // d/dbeta: dE/dbeta = D1, dD1/dbeta = D2, dtau/dbeta = 0.
      const double dnum_b = -2.0 * s.E * D1;
      r.gradient(K - 1) = dnum_b / (D1 * D1) - 2.0 * num * s.D2 / (D1 * D1 * D1);
    }
  } else {
    const auto& ops = moment_ops(N);
    double m[9];
    for (int i = 0; i < 9; ++i) m[i] = trace_re(ops[i], ch.rho);
    const double c = std::cos(beta_tot), sn = std::sin(beta_tot);
    const double c2 = c * c, s2 = sn * sn;
    auto eval_E2 = [&](const double* q) {
      return q[0] * c2 + q[1] * s2 - q[2] * sn * c;
    };
    auto eval_E4 = [&](const double* q) {
      return q[3] * c2 * c2 + q[4] * s2 * s2 + (q[5] + q[6]) * c2 * s2 -
             q[7] * c2 * c * sn - q[8] * c * s2 * sn;
    };
    auto eval_D1 = [&](const double* q) {
      return 2.0 * (q[1] - q[0]) * c * sn - q[2] * (c2 - s2);
    };
    const double E2 = eval_E2(m), E4 = eval_E4(m), D1 = eval_D1(m);
    const double num = norm ? tau * E4 - E2 * E2 : E4 - E2 * E2;
    const Assembled a = finish_variance(num, D1);
    r.variance = a.variance;
    r.divergent = a.divergent;
    if (!a.divergent) {
      for (int k = 0; k < K - 1; ++k) {
        double dm[9];
        for (int i = 0; i < 9; ++i) dm[i] = trace_re(ops[i], ch.d[k]);
        const double dtau = ch.d[k].trace().real();
        const double dE2 = eval_E2(dm), dE4 = eval_E4(dm), dD1 = eval_D1(dm);
        const double dnum = norm ? dtau * E4 + tau * dE4 - 2.0 * E2 * dE2
                                 : dE4 - 2.0 * E2 * dE2;
        r.gradient(k) = dnum / (D1 * D1) - 2.0 * num * dD1 / (D1 * D1 * D1);
      }
      // Trigonometric beta-derivatives of E4 and D1 (E2' = D1).
      const double E4p = -4.0 * m[3] * c2 * c * sn + 4.0 * m[4] * c * s2 * sn +
                         2.0 * (m[5] + m[6]) * c * sn * (c2 - s2) -
                         m[7] * (c2 * c2 - 3.0 * c2 * s2) -
                         m[8] * (3.0 * c2 * s2 - s2 * s2);
      const double D1p = 2.0 * (m[1] - m[0]) * (c2 - s2) + 4.0 * m[2] * c * sn;
      const double dnum_b = norm ? tau * E4p - 2.0 * E2 * D1 : E4p - 2.0 * E2 * D1;
      r.gradient(K - 1) = dnum_b / (D1 * D1) - 2.0 * num * D1p / (D1 * D1 * D1);
    }
  }
  return r;
}

CostResult evaluate_cost(int N, const ProtocolParams& params,
                         const NoiseRates& rates, const SensingTask& task,
                         const ChannelMode& mode) {
  params.validate();
  task.validate();
  const CMat probe = prepare_probe(N, params, rates, mode);
  const double beta_tot = params.beta + params.extra_final_rotation;
  CostResult r = (task.observable == Observable::ParityX)
                     ? variance_parity(probe, beta_tot,
                                       task.normalize_before_measure)
                     : variance_jz2(probe, beta_tot,
                                    task.normalize_before_measure);
  return r;
}

Vec pack_params(const ProtocolParams& p) {
  const int P = p.P();
  Vec x(4 + 5 * P);
  x(0) = p.theta0[0];
  x(1) = p.theta0[1];
  x(2) = p.theta0[2];
  for (int j = 0; j < P; ++j) {
    const int s = 3 + 5 * j;
    x(s) = p.steps[j].theta[0];
    x(s + 1) = p.steps[j].theta[1];
    x(s + 2) = p.steps[j].theta[2];
    x(s + 3) = p.steps[j].phi;
    x(s + 4) = p.steps[j].delta;
  }
  x(3 + 5 * P) = p.beta;
  return x;
}

ProtocolParams unpack_params(const Vec& x, int P, double extra_final_rotation) {
  if (x.size() != 4 + 5 * P)
    throw ConfigError("unpack_params: length mismatch");
  ProtocolParams p;
  p.theta0[0] = x(0);
  p.theta0[1] = x(1);
  p.theta0[2] = x(2);
  p.steps.resize(P);
  for (int j = 0; j < P; ++j) {
    const int s = 3 + 5 * j;
    p.steps[j].theta[0] = x(s);
    p.steps[j].theta[1] = x(s + 1);
    p.steps[j].theta[2] = x(s + 2);
    p.steps[j].phi = x(s + 3);
    p.steps[j].delta = x(s + 4);
  }
  p.beta = x(3 + 5 * P);
  p.extra_final_rotation = extra_final_rotation;
  return p;
}

Vec fd_gradient(int N, const ProtocolParams& params, const NoiseRates& rates,
                const SensingTask& task, const ChannelMode& mode, double step) {
  const Vec x0 = pack_params(params);
  const int K = int(x0.size());
  Vec g(K);
  for (int k = 0; k < K; ++k) {
    auto eval_at = [&](double h) {
      Vec x = x0;
      x(k) += h;
      ProtocolParams p = unpack_params(x, params.P(), params.extra_final_rotation);
      return evaluate_cost(N, p, rates, task, mode).variance;
    };
    // 5-point central stencil.
    const double f1 = eval_at(-2 * step), f2 = eval_at(-step),
                 f3 = eval_at(step), f4 = eval_at(2 * step);
    g(k) = (f1 - 8.0 * f2 + 8.0 * f3 - f4) / (12.0 * step);
  }
  return g;
}

}  // namespace dickeprobe
