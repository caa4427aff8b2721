#include "dickeprobe/optimizer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <random>
#include <thread>

namespace dickeprobe {

namespace {

constexpr double kCap = 1e6;          // divergence sentinel from protocol
constexpr double kDeltaFloor = 1e-9;  // adiabatic |delta| floor
constexpr double kPhiFloor = 1e-9;    // |phi| floor for band evaluation
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

double sign_of(double v) { return v < 0 ? -1.0 : 1.0; }

double sigmoid(double u) {
  if (u >= 0) return 1.0 / (1.0 + std::exp(-u));
  const double e = std::exp(u);
  return e / (1.0 + e);
}

double logit(double p) { return std::log(p / (1.0 - p)); }

// ---- strong-Wolfe line search (bracket + cubic zoom) ----

struct LineEval {
  double a = 0.0;
  double f = 0.0;
  double df = 0.0;  // directional derivative
  CostEval full;
};

struct LineSearchResult {
  bool ok = false;
  LineEval best;  // Wolfe point on success, lowest f seen otherwise
};

double cubic_step(double a_lo, double f_lo, double g_lo, double a_hi,
                  double f_hi, double g_hi) {
  const double d1 = g_lo + g_hi - 3.0 * (f_lo - f_hi) / (a_lo - a_hi);
  const double disc = d1 * d1 - g_lo * g_hi;
  if (disc < 0) return 0.5 * (a_lo + a_hi);
  const double d2 = std::copysign(std::sqrt(disc), a_hi - a_lo);
  double a = a_hi - (a_hi - a_lo) * (g_hi + d2 - d1) / (g_hi - g_lo + 2 * d2);
  const double lo = std::min(a_lo, a_hi), hi = std::max(a_lo, a_hi);
  const double pad = 0.1 * (hi - lo);
  if (!std::isfinite(a) || a < lo + pad || a > hi - pad)
    a = 0.5 * (a_lo + a_hi);
  return a;
}

LineSearchResult wolfe_search(const CostFn& cost, const Vec& x, const Vec& d,
                              const LineEval& at0, const OptimizerConfig& cfg) {
  LineSearchResult res;
  res.best = at0;
  int evals = 0;
  auto eval = [&](double a) {
    LineEval e;
    e.a = a;
    e.full = cost(x + a * d);
    e.f = e.full.f;
    e.df = e.full.grad.dot(d);
    ++evals;
    if (e.f < res.best.f) res.best = e;
    return e;
  };
  const double f0 = at0.f, g0 = at0.df;
  auto zoom = [&](LineEval lo, LineEval hi) -> bool {
    while (evals < cfg.max_line_search) {
      double a = cubic_step(lo.a, lo.f, lo.df, hi.a, hi.f, hi.df);
      LineEval e = eval(a);
      if (e.f > f0 + cfg.c1 * a * g0 || e.f >= lo.f) {
        hi = e;
      } else {
        if (std::abs(e.df) <= -cfg.c2 * g0) {
          res.ok = true;
          res.best = e;
          return true;
        }
        if (e.df * (hi.a - lo.a) >= 0) hi = lo;
        lo = e;
      }
      if (std::abs(hi.a - lo.a) < 1e-14 * std::max(1.0, std::abs(lo.a)))
        break;
    }
    return false;
  };

  LineEval prev = at0;
  double a = 1.0;
  const double a_max = 64.0;
  while (evals < cfg.max_line_search) {
    LineEval e = eval(a);
    if (e.f > f0 + cfg.c1 * a * g0 || (prev.a > 0 && e.f >= prev.f))
      return zoom(prev, e), res;
    if (std::abs(e.df) <= -cfg.c2 * g0) {
      res.ok = true;
      res.best = e;
      return res;
    }
    if (e.df >= 0) return zoom(e, prev), res;
    prev = e;
    if (a >= a_max) break;
    a = std::min(2.0 * a, a_max);
  }
  return res;
}

}  // namespace

void OptimizerConfig::validate() const {
  if (!(0 < c1 && c1 < c2 && c2 < 1))
    throw ConfigError("OptimizerConfig: need 0 < c1 < c2 < 1");
  if (max_iters < 1) throw ConfigError("OptimizerConfig: max_iters >= 1");
  if (n_restarts < 0) throw ConfigError("OptimizerConfig: n_restarts >= 0");
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += kGolden;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

BfgsResult bfgs_minimize(const CostFn& cost, const Vec& x0,
                         const OptimizerConfig& cfg) {
  cfg.validate();
  const int n = int(x0.size());
  BfgsResult out;
  out.x = x0;
  CostEval cur = cost(out.x);
  out.f = cur.f;
  Mat H = Mat::Identity(n, n);
  bool first_update = true;
  for (int it = 0; it < cfg.max_iters; ++it) {
    out.iterations = it;
    out.grad_norm = cur.grad.lpNorm<Eigen::Infinity>();
    if (out.grad_norm < cfg.grad_tol) {
      out.converged = true;
      break;
    }
    Vec d = -(H * cur.grad);
    double dg = d.dot(cur.grad);
    if (!(dg < 0)) {  // lost positive-definiteness; steepest-descent restart
      H.setIdentity();
      d = -cur.grad;
      dg = d.dot(cur.grad);
      first_update = true;
    }
    LineEval at0;
    at0.a = 0;
    at0.f = cur.f;
    at0.df = dg;
    at0.full = cur;
    LineSearchResult ls = wolfe_search(cost, out.x, d, at0, cfg);
    if (!ls.ok) {
      // keep the best point seen, flag, and stop this descent
      if (ls.best.a > 0 && ls.best.f < cur.f) {
        out.x += ls.best.a * d;
        cur = ls.best.full;
        out.f = cur.f;
        out.grad_norm = cur.grad.lpNorm<Eigen::Infinity>();
      }
      out.line_search_failed = true;
      break;
    }
    const Vec s = ls.best.a * d;
    const Vec y = ls.best.full.grad - cur.grad;
    const double ys = y.dot(s);
    out.x += s;
    cur = ls.best.full;
    out.f = cur.f;
    if (ys > 1e-12) {
      if (first_update) {
        H *= ys / y.squaredNorm();
        first_update = false;
      }
      const Vec Hy = H * y;
      const double yHy = y.dot(Hy);
      H -= (Hy * s.transpose() + s * Hy.transpose()) / ys;
      H += ((1.0 + yHy / ys) / ys) * (s * s.transpose());
    }
  }
  out.grad_norm = cur.grad.lpNorm<Eigen::Infinity>();
  if (out.grad_norm < cfg.grad_tol) out.converged = true;
  return out;
}

DeltaBand finite_delta_band(double phi, double T, double g) {
  DeltaBand b;
  b.lo = 2.0 * kPi / T;
  b.hi = 3.0 * g * g * T / (32.0 * std::max(std::abs(phi), kPhiFloor));
  if (b.hi <= b.lo) b.hi = b.lo * (1.0 + 1e-9);  // band collapses: huge |phi|
  return b;
}

ProtocolParams apply_sign_and_bounds(const Vec& x_raw, int P,
                                     const ChannelMode& mode) {
  if (x_raw.size() != 4 + 5 * P)
    throw ConfigError("apply_sign_and_bounds: bad vector length");
  ProtocolParams p = unpack_params(x_raw, P, 0.0);
  for (auto& s : p.steps) {
    const double sgn = sign_of(s.phi);
    double mag = std::abs(s.delta);
    if (!mode.adiabatic) {
      const DeltaBand b = finite_delta_band(s.phi, mode.T);
      mag = std::clamp(mag, b.lo * (1.0 + 1e-9), b.hi * (1.0 - 1e-9));
    }
    s.delta = sgn * mag;
  }
  return p;
}

ProtocolParams RawCost::params(const Vec& x_raw) const {
  ProtocolParams p = unpack_params(x_raw, P, 0.0);
  for (auto& s : p.steps) {
    const double sgn = sign_of(s.phi);
    if (mode.adiabatic) {
      s.delta = sgn * std::max(std::abs(s.delta), kDeltaFloor);
    } else {
      const DeltaBand b = finite_delta_band(s.phi, mode.T);
      const double sig = std::clamp(sigmoid(s.delta), 1e-12, 1.0 - 1e-12);
      s.delta = sgn * (b.lo + (b.hi - b.lo) * sig);
    }
  }
  return p;
}

Vec RawCost::raw_from_params(const ProtocolParams& p) const {
  Vec x = pack_params(p);
  for (int j = 0; j < P; ++j) {
    const int slot = 3 + 5 * j + 4;
    const double mag = std::abs(p.steps[j].delta);
    if (mode.adiabatic) {
      x(slot) = mag;
    } else {
      const DeltaBand b = finite_delta_band(p.steps[j].phi, mode.T);
      const double pos =
          std::clamp((mag - b.lo) / (b.hi - b.lo), 1e-9, 1.0 - 1e-9);
      x(slot) = logit(pos);
    }
  }
  return x;
}

CostEval RawCost::operator()(const Vec& x_raw) const {
  const ProtocolParams p = params(x_raw);
  CostEval out;
  out.grad = Vec::Zero(x_raw.size());
  CostResult r;
  try {
    r = analytic_gradient(N, p, rates, task, mode);
  } catch (const NumericalError&) {
    out.f = 2.0 * kCap;
    return out;
  } catch (const ConfigError&) {
    // line-search trials can push |phi| past the point where the allowed
    // finite-duration delta band is empty; treat the point as divergent
    out.f = 2.0 * kCap;
    return out;
  }
  out.f = r.variance;
  if (r.divergent) return out;  // flat sentinel: zero gradient
  out.grad = r.gradient;
  // pull the physical-delta gradient back to the raw coordinates
  for (int j = 0; j < P; ++j) {
    const int phi_slot = 3 + 5 * j + 3;
    const int delta_slot = 3 + 5 * j + 4;
    const double phi = x_raw(phi_slot);
    const double sgn = sign_of(phi);
    const double g_delta = r.gradient(delta_slot);
    if (mode.adiabatic) {
      const double mag = std::abs(x_raw(delta_slot));
      const double dmag = mag < kDeltaFloor ? 0.0 : sign_of(x_raw(delta_slot));
      out.grad(delta_slot) = g_delta * sgn * dmag;
    } else {
      const DeltaBand b = finite_delta_band(phi, mode.T);
      const double sig = std::clamp(sigmoid(x_raw(delta_slot)), 1e-12, 1.0 - 1e-12);
      out.grad(delta_slot) = g_delta * sgn * (b.hi - b.lo) * sig * (1.0 - sig);
      if (std::abs(phi) > kPhiFloor)
        out.grad(phi_slot) += g_delta * (-sig * b.hi / std::abs(phi));
    }
  }
  return out;
}

namespace {

Vec random_start(const RawCost& rc, std::mt19937_64& rng) {
  const int P = rc.P;
  Vec x = Vec::Zero(4 + 5 * P);
  std::uniform_real_distribution<double> angle(-kPi, kPi);
  std::uniform_real_distribution<double> phase(-kPi / 2.0, kPi / 2.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int k = 0; k < 3; ++k) x(k) = angle(rng);
  for (int j = 0; j < P; ++j) {
    const int slot = 3 + 5 * j;
    for (int k = 0; k < 3; ++k) x(slot + k) = angle(rng);
    const double phi = phase(rng);
    x(slot + 3) = phi;
    if (rc.mode.adiabatic) {
      // log-uniform magnitude over a broad adiabatic detuning range
      const double lo = 0.05, hi = 20.0;
      x(slot + 4) = lo * std::pow(hi / lo, unit(rng));
    } else {
      const DeltaBand b = finite_delta_band(phi, rc.mode.T);
      const double mag = b.lo * std::pow(b.hi / b.lo, unit(rng));
      const double pos =
          std::clamp((mag - b.lo) / (b.hi - b.lo), 1e-9, 1.0 - 1e-9);
      x(slot + 4) = logit(pos);
    }
  }
  x(3 + 5 * P) = 0.0;  // beta
  return x;
}

}  // namespace

RestartReport multi_start_with_seeds(int N, const SensingTask& task,
                                     const NoiseRates& rates, int P,
                                     const OptimizerConfig& cfg,
                                     const ChannelMode& mode,
                                     const std::vector<Vec>& extra_starts,
                                     int n_threads) {
  cfg.validate();
  task.validate();
  if (P < 1) throw ConfigError("multi_start: P must be >= 1");
  // fail loudly on bad fixed inputs: per-evaluation domain errors are
  // swallowed as divergent points, so they must not hide a broken setup
  if (!(rates.g > 0) || rates.kappa < 0 || rates.gamma < 0)
    throw ConfigError("multi_start: invalid noise rates");
  const int n_random = cfg.n_restarts > 0 ? cfg.n_restarts : std::max(N, 20);
  const int total = n_random + int(extra_starts.size());
  RawCost rc{N, task, rates, P, mode};

  RestartReport report;
  report.restarts.resize(total);
  std::atomic<int> next{0};
  auto worker = [&]() {
    for (;;) {
      const int r = next.fetch_add(1);
      if (r >= total) return;
      Vec x0;
      if (r < int(extra_starts.size())) {
        x0 = extra_starts[r];
      } else {
        const int ri = r - int(extra_starts.size());
        std::mt19937_64 rng(splitmix64(cfg.rng_seed + std::uint64_t(ri) * kGolden));
        x0 = random_start(rc, rng);
      }
      BfgsResult b = bfgs_minimize([&rc](const Vec& x) { return rc(x); }, x0, cfg);
      RestartRecord& rec = report.restarts[r];
      rec.x0 = x0;
      rec.x = b.x;
      rec.f = b.f;
      rec.iterations = b.iterations;
      rec.converged = b.converged;
    }
  };
  int nt = n_threads > 0 ? n_threads
                         : int(std::thread::hardware_concurrency());
  nt = std::max(1, std::min(nt, total));
  if (nt == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < nt; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  report.best_index = 0;
  for (int r = 1; r < total; ++r)
    if (report.restarts[r].f < report.restarts[report.best_index].f)
      report.best_index = r;
  report.best_variance = report.restarts[report.best_index].f;
  report.best_params = rc.params(report.restarts[report.best_index].x);
  report.all_diverged = !(report.best_variance < kCap);
  return report;
}

RestartReport multi_start(int N, const SensingTask& task,
                          const NoiseRates& rates, int P,
                          const OptimizerConfig& cfg, const ChannelMode& mode,
                          int n_threads) {
  return multi_start_with_seeds(N, task, rates, P, cfg, mode, {}, n_threads);
}

}  // namespace dickeprobe
