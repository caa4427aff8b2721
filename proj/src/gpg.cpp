#include "dickeprobe/gpg.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <vector>

namespace dickeprobe {

namespace {

constexpr double kSpeedOfLight = 299792458.0;  // m/s

bool sign_mismatch(double phi, double delta) {
  return phi != 0.0 && delta != 0.0 && ((phi > 0) != (delta > 0));
}

// Composite Simpson over a uniform grid (odd count preferred; an even count
// falls back to trapezoid on the final interval).
Complex simpson(const CVec& f, double h) {
  const int n = int(f.size());
  if (n < 2) return Complex(0, 0);
  Complex acc(0, 0);
  int k = 0;
  for (; k + 2 < n; k += 2) acc += (h / 3.0) * (f(k) + 4.0 * f(k + 1) + f(k + 2));
  if (k + 1 < n) acc += 0.5 * h * (f(k) + f(k + 1));
  return acc;
}

}  // namespace

NoiseRates rates_from_cooperativity(double C, double gamma_over_kappa) {
  if (!(C > 0.0) || !(gamma_over_kappa > 0.0))
    throw ConfigError("rates_from_cooperativity: C and gamma/kappa must be > 0");
  NoiseRates r;
  r.g = 1.0;
  r.kappa = r.g / std::sqrt(C * gamma_over_kappa);
  r.gamma = gamma_over_kappa * r.kappa;
  return r;
}

CavityParams cavity_params_from_geometry(const CavityGeometry& geom) {
  if (!(geom.wavelength > 0) || !(geom.finesse > 0) || !(geom.waist > 0) ||
      !(geom.length > 0) || !(geom.gamma > 0))
    throw ConfigError("cavity_params_from_geometry: all inputs must be > 0");
  CavityParams p;
  p.C = 3.0 * geom.wavelength * geom.wavelength * geom.finesse /
        (2.0 * kPi * kPi * kPi * geom.waist * geom.waist);
  p.kappa = kPi * kSpeedOfLight / (geom.length * geom.finesse);
  p.g = std::sqrt(p.C * p.kappa * geom.gamma);
  return p;
}

void GpgParams::validate() const {
  if (rates.kappa < 0 || rates.gamma < 0 || rates.g <= 0)
    throw ConfigError("GpgParams: rates must satisfy kappa,gamma >= 0, g > 0");
  if (sign_mismatch(phi, delta))
    throw ConfigError("GpgParams: sign(phi) must equal sign(delta)");
  if (phi != 0.0 && delta == 0.0)
    throw ConfigError("GpgParams: delta = 0 with nonzero phi");
  if (!adiabatic && phi != 0.0) {
    if (!(T > 0)) throw ConfigError("GpgParams: finite duration needs T > 0");
    const double lo = 2.0 * kPi / T;
    const double hi = 3.0 * rates.g * rates.g * T / (32.0 * std::abs(phi));
    if (!(std::abs(delta) > lo && std::abs(delta) < hi)) {
      std::ostringstream os;
      os << "GpgParams: |delta|=" << std::abs(delta)
         << " outside finite-duration bounds (" << lo << ", " << hi << ")";
      throw ConfigError(os.str());
    }
  }
}

void check_phase_matrix(const GpgPhaseMatrix& pm) {
  const int d = pm.N + 1;
  if (pm.phases.rows() != d || pm.phases.cols() != d)
    throw NumericalError("check_phase_matrix: shape mismatch");
  CMat factor(d, d);
  for (int n = 0; n < d; ++n) {
    for (int m = 0; m < d; ++m) {
      const Complex p = pm.phases(n, m);
      const Complex q = pm.phases(m, n);
      if (std::abs(q + std::conj(p)) > 1e-12)
        throw NumericalError("check_phase_matrix: phi_mn != -conj(phi_nm)");
      if (p.imag() < -1e-12)
        throw NumericalError("check_phase_matrix: Im(phi_nm) < 0 (amplifying)");
      factor(n, m) = std::exp(Complex(0, 1) * p);
    }
  }
  Eigen::SelfAdjointEigenSolver<CMat> es(factor);
  if (es.eigenvalues().minCoeff() < -1e-10)
    throw NumericalError("check_phase_matrix: [exp(i phi_nm)] not PSD");
}

GpgPhaseMatrix adiabatic_phases(int N, const GpgParams& params) {
  if (!params.adiabatic)
    throw ConfigError("adiabatic_phases: params.duration must be Adiabatic");
  params.validate();
  GpgPhaseMatrix pm;
  pm.N = N;
  pm.phases = CMat::Zero(N + 1, N + 1);
  if (params.phi == 0.0) return pm;
  const double kap = params.rates.kappa, gam = params.rates.gamma;
  const double g2 = params.rates.g * params.rates.g;
  for (int n = 0; n <= N; ++n) {
    for (int m = 0; m <= N; ++m) {
      const double dn = n, dm = m;
      pm.phases(n, m) =
          Complex((dn * dn - dm * dm) * params.phi,
                  (dm - dn) * (dm - dn) * kap * params.phi / (2.0 * params.delta) +
                      (dm + dn) * gam * params.phi * params.delta / (2.0 * g2));
    }
  }
  return pm;
}

PulseGrid sin2_pulse(double phi, double delta, double T, int n_samples,
                     double g) {
  if (sign_mismatch(phi, delta))
    throw ConfigError("sin2_pulse: sign(phi) must equal sign(delta)");
  if (!(T > 0)) throw ConfigError("sin2_pulse: T must be > 0");
  if (n_samples < 3) throw ConfigError("sin2_pulse: need at least 3 samples");
  if (n_samples % 2 == 0) ++n_samples;  // composite Simpson wants odd counts
  PulseGrid p;
  p.times = Vec::LinSpaced(n_samples, 0.0, T);
  p.zeta = CVec::Zero(n_samples);
  if (phi == 0.0) return p;
  if (delta == 0.0) throw ConfigError("sin2_pulse: delta = 0 with nonzero phi");
  // Amplitude of the sin^2 envelope; phi/delta > 0 keeps the sqrt real.
  const double A = -2.0 * delta * std::sqrt(2.0 * phi / (3.0 * delta * T));
  for (int k = 0; k < n_samples; ++k) {
    const double t = p.times(k);
    const double s = std::sin(kPi * t / T);
    const double re = A * s * s;
    const double im = -(A * kPi / (T * delta)) * std::sin(2.0 * kPi * t / T);
    p.zeta(k) = Complex(re, im);
  }
  double zmax = 0.0;
  for (int k = 0; k < n_samples; ++k) zmax = std::max(zmax, std::abs(p.zeta(k)));
  if (zmax >= 0.5 * g) {
    std::ostringstream os;
    os << "sin2_pulse: max|zeta| = " << zmax << " exceeds g/2 = " << 0.5 * g;
    throw ConfigError(os.str());
  }
  return p;
}

FiniteChannelScalars finite_channel_scalars(const PulseGrid& pulse,
                                            const NoiseRates& rates,
                                            double delta) {
  const int n = int(pulse.times.size());
  if (n < 5 || n % 2 == 0)
    throw ConfigError("finite_time_phases: grid must be odd with >= 5 points");
  if (pulse.zeta.size() != n)
    throw ConfigError("finite_time_phases: zeta/times size mismatch");
  const double T = pulse.times(n - 1) - pulse.times(0);
  const double h = T / (n - 1);
  const double g = rates.g;
  const Complex lambda(rates.kappa / 2.0, delta);  // i*delta + kappa/2
  if (rates.kappa * T > 1200.0)
    throw NumericalError("finite_time_phases: kappa*T too large for the kernel");

  // w(t) = exp(lambda*t) * zeta(t); cumulative Simpson over point pairs gives
  // b at the coarse nodes t_0, t_2, t_4, ... exactly per the integrating
  // factor b(t) = -i*exp(-lambda*t) * int_0^t exp(lambda*s) zeta(s) ds.
  const int M = (n - 1) / 2;  // coarse intervals of width 2h
  CVec w(n);
  for (int k = 0; k < n; ++k)
    w(k) = std::exp(lambda * pulse.times(k)) * pulse.zeta(k);
  CVec b(M + 1);
  Complex acc(0, 0);
  b(0) = Complex(0, 0);
  for (int k = 0; k < M; ++k) {
    acc += (h / 3.0) * (w(2 * k) + 4.0 * w(2 * k + 1) + w(2 * k + 2));
    b(k + 1) = Complex(0, -1) * std::exp(-lambda * pulse.times(2 * k + 2)) * acc;
  }

  // S1 = int zeta conj(b) dt and G = int gamma_1 dt on the coarse grid.
  CVec f1(M + 1), f2(M + 1);
  for (int k = 0; k <= M; ++k) {
    const Complex z = pulse.zeta(2 * k);
    const double za = std::abs(z);
    if (za >= 0.5 * g)
      throw NumericalError("finite_time_phases: |zeta| >= g/2, gamma_1 complex");
    f1(k) = z * std::conj(b(k));
    f2(k) = rates.gamma * (1.0 - std::sqrt(1.0 - 4.0 * za * za / (g * g))) / 2.0;
  }
  FiniteChannelScalars out;
  out.S1 = simpson(f1, 2.0 * h);
  out.G = simpson(f2, 2.0 * h).real();
  out.bT = b(M);
  return out;
}

namespace {

GpgPhaseMatrix phases_from_scalars(int N, const FiniteChannelScalars& sc) {
  GpgPhaseMatrix pm;
  pm.N = N;
  pm.phases = CMat::Zero(N + 1, N + 1);
  for (int n = 0; n <= N; ++n) {
    for (int m = 0; m <= N; ++m) {
      const double dn = n, dm = m;
      pm.phases(n, m) = (dm - dn) * (dm * sc.S1 + dn * std::conj(sc.S1)) +
                        Complex(0, 0.5) * (dm + dn) * sc.G;
    }
  }
  pm.residual = N * std::abs(sc.bT);
  return pm;
}

}  // namespace

GpgPhaseMatrix finite_time_phases(int N, const GpgParams& params,
                                  const PulseGrid& pulse) {
  if (params.adiabatic)
    throw ConfigError("finite_time_phases: params.duration must be Finite");
  params.validate();
  return phases_from_scalars(N, finite_channel_scalars(pulse, params.rates,
                                                    params.delta));
}

GpgPhaseMatrix channel_phases(int N, const GpgParams& params) {
  params.validate();
  if (params.adiabatic) return adiabatic_phases(N, params);
  if (params.phi == 0.0) {
    GpgPhaseMatrix pm;
    pm.N = N;
    pm.phases = CMat::Zero(N + 1, N + 1);
    return pm;
  }
  PulseGrid pulse =
      sin2_pulse(params.phi, params.delta, params.T, params.n_samples,
                 params.rates.g);
  return finite_time_phases(N, params, pulse);
}

GpgPhasesWithGrad channel_phases_with_grad(int N, const GpgParams& params) {
  params.validate();
  GpgPhasesWithGrad out;
  const int d = N + 1;
  if (params.adiabatic) {
    out.value = adiabatic_phases(N, params);
    out.dphi = CMat::Zero(d, d);
    out.ddelta = CMat::Zero(d, d);
    const double kap = params.rates.kappa, gam = params.rates.gamma;
    const double g2 = params.rates.g * params.rates.g;
    for (int n = 0; n < d; ++n) {
      for (int m = 0; m < d; ++m) {
        const double dn = n, dm = m;
        out.dphi(n, m) =
            Complex(dn * dn - dm * dm,
                    (dm - dn) * (dm - dn) * kap / (2.0 * params.delta) +
                        (dm + dn) * gam * params.delta / (2.0 * g2));
        out.ddelta(n, m) = Complex(
            0.0, -(dm - dn) * (dm - dn) * kap * params.phi /
                         (2.0 * params.delta * params.delta) +
                     (dm + dn) * gam * params.phi / (2.0 * g2));
      }
    }
    return out;
  }
  // Finite path: the whole matrix is a fixed bilinear in the two channel
  // scalars, so differentiate those by central differences and rebuild.
  auto scalars_at = [&](double phi, double delta) {
    PulseGrid p = sin2_pulse(phi, delta, params.T, params.n_samples,
                             params.rates.g);
    return finite_channel_scalars(p, params.rates, delta);
  };
  const FiniteChannelScalars sc0 = (params.phi == 0.0)
                                       ? FiniteChannelScalars{}
                                       : scalars_at(params.phi, params.delta);
  out.value = phases_from_scalars(N, sc0);
  out.dphi = CMat::Zero(d, d);
  out.ddelta = CMat::Zero(d, d);
  if (params.phi == 0.0) return out;

  const double hp = 1e-6 * std::max(1.0, std::abs(params.phi));
  const double hd = 1e-6 * std::max(1.0, std::abs(params.delta));
  const FiniteChannelScalars sp = scalars_at(params.phi + hp, params.delta);
  const FiniteChannelScalars sm = scalars_at(params.phi - hp, params.delta);
  const FiniteChannelScalars sdp = scalars_at(params.phi, params.delta + hd);
  const FiniteChannelScalars sdm = scalars_at(params.phi, params.delta - hd);
  const Complex dS1_dphi = (sp.S1 - sm.S1) / (2.0 * hp);
  const double dG_dphi = (sp.G - sm.G) / (2.0 * hp);
  const Complex dS1_ddel = (sdp.S1 - sdm.S1) / (2.0 * hd);
  const double dG_ddel = (sdp.G - sdm.G) / (2.0 * hd);
  for (int n = 0; n < d; ++n) {
    for (int m = 0; m < d; ++m) {
      const double dn = n, dm = m;
      out.dphi(n, m) = (dm - dn) * (dm * dS1_dphi + dn * std::conj(dS1_dphi)) +
                       Complex(0, 0.5) * (dm + dn) * dG_dphi;
      out.ddelta(n, m) = (dm - dn) * (dm * dS1_ddel + dn * std::conj(dS1_ddel)) +
                         Complex(0, 0.5) * (dm + dn) * dG_ddel;
    }
  }
  return out;
}

CMat apply_channel(const GpgPhaseMatrix& phases, const CMat& rho) {
  if (rho.rows() != phases.N + 1 || rho.cols() != phases.N + 1)
    throw ConfigError("apply_channel: basis mismatch");
  CMat out(rho.rows(), rho.cols());
  for (int n = 0; n <= phases.N; ++n)
    for (int m = 0; m <= phases.N; ++m)
      out(n, m) = std::exp(Complex(0, 1) * phases.phases(n, m)) * rho(n, m);
  return out;
}

PulseGrid invert_zeta_to_eta(PulseGrid pulse, double delta, double kappa,
                             double Delta, double g) {
  const int n = int(pulse.times.size());
  if (n < 5) throw ConfigError("invert_zeta_to_eta: need at least 5 samples");
  if (!(Delta > 0)) throw ConfigError("invert_zeta_to_eta: Delta must be > 0");
  const double h = (pulse.times(n - 1) - pulse.times(0)) / (n - 1);
  pulse.Delta = Delta;
  pulse.alpha = CVec::Zero(n);
  for (int k = 0; k < n; ++k) {
    const double za = std::abs(pulse.zeta(k));
    if (za >= 0.5 * g)
      throw ConfigError("invert_zeta_to_eta: |zeta| >= g/2, inversion singular");
    if (za == 0.0) continue;
    // |alpha| from |zeta|^2*(4 g^2 |alpha|^2 + Delta^2) = g^4 |alpha|^2;
    // alpha keeps the phase of zeta.
    const double amag =
        za * Delta / (g * std::sqrt(g * g - 4.0 * za * za));
    pulse.alpha(k) = (pulse.zeta(k) / za) * amag;
  }
  // 4th-order derivative of alpha: central in the interior, one-sided at
  // the edges.
  CVec dalpha(n);
  auto a = [&](int k) { return pulse.alpha(k); };
  for (int k = 0; k < n; ++k) {
    if (k >= 2 && k + 2 < n) {
      dalpha(k) = (-a(k + 2) + 8.0 * a(k + 1) - 8.0 * a(k - 1) + a(k - 2)) /
                  (12.0 * h);
    } else if (k + 4 < n && k < 2) {
      dalpha(k) = (-25.0 * a(k) + 48.0 * a(k + 1) - 36.0 * a(k + 2) +
                   16.0 * a(k + 3) - 3.0 * a(k + 4)) /
                  (12.0 * h);
    } else {
      dalpha(k) = (25.0 * a(k) - 48.0 * a(k - 1) + 36.0 * a(k - 2) -
                   16.0 * a(k - 3) + 3.0 * a(k - 4)) /
                  (12.0 * h);
    }
  }
  const Complex lambda(kappa / 2.0, delta);
  pulse.eta = CVec(n);
  for (int k = 0; k < n; ++k) pulse.eta(k) = -dalpha(k) - lambda * a(k);
  return pulse;
}

double pulse_roundtrip_residual(const PulseGrid& pulse, double delta,
                                double kappa, double g) {
  const int n = int(pulse.times.size());
  if (pulse.eta.size() != n)
    throw ConfigError("pulse_roundtrip_residual: pulse has no eta");
  const double h = (pulse.times(n - 1) - pulse.times(0)) / (n - 1);
  const Complex lambda(kappa / 2.0, delta);
  const double Delta = pulse.Delta;
  Complex alpha(0.0, 0.0);
  double residual = 0.0;
  for (int k = 0; k < n; ++k) {
    const double amag = std::abs(alpha);
    const Complex zeta_rec =
        g * g * alpha / std::sqrt(4.0 * g * g * amag * amag + Delta * Delta);
    residual = std::max(residual, std::abs(zeta_rec - pulse.zeta(k)));
    if (k + 1 == n) break;
    const Complex e0 = pulse.eta(k), e1 = pulse.eta(k + 1);
    const Complex eh = 0.5 * (e0 + e1);
    auto f = [&](const Complex& e, const Complex& a) { return -e - lambda * a; };
    const Complex k1 = f(e0, alpha);
    const Complex k2 = f(eh, alpha + 0.5 * h * k1);
    const Complex k3 = f(eh, alpha + 0.5 * h * k2);
    const Complex k4 = f(e1, alpha + h * k3);
    alpha += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return residual;
}

EffectiveRates effective_dephasing_rates(double gamma_phi_1,
                                         double gamma_phi_e, double zeta_abs,
                                         double g) {
  if (zeta_abs < 0 || zeta_abs > 0.5 * g)
    throw ConfigError("effective_dephasing_rates: need 0 <= |zeta| <= g/2");
  const double s =
      std::sqrt(std::max(0.0, 1.0 - 4.0 * zeta_abs * zeta_abs / (g * g)));
  EffectiveRates r;
  r.gamma_phi_prime = gamma_phi_1 * (1.0 + s) * (1.0 + s) / 4.0 +
                      gamma_phi_e * (1.0 - s) * (1.0 - s) / 4.0;
  r.gamma_prime = (gamma_phi_1 + gamma_phi_e) * zeta_abs * zeta_abs / (g * g);
  return r;
}

EffectiveRates effective_emission_rates(double gamma, double zeta_abs,
                                        double g) {
  if (zeta_abs < 0 || zeta_abs > 0.5 * g)
    throw ConfigError("effective_emission_rates: need 0 <= |zeta| <= g/2");
  const double s = std::sqrt(std::max(0.0, 1.0 - 4.0 * zeta_abs * zeta_abs / (g * g)));
  EffectiveRates r;
  r.gamma_phi_prime = gamma * zeta_abs * zeta_abs / (g * g);
  r.gamma_prime = gamma * (1.0 - s) * (1.0 - s) / 4.0;
  return r;
}

void write_pulse_csv(const PulseGrid& pulse, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("write_pulse_csv: cannot open " + path);
  os.precision(17);
  os << "t,re_zeta,im_zeta,re_eta,im_eta\n";
  const bool has_eta = pulse.eta.size() == pulse.times.size();
  for (int k = 0; k < pulse.times.size(); ++k) {
    os << pulse.times(k) << ',' << pulse.zeta(k).real() << ','
       << pulse.zeta(k).imag() << ',' << (has_eta ? pulse.eta(k).real() : 0.0)
       << ',' << (has_eta ? pulse.eta(k).imag() : 0.0) << '\n';
  }
}

PulseGrid read_pulse_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("read_pulse_csv: cannot open " + path);
  std::string line;
  if (!std::getline(is, line) ||
      line.rfind("t,re_zeta,im_zeta,re_eta,im_eta", 0) != 0)
    throw ConfigError("read_pulse_csv: missing or bad header in " + path);
  std::vector<double> t;
  std::vector<Complex> z, e;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    double v[5];
    char comma;
    for (int j = 0; j < 5; ++j) {
      if (!(ls >> v[j])) throw ConfigError("read_pulse_csv: bad row: " + line);
      if (j < 4 && !(ls >> comma)) throw ConfigError("read_pulse_csv: bad row");
    }
    t.push_back(v[0]);
    z.emplace_back(v[1], v[2]);
    e.emplace_back(v[3], v[4]);
  }
  PulseGrid p;
  p.times = Eigen::Map<Vec>(t.data(), long(t.size()));
  p.zeta = Eigen::Map<CVec>(z.data(), long(z.size()));
  p.eta = Eigen::Map<CVec>(e.data(), long(e.size()));
  return p;
}

}  // namespace dickeprobe
