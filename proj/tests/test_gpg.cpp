#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <random>

#include "dickeprobe/basis.hpp"
#include "dickeprobe/gpg.hpp"

using namespace dickeprobe;

namespace {

double max_abs(const CMat& m) { return m.cwiseAbs().maxCoeff(); }

// composite Simpson on a uniform grid (odd sample count)
double simpson(const Vec& t, const Vec& f) {
  const int n = int(t.size());
  const double h = (t(n - 1) - t(0)) / (n - 1);
  double s = f(0) + f(n - 1);
  for (int k = 1; k < n - 1; ++k) s += f(k) * (k % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

}  // namespace

TEST_CASE("rates_from_cooperativity: closed-form values and round trip") {
  const NoiseRates r1 = rates_from_cooperativity(100.0, 1.0);
  CHECK(r1.kappa == doctest::Approx(0.1).epsilon(1e-12));
  CHECK(r1.gamma == doctest::Approx(0.1).epsilon(1e-12));
  const NoiseRates r2 = rates_from_cooperativity(1e4, 1.0);
  CHECK(r2.kappa == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(r2.gamma == doctest::Approx(0.01).epsilon(1e-12));

  for (double C : {25.0, 100.0, 1e4}) {
    for (double gok : {0.01, 0.3, 1.0, 100.0}) {
      const NoiseRates r = rates_from_cooperativity(C, gok);
      CHECK(r.cooperativity() == doctest::Approx(C).epsilon(1e-12));
      CHECK(r.gamma / r.kappa == doctest::Approx(gok).epsilon(1e-12));
    }
  }
  CHECK_THROWS_AS(rates_from_cooperativity(-1.0, 1.0), ConfigError);
  CHECK_THROWS_AS(rates_from_cooperativity(10.0, 0.0), ConfigError);
}

TEST_CASE("cavity_params_from_geometry: Rb-87 example") {
  CavityGeometry geom;
  geom.wavelength = 780e-9;
  geom.finesse = 2e5;
  geom.waist = 2e-6;
  geom.length = 40e-6;
  geom.gamma = 2 * kPi * 6e6;
  const CavityParams p = cavity_params_from_geometry(geom);
  CHECK(std::abs(p.C - 1500.0) / 1500.0 < 0.10);
  CHECK(std::abs(p.kappa - 2 * kPi * 20e6) / (2 * kPi * 20e6) < 0.15);
  CHECK(std::abs(p.g - 2 * kPi * 400e6) / (2 * kPi * 400e6) < 0.15);
  // g must satisfy C = g^2/(kappa*gamma) by construction
  CHECK(p.g * p.g / (p.kappa * geom.gamma) ==
        doctest::Approx(p.C).epsilon(1e-12));
}

TEST_CASE("adiabatic_phases: diagonal damping, lossless limit, worked value") {
  const int N = 6;
  GpgParams params;
  params.phi = 1.56;
  params.delta = 0.48;
  params.rates = NoiseRates{1.0, 0.1, 0.1};

  const GpgPhaseMatrix pm = adiabatic_phases(N, params);
  for (int n = 0; n <= N; ++n) {
    const Complex expect(0.0, n * params.rates.gamma * params.delta *
                                  params.phi /
                                  (params.rates.g * params.rates.g));
    CHECK(std::abs(pm.phases(n, n) - expect) < 1e-14);
  }
  // worked value at (n,m) = (1,0)
  const Complex p10(1.56, 1.56 * (0.1 / (2 * 0.48) + 0.1 * 0.48 / 2.0));
  CHECK(std::abs(pm.phases(1, 0) - p10) < 1e-12);
  CHECK(std::abs(p10.imag() - 0.200) < 1e-3);  // sanity on magnitude

  GpgParams lossless = params;
  lossless.rates = NoiseRates{1.0, 0.0, 0.0};
  const GpgPhaseMatrix pm0 = adiabatic_phases(N, lossless);
  for (int n = 0; n <= N; ++n)
    for (int m = 0; m <= N; ++m) {
      CHECK(std::abs(pm0.phases(n, m).imag()) < 1e-15);
      CHECK(std::abs(pm0.phases(n, m).real() -
                     (double(n * n) - double(m * m)) * 1.56) < 1e-12);
    }

  GpgParams bad = params;
  bad.delta = -0.48;  // sign mismatch with phi > 0
  CHECK_THROWS_AS(adiabatic_phases(N, bad), ConfigError);
}

TEST_CASE("phase matrices: hermiticity pairing and PSD, random draws") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> uphi(0.05, 1.5), udel(0.2, 2.0),
      urate(0.0, 0.3);
  for (int draw = 0; draw < 100; ++draw) {
    const int N = 4 + int(draw % 17);
    GpgParams params;
    params.phi = uphi(rng);
    params.delta = udel(rng);
    params.rates = NoiseRates{1.0, urate(rng), urate(rng)};
    params.adiabatic = (draw % 3 != 0);
    params.T = 40.0;
    if (!params.adiabatic) {
      // keep delta inside the finite band
      const double lo = 2 * kPi / params.T * 1.01;
      const double hi = 3 * params.T / (32 * params.phi) * 0.99;
      params.delta = lo + (udel(rng) / 2.0) * (std::min(hi, 3.0) - lo);
    }
    const GpgPhaseMatrix pm = channel_phases(N, params);
    for (int n = 0; n <= N; ++n)
      for (int m = 0; m <= N; ++m)
        CHECK(std::abs(pm.phases(m, n) + std::conj(pm.phases(n, m))) < 1e-12);
    CHECK_NOTHROW(check_phase_matrix(pm));  // includes the PSD eigen floor
  }
}

TEST_CASE("sin2_pulse: endpoints, enclosed phase, amplitude bound") {
  const double T = 40.0;
  const int n = 4001;
  PulseGrid p = sin2_pulse(1.57, 2.03, T, n);
  CHECK(p.zeta(0) == Complex(0, 0));
  // t = T endpoint: sin(pi) and sin(2*pi) round to ~1e-16, not exactly 0
  CHECK(std::abs(p.zeta(n - 1)) < 1e-15);
  CHECK(p.zeta.cwiseAbs().maxCoeff() < 0.5);  // |zeta| < g/2

  Vec re2(n);
  for (int k = 0; k < n; ++k) re2(k) = std::norm(p.zeta(k).real());
  const double phi_quad = simpson(p.times, re2) / 2.03;
  CHECK(std::abs(phi_quad - 1.57) / 1.57 < 1e-6);

  // delta outside the band is rejected by the finite-mode validator
  GpgParams f;
  f.phi = 1.57;
  f.delta = 3.0;
  f.adiabatic = false;
  f.T = 40.0;
  CHECK_THROWS_AS(f.validate(), ConfigError);
  f.delta = 0.05;  // below 2*pi/T
  CHECK_THROWS_AS(f.validate(), ConfigError);
  // tiny delta blows up Im(zeta) until the amplitude bound trips
  CHECK_THROWS_AS(sin2_pulse(1.57, 0.002, T, n), ConfigError);
}

TEST_CASE("finite_time_phases: lossless convergence and exact zeros") {
  const int N = 6;
  GpgParams params;
  params.phi = 0.9;
  params.delta = 1.2;
  params.rates = NoiseRates{1.0, 0.0, 0.0};
  params.adiabatic = false;
  params.T = 40.0;
  const GpgPhaseMatrix pm = channel_phases(N, params);
  CHECK(pm.phases(0, 0) == Complex(0, 0));
  for (int n = 0; n <= N; ++n)
    for (int m = 0; m <= N; ++m) {
      const double ideal = (double(n * n) - double(m * m)) * params.phi;
      if (n != m)
        CHECK(std::abs(pm.phases(n, m).real() - ideal) <
              0.01 * std::max(1.0, std::abs(ideal)));
    }
  CHECK(pm.residual < 0.05);
}

TEST_CASE("finite_time_phases: approach to adiabatic phases at C=1e4") {
  const int N = 10;
  GpgParams params;
  params.phi = 1.57;
  params.delta = 0.44;
  params.rates = rates_from_cooperativity(1e4, 1.0);

  const GpgPhaseMatrix ad = adiabatic_phases(N, params);
  params.adiabatic = false;
  double prev = 1e100;
  // T = 10 is excluded: its allowed delta band at phi = 1.57 is empty
  for (double T : {20.0, 40.0, 80.0, 160.0}) {
    params.T = T;
    const GpgPhaseMatrix ft = channel_phases(N, params);
    const double err = max_abs(ft.phases - ad.phases);
    CHECK(err < prev);  // monotone convergence in T
    prev = err;
    if (T == 40.0) CHECK(err < 0.05);
  }

  // quadrature refinement: doubling the sample count barely moves phases
  params.T = 40.0;
  params.n_samples = 4001;
  const GpgPhaseMatrix c1 = channel_phases(N, params);
  params.n_samples = 8001;
  const GpgPhaseMatrix c2 = channel_phases(N, params);
  CHECK(max_abs(c1.phases - c2.phases) < 1e-8);
}

TEST_CASE("apply_channel: identity, GHZ creation, damping") {
  const int N = 4;
  GpgPhaseMatrix zero;
  zero.N = N;
  zero.phases = CMat::Zero(N + 1, N + 1);
  const CVec ghz = ghz_state(N);
  const CMat rho = ghz * ghz.adjoint();
  CHECK(max_abs(apply_channel(zero, rho) - rho) < 1e-15);

  // one-axis twisting: CSS along x, phi = pi/2 channel, rotate back -> GHZ
  GpgParams params;
  params.phi = kPi / 2;
  params.delta = 1.0;
  params.rates = NoiseRates{1.0, 0.0, 0.0};
  const CVec css = rotation_y(N, kPi / 2) * dicke_state(N, 0);
  CMat twisted = apply_channel(adiabatic_phases(N, params), css * css.adjoint());
  const CMat R = rotation_y(N, kPi / 2);
  twisted = R * twisted * R.adjoint();
  // GHZ-class: all weight on |D_0>, |D_N> with a pure relative phase
  CHECK(std::abs(twisted(0, 0).real() - 0.5) < 1e-10);
  CHECK(std::abs(twisted(N, N).real() - 0.5) < 1e-10);
  CHECK(std::abs(std::abs(twisted(0, N)) - 0.5) < 1e-10);
  for (int n = 1; n < N; ++n) CHECK(std::abs(twisted(n, n)) < 1e-10);

  // gamma > 0 strictly decreases the trace for support on n >= 1
  params.rates = NoiseRates{1.0, 0.0, 0.1};
  const CMat damped = apply_channel(adiabatic_phases(N, params), rho);
  CHECK(damped.trace().real() < rho.trace().real() - 1e-6);
}

TEST_CASE("invert_zeta_to_eta: trivial pulse and round-trip residual") {
  const double T = 40.0;
  const int n = 2001;
  PulseGrid zero;
  zero.times = Vec::LinSpaced(n, 0.0, T);
  zero.zeta = CVec::Zero(n);
  const PulseGrid zinv = invert_zeta_to_eta(zero, 1.0, 0.01, 12.0);
  CHECK(zinv.eta.cwiseAbs().maxCoeff() < 1e-15);

  // table row (N=40, C=1e4, gamma/kappa=0.01): phi=1.57, delta=2.03, Delta=12
  const NoiseRates rates = rates_from_cooperativity(1e4, 0.01);
  PulseGrid p = sin2_pulse(1.57, 2.03, T, 4001);
  p = invert_zeta_to_eta(p, 2.03, rates.kappa, 12.0);
  const double resid = pulse_roundtrip_residual(p, 2.03, rates.kappa);
  CHECK(resid < 1e-6 * p.zeta.cwiseAbs().maxCoeff());

  // |eta| is a smooth single hump: peak well inside, small at the ends
  int kmax = 0;
  double vmax = 0;
  for (int k = 0; k < 4001; ++k)
    if (std::abs(p.eta(k)) > vmax) vmax = std::abs(p.eta(k)), kmax = k;
  CHECK(kmax > 4001 / 4);
  CHECK(kmax < 3 * 4001 / 4);
  CHECK(std::abs(p.eta(0)) < 0.1 * vmax);
  CHECK(std::abs(p.eta(4000)) < 0.1 * vmax);

  // inversion singularity: |zeta| >= g/2
  PulseGrid hot = sin2_pulse(1.57, 2.03, T, 401);
  hot.zeta *= 2.0;
  CHECK_THROWS_AS(invert_zeta_to_eta(hot, 2.03, rates.kappa, 12.0),
                  ConfigError);
}

TEST_CASE("effective noise rates: limits and worked values") {
  // dephasing family
  auto d0 = effective_dephasing_rates(0.3, 0.7, 0.0, 1.0);
  CHECK(d0.gamma_phi_prime == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(d0.gamma_prime == doctest::Approx(0.0).epsilon(1e-12));
  auto dedge = effective_dephasing_rates(0.3, 0.7, 0.5, 1.0);
  CHECK(dedge.gamma_phi_prime == doctest::Approx(0.25).epsilon(1e-9));
  auto dmid = effective_dephasing_rates(0.4, 0.4, std::sqrt(0.1), 1.0);
  CHECK(dmid.gamma_prime == doctest::Approx(0.2 * 0.4).epsilon(1e-9));

  // emission family
  auto e0 = effective_emission_rates(0.5, 0.0, 1.0);
  CHECK(e0.gamma_phi_prime == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(e0.gamma_prime == doctest::Approx(0.0).epsilon(1e-12));
  auto eedge = effective_emission_rates(0.5, 0.5, 1.0);
  CHECK(eedge.gamma_phi_prime == doctest::Approx(0.125).epsilon(1e-9));
  CHECK(eedge.gamma_prime == doctest::Approx(0.125).epsilon(1e-9));
  // small-|zeta| expansion gamma' ~ gamma*|zeta|^4/g^4
  const double za = 0.05;
  auto esmall = effective_emission_rates(1.0, za, 1.0);
  CHECK(std::abs(esmall.gamma_prime - std::pow(za, 4)) / std::pow(za, 4) <
        0.01);
}

TEST_CASE("pulse CSV round trip") {
  const NoiseRates rates = rates_from_cooperativity(1e4, 0.01);
  PulseGrid p = sin2_pulse(0.5, 1.0, 40.0, 401);
  p = invert_zeta_to_eta(p, 1.0, rates.kappa, 9.0);
  const std::string path = "gpg_roundtrip_test.csv";
  write_pulse_csv(p, path);
  const PulseGrid q = read_pulse_csv(path);
  CHECK((q.times - p.times).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((q.zeta - p.zeta).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((q.eta - p.eta).cwiseAbs().maxCoeff() < 1e-12);
  std::remove(path.c_str());
}
