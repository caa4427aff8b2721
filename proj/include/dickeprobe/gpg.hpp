#pragma once

// The geometric-phase-gate channel on the Dicke subspace: analytic
// adiabatic phases, exact finite-duration phases by quadrature of the
// closed-form cavity solution, pulse synthesis, zeta -> eta inversion,
// and effective noise-rate transformations.

#include <string>

#include "dickeprobe/types.hpp"

namespace dickeprobe {

struct NoiseRates {
  double g = 1.0;      // coupling; the frequency unit
  double kappa = 0.0;  // cavity decay, units of g
  double gamma = 0.0;  // spontaneous emission, units of g
  double cooperativity() const { return g * g / (kappa * gamma); }
};

// kappa = g/sqrt(C*(gamma/kappa)), gamma = (gamma/kappa)*kappa, g = 1.
NoiseRates rates_from_cooperativity(double C, double gamma_over_kappa);

struct CavityGeometry {
  double wavelength;  // m
  double finesse;
  double waist;       // m
  double length;      // m
  double gamma;       // atomic linewidth, angular units (rad/s)
};
struct CavityParams {
  double C;      // cooperativity, dimensionless
  double g;      // rad/s
  double kappa;  // rad/s
};
// C = 3*lambda^2*F/(2*pi^3*w_r^2), kappa = pi*c/(L*F), g = sqrt(C*kappa*gamma).
CavityParams cavity_params_from_geometry(const CavityGeometry& geom);

struct GpgParams {
  double phi = 0.0;    // geometric phase, signed
  double delta = 1.0;  // cavity-drive detuning, units of g, signed
  NoiseRates rates;
  bool adiabatic = true;  // T -> infinity channel (Eq. (6)-type phases)
  double T = 40.0;        // pulse duration in 1/g when adiabatic = false
  int n_samples = 4001;   // quadrature grid for the finite path

  // sign(phi) == sign(delta) when both nonzero; finite duration additionally
  // requires 2*pi/T < |delta| < 3*g^2*T/(32*|phi|).
  void validate() const;
};

struct GpgPhaseMatrix {
  int N = 0;
  CMat phases;            // (N+1)x(N+1), phi_nm
  double residual = 0.0;  // finite path: N * |b(T)|, cavity return diagnostic
};

// Throws NumericalError if the matrix violates phi_mn = -conj(phi_nm)
// (1e-12), Im >= -1e-12, or PSD of [exp(i*phi_nm)] (eigenvalue floor -1e-10).
void check_phase_matrix(const GpgPhaseMatrix& pm);

// phi_nm = (n^2-m^2)*phi + i*(m-n)^2*kappa*phi/(2*delta)
//        + i*(m+n)*gamma*phi*delta/(2*g^2); requires params.adiabatic.
GpgPhaseMatrix adiabatic_phases(int N, const GpgParams& params);

struct PulseGrid {
  Vec times;     // uniform on [0, T]
  CVec zeta;     // effective drive zeta(t)
  CVec eta;      // lab drive eta(t); size 0 until inversion is run
  CVec alpha;    // displaced cavity amplitude alpha(t); size 0 likewise
  double Delta = 0.0;  // atom-drive detuning, used only by the inversion
};

// Re zeta = -2*delta*sqrt(2*phi/(3*delta*T))*sin^2(pi*t/T),
// Im zeta = -d/dt(Re zeta)/delta (analytic derivative).
// Requires sign(phi) = sign(delta), finite-duration delta bounds,
// and max|zeta| < g/2.
PulseGrid sin2_pulse(double phi, double delta, double T, int n_samples = 4001,
                     double g = 1.0);

// Channel scalars for the finite-duration path.  With b(t) solving
// db/dt = -(i*delta + kappa/2)*b - i*zeta, b(0) = 0 (so beta_n = n*b):
//   S1 = int zeta * conj(b) dt,   G = int gamma_1 dt,
//   gamma_1(t) = gamma*(1 - sqrt(1 - 4|zeta|^2/g^2))/2,
// and phi_nm = (m-n)*(m*S1 + n*conj(S1)) + i*(m+n)*G/2.
// b is propagated by the exact integrating factor with composite-Simpson
// quadrature of the kernel integral.
struct FiniteChannelScalars {
  Complex S1{0.0, 0.0};
  double G = 0.0;
  Complex bT{0.0, 0.0};  // b(T); |bT|*N is the adiabaticity residual
};
FiniteChannelScalars finite_channel_scalars(const PulseGrid& pulse,
                                            const NoiseRates& rates,
                                            double delta);

// Finite-duration phase matrix from the pulse via finite_channel_scalars.
GpgPhaseMatrix finite_time_phases(int N, const GpgParams& params,
                                  const PulseGrid& pulse);

// Dispatch on params.adiabatic; the finite branch synthesises the sin^2
// pulse internally from (phi, delta, T, n_samples).
GpgPhaseMatrix channel_phases(int N, const GpgParams& params);

// Phase matrix plus elementwise derivatives with respect to phi and delta.
// Adiabatic derivatives are analytic; finite-path derivatives come from
// central differences on the two channel scalars (step 1e-6 scaled).
struct GpgPhasesWithGrad {
  GpgPhaseMatrix value;
  CMat dphi;     // d(phi_nm)/d(phi)
  CMat ddelta;   // d(phi_nm)/d(delta)
};
GpgPhasesWithGrad channel_phases_with_grad(int N, const GpgParams& params);

// rho'_nm = exp(i*phi_nm) * rho_nm.
CMat apply_channel(const GpgPhaseMatrix& phases, const CMat& rho);

// Solve zeta = g^2*alpha/sqrt(4*g^2*|alpha|^2 + Delta^2) for alpha
// (phase of alpha = phase of zeta), then eta = -alpha' - (i*delta+kappa/2)*alpha
// with a 4th-order finite-difference derivative on the uniform grid.
// Fills pulse.alpha and pulse.eta; requires max|zeta| < g/2 and Delta > 0.
PulseGrid invert_zeta_to_eta(PulseGrid pulse, double delta, double kappa,
                             double Delta, double g = 1.0);

// Inversion self-consistency: re-integrate alpha' = -eta - (i*delta+kappa/2)
// alpha from alpha(0) = 0 using the eta column, reconstruct zeta from alpha,
// and return max_t |zeta_reconstructed - zeta|.  Requires pulse.eta filled.
double pulse_roundtrip_residual(const PulseGrid& pulse, double delta,
                                double kappa, double g = 1.0);

// Dressed-basis noise rates during state preparation.
struct EffectiveRates {
  double gamma_phi_prime = 0.0;
  double gamma_prime = 0.0;
};
// gamma_phi' = gp1*(1+s)^2/4 + gpe*(1-s)^2/4, gamma' = (gp1+gpe)*|zeta|^2/g^2,
// s = sqrt(1 - 4|zeta|^2/g^2).
EffectiveRates effective_dephasing_rates(double gamma_phi_1,
                                         double gamma_phi_e, double zeta_abs,
                                         double g = 1.0);
// gamma_phi' = gamma*|zeta|^2/g^2, gamma' = gamma*(1-s)^2/4.
EffectiveRates effective_emission_rates(double gamma, double zeta_abs,
                                        double g = 1.0);

// CSV with mandatory header "t,re_zeta,im_zeta,re_eta,im_eta"; eta columns
// are written as 0 when the pulse has no eta.
void write_pulse_csv(const PulseGrid& pulse, const std::string& path);
PulseGrid read_pulse_csv(const std::string& path);

}  // namespace dickeprobe
