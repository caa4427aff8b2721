#pragma once

// Signal acquisition under local dephasing: permutationally invariant (PI)
// Lindblad evolution over the collective sectors j = j_min..N/2, variance
// time series for both measurement cases, closed forms for ideal GHZ and
// half-filled Dicke probes, and a full-Hilbert-space brute-force oracle.

#include <vector>

#include "dickeprobe/protocol.hpp"
#include "dickeprobe/types.hpp"

namespace dickeprobe {

// Multiplicity of the total-spin-j sector of N spin-1/2 particles,
// d(N,j) = binom(N, N/2-j) * (2j+1)/(N/2+j+1) (Catalan triangle), evaluated
// in log space.  Returns 0 when (N, twice_j) is not a valid sector.
double pi_degeneracy(int N, int twice_j);

// Block-diagonal PI density operator: one (2j+1)x(2j+1) matrix per total
// spin j, stored per copy (identical across a sector's degenerate copies),
// ordered from j = N/2 downward to j_min = (N mod 2)/2.
struct PIDensity {
  int N = 0;
  std::vector<CMat> blocks;

  int n_blocks() const { return int(blocks.size()); }
  int twice_j(int k) const { return N - 2 * k; }  // block k holds j = (N-2k)/2
  double trace() const;                           // sum_j d(N,j) tr B_j
  double purity() const;                          // sum_j d(N,j) tr B_j^2
  // Throws NumericalError unless weighted trace = 1 (trace_tol) and every
  // block is Hermitian (herm_tol).
  void check(double trace_tol = 1e-10, double herm_tol = 1e-12) const;
};

PIDensity pi_zero(int N);

// Places rho (a symmetric-subspace density matrix) in the j = N/2 block.
PIDensity embed_symmetric(const CMat& rho);
// Returns the j = N/2 block.
CMat extract_symmetric(const PIDensity& state);

struct DephasingConfig {
  double gamma_phi_over_J = 0.0;
  FieldAxis field_axis = FieldAxis::Z;
  Vec t_grid;                // in units of 1/J, strictly increasing from 0
  double rtol = 1e-10;       // adaptive RK 5(4) relative tolerance
  bool fixed_step = false;   // classic RK4 fallback for reproducible exports
  double fixed_dt = 1e-3;
  void validate() const;
};

// d(rho)/dt = -i J [J_axis, rho] + gamma_phi sum_i D[sigma_z^i / 2](rho) in
// the PI representation.  Local dephasing couples neighbouring j sectors;
// the transfer coefficients are rank-one in (m, m') and are validated
// against the brute-force oracle in the tests.
PIDensity pi_rhs(const PIDensity& state, double J, double gamma_phi,
                 FieldAxis axis);

// Integrates pi_rhs from t_grid[0] (must be 0) through every grid time.
// Adaptive Dormand-Prince 5(4) by default; steps whose trace drifts more
// than 1e-8 from the initial trace are rejected.
std::vector<PIDensity> pi_evolve(const PIDensity& state, double J,
                                 double gamma_phi, FieldAxis axis,
                                 const Vec& t_grid, double rtol = 1e-10,
                                 bool fixed_step = false,
                                 double fixed_dt = 1e-3);

// pi_evolve with J = 1 (times in 1/J) and rates from cfg.
std::vector<PIDensity> pi_propagate(const PIDensity& state,
                                    const DephasingConfig& cfg);

// Expectations on PI states (degeneracy-weighted over all sectors).
// Parity about x restricted to sector j is exp(i*pi*Jx_j) * exp(-i*pi*N/2).
double pi_parity_expectation(const PIDensity& state);
std::array<double, 9> pi_case2_moments(const PIDensity& state);

struct VariancePoint {
  double t = 0;         // Jt
  double variance = 0;  // (Delta beta)^2
  double trace = 0;
  double purity = 0;
};

// (Delta beta)^2(t) for a probe co-evolving under the field and dephasing.
// The sensitivity denominator is the total time derivative tr(M d(rho)/dt)/J,
// which at gamma_phi = 0 reduces to the field-commutator term and which
// reproduces the ideal-probe closed forms below at finite gamma_phi.
std::vector<VariancePoint> variance_timeseries(const CMat& probe,
                                               const SensingTask& task,
                                               const DephasingConfig& cfg);

// Ideal GHZ probe (rotated by pi/2N about z so beta_opt = 0), parity
// measurement, field about z with coupling J, dephasing rate gamma_phi:
// (Delta Jt)^2 = (e^{N gp t}/N^2) (1 - e^{-N gp t} cos^2(NJt + pi/2))
//               / |sin(NJt + pi/2) + (gp/2J) cos(NJt + pi/2)|^2.
double ghz_variance_closed_form(int N, double gamma_phi, double J, double t);

// Ideal |D_{N/2}> probe under the sequential model: dephase for time t,
// then rotate by Jt about y, measure Jz^2 (derivative from the rotation
// angle only).  N must be even.
double dicke_variance_closed_form(int N, double gamma_phi, double t,
                                  double Jt);

// Numerical counterpart of dicke_variance_closed_form for an arbitrary
// symmetric probe: PI-dephase by gamma_phi*t, then evaluate the Case II
// variance at rotation angle Jt.
double pi_dephase_rotate_variance(const CMat& probe, double gamma_phi_t,
                                  double Jt);

// <Jx^2> of the dephased (not rotated) ideal Dicke state,
// (e^{-gp t} N^2/2 + N)/4; intermediate of the closed form.
double dicke_jx2_closed_form(int N, double gamma_phi_t);

// ---- Full-Hilbert-space oracle (N <= 8) ----

// op embedded at a site: I x ... x op x ... x I, little-endian bit order
// (bit i of the basis index is the state of spin i, 1 = |1>).
CMat site_operator(int N, int site, const CMat& op);
// J * sum_i sigma_axis^i / 2 on the 2^N space.
CMat full_field_hamiltonian(int N, FieldAxis axis, double J);
// sqrt(gamma_phi) * sigma_z^i / 2 for every site.
std::vector<CMat> full_dephasing_jumps(int N, double gamma_phi);

// rho' = -i[H, rho] + sum_k (A_k rho A_k^dag - {A_k^dag A_k, rho}/2),
// integrated on the full 2^N space (adaptive RK 5(4)).
std::vector<CMat> brute_force_lindblad(int N, const CMat& H,
                                       const std::vector<CMat>& jump_ops,
                                       const CMat& rho0, const Vec& t_grid,
                                       double rtol = 1e-10);

// Isometries from each (j, copy) sector onto the 2^N space, built by the
// recursive Clebsch-Gordan construction; columns are orthonormal.
// Returned in block order matching PIDensity (j descending), with
// pi_degeneracy(N, 2j) copies per sector.
struct SchurBasis {
  int N = 0;
  std::vector<int> twice_j;       // per block
  std::vector<std::vector<CMat>>  // per block: one isometry per copy
      isometries;
};
const SchurBasis& schur_basis(int N);  // cached, N <= 8

CMat pi_to_full(const PIDensity& state);
PIDensity full_to_pi(int N, const CMat& rho);

// (1/2) * trace norm of (A - B); A, B Hermitian.
double trace_distance(const CMat& A, const CMat& B);

// CSV export, header "Jt,variance,trace,purity".
void write_timeseries_csv(const std::vector<VariancePoint>& series,
                          const std::string& path);

}  // namespace dickeprobe
