#pragma once

// Symmetric (Dicke) subspace primitives for N spin-1/2 particles.
//
// Basis convention: index n = 0..N counts spins in |1>, so the basis vector
// e_n is the Dicke state |D_n^N> with Jz eigenvalue m = n - N/2.  All
// operators act on the (N+1)-dimensional symmetric subspace only.

#include <vector>

#include "dickeprobe/types.hpp"

namespace dickeprobe {

struct CollectiveOperators {
  int N = 0;
  CMat Jx, Jy, Jz, J2;  // (N+1)x(N+1)
};

// Dense Jx, Jy, Jz and J^2 = Jx^2+Jy^2+Jz^2 in the Dicke basis.
CollectiveOperators build_collective_operators(int N);

// U = exp(-i*alpha*Jz) * exp(-i*beta*Jy) * exp(-i*gamma*Jz).
// alpha is the outermost rotation (applied last to a ket).
// The Jy exponential uses a per-N cached spectral decomposition.
CMat euler_rotation(int N, double alpha, double beta, double gamma);

// exp(-i*theta*Jy) alone (same cache as euler_rotation).
CMat rotation_y(int N, double theta);

// Parity operator Px = prod_i sigma_x^i restricted to the symmetric
// subspace: the antidiagonal permutation |D_n> -> |D_{N-n}>.
CMat parity_x(int N);

// Basis states.
CVec dicke_state(int N, int n);               // |D_n^N>
CVec ghz_state(int N);                        // (|D_0> + |D_N>)/sqrt(2)
// |theta,phi> = exp(-i*phi*Jz) exp(-i*theta*Jy) |D_N^N>, evaluated in
// log space (lgamma) so it stays finite for N ~ 100.
CVec spin_coherent_state(int N, double theta, double phi);

struct QFuncGrid {
  Vec thetas;            // n_theta uniform nodes on [0, pi]
  Vec phis;              // n_phi uniform nodes on [0, 2*pi)
  Mat values;            // n_theta x n_phi, Q(theta, phi) = <tp|rho|tp>
};

// Husimi Q function on a uniform grid.  Normalised so that
// (N+1)/(4*pi) * \int Q dOmega = tr(rho).
QFuncGrid husimi_q(const CMat& rho, int n_theta, int n_phi);

}  // namespace dickeprobe
