#pragma once

// The P-step state-preparation protocol, the two variance cost functions,
// and their analytic gradients with a finite-difference oracle.

#include <array>
#include <string>
#include <vector>

#include "dickeprobe/gpg.hpp"
#include "dickeprobe/types.hpp"

namespace dickeprobe {

struct ProtocolStep {
  double theta[3] = {0.0, 0.0, 0.0};  // alpha, beta, gamma Euler angles
  double phi = 0.0;
  double delta = 0.0;
};

struct ProtocolParams {
  double theta0[3] = {0.0, 0.0, 0.0};
  std::vector<ProtocolStep> steps;
  double beta = 0.0;
  double extra_final_rotation = 0.0;  // about the field axis, after step P
  int P() const { return int(steps.size()); }
  void validate() const;  // finite angles, per-step sign consistency
};

// Exact-precision JSON: {"theta0":[a,b,c],
//   "steps":[{"theta":[a,b,c],"phi":f,"delta":d},...],
//   "beta":b, "extra_final_rotation":x}
std::string protocol_params_to_json(const ProtocolParams& p);
ProtocolParams protocol_params_from_json(const std::string& text);

enum class Observable { ParityX, JzSquared };
enum class FieldAxis { Z, Y };

struct SensingTask {
  Observable observable = Observable::ParityX;
  FieldAxis field_axis = FieldAxis::Z;
  // Whether moments are taken on the trace-renormalized (conditional) state.
  // The raw reading reproduces the reference operating points, so it is the
  // default; the switch preserves the conditional reading.
  bool normalize_before_measure = false;
  void validate() const;  // ParityX pairs with Z, JzSquared with Y
};

inline SensingTask parity_task(bool normalize = false) {
  return SensingTask{Observable::ParityX, FieldAxis::Z, normalize};
}
inline SensingTask jz2_task(bool normalize = false) {
  return SensingTask{Observable::JzSquared, FieldAxis::Y, normalize};
}

// Shared channel-duration settings for every step of a protocol.
struct ChannelMode {
  bool adiabatic = true;
  double T = 40.0;
  int n_samples = 4001;
};

GpgParams make_gpg_params(const ProtocolStep& s, const NoiseRates& rates,
                          const ChannelMode& mode);

// rho_P = U_P E_P ... U_1 E_1 U_0 |D_0><D_0| U_0^dag ...  The returned probe
// excludes beta and extra_final_rotation; both enter at measurement time as
// a rotation angle shift about the field axis.
CMat prepare_probe(int N, const ProtocolParams& params, const NoiseRates& rates,
                   const ChannelMode& mode = {});

// States after step j = 0..P (index 0 is U_0 rho U_0^dag).
std::vector<CMat> trajectory(int N, const ProtocolParams& params,
                             const NoiseRates& rates,
                             const ChannelMode& mode = {});

struct CostResult {
  double variance = 0.0;
  Vec gradient;     // over theta0 (3), steps (5 each), beta (1)
  CMat probe;
  double trace_loss = 0.0;  // 1 - trace(probe)
  bool divergent = false;   // |d<M>/dbeta| below 1e-14; variance capped at 1e6
};

// Case I: M = parity about x, field about z.
// (Delta beta)^2 = (<P^2> - <P>^2)/|d<P>/dbeta|^2 with <P^2> = trace(rho).
CostResult variance_parity(const CMat& probe, double beta,
                           bool normalize = false);

// The nine static Case II moments of rho: <Jz^2>, <Jx^2>, <{Jz,Jx}>, <Jz^4>,
// <Jx^4>, <{Jz,Jx}^2>, <{Jz^2,Jx^2}>, <{Jz^2,{Jz,Jx}}>, <{Jx^2,{Jz,Jx}}>.
// Together they determine <Jz^2> and <Jz^4> of the state rotated by any angle
// beta about y, hence the Case II variance as a closed trigonometric form.
std::array<double, 9> case2_moments(const CMat& rho);

struct Case2Scalars {
  double E2 = 0;  // <Jz^2> after rotating by beta about y
  double E4 = 0;  // <Jz^4> likewise
  double D1 = 0;  // dE2/dbeta
};
Case2Scalars case2_scalars(const std::array<double, 9>& m, double beta);

// Case II: M = Jz^2, field about y, via the static-moment trigonometric
// closed forms (cross-checked against direct rotation in the tests).
CostResult variance_jz2(const CMat& probe, double beta,
                        bool normalize = false);

// Full cost with analytic gradient over all protocol parameters and beta,
// by forward-mode propagation of d(rho)/d(Theta) through the channel and
// rotation chain.  Channel-parameter derivatives multiply matrix elements
// by the phase-matrix derivatives before the exponential factor.
CostResult analytic_gradient(int N, const ProtocolParams& params,
                             const NoiseRates& rates, const SensingTask& task,
                             const ChannelMode& mode = {});

// Cost only (no d(rho)/d(Theta) propagation); cheaper for table evaluation.
CostResult evaluate_cost(int N, const ProtocolParams& params,
                         const NoiseRates& rates, const SensingTask& task,
                         const ChannelMode& mode = {});

// Central-difference oracle over the same parameter vector (step ~1e-5).
Vec fd_gradient(int N, const ProtocolParams& params, const NoiseRates& rates,
                const SensingTask& task, const ChannelMode& mode = {},
                double step = 1e-5);

// Flat parameter vector layout used by gradients and the optimizer:
// [theta0(3), {theta(3), phi, delta} per step, beta].
Vec pack_params(const ProtocolParams& p);
ProtocolParams unpack_params(const Vec& x, int P, double extra_final_rotation);

}  // namespace dickeprobe
