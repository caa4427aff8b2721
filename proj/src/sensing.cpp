#include "dickeprobe/sensing.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>

#include "dickeprobe/basis.hpp"

namespace dickeprobe {

namespace {

constexpr double kDivergenceCap = 1e6;
constexpr double kDenomFloor = 1e-14;
constexpr double kTraceDrift = 1e-8;

double log_binom(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

// ---- per-N cached PI structure: block operators, parity, and the local
// dephasing transfer coefficients between neighbouring j sectors ----

struct PIBlockOps {
  int twice_j = 0;
  Vec jz;        // diagonal of Jz_j, m = r - j
  CMat Jy;       // spin-j Jy
  CMat parity;   // global parity about x restricted to the sector
  CMat within;   // S[X] coefficients for the j -> j transfer, entry m*m'*cw
  CMat from_below;  // into this j from j-1 (source-sized), 0x0 when absent
  CMat from_above;  // into this j from j+1 (target-sized), 0x0 when absent
};

struct PIStructure {
  int N = 0;
  std::vector<PIBlockOps> blocks;  // j = N/2 downward
  std::vector<double> degeneracy;
  std::vector<int> offsets;  // flattened layout, offsets[k] .. +dim(k)^2
  int total_size = 0;
};

// Jy = (J+ - J-)/(2i): <m+1|Jy|m> = -i*c, <m|Jy|m+1> = +i*c.
CMat spin_jy(int twice_j) {
  const int dim = twice_j + 1;
  const double j = twice_j / 2.0;
  CMat Jy = CMat::Zero(dim, dim);
  for (int r = 0; r + 1 < dim; ++r) {
    const double m = r - j;
    const double c = 0.5 * std::sqrt((j - m) * (j + m + 1.0));
    Jy(r + 1, r) = Complex(0, -c);
    Jy(r, r + 1) = Complex(0, c);
  }
  return Jy;
}

CMat sector_parity(int N, int twice_j) {
  const int dim = twice_j + 1;
  const double j = twice_j / 2.0;
  // Jx_j, then exp(i*pi*Jx) * exp(-i*pi*N/2) by spectral decomposition.
  CMat Jx = CMat::Zero(dim, dim);
  for (int r = 0; r + 1 < dim; ++r) {
    const double m = r - j;
    const double c = 0.5 * std::sqrt((j - m) * (j + m + 1.0));
    Jx(r + 1, r) = c;
    Jx(r, r + 1) = c;
  }
  Eigen::SelfAdjointEigenSolver<CMat> es(Jx);
  CVec phase(dim);
  for (int r = 0; r < dim; ++r)
    phase(r) = std::exp(Complex(0, kPi * es.eigenvalues()(r)));
  const Complex global = std::exp(Complex(0, -kPi * N / 2.0));
  return global * (es.eigenvectors() * phase.asDiagonal() *
                   es.eigenvectors().adjoint());
}

const PIStructure& pi_structure(int N) {
  static std::map<int, PIStructure> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(N);
  if (it != cache.end()) return it->second;

  PIStructure st;
  st.N = N;
  const int n_blocks = N / 2 + 1;
  st.blocks.resize(n_blocks);
  st.degeneracy.resize(n_blocks);
  st.offsets.resize(n_blocks);
  int off = 0;
  for (int k = 0; k < n_blocks; ++k) {
    const int tj = N - 2 * k;
    const int dim = tj + 1;
    const double j = tj / 2.0;
    PIBlockOps& b = st.blocks[k];
    b.twice_j = tj;
    st.degeneracy[k] = pi_degeneracy(N, tj);
    st.offsets[k] = off;
    off += dim * dim;
    b.jz = Vec::LinSpaced(dim, -j, j);
    b.Jy = spin_jy(tj);
    b.parity = sector_parity(N, tj);

    const double dj = st.degeneracy[k];
    const double d_below = pi_degeneracy(N - 1, tj - 1);  // parent j - 1/2
    const double d_above = pi_degeneracy(N - 1, tj + 1);  // parent j + 1/2
    // within-sector coefficients m*m'*cw
    double cw = 0.0;
    if (tj > 0 && d_below > 0) cw += d_below / (j * j);
    if (d_above > 0) cw += d_above / ((j + 1.0) * (j + 1.0));
    cw *= N / dj;
    b.within = CMat::Zero(dim, dim);
    for (int r = 0; r < dim; ++r)
      for (int c = 0; c < dim; ++c)
        b.within(r, c) = (r - j) * (c - j) * cw;
    // into j from the smaller sector j-1 (source block k+1)
    if (k + 1 < n_blocks && d_below > 0) {
      const int sdim = dim - 2;  // 2(j-1)+1
      const double f = N * d_below / (dj * j * j);
      Vec u(sdim);
      for (int r = 0; r < sdim; ++r) {
        const double m = r - (j - 1.0);
        u(r) = std::sqrt(j * j - m * m);
      }
      b.from_below = (f * u * u.transpose()).cast<Complex>();
    }
    // into j from the larger sector j+1 (source block k-1)
    if (k >= 1 && d_above > 0) {
      const double f = N * d_above / (dj * (j + 1.0) * (j + 1.0));
      Vec u(dim);
      for (int r = 0; r < dim; ++r) {
        const double m = r - j;
        u(r) = std::sqrt((j + 1.0) * (j + 1.0) - m * m);
      }
      b.from_above = (f * u * u.transpose()).cast<Complex>();
    }
  }
  st.total_size = off;
  return cache.emplace(N, std::move(st)).first->second;
}

CVec pi_flatten(const PIDensity& s) {
  const PIStructure& st = pi_structure(s.N);
  CVec y(st.total_size);
  for (int k = 0; k < s.n_blocks(); ++k) {
    const int dim = s.twice_j(k) + 1;
    Eigen::Map<CMat>(y.data() + st.offsets[k], dim, dim) = s.blocks[k];
  }
  return y;
}

PIDensity pi_unflatten(int N, const CVec& y) {
  const PIStructure& st = pi_structure(N);
  PIDensity s;
  s.N = N;
  s.blocks.resize(st.blocks.size());
  for (size_t k = 0; k < st.blocks.size(); ++k) {
    const int dim = st.blocks[k].twice_j + 1;
    s.blocks[k] =
        Eigen::Map<const CMat>(y.data() + st.offsets[k], dim, dim);
  }
  return s;
}

double pi_trace_flat(int N, const CVec& y) {
  const PIStructure& st = pi_structure(N);
  double tr = 0;
  for (size_t k = 0; k < st.blocks.size(); ++k) {
    const int dim = st.blocks[k].twice_j + 1;
    tr += st.degeneracy[k] *
          Eigen::Map<const CMat>(y.data() + st.offsets[k], dim, dim)
              .trace()
              .real();
  }
  return tr;
}

// ---- adaptive Dormand-Prince 5(4) over flat complex vectors ----

struct Rk45Options {
  double rtol = 1e-10;
  double atol = 1e-13;
  long max_steps = 20000000;
};

// rhs: (const CVec&) -> CVec (autonomous); accept: (const CVec&) -> bool,
// used here for trace-drift step rejection.
template <class Rhs, class Accept>
std::vector<CVec> rk45_integrate(const Rhs& rhs, const CVec& y0,
                                 const Vec& t_grid, const Rk45Options& opt,
                                 const Accept& accept) {
  static const double a21 = 1.0 / 5;
  static const double a31 = 3.0 / 40, a32 = 9.0 / 40;
  static const double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
  static const double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187,
                      a53 = 64448.0 / 6561, a54 = -212.0 / 729;
  static const double a61 = 9017.0 / 3168, a62 = -355.0 / 33,
                      a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                      a65 = -5103.0 / 18656;
  static const double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                      b5 = -2187.0 / 6784, b6 = 11.0 / 84;
  static const double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                      e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

  std::vector<CVec> out;
  out.reserve(t_grid.size());
  CVec y = y0;
  double t = t_grid(0);
  out.push_back(y);
  CVec k1 = rhs(y);
  long steps = 0;
  for (int g = 1; g < t_grid.size(); ++g) {
    const double t_end = t_grid(g);
    double dt = std::min(t_end - t, 0.05);
    while (t < t_end) {
      if (++steps > opt.max_steps)
        throw NumericalError("rk45: step budget exhausted");
      dt = std::min(dt, t_end - t);
      const CVec k2 = rhs(y + dt * (a21 * k1));
      const CVec k3 = rhs(y + dt * (a31 * k1 + a32 * k2));
      const CVec k4 = rhs(y + dt * (a41 * k1 + a42 * k2 + a43 * k3));
      const CVec k5 =
          rhs(y + dt * (a51 * k1 + a52 * k2 + a53 * k3 + a54 * k4));
      const CVec k6 = rhs(y + dt * (a61 * k1 + a62 * k2 + a63 * k3 +
                                    a64 * k4 + a65 * k5));
      const CVec y_new =
          y + dt * (b1 * k1 + b3 * k3 + b4 * k4 + b5 * k5 + b6 * k6);
      const CVec k7 = rhs(y_new);
      const CVec err_v = dt * (e1 * k1 + e3 * k3 + e4 * k4 + e5 * k5 +
                               e6 * k6 + e7 * k7);
      double err = 0;
      for (int i = 0; i < y.size(); ++i) {
        const double scale =
            opt.atol +
            opt.rtol * std::max(std::abs(y(i)), std::abs(y_new(i)));
        const double r = std::abs(err_v(i)) / scale;
        err += r * r;
      }
      err = std::sqrt(err / std::max<int>(1, int(y.size())));
      if (err <= 1.0 && accept(y_new)) {
        t += dt;
        y = y_new;
        k1 = k7;  // FSAL
        const double factor = err > 0 ? 0.9 * std::pow(err, -0.2) : 5.0;
        dt *= std::clamp(factor, 0.2, 5.0);
      } else if (err > 1.0) {
        dt *= std::clamp(0.9 * std::pow(err, -0.2), 0.1, 0.9);
      } else {
        dt *= 0.5;  // invariant (trace-drift) rejection
      }
      if (!(dt > 1e-15))
        throw NumericalError("rk45: step size underflow (rejected steps)");
    }
    out.push_back(y);
  }
  return out;
}

template <class Rhs>
std::vector<CVec> rk4_fixed(const Rhs& rhs, const CVec& y0, const Vec& t_grid,
                            double dt_nominal) {
  std::vector<CVec> out;
  out.reserve(t_grid.size());
  CVec y = y0;
  double t = t_grid(0);
  out.push_back(y);
  for (int g = 1; g < t_grid.size(); ++g) {
    const double t_end = t_grid(g);
    while (t < t_end - 1e-15) {
      const double dt = std::min(dt_nominal, t_end - t);
      const CVec k1 = rhs(y);
      const CVec k2 = rhs(y + 0.5 * dt * k1);
      const CVec k3 = rhs(y + 0.5 * dt * k2);
      const CVec k4 = rhs(y + dt * k3);
      y += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
      t += dt;
    }
    t = t_end;
    out.push_back(y);
  }
  return out;
}

// PI right-hand side acting on the flat layout.
CVec pi_rhs_flat(int N, const CVec& y, double J, double gamma_phi,
                 FieldAxis axis) {
  const PIStructure& st = pi_structure(N);
  CVec dydt(st.total_size);
  const int B = int(st.blocks.size());
  for (int k = 0; k < B; ++k) {
    const PIBlockOps& b = st.blocks[k];
    const int dim = b.twice_j + 1;
    Eigen::Map<const CMat> X(y.data() + st.offsets[k], dim, dim);
    CMat d = CMat::Zero(dim, dim);
    if (J != 0.0) {
      if (axis == FieldAxis::Z) {
        for (int r = 0; r < dim; ++r)
          for (int c = 0; c < dim; ++c)
            d(r, c) = Complex(0, -J * (b.jz(r) - b.jz(c))) * X(r, c);
      } else {
        d.noalias() = Complex(0, -J) * (b.Jy * X - X * b.Jy);
      }
    }
    if (gamma_phi > 0.0) {
      CMat s = b.within.cwiseProduct(X);
      if (k + 1 < B && b.from_below.size() > 0) {
        Eigen::Map<const CMat> Xs(y.data() + st.offsets[k + 1], dim - 2,
                                  dim - 2);
        s.block(1, 1, dim - 2, dim - 2) += b.from_below.cwiseProduct(Xs);
      }
      if (k >= 1 && b.from_above.size() > 0) {
        Eigen::Map<const CMat> Xs(y.data() + st.offsets[k - 1], dim + 2,
                                  dim + 2);
        s += b.from_above.cwiseProduct(Xs.block(1, 1, dim, dim));
      }
      d += (gamma_phi / 4.0) * (s - double(N) * X);
    }
    Eigen::Map<CMat>(dydt.data() + st.offsets[k], dim, dim) = d;
  }
  return dydt;
}

}  // namespace

double pi_degeneracy(int N, int twice_j) {
  if (twice_j < 0 || twice_j > N || (N - twice_j) % 2 != 0) return 0.0;
  const int k = (N - twice_j) / 2;
  const double ratio = (twice_j + 1.0) / ((N + twice_j) / 2 + 1.0);
  return std::exp(log_binom(N, k)) * ratio;
}

double PIDensity::trace() const {
  double tr = 0;
  for (int k = 0; k < n_blocks(); ++k)
    tr += pi_degeneracy(N, twice_j(k)) * blocks[k].trace().real();
  return tr;
}

double PIDensity::purity() const {
  // blocks are Hermitian, so tr(B^2) = ||B||_F^2
  double p = 0;
  for (int k = 0; k < n_blocks(); ++k)
    p += pi_degeneracy(N, twice_j(k)) * blocks[k].squaredNorm();
  return p;
}

void PIDensity::check(double trace_tol, double herm_tol) const {
  if (n_blocks() != N / 2 + 1)
    throw NumericalError("PIDensity: wrong number of blocks");
  for (int k = 0; k < n_blocks(); ++k) {
    const int dim = twice_j(k) + 1;
    if (blocks[k].rows() != dim || blocks[k].cols() != dim)
      throw NumericalError("PIDensity: block dimension mismatch");
    const double herm = (blocks[k] - blocks[k].adjoint()).cwiseAbs().maxCoeff();
    if (herm > herm_tol)
      throw NumericalError("PIDensity: block not Hermitian");
  }
  if (std::abs(trace() - 1.0) > trace_tol)
    throw NumericalError("PIDensity: weighted trace != 1");
}

PIDensity pi_zero(int N) {
  PIDensity s;
  s.N = N;
  for (int k = 0; k <= N / 2; ++k) {
    const int dim = N - 2 * k + 1;
    s.blocks.push_back(CMat::Zero(dim, dim));
  }
  return s;
}

PIDensity embed_symmetric(const CMat& rho) {
  const int N = int(rho.rows()) - 1;
  PIDensity s = pi_zero(N);
  s.blocks[0] = rho;
  return s;
}

CMat extract_symmetric(const PIDensity& state) { return state.blocks.at(0); }

void DephasingConfig::validate() const {
  if (!(gamma_phi_over_J >= 0))
    throw ConfigError("DephasingConfig: gamma_phi_over_J must be >= 0");
  if (t_grid.size() < 1 || t_grid(0) != 0.0)
    throw ConfigError("DephasingConfig: t_grid must start at 0");
  for (int i = 1; i < t_grid.size(); ++i)
    if (!(t_grid(i) > t_grid(i - 1)))
      throw ConfigError("DephasingConfig: t_grid must be strictly increasing");
}

PIDensity pi_rhs(const PIDensity& state, double J, double gamma_phi,
                 FieldAxis axis) {
  return pi_unflatten(
      state.N, pi_rhs_flat(state.N, pi_flatten(state), J, gamma_phi, axis));
}

std::vector<PIDensity> pi_evolve(const PIDensity& state, double J,
                                 double gamma_phi, FieldAxis axis,
                                 const Vec& t_grid, double rtol,
                                 bool fixed_step, double fixed_dt) {
  const int N = state.N;
  const CVec y0 = pi_flatten(state);
  const double tr0 = pi_trace_flat(N, y0);
  auto rhs = [&](const CVec& y) {
    return pi_rhs_flat(N, y, J, gamma_phi, axis);
  };
  std::vector<CVec> ys;
  if (fixed_step) {
    ys = rk4_fixed(rhs, y0, t_grid, fixed_dt);
    for (const CVec& y : ys)
      if (std::abs(pi_trace_flat(N, y) - tr0) > kTraceDrift)
        throw NumericalError("pi_evolve: trace drift beyond 1e-8");
  } else {
    Rk45Options opt;
    opt.rtol = rtol;
    auto accept = [&](const CVec& y) {
      return std::abs(pi_trace_flat(N, y) - tr0) <= kTraceDrift;
    };
    ys = rk45_integrate(rhs, y0, t_grid, opt, accept);
  }
  std::vector<PIDensity> out;
  out.reserve(ys.size());
  for (const CVec& y : ys) out.push_back(pi_unflatten(N, y));
  return out;
}

std::vector<PIDensity> pi_propagate(const PIDensity& state,
                                    const DephasingConfig& cfg) {
  cfg.validate();
  return pi_evolve(state, 1.0, cfg.gamma_phi_over_J, cfg.field_axis,
                   cfg.t_grid, cfg.rtol, cfg.fixed_step, cfg.fixed_dt);
}

double pi_parity_expectation(const PIDensity& state) {
  const PIStructure& st = pi_structure(state.N);
  double e = 0;
  for (int k = 0; k < state.n_blocks(); ++k)
    e += st.degeneracy[k] *
         (st.blocks[k].parity.transpose().cwiseProduct(state.blocks[k]))
             .sum()
             .real();
  return e;
}

std::array<double, 9> pi_case2_moments(const PIDensity& state) {
  std::array<double, 9> m{};
  for (int k = 0; k < state.n_blocks(); ++k) {
    const int tj = state.twice_j(k);
    if (tj == 0) continue;  // spin-0 sector: every collective moment vanishes
    const double d = pi_degeneracy(state.N, tj);
    const std::array<double, 9> mb = case2_moments(state.blocks[k]);
    for (int i = 0; i < 9; ++i) m[i] += d * mb[i];
  }
  return m;
}

std::vector<VariancePoint> variance_timeseries(const CMat& probe,
                                               const SensingTask& task,
                                               const DephasingConfig& cfg) {
  cfg.validate();
  task.validate();
  const double tr = probe.trace().real();
  if (!(tr > 0)) throw NumericalError("variance_timeseries: zero-trace probe");
  PIDensity rho0 = embed_symmetric(probe / tr);
  const double gp = cfg.gamma_phi_over_J;
  std::vector<PIDensity> states = pi_propagate(rho0, cfg);
  std::vector<VariancePoint> out;
  out.reserve(states.size());
  for (int i = 0; i < int(states.size()); ++i) {
    const PIDensity& rho = states[i];
    const PIDensity drho = pi_rhs(rho, 1.0, gp, cfg.field_axis);
    double num = 0, d1 = 0;
    if (task.observable == Observable::ParityX) {
      const double e = pi_parity_expectation(rho);
      num = 1.0 - e * e;  // <P^2> = tr rho = 1
      d1 = pi_parity_expectation(drho);
    } else {
      const std::array<double, 9> m = pi_case2_moments(rho);
      const std::array<double, 9> md = pi_case2_moments(drho);
      num = m[3] - m[0] * m[0];  // <Jz^4> - <Jz^2>^2
      d1 = md[0];                // d<Jz^2>/dt / J
    }
    VariancePoint p;
    p.t = cfg.t_grid(i);
    p.trace = rho.trace();
    p.purity = rho.purity();
    if (!std::isfinite(num) || std::abs(d1) < kDenomFloor) {
      p.variance = kDivergenceCap;
    } else {
      p.variance = std::min(num / (d1 * d1), kDivergenceCap);
    }
    out.push_back(p);
  }
  return out;
}

double ghz_variance_closed_form(int N, double gamma_phi, double J, double t) {
  const double arg = N * J * t + kPi / 2.0;
  const double growth = std::exp(N * gamma_phi * t);
  const double c = std::cos(arg), s = std::sin(arg);
  const double denom = s + (J != 0.0 ? gamma_phi / (2.0 * J) : 0.0) * c;
  return growth / (N * double(N)) * (1.0 - c * c / growth) / (denom * denom);
}

double dicke_variance_closed_form(int N, double gamma_phi, double t,
                                  double Jt) {
  if (N % 2 != 0 || N < 2)
    throw ConfigError("dicke_variance_closed_form: N must be even, >= 2");
  // under D[sigma_z/2] dephasing at rate gamma_phi a computational-basis
  // coherence |x><y| decays at (gamma_phi/2) * hamming(x, y), so the pair
  // terms in <Jx^2> carry e^{-gamma_phi t} (and the 4-site terms its square)
  const double e2 = std::exp(gamma_phi * t);
  const double e4 = e2 * e2;
  const double tn = std::tan(Jt);
  const double num =
      16.0 * e2 * (2.0 * e2 + N) +
      (16.0 * e4 * (N - 1.0) + 16.0 * e2 * N * (N - 2.0) +
       N * (12.0 - 12.0 * N + double(N) * N)) *
          tn * tn;
  const double den = 8.0 * N * (2.0 * e2 + N) * (2.0 * e2 + N);
  return num / den;
}

double dicke_jx2_closed_form(int N, double gamma_phi_t) {
  return (std::exp(-gamma_phi_t) * N * double(N) / 2.0 + N) / 4.0;
}

double pi_dephase_rotate_variance(const CMat& probe, double gamma_phi_t,
                                  double Jt) {
  const double tr = probe.trace().real();
  PIDensity rho = embed_symmetric(probe / tr);
  if (gamma_phi_t > 0) {
    Vec grid(2);
    grid << 0.0, gamma_phi_t;
    rho = pi_evolve(rho, 0.0, 1.0, FieldAxis::Y, grid).back();
  }
  const Case2Scalars s = case2_scalars(pi_case2_moments(rho), Jt);
  const double num = s.E4 - s.E2 * s.E2;
  if (std::abs(s.D1) < kDenomFloor) return kDivergenceCap;
  return std::min(num / (s.D1 * s.D1), kDivergenceCap);
}

// ---- brute-force oracle ----

CMat site_operator(int N, int site, const CMat& op) {
  const long dim = 1L << N;
  CMat out = CMat::Zero(dim, dim);
  const long lo = 1L << site;          // stride of the site bit
  const long hi = dim / (2 * lo);      // configurations of higher bits
  for (long h = 0; h < hi; ++h)
    for (long l = 0; l < lo; ++l)
      for (int s = 0; s < 2; ++s)
        for (int sp = 0; sp < 2; ++sp) {
          const Complex v = op(s, sp);
          if (v != Complex(0, 0))
            out(h * 2 * lo + s * lo + l, h * 2 * lo + sp * lo + l) += v;
        }
  return out;
}

CMat full_field_hamiltonian(int N, FieldAxis axis, double J) {
  const long dim = 1L << N;
  CMat pauli(2, 2);
  if (axis == FieldAxis::Z) {
    // sigma_z = |1><1| - |0><0| with bit value 1 = |1>
    pauli << -1, 0, 0, 1;
  } else {
    // sigma_y = (sigma_+ - sigma_-)/i with sigma_+ = |1><0|:
    // <1|sigma_y|0> = -i, <0|sigma_y|1> = +i.
    pauli << 0, Complex(0, 1), Complex(0, -1), 0;
  }
  CMat H = CMat::Zero(dim, dim);
  for (int i = 0; i < N; ++i) H += site_operator(N, i, pauli);
  return (J / 2.0) * H;
}

std::vector<CMat> full_dephasing_jumps(int N, double gamma_phi) {
  CMat sz(2, 2);
  sz << -1, 0, 0, 1;
  std::vector<CMat> jumps;
  const double w = std::sqrt(gamma_phi) / 2.0;
  for (int i = 0; i < N; ++i) jumps.push_back(w * site_operator(N, i, sz));
  return jumps;
}

std::vector<CMat> brute_force_lindblad(int N, const CMat& H,
                                       const std::vector<CMat>& jump_ops,
                                       const CMat& rho0, const Vec& t_grid,
                                       double rtol) {
  if (N > 8) throw ConfigError("brute_force_lindblad: N must be <= 8");
  const long dim = 1L << N;
  if (rho0.rows() != dim || H.rows() != dim)
    throw ConfigError("brute_force_lindblad: dimension mismatch");
  // Fast path: all jump operators diagonal -> elementwise dissipator.
  bool all_diag = true;
  for (const CMat& A : jump_ops) {
    if ((A - CMat(A.diagonal().asDiagonal())).cwiseAbs().maxCoeff() > 0)
      all_diag = false;
  }
  CMat W = CMat::Zero(dim, dim);
  if (all_diag) {
    for (const CMat& A : jump_ops) {
      const CVec a = A.diagonal();
      for (long x = 0; x < dim; ++x)
        for (long y = 0; y < dim; ++y)
          W(x, y) += a(x) * std::conj(a(y)) -
                     0.5 * (std::norm(a(x)) + std::norm(a(y)));
    }
  }
  auto rhs = [&](const CVec& v) {
    Eigen::Map<const CMat> rho(v.data(), dim, dim);
    CMat d = Complex(0, -1) * (H * rho - rho * H);
    if (all_diag) {
      d += W.cwiseProduct(rho);
    } else {
      for (const CMat& A : jump_ops) {
        const CMat AA = A.adjoint() * A;
        d += A * rho * A.adjoint() - 0.5 * (AA * rho + rho * AA);
      }
    }
    CVec out(dim * dim);
    Eigen::Map<CMat>(out.data(), dim, dim) = d;
    return out;
  };
  CVec y0(dim * dim);
  Eigen::Map<CMat>(y0.data(), dim, dim) = rho0;
  Rk45Options opt;
  opt.rtol = rtol;
  auto accept = [](const CVec&) { return true; };
  std::vector<CVec> ys = rk45_integrate(rhs, y0, t_grid, opt, accept);
  std::vector<CMat> out;
  out.reserve(ys.size());
  for (const CVec& y : ys)
    out.push_back(Eigen::Map<const CMat>(y.data(), dim, dim));
  return out;
}

const SchurBasis& schur_basis(int N) {
  if (N > 8) throw ConfigError("schur_basis: N must be <= 8");
  static std::map<int, SchurBasis> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(N);
  if (it != cache.end()) return it->second;

  // sectors at the current particle count: (twice_j, isometry) pairs
  struct Sector {
    int tj;
    CMat V;  // 2^n x (tj+1), column r is |j, m = r - j>
  };
  std::vector<Sector> cur;
  {
    CMat v(2, 2);
    v << 1, 0, 0, 1;  // |j=1/2, m=-1/2> = |0>, m=+1/2 = |1>
    cur.push_back({1, v});
  }
  for (int n = 2; n <= N; ++n) {
    const long dim = 1L << n;
    const long half = dim / 2;
    std::vector<Sector> next;
    for (const Sector& s : cur) {
      const int tj = s.tj;
      // j + 1/2 child
      {
        CMat V = CMat::Zero(dim, tj + 2);
        for (int rp = 0; rp <= tj + 1; ++rp) {
          if (rp >= 1) {
            const double c = std::sqrt(double(rp) / (tj + 1));
            V.block(half, rp, half, 1) += c * s.V.col(rp - 1);  // ... |1>
          }
          if (rp <= tj) {
            const double c = std::sqrt(double(tj + 1 - rp) / (tj + 1));
            V.block(0, rp, half, 1) += c * s.V.col(rp);  // ... |0>
          }
        }
        next.push_back({tj + 1, V});
      }
      // j - 1/2 child
      if (tj >= 1) {
        CMat V = CMat::Zero(dim, tj);
        for (int rp = 0; rp <= tj - 1; ++rp) {
          const double c1 = std::sqrt(double(tj - rp) / (tj + 1));
          V.block(half, rp, half, 1) += c1 * s.V.col(rp);  // ... |1>
          const double c0 = std::sqrt(double(rp + 1) / (tj + 1));
          V.block(0, rp, half, 1) -= c0 * s.V.col(rp + 1);  // ... |0>
        }
        next.push_back({tj - 1, V});
      }
    }
    cur = std::move(next);
  }
  SchurBasis sb;
  sb.N = N;
  for (int tj = N; tj >= N % 2; tj -= 2) {
    sb.twice_j.push_back(tj);
    std::vector<CMat> copies;
    for (const Sector& s : cur)
      if (s.tj == tj) copies.push_back(s.V);
    sb.isometries.push_back(std::move(copies));
  }
  return cache.emplace(N, std::move(sb)).first->second;
}

CMat pi_to_full(const PIDensity& state) {
  const SchurBasis& sb = schur_basis(state.N);
  const long dim = 1L << state.N;
  CMat rho = CMat::Zero(dim, dim);
  for (size_t k = 0; k < sb.isometries.size(); ++k)
    for (const CMat& V : sb.isometries[k])
      rho += V * state.blocks[k] * V.adjoint();
  return rho;
}

PIDensity full_to_pi(int N, const CMat& rho) {
  const SchurBasis& sb = schur_basis(N);
  PIDensity s = pi_zero(N);
  for (size_t k = 0; k < sb.isometries.size(); ++k) {
    for (const CMat& V : sb.isometries[k])
      s.blocks[k] += V.adjoint() * rho * V;
    s.blocks[k] /= double(sb.isometries[k].size());
  }
  return s;
}

double trace_distance(const CMat& A, const CMat& B) {
  Eigen::SelfAdjointEigenSolver<CMat> es(A - B);
  return 0.5 * es.eigenvalues().cwiseAbs().sum();
}

void write_timeseries_csv(const std::vector<VariancePoint>& series,
                          const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot open for writing: " + path);
  f << "Jt,variance,trace,purity\n";
  f.precision(17);
  for (const VariancePoint& p : series)
    f << p.t << "," << p.variance << "," << p.trace << "," << p.purity << "\n";
}

}  // namespace dickeprobe
