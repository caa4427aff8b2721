#include "dickeprobe/basis.hpp"

#include <cmath>
#include <map>
#include <mutex>

namespace dickeprobe {

namespace {

// Cached spectral decomposition of Jy, keyed by N.  Rotations about y are
// the only non-diagonal exponentials we need, and every protocol step uses
// one, so this is worth caching.
struct JyEigen {
  Vec evals;
  CMat evecs;
};

const JyEigen& jy_eigen(int N) {
  static std::map<int, JyEigen> cache;
  static std::mutex mu;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(N);
  if (it != cache.end()) return it->second;
  CollectiveOperators ops = build_collective_operators(N);
  Eigen::SelfAdjointEigenSolver<CMat> es(ops.Jy);
  JyEigen je;
  je.evals = es.eigenvalues();
  je.evecs = es.eigenvectors();
  return cache.emplace(N, std::move(je)).first->second;
}

}  // namespace

CollectiveOperators build_collective_operators(int N) {
  if (N < 1) throw ConfigError("build_collective_operators: N must be >= 1");
  const int d = N + 1;
  CollectiveOperators ops;
  ops.N = N;
  ops.Jx = CMat::Zero(d, d);
  ops.Jy = CMat::Zero(d, d);
  ops.Jz = CMat::Zero(d, d);
  for (int n = 0; n < d; ++n) {
    ops.Jz(n, n) = n - 0.5 * N;
    if (n + 1 < d) {
      // J+ |D_n> = sqrt((N-n)(n+1)) |D_{n+1}>
      const double jp = std::sqrt(double(N - n) * double(n + 1));
      ops.Jx(n + 1, n) += 0.5 * jp;
      ops.Jx(n, n + 1) += 0.5 * jp;
      ops.Jy(n + 1, n) += Complex(0.0, -0.5) * jp;
      ops.Jy(n, n + 1) += Complex(0.0, 0.5) * jp;
    }
  }
  ops.J2 = ops.Jx * ops.Jx + ops.Jy * ops.Jy + ops.Jz * ops.Jz;
  return ops;
}

CMat rotation_y(int N, double theta) {
  const JyEigen& je = jy_eigen(N);
  const int d = N + 1;
  CVec ph(d);
  for (int k = 0; k < d; ++k)
    ph(k) = std::exp(Complex(0.0, -theta * je.evals(k)));
  return je.evecs * ph.asDiagonal() * je.evecs.adjoint();
}

CMat euler_rotation(int N, double alpha, double beta, double gamma) {
  const int d = N + 1;
  CVec za(d), zg(d);
  for (int n = 0; n < d; ++n) {
    const double m = n - 0.5 * N;
    za(n) = std::exp(Complex(0.0, -alpha * m));
    zg(n) = std::exp(Complex(0.0, -gamma * m));
  }
  return za.asDiagonal() * rotation_y(N, beta) * CMat(zg.asDiagonal());
}

CMat parity_x(int N) {
  const int d = N + 1;
  CMat P = CMat::Zero(d, d);
  for (int n = 0; n < d; ++n) P(N - n, n) = 1.0;
  return P;
}

CVec dicke_state(int N, int n) {
  if (n < 0 || n > N) throw ConfigError("dicke_state: n out of range");
  CVec v = CVec::Zero(N + 1);
  v(n) = 1.0;
  return v;
}

CVec ghz_state(int N) {
  CVec v = CVec::Zero(N + 1);
  v(0) = v(N) = 1.0 / std::sqrt(2.0);
  return v;
}

CVec spin_coherent_state(int N, double theta, double phi) {
  // <D_n|theta,phi> = exp(-i*phi*(n-N/2)) * sqrt(C(N,n)) c^n s^(N-n),
  // c = cos(theta/2), s = sin(theta/2).  Log-space magnitudes keep the
  // binomial factors finite for large N.
  const double c = std::cos(0.5 * theta);
  const double s = std::sin(0.5 * theta);
  CVec v(N + 1);
  for (int n = 0; n <= N; ++n) {
    double logmag = 0.5 * (std::lgamma(N + 1.0) - std::lgamma(n + 1.0) -
                           std::lgamma(N - n + 1.0));
    double sign = 1.0;
    if (c != 0.0) {
      logmag += n * std::log(std::abs(c));
      if (c < 0.0 && (n % 2)) sign = -sign;
    } else if (n > 0) {
      v(n) = 0.0;
      continue;
    }
    if (s != 0.0) {
      logmag += (N - n) * std::log(std::abs(s));
      if (s < 0.0 && ((N - n) % 2)) sign = -sign;
    } else if (N - n > 0) {
      v(n) = 0.0;
      continue;
    }
    const double m = n - 0.5 * N;
    v(n) = sign * std::exp(logmag) * std::exp(Complex(0.0, -phi * m));
  }
  return v;
}

QFuncGrid husimi_q(const CMat& rho, int n_theta, int n_phi) {
  const int N = int(rho.rows()) - 1;
  if (N < 1 || rho.cols() != rho.rows())
    throw ConfigError("husimi_q: rho must be square with dim >= 2");
  if (n_theta < 2 || n_phi < 1)
    throw ConfigError("husimi_q: grid must be at least 2x1");
  QFuncGrid g;
  g.thetas = Vec::LinSpaced(n_theta, 0.0, kPi);
  g.phis = Vec::LinSpaced(n_phi, 0.0, 2.0 * kPi * (n_phi - 1.0) / n_phi);
  g.values = Mat::Zero(n_theta, n_phi);
  for (int it = 0; it < n_theta; ++it) {
    for (int ip = 0; ip < n_phi; ++ip) {
      CVec v = spin_coherent_state(N, g.thetas(it), g.phis(ip));
      g.values(it, ip) = std::real(v.dot(rho * v));
    }
  }
  return g;
}

}  // namespace dickeprobe
