#pragma once
#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <cstdint>
#include <random>
#include <vector>

#include "qmri/config.hpp"
#include "qmri/errors.hpp"

namespace qmri {

// Time-discrete Bloch dynamics for an IR-SSFP style pulse train:
//
//   m_k = E(T, TR_k) * R(alpha_k) * m_{k-1} + b(T, TR_k),   m_0 = (0,0,m0)
//
// Convention: m_k is the magnetization state. After the k-th RF pulse and
// the subsequent relaxation over TR_k, for k = 1..L. The relaxation maps
// extend smoothly to T1 = 0 or T2 = 0 by their limits (exp(-TR/0+) := 0);
// negative relaxation times are projected to 0 before evaluation.

struct TissueParams {
  double rho = 0;  // relative proton density, dimensionless
  double t1 = 0;   // longitudinal relaxation time, ms
  double t2 = 0;   // transverse relaxation time, ms
};

struct PulseSequence {
  std::vector<double> tr;    // repetition times TR_k > 0, ms
  std::vector<double> flip;  // flip angles alpha_k, radians
  double m0 = -1.0;          // initial longitudinal magnetization (post-inversion start)
  double m_eq = 1.0;         // equilibrium magnetization
  std::uint64_t seed = 0;    // generator seed (0 when the arrays were given explicitly)

  int length() const { return static_cast<int>(tr.size()); }

  void validate() const {
    if (tr.size() != flip.size()) throw ConfigError("pulse sequence: len(tr) != len(flip)");
    if (tr.empty()) throw ConfigError("pulse sequence: empty");
    for (double t : tr)
      if (!(t > 0)) throw ConfigError("pulse sequence: repetition times must be > 0");
  }
};

// Default fingerprinting train: an inversion pulse followed by pseudo-random
// flip angles in [10, 70] degrees and repetition times in [11, 16] ms.
inline PulseSequence make_default_sequence(int L, std::uint64_t seed) {
  if (L < 1) throw ConfigError("pulse sequence length must be >= 1");
  PulseSequence s;
  s.seed = seed;
  s.tr.resize(static_cast<size_t>(L));
  s.flip.resize(static_cast<size_t>(L));
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> flip_deg(10.0, 70.0);
  std::uniform_real_distribution<double> tr_ms(11.0, 16.0);
  const double deg = M_PI / 180.0;
  for (int k = 0; k < L; ++k) {
    s.flip[static_cast<size_t>(k)] = (k == 0) ? M_PI : flip_deg(gen) * deg;
    s.tr[static_cast<size_t>(k)] = tr_ms(gen);
  }
  return s;
}

// Key-value (de)serialization; keys: L, tr, flip_deg, m0, m_eq, seed.
// When explicit tr/flip_deg arrays are absent they are generated from seed.
inline PulseSequence sequence_from_config(const KeyValueConfig& cfg, const std::string& prefix = "") {
  const int L = static_cast<int>(cfg.get_int(prefix + "L", 20));
  const std::uint64_t seed = cfg.get_u64(prefix + "seed", 0);
  std::vector<double> tr = cfg.get_doubles(prefix + "tr", {});
  std::vector<double> flip_deg = cfg.get_doubles(prefix + "flip_deg", {});
  PulseSequence s;
  if (tr.empty() && flip_deg.empty()) {
    s = make_default_sequence(L, seed);
  } else {
    if (static_cast<int>(tr.size()) != L || static_cast<int>(flip_deg.size()) != L)
      throw ConfigError("pulse sequence: tr and flip_deg must both have L entries");
    s.tr = tr;
    s.seed = seed;
    s.flip.resize(flip_deg.size());
    for (size_t i = 0; i < flip_deg.size(); ++i) s.flip[i] = flip_deg[i] * M_PI / 180.0;
  }
  s.m0 = cfg.get_double(prefix + "m0", -1.0);
  s.m_eq = cfg.get_double(prefix + "m_eq", 1.0);
  s.validate();
  return s;
}

inline void sequence_to_config(const PulseSequence& s, ConfigWriter& w, const std::string& prefix = "") {
  w.set(prefix + "L", s.length());
  w.set(prefix + "seed", s.seed);
  w.set(prefix + "m0", s.m0);
  w.set(prefix + "m_eq", s.m_eq);
  w.set(prefix + "tr", s.tr);
  std::vector<double> flip_deg(s.flip.size());
  for (size_t i = 0; i < s.flip.size(); ++i) flip_deg[i] = s.flip[i] * 180.0 / M_PI;
  w.set(prefix + "flip_deg", flip_deg);
}

// exp(-tr/t) extended by its limit 0 at t <= 0.
inline double relax_decay(double t, double tr) {
  return t > 0 ? std::exp(-tr / t) : 0.0;
}

// d/dt exp(-tr/t) = exp(-tr/t) * tr / t^2, extended by its limit 0 at t <= 0.
inline double relax_decay_dt(double t, double tr) {
  return t > 0 ? std::exp(-tr / t) * tr / (t * t) : 0.0;
}

// E(T, tr) = diag(e^{-tr/T2}, e^{-tr/T2}, e^{-tr/T1}).
inline Eigen::Matrix3d relax_matrix(double t1, double t2, double tr) {
  const double e2 = relax_decay(t2, tr);
  const double e1 = relax_decay(t1, tr);
  Eigen::Matrix3d e = Eigen::Matrix3d::Zero();
  e(0, 0) = e2;
  e(1, 1) = e2;
  e(2, 2) = e1;
  return e;
}

// b(T, tr) = (1 - e^{-tr/T1}) * (0,0,1)^T.
inline Eigen::Vector3d relax_offset(double t1, double tr) {
  return {0.0, 0.0, 1.0 - relax_decay(t1, tr)};
}

// The paper leaves the RF rotation axis open; we rotate about x
// (the usual IR-SSFP convention). Y is kept for experimentation.
enum class RotationAxis { x, y };
inline constexpr RotationAxis kRfAxis = RotationAxis::x;

inline Eigen::Matrix3d rotation(double alpha, RotationAxis axis = kRfAxis) {
  const double c = std::cos(alpha), s = std::sin(alpha);
  Eigen::Matrix3d r;
  if (axis == RotationAxis::x) {
    r << 1, 0, 0,
         0, c, -s,
         0, s, c;
  } else {
    r << c, 0, s,
         0, 1, 0,
         -s, 0, c;
  }
  return r;
}

struct MagnetizationTrajectory {
  Eigen::Matrix<double, Eigen::Dynamic, 3> m;  // row k-1 holds m_k
  int length() const { return static_cast<int>(m.rows()); }
};

inline MagnetizationTrajectory simulate_magnetization(double t1, double t2, const PulseSequence& seq) {
  seq.validate();
  const int L = seq.length();
  MagnetizationTrajectory traj;
  traj.m.resize(L, 3);
  Eigen::Vector3d m(0.0, 0.0, seq.m0);
  const double t1c = std::max(t1, 0.0), t2c = std::max(t2, 0.0);
  for (int k = 0; k < L; ++k) {
    const double tr = seq.tr[static_cast<size_t>(k)];
    const Eigen::Vector3d rm = rotation(seq.flip[static_cast<size_t>(k)]) * m;
    const double e2 = relax_decay(t2c, tr);
    const double e1 = relax_decay(t1c, tr);
    m(0) = e2 * rm(0);
    m(1) = e2 * rm(1);
    m(2) = e1 * rm(2) + seq.m_eq * (1.0 - e1);
    traj.m.row(k) = m.transpose();
  }
  return traj;
}

using SignalVector = Eigen::VectorXcd;
using SignalJacobian = Eigen::Matrix<std::complex<double>, Eigen::Dynamic, 3>;

// Pointwise signal map: pi(u)_k = rho * (m_k1 + i m_k2).
inline SignalVector signal(const TissueParams& u, const PulseSequence& seq) {
  const MagnetizationTrajectory traj = simulate_magnetization(u.t1, u.t2, seq);
  SignalVector s(traj.length());
  for (int k = 0; k < traj.length(); ++k)
    s(k) = u.rho * std::complex<double>(traj.m(k, 0), traj.m(k, 1));
  return s;
}

namespace detail {

// One forward sweep carrying (m, dm/dT1, dm/dT2). The derivative recursion
// is the chain/sum rule applied to m_k = E R m_{k-1} + b:
//   m'_k[h] = E'[h] R m_{k-1} + E R m'_{k-1}[h] + b'[h].
struct BlochSweep {
  Eigen::Matrix<double, Eigen::Dynamic, 3> m, d1, d2;
};

inline BlochSweep sweep_with_derivatives(double t1, double t2, const PulseSequence& seq) {
  const int L = seq.length();
  BlochSweep out;
  out.m.resize(L, 3);
  out.d1.resize(L, 3);
  out.d2.resize(L, 3);
  const double t1c = std::max(t1, 0.0), t2c = std::max(t2, 0.0);
  Eigen::Vector3d m(0.0, 0.0, seq.m0);
  Eigen::Vector3d m1 = Eigen::Vector3d::Zero();  // dm/dT1
  Eigen::Vector3d m2 = Eigen::Vector3d::Zero();  // dm/dT2
  for (int k = 0; k < L; ++k) {
    const double tr = seq.tr[static_cast<size_t>(k)];
    const Eigen::Matrix3d r = rotation(seq.flip[static_cast<size_t>(k)]);
    const Eigen::Vector3d rm = r * m;
    const Eigen::Vector3d rm1 = r * m1;
    const Eigen::Vector3d rm2 = r * m2;
    const double e1 = relax_decay(t1c, tr);
    const double e2 = relax_decay(t2c, tr);
    const double de1 = relax_decay_dt(t1c, tr);
    const double de2 = relax_decay_dt(t2c, tr);
    // dE/dT1 = diag(0,0,de1), dE/dT2 = diag(de2,de2,0), db/dT1 = (0,0,-de1).
    m1 = Eigen::Vector3d(e2 * rm1(0), e2 * rm1(1),
                         de1 * rm(2) + e1 * rm1(2) - seq.m_eq * de1);
    m2 = Eigen::Vector3d(de2 * rm(0) + e2 * rm2(0), de2 * rm(1) + e2 * rm2(1), e1 * rm2(2));
    m = Eigen::Vector3d(e2 * rm(0), e2 * rm(1), e1 * rm(2) + seq.m_eq * (1.0 - e1));
    out.m.row(k) = m.transpose();
    out.d1.row(k) = m1.transpose();
    out.d2.row(k) = m2.transpose();
  }
  return out;
}

}  // namespace detail

// Analytic Jacobian of pi, columns (d/drho, d/dT1, d/dT2). At T1 = 0 or
// T2 = 0 the derivative is the smooth-extension limit 0.
inline SignalJacobian signal_jacobian(const TissueParams& u, const PulseSequence& seq) {
  seq.validate();
  const auto sw = detail::sweep_with_derivatives(u.t1, u.t2, seq);
  const int L = seq.length();
  SignalJacobian j(L, 3);
  for (int k = 0; k < L; ++k) {
    j(k, 0) = std::complex<double>(sw.m(k, 0), sw.m(k, 1));
    j(k, 1) = u.rho * std::complex<double>(sw.d1(k, 0), sw.d1(k, 1));
    j(k, 2) = u.rho * std::complex<double>(sw.d2(k, 0), sw.d2(k, 1));
  }
  return j;
}

// Signal and Jacobian from a single sweep; the per-pixel hot path.
inline void signal_with_jacobian(const TissueParams& u, const PulseSequence& seq,
                                 SignalVector& s, SignalJacobian& j) {
  const auto sw = detail::sweep_with_derivatives(u.t1, u.t2, seq);
  const int L = seq.length();
  s.resize(L);
  j.resize(L, 3);
  for (int k = 0; k < L; ++k) {
    const std::complex<double> m12(sw.m(k, 0), sw.m(k, 1));
    s(k) = u.rho * m12;
    j(k, 0) = m12;
    j(k, 1) = u.rho * std::complex<double>(sw.d1(k, 0), sw.d1(k, 1));
    j(k, 2) = u.rho * std::complex<double>(sw.d2(k, 0), sw.d2(k, 1));
  }
}

// Real part of J^H J: the 3x3 per-pixel normal matrix used by the
// Levenberg-Marquardt Hessian surrogate.
inline Eigen::Matrix3d normal_matrix(const SignalJacobian& j) {
  Eigen::Matrix3d n;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      n(a, b) = (j.col(a).conjugate().cwiseProduct(j.col(b))).sum().real();
  return n;
}

}  // namespace qmri
