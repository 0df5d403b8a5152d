#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <random>

#include "qmri/bloch.hpp"

using namespace qmri;

namespace {

// Central finite differences of the signal map, the independent oracle for
// the analytic Jacobian.
SignalJacobian fd_jacobian(const TissueParams& u, const PulseSequence& seq, double rel_step) {
  SignalJacobian j(seq.length(), 3);
  const double base[3] = {u.rho, u.t1, u.t2};
  for (int c = 0; c < 3; ++c) {
    const double h = rel_step * std::max(1.0, std::abs(base[c]));
    TissueParams up = u, um = u;
    (c == 0 ? up.rho : c == 1 ? up.t1 : up.t2) += h;
    (c == 0 ? um.rho : c == 1 ? um.t1 : um.t2) -= h;
    j.col(c) = (signal(up, seq) - signal(um, seq)) / (2 * h);
  }
  return j;
}

PulseSequence tiny_sequence(std::vector<double> tr, std::vector<double> flip, double m0) {
  PulseSequence s;
  s.tr = std::move(tr);
  s.flip = std::move(flip);
  s.m0 = m0;
  s.m_eq = 1.0;
  return s;
}

}  // namespace

TEST_CASE("relax_matrix limits and values") {
  CHECK(relax_matrix(1e18, 1e18, 10.0)(2, 2) == Catch::Approx(1.0).margin(1e-12));
  const Eigen::Matrix3d zero = relax_matrix(0.0, 0.0, 10.0);
  CHECK(zero.isZero(0.0));
  // Independent high-precision exponential for exp(-12.5/250).
  const double expect = static_cast<double>(std::exp(-0.05L));
  const Eigen::Matrix3d e = relax_matrix(250.0, 250.0, 12.5);
  for (int i = 0; i < 3; ++i) CHECK(e(i, i) == Catch::Approx(expect).epsilon(1e-14));
  CHECK(e(0, 1) == 0.0);
}

TEST_CASE("relax_offset limits and values") {
  CHECK(relax_offset(0.0, 5.0).isApprox(Eigen::Vector3d(0, 0, 1)));
  CHECK(relax_offset(1e18, 5.0).norm() == Catch::Approx(0.0).margin(1e-12));
  const Eigen::Vector3d b = relax_offset(100.0, 10.0);
  CHECK(b(0) == 0.0);
  CHECK(b(1) == 0.0);
  CHECK(b(2) == Catch::Approx(1.0 - static_cast<double>(std::exp(-0.1L))).epsilon(1e-14));
}

TEST_CASE("rotation is orthogonal and matches the explicit matrix") {
  CHECK(rotation(0.0).isIdentity(1e-15));
  Eigen::Matrix3d half_turn;
  half_turn << 1, 0, 0, 0, -1, 0, 0, 0, -1;
  CHECK(rotation(M_PI).isApprox(half_turn, 1e-12));

  const Eigen::Vector3d v = rotation(M_PI / 2) * Eigen::Vector3d(0, 0, 1);
  CHECK(std::abs(v(0)) < 1e-14);
  CHECK(std::abs(std::abs(v(1)) - 1.0) < 1e-14);
  CHECK(std::abs(v(2)) < 1e-14);

  std::mt19937_64 gen(11);
  std::uniform_real_distribution<double> ang(-10.0, 10.0);
  for (int i = 0; i < 100; ++i) {
    const Eigen::Matrix3d r = rotation(ang(gen));
    CHECK((r.transpose() * r - Eigen::Matrix3d::Identity()).norm() < 1e-14);
  }
}

TEST_CASE("simulate_magnetization: no excitation relaxes toward equilibrium") {
  PulseSequence s = tiny_sequence(std::vector<double>(10, 12.0), std::vector<double>(10, 0.0), 1.0);
  const auto traj = simulate_magnetization(150.0, 80.0, s);
  for (int k = 0; k < traj.length(); ++k) {
    CHECK(traj.m(k, 0) == 0.0);
    CHECK(traj.m(k, 1) == 0.0);
  }
  // z-component approaches m_eq monotonically from m0 = 1 (already there).
  CHECK(traj.m(traj.length() - 1, 2) == Catch::Approx(1.0).epsilon(1e-12));

  s.m0 = -1.0;
  const auto traj2 = simulate_magnetization(150.0, 80.0, s);
  for (int k = 1; k < traj2.length(); ++k) CHECK(traj2.m(k, 2) >= traj2.m(k - 1, 2) - 1e-15);
  // Flip-free recovery follows the closed form m_eq + (m0 - m_eq) e^{-t/T1}.
  const double t_total = 10 * 12.0;
  CHECK(traj2.m(traj2.length() - 1, 2) ==
        Catch::Approx(1.0 - 2.0 * std::exp(-t_total / 150.0)).epsilon(1e-12));
}

TEST_CASE("simulate_magnetization: instant relaxation limit") {
  PulseSequence s = tiny_sequence({10, 11, 12}, {1.0, 0.5, 2.0}, -1.0);
  const auto traj = simulate_magnetization(0.0, 0.0, s);
  for (int k = 0; k < traj.length(); ++k) {
    CHECK(traj.m(k, 0) == 0.0);
    CHECK(traj.m(k, 1) == 0.0);
    CHECK(traj.m(k, 2) == 1.0);
  }
}

TEST_CASE("simulate_magnetization matches a hand-unrolled two-step recursion") {
  // L=2, alpha=(pi/2, pi/2), TR=(10,10), T1=100, T2=50, m0=1.
  PulseSequence s = tiny_sequence({10, 10}, {M_PI / 2, M_PI / 2}, 1.0);
  const auto traj = simulate_magnetization(100.0, 50.0, s);

  const double e1 = std::exp(-10.0 / 100.0), e2 = std::exp(-10.0 / 50.0);
  // R(pi/2) about x maps (x,y,z) -> (x,-z,y) for the row convention used.
  // Step 1 from (0,0,1): rotate -> (0,-1,0); relax -> (0,-e2,1-e1).
  const Eigen::Vector3d m1(0.0, -e2, 1.0 - e1);
  CHECK(traj.m.row(0).transpose().isApprox(m1, 1e-14));
  // Step 2: rotate m1 -> (0, -(1-e1), -e2); relax.
  const Eigen::Vector3d m2(0.0, -e2 * (1.0 - e1), -e1 * e2 + (1.0 - e1));
  CHECK(traj.m.row(1).transpose().isApprox(m2, 1e-14));
}

TEST_CASE("signal is rho times the transverse trajectory") {
  const auto seq = make_default_sequence(20, 3);
  CHECK(signal({0.0, 120.0, 60.0}, seq).norm() == 0.0);

  const SignalVector s1 = signal({1.0, 120.0, 60.0}, seq);
  const SignalVector s2 = signal({2.0, 120.0, 60.0}, seq);
  CHECK((s2 - 2.0 * s1).norm() < 1e-14 * s1.norm());

  std::mt19937_64 gen(5);
  std::uniform_real_distribution<double> rho(0.0, 110.0), t(1.0, 250.0);
  for (int i = 0; i < 20; ++i) {
    const TissueParams u{rho(gen), t(gen), t(gen)};
    const auto traj = simulate_magnetization(u.t1, u.t2, seq);
    const SignalVector s = signal(u, seq);
    for (int k = 0; k < seq.length(); ++k) {
      CHECK(s(k).real() == Catch::Approx(u.rho * traj.m(k, 0)).margin(1e-13));
      CHECK(s(k).imag() == Catch::Approx(u.rho * traj.m(k, 1)).margin(1e-13));
    }
  }
}

TEST_CASE("signal_jacobian: product structure at rho = 0") {
  const auto seq = make_default_sequence(15, 9);
  const TissueParams u{0.0, 140.0, 70.0};
  const SignalJacobian j = signal_jacobian(u, seq);
  CHECK(j.col(1).norm() == 0.0);
  CHECK(j.col(2).norm() == 0.0);
  const auto traj = simulate_magnetization(u.t1, u.t2, seq);
  for (int k = 0; k < seq.length(); ++k) {
    CHECK(j(k, 0).real() == Catch::Approx(traj.m(k, 0)).margin(1e-14));
    CHECK(j(k, 0).imag() == Catch::Approx(traj.m(k, 1)).margin(1e-14));
  }
}

TEST_CASE("signal_jacobian agrees with central differences at interior points") {
  const auto seq = make_default_sequence(25, 17);
  std::mt19937_64 gen(23);
  std::uniform_real_distribution<double> rho(0.5, 100.0), t(20.0, 280.0);
  for (int i = 0; i < 200; ++i) {
    const TissueParams u{rho(gen), t(gen), t(gen)};
    const SignalJacobian ja = signal_jacobian(u, seq);
    const SignalJacobian jf = fd_jacobian(u, seq, 1e-4);
    CHECK((ja - jf).norm() / ja.norm() < 1e-6);
  }
}

TEST_CASE("signal_jacobian at the T = 0 boundary matches one-sided differences") {
  const auto seq = make_default_sequence(12, 31);
  for (const TissueParams u : {TissueParams{50.0, 0.0, 80.0}, TissueParams{50.0, 120.0, 0.0},
                               TissueParams{50.0, 0.0, 0.0}}) {
    const SignalJacobian ja = signal_jacobian(u, seq);
    const double h = 1e-4;
    for (int c = 1; c < 3; ++c) {
      TissueParams up = u;
      (c == 1 ? up.t1 : up.t2) += h;
      const Eigen::VectorXcd fd = (signal(up, seq) - signal(u, seq)) / h;
      CHECK((ja.col(c) - fd).norm() < 1e-4);
    }
  }
}

TEST_CASE("trajectory and derivative stay bounded over random draws") {
  std::mt19937_64 gen(41);
  std::uniform_real_distribution<double> t(0.0, 300.0);
  for (std::uint64_t sseed : {100ull, 200ull, 300ull}) {
    const auto seq = make_default_sequence(20, sseed);
    const int L = seq.length();
    double min_tr = 1e9;
    for (double tr : seq.tr) min_tr = std::min(min_tr, tr);
    // ||E'|| <= max_t (tr/t^2) e^{-tr/t} = 4 e^{-2} / tr.
    const double max_deriv_coeff = 4.0 * std::exp(-2.0) / min_tr;
    const double c_m = std::abs(seq.m0) + L;  // |m0| + sum ||b_k||
    const double c_d = L * (max_deriv_coeff * c_m + max_deriv_coeff * seq.m_eq);
    for (int i = 0; i < 3400; ++i) {
      const double t1 = t(gen), t2 = t(gen);
      const auto sw = detail::sweep_with_derivatives(t1, t2, seq);
      double bound_m = std::abs(seq.m0);
      for (int k = 0; k < L; ++k)
        bound_m = std::max(bound_m, std::abs(seq.m0) +
                                        L * std::abs(1.0 - relax_decay(t1, seq.tr[size_t(k)])));
      for (int k = 0; k < L; ++k) {
        CHECK(sw.m.row(k).norm() <= bound_m + 1e-12);
        CHECK(sw.m.row(k).norm() <= c_m + 1e-12);
        CHECK(sw.d1.row(k).norm() <= c_d + 1e-12);
        CHECK(sw.d2.row(k).norm() <= c_d + 1e-12);
      }
    }
  }
}

TEST_CASE("pointwise map is Lipschitz with a stable empirical constant") {
  const auto seq = make_default_sequence(20, 7);
  const double b = 110.0;
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<double> rho(-b, b), t(0.0, 300.0), dir(-1.0, 1.0);

  const auto ratio = [&](const TissueParams& a, const TissueParams& c) {
    const Eigen::Vector3d du(a.rho - c.rho, a.t1 - c.t1, a.t2 - c.t2);
    if (du.norm() == 0) return 0.0;
    return (signal(a, seq) - signal(c, seq)).norm() / du.norm();
  };

  double lhat = 0;
  for (int i = 0; i < 2000; ++i)
    lhat = std::max(lhat, ratio({rho(gen), t(gen), t(gen)}, {rho(gen), t(gen), t(gen)}));
  lhat *= 1.5;

  for (int i = 0; i < 500; ++i)
    CHECK(ratio({rho(gen), t(gen), t(gen)}, {rho(gen), t(gen), t(gen)}) <= lhat);

  // Ratios do not diverge as the pair distance shrinks.
  for (int i = 0; i < 50; ++i) {
    const TissueParams u{rho(gen), t(gen), t(gen)};
    Eigen::Vector3d d(dir(gen), dir(gen), dir(gen));
    d.normalize();
    for (double eps = 1e-1; eps >= 1e-8; eps *= 0.1) {
      const TissueParams v{u.rho + eps * d(0), u.t1 + eps * d(1), u.t2 + eps * d(2)};
      CHECK(ratio(u, v) <= lhat);
    }
  }
}

TEST_CASE("relaxation maps extend continuously to T = 0") {
  for (double tr : {5.0, 12.5}) {
    double prev_gap_e = 1e300, prev_gap_b = 1e300;
    for (double t = 1e-1; t >= 1e-9; t *= 0.1) {
      const double gap_e = (relax_matrix(t, t, tr) - relax_matrix(0, 0, tr)).norm();
      const double gap_b = (relax_offset(t, tr) - relax_offset(0, tr)).norm();
      CHECK(gap_e <= prev_gap_e + 1e-15);
      CHECK(gap_b <= prev_gap_b + 1e-15);
      prev_gap_e = gap_e;
      prev_gap_b = gap_b;
    }
    CHECK((relax_matrix(1e-9, 1e-9, tr) - relax_matrix(0, 0, tr)).norm() < 1e-12);
    CHECK((relax_offset(1e-9, tr) - relax_offset(0, tr)).norm() < 1e-12);
  }
}

TEST_CASE("pulse sequence round-trips through the key-value format") {
  const PulseSequence s = make_default_sequence(17, 99);
  ConfigWriter w;
  sequence_to_config(s, w);
  const KeyValueConfig cfg = KeyValueConfig::from_string(w.str());
  const PulseSequence r = sequence_from_config(cfg);
  cfg.check_all_consumed();
  REQUIRE(r.length() == s.length());
  for (int k = 0; k < s.length(); ++k) {
    CHECK(r.tr[size_t(k)] == Catch::Approx(s.tr[size_t(k)]).epsilon(1e-15));
    CHECK(r.flip[size_t(k)] == Catch::Approx(s.flip[size_t(k)]).epsilon(1e-12));
  }
  CHECK(r.m0 == s.m0);
  CHECK(r.m_eq == s.m_eq);

  // Generator-only config reproduces the same train from the seed.
  const KeyValueConfig cfg2 = KeyValueConfig::from_string("L = 17\nseed = 99\n");
  const PulseSequence g = sequence_from_config(cfg2);
  CHECK(g.tr == s.tr);
  CHECK(g.flip == s.flip);
}
