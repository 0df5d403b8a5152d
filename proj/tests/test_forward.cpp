#include <catch2/catch_amalgamated.hpp>
#include <complex>
#include <random>

#include "qmri/data.hpp"
#include "qmri/forward.hpp"

using namespace qmri;

namespace {

std::mt19937_64 rng(2024);

CImage random_cimage(Eigen::Index n1, Eigen::Index n2) {
  std::normal_distribution<double> g;
  CImage x(n1, n2);
  for (Eigen::Index j = 0; j < n2; ++j)
    for (Eigen::Index i = 0; i < n1; ++i) x(i, j) = {g(rng), g(rng)};
  return x;
}

ComplexVolume random_volume(Eigen::Index n1, Eigen::Index n2, int L) {
  ComplexVolume v(n1, n2, L);
  for (int l = 0; l < L; ++l) v.slice[size_t(l)] = random_cimage(n1, n2);
  return v;
}

Image random_image(Eigen::Index n1, Eigen::Index n2) {
  std::normal_distribution<double> g;
  Image x(n1, n2);
  for (Eigen::Index j = 0; j < n2; ++j)
    for (Eigen::Index i = 0; i < n1; ++i) x(i, j) = g(rng);
  return x;
}

ParameterImage random_params(Eigen::Index n1, Eigen::Index n2) {
  std::uniform_real_distribution<double> rho(5.0, 100.0), t(20.0, 280.0);
  ParameterImage u(n1, n2);
  for (Eigen::Index j = 0; j < n2; ++j)
    for (Eigen::Index i = 0; i < n1; ++i) {
      u[0](i, j) = rho(rng);
      u[1](i, j) = t(rng);
      u[2](i, j) = t(rng);
    }
  return u;
}

ParameterImage random_direction(Eigen::Index n1, Eigen::Index n2) {
  std::normal_distribution<double> g;
  ParameterImage h(n1, n2);
  for (int c = 0; c < 3; ++c)
    for (Eigen::Index j = 0; j < n2; ++j)
      for (Eigen::Index i = 0; i < n1; ++i) h[c](i, j) = g(rng);
  return h;
}

// Quadratic-time orthonormal DFT, the independent oracle for fft2.
CImage naive_dft(const CImage& x) {
  const Eigen::Index n1 = x.rows(), n2 = x.cols();
  CImage out(n1, n2);
  const std::complex<double> i2pi(0.0, -2.0 * M_PI);
  for (Eigen::Index p = 0; p < n1; ++p)
    for (Eigen::Index q = 0; q < n2; ++q) {
      std::complex<double> s = 0;
      for (Eigen::Index a = 0; a < n1; ++a)
        for (Eigen::Index b = 0; b < n2; ++b)
          s += x(a, b) * std::exp(i2pi * (double(p * a) / double(n1) + double(q * b) / double(n2)));
      out(p, q) = s / std::sqrt(double(n1 * n2));
    }
  return out;
}

}  // namespace

TEST_CASE("apply_A matches the quadratic-time DFT oracle") {
  const Eigen::Index n = 8;
  const auto masks = SamplingMaskSet::full(n, n, 2);
  const ComplexVolume y = random_volume(n, n, 2);
  const KSpaceData f = apply_A(y, masks);
  for (int l = 0; l < 2; ++l) {
    const CImage oracle = naive_dft(y.slice[size_t(l)]);
    CHECK((f.data.slice[size_t(l)] - oracle).abs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("apply_A trivia: DC concentration and zero masks") {
  const Eigen::Index n = 8;
  ComplexVolume y(n, n, 1);
  y.slice[0].setConstant(2.0);
  const KSpaceData f = apply_A(y, SamplingMaskSet::full(n, n, 1));
  CHECK(std::abs(f.data.slice[0](0, 0) - 2.0 * std::sqrt(64.0)) < 1e-12);
  CImage rest = f.data.slice[0];
  rest(0, 0) = 0;
  CHECK(rest.abs().maxCoeff() < 1e-12);

  SamplingMaskSet zero = SamplingMaskSet::full(n, n, 1);
  zero.mask[0].setZero();
  CHECK(squared_norm(apply_A(y, zero).data) == 0.0);

  ComplexVolume bad(n, n - 1, 1);
  CHECK_THROWS_AS(apply_A(bad, zero), ConfigError);
}

TEST_CASE("A and A* satisfy the inner-product identity") {
  const Eigen::Index n = 8;
  for (int rep = 0; rep < 20; ++rep) {
    SamplingMaskSet masks = make_masks(n, n, 3, 2, rep);
    const ComplexVolume y = random_volume(n, n, 3);
    KSpaceData f;
    f.masks = masks;
    f.data = random_volume(n, n, 3);
    const std::complex<double> lhs = cdot(apply_A(y, masks).data, f.data);
    const std::complex<double> rhs = cdot(y, apply_A_adjoint(f));
    CHECK(std::abs(lhs - rhs) < 1e-12 * (1.0 + std::abs(lhs)));
  }
}

TEST_CASE("full mask makes A unitary; empty mask annihilates") {
  const Eigen::Index n = 8;
  const auto masks = SamplingMaskSet::full(n, n, 2);
  const ComplexVolume y = random_volume(n, n, 2);
  const ComplexVolume back = apply_A_adjoint(apply_A(y, masks));
  for (int l = 0; l < 2; ++l)
    CHECK((back.slice[size_t(l)] - y.slice[size_t(l)]).abs().maxCoeff() < 1e-12);

  KSpaceData f;
  f.masks = masks;
  f.masks.mask[0].setZero();
  f.masks.mask[1].setZero();
  f.data = random_volume(n, n, 2);
  CHECK(squared_norm(apply_A_adjoint(f)) == 0.0);
}

TEST_CASE("Parseval: ||A y|| <= ||y|| with equality only under full sampling") {
  const Eigen::Index n = 8;
  const ComplexVolume y = random_volume(n, n, 2);
  CHECK(std::abs(squared_norm(apply_A(y, SamplingMaskSet::full(n, n, 2)).data) -
                 squared_norm(y)) < 1e-10);
  const auto masks = make_masks(n, n, 2, 2, 0);
  CHECK(squared_norm(apply_A(y, masks).data) < squared_norm(y) - 1e-6);
}

TEST_CASE("patch_extract: p = 1 flattens, constants stay constant") {
  const Image x = random_image(4, 5);
  const Eigen::MatrixXd p1 = patch_extract(x, PatchConfig{1});
  REQUIRE(p1.rows() == 1);
  REQUIRE(p1.cols() == 20);
  for (Eigen::Index c = 0; c < 20; ++c) CHECK(p1(0, c) == x(c % 4, c / 4));

  Image cimg(4, 4);
  cimg.setConstant(3.25);
  const Eigen::MatrixXd pc = patch_extract(cimg, PatchConfig{2});
  CHECK((pc.array() == 3.25).all());
}

TEST_CASE("patch_extract matches the modular-index oracle on a ramp") {
  Image ramp(4, 4);
  for (Eigen::Index j = 0; j < 4; ++j)
    for (Eigen::Index i = 0; i < 4; ++i) ramp(i, j) = double(i) + 10.0 * double(j);
  const int p = 2;
  const Eigen::MatrixXd got = patch_extract(ramp, PatchConfig{p});
  REQUIRE(got.rows() == 4);
  REQUIRE(got.cols() == 16);
  for (Eigen::Index col = 0; col < 16; ++col) {
    const Eigen::Index k = col % 4, l = col / 4;
    for (int b = 0; b < p; ++b)
      for (int a = 0; a < p; ++a)
        CHECK(got(a + b * p, col) == ramp((k + a) % 4, (l + b) % 4));
  }
}

TEST_CASE("patch_adjoint: dot test, P*P = p^2 I, zero maps to zero") {
  const Eigen::Index n1 = 6, n2 = 6;
  const PatchConfig pc{2};
  const Image x = random_image(n1, n2);
  Eigen::MatrixXd y(pc.K(), n1 * n2);
  std::normal_distribution<double> g;
  for (Eigen::Index j = 0; j < y.cols(); ++j)
    for (Eigen::Index i = 0; i < y.rows(); ++i) y(i, j) = g(rng);

  const double lhs = (patch_extract(x, pc).array() * y.array()).sum();
  const double rhs = (x * patch_adjoint(y, pc, n1, n2)).sum();
  CHECK(std::abs(lhs - rhs) < 1e-12 * (1.0 + std::abs(lhs)));

  const Image ptp = patch_adjoint(patch_extract(x, pc), pc, n1, n2);
  CHECK((ptp - 4.0 * x).abs().maxCoeff() < 1e-12);

  CHECK(patch_adjoint(Eigen::MatrixXd::Zero(pc.K(), n1 * n2), pc, n1, n2).abs().maxCoeff() == 0.0);
}

TEST_CASE("gradient and divergence are adjoint; interior gradient of constants is zero") {
  const Image c = Image::Constant(8, 8, 5.0);
  const auto gc = grad_h(c);
  CHECK(gc[0].block(0, 0, 7, 8).abs().maxCoeff() == 0.0);
  CHECK(gc[1].block(0, 0, 8, 7).abs().maxCoeff() == 0.0);

  for (double h : {1.0, 0.5}) {
    const Image x = random_image(7, 9);
    std::array<Image, 2> y{random_image(7, 9), random_image(7, 9)};
    const auto gx = grad_h(x, h);
    const double lhs = (gx[0] * y[0]).sum() + (gx[1] * y[1]).sum();
    const double rhs = (x * (-div_h(y, h))).sum();
    CHECK(std::abs(lhs - rhs) < 1e-12 * (1.0 + std::abs(lhs)));
  }
}

TEST_CASE("laplacian of a separable quadratic is constant in the interior") {
  const Eigen::Index n = 16;
  const double a = 0.7, b = -0.3, h = 0.5;
  Image x(n, n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < n; ++i) x(i, j) = a * double(i * i) + b * double(j * j);
  const Image lap = laplace_h(x, h);
  for (Eigen::Index j = 2; j < n - 2; ++j)
    for (Eigen::Index i = 2; i < n - 2; ++i)
      CHECK(lap(i, j) == Catch::Approx(2.0 * (a + b) / (h * h)).epsilon(1e-10));
}

TEST_CASE("bloch_image matches the per-pixel loop oracle") {
  const auto seq = make_default_sequence(6, 12);
  const ParameterImage u = random_params(4, 4);
  const ComplexVolume vol = bloch_image(u, seq);
  for (Eigen::Index j = 0; j < 4; ++j)
    for (Eigen::Index i = 0; i < 4; ++i) {
      const SignalVector s = signal({u[0](i, j), u[1](i, j), u[2](i, j)}, seq);
      for (int l = 0; l < 6; ++l)
        CHECK(std::abs(vol.slice[size_t(l)](i, j) - s(l)) < 1e-13);
    }

  ParameterImage zero(4, 4);
  CHECK(squared_norm(bloch_image(zero, seq)) == 0.0);

  // 1 x 1 image under a full mask: the DFT of a scalar is the scalar.
  const ParameterImage single = random_params(1, 1);
  const KSpaceData f = forward(single, seq, SamplingMaskSet::full(1, 1, 6));
  const SignalVector s = signal({single[0](0, 0), single[1](0, 0), single[2](0, 0)}, seq);
  for (int l = 0; l < 6; ++l) CHECK(std::abs(f.data.slice[size_t(l)](0, 0) - s(l)) < 1e-13);
}

TEST_CASE("forward jvp/vjp: adjoint identity and finite differences") {
  const auto seq = make_default_sequence(5, 8);
  const Eigen::Index n = 4;
  const auto masks = make_masks(n, n, 5, 2, 1);
  const ParameterImage u = random_params(n, n);

  for (int rep = 0; rep < 10; ++rep) {
    const ParameterImage h = random_direction(n, n);
    KSpaceData w;
    w.masks = masks;
    w.data = random_volume(n, n, 5);
    for (int l = 0; l < 5; ++l)
      w.data.slice[size_t(l)] *= masks.mask[size_t(l)].cast<double>();
    const double lhs = cdot(forward_jvp(u, h, seq, masks).data, w.data).real();
    const double rhs = dot(h, forward_vjp(u, w, seq));
    CHECK(std::abs(lhs - rhs) < 1e-10 * (1.0 + std::abs(lhs)));
  }

  ParameterImage zero_dir(n, n);
  CHECK(squared_norm(forward_jvp(u, zero_dir, seq, masks).data) == 0.0);

  const ParameterImage h = random_direction(n, n);
  const double eps = 1e-5;
  const KSpaceData fp = forward(u + eps * h, seq, masks);
  const KSpaceData fm = forward(u + (-eps) * h, seq, masks);
  const KSpaceData jv = forward_jvp(u, h, seq, masks);
  double err = 0, nrm = 0;
  for (int l = 0; l < 5; ++l) {
    const CImage fd = (fp.data.slice[size_t(l)] - fm.data.slice[size_t(l)]) / (2 * eps);
    err += (fd - jv.data.slice[size_t(l)]).abs2().sum();
    nrm += jv.data.slice[size_t(l)].abs2().sum();
  }
  CHECK(std::sqrt(err / nrm) < 1e-5);
}

TEST_CASE("approx_normal_apply: full sampling equals the exact normal operator") {
  const auto seq = make_default_sequence(5, 21);
  const Eigen::Index n = 3;
  const auto masks = SamplingMaskSet::full(n, n, 5);
  const ParameterImage u = random_params(n, n);
  const ParameterImage h = random_direction(n, n);

  const ParameterImage fast = approx_normal_apply(u, h, seq, 1);
  const ParameterImage exact = forward_vjp(u, forward_jvp(u, h, seq, masks), seq);
  CHECK(std::sqrt(squared_norm(fast - exact) / squared_norm(exact)) < 1e-10);

  ParameterImage zero(n, n);
  CHECK(squared_norm(approx_normal_apply(u, zero, seq, 4)) == 0.0);
  CHECK_THROWS_AS(approx_normal_apply(u, h, seq, 0), ConfigError);
}

TEST_CASE("approx_normal_apply matches the dense 12x12 oracle on a 2x2 image") {
  const auto seq = make_default_sequence(7, 33);
  const ParameterImage u = random_params(2, 2);
  const int r = 4;

  // Dense assembly from the per-pixel Jacobians (block diagonal in pixels).
  Eigen::MatrixXd dense = Eigen::MatrixXd::Zero(12, 12);
  for (Eigen::Index idx = 0; idx < 4; ++idx) {
    const Eigen::Index i = idx % 2, j = idx / 2;
    const SignalJacobian jac = signal_jacobian({u[0](i, j), u[1](i, j), u[2](i, j)}, seq);
    Eigen::Matrix3d nm;
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        nm(a, b) = (jac.col(a).conjugate().cwiseProduct(jac.col(b))).sum().real();
    // Variable ordering: channel-major blocks (c * 4 + pixel).
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) dense(a * 4 + idx, b * 4 + idx) = nm(a, b) / r;
  }

  const ParameterImage h = random_direction(2, 2);
  Eigen::VectorXd hv(12);
  for (int c = 0; c < 3; ++c)
    for (Eigen::Index idx = 0; idx < 4; ++idx) hv(c * 4 + idx) = h[c](idx % 2, idx / 2);
  const Eigen::VectorXd ov = dense * hv;

  const ParameterImage out = approx_normal_apply(u, h, seq, r);
  for (int c = 0; c < 3; ++c)
    for (Eigen::Index idx = 0; idx < 4; ++idx)
      CHECK(out[c](idx % 2, idx / 2) == Catch::Approx(ov(c * 4 + idx)).margin(1e-10));
}
