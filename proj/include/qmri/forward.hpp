#pragma once
#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "qmri/bloch.hpp"
#include "qmri/errors.hpp"
#include "qmri/fft.hpp"
#include "qmri/image.hpp"
#include "qmri/parallel.hpp"

namespace qmri {

// ---------------------------------------------------------------------------
// Sampling masks and k-space containers
// ---------------------------------------------------------------------------

using MaskImage = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

enum class MaskAxis { rows, cols };

// One binary mask per time step. The generator in data.hpp produces
// equidistant Cartesian lines that shift by one line per step and repeat
// with period r.
struct SamplingMaskSet {
  int r = 1;
  std::uint64_t seed = 0;
  MaskAxis axis = MaskAxis::rows;
  std::vector<MaskImage> mask;

  int L() const { return static_cast<int>(mask.size()); }
  Eigen::Index n1() const { return mask.empty() ? 0 : mask[0].rows(); }
  Eigen::Index n2() const { return mask.empty() ? 0 : mask[0].cols(); }

  static SamplingMaskSet full(Eigen::Index n1, Eigen::Index n2, int L) {
    SamplingMaskSet s;
    s.r = 1;
    s.mask.assign(static_cast<size_t>(L), MaskImage::Ones(n1, n2));
    return s;
  }

  double sampled_fraction(int l) const {
    return mask[static_cast<size_t>(l)].cast<double>().sum() /
           static_cast<double>(n1() * n2());
  }
};

struct KSpaceData {
  ComplexVolume data;
  SamplingMaskSet masks;
};

// ---------------------------------------------------------------------------
// Pixelwise Bloch operator and the measurement operator A
// ---------------------------------------------------------------------------

// [Pi_d(u)]_{ijl} = pi(u_ij)_l, evaluated pixel-parallel.
inline ComplexVolume bloch_image(const ParameterImage& u, const PulseSequence& seq) {
  seq.validate();
  const Eigen::Index n1 = u.n1(), n2 = u.n2();
  const int L = seq.length();
  ComplexVolume out(n1, n2, L);
  parallel_for(n1 * n2, [&](std::ptrdiff_t idx) {
    const Eigen::Index i = idx % n1, j = idx / n1;
    const TissueParams p{u[0](i, j), u[1](i, j), u[2](i, j)};
    const SignalVector s = signal(p, seq);
    for (int l = 0; l < L; ++l) out.slice[static_cast<size_t>(l)](i, j) = s(l);
  });
  return out;
}

// A y = per-slice orthonormal 2D DFT followed by the sampling mask.
inline KSpaceData apply_A(const ComplexVolume& y, const SamplingMaskSet& masks) {
  if (y.L() != masks.L() || y.n1() != masks.n1() || y.n2() != masks.n2())
    throw ConfigError("apply_A: shape mismatch between volume and masks");
  KSpaceData out;
  out.masks = masks;
  out.data.slice.resize(static_cast<size_t>(y.L()));
  parallel_for(y.L(), [&](std::ptrdiff_t l) {
    out.data.slice[static_cast<size_t>(l)] =
        fft2(y.slice[static_cast<size_t>(l)]) *
        masks.mask[static_cast<size_t>(l)].cast<double>();
  }, 1);
  return out;
}

// A* f = per-slice mask followed by the inverse orthonormal DFT.
inline ComplexVolume apply_A_adjoint(const KSpaceData& f) {
  if (f.data.L() != f.masks.L() || f.data.n1() != f.masks.n1() || f.data.n2() != f.masks.n2())
    throw ConfigError("apply_A_adjoint: shape mismatch between data and masks");
  ComplexVolume out;
  out.slice.resize(static_cast<size_t>(f.data.L()));
  parallel_for(f.data.L(), [&](std::ptrdiff_t l) {
    const CImage masked = f.data.slice[static_cast<size_t>(l)] *
                          f.masks.mask[static_cast<size_t>(l)].cast<double>();
    out.slice[static_cast<size_t>(l)] = fft2(masked, /*inverse=*/true);
  }, 1);
  return out;
}

// ---------------------------------------------------------------------------
// Patch extraction (periodic wrap-around, one patch per pixel)
// ---------------------------------------------------------------------------

struct PatchConfig {
  int p = 8;  // side length; K = p*p atoms
  int K() const { return p * p; }
};

// P img: column (k + l*n1) holds the vectorized p x p patch whose top-left
// corner sits at pixel (k, l); indices wrap periodically so that exactly
// M = n1*n2 patches exist.
inline Eigen::MatrixXd patch_extract(const Image& img, const PatchConfig& cfg) {
  const Eigen::Index n1 = img.rows(), n2 = img.cols();
  if (cfg.p < 1 || cfg.p > std::min(n1, n2))
    throw ConfigError("patch_extract: patch size out of range");
  const int p = cfg.p;
  Eigen::MatrixXd out(p * p, n1 * n2);
  parallel_for(n1 * n2, [&](std::ptrdiff_t col) {
    const Eigen::Index k = col % n1, l = col / n1;
    double* dst = out.data() + static_cast<std::ptrdiff_t>(col) * p * p;
    for (int b = 0; b < p; ++b) {
      const Eigen::Index jj = (l + b) % n2;
      for (int a = 0; a < p; ++a) {
        const Eigen::Index ii = (k + a) % n1;
        dst[a + b * p] = img(ii, jj);
      }
    }
  });
  return out;
}

// P* Y: scatter-add of patch columns back onto the image. P*P = p^2 I.
inline Image patch_adjoint(const Eigen::MatrixXd& y, const PatchConfig& cfg,
                           Eigen::Index n1, Eigen::Index n2) {
  const int p = cfg.p;
  if (y.rows() != p * p || y.cols() != n1 * n2)
    throw ConfigError("patch_adjoint: shape mismatch");
  Image out = Image::Zero(n1, n2);
  for (Eigen::Index col = 0; col < y.cols(); ++col) {
    const Eigen::Index k = col % n1, l = col / n1;
    const double* src = y.data() + col * p * p;
    for (int b = 0; b < p; ++b) {
      const Eigen::Index jj = (l + b) % n2;
      for (int a = 0; a < p; ++a) {
        const Eigen::Index ii = (k + a) % n1;
        out(ii, jj) += src[a + b * p];
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Finite-difference operators, zero (Dirichlet) boundary
// ---------------------------------------------------------------------------

// Forward differences; values outside the image are zero, so the last
// difference along each axis is -x/h.
inline std::array<Image, 2> grad_h(const Image& x, double h = 1.0) {
  const Eigen::Index n1 = x.rows(), n2 = x.cols();
  std::array<Image, 2> g{Image::Zero(n1, n2), Image::Zero(n1, n2)};
  if (n1 > 1) g[0].topRows(n1 - 1) = x.bottomRows(n1 - 1) - x.topRows(n1 - 1);
  g[0].row(n1 - 1) = -x.row(n1 - 1);
  if (n2 > 1) g[1].leftCols(n2 - 1) = x.rightCols(n2 - 1) - x.leftCols(n2 - 1);
  g[1].col(n2 - 1) = -x.col(n2 - 1);
  g[0] /= h;
  g[1] /= h;
  return g;
}

// Discrete divergence, the negative adjoint of grad_h:
// <grad x, y> = <x, -div y>.
inline Image div_h(const std::array<Image, 2>& y, double h = 1.0) {
  const Eigen::Index n1 = y[0].rows(), n2 = y[0].cols();
  Image out = Image::Zero(n1, n2);
  out = y[0] + y[1];
  out.bottomRows(n1 - 1) -= y[0].topRows(n1 - 1);
  out.rightCols(n2 - 1) -= y[1].leftCols(n2 - 1);
  return out / h;
}

// Classical 5-point Laplacian with zero boundary: laplace_h = -grad^T grad.
inline Image laplace_h(const Image& x, double h = 1.0) {
  return div_h(grad_h(x, h), h);
}

inline GradientField grad_h(const ParameterImage& u, double h = 1.0) {
  GradientField f;
  for (int c = 0; c < 3; ++c) f.g[static_cast<size_t>(c)] = grad_h(u[c], h);
  return f;
}

// ---------------------------------------------------------------------------
// Forward operator F_d = A o Pi_d and its derivative products
// ---------------------------------------------------------------------------

inline KSpaceData forward(const ParameterImage& u, const PulseSequence& seq,
                          const SamplingMaskSet& masks) {
  return apply_A(bloch_image(u, seq), masks);
}

// F'(u)[h] = A( pi'(u_ij) h_ij ); the pixel Jacobians are recomputed on the
// fly to keep memory flat at full scale.
inline KSpaceData forward_jvp(const ParameterImage& u, const ParameterImage& h,
                              const PulseSequence& seq, const SamplingMaskSet& masks) {
  if (!u.same_shape(h)) throw ConfigError("forward_jvp: image shape mismatch");
  const Eigen::Index n1 = u.n1(), n2 = u.n2();
  const int L = seq.length();
  ComplexVolume y(n1, n2, L);
  parallel_for(n1 * n2, [&](std::ptrdiff_t idx) {
    const Eigen::Index i = idx % n1, j = idx / n1;
    const TissueParams p{u[0](i, j), u[1](i, j), u[2](i, j)};
    const SignalJacobian jac = signal_jacobian(p, seq);
    const Eigen::Vector3d hv(h[0](i, j), h[1](i, j), h[2](i, j));
    const Eigen::VectorXcd s = jac * hv;
    for (int l = 0; l < L; ++l) y.slice[static_cast<size_t>(l)](i, j) = s(l);
  });
  return apply_A(y, masks);
}

// F'(u)* w = Re( pi'(u_ij)^H (A* w)_ij ) per pixel; the real gradient of the
// real-valued data-fidelity term.
inline ParameterImage forward_vjp(const ParameterImage& u, const KSpaceData& w,
                                  const PulseSequence& seq) {
  const ComplexVolume aw = apply_A_adjoint(w);
  const Eigen::Index n1 = u.n1(), n2 = u.n2();
  if (aw.n1() != n1 || aw.n2() != n2) throw ConfigError("forward_vjp: shape mismatch");
  const int L = seq.length();
  ParameterImage out(n1, n2);
  parallel_for(n1 * n2, [&](std::ptrdiff_t idx) {
    const Eigen::Index i = idx % n1, j = idx / n1;
    const TissueParams p{u[0](i, j), u[1](i, j), u[2](i, j)};
    const SignalJacobian jac = signal_jacobian(p, seq);
    Eigen::Vector3d g = Eigen::Vector3d::Zero();
    for (int l = 0; l < L; ++l) {
      const std::complex<double> v = aw.slice[static_cast<size_t>(l)](i, j);
      for (int c = 0; c < 3; ++c) g(c) += (std::conj(jac(l, c)) * v).real();
    }
    for (int c = 0; c < 3; ++c) out[c](i, j) = g(c);
  });
  return out;
}

// Per-pixel Re(pi'^H pi') matrices, flat index i + j*n1.
inline std::vector<Eigen::Matrix3d> normal_matrices(const ParameterImage& u,
                                                    const PulseSequence& seq) {
  const Eigen::Index n1 = u.n1(), n2 = u.n2();
  std::vector<Eigen::Matrix3d> out(static_cast<size_t>(n1 * n2));
  parallel_for(n1 * n2, [&](std::ptrdiff_t idx) {
    const Eigen::Index i = idx % n1, j = idx / n1;
    const TissueParams p{u[0](i, j), u[1](i, j), u[2](i, j)};
    out[static_cast<size_t>(idx)] = normal_matrix(signal_jacobian(p, seq));
  });
  return out;
}

// Hessian surrogate of the data term: (Pi')* A* A (Pi') ~ (1/r) (Pi')*(Pi'),
// applied matrix-free through the per-pixel 3x3 normal matrices.
inline ParameterImage approx_normal_apply(const std::vector<Eigen::Matrix3d>& normals,
                                          const ParameterImage& h, int r) {
  if (r < 1) throw ConfigError("approx_normal_apply: undersampling factor must be >= 1");
  const Eigen::Index n1 = h.n1(), n2 = h.n2();
  if (normals.size() != static_cast<size_t>(n1 * n2))
    throw ConfigError("approx_normal_apply: normal matrix count mismatch");
  ParameterImage out(n1, n2);
  const double inv_r = 1.0 / static_cast<double>(r);
  parallel_for(n1 * n2, [&](std::ptrdiff_t idx) {
    const Eigen::Index i = idx % n1, j = idx / n1;
    const Eigen::Vector3d hv(h[0](i, j), h[1](i, j), h[2](i, j));
    const Eigen::Vector3d o = inv_r * (normals[static_cast<size_t>(idx)] * hv);
    for (int c = 0; c < 3; ++c) out[c](i, j) = o(c);
  });
  return out;
}

inline ParameterImage approx_normal_apply(const ParameterImage& u, const ParameterImage& h,
                                          const PulseSequence& seq, int r) {
  return approx_normal_apply(normal_matrices(u, seq), h, r);
}

}  // namespace qmri
