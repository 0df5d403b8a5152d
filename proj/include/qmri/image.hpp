#pragma once
#include <Eigen/Dense>
#include <array>
#include <complex>
#include <vector>

namespace qmri {

using Image = Eigen::ArrayXXd;    // n1 x n2, column-major
using CImage = Eigen::ArrayXXcd;  // complex image / k-space slice

// Per-pixel (rho, T1, T2) map. Channel 0 = rho, 1 = T1, 2 = T2.
struct ParameterImage {
  std::array<Image, 3> ch;

  ParameterImage() = default;
  ParameterImage(Eigen::Index n1, Eigen::Index n2) {
    for (auto& c : ch) c = Image::Zero(n1, n2);
  }

  Eigen::Index n1() const { return ch[0].rows(); }
  Eigen::Index n2() const { return ch[0].cols(); }
  Image& operator[](int c) { return ch[static_cast<size_t>(c)]; }
  const Image& operator[](int c) const { return ch[static_cast<size_t>(c)]; }

  bool same_shape(const ParameterImage& o) const {
    return n1() == o.n1() && n2() == o.n2();
  }
};

inline ParameterImage operator-(const ParameterImage& a, const ParameterImage& b) {
  ParameterImage r(a.n1(), a.n2());
  for (int c = 0; c < 3; ++c) r[c] = a[c] - b[c];
  return r;
}

inline ParameterImage operator+(const ParameterImage& a, const ParameterImage& b) {
  ParameterImage r(a.n1(), a.n2());
  for (int c = 0; c < 3; ++c) r[c] = a[c] + b[c];
  return r;
}

inline ParameterImage operator*(double s, const ParameterImage& a) {
  ParameterImage r(a.n1(), a.n2());
  for (int c = 0; c < 3; ++c) r[c] = s * a[c];
  return r;
}

// Plain (unscaled) Euclidean inner product over all channels.
inline double dot(const ParameterImage& a, const ParameterImage& b) {
  double s = 0;
  for (int c = 0; c < 3; ++c) s += (a[c] * b[c]).sum();
  return s;
}

inline double squared_norm(const ParameterImage& a) { return dot(a, a); }

// Channel-wise box of admissible values (the set U_ad).
struct BoxBounds {
  Eigen::Array3d lo{0.0, 0.0, 0.0};
  Eigen::Array3d hi{110.0, 300.0, 300.0};

  void clamp(ParameterImage& u) const {
    for (int c = 0; c < 3; ++c) u[c] = u[c].max(lo[c]).min(hi[c]);
  }

  bool contains(const ParameterImage& u, double slack = 1e-12) const {
    for (int c = 0; c < 3; ++c) {
      const double pad = slack * (1.0 + hi[c] - lo[c]);
      if ((u[c] < lo[c] - pad).any() || (u[c] > hi[c] + pad).any()) return false;
    }
    return true;
  }
};

// Channel-wise forward-difference gradient stack: g[c][d] with d = 0 the
// first image axis and d = 1 the second.
struct GradientField {
  std::array<std::array<Image, 2>, 3> g;
};

// L complex slices of size n1 x n2.
struct ComplexVolume {
  std::vector<CImage> slice;

  ComplexVolume() = default;
  ComplexVolume(Eigen::Index n1, Eigen::Index n2, int L)
      : slice(static_cast<size_t>(L), CImage::Zero(n1, n2)) {}

  int L() const { return static_cast<int>(slice.size()); }
  Eigen::Index n1() const { return slice.empty() ? 0 : slice[0].rows(); }
  Eigen::Index n2() const { return slice.empty() ? 0 : slice[0].cols(); }

  bool same_shape(const ComplexVolume& o) const {
    return L() == o.L() && n1() == o.n1() && n2() == o.n2();
  }
};

// Complex inner product sum(conj(a) * b), summed over all slices.
inline std::complex<double> cdot(const ComplexVolume& a, const ComplexVolume& b) {
  std::complex<double> s = 0;
  for (int l = 0; l < a.L(); ++l) s += (a.slice[l].conjugate() * b.slice[l]).sum();
  return s;
}

inline double squared_norm(const ComplexVolume& a) {
  double s = 0;
  for (const auto& sl : a.slice) s += sl.abs2().sum();
  return s;
}

}  // namespace qmri
