#pragma once
#include <Eigen/Dense>
#include <cstdint>
#include <queue>
#include <random>
#include <vector>

#include "qmri/errors.hpp"
#include "qmri/forward.hpp"
#include "qmri/image.hpp"

namespace qmri {

// ---------------------------------------------------------------------------
// Phantom generation
// ---------------------------------------------------------------------------

struct EllipseRegion {
  double cx, cy;      // center, normalized [0,1]^2 coordinates
  double ax, ay;      // semi-axes
  double angle;       // rotation, radians
  double rho, t1, t2; // channel values painted inside
};

// Piecewise-constant anatomy-like map: nested ellipses with distinct
// (rho, T1, T2) per region, T1/T2 within the scaled [0, 250] ms range.
// The same seed reproduces the phantom bit for bit.
struct Phantom {
  ParameterImage truth;
  Eigen::ArrayXXi region;  // region index per pixel (0 = background)
  int n_regions = 0;       // expected connected components of `region`
  std::uint64_t seed = 0;
  std::vector<EllipseRegion> shapes;
};

inline Phantom make_phantom(Eigen::Index n1, Eigen::Index n2, std::uint64_t seed) {
  if (n1 < 8 || n2 < 8) throw ConfigError("make_phantom: image too small");
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const auto jit = [&](double v, double a) { return v + a * unit(gen); };

  // Painted in order; later shapes overwrite earlier ones.
  std::vector<EllipseRegion> shapes;
  shapes.push_back({0.5, 0.5, jit(0.42, 0.01), jit(0.36, 0.01), jit(0.0, 0.05),
                    jit(95.0, 3.0), jit(215.0, 6.0), jit(130.0, 5.0)});
  shapes.push_back({jit(0.5, 0.01), jit(0.5, 0.01), jit(0.33, 0.01), jit(0.27, 0.01),
                    jit(0.0, 0.05), jit(80.0, 3.0), jit(145.0, 5.0), jit(85.0, 4.0)});
  shapes.push_back({jit(0.40, 0.015), jit(0.42, 0.015), jit(0.085, 0.005), jit(0.065, 0.005),
                    jit(0.5, 0.1), jit(68.0, 3.0), jit(240.0, 4.0), jit(175.0, 5.0)});
  shapes.push_back({jit(0.62, 0.015), jit(0.57, 0.015), jit(0.065, 0.005), jit(0.085, 0.005),
                    jit(-0.4, 0.1), jit(104.0, 2.0), jit(60.0, 4.0), jit(38.0, 3.0)});

  Phantom ph;
  ph.seed = seed;
  ph.shapes = shapes;
  ph.truth = ParameterImage(n1, n2);
  ph.region = Eigen::ArrayXXi::Zero(n1, n2);
  for (Eigen::Index j = 0; j < n2; ++j) {
    for (Eigen::Index i = 0; i < n1; ++i) {
      const double x = (static_cast<double>(i) + 0.5) / static_cast<double>(n1);
      const double y = (static_cast<double>(j) + 0.5) / static_cast<double>(n2);
      for (size_t s = 0; s < shapes.size(); ++s) {
        const auto& e = shapes[s];
        const double dx = x - e.cx, dy = y - e.cy;
        const double ca = std::cos(e.angle), sa = std::sin(e.angle);
        const double rx = (ca * dx + sa * dy) / e.ax;
        const double ry = (-sa * dx + ca * dy) / e.ay;
        if (rx * rx + ry * ry <= 1.0) {
          ph.region(i, j) = static_cast<int>(s) + 1;
          ph.truth[0](i, j) = std::clamp(e.rho, 0.0, 110.0);
          ph.truth[1](i, j) = std::clamp(e.t1, 0.0, 250.0);
          ph.truth[2](i, j) = std::clamp(e.t2, 0.0, 250.0);
        }
      }
    }
  }
  ph.n_regions = static_cast<int>(shapes.size()) + 1;  // shapes plus background
  return ph;
}

// 4-connected component count of the region map; phantom sanity oracle.
inline int count_connected_components(const Eigen::ArrayXXi& label) {
  const Eigen::Index n1 = label.rows(), n2 = label.cols();
  Eigen::ArrayXXi seen = Eigen::ArrayXXi::Zero(n1, n2);
  int comps = 0;
  for (Eigen::Index j0 = 0; j0 < n2; ++j0)
    for (Eigen::Index i0 = 0; i0 < n1; ++i0) {
      if (seen(i0, j0)) continue;
      ++comps;
      std::queue<std::pair<Eigen::Index, Eigen::Index>> q;
      q.push({i0, j0});
      seen(i0, j0) = 1;
      while (!q.empty()) {
        auto [i, j] = q.front();
        q.pop();
        const Eigen::Index ni[4] = {i - 1, i + 1, i, i};
        const Eigen::Index nj[4] = {j, j, j - 1, j + 1};
        for (int t = 0; t < 4; ++t) {
          if (ni[t] < 0 || ni[t] >= n1 || nj[t] < 0 || nj[t] >= n2) continue;
          if (seen(ni[t], nj[t]) || label(ni[t], nj[t]) != label(i, j)) continue;
          seen(ni[t], nj[t]) = 1;
          q.push({ni[t], nj[t]});
        }
      }
    }
  return comps;
}

// ---------------------------------------------------------------------------
// Sampling masks
// ---------------------------------------------------------------------------

// Equidistant Cartesian line masks. Slice t samples the lines congruent to
// (offset + t) mod r, so consecutive slices shift by one line and the set
// repeats with period r. With r dividing n1 every mask holds exactly n1/r
// lines.
inline SamplingMaskSet make_masks(Eigen::Index n1, Eigen::Index n2, int L, int r,
                                  std::uint64_t offset_seed, MaskAxis axis = MaskAxis::rows) {
  if (r < 1) throw ConfigError("make_masks: undersampling factor must be >= 1");
  if (L < 1) throw ConfigError("make_masks: L must be >= 1");
  SamplingMaskSet s;
  s.r = r;
  s.seed = offset_seed;
  s.axis = axis;
  const int offset0 = static_cast<int>(offset_seed % static_cast<std::uint64_t>(r));
  s.mask.resize(static_cast<size_t>(L));
  for (int l = 0; l < L; ++l) {
    MaskImage m = MaskImage::Zero(n1, n2);
    const int shift = (offset0 + l) % r;
    if (axis == MaskAxis::rows) {
      for (Eigen::Index i = shift; i < n1; i += r) m.row(i).setOnes();
    } else {
      for (Eigen::Index j = shift; j < n2; j += r) m.col(j).setOnes();
    }
    s.mask[static_cast<size_t>(l)] = m;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Noisy data synthesis
// ---------------------------------------------------------------------------

// f = F_d(u_true) + noise at the sampled frequencies. The per-component
// standard deviation is sigma (the paper's text reading); with
// sigma_squared_amplitude the formula reading sigma^2 is used instead.
// Unsampled entries stay exactly zero.
inline KSpaceData synthesize(const ParameterImage& u_true, const PulseSequence& seq,
                             const SamplingMaskSet& masks, double sigma,
                             std::uint64_t noise_seed, bool sigma_squared_amplitude = false) {
  if (sigma < 0) throw ConfigError("synthesize: sigma must be >= 0");
  KSpaceData f = forward(u_true, seq, masks);
  if (sigma == 0) return f;
  const double amp = sigma_squared_amplitude ? sigma * sigma : sigma;
  std::mt19937_64 gen(noise_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (int l = 0; l < f.data.L(); ++l) {
    auto& sl = f.data.slice[static_cast<size_t>(l)];
    const auto& m = masks.mask[static_cast<size_t>(l)];
    for (Eigen::Index j = 0; j < sl.cols(); ++j)
      for (Eigen::Index i = 0; i < sl.rows(); ++i)
        if (m(i, j)) sl(i, j) += amp * std::complex<double>(normal(gen), normal(gen));
  }
  return f;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

// ||recon - truth||_2 / ||truth||_2 for one channel.
inline double relative_error(const ParameterImage& recon, const ParameterImage& truth,
                             int channel) {
  if (!recon.same_shape(truth)) throw ConfigError("relative_error: shape mismatch");
  const double denom = std::sqrt(truth[channel].square().sum());
  const double num = std::sqrt((recon[channel] - truth[channel]).square().sum());
  if (denom == 0) return num == 0 ? 0.0 : std::numeric_limits<double>::infinity();
  return num / denom;
}

}  // namespace qmri
