#pragma once
#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "qmri/config.hpp"
#include "qmri/errors.hpp"

namespace qmri {

// Orthogonal dictionary learning for
//
//   min_{D in O_K, C}  1/2 ||D C - X||_F^2 + beta ||C||_1
//
// by alternating proximal updates, both in closed form:
//   D_{n+1} = U V^T               with U S V^T = X C_n^T + lambda_D D_n,
//   C_{n+1} = soft((D^T X + lambda_C C_n)/(1+lambda_C), beta/(1+lambda_C)).
//
// The iteration is a descent sequence: every step decreases the objective
// by at least min(lambda_D, lambda_C)/2 times the squared step, and the
// subgradient distance at the new iterate is controlled by the step norm.

inline double orthogonality_defect(const Eigen::MatrixXd& d) {
  return (d.transpose() * d - Eigen::MatrixXd::Identity(d.cols(), d.cols())).norm();
}

inline bool is_orthogonal(const Eigen::MatrixXd& d, double tol = 1e-8) {
  return d.rows() == d.cols() && orthogonality_defect(d) < tol;
}

// Entrywise sign(x) * max(|x| - tau, 0); the proximal map of tau*|.|_1.
inline Eigen::MatrixXd soft_threshold(const Eigen::MatrixXd& x, double tau) {
  if (!(tau > 0)) throw ConfigError("soft_threshold: tau must be > 0");
  return x.array().sign() * (x.array().abs() - tau).max(0.0);
}

// argmin_{D in O_K} 1/2 ||D C - X||^2 + lambda_D/2 ||D - D_prev||^2,
// the orthogonal-Procrustes polar factor of X C^T + lambda_D D_prev.
inline Eigen::MatrixXd update_dictionary(const Eigen::MatrixXd& x, const Eigen::MatrixXd& c,
                                         const Eigen::MatrixXd& d_prev, double lambda_d) {
  if (x.rows() != d_prev.rows() || c.rows() != d_prev.cols() || x.cols() != c.cols())
    throw ConfigError("update_dictionary: shape mismatch");
  if (lambda_d < 0) throw ConfigError("update_dictionary: lambda_d must be >= 0");
  const Eigen::MatrixXd target = x * c.transpose() + lambda_d * d_prev;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(target, Eigen::ComputeFullU | Eigen::ComputeFullV);
  if (svd.info() != Eigen::Success)
    throw NumericError("update_dictionary: SVD failed");
  return svd.matrixU() * svd.matrixV().transpose();
}

// argmin_C 1/2 ||D C - X||^2 + lambda_C/2 ||C - C_prev||^2 + beta ||C||_1.
// Valid only for orthogonal D (the quadratic decouples entrywise).
inline Eigen::MatrixXd update_codes(const Eigen::MatrixXd& x, const Eigen::MatrixXd& d,
                                    const Eigen::MatrixXd& c_prev, double beta, double lambda_c) {
  if (!is_orthogonal(d))
    throw ConfigError("update_codes: dictionary is not orthogonal");
  if (beta < 0 || lambda_c < 0) throw ConfigError("update_codes: negative weight");
  const Eigen::MatrixXd v = (d.transpose() * x + lambda_c * c_prev) / (1.0 + lambda_c);
  const double tau = beta / (1.0 + lambda_c);
  if (tau > 0) return soft_threshold(v, tau);
  return v;
}

inline double dict_objective(const Eigen::MatrixXd& x, const Eigen::MatrixXd& d,
                             const Eigen::MatrixXd& c, double beta) {
  return 0.5 * (d * c - x).squaredNorm() + beta * c.cwiseAbs().sum();
}

// Exact distance of 0 to the limiting subdifferential of the objective at
// (D, C). The D-part projects the Euclidean gradient onto the tangent space
// of O_K (the normal space is {D S : S symmetric}); the C-part minimizes
// over the l1 subdifferential entrywise.
inline double dict_subgradient_residual(const Eigen::MatrixXd& x, const Eigen::MatrixXd& d,
                                        const Eigen::MatrixXd& c, double beta) {
  const Eigen::MatrixXd r = d * c - x;
  const Eigen::MatrixXd w = d.transpose() * (r * c.transpose());
  const double rd = (0.5 * (w - w.transpose())).norm();
  const Eigen::MatrixXd s = d.transpose() * r;  // = C - D^T X for orthogonal D
  double rc_sq = 0;
  for (Eigen::Index j = 0; j < c.cols(); ++j)
    for (Eigen::Index i = 0; i < c.rows(); ++i) {
      const double si = s(i, j);
      const double ci = c(i, j);
      const double e = (ci != 0.0) ? si + beta * (ci > 0 ? 1.0 : -1.0)
                                   : std::max(std::abs(si) - beta, 0.0);
      rc_sq += e * e;
    }
  return std::sqrt(rd * rd + rc_sq);
}

struct DictLearnParams {
  double beta = 1e-4;    // l1 weight
  double lambda_d = 1.0; // proximal weight of the D update
  double lambda_c = 1.0; // proximal weight of the C update
  double eta = 1e-6;     // stop when ||dD||^2 + ||dC||^2 < eta^2
  int max_iters = 400;

  void validate() const {
    if (!(beta >= 0)) throw ConfigError("dict_learn: beta must be >= 0");
    if (!(lambda_d > 0) || !(lambda_c > 0))
      throw ConfigError("dict_learn: proximal weights must be > 0");
    if (!(eta > 0)) throw ConfigError("dict_learn: eta must be > 0");
    if (max_iters < 1) throw ConfigError("dict_learn: max_iters must be >= 1");
  }
};

struct DictIterationStats {
  double objective;      // after this alternation
  double step_d;         // ||D_n - D_{n-1}||_F
  double step_c;         // ||C_n - C_{n-1}||_F
  double residual;       // dist(0, subdifferential) at the new iterate
  double code_norm;      // ||C_n||_F
};

// Per-run record backing the descent-sequence contract of the inner solver.
struct DescentCertificate {
  double initial_objective = 0;
  std::vector<DictIterationStats> iters;
  bool converged = false;  // tolerance met (not the iteration cap)

  double sigma1(const DictLearnParams& p) const { return std::min(p.lambda_d, p.lambda_c); }

  // Lemma constant: max(sup_n ||C_n||_F, lambda_C, lambda_D).
  double sigma2(const DictLearnParams& p) const {
    double lc = 0;
    for (const auto& it : iters) lc = std::max(lc, it.code_norm);
    return std::max({lc, p.lambda_c, p.lambda_d});
  }

  int n_iterations() const { return static_cast<int>(iters.size()); }

  // Number of alternations whose step met or exceeded the tolerance; this is
  // the count the complexity bound controls.
  int n_large_steps(double eta) const {
    int n = 0;
    for (const auto& it : iters)
      if (it.step_d * it.step_d + it.step_c * it.step_c >= eta * eta) ++n;
    return n;
  }

  double total_decrease() const {
    return iters.empty() ? 0.0 : initial_objective - iters.back().objective;
  }

  double final_step() const {
    if (iters.empty()) return 0.0;
    const auto& it = iters.back();
    return std::sqrt(it.step_d * it.step_d + it.step_c * it.step_c);
  }

  void write_csv(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write certificate csv: " + path);
    f << "n,objective,step_d,step_c,residual,code_norm\n";
    f << "0," << format_double(initial_objective) << ",0,0,,\n";
    int n = 1;
    for (const auto& it : iters) {
      f << n++ << "," << format_double(it.objective) << "," << format_double(it.step_d)
        << "," << format_double(it.step_c) << "," << format_double(it.residual) << ","
        << format_double(it.code_norm) << "\n";
    }
  }
};

struct DictLearnResult {
  Eigen::MatrixXd d;
  Eigen::MatrixXd c;
  DescentCertificate certificate;
};

// Alternate the two closed-form updates until the squared step falls below
// eta^2. Always performs at least one alternation (the first iterate is
// needed before the stopping test applies).
inline DictLearnResult dict_learn(const Eigen::MatrixXd& x, const Eigen::MatrixXd& d0,
                                  const Eigen::MatrixXd& c0, const DictLearnParams& params) {
  params.validate();
  if (!is_orthogonal(d0)) throw ConfigError("dict_learn: D0 is not orthogonal");
  if (c0.rows() != d0.cols() || c0.cols() != x.cols())
    throw ConfigError("dict_learn: C0 shape mismatch");

  DictLearnResult res;
  res.d = d0;
  res.c = c0;
  res.certificate.initial_objective = dict_objective(x, d0, c0, params.beta);

  const double eta_sq = params.eta * params.eta;
  for (int n = 0; n < params.max_iters; ++n) {
    const Eigen::MatrixXd d_next = update_dictionary(x, res.c, res.d, params.lambda_d);
    const Eigen::MatrixXd c_next = update_codes(x, d_next, res.c, params.beta, params.lambda_c);
    DictIterationStats st;
    st.step_d = (d_next - res.d).norm();
    st.step_c = (c_next - res.c).norm();
    st.objective = dict_objective(x, d_next, c_next, params.beta);
    st.residual = dict_subgradient_residual(x, d_next, c_next, params.beta);
    st.code_norm = c_next.norm();
    res.d = d_next;
    res.c = c_next;
    res.certificate.iters.push_back(st);
    if (st.step_d * st.step_d + st.step_c * st.step_c < eta_sq) {
      res.certificate.converged = true;
      break;
    }
  }
  return res;
}

}  // namespace qmri
