#pragma once
#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "qmri/config.hpp"
#include "qmri/dictlearn.hpp"
#include "qmri/errors.hpp"
#include "qmri/forward.hpp"
#include "qmri/image.hpp"

namespace qmri {

// Nested alternating solver for the discrete reconstruction problem
//
//   J_d(u,D,C) = h^2/2 ||F_d(u) - f||^2 + alpha/2 ||grad u||_U1^2
//              + sum_j [ lambda^j/2 ||P(u_j/M_j) - D_j C_j||_F^2 + beta_j ||C_j||_1 ]
//              + indicator of the box U_ad,
//
// alternating per-channel orthogonal dictionary learning (to an adaptive
// inner tolerance) with one box-constrained Levenberg-Marquardt step whose
// damping is chosen by backtracking. The inner dictionary problem is the
// objective above restricted to channel j and divided by lambda^j, so its
// l1 weight is beta_j / lambda^j.

struct SolverConfig {
  double alpha = 1e-3;                                   // gradient regularization weight
  Eigen::Array3d lambda = Eigen::Array3d::Constant(45.0);   // per-channel dictionary weights
  Eigen::Array3d beta = Eigen::Array3d::Constant(0.0045);   // per-channel sparsity weights
  Eigen::Array3d m_scale{100.0, 260.0, 260.0};           // norm scalings (M1, M2, M3)
  double lambda0 = 1.0;                                  // backtracking start
  double tau = 8.0;                                      // backtracking growth
  double sigma_bt = 0.5;                                 // descent fraction (sigma_3)
  double gamma = 0.75;                                   // inner-accuracy exponent
  double eps1 = 1e-6;                                    // outer stop, u movement
  double eps2 = 1e-6;                                    // outer stop, z movement
  int max_outer = 100;
  double lambda_d = 1.0;                                 // dict proximal weights
  double lambda_c = 1.0;
  int dict_max_iters = 400;
  int patch_p = 8;                                       // K = p^2
  double mesh_h = 1.0;
  BoxBounds box;
  double tol_qp = 1e-8;                                  // relative KKT tolerance
  int qp_max_rounds = 60;
  int qp_max_cg = 400;
  int bt_max = 40;                                       // backtracking trial cap
  int lm_iters = 30;                                     // fixed budget of the plain LM variant

  void validate() const {
    if (!(tau > 1)) throw ConfigError("solver: tau must be > 1");
    if (!(sigma_bt > 0 && sigma_bt < 1)) throw ConfigError("solver: sigma_bt must be in (0,1)");
    if (!(lambda0 > 0)) throw ConfigError("solver: lambda0 must be > 0");
    if (!(gamma > 0)) throw ConfigError("solver: gamma must be > 0");
    if (!(mesh_h > 0)) throw ConfigError("solver: mesh size must be > 0");
    if (!(alpha >= 0)) throw ConfigError("solver: alpha must be >= 0");
    for (int c = 0; c < 3; ++c) {
      if (!(lambda[c] >= 0) || !(beta[c] >= 0))
        throw ConfigError("solver: lambda and beta must be >= 0");
      if (!(m_scale[c] > 0)) throw ConfigError("solver: m_scale must be > 0");
    }
    if (!(lambda_d > 0 && lambda_c > 0))
      throw ConfigError("solver: dictionary proximal weights must be > 0");
    if (patch_p < 1) throw ConfigError("solver: patch size must be >= 1");
    if (max_outer < 1 || lm_iters < 1) throw ConfigError("solver: iteration budgets must be >= 1");
  }

  Eigen::Array3d norm_weights() const {
    return Eigen::Array3d{mesh_h * mesh_h / (m_scale[0] * m_scale[0]),
                          mesh_h * mesh_h / (m_scale[1] * m_scale[1]),
                          mesh_h * mesh_h / (m_scale[2] * m_scale[2])};
  }
};

// ---------------------------------------------------------------------------
// Scaled norms ||.||_U and ||.||_U1
// ---------------------------------------------------------------------------

inline double norm_U_sq(const ParameterImage& v, const SolverConfig& cfg) {
  const Eigen::Array3d w = cfg.norm_weights();
  double s = 0;
  for (int c = 0; c < 3; ++c) s += w[c] * v[c].square().sum();
  return s;
}

inline double scaled_norm_U(const ParameterImage& v, const SolverConfig& cfg) {
  return std::sqrt(norm_U_sq(v, cfg));
}

inline double norm_U1_sq(const GradientField& g, const SolverConfig& cfg) {
  const Eigen::Array3d w = cfg.norm_weights();
  double s = 0;
  for (int c = 0; c < 3; ++c)
    s += w[c] * (g.g[static_cast<size_t>(c)][0].square().sum() +
                 g.g[static_cast<size_t>(c)][1].square().sum());
  return s;
}

inline double scaled_norm_U1(const GradientField& g, const SolverConfig& cfg) {
  return std::sqrt(norm_U1_sq(g, cfg));
}

// ---------------------------------------------------------------------------
// Objective
// ---------------------------------------------------------------------------

struct ZState {
  std::array<Eigen::MatrixXd, 3> d;  // K x K orthogonal dictionaries
  std::array<Eigen::MatrixXd, 3> c;  // K x M sparse codes

  static ZState init(int K, Eigen::Index M) {
    ZState z;
    for (int j = 0; j < 3; ++j) {
      z.d[static_cast<size_t>(j)] = Eigen::MatrixXd::Identity(K, K);
      z.c[static_cast<size_t>(j)] = Eigen::MatrixXd::Zero(K, M);
    }
    return z;
  }

  std::array<Eigen::MatrixXd, 3> products() const {
    std::array<Eigen::MatrixXd, 3> y;
    for (int j = 0; j < 3; ++j)
      y[static_cast<size_t>(j)] = d[static_cast<size_t>(j)] * c[static_cast<size_t>(j)];
    return y;
  }
};

struct ObjectiveParts {
  double data_res = 0;                       // h^2/2 ||F_d(u) - f||^2
  double grad_term = 0;                      // alpha/2 ||grad u||_U1^2
  std::array<double, 3> dict_term{0, 0, 0};  // lambda_j/2 ||P(u_j/M_j)-Y_j||^2 + beta_j ||C_j||_1
  bool feasible = true;

  double total() const {
    if (!feasible) return std::numeric_limits<double>::infinity();
    return data_res + grad_term + dict_term[0] + dict_term[1] + dict_term[2];
  }
};

inline ObjectiveParts objective_parts(const ParameterImage& u, const ZState& z,
                                      const std::array<Eigen::MatrixXd, 3>& y,
                                      const KSpaceData& data, const PulseSequence& seq,
                                      const SolverConfig& cfg) {
  ObjectiveParts parts;
  parts.feasible = cfg.box.contains(u, 1e-12);
  if (!parts.feasible) return parts;
  const double h2 = cfg.mesh_h * cfg.mesh_h;

  const KSpaceData fu = forward(u, seq, data.masks);
  double res = 0;
  for (int l = 0; l < fu.data.L(); ++l)
    res += (fu.data.slice[static_cast<size_t>(l)] - data.data.slice[static_cast<size_t>(l)])
               .abs2()
               .sum();
  parts.data_res = 0.5 * h2 * res;

  if (cfg.alpha > 0)
    parts.grad_term = 0.5 * cfg.alpha * norm_U1_sq(grad_h(u, cfg.mesh_h), cfg);

  const PatchConfig pc{cfg.patch_p};
  for (int c = 0; c < 3; ++c) {
    if (cfg.lambda[c] <= 0) continue;
    const Eigen::MatrixXd x = patch_extract(Image(u[c] / cfg.m_scale[c]), pc);
    parts.dict_term[static_cast<size_t>(c)] =
        0.5 * cfg.lambda[c] * (x - y[static_cast<size_t>(c)]).squaredNorm() +
        cfg.beta[c] * z.c[static_cast<size_t>(c)].cwiseAbs().sum();
  }
  return parts;
}

inline double objective_Jd(const ParameterImage& u, const ZState& z, const KSpaceData& data,
                           const PulseSequence& seq, const SolverConfig& cfg) {
  return objective_parts(u, z, z.products(), data, seq, cfg).total();
}

// ---------------------------------------------------------------------------
// Box-constrained Levenberg-Marquardt subproblem
// ---------------------------------------------------------------------------

// Quadratic model around u_ref. The data curvature uses the 1/r surrogate
// (Pi')* A* A (Pi') ~ (1/r)(Pi')*(Pi'); the constant gradient part is exact.
struct LmQpProblem {
  ParameterImage u_ref;
  std::vector<Eigen::Matrix3d> normals;  // per-pixel Re(pi'^H pi')
  ParameterImage grad0;                  // full objective gradient at u_ref
  Eigen::Array3d patch_diag;             // lambda_c p^2 / M_c^2
  Eigen::Array3d w;                      // h^2 / M_c^2
  int r = 1;
  double h = 1.0;
  double alpha = 0;
  BoxBounds box;
  double tol_abs = 1e-8;
};

inline LmQpProblem build_lm_qp(const ParameterImage& u_k,
                               const std::array<Eigen::MatrixXd, 3>& y,
                               const KSpaceData& data, const PulseSequence& seq,
                               const SolverConfig& cfg) {
  LmQpProblem qp;
  qp.u_ref = u_k;
  qp.w = cfg.norm_weights();
  qp.r = data.masks.r;
  qp.h = cfg.mesh_h;
  qp.alpha = cfg.alpha;
  qp.box = cfg.box;
  const double h2 = cfg.mesh_h * cfg.mesh_h;
  const int p = cfg.patch_p;
  for (int c = 0; c < 3; ++c)
    qp.patch_diag[c] = cfg.lambda[c] * p * p / (cfg.m_scale[c] * cfg.m_scale[c]);

  qp.normals = normal_matrices(u_k, seq);

  KSpaceData resid;
  resid.masks = data.masks;
  const KSpaceData fu = forward(u_k, seq, data.masks);
  resid.data.slice.resize(static_cast<size_t>(fu.data.L()));
  for (int l = 0; l < fu.data.L(); ++l)
    resid.data.slice[static_cast<size_t>(l)] =
        fu.data.slice[static_cast<size_t>(l)] - data.data.slice[static_cast<size_t>(l)];
  qp.grad0 = h2 * forward_vjp(u_k, resid, seq);

  const PatchConfig pc{p};
  for (int c = 0; c < 3; ++c) {
    if (cfg.alpha > 0)
      qp.grad0[c] += cfg.alpha * qp.w[c] * (-laplace_h(u_k[c], cfg.mesh_h));
    if (cfg.lambda[c] > 0) {
      qp.grad0[c] += qp.patch_diag[c] * u_k[c];
      qp.grad0[c] -= (cfg.lambda[c] / cfg.m_scale[c]) *
                     patch_adjoint(y[static_cast<size_t>(c)], pc, u_k.n1(), u_k.n2());
    }
  }
  qp.tol_abs = cfg.tol_qp * std::max(1.0, std::sqrt(squared_norm(qp.grad0)));
  return qp;
}

namespace detail {

inline ParameterImage qp_hessian_apply(const LmQpProblem& qp, double lambda_k,
                                       const ParameterImage& v) {
  const double h2 = qp.h * qp.h;
  ParameterImage out = approx_normal_apply(qp.normals, v, qp.r);
  for (int c = 0; c < 3; ++c) {
    out[c] *= h2;
    out[c] += (qp.alpha + lambda_k) * qp.w[c] * (-laplace_h(v[c], qp.h));
    out[c] += (lambda_k * qp.w[c] + qp.patch_diag[c]) * v[c];
  }
  return out;
}

inline ParameterImage qp_gradient(const LmQpProblem& qp, double lambda_k,
                                  const ParameterImage& u) {
  ParameterImage g = qp_hessian_apply(qp, lambda_k, u - qp.u_ref);
  for (int c = 0; c < 3; ++c) g[c] += qp.grad0[c];
  return g;
}

// KKT residual of the box-constrained problem: the gradient on free
// coordinates, and its infeasible part on active ones.
inline double qp_kkt_residual(const LmQpProblem& qp, const ParameterImage& u,
                              const ParameterImage& g) {
  double s = 0;
  for (int c = 0; c < 3; ++c) {
    const double act = 1e-10 * (1.0 + qp.box.hi[c] - qp.box.lo[c]);
    const auto& uc = u[c];
    const auto& gc = g[c];
    for (Eigen::Index j = 0; j < uc.cols(); ++j)
      for (Eigen::Index i = 0; i < uc.rows(); ++i) {
        const double ui = uc(i, j), gi = gc(i, j);
        double r = gi;
        if (ui <= qp.box.lo[c] + act) r = std::min(gi, 0.0);
        else if (ui >= qp.box.hi[c] - act) r = std::max(gi, 0.0);
        s += r * r;
      }
  }
  return std::sqrt(s);
}

}  // namespace detail

struct QpSolution {
  ParameterImage u;
  double kkt = 0;
  int rounds = 0;
  int cg_iters = 0;
};

// Active-set projected preconditioned CG for the strongly convex box QP.
// Rounds alternate a KKT test / free-set refresh with a Jacobi-preconditioned
// CG solve on the free variables, stepping only to the first bound hit.
inline QpSolution solve_box_qp(const LmQpProblem& qp, double lambda_k,
                               const ParameterImage& start, int max_rounds = 60,
                               int max_cg = 400) {
  const Eigen::Index n1 = qp.u_ref.n1(), n2 = qp.u_ref.n2();
  QpSolution sol;
  sol.u = start;
  qp.box.clamp(sol.u);

  // Exact Hessian diagonal (the 5-point stencil contributes 4/h^2 everywhere).
  ParameterImage diag(n1, n2);
  const double h2 = qp.h * qp.h;
  for (int c = 0; c < 3; ++c) {
    const double base = (qp.alpha + lambda_k) * qp.w[c] * 4.0 / h2 + lambda_k * qp.w[c] +
                        qp.patch_diag[c];
    diag[c].setConstant(base);
  }
  for (Eigen::Index idx = 0; idx < n1 * n2; ++idx) {
    const Eigen::Index i = idx % n1, j = idx / n1;
    const Eigen::Matrix3d& n = qp.normals[static_cast<size_t>(idx)];
    for (int c = 0; c < 3; ++c) diag[c](i, j) += h2 / qp.r * n(c, c);
  }

  std::array<Image, 3> free_mask;
  const auto apply_mask = [&](ParameterImage& v) {
    for (int c = 0; c < 3; ++c) v[c] *= free_mask[static_cast<size_t>(c)];
  };

  for (sol.rounds = 1; sol.rounds <= max_rounds; ++sol.rounds) {
    ParameterImage g = detail::qp_gradient(qp, lambda_k, sol.u);
    sol.kkt = detail::qp_kkt_residual(qp, sol.u, g);
    if (sol.kkt <= qp.tol_abs) return sol;

    for (int c = 0; c < 3; ++c) {
      const double act = 1e-10 * (1.0 + qp.box.hi[c] - qp.box.lo[c]);
      free_mask[static_cast<size_t>(c)] =
          1.0 - ((sol.u[c] <= qp.box.lo[c] + act && g[c] > 0) ||
                 (sol.u[c] >= qp.box.hi[c] - act && g[c] < 0))
                    .cast<double>();
    }

    // PCG on the free subspace for H d = -g.
    ParameterImage d(n1, n2);
    ParameterImage rvec = -1.0 * g;
    apply_mask(rvec);
    ParameterImage z(n1, n2);
    for (int c = 0; c < 3; ++c) z[c] = rvec[c] / diag[c];
    apply_mask(z);
    ParameterImage p = z;
    double rz = dot(rvec, z);
    const double cg_tol = std::max(0.1 * qp.tol_abs, 0.05 * sol.kkt);
    for (int it = 0; it < max_cg && std::sqrt(dot(rvec, rvec)) > cg_tol; ++it) {
      ParameterImage hp = detail::qp_hessian_apply(qp, lambda_k, p);
      apply_mask(hp);
      const double php = dot(p, hp);
      if (!(php > 0)) break;
      const double a = rz / php;
      for (int c = 0; c < 3; ++c) {
        d[c] += a * p[c];
        rvec[c] -= a * hp[c];
      }
      for (int c = 0; c < 3; ++c) z[c] = rvec[c] / diag[c];
      apply_mask(z);
      const double rz_new = dot(rvec, z);
      const double bcg = rz_new / rz;
      rz = rz_new;
      for (int c = 0; c < 3; ++c) p[c] = z[c] + bcg * p[c];
      ++sol.cg_iters;
    }

    // Step to the first bound hit along d.
    double tmax = 1.0;
    for (int c = 0; c < 3; ++c) {
      const auto& uc = sol.u[c];
      const auto& dc = d[c];
      for (Eigen::Index j = 0; j < uc.cols(); ++j)
        for (Eigen::Index i = 0; i < uc.rows(); ++i) {
          const double di = dc(i, j);
          if (di > 0) tmax = std::min(tmax, (qp.box.hi[c] - uc(i, j)) / di);
          else if (di < 0) tmax = std::min(tmax, (qp.box.lo[c] - uc(i, j)) / di);
        }
    }
    tmax = std::max(tmax, 0.0);
    for (int c = 0; c < 3; ++c) sol.u[c] += tmax * d[c];
    qp.box.clamp(sol.u);
  }
  {
    ParameterImage g = detail::qp_gradient(qp, lambda_k, sol.u);
    sol.kkt = detail::qp_kkt_residual(qp, sol.u, g);
    if (sol.kkt <= qp.tol_abs) return sol;
  }
  throw NumericError("u-subproblem: QP round cap exceeded", sol.kkt);
}

// One Levenberg-Marquardt trial step at a fixed damping lambda_k.
inline ParameterImage u_subproblem(const ParameterImage& u_k, const ZState& z,
                                   const KSpaceData& data, double lambda_k,
                                   const PulseSequence& seq, const SolverConfig& cfg) {
  const auto y = z.products();
  const LmQpProblem qp = build_lm_qp(u_k, y, data, seq, cfg);
  return solve_box_qp(qp, lambda_k, u_k, cfg.qp_max_rounds, cfg.qp_max_cg).u;
}

// ---------------------------------------------------------------------------
// Backtracking u-step
// ---------------------------------------------------------------------------

struct UStepResult {
  ParameterImage u;
  double lambda_k = 0;
  int trials = 0;  // QP solves performed (j index of acceptance + 1)
  double step_u_sq = 0;
  double step_u1_sq = 0;
  ObjectiveParts parts;  // objective at the accepted point
  int qp_rounds = 0;
  int qp_cg_iters = 0;
  double qp_kkt = 0;
};

// Grows lambda by tau until the accepted point satisfies
//   J_d(u_hat) <= J_d(u_k) - sigma_bt*lambda/2 (||du||_U^2 + ||grad du||_U1^2).
inline UStepResult backtrack_u(const ParameterImage& u_k, const ZState& z,
                               const KSpaceData& data, const PulseSequence& seq,
                               const SolverConfig& cfg, double jd_ref) {
  const auto y = z.products();
  const LmQpProblem qp = build_lm_qp(u_k, y, data, seq, cfg);
  const double slack = 1e-11 * (1.0 + std::abs(jd_ref));
  ParameterImage start = u_k;
  double last_gap = 0;
  for (int j = 0; j <= cfg.bt_max; ++j) {
    const double lambda_k = cfg.lambda0 * std::pow(cfg.tau, j);
    QpSolution qs = solve_box_qp(qp, lambda_k, start, cfg.qp_max_rounds, cfg.qp_max_cg);
    UStepResult res;
    res.u = qs.u;
    res.lambda_k = lambda_k;
    res.trials = j + 1;
    res.qp_rounds = qs.rounds;
    res.qp_cg_iters = qs.cg_iters;
    res.qp_kkt = qs.kkt;
    const ParameterImage du = qs.u - u_k;
    res.step_u_sq = norm_U_sq(du, cfg);
    res.step_u1_sq = norm_U1_sq(grad_h(du, cfg.mesh_h), cfg);
    res.parts = objective_parts(qs.u, z, y, data, seq, cfg);
    const double required =
        jd_ref - 0.5 * cfg.sigma_bt * lambda_k * (res.step_u_sq + res.step_u1_sq);
    if (res.parts.total() <= required + slack) return res;
    last_gap = res.parts.total() - required;
    start = qs.u;
  }
  throw NumericError("backtracking: trial cap exceeded (gradient or tolerance is off)",
                     last_gap);
}

// ---------------------------------------------------------------------------
// z-step (per-channel dictionary learning to accuracy eta_k)
// ---------------------------------------------------------------------------

struct ZStepResult {
  std::array<int, 3> n_inner{0, 0, 0};
  std::array<int, 3> n_large{0, 0, 0};
  std::array<double, 3> dg{0, 0, 0};
  std::array<double, 3> final_step{0, 0, 0};
  std::array<double, 3> sigma2{0, 0, 0};
  double step_z_sq = 0;  // sum_j ||dD_j||^2 + ||dC_j||^2 across the whole z-step
};

inline ZStepResult z_step(const ParameterImage& u, ZState& z, double eta_k,
                          const SolverConfig& cfg, bool one_step) {
  ZStepResult out;
  const PatchConfig pc{cfg.patch_p};
  std::array<Eigen::MatrixXd, 3> d_new = z.d, c_new = z.c;
  parallel_for(3, [&](std::ptrdiff_t ci) {
    const int c = static_cast<int>(ci);
    if (cfg.lambda[c] <= 0) return;
    const Eigen::MatrixXd x = patch_extract(Image(u[c] / cfg.m_scale[c]), pc);
    DictLearnParams params;
    params.beta = cfg.beta[c] / cfg.lambda[c];
    params.lambda_d = cfg.lambda_d;
    params.lambda_c = cfg.lambda_c;
    params.eta = eta_k;
    params.max_iters = one_step ? 1 : cfg.dict_max_iters;
    DictLearnResult res =
        dict_learn(x, z.d[static_cast<size_t>(c)], z.c[static_cast<size_t>(c)], params);
    const auto& cert = res.certificate;
    out.n_inner[static_cast<size_t>(c)] = cert.n_iterations();
    out.n_large[static_cast<size_t>(c)] = cert.n_large_steps(eta_k);
    out.dg[static_cast<size_t>(c)] = cert.total_decrease();
    out.final_step[static_cast<size_t>(c)] = cert.final_step();
    out.sigma2[static_cast<size_t>(c)] = cert.sigma2(params);
    d_new[static_cast<size_t>(c)] = res.d;
    c_new[static_cast<size_t>(c)] = res.c;
  }, 1);
  for (int c = 0; c < 3; ++c) {
    out.step_z_sq += (d_new[static_cast<size_t>(c)] - z.d[static_cast<size_t>(c)]).squaredNorm() +
                     (c_new[static_cast<size_t>(c)] - z.c[static_cast<size_t>(c)]).squaredNorm();
  }
  z.d = d_new;
  z.c = c_new;
  return out;
}

// ---------------------------------------------------------------------------
// Iteration trace
// ---------------------------------------------------------------------------

struct IterationRecord {
  int k = 0;
  double jd = 0;         // J_d after the u-step
  double jd_mid = 0;     // J_d after the z-step, before the u-step
  double data_res = 0;
  std::array<double, 3> dict_obj{0, 0, 0};
  double lambda_k = 0;
  int bt_trials = 0;
  double eta_k = 0;
  double step_u_sq = 0;
  double step_u1_sq = 0;
  double step_z_sq = 0;
  std::array<int, 3> n_inner{0, 0, 0};
  std::array<int, 3> n_large{0, 0, 0};
  std::array<double, 3> dg_inner{0, 0, 0};
  std::array<double, 3> final_inner{0, 0, 0};
  std::array<double, 3> sigma2{0, 0, 0};
  int qp_rounds = 0;
  int qp_cg_iters = 0;
  double qp_kkt = 0;
  double stat_surrogate = 0;
};

struct IterationTrace {
  double j0 = 0;  // objective at the initial point
  std::vector<IterationRecord> rows;

  static const char* csv_header() {
    return "k,jd,jd_mid,data_res,dict_obj_0,dict_obj_1,dict_obj_2,lambda_k,bt_trials,"
           "eta_k,step_u_sq,step_u1_sq,step_z_sq,n_inner_0,n_inner_1,n_inner_2,"
           "n_large_0,n_large_1,n_large_2,dg_inner_0,dg_inner_1,dg_inner_2,"
           "final_inner_0,final_inner_1,final_inner_2,sigma2_0,sigma2_1,sigma2_2,"
           "qp_rounds,qp_cg_iters,qp_kkt,stat_surrogate";
  }

  void write_csv(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot write trace csv: " + path);
    f << "# j0 = " << format_double(j0) << "\n" << csv_header() << "\n";
    for (const auto& r : rows) {
      f << r.k << ',' << format_double(r.jd) << ',' << format_double(r.jd_mid) << ','
        << format_double(r.data_res);
      for (int c = 0; c < 3; ++c) f << ',' << format_double(r.dict_obj[static_cast<size_t>(c)]);
      f << ',' << format_double(r.lambda_k) << ',' << r.bt_trials << ','
        << format_double(r.eta_k) << ',' << format_double(r.step_u_sq) << ','
        << format_double(r.step_u1_sq) << ',' << format_double(r.step_z_sq);
      for (int c = 0; c < 3; ++c) f << ',' << r.n_inner[static_cast<size_t>(c)];
      for (int c = 0; c < 3; ++c) f << ',' << r.n_large[static_cast<size_t>(c)];
      for (int c = 0; c < 3; ++c) f << ',' << format_double(r.dg_inner[static_cast<size_t>(c)]);
      for (int c = 0; c < 3; ++c) f << ',' << format_double(r.final_inner[static_cast<size_t>(c)]);
      for (int c = 0; c < 3; ++c) f << ',' << format_double(r.sigma2[static_cast<size_t>(c)]);
      f << ',' << r.qp_rounds << ',' << r.qp_cg_iters << ',' << format_double(r.qp_kkt) << ','
        << format_double(r.stat_surrogate) << "\n";
    }
  }

  static IterationTrace read_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot read trace csv: " + path);
    IterationTrace t;
    std::string line;
    if (!std::getline(f, line) || line.rfind("# j0 =", 0) != 0)
      throw ConfigError("trace csv: missing j0 line in " + path);
    t.j0 = std::stod(line.substr(6));
    if (!std::getline(f, line) || line != csv_header())
      throw ConfigError("trace csv: unexpected header in " + path);
    while (std::getline(f, line)) {
      if (trim(line).empty()) continue;
      std::vector<double> v;
      std::stringstream ss(line);
      std::string tok;
      while (std::getline(ss, tok, ',')) v.push_back(std::stod(tok));
      if (v.size() != 32) throw ConfigError("trace csv: bad row in " + path);
      IterationRecord r;
      int i = 0;
      r.k = static_cast<int>(v[i++]);
      r.jd = v[i++];
      r.jd_mid = v[i++];
      r.data_res = v[i++];
      for (int c = 0; c < 3; ++c) r.dict_obj[static_cast<size_t>(c)] = v[i++];
      r.lambda_k = v[i++];
      r.bt_trials = static_cast<int>(v[i++]);
      r.eta_k = v[i++];
      r.step_u_sq = v[i++];
      r.step_u1_sq = v[i++];
      r.step_z_sq = v[i++];
      for (int c = 0; c < 3; ++c) r.n_inner[static_cast<size_t>(c)] = static_cast<int>(v[i++]);
      for (int c = 0; c < 3; ++c) r.n_large[static_cast<size_t>(c)] = static_cast<int>(v[i++]);
      for (int c = 0; c < 3; ++c) r.dg_inner[static_cast<size_t>(c)] = v[i++];
      for (int c = 0; c < 3; ++c) r.final_inner[static_cast<size_t>(c)] = v[i++];
      for (int c = 0; c < 3; ++c) r.sigma2[static_cast<size_t>(c)] = v[i++];
      r.qp_rounds = static_cast<int>(v[i++]);
      r.qp_cg_iters = static_cast<int>(v[i++]);
      r.qp_kkt = v[i++];
      r.stat_surrogate = v[i++];
      t.rows.push_back(r);
    }
    return t;
  }
};

// ---------------------------------------------------------------------------
// Outer driver and the three variants
// ---------------------------------------------------------------------------

enum class Variant { nested, one_step, vanilla_lm };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::nested: return "nested";
    case Variant::one_step: return "one-step";
    case Variant::vanilla_lm: return "lm";
  }
  return "?";
}

inline std::optional<Variant> variant_from_name(const std::string& s) {
  if (s == "nested") return Variant::nested;
  if (s == "one-step" || s == "one_step") return Variant::one_step;
  if (s == "lm" || s == "vanilla-lm") return Variant::vanilla_lm;
  return std::nullopt;
}

struct SolveResult {
  ParameterImage u;
  ZState z;
  IterationTrace trace;
  bool converged = false;  // outer tolerance met before the iteration cap
};

inline ParameterImage default_initial_image(Eigen::Index n1, Eigen::Index n2,
                                            const BoxBounds& box) {
  ParameterImage u(n1, n2);
  for (int c = 0; c < 3; ++c) u[c].setConstant(box.lo[c] + 0.5 * (box.hi[c] - box.lo[c]));
  return u;
}

inline SolveResult run_solver(const KSpaceData& data, const SolverConfig& cfg_in,
                              const PulseSequence& seq, Variant variant,
                              const ParameterImage* u_start = nullptr) {
  SolverConfig cfg = cfg_in;
  if (variant == Variant::vanilla_lm) cfg.lambda = Eigen::Array3d::Zero();
  cfg.validate();
  seq.validate();
  if (data.data.L() != seq.length()) throw ConfigError("solver: data L != sequence length");

  const Eigen::Index n1 = data.data.n1(), n2 = data.data.n2();
  const int K = cfg.patch_p * cfg.patch_p;

  SolveResult res;
  res.u = u_start ? *u_start : default_initial_image(n1, n2, cfg.box);
  cfg.box.clamp(res.u);
  res.z = ZState::init(K, n1 * n2);

  // eta_0 from the actual initial dictionary state (identical per channel).
  const double eta0 = std::sqrt(res.z.d[0].squaredNorm() + res.z.c[0].squaredNorm());

  auto y = res.z.products();
  res.trace.j0 = objective_parts(res.u, res.z, y, data, seq, cfg).total();

  const bool with_dict = (cfg.lambda > 0).any();
  const int outer_budget = (variant == Variant::vanilla_lm) ? cfg.lm_iters : cfg.max_outer;

  for (int k = 0; k < outer_budget; ++k) {
    IterationRecord row;
    row.k = k;
    row.eta_k = eta0 * std::pow(static_cast<double>(k + 1), -cfg.gamma);

    ZStepResult zres;
    if (with_dict) {
      zres = z_step(res.u, res.z, row.eta_k, cfg, variant == Variant::one_step);
      y = res.z.products();
    }
    row.step_z_sq = zres.step_z_sq;
    row.n_inner = zres.n_inner;
    row.n_large = zres.n_large;
    row.dg_inner = zres.dg;
    row.final_inner = zres.final_step;
    row.sigma2 = zres.sigma2;

    const ObjectiveParts mid = objective_parts(res.u, res.z, y, data, seq, cfg);
    row.jd_mid = mid.total();

    UStepResult ures = backtrack_u(res.u, res.z, data, seq, cfg, row.jd_mid);
    row.jd = ures.parts.total();
    row.data_res = ures.parts.data_res;
    row.dict_obj = ures.parts.dict_term;
    row.lambda_k = ures.lambda_k;
    row.bt_trials = ures.trials;
    row.step_u_sq = ures.step_u_sq;
    row.step_u1_sq = ures.step_u1_sq;
    row.qp_rounds = ures.qp_rounds;
    row.qp_cg_iters = ures.qp_cg_iters;
    row.qp_kkt = ures.qp_kkt;

    double zres_term = 0;
    for (int c = 0; c < 3; ++c)
      zres_term += zres.sigma2[static_cast<size_t>(c)] * zres.final_step[static_cast<size_t>(c)];
    row.stat_surrogate =
        ures.lambda_k * std::sqrt(ures.step_u_sq + ures.step_u1_sq) + zres_term;

    res.u = ures.u;
    res.trace.rows.push_back(row);

    if (variant != Variant::vanilla_lm) {
      const bool u_small = row.step_u_sq + row.step_u1_sq < cfg.eps1 * cfg.eps1;
      const bool z_small = row.step_z_sq < cfg.eps2 * cfg.eps2;
      if (u_small && z_small) {
        res.converged = true;
        break;
      }
    }
  }
  return res;
}

inline SolveResult nested_solve(const KSpaceData& data, const SolverConfig& cfg,
                                const PulseSequence& seq,
                                const ParameterImage* u_start = nullptr) {
  return run_solver(data, cfg, seq, Variant::nested, u_start);
}

inline SolveResult one_step_solve(const KSpaceData& data, const SolverConfig& cfg,
                                  const PulseSequence& seq,
                                  const ParameterImage* u_start = nullptr) {
  return run_solver(data, cfg, seq, Variant::one_step, u_start);
}

inline SolveResult vanilla_lm_solve(const KSpaceData& data, const SolverConfig& cfg,
                                    const PulseSequence& seq,
                                    const ParameterImage* u_start = nullptr) {
  return run_solver(data, cfg, seq, Variant::vanilla_lm, u_start);
}

// Running minimum of the per-iteration stationarity surrogate
// (scaled u step norm times lambda_k plus the inner-loop final step),
// the quantity obeying the O(1/sqrt(N)) envelope.
inline std::vector<double> stationarity_estimate(const IterationTrace& trace) {
  std::vector<double> out;
  out.reserve(trace.rows.size());
  double m = std::numeric_limits<double>::infinity();
  for (const auto& r : trace.rows) {
    m = std::min(m, r.stat_surrogate);
    out.push_back(m);
  }
  return out;
}

}  // namespace qmri
