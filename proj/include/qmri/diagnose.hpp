#pragma once
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "qmri/experiment.hpp"
#include "qmri/solver.hpp"

namespace qmri {

// Post-hoc validation of a saved solver trace against the convergence
// contract: monotone objective, the backtracking descent condition, the
// inner-loop complexity bound and the sublinear stationarity envelope.

struct DiagnosticCheck {
  std::string name;
  bool pass = true;
  int fail_iteration = -1;
  std::string detail;
};

struct Diagnosis {
  std::vector<DiagnosticCheck> checks;
  bool all_pass() const {
    for (const auto& c : checks)
      if (!c.pass) return false;
    return true;
  }
};

inline Diagnosis diagnose_trace(const IterationTrace& trace, double sigma_bt, double sigma1) {
  Diagnosis d;
  if (trace.rows.empty()) throw ConfigError("diagnose: empty trace");

  DiagnosticCheck mono{"objective-monotone"};
  DiagnosticCheck descent{"descent-condition"};
  DiagnosticCheck complexity{"inner-complexity"};
  DiagnosticCheck envelope{"stationarity-envelope"};

  double prev = trace.j0;
  for (size_t i = 0; i < trace.rows.size(); ++i) {
    const auto& r = trace.rows[i];
    const double slack = 1e-9 * (1.0 + std::abs(prev));
    if (mono.pass && (r.jd_mid > prev + slack || r.jd > r.jd_mid + slack)) {
      mono.pass = false;
      mono.fail_iteration = r.k;
      mono.detail = "objective increased";
    }
    const double decrease_needed =
        0.5 * sigma_bt * r.lambda_k * (r.step_u_sq + r.step_u1_sq);
    if (descent.pass && r.jd > r.jd_mid - decrease_needed + slack) {
      descent.pass = false;
      descent.fail_iteration = r.k;
      descent.detail = "accepted step misses the sufficient-decrease margin";
    }
    for (int c = 0; c < 3 && complexity.pass; ++c) {
      const double dg = r.dg_inner[static_cast<size_t>(c)];
      const int n_large = r.n_large[static_cast<size_t>(c)];
      if (r.n_inner[static_cast<size_t>(c)] == 0) continue;
      const double bound = 2.0 * std::max(dg, 0.0) / (sigma1 * r.eta_k * r.eta_k);
      if (static_cast<double>(n_large) > bound * (1.0 + 1e-9) + 1e-9) {
        complexity.pass = false;
        complexity.fail_iteration = r.k;
        complexity.detail = "inner iteration count exceeds the complexity bound";
      }
    }
    prev = r.jd;
  }

  // Envelope: the running minimum of the stationarity surrogate must stay
  // under C*sqrt((J0 - J_N + sum eta^2)/N) with C calibrated on the early
  // iterations of this very run.
  const auto running_min = stationarity_estimate(trace);
  const size_t n = trace.rows.size();
  if (n >= 8) {
    std::vector<double> ratio(n);
    double eta_sq_sum = 0;
    for (size_t i = 0; i < n; ++i) {
      eta_sq_sum += trace.rows[i].eta_k * trace.rows[i].eta_k;
      const double gap = std::max(trace.j0 - trace.rows[i].jd, 0.0) + eta_sq_sum;
      ratio[i] = running_min[i] / std::sqrt(gap / static_cast<double>(i + 1) + 1e-300);
    }
    const size_t calib = std::max<size_t>(3, n / 4);
    double cstar = 0;
    for (size_t i = 0; i < calib; ++i) cstar = std::max(cstar, ratio[i]);
    for (size_t i = calib; i < n; ++i) {
      if (ratio[i] > 2.0 * cstar + 1e-12) {
        envelope.pass = false;
        envelope.fail_iteration = trace.rows[i].k;
        envelope.detail = "surrogate exceeds the calibrated sublinear envelope";
        break;
      }
    }
  }

  d.checks = {mono, descent, complexity, envelope};
  return d;
}

// Validates every trace found in a run directory using its resolved config.
inline std::map<std::string, Diagnosis> diagnose_run_dir(const std::string& dir,
                                                         const std::string& only_variant = "") {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  if (!fs::exists(root / "config_resolved.txt"))
    throw ConfigError("diagnose: no config_resolved.txt in " + dir);
  const ExperimentSpec spec = load_resolved_config((root / "config_resolved.txt").string());
  const double sigma1 = std::min(spec.solver.lambda_d, spec.solver.lambda_c);

  std::map<std::string, Diagnosis> out;
  for (const auto& vname : spec.variants) {
    if (!only_variant.empty() && vname != only_variant) continue;
    const fs::path trace_path = root / ("trace_" + vname + ".csv");
    if (!fs::exists(trace_path)) {
      if (!only_variant.empty())
        throw ConfigError("diagnose: missing trace for variant '" + vname + "'");
      continue;
    }
    const IterationTrace t = IterationTrace::read_csv(trace_path.string());
    out.emplace(vname, diagnose_trace(t, spec.solver.sigma_bt, sigma1));
  }
  if (out.empty()) throw ConfigError("diagnose: no traces found in " + dir);
  return out;
}

}  // namespace qmri
