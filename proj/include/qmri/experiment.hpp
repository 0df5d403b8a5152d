#pragma once
#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "qmri/config.hpp"
#include "qmri/data.hpp"
#include "qmri/kspace_io.hpp"
#include "qmri/solver.hpp"

namespace qmri {

// ---------------------------------------------------------------------------
// Experiment specification and presets
// ---------------------------------------------------------------------------

struct ExperimentSpec {
  std::string preset = "desk";
  int n1 = 64, n2 = 64;
  int L = 20;
  int r = 8;
  double sigma = 1.0;
  bool sigma_squared_noise = false;
  std::uint64_t phantom_seed = 7, noise_seed = 8, mask_seed = 9, seq_seed = 10;
  PulseSequence seq;         // resolved sequence (generated or explicit)
  SolverConfig solver;
  std::vector<std::string> variants{"nested", "one-step", "lm"};

  void resolve_sequence() {
    if (seq.length() != L) seq = make_default_sequence(L, seq_seed);
  }
};

// Desk-scale default: the test target.
inline ExperimentSpec desk_spec() {
  ExperimentSpec s;
  s.preset = "desk";
  s.solver.max_outer = 30;
  s.solver.lm_iters = 30;
  s.resolve_sequence();
  return s;
}

// Full-scale presets mirroring the two published experiments.
inline ExperimentSpec paper16x_spec() {
  ExperimentSpec s;
  s.preset = "paper16x";
  s.n1 = s.n2 = 256;
  s.L = 100;
  s.r = 16;
  s.sigma = 2.0;
  s.solver.lambda = Eigen::Array3d::Constant(45.0);
  s.solver.beta = Eigen::Array3d::Constant(0.0045);
  s.solver.max_outer = 100;
  s.resolve_sequence();
  return s;
}

inline ExperimentSpec paper32x_spec() {
  ExperimentSpec s;
  s.preset = "paper32x";
  s.n1 = s.n2 = 256;
  s.L = 100;
  s.r = 32;
  s.sigma = 5.0;
  s.solver.lambda = Eigen::Array3d::Constant(50.0);
  s.solver.beta = Eigen::Array3d::Constant(0.0095);
  s.solver.max_outer = 100;
  s.resolve_sequence();
  return s;
}

inline ExperimentSpec spec_for_preset(const std::string& name) {
  if (name == "desk") return desk_spec();
  if (name == "paper16x") return paper16x_spec();
  if (name == "paper32x") return paper32x_spec();
  throw ConfigError("unknown preset '" + name + "' (expected desk, paper16x or paper32x)");
}

// ---------------------------------------------------------------------------
// Config binding (sections data., seq., solver.)
// ---------------------------------------------------------------------------

inline std::vector<double> triple(const Eigen::Array3d& a) { return {a[0], a[1], a[2]}; }

inline Eigen::Array3d as_triple(const std::vector<double>& v, const std::string& key) {
  if (v.size() == 1) return Eigen::Array3d::Constant(v[0]);
  if (v.size() == 3) return Eigen::Array3d{v[0], v[1], v[2]};
  throw ConfigError("key '" + key + "': expected 1 or 3 comma-separated values");
}

// Applies config keys on top of `base` (a preset); every recognized key is
// optional, unknown keys fail in check_all_consumed.
inline ExperimentSpec spec_from_config(const KeyValueConfig& cfg, ExperimentSpec base) {
  ExperimentSpec s = base;
  s.preset = cfg.get_string("data.preset", s.preset);
  s.n1 = static_cast<int>(cfg.get_int("data.n1", s.n1));
  s.n2 = static_cast<int>(cfg.get_int("data.n2", s.n2));
  s.L = static_cast<int>(cfg.get_int("data.L", s.L));
  s.r = static_cast<int>(cfg.get_int("data.r", s.r));
  s.sigma = cfg.get_double("data.sigma", s.sigma);
  s.sigma_squared_noise = cfg.get_bool("data.sigma_squared_noise", s.sigma_squared_noise);
  s.phantom_seed = cfg.get_u64("data.phantom_seed", s.phantom_seed);
  s.noise_seed = cfg.get_u64("data.noise_seed", s.noise_seed);
  s.mask_seed = cfg.get_u64("data.mask_seed", s.mask_seed);
  s.seq_seed = cfg.get_u64("data.seq_seed", s.seq_seed);
  {
    const std::string v = cfg.get_string("data.variants", "");
    if (!v.empty()) {
      s.variants.clear();
      std::stringstream ss(v);
      std::string tok;
      while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (tok.empty()) continue;
        if (!variant_from_name(tok))
          throw ConfigError("data.variants: unknown variant '" + tok + "'");
        s.variants.push_back(tok);
      }
    }
  }

  SolverConfig& c = s.solver;
  c.alpha = cfg.get_double("solver.alpha", c.alpha);
  c.lambda = as_triple(cfg.get_doubles("solver.lambda", triple(c.lambda)), "solver.lambda");
  c.beta = as_triple(cfg.get_doubles("solver.beta", triple(c.beta)), "solver.beta");
  c.m_scale = as_triple(cfg.get_doubles("solver.M", triple(c.m_scale)), "solver.M");
  c.lambda0 = cfg.get_double("solver.lambda0", c.lambda0);
  c.tau = cfg.get_double("solver.tau", c.tau);
  c.sigma_bt = cfg.get_double("solver.sigma_bt", c.sigma_bt);
  c.gamma = cfg.get_double("solver.gamma", c.gamma);
  c.eps1 = cfg.get_double("solver.eps1", c.eps1);
  c.eps2 = cfg.get_double("solver.eps2", c.eps2);
  c.max_outer = static_cast<int>(cfg.get_int("solver.max_outer", c.max_outer));
  c.lambda_d = cfg.get_double("solver.lambda_D", c.lambda_d);
  c.lambda_c = cfg.get_double("solver.lambda_C", c.lambda_c);
  c.dict_max_iters = static_cast<int>(cfg.get_int("solver.dict_max_iters", c.dict_max_iters));
  c.patch_p = static_cast<int>(cfg.get_int("solver.p", c.patch_p));
  c.mesh_h = cfg.get_double("solver.h", c.mesh_h);
  c.box.hi[0] = cfg.get_double("solver.rho_max", c.box.hi[0]);
  const double tmax = cfg.get_double("solver.T_max", c.box.hi[1]);
  c.box.hi[1] = c.box.hi[2] = tmax;
  c.tol_qp = cfg.get_double("solver.tol_qp", c.tol_qp);
  c.qp_max_rounds = static_cast<int>(cfg.get_int("solver.qp_max_rounds", c.qp_max_rounds));
  c.qp_max_cg = static_cast<int>(cfg.get_int("solver.qp_max_cg", c.qp_max_cg));
  c.bt_max = static_cast<int>(cfg.get_int("solver.bt_max", c.bt_max));
  c.lm_iters = static_cast<int>(cfg.get_int("solver.lm_iters", c.lm_iters));

  if (cfg.has("seq.tr") || cfg.has("seq.flip_deg") || cfg.has("seq.L") ||
      cfg.has("seq.seed") || cfg.has("seq.m0") || cfg.has("seq.m_eq")) {
    PulseSequence q;
    const int L = static_cast<int>(cfg.get_int("seq.L", s.L));
    const std::uint64_t seed = cfg.get_u64("seq.seed", s.seq_seed);
    std::vector<double> tr = cfg.get_doubles("seq.tr", {});
    std::vector<double> flip_deg = cfg.get_doubles("seq.flip_deg", {});
    if (tr.empty() && flip_deg.empty()) {
      q = make_default_sequence(L, seed);
    } else {
      if (static_cast<int>(tr.size()) != L || static_cast<int>(flip_deg.size()) != L)
        throw ConfigError("seq.tr and seq.flip_deg must both have seq.L entries");
      q.tr = tr;
      q.seed = seed;
      q.flip.resize(flip_deg.size());
      for (size_t i = 0; i < flip_deg.size(); ++i) q.flip[i] = flip_deg[i] * M_PI / 180.0;
    }
    q.m0 = cfg.get_double("seq.m0", -1.0);
    q.m_eq = cfg.get_double("seq.m_eq", 1.0);
    q.validate();
    s.seq = q;
    s.seq_seed = seed;
    s.L = L;
  } else {
    s.resolve_sequence();
  }
  if (s.seq.length() != s.L) throw ConfigError("seq.L and data.L disagree");
  s.solver.validate();
  return s;
}

// Every parameter, echoed; a run is reproducible from this file alone.
inline void write_resolved_config(const ExperimentSpec& s, const std::string& path) {
  ConfigWriter w;
  w.set("data.preset", s.preset);
  w.set("data.n1", s.n1);
  w.set("data.n2", s.n2);
  w.set("data.L", s.L);
  w.set("data.r", s.r);
  w.set("data.sigma", s.sigma);
  w.set("data.sigma_squared_noise", s.sigma_squared_noise);
  w.set("data.phantom_seed", s.phantom_seed);
  w.set("data.noise_seed", s.noise_seed);
  w.set("data.mask_seed", s.mask_seed);
  w.set("data.seq_seed", s.seq_seed);
  {
    std::string v;
    for (size_t i = 0; i < s.variants.size(); ++i) v += (i ? "," : "") + s.variants[i];
    w.set("data.variants", v);
  }
  sequence_to_config(s.seq, w, "seq.");
  const SolverConfig& c = s.solver;
  w.set("solver.alpha", c.alpha);
  w.set("solver.lambda", triple(c.lambda));
  w.set("solver.beta", triple(c.beta));
  w.set("solver.M", triple(c.m_scale));
  w.set("solver.lambda0", c.lambda0);
  w.set("solver.tau", c.tau);
  w.set("solver.sigma_bt", c.sigma_bt);
  w.set("solver.gamma", c.gamma);
  w.set("solver.eps1", c.eps1);
  w.set("solver.eps2", c.eps2);
  w.set("solver.max_outer", c.max_outer);
  w.set("solver.lambda_D", c.lambda_d);
  w.set("solver.lambda_C", c.lambda_c);
  w.set("solver.dict_max_iters", c.dict_max_iters);
  w.set("solver.p", c.patch_p);
  w.set("solver.h", c.mesh_h);
  w.set("solver.rho_max", c.box.hi[0]);
  w.set("solver.T_max", c.box.hi[1]);
  w.set("solver.tol_qp", c.tol_qp);
  w.set("solver.qp_max_rounds", c.qp_max_rounds);
  w.set("solver.qp_max_cg", c.qp_max_cg);
  w.set("solver.bt_max", c.bt_max);
  w.set("solver.lm_iters", c.lm_iters);
  w.write(path);
}

inline ExperimentSpec load_resolved_config(const std::string& path) {
  KeyValueConfig cfg = KeyValueConfig::from_file(path);
  ExperimentSpec base = spec_for_preset(cfg.get_string("data.preset", "desk"));
  ExperimentSpec s = spec_from_config(cfg, base);
  cfg.check_all_consumed();
  return s;
}

// ---------------------------------------------------------------------------
// Image output (8-bit binary PGM)
// ---------------------------------------------------------------------------

inline void write_pgm(const Image& img, const std::string& path, double lo, double hi) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write pgm: " + path);
  const Eigen::Index n1 = img.rows(), n2 = img.cols();
  f << "P5\n# range " << format_double(lo) << " " << format_double(hi) << "\n"
    << n2 << " " << n1 << "\n255\n";
  const double scale = hi > lo ? 255.0 / (hi - lo) : 0.0;
  std::vector<std::uint8_t> row(static_cast<size_t>(n2));
  for (Eigen::Index i = 0; i < n1; ++i) {
    for (Eigen::Index j = 0; j < n2; ++j) {
      const double v = std::clamp((img(i, j) - lo) * scale, 0.0, 255.0);
      row[static_cast<size_t>(j)] = static_cast<std::uint8_t>(std::lround(v));
    }
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
  }
}

// ---------------------------------------------------------------------------
// Experiment runner
// ---------------------------------------------------------------------------

struct VariantOutcome {
  std::string variant;
  std::array<double, 3> rel_err{0, 0, 0};  // rho, t1, t2
  int outer_iters = 0;
  double jd_final = 0;
};

// Published reference errors (reference context only, not targets; the
// exact phantom behind them is not recoverable). Order: t1, t2, rho.
struct ReferenceRow {
  const char* preset;
  const char* variant;
  double t1, t2, rho;
};

inline const std::vector<ReferenceRow>& reference_rows() {
  static const std::vector<ReferenceRow> rows = {
      {"paper16x", "blip", 0.231, 0.26, 0.25},
      {"paper16x", "lm", 0.155, 0.177, 0.222},
      {"paper16x", "one-step", 0.091, 0.09, 0.12},
      {"paper16x", "nested", 0.086, 0.077, 0.12},
      {"paper32x", "blip", 1.195, 0.733, 0.236},
      {"paper32x", "lm", 0.838, 0.4, 0.305},
      {"paper32x", "one-step", 0.192, 0.204, 0.136},
      {"paper32x", "nested", 0.184, 0.185, 0.134},
  };
  return rows;
}

inline void write_report_csv(const std::vector<VariantOutcome>& outcomes,
                             const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot write report: " + path);
  f << "variant,source,rho_rel_err,t1_rel_err,t2_rel_err,outer_iters,jd_final\n";
  for (const auto& o : outcomes) {
    f << o.variant << ",run," << format_double(o.rel_err[0]) << ','
      << format_double(o.rel_err[1]) << ',' << format_double(o.rel_err[2]) << ','
      << o.outer_iters << ',' << format_double(o.jd_final) << "\n";
  }
  for (const auto& r : reference_rows()) {
    f << r.variant << ",reference-" << r.preset << ',' << format_double(r.rho) << ','
      << format_double(r.t1) << ',' << format_double(r.t2) << ",,\n";
  }
}

inline std::vector<VariantOutcome> read_report_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read report: " + path);
  std::string line;
  std::getline(f, line);
  std::vector<VariantOutcome> out;
  while (std::getline(f, line)) {
    if (trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) cells.push_back(tok);
    if (cells.size() < 5) continue;
    if (cells[1] != "run") continue;
    VariantOutcome o;
    o.variant = cells[0];
    o.rel_err = {std::stod(cells[2]), std::stod(cells[3]), std::stod(cells[4])};
    if (cells.size() > 5 && !cells[5].empty()) o.outer_iters = std::stoi(cells[5]);
    if (cells.size() > 6 && !cells[6].empty()) o.jd_final = std::stod(cells[6]);
    out.push_back(o);
  }
  return out;
}

struct ExperimentArtifacts {
  ParameterImage truth;
  std::vector<VariantOutcome> outcomes;
  std::map<std::string, SolveResult> results;
};

inline const char* channel_name(int c) { return c == 0 ? "rho" : (c == 1 ? "t1" : "t2"); }

// Simulates, reconstructs every requested variant and writes the full
// report directory: report.csv, trace_<variant>.csv, <channel>_<variant>.pgm
// plus <channel>_err_<variant>.pgm, kspace.bin and config_resolved.txt.
inline ExperimentArtifacts run_experiment(const ExperimentSpec& spec_in,
                                          const std::string& out_dir) {
  namespace fs = std::filesystem;
  ExperimentSpec spec = spec_in;
  spec.resolve_sequence();
  fs::create_directories(out_dir);
  const auto path = [&](const std::string& name) { return (fs::path(out_dir) / name).string(); };

  write_resolved_config(spec, path("config_resolved.txt"));

  const Phantom ph = make_phantom(spec.n1, spec.n2, spec.phantom_seed);
  const SamplingMaskSet masks = make_masks(spec.n1, spec.n2, spec.L, spec.r, spec.mask_seed);
  const KSpaceData data = synthesize(ph.truth, spec.seq, masks, spec.sigma, spec.noise_seed,
                                     spec.sigma_squared_noise);
  save_kspace(data, path("kspace.bin"));

  const Eigen::Array3d display_hi{spec.solver.box.hi[0], spec.solver.box.hi[1],
                                  spec.solver.box.hi[2]};
  for (int c = 0; c < 3; ++c)
    write_pgm(ph.truth[c], path(std::string(channel_name(c)) + "_truth.pgm"), 0, display_hi[c]);

  ExperimentArtifacts art;
  art.truth = ph.truth;
  for (const auto& vname : spec.variants) {
    const auto v = variant_from_name(vname);
    if (!v) throw ConfigError("unknown variant '" + vname + "'");
    SolveResult res = run_solver(data, spec.solver, spec.seq, *v);
    VariantOutcome o;
    o.variant = variant_name(*v);
    for (int c = 0; c < 3; ++c) o.rel_err[static_cast<size_t>(c)] = relative_error(res.u, ph.truth, c);
    o.outer_iters = static_cast<int>(res.trace.rows.size());
    o.jd_final = res.trace.rows.empty() ? res.trace.j0 : res.trace.rows.back().jd;
    res.trace.write_csv(path("trace_" + o.variant + ".csv"));
    for (int c = 0; c < 3; ++c) {
      write_pgm(res.u[c], path(std::string(channel_name(c)) + "_" + o.variant + ".pgm"), 0,
                display_hi[c]);
      const Image err = (res.u[c] - ph.truth[c]).abs();
      write_pgm(err, path(std::string(channel_name(c)) + "_err_" + o.variant + ".pgm"), 0,
                std::max(err.maxCoeff(), 1e-12));
    }
    art.outcomes.push_back(o);
    art.results.emplace(o.variant, std::move(res));
  }
  write_report_csv(art.outcomes, path("report.csv"));
  return art;
}

}  // namespace qmri
