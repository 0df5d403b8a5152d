#pragma once
#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "qmri/diagnose.hpp"
#include "qmri/experiment.hpp"

namespace qmri {

namespace detail {

inline void print_error(const std::string& code, const std::string& detail) {
  std::string d = detail;
  for (auto& ch : d)
    if (ch == '\n' || ch == '"') ch = ' ';
  std::cerr << "qmri-error code=" << code << " detail=\"" << d << "\"\n";
}

// Builds the experiment spec from --preset / --config / --seed. The preset
// is the base, the config file overrides it, and --seed re-derives the four
// subsystem seeds (phantom = s, noise = s+1, mask = s+2, sequence = s+3).
inline ExperimentSpec resolve_spec(const std::string& preset, const std::string& config_path,
                                   std::optional<std::uint64_t> seed) {
  std::optional<KeyValueConfig> cfg;
  if (!config_path.empty()) cfg = KeyValueConfig::from_file(config_path);
  std::string base_name = preset;
  if (base_name.empty() && cfg) base_name = cfg->get_string("data.preset", "");
  if (base_name.empty()) base_name = "desk";
  ExperimentSpec spec = spec_for_preset(base_name);
  if (cfg) {
    spec = spec_from_config(*cfg, spec);
    cfg->check_all_consumed();
  }
  if (seed) {
    spec.phantom_seed = *seed;
    spec.noise_seed = *seed + 1;
    spec.mask_seed = *seed + 2;
    spec.seq_seed = *seed + 3;
    spec.seq = PulseSequence{};  // regenerate from the new seed
    spec.resolve_sequence();
  }
  return spec;
}

inline void simulate_into(const ExperimentSpec& spec_in, const std::string& out_dir) {
  namespace fs = std::filesystem;
  ExperimentSpec spec = spec_in;
  spec.resolve_sequence();
  fs::create_directories(out_dir);
  const auto path = [&](const std::string& n) { return (fs::path(out_dir) / n).string(); };
  write_resolved_config(spec, path("config_resolved.txt"));
  const Phantom ph = make_phantom(spec.n1, spec.n2, spec.phantom_seed);
  const SamplingMaskSet masks = make_masks(spec.n1, spec.n2, spec.L, spec.r, spec.mask_seed);
  const KSpaceData data = synthesize(ph.truth, spec.seq, masks, spec.sigma, spec.noise_seed,
                                     spec.sigma_squared_noise);
  save_kspace(data, path("kspace.bin"));
  for (int c = 0; c < 3; ++c)
    write_pgm(ph.truth[c], path(std::string(channel_name(c)) + "_truth.pgm"), 0,
              spec.solver.box.hi[c]);
}

// Reconstructs the requested variants against the simulated data already in
// the directory, refreshing report rows for the variants that ran.
inline void reconstruct_in(const std::string& out_dir, const std::vector<std::string>& only) {
  namespace fs = std::filesystem;
  const auto path = [&](const std::string& n) { return (fs::path(out_dir) / n).string(); };
  if (!fs::exists(path("config_resolved.txt")) || !fs::exists(path("kspace.bin")))
    throw ConfigError("reconstruct: " + out_dir + " has no simulated run (use simulate first)");
  const ExperimentSpec spec = load_resolved_config(path("config_resolved.txt"));
  const KSpaceData data = load_kspace(path("kspace.bin"));
  const Phantom ph = make_phantom(spec.n1, spec.n2, spec.phantom_seed);

  std::vector<std::string> wanted = only.empty() ? spec.variants : only;
  std::map<std::string, VariantOutcome> rows;
  if (fs::exists(path("report.csv")))
    for (const auto& o : read_report_csv(path("report.csv"))) rows[o.variant] = o;

  for (const auto& vname : wanted) {
    const auto v = variant_from_name(vname);
    if (!v) throw ConfigError("unknown variant '" + vname + "'");
    SolveResult res = run_solver(data, spec.solver, spec.seq, *v);
    VariantOutcome o;
    o.variant = variant_name(*v);
    for (int c = 0; c < 3; ++c)
      o.rel_err[static_cast<size_t>(c)] = relative_error(res.u, ph.truth, c);
    o.outer_iters = static_cast<int>(res.trace.rows.size());
    o.jd_final = res.trace.rows.empty() ? res.trace.j0 : res.trace.rows.back().jd;
    res.trace.write_csv(path("trace_" + o.variant + ".csv"));
    for (int c = 0; c < 3; ++c) {
      write_pgm(res.u[c], path(std::string(channel_name(c)) + "_" + o.variant + ".pgm"), 0,
                spec.solver.box.hi[c]);
      const Image err = (res.u[c] - ph.truth[c]).abs();
      write_pgm(err, path(std::string(channel_name(c)) + "_err_" + o.variant + ".pgm"), 0,
                std::max(err.maxCoeff(), 1e-12));
    }
    rows[o.variant] = o;
  }

  std::vector<VariantOutcome> ordered;
  for (const auto& vname : spec.variants) {
    auto it = rows.find(vname);
    if (it != rows.end()) ordered.push_back(it->second);
  }
  write_report_csv(ordered, path("report.csv"));
}

inline void print_report_table(const std::string& out_dir) {
  namespace fs = std::filesystem;
  const fs::path report = fs::path(out_dir) / "report.csv";
  if (!fs::exists(report))
    throw ConfigError("compare: no report.csv in " + out_dir + " (run reconstruct first)");
  std::ifstream f(report.string());
  std::string line;
  std::getline(f, line);  // header
  std::printf("%-10s %-20s %10s %10s %10s\n", "variant", "source", "rho", "T1", "T2");
  while (std::getline(f, line)) {
    if (trim(line).empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string tok;
    while (std::getline(ss, tok, ',')) cells.push_back(tok);
    while (cells.size() < 5) cells.push_back("");
    std::printf("%-10s %-20s %10.4g %10.4g %10.4g\n", cells[0].c_str(), cells[1].c_str(),
                std::stod(cells[2]), std::stod(cells[3]), std::stod(cells[4]));
  }
}

}  // namespace detail

inline int cli_main(int argc, const char* const* argv) {
  CLI::App app{"quantitative MRI reconstruction via nested dictionary-learning LM"};
  app.require_subcommand(1);

  std::string config_path, out_dir, preset, variant;
  std::optional<std::uint64_t> seed;
  int size1 = 64, size2 = 0;

  auto* cmd_phantom = app.add_subcommand("phantom", "generate the ground-truth parameter maps");
  cmd_phantom->add_option("--size", size1, "image side length");
  cmd_phantom->add_option("--size2", size2, "second side length (defaults to --size)");
  cmd_phantom->add_option("--seed", seed, "phantom seed");
  cmd_phantom->add_option("--out", out_dir, "output directory")->required();

  auto* cmd_sim = app.add_subcommand("simulate", "synthesize noisy undersampled k-space data");
  cmd_sim->add_option("--config", config_path, "config file");
  cmd_sim->add_option("--preset", preset, "preset: desk, paper16x, paper32x");
  cmd_sim->add_option("--seed", seed, "master seed override");
  cmd_sim->add_option("--out", out_dir, "output directory")->required();

  auto* cmd_rec = app.add_subcommand("reconstruct", "reconstruct parameter maps from a run dir");
  cmd_rec->add_option("--config", config_path, "config file (fresh directory only)");
  cmd_rec->add_option("--preset", preset, "preset (fresh directory only)");
  cmd_rec->add_option("--seed", seed, "master seed override (fresh directory only)");
  cmd_rec->add_option("--variant", variant, "variant: nested, one-step, lm");
  cmd_rec->add_option("--out", out_dir, "run directory")->required();

  auto* cmd_cmp = app.add_subcommand("compare", "print the relative-error table of a run");
  cmd_cmp->add_option("--out", out_dir, "run directory")->required();

  auto* cmd_diag = app.add_subcommand("diagnose", "verify solver traces of a run");
  cmd_diag->add_option("--variant", variant, "restrict to one variant");
  cmd_diag->add_option("--out", out_dir, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    detail::print_error("config", e.what());
    return 1;
  }

  try {
    if (cmd_phantom->parsed()) {
      namespace fs = std::filesystem;
      fs::create_directories(out_dir);
      const int n2 = size2 > 0 ? size2 : size1;
      const Phantom ph = make_phantom(size1, n2, seed.value_or(7));
      BoxBounds box;
      for (int c = 0; c < 3; ++c)
        write_pgm(ph.truth[c],
                  (fs::path(out_dir) / (std::string(channel_name(c)) + "_truth.pgm")).string(),
                  0, box.hi[c]);
      ConfigWriter w;
      w.set("phantom.n1", size1);
      w.set("phantom.n2", n2);
      w.set("phantom.seed", seed.value_or(7));
      w.set("phantom.regions", ph.n_regions);
      w.write((fs::path(out_dir) / "phantom_meta.txt").string());
      std::cout << "phantom written to " << out_dir << "\n";
    } else if (cmd_sim->parsed()) {
      detail::simulate_into(detail::resolve_spec(preset, config_path, seed), out_dir);
      std::cout << "simulated data written to " << out_dir << "\n";
    } else if (cmd_rec->parsed()) {
      namespace fs = std::filesystem;
      const bool resolved = fs::exists(fs::path(out_dir) / "config_resolved.txt");
      if (!resolved) {
        detail::simulate_into(detail::resolve_spec(preset, config_path, seed), out_dir);
      } else if (!config_path.empty() || !preset.empty() || seed) {
        throw ConfigError(
            "reconstruct: directory already holds config_resolved.txt; "
            "drop --config/--preset/--seed or use a fresh directory");
      }
      std::vector<std::string> only;
      if (!variant.empty()) only.push_back(variant);
      detail::reconstruct_in(out_dir, only);
      std::cout << "reconstruction written to " << out_dir << "\n";
    } else if (cmd_cmp->parsed()) {
      detail::print_report_table(out_dir);
    } else if (cmd_diag->parsed()) {
      const auto diagnoses = diagnose_run_dir(out_dir, variant);
      bool ok = true;
      for (const auto& [vname, diag] : diagnoses) {
        for (const auto& c : diag.checks) {
          std::printf("%-10s %-24s %s", vname.c_str(), c.name.c_str(),
                      c.pass ? "PASS" : "FAIL");
          if (!c.pass) std::printf(" at iteration %d (%s)", c.fail_iteration, c.detail.c_str());
          std::printf("\n");
        }
        ok = ok && diag.all_pass();
      }
      if (!ok) {
        detail::print_error("numeric", "diagnose: invariant violated");
        return 2;
      }
    }
  } catch (const ConfigError& e) {
    detail::print_error("config", e.what());
    return 1;
  } catch (const NumericError& e) {
    detail::print_error("numeric", e.what());
    return 2;
  } catch (const std::exception& e) {
    detail::print_error("numeric", e.what());
    return 2;
  }
  return 0;
}

}  // namespace qmri
