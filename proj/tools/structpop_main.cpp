// Command-line interface: validation, equilibrium solving, stability
// analysis, direct simulation, end-to-end verification and parameter
// sweeps, with machine-readable CSV/JSON outputs.

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "structpop/structpop.hpp"

namespace fs = std::filesystem;
using namespace structpop;

namespace {

// Exit codes are a stable public contract.
enum ExitCode {
  kOk = 0,
  kFailure = 1,
  kValidation = 2,
  kConfig = 3,
  kNoEquilibrium = 4,
  kRoute = 5,
  kInconsistency = 6,
  kStiffness = 7,
  kVerification = 8,
};

struct CliOptions {
  std::string config_path;
  std::optional<long long> grid_cells;
  std::optional<std::string> out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> format;
  std::string sweep_param;
  std::vector<double> sweep_values;
};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

struct OutputSink {
  fs::path dir;
  bool csv = true;
  bool json = true;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();
  std::vector<std::pair<std::string, double>> timings;

  void ensure_dir() const {
    if (!dir.empty()) fs::create_directories(dir);
  }

  void write_text(const std::string& name, const std::string& content) const {
    ensure_dir();
    std::ofstream out(dir / name, std::ios::binary);
    out << content;
  }

  void note_timing(const std::string& what,
                   std::chrono::steady_clock::time_point from) {
    timings.emplace_back(
        what, std::chrono::duration<double>(std::chrono::steady_clock::now() - from)
                  .count());
  }

  // Timings go to a separate file so the data outputs stay byte-identical
  // across runs.
  void flush_timings() const {
    if (timings.empty()) return;
    std::string body;
    for (const auto& [k, v] : timings) body += k + "\t" + fmt(v) + "\n";
    write_text("timings.txt", body);
  }
};

RunConfig load(const CliOptions& opt) {
  RunConfig cfg = load_config(opt.config_path);
  if (opt.grid_cells) {
    if (*opt.grid_cells < 8) throw ConfigError("--grid-cells must be at least 8");
    cfg.n_cells = static_cast<std::size_t>(*opt.grid_cells);
  }
  if (opt.out_dir) cfg.output_directory = *opt.out_dir;
  if (opt.seed) cfg.seed = *opt.seed;
  if (opt.format) {
    cfg.output_formats = {*opt.format};
  }
  return cfg;
}

OutputSink make_sink(const RunConfig& cfg) {
  OutputSink sink;
  sink.dir = cfg.output_directory;
  sink.csv = sink.json = false;
  for (const auto& f : cfg.output_formats) {
    if (f == "csv") sink.csv = true;
    if (f == "json") sink.json = true;
  }
  return sink;
}

Json base_report(const RunConfig& cfg) {
  Json j;
  j["config_hash"] = config_hash(cfg.raw);
  j["grid"] = {{"m", cfg.m}, {"n_cells", cfg.n_cells}};
  j["seed"] = cfg.seed;
  j["version"] = "0.1.0";
  return j;
}

Json validation_to_json(const ValidationReport& r) {
  Json j;
  j["passed"] = r.passed();
  j["gamma_positive"] = r.gamma_positive;
  j["gamma_floor_observed"] = r.gamma_floor_observed;
  if (r.gamma_fail_point)
    j["gamma_fail_point"] = {r.gamma_fail_point->first, r.gamma_fail_point->second};
  j["mu_nonnegative"] = r.mu_nonnegative;
  if (r.mu_fail_point)
    j["mu_fail_point"] = {r.mu_fail_point->first, r.mu_fail_point->second};
  j["beta_nonnegative"] = r.beta_nonnegative;
  j["derivatives_agree"] = r.derivatives_agree;
  j["derivative_checks"] = Json::array();
  for (const auto& c : r.derivative_checks)
    j["derivative_checks"].push_back({{"surface", c.surface},
                                      {"which", c.which},
                                      {"max_rel_error", c.max_rel_error},
                                      {"passed", c.passed}});
  j["irreducible"] = r.irreducible;
  j["irreducibility"] = Json::array();
  for (const auto& e : r.irreducibility)
    j["irreducibility"].push_back({{"P", e.P},
                                   {"eps", e.eps},
                                   {"integral", e.integral},
                                   {"positive", e.positive}});
  return j;
}

Json equilibrium_to_json(const EquilibriumSolution& eq) {
  Json j;
  j["P_star"] = eq.P_star;
  if (eq.P_bar_star)
    j["P_bar_star"] = *eq.P_bar_star;
  else
    j["P_bar_star"] = nullptr;
  j["route"] =
      eq.route == EquilibriumSolution::Route::separable ? "separable" : "general";
  j["residual_stationary"] = eq.residual_stationary;
  j["residual_total"] = eq.residual_total;
  return j;
}

Json complex_to_json(const Complex& z) { return Json::array({z.real(), z.imag()}); }

Json spectral_to_json(const SpectralReport& r) {
  Json j;
  j["verdict"] = to_string(r.verdict);
  j["dominant_matrix_eig"] = complex_to_json(r.dominant_matrix_eig);
  j["rightmost_char_root"] =
      r.rightmost_char_root ? complex_to_json(*r.rightmost_char_root) : Json();
  j["char_roots"] = Json::array();
  for (const auto& z : r.char_roots) j["char_roots"].push_back(complex_to_json(z));
  j["positivity_condition_holds"] = r.positivity_condition_holds;
  j["positivity_margin"] = r.positivity_margin;
  j["sufficient_stability_holds"] = r.sufficient_stability_holds;
  j["sufficient_margin"] = r.sufficient_margin;
  if (r.instability_certificate)
    j["instability_certificate"] = {{"eps", r.instability_certificate->eps},
                                    {"K_at_zero", r.instability_certificate->K_at_zero},
                                    {"lambda_root", r.instability_certificate->lambda_root}};
  else
    j["instability_certificate"] = nullptr;
  j["cross_check_gap"] = std::isnan(r.cross_check_gap) ? Json() : Json(r.cross_check_gap);
  j["tol_verdict"] = r.tol_verdict;
  if (r.searched_region)
    j["searched_region"] = {r.searched_region->re_lo, r.searched_region->re_hi,
                            r.searched_region->im_lo, r.searched_region->im_hi};
  j["jacobian_max_rel_error"] = r.jacobian_max_rel_error;
  j["negligible_feedback"] = r.negligible_feedback;
  j["feedback_ratio"] = r.feedback_ratio;
  return j;
}

std::string equilibria_csv(const std::vector<EquilibriumSolution>& eqs) {
  std::string out = "P_star,P_bar_star,residual_stationary,residual_total,route\n";
  for (const auto& eq : eqs) {
    out += fmt(eq.P_star) + ",";
    out += (eq.P_bar_star ? fmt(*eq.P_bar_star) : std::string()) + ",";
    out += fmt(eq.residual_stationary) + "," + fmt(eq.residual_total) + ",";
    out += eq.route == EquilibriumSolution::Route::separable ? "separable" : "general";
    out += "\n";
  }
  return out;
}

std::string profile_csv(const EquilibriumSolution& eq, const SizeGrid& grid) {
  std::string out = "s,p_star\n";
  for (std::size_t i = 0; i < grid.n_cells; ++i)
    out += fmt(grid.midpoints[i]) + "," + fmt(eq.p_star[i]) + "\n";
  return out;
}

std::string trace_csv(const SimulationTrace& trace) {
  std::string out = "time,P\n";
  for (std::size_t i = 0; i < trace.times.size(); ++i)
    out += fmt(trace.times[i]) + "," + fmt(trace.totals[i]) + "\n";
  return out;
}

std::string snapshots_csv(const SimulationTrace& trace, const SizeGrid& grid) {
  std::string out = "time,s,density\n";
  for (std::size_t k = 0; k < trace.snapshot_times.size(); ++k)
    for (std::size_t i = 0; i < grid.n_cells; ++i)
      out += fmt(trace.snapshot_times[k]) + "," + fmt(grid.midpoints[i]) + "," +
             fmt(trace.snapshots[k][i]) + "\n";
  return out;
}

std::vector<double> probe_values(double P_max) {
  return {1.0, 0.5 * P_max, P_max};
}

int cmd_validate(const CliOptions& opt) {
  const RunConfig cfg = load(opt);
  auto sink = make_sink(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  const auto grid = cfg.make_grid();
  const auto report = validate_rates(cfg.rates, grid, probe_values(kDefaultPMax),
                                     cfg.seed);
  Json j = base_report(cfg);
  j["validation"] = validation_to_json(report);
  std::cout << j.dump(2) << "\n";
  if (sink.json) sink.write_text("validation.json", j.dump(2) + "\n");
  sink.note_timing("validate", t0);
  sink.flush_timings();
  return report.passed() ? kOk : kValidation;
}

Json scan_table(const RunConfig& cfg, const SizeGrid& grid) {
  // Diagnostic table of the root-scan objective over the configured range.
  Json rows = Json::array();
  const bool separable = cfg.rates.beta.is_separable() &&
                         cfg.equilibrium_route != "general";
  const int samples = 33;
  const double lo = cfg.P_range.first, hi = cfg.P_range.second;
  for (int i = 0; i < samples; ++i) {
    const double P = lo * std::pow(hi / lo, i / double(samples - 1));
    double value;
    try {
      value = separable ? net_reproduction(cfg.rates, grid, P) - 1.0
                        : detail::dominant_eigenvalue_only(
                              assemble_B_P(cfg.rates, grid, P).entries);
    } catch (const Error&) {
      continue;
    }
    rows.push_back({{"P", P}, {separable ? "R_minus_1" : "lambda_P", value}});
  }
  return rows;
}

int cmd_equilibrium(const CliOptions& opt) {
  const RunConfig cfg = load(opt);
  auto sink = make_sink(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  const auto grid = cfg.make_grid();
  const auto eqs =
      solve_equilibria(cfg.rates, grid, cfg.equilibrium_route, cfg.P_range);

  Json j = base_report(cfg);
  j["equilibria"] = Json::array();
  for (const auto& eq : eqs) j["equilibria"].push_back(equilibrium_to_json(eq));
  if (eqs.empty()) j["scan"] = scan_table(cfg, grid);
  std::cout << j.dump(2) << "\n";

  if (sink.json) sink.write_text("equilibria.json", j.dump(2) + "\n");
  if (sink.csv) {
    sink.write_text("equilibria.csv", equilibria_csv(eqs));
    for (std::size_t k = 0; k < eqs.size(); ++k)
      sink.write_text("profile_" + std::to_string(k) + ".csv",
                      profile_csv(eqs[k], grid));
  }
  sink.note_timing("equilibrium", t0);
  sink.flush_timings();
  return eqs.empty() ? kNoEquilibrium : kOk;
}

int cmd_stability(const CliOptions& opt) {
  const RunConfig cfg = load(opt);
  auto sink = make_sink(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  const auto grid = cfg.make_grid();
  const auto eqs =
      solve_equilibria(cfg.rates, grid, cfg.equilibrium_route, cfg.P_range);
  if (eqs.empty()) {
    Json j = base_report(cfg);
    j["equilibria"] = Json::array();
    j["scan"] = scan_table(cfg, grid);
    std::cout << j.dump(2) << "\n";
    return kNoEquilibrium;
  }

  Json j = base_report(cfg);
  j["equilibria"] = Json::array();
  j["stability"] = Json::array();
  for (const auto& eq : eqs) {
    j["equilibria"].push_back(equilibrium_to_json(eq));
    const auto report = spectral_verdict(cfg.rates, eq, grid, cfg.stability_region);
    j["stability"].push_back(spectral_to_json(report));
  }
  std::cout << j.dump(2) << "\n";
  if (sink.json) sink.write_text("stability.json", j.dump(2) + "\n");
  sink.note_timing("stability", t0);
  sink.flush_timings();
  return kOk;
}

int cmd_simulate(const CliOptions& opt) {
  const RunConfig cfg = load(opt);
  auto sink = make_sink(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  const auto grid = cfg.make_grid();

  std::vector<double> p0;
  std::optional<EquilibriumSolution> eq;
  if (cfg.initial_profile) {
    p0 = initial_profile_from_json(*cfg.initial_profile, grid);
  } else {
    const auto eqs =
        solve_equilibria(cfg.rates, grid, cfg.equilibrium_route, cfg.P_range);
    if (eqs.empty()) {
      Json j = base_report(cfg);
      j["scan"] = scan_table(cfg, grid);
      std::cout << j.dump(2) << "\n";
      return kNoEquilibrium;
    }
    // Polish the equilibrium to the scheme's own fixed point so the
    // measured rate is not floored by the O(h) gap between the quadrature
    // profile and the discrete steady state.
    eq = refine_discrete_equilibrium(cfg.rates, eqs.front(), grid);
    std::vector<double> shape;
    PerturbationMode mode = PerturbationMode::uniform;
    if (cfg.perturbation_mode == "random") mode = PerturbationMode::random;
    if (cfg.perturbation_mode == "first_eigvec") {
      mode = PerturbationMode::first_eigvec;
      const auto lin = assemble_linearized(cfg.rates, *eq, grid);
      const auto spec = dense_eigen(lin.matrix);
      shape.resize(grid.n_cells);
      for (std::size_t i = 0; i < grid.n_cells; ++i)
        shape[i] = spec.dominant_vector[i].real();
    }
    p0 = perturb_equilibrium(*eq, grid, cfg.perturbation_amplitude, mode, cfg.seed,
                             shape);
  }

  const auto trace = simulate(p0, cfg.rates, grid, cfg.t_end, cfg.cadence);

  Json j = base_report(cfg);
  j["t_end"] = cfg.t_end;
  j["steps"] = trace.times.size() - 1;
  j["P_initial"] = trace.totals.front();
  j["P_final"] = trace.totals.back();
  double mb = 0.0;
  for (double r : trace.mass_balance_residuals) mb = std::fmax(mb, r);
  j["mass_balance_max"] = mb;
  if (eq) {
    j["equilibrium"] = equilibrium_to_json(*eq);
    try {
      const auto est = measure_growth_rate(trace, eq->P_star,
                                           {0.2 * cfg.t_end, 0.9 * cfg.t_end});
      j["measured_growth_rate"] = est.rate;
      j["growth_fit_residual"] = est.fit_residual;
      j["growth_oscillatory"] = est.oscillatory;
    } catch (const Error& e) {
      j["measured_growth_rate"] = nullptr;
      j["growth_rate_note"] = e.what();
    }
  }
  std::cout << j.dump(2) << "\n";

  if (sink.csv) {
    sink.write_text("trace.csv", trace_csv(trace));
    if (!trace.snapshot_times.empty())
      sink.write_text("snapshots.csv", snapshots_csv(trace, grid));
  }
  if (sink.json) sink.write_text("simulate.json", j.dump(2) + "\n");
  sink.note_timing("simulate", t0);
  sink.flush_timings();
  return kOk;
}

int cmd_verify(const CliOptions& opt) {
  const RunConfig cfg = load(opt);
  auto sink = make_sink(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  const auto table = run_verification(cfg);

  Json j = base_report(cfg);
  j["checks"] = Json::array();
  for (const auto& c : table.checks)
    j["checks"].push_back({{"name", c.name},
                           {"value", c.value},
                           {"threshold", c.threshold},
                           {"relation", c.relation},
                           {"passed", c.passed},
                           {"note", c.note}});
  j["all_passed"] = table.all_passed();
  std::cout << j.dump(2) << "\n";

  std::string csv = "check,value,threshold,relation,passed,note\n";
  for (const auto& c : table.checks)
    csv += c.name + "," + fmt(c.value) + "," + fmt(c.threshold) + "," + c.relation +
           "," + (c.passed ? "1" : "0") + "," + c.note + "\n";
  if (sink.csv) sink.write_text("verify.csv", csv);
  if (sink.json) sink.write_text("verify.json", j.dump(2) + "\n");
  sink.note_timing("verify", t0);
  sink.flush_timings();

  if (!table.all_passed()) {
    std::cerr << "verification failures:";
    for (const auto& name : table.failures()) std::cerr << " " << name;
    std::cerr << "\n";
    return kVerification;
  }
  return kOk;
}

struct SweepRow {
  double value = 0.0;
  std::size_t equilibria_count = 0;
  double dom_re = 0.0, dom_im = 0.0;
  bool has_dom = false;
  std::string verdict;
  std::string status = "ok";
};

SweepRow sweep_one(const RunConfig& base, const std::string& param, double value,
                   const CliOptions& opt) {
  SweepRow row;
  row.value = value;
  try {
    Json raw = base.raw;
    set_config_value(raw, param, value);
    RunConfig cfg = parse_config(raw);
    if (opt.grid_cells) cfg.n_cells = static_cast<std::size_t>(*opt.grid_cells);
    const auto grid = cfg.make_grid();
    const auto eqs =
        solve_equilibria(cfg.rates, grid, cfg.equilibrium_route, cfg.P_range);
    row.equilibria_count = eqs.size();
    if (eqs.empty()) {
      row.status = "no_equilibrium";
      return row;
    }
    const auto report = spectral_verdict(cfg.rates, eqs.front(), grid,
                                         cfg.stability_region);
    row.dom_re = report.dominant_matrix_eig.real();
    row.dom_im = report.dominant_matrix_eig.imag();
    row.has_dom = true;
    row.verdict = to_string(report.verdict);
  } catch (const Error& e) {
    row.status = std::string("error: ") + e.what();
  }
  return row;
}

int cmd_sweep(const CliOptions& opt) {
  const RunConfig cfg = load(opt);
  auto sink = make_sink(cfg);
  const auto t0 = std::chrono::steady_clock::now();

  // Fail fast on a bad parameter path, before any work is launched.
  {
    Json probe = cfg.raw;
    set_config_value(probe, opt.sweep_param, opt.sweep_values.empty()
                                                 ? 0.0
                                                 : opt.sweep_values.front());
  }

  // Values run concurrently; rows are joined in input order.
  std::vector<std::future<SweepRow>> futures;
  futures.reserve(opt.sweep_values.size());
  for (double v : opt.sweep_values)
    futures.push_back(std::async(std::launch::async, sweep_one, std::cref(cfg),
                                 std::cref(opt.sweep_param), v, std::cref(opt)));

  std::string csv =
      "param,equilibria_count,dominant_eig_re,dominant_eig_im,verdict,status\n";
  Json rows = Json::array();
  for (auto& f : futures) {
    const SweepRow row = f.get();
    csv += fmt(row.value) + "," + std::to_string(row.equilibria_count) + ",";
    csv += (row.has_dom ? fmt(row.dom_re) : std::string()) + ",";
    csv += (row.has_dom ? fmt(row.dom_im) : std::string()) + ",";
    csv += row.verdict + "," + row.status + "\n";
    rows.push_back({{"param", row.value},
                    {"equilibria_count", row.equilibria_count},
                    {"dominant_eig_re", row.has_dom ? Json(row.dom_re) : Json()},
                    {"dominant_eig_im", row.has_dom ? Json(row.dom_im) : Json()},
                    {"verdict", row.verdict},
                    {"status", row.status}});
  }

  Json j = base_report(cfg);
  j["parameter"] = opt.sweep_param;
  j["rows"] = rows;
  std::cout << j.dump(2) << "\n";
  if (sink.csv) sink.write_text("sweep.csv", csv);
  if (sink.json) sink.write_text("sweep.json", j.dump(2) + "\n");
  sink.note_timing("sweep", t0);
  sink.flush_timings();
  return kOk;
}

int dispatch(const std::string& command, const CliOptions& opt) {
  try {
    if (command == "validate") return cmd_validate(opt);
    if (command == "equilibrium") return cmd_equilibrium(opt);
    if (command == "stability") return cmd_stability(opt);
    if (command == "simulate") return cmd_simulate(opt);
    if (command == "verify") return cmd_verify(opt);
    if (command == "sweep") return cmd_sweep(opt);
    std::cerr << "unknown command '" << command << "'\n";
    return kConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const RouteError& e) {
    std::cerr << "route error: " << e.what() << "\n";
    return kRoute;
  } catch (const InconsistencyError& e) {
    std::cerr << "inconsistency: " << e.what() << "\n";
    return kInconsistency;
  } catch (const StiffnessError& e) {
    std::cerr << "stiffness: " << e.what() << "\n";
    return kStiffness;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "structpop: equilibria, linearized stability and direct simulation of "
      "size-structured population models with distributed states at birth"};
  app.require_subcommand(1);

  CliOptions opt;
  long long grid_cells = 0;
  std::string out_dir, format;
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "JSON run configuration")
        ->required();
    sub->add_option("--grid-cells", grid_cells, "override grid.n_cells");
    sub->add_option("--out", out_dir, "output directory override");
    sub->add_option("--seed", seed, "seed override");
    sub->add_option("--format", format, "restrict outputs to csv or json")
        ->check(CLI::IsMember({"csv", "json"}));
  };

  auto* validate = app.add_subcommand("validate", "check the vital-rate model");
  auto* equilibrium =
      app.add_subcommand("equilibrium", "compute positive equilibria");
  auto* stability =
      app.add_subcommand("stability", "linearized stability analysis");
  auto* simulate = app.add_subcommand("simulate", "direct time integration");
  auto* verify =
      app.add_subcommand("verify", "end-to-end consistency verification");
  auto* sweep = app.add_subcommand("sweep", "parameter sweep");
  for (auto* sub : {validate, equilibrium, stability, simulate, verify, sweep})
    add_common(sub);
  sweep->add_option("--param", opt.sweep_param, "dotted config path of the swept field")
      ->required();
  sweep->add_option("--values", opt.sweep_values, "swept values")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfig;
  }

  for (auto* sub : {validate, equilibrium, stability, simulate, verify, sweep}) {
    if (!sub->parsed()) continue;
    if (sub->count("--grid-cells")) opt.grid_cells = grid_cells;
    if (sub->count("--out")) opt.out_dir = out_dir;
    if (sub->count("--seed")) opt.seed = seed;
    if (sub->count("--format")) opt.format = format;
    return dispatch(sub->get_name(), opt);
  }
  return kConfig;
}
