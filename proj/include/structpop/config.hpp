#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "structpop/errors.hpp"
#include "structpop/grid.hpp"
#include "structpop/rates.hpp"

namespace structpop {

using Json = nlohmann::json;

/// Parsed run configuration. The raw JSON is kept alongside the typed
/// fields so reports can echo the exact input and hash it.
struct RunConfig {
  Json raw;

  VitalRates rates;
  double m = 1.0;
  std::size_t n_cells = 200;

  std::string equilibrium_route = "auto";  // auto | separable | general
  std::pair<double, double> P_range{1e-3, kDefaultPMax};

  std::optional<Rectangle> stability_region;

  double t_end = 4.0;
  double cadence = 0.0;
  double perturbation_amplitude = 0.01;
  std::string perturbation_mode = "uniform";  // uniform | first_eigvec | random
  std::optional<Json> initial_profile;        // explicit profile family

  std::string output_directory = ".";
  std::vector<std::string> output_formats{"csv", "json"};

  std::uint64_t seed = 42;

  // Verification tolerances (cmd_verify); all overridable from the config.
  double verify_route_gap_tol = 2e-2;
  double verify_ratio_lo = 1.5;
  double verify_ratio_hi = 4.0;
  double verify_jacobian_tol = 1e-5;
  double verify_mass_balance_tol = 1e-6;
  double verify_persistence_tol = 1e-2;
  double verify_rate_tol_floor = 5e-2;  // rate checks use max(floor, 10*h)

  SizeGrid make_grid() const { return SizeGrid::uniform(m, n_cells); }
};

namespace detail {

inline double json_number(const Json& j, const std::string& where) {
  if (!j.is_number())
    throw ConfigError("config field '" + where + "' must be a number");
  const double v = j.get<double>();
  if (!std::isfinite(v))
    throw ConfigError("config field '" + where + "' must be finite");
  return v;
}

inline RateSurface surface_from_json(const Json& j, const std::string& where) {
  if (!j.is_object() || !j.contains("family"))
    throw ConfigError("config field '" + where + "' must be {family, params}");
  const std::string family = j.at("family").get<std::string>();
  if (family == "product") {
    if (!j.contains("factors") || !j.at("factors").is_array() ||
        j.at("factors").size() != 2)
      throw ConfigError("config field '" + where +
                        "': product family needs a 'factors' array of two surfaces");
    return make_product_surface(
        surface_from_json(j.at("factors")[0], where + ".factors[0]"),
        surface_from_json(j.at("factors")[1], where + ".factors[1]"));
  }
  std::map<std::string, double> params;
  if (j.contains("params")) {
    if (!j.at("params").is_object())
      throw ConfigError("config field '" + where + ".params' must be an object");
    for (const auto& [key, value] : j.at("params").items())
      params[key] = json_number(value, where + ".params." + key);
  }
  return make_rate_surface(family, params);
}

inline FertilityKernel fertility_from_json(const Json& j, double m) {
  if (!j.is_object() || !j.contains("kind"))
    throw ConfigError("config field 'model.beta' must carry a 'kind'");
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "separable") {
    if (!j.contains("beta1") || !j.contains("beta2"))
      throw ConfigError("separable fertility needs 'beta1' and 'beta2'");
    return make_fertility(
        FertilityKernel::separable(
            surface_from_json(j.at("beta1"), "model.beta.beta1"),
            surface_from_json(j.at("beta2"), "model.beta.beta2")),
        m);
  }
  if (kind == "general") {
    if (!j.contains("terms") || !j.at("terms").is_array() || j.at("terms").empty())
      throw ConfigError(
          "general fertility needs a nonempty 'terms' array of "
          "{beta1, beta2} pairs");
    std::vector<std::pair<RateSurface, RateSurface>> terms;
    std::size_t idx = 0;
    for (const auto& term : j.at("terms")) {
      const std::string where = "model.beta.terms[" + std::to_string(idx++) + "]";
      if (!term.contains("beta1") || !term.contains("beta2"))
        throw ConfigError(where + " needs 'beta1' and 'beta2'");
      terms.emplace_back(surface_from_json(term.at("beta1"), where + ".beta1"),
                         surface_from_json(term.at("beta2"), where + ".beta2"));
    }
    return make_fertility(FertilityKernel::general_sum(std::move(terms)), m);
  }
  throw ConfigError("unknown fertility kind '" + kind +
                    "' (expected 'separable' or 'general')");
}

}  // namespace detail

inline RunConfig parse_config(const Json& j) {
  RunConfig cfg;
  cfg.raw = j;
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  if (!j.contains("model") || !j.contains("grid"))
    throw ConfigError("config needs 'model' and 'grid' sections");

  const auto& grid = j.at("grid");
  cfg.m = detail::json_number(grid.at("m"), "grid.m");
  if (!(cfg.m > 0.0)) throw ConfigError("grid.m must be positive");
  if (!grid.contains("n_cells") || !grid.at("n_cells").is_number_integer())
    throw ConfigError("grid.n_cells must be an integer");
  const auto cells = grid.at("n_cells").get<long long>();
  if (cells < 8) throw ConfigError("grid.n_cells must be at least 8");
  cfg.n_cells = static_cast<std::size_t>(cells);

  const auto& model = j.at("model");
  if (!model.contains("gamma") || !model.contains("mu") || !model.contains("beta"))
    throw ConfigError("model needs 'gamma', 'mu' and 'beta'");
  cfg.rates.m = cfg.m;
  cfg.rates.gamma = detail::surface_from_json(model.at("gamma"), "model.gamma");
  cfg.rates.mu = detail::surface_from_json(model.at("mu"), "model.mu");
  cfg.rates.beta = detail::fertility_from_json(model.at("beta"), cfg.m);

  if (j.contains("equilibrium")) {
    const auto& eq = j.at("equilibrium");
    if (eq.contains("route")) {
      cfg.equilibrium_route = eq.at("route").get<std::string>();
      if (cfg.equilibrium_route != "auto" && cfg.equilibrium_route != "separable" &&
          cfg.equilibrium_route != "general")
        throw ConfigError("equilibrium.route must be auto, separable or general");
    }
    if (eq.contains("P_range")) {
      const auto& pr = eq.at("P_range");
      if (!pr.is_array() || pr.size() != 2)
        throw ConfigError("equilibrium.P_range must be [lo, hi]");
      cfg.P_range = {detail::json_number(pr[0], "equilibrium.P_range[0]"),
                     detail::json_number(pr[1], "equilibrium.P_range[1]")};
      if (!(cfg.P_range.first > 0.0) || !(cfg.P_range.first < cfg.P_range.second))
        throw ConfigError("equilibrium.P_range must satisfy 0 < lo < hi");
    }
  }

  if (j.contains("stability")) {
    const auto& st = j.at("stability");
    if (st.contains("region")) {
      const auto& r = st.at("region");
      if (!r.is_array() || r.size() != 4)
        throw ConfigError("stability.region must be [re_lo, re_hi, im_lo, im_hi]");
      cfg.stability_region = Rectangle(
          detail::json_number(r[0], "stability.region[0]"),
          detail::json_number(r[1], "stability.region[1]"),
          detail::json_number(r[2], "stability.region[2]"),
          detail::json_number(r[3], "stability.region[3]"));
    }
  }

  if (j.contains("simulate")) {
    const auto& sim = j.at("simulate");
    if (sim.contains("t_end"))
      cfg.t_end = detail::json_number(sim.at("t_end"), "simulate.t_end");
    if (cfg.t_end < 0.0) throw ConfigError("simulate.t_end must be nonnegative");
    if (sim.contains("cadence"))
      cfg.cadence = detail::json_number(sim.at("cadence"), "simulate.cadence");
    if (sim.contains("perturbation")) {
      const auto& p = sim.at("perturbation");
      if (p.contains("amplitude"))
        cfg.perturbation_amplitude =
            detail::json_number(p.at("amplitude"), "simulate.perturbation.amplitude");
      if (p.contains("mode")) {
        cfg.perturbation_mode = p.at("mode").get<std::string>();
        if (cfg.perturbation_mode != "uniform" &&
            cfg.perturbation_mode != "first_eigvec" &&
            cfg.perturbation_mode != "random")
          throw ConfigError(
              "simulate.perturbation.mode must be uniform, first_eigvec or random");
      }
    }
    if (sim.contains("initial")) cfg.initial_profile = sim.at("initial");
  }

  if (j.contains("output")) {
    const auto& out = j.at("output");
    if (out.contains("directory"))
      cfg.output_directory = out.at("directory").get<std::string>();
    if (out.contains("formats")) {
      cfg.output_formats.clear();
      for (const auto& f : out.at("formats")) {
        const std::string fmt = f.get<std::string>();
        if (fmt != "csv" && fmt != "json")
          throw ConfigError("output.formats entries must be 'csv' or 'json'");
        cfg.output_formats.push_back(fmt);
      }
    }
  }

  if (j.contains("seed")) {
    if (!j.at("seed").is_number_integer())
      throw ConfigError("seed must be an integer");
    cfg.seed = j.at("seed").get<std::uint64_t>();
  }

  if (j.contains("verify")) {
    const auto& v = j.at("verify");
    auto grab = [&](const char* key, double& slot) {
      if (v.contains(key)) slot = detail::json_number(v.at(key), std::string("verify.") + key);
    };
    grab("route_gap_tol", cfg.verify_route_gap_tol);
    grab("ratio_lo", cfg.verify_ratio_lo);
    grab("ratio_hi", cfg.verify_ratio_hi);
    grab("jacobian_tol", cfg.verify_jacobian_tol);
    grab("mass_balance_tol", cfg.verify_mass_balance_tol);
    grab("persistence_tol", cfg.verify_persistence_tol);
    grab("rate_tol_floor", cfg.verify_rate_tol_floor);
  }
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw ConfigError("cannot open config file '" + path + "'");
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError("malformed JSON in '" + path + "': " + e.what());
  }
  return parse_config(j);
}

/// FNV-1a hash of the canonical config dump; embedded in every report so
/// outputs can be traced back to their exact inputs.
inline std::string config_hash(const Json& j) {
  const std::string dump = j.dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

/// Builds an explicit initial profile from a registry family spec
/// (evaluated at P = 0), used when a simulation starts from configured
/// data instead of a perturbed equilibrium.
inline std::vector<double> initial_profile_from_json(const Json& j,
                                                     const SizeGrid& grid) {
  const auto surface = detail::surface_from_json(j, "simulate.initial");
  std::vector<double> p0(grid.n_cells);
  for (std::size_t i = 0; i < grid.n_cells; ++i)
    p0[i] = std::fmax(surface(grid.midpoints[i], 0.0), 0.0);
  return p0;
}

/// Addresses a single numeric field by dotted path (e.g.
/// "model.beta.beta1.params.a") and overwrites it; used by parameter sweeps.
inline void set_config_value(Json& j, const std::string& path, double value) {
  Json* cur = &j;
  std::size_t begin = 0;
  std::vector<std::string> keys;
  while (begin <= path.size()) {
    const auto dot = path.find('.', begin);
    const std::string key = path.substr(begin, dot == std::string::npos
                                                   ? std::string::npos
                                                   : dot - begin);
    if (key.empty()) throw ConfigError("bad parameter path '" + path + "'");
    keys.push_back(key);
    if (dot == std::string::npos) break;
    begin = dot + 1;
  }
  for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
    if (!cur->is_object() || !cur->contains(keys[i]))
      throw ConfigError("parameter path '" + path + "' does not exist");
    cur = &cur->at(keys[i]);
  }
  if (!cur->is_object() || !cur->contains(keys.back()) ||
      !cur->at(keys.back()).is_number())
    throw ConfigError("parameter path '" + path +
                      "' does not address a numeric field");
  cur->at(keys.back()) = value;
}

}  // namespace structpop
