#pragma once
// Scenario configuration (JSON), the three built-in decoherence presets,
// batch execution and file emission: trajectory CSV, switch-log CSV,
// summary JSON and a flat key-value certificate report.
//
// Complex matrix entries are encoded as {"re": x, "im": y} objects,
// row-major; plain numbers are accepted on input as purely real entries.
// Floating point values in CSV and reports carry 17 significant digits.

#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "qswitch/certificates.hpp"
#include "qswitch/errors.hpp"
#include "qswitch/switching.hpp"

namespace qswitch {

using nlohmann::json;

struct OutputConfig {
  std::string directory = "qswitch-out";
  bool write_csv = true;
  bool write_json = true;
};

struct ScenarioConfig {
  std::string name = "custom";
  OpenSystemSpec system;
  DensityMatrix rho0;
  DensityMatrix rho_target;
  ControllerSpec controller;
  SwitchingPolicy policy;
  double t_final = 1.0;
  double dt = 1e-4;
  double event_tol = 1e-9;
  std::optional<FtsCertificate> fts;
  std::optional<FtcsCertificate> ftcs;
  FtcsWindow ftcs_window = FtcsWindow::FromVarrho;
  OutputConfig output;
  json reference;  // golden values shipped with presets, may be empty
  std::vector<std::string> notes;
  std::vector<std::string> warnings;  // filled during validation
};

namespace cfg_detail {

[[noreturn]] inline void fail(const std::string& path, const std::string& msg) {
  throw ValidationError(path + ": " + msg);
}

inline const json& require(const json& j, const char* key, const std::string& path) {
  if (!j.is_object() || !j.contains(key)) fail(path + "." + key, "missing");
  return j.at(key);
}

inline double as_number(const json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  return j.get<double>();
}

inline double number_at(const json& j, const char* key, const std::string& path) {
  return as_number(require(j, key, path), path + "." + std::string(key));
}

inline double number_or(const json& j, const char* key, double fallback, const std::string& path) {
  if (!j.is_object() || !j.contains(key)) return fallback;
  return as_number(j.at(key), path + "." + std::string(key));
}

inline Complex parse_complex(const json& j, const std::string& path) {
  if (j.is_number()) return Complex(j.get<double>(), 0.0);
  if (!j.is_object() || !j.contains("re")) fail(path, "expected {re, im} or a number");
  const double re = as_number(j.at("re"), path + ".re");
  const double im = j.contains("im") ? as_number(j.at("im"), path + ".im") : 0.0;
  return {re, im};
}

inline Matrix2c parse_cmat2(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 2) fail(path, "expected a 2x2 matrix");
  Matrix2c m;
  for (int r = 0; r < 2; ++r) {
    const json& row = j.at(r);
    if (!row.is_array() || row.size() != 2) fail(path + "[" + std::to_string(r) + "]", "expected 2 entries");
    for (int c = 0; c < 2; ++c)
      m(r, c) = parse_complex(row.at(c),
                              path + "[" + std::to_string(r) + "][" + std::to_string(c) + "]");
  }
  return m;
}

inline Mat3 parse_mat3(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3) fail(path, "expected a 3x3 matrix");
  Mat3 m;
  for (int r = 0; r < 3; ++r) {
    const json& row = j.at(r);
    if (!row.is_array() || row.size() != 3) fail(path + "[" + std::to_string(r) + "]", "expected 3 entries");
    for (int c = 0; c < 3; ++c)
      m(r, c) = as_number(row.at(c),
                          path + "[" + std::to_string(r) + "][" + std::to_string(c) + "]");
  }
  return m;
}

inline json complex_json(const Complex& z) { return json{{"re", z.real()}, {"im", z.imag()}}; }

inline json cmat2_json(const Matrix2c& m) {
  json rows = json::array();
  for (int r = 0; r < 2; ++r) {
    json row = json::array();
    for (int c = 0; c < 2; ++c) row.push_back(complex_json(m(r, c)));
    rows.push_back(row);
  }
  return rows;
}

inline json mat3_json(const Mat3& m) {
  json rows = json::array();
  for (int r = 0; r < 3; ++r) {
    json row = json::array();
    for (int c = 0; c < 3; ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

inline AffineThreshold parse_threshold(const json& j, const std::string& path) {
  if (!j.is_object()) fail(path, "expected {slope, intercept}");
  AffineThreshold out;
  out.slope = number_or(j, "slope", 0.0, path);
  out.intercept = number_or(j, "intercept", 0.0, path);
  return out;
}

inline std::string fmt17(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

}  // namespace cfg_detail

inline std::vector<std::string> preset_names() { return {"amplitude", "dephasing", "polarization"}; }

inline json preset_json(const std::string& name) {
  using cfg_detail::cmat2_json;
  using cfg_detail::mat3_json;

  const json sigma1 = cmat2_json(sigma(1));
  const json sigma2 = cmat2_json(sigma(2));
  const json sigma3 = cmat2_json(sigma(3));
  const json weight = mat3_json(0.078 * Mat3::Identity());

  Matrix2c rho0_m, rho_d_m;
  rho0_m << Complex(0.8, 0.0), Complex(0.0, 0.4), Complex(0.0, -0.4), Complex(0.2, 0.0);
  rho_d_m << Complex(0.1, 0.0), Complex(-0.3, 0.0), Complex(-0.3, 0.0), Complex(0.9, 0.0);
  const double b1 = std::sqrt(2.96);  // |s0 - s_d| for the shared states

  json base = {
      {"name", name},
      {"system",
       {{"h0", cmat2_json(5.0 * sigma(3))},
        {"controls", json::array({sigma1, sigma2})},
        {"channels", json::array()}}},
      {"states", {{"rho0", cmat2_json(rho0_m)}, {"rho_d", cmat2_json(rho_d_m)}}},
      {"controller",
       {{"weight", weight},
        {"xi", 1.0},
        {"family", "contractive"},
        {"gamma", {{"constant", -1.5}}},
        {"theta_hat", 0.0}}},
      {"policy",
       {{"kind", "shrink"},
        {"initial_mode", 1},
        {"terminal_vartheta", 1e-30},
        {"min_dwell", 0.0}}},
      {"simulation", {{"t_final", 0.0}, {"dt", 1e-4}, {"event_tol", 1e-9}}},
      {"output", {{"dir", "qswitch-out"}, {"formats", json::array({"csv", "json"})}}},
  };

  const auto shrink = [](double th1s, double th1i, double th2s, double th2i, double vs1s,
                         double vs1i, double vs2s, double vs2i) {
    return json{{"vartheta",
                 json::array({{{"slope", th1s}, {"intercept", th1i}},
                              {{"slope", th2s}, {"intercept", th2i}}})},
                {"varsigma",
                 json::array({{{"slope", vs1s}, {"intercept", vs1i}},
                              {{"slope", vs2s}, {"intercept", vs2i}}})}};
  };

  if (name == "amplitude") {
    Matrix2c lower;
    lower << Complex(0.0, 0.0), Complex(0.0, 0.0), Complex(1.0, 0.0), Complex(0.0, 0.0);
    base["system"]["channels"] = json::array({{{"operator", cmat2_json(lower)}, {"rate", 0.1}}});
    base["controller"]["theta_hat"] = -0.001;  // -0.1 g^T g with g = (0,0,-0.1)
    base["policy"]["fixed"] = {{"kappa", {0.0018, 0.00021}}, {"iota", {0.0047, 0.0001}}};
    base["policy"]["shrink"] = shrink(0.0005, 0.0018, 0.00001, 0.000021, 0.00008, 0.0047, 1e-6, 0.0);
    base["simulation"]["t_final"] = 10.0;
    base["certificates"] = {
        {"fts",
         {{"weight_w", mat3_json(0.1 * Mat3::Identity())},
          {"alpha", 0.01},
          {"c1", 3.0},
          {"c2", 4.0},
          {"zeta", 0.01}}},
        {"ftcs",
         {{"alpha1_coeff", 0.078},
          {"alpha2_coeff", 0.08},
          {"b1", b1},
          {"eta", 0.159},
          {"varrho", 7.0},
          {"window", "from-varrho"}}}};
    base["reference"] = {
        {"fidelity", 0.994},
        {"eta", 0.06},
        {"final_rho", cmat2_json((Matrix2c() << Complex(0.10, 0.0), Complex(-0.29, 0.03),
                                  Complex(-0.29, -0.03), Complex(0.90, 0.0))
                                     .finished())}};
    base["notes"] = {"xi is a free gain for this scenario; 1.0 is the default and can be swept.",
                     "theta_hat = -0.1 g^T g is negative; certificate theory assumes a positive offset.",
                     "Certificate inputs W, alpha, c1, c2, zeta are configuration values."};
  } else if (name == "dephasing") {
    base["system"]["channels"] = json::array({{{"operator", sigma3}, {"rate", 0.1}}});
    base["controller"]["xi"] = 2.8;
    base["policy"]["fixed"] = {{"kappa", {1e-6, 0.00035}}, {"iota", {0.0002, 1e-6}}};
    base["policy"]["shrink"] = shrink(0.3, 0.0, 0.4, 0.00035, 1.2, 0.0002, 1e-6, 0.0);
    base["simulation"]["t_final"] = 1.8;
    base["certificates"] = {
        {"fts",
         {{"weight_w", mat3_json(Mat3::Identity())},
          {"alpha", 0.01},
          {"c1", 3.0},
          {"c2", 4.0},
          {"zeta", 0.01}}},
        {"ftcs",
         {{"alpha1_coeff", 0.078},
          {"alpha2_coeff", 0.08},
          {"b1", b1},
          {"eta", 0.3},
          {"varrho", 1.26},
          {"window", "from-varrho"}}}};
    base["notes"] = {"Gamma, theta_hat, fixed thresholds and certificate inputs are defaults for "
                     "this scenario (theta_hat = -0.1 g^T g = 0), not scenario data.",
                     "Fixed thresholds default to the shrink intercepts clamped to 1e-6.",
                     "xi defaults to 2.8 here: with xi = 1 the closed loop parks on the "
                     "singular-set intersection and the terminal Lyapunov value plateaus near "
                     "7e-4 regardless of step size."};
  } else if (name == "polarization") {
    base["system"]["channels"] = json::array({{{"operator", sigma3}, {"rate", 0.01}},
                                              {{"operator", sigma2}, {"rate", 0.01}},
                                              {{"operator", sigma1}, {"rate", 0.01}}});
    base["policy"]["fixed"] = {{"kappa", {0.001, 0.002}}, {"iota", {1e-6, 1e-6}}};
    base["policy"]["shrink"] = shrink(0.01, 0.001, 0.01, 0.002, 0.001, 0.0, 1e-6, 0.0);
    base["simulation"]["t_final"] = 2.0;
    base["certificates"] = {
        {"fts",
         {{"weight_w", mat3_json(Mat3::Identity())},
          {"alpha", 0.01},
          {"c1", 3.0},
          {"c2", 4.0},
          {"zeta", 0.01}}},
        {"ftcs",
         {{"alpha1_coeff", 0.078},
          {"alpha2_coeff", 0.08},
          {"b1", b1},
          {"eta", 0.3},
          {"varrho", 1.4},
          {"window", "from-varrho"}}}};
    base["notes"] = {"P, the states, Gamma, theta_hat and certificate inputs are inherited "
                     "defaults for this scenario, not scenario-specific data.",
                     "Fixed thresholds default to the shrink intercepts clamped to 1e-6."};
  } else {
    throw ConfigError("unknown preset '" + name + "'");
  }
  return base;
}

inline ScenarioConfig parse_config(json j) {
  using namespace cfg_detail;

  if (j.contains("preset")) {
    if (!j.at("preset").is_string()) fail("preset", "expected a preset name");
    json base = preset_json(j.at("preset").get<std::string>());
    j.erase("preset");
    base.merge_patch(j);
    j = std::move(base);
  }

  ScenarioConfig cfg;
  if (j.contains("name")) cfg.name = j.at("name").get<std::string>();

  {
    const json& sys = require(j, "system", "");
    cfg.system.free_hamiltonian = parse_cmat2(require(sys, "h0", "system"), "system.h0");
    const json& ctl = require(sys, "controls", "system");
    if (!ctl.is_array() || ctl.size() != 2)
      fail("system.controls", "exactly two control Hamiltonians are required");
    for (int r = 0; r < 2; ++r)
      cfg.system.control_hamiltonians[r] =
          parse_cmat2(ctl.at(r), "system.controls[" + std::to_string(r) + "]");
    if (sys.contains("channels")) {
      const json& chans = sys.at("channels");
      if (!chans.is_array()) fail("system.channels", "expected an array");
      for (std::size_t i = 0; i < chans.size(); ++i) {
        const std::string path = "system.channels[" + std::to_string(i) + "]";
        DecoherenceChannel ch;
        ch.op = parse_cmat2(require(chans.at(i), "operator", path), path + ".operator");
        ch.rate = number_at(chans.at(i), "rate", path);
        if (!(ch.rate > 0.0)) fail(path + ".rate", "damping rate must be positive");
        cfg.system.channels.push_back(ch);
      }
    }
    try {
      cfg.system.validate();
    } catch (const Error& e) {
      fail("system", e.what());
    }
  }

  {
    const json& st = require(j, "states", "");
    try {
      cfg.rho0 = DensityMatrix(parse_cmat2(require(st, "rho0", "states"), "states.rho0"));
    } catch (const NonPhysicalState& e) {
      fail("states.rho0", e.what());
    }
    try {
      cfg.rho_target = DensityMatrix(parse_cmat2(require(st, "rho_d", "states"), "states.rho_d"));
    } catch (const NonPhysicalState& e) {
      fail("states.rho_d", e.what());
    }
  }

  {
    const json& ctl = require(j, "controller", "");
    cfg.controller.weight = parse_mat3(require(ctl, "weight", "controller"), "controller.weight");
    cfg.controller.gain = number_or(ctl, "xi", 1.0, "controller");
    const std::string family =
        ctl.contains("family") ? ctl.at("family").get<std::string>() : "contractive";
    if (family == "standard")
      cfg.controller.family = ControlFamily::Standard;
    else if (family == "contractive")
      cfg.controller.family = ControlFamily::Contractive;
    else
      fail("controller.family", "expected 'standard' or 'contractive'");
    if (ctl.contains("gamma")) {
      const json& g = ctl.at("gamma");
      if (g.contains("constant")) {
        cfg.controller.gamma.intercept = as_number(g.at("constant"), "controller.gamma.constant");
        cfg.controller.gamma.slope = 0.0;
      } else {
        cfg.controller.gamma.intercept = number_or(g, "intercept", 0.0, "controller.gamma");
        cfg.controller.gamma.slope = number_or(g, "slope", 0.0, "controller.gamma");
      }
    }
    cfg.controller.theta_hat = number_or(ctl, "theta_hat", 0.0, "controller");
    try {
      cfg.controller.validate();
    } catch (const Error& e) {
      fail("controller", e.what());
    }
    if (cfg.controller.theta_hat < 0.0)
      cfg.warnings.push_back(
          "controller.theta_hat is negative; the contractive stability analysis assumes a "
          "positive offset");
  }

  {
    const json& sim = require(j, "simulation", "");
    cfg.t_final = number_at(sim, "t_final", "simulation");
    cfg.dt = number_or(sim, "dt", 1e-4, "simulation");
    cfg.event_tol = number_or(sim, "event_tol", 1e-9, "simulation");
    if (!(cfg.t_final > 0.0)) fail("simulation.t_final", "must be positive");
    if (!(cfg.dt > 0.0)) fail("simulation.dt", "must be positive");
    if (!(cfg.event_tol > 0.0)) fail("simulation.event_tol", "must be positive");
  }

  if (cfg.controller.family == ControlFamily::Contractive &&
      !cfg.controller.gamma.negative_on(0.0, cfg.t_final))
    fail("controller.gamma", "Gamma(t) must be negative over [0, t_final]");

  {
    const json& pol = require(j, "policy", "");
    const std::string kind = pol.contains("kind") ? pol.at("kind").get<std::string>() : "shrink";
    if (kind == "none")
      cfg.policy.kind = PolicyKind::None;
    else if (kind == "fixed")
      cfg.policy.kind = PolicyKind::Fixed;
    else if (kind == "shrink")
      cfg.policy.kind = PolicyKind::Shrink;
    else
      fail("policy.kind", "expected 'none', 'fixed' or 'shrink'");
    const int mode = static_cast<int>(number_or(pol, "initial_mode", 1, "policy"));
    if (mode != 1 && mode != 2) fail("policy.initial_mode", "expected 1 or 2");
    cfg.policy.initial_mode = mode == 1 ? Mode::One : Mode::Two;
    cfg.policy.terminal_v = number_or(pol, "terminal_vartheta", 1e-30, "policy");
    cfg.policy.min_dwell = number_or(pol, "min_dwell", 0.0, "policy");
    if (pol.contains("fixed")) {
      const json& f = pol.at("fixed");
      const json& kappa = require(f, "kappa", "policy.fixed");
      const json& iota = require(f, "iota", "policy.fixed");
      if (!kappa.is_array() || kappa.size() != 2) fail("policy.fixed.kappa", "expected 2 values");
      if (!iota.is_array() || iota.size() != 2) fail("policy.fixed.iota", "expected 2 values");
      for (int i = 0; i < 2; ++i) {
        cfg.policy.singular_fixed[i] =
            as_number(kappa.at(i), "policy.fixed.kappa[" + std::to_string(i) + "]");
        cfg.policy.invariant_fixed[i] =
            as_number(iota.at(i), "policy.fixed.iota[" + std::to_string(i) + "]");
      }
    }
    if (pol.contains("shrink")) {
      const json& sh = pol.at("shrink");
      const json& vt = require(sh, "vartheta", "policy.shrink");
      const json& vs = require(sh, "varsigma", "policy.shrink");
      if (!vt.is_array() || vt.size() != 2) fail("policy.shrink.vartheta", "expected 2 functions");
      if (!vs.is_array() || vs.size() != 2) fail("policy.shrink.varsigma", "expected 2 functions");
      for (int i = 0; i < 2; ++i) {
        cfg.policy.singular_shrink[i] =
            parse_threshold(vt.at(i), "policy.shrink.vartheta[" + std::to_string(i) + "]");
        cfg.policy.invariant_shrink[i] =
            parse_threshold(vs.at(i), "policy.shrink.varsigma[" + std::to_string(i) + "]");
      }
    }
    try {
      cfg.policy.validate();
    } catch (const Error& e) {
      fail("policy", e.what());
    }
  }

  if (j.contains("certificates")) {
    const json& certs = j.at("certificates");
    const Vec3 e0 = density_to_bloch(cfg.rho0) - density_to_bloch(cfg.rho_target);
    if (certs.contains("fts")) {
      const json& f = certs.at("fts");
      FtsCertificate cert;
      cert.weight_p = cfg.controller.weight;
      cert.weight_w = f.contains("weight_w")
                          ? parse_mat3(f.at("weight_w"), "certificates.fts.weight_w")
                          : Mat3::Identity();
      cert.alpha = number_at(f, "alpha", "certificates.fts");
      cert.c1 = number_at(f, "c1", "certificates.fts");
      cert.c2 = number_at(f, "c2", "certificates.fts");
      cert.zeta = number_or(f, "zeta", 1.0, "certificates.fts");
      cert.t_final = cfg.t_final;
      try {
        cert.validate();
      } catch (const Error& e) {
        fail("certificates.fts", e.what());
      }
      if (!(e0.squaredNorm() < cert.c1))
        cfg.warnings.push_back("certificates.fts.c1 does not exceed |e(0)|^2 = " +
                               cfg_detail::fmt17(e0.squaredNorm()));
      cfg.fts = cert;
    }
    if (certs.contains("ftcs")) {
      const json& f = certs.at("ftcs");
      FtcsCertificate cert;
      cert.gamma = cfg.controller.gamma;
      cert.theta_hat = cfg.controller.theta_hat;
      cert.alpha1.coeff = number_at(f, "alpha1_coeff", "certificates.ftcs");
      cert.alpha2.coeff = number_at(f, "alpha2_coeff", "certificates.ftcs");
      cert.b1 = number_or(f, "b1", e0.norm(), "certificates.ftcs");
      cert.eta = number_at(f, "eta", "certificates.ftcs");
      cert.varrho = number_at(f, "varrho", "certificates.ftcs");
      cert.t_final = cfg.t_final;
      try {
        cert.validate();
      } catch (const Error& e) {
        fail("certificates.ftcs", e.what());
      }
      if (cert.b1 < e0.norm() - 1e-12)
        fail("certificates.ftcs.b1", "must be at least |e(0)| = " + cfg_detail::fmt17(e0.norm()));
      const std::string window =
          f.contains("window") ? f.at("window").get<std::string>() : "from-varrho";
      if (window == "from-varrho")
        cfg.ftcs_window = FtcsWindow::FromVarrho;
      else if (window == "tail-varrho")
        cfg.ftcs_window = FtcsWindow::TailVarrho;
      else
        fail("certificates.ftcs.window", "expected 'from-varrho' or 'tail-varrho'");
      cfg.ftcs = cert;
    }
  }

  if (j.contains("output")) {
    const json& out = j.at("output");
    if (out.contains("dir")) cfg.output.directory = out.at("dir").get<std::string>();
    if (out.contains("formats")) {
      cfg.output.write_csv = false;
      cfg.output.write_json = false;
      for (const auto& f : out.at("formats")) {
        if (f == "csv") cfg.output.write_csv = true;
        if (f == "json") cfg.output.write_json = true;
      }
    }
  }

  if (j.contains("reference")) cfg.reference = j.at("reference");
  if (j.contains("notes"))
    for (const auto& n : j.at("notes")) cfg.notes.push_back(n.get<std::string>());

  return cfg;
}

inline ScenarioConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError("config " + path.string() + ": " + e.what());
  }
  return parse_config(j);
}

/// Canonical JSON form of a parsed configuration; parsing it back yields an
/// equal configuration.
inline json to_json(const ScenarioConfig& cfg) {
  using namespace cfg_detail;
  json j;
  j["name"] = cfg.name;
  j["system"] = {{"h0", cmat2_json(cfg.system.free_hamiltonian)},
                 {"controls", json::array({cmat2_json(cfg.system.control_hamiltonians[0]),
                                           cmat2_json(cfg.system.control_hamiltonians[1])})},
                 {"channels", json::array()}};
  for (const auto& ch : cfg.system.channels)
    j["system"]["channels"].push_back({{"operator", cmat2_json(ch.op)}, {"rate", ch.rate}});
  j["states"] = {{"rho0", cmat2_json(cfg.rho0.matrix())},
                 {"rho_d", cmat2_json(cfg.rho_target.matrix())}};
  j["controller"] = {
      {"weight", mat3_json(cfg.controller.weight)},
      {"xi", cfg.controller.gain},
      {"family", cfg.controller.family == ControlFamily::Standard ? "standard" : "contractive"},
      {"gamma",
       {{"intercept", cfg.controller.gamma.intercept}, {"slope", cfg.controller.gamma.slope}}},
      {"theta_hat", cfg.controller.theta_hat}};
  const char* kind = cfg.policy.kind == PolicyKind::None
                         ? "none"
                         : (cfg.policy.kind == PolicyKind::Fixed ? "fixed" : "shrink");
  j["policy"] = {{"kind", kind},
                 {"initial_mode", mode_number(cfg.policy.initial_mode)},
                 {"terminal_vartheta", cfg.policy.terminal_v},
                 {"min_dwell", cfg.policy.min_dwell},
                 {"fixed",
                  {{"kappa", {cfg.policy.singular_fixed[0], cfg.policy.singular_fixed[1]}},
                   {"iota", {cfg.policy.invariant_fixed[0], cfg.policy.invariant_fixed[1]}}}},
                 {"shrink",
                  {{"vartheta",
                    json::array({{{"slope", cfg.policy.singular_shrink[0].slope},
                                  {"intercept", cfg.policy.singular_shrink[0].intercept}},
                                 {{"slope", cfg.policy.singular_shrink[1].slope},
                                  {"intercept", cfg.policy.singular_shrink[1].intercept}}})},
                   {"varsigma",
                    json::array({{{"slope", cfg.policy.invariant_shrink[0].slope},
                                  {"intercept", cfg.policy.invariant_shrink[0].intercept}},
                                 {{"slope", cfg.policy.invariant_shrink[1].slope},
                                  {"intercept", cfg.policy.invariant_shrink[1].intercept}}})}}}};
  j["simulation"] = {{"t_final", cfg.t_final}, {"dt", cfg.dt}, {"event_tol", cfg.event_tol}};
  if (cfg.fts || cfg.ftcs) {
    json certs;
    if (cfg.fts)
      certs["fts"] = {{"weight_w", mat3_json(cfg.fts->weight_w)},
                      {"alpha", cfg.fts->alpha},
                      {"c1", cfg.fts->c1},
                      {"c2", cfg.fts->c2},
                      {"zeta", cfg.fts->zeta}};
    if (cfg.ftcs)
      certs["ftcs"] = {
          {"alpha1_coeff", cfg.ftcs->alpha1.coeff},
          {"alpha2_coeff", cfg.ftcs->alpha2.coeff},
          {"b1", cfg.ftcs->b1},
          {"eta", cfg.ftcs->eta},
          {"varrho", cfg.ftcs->varrho},
          {"window", cfg.ftcs_window == FtcsWindow::FromVarrho ? "from-varrho" : "tail-varrho"}};
    j["certificates"] = certs;
  }
  json formats = json::array();
  if (cfg.output.write_csv) formats.push_back("csv");
  if (cfg.output.write_json) formats.push_back("json");
  j["output"] = {{"dir", cfg.output.directory}, {"formats", formats}};
  if (!cfg.reference.is_null()) j["reference"] = cfg.reference;
  if (!cfg.notes.empty()) j["notes"] = cfg.notes;
  return j;
}

inline void write_trajectory_csv(const std::filesystem::path& path, const Trajectory& traj) {
  using cfg_detail::fmt17;
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "t,s1,s2,s3,u1,u2,V,Vdot,mode,delta_active\n";
  for (const auto& p : traj.samples) {
    out << fmt17(p.t) << ',' << fmt17(p.s[0]) << ',' << fmt17(p.s[1]) << ',' << fmt17(p.s[2])
        << ',' << fmt17(p.u[0]) << ',' << fmt17(p.u[1]) << ',' << fmt17(p.lyapunov) << ','
        << fmt17(p.lyapunov_rate) << ',' << mode_number(p.mode) << ',' << fmt17(p.delta_active)
        << '\n';
  }
}

inline void write_switch_log_csv(const std::filesystem::path& path, const SwitchLog& log) {
  using cfg_detail::fmt17;
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << "m,tau,from_mode,to_mode,trigger,trigger_value\n";
  for (const auto& ev : log.events) {
    out << ev.index << ',' << fmt17(ev.tau) << ',' << mode_number(ev.from_mode) << ','
        << mode_number(ev.to_mode) << ',' << trigger_name(ev.trigger) << ','
        << fmt17(ev.trigger_value) << '\n';
  }
}

inline json summary_json(const Summary& sum) {
  using cfg_detail::cmat2_json;
  json j;
  j["fidelity"] = sum.fidelity_to_target;
  j["final_v"] = sum.final_v;
  j["final_s"] = {sum.final_s[0], sum.final_s[1], sum.final_s[2]};
  j["final_rho"] = cmat2_json(sum.final_rho);
  j["final_time"] = sum.final_time;
  j["switches"] = sum.switches;
  if (std::isfinite(sum.min_gap))
    j["min_gap"] = sum.min_gap;
  else
    j["min_gap"] = nullptr;
  j["terminated_early"] = sum.terminated_early;
  j["termination_reason"] =
      sum.reason == StopReason::TerminalCondition ? "terminal-condition" : "horizon";
  j["clamped_windows"] = sum.clamped_windows;
  return j;
}

/// Condensed certificate outcomes for the run summary.
inline json certificate_results_json(const ScenarioConfig& cfg, const SimulationResult& result) {
  json j;
  const Vec3 target = density_to_bloch(cfg.rho_target);
  if (cfg.fts) {
    const FtsReport fts = check_fts(*cfg.fts, build_system(cfg.system).offset);
    j["fts_pass"] = fts.pass();
    j["fts_horizon_margin"] = fts.horizon.margin;
    j["trajectory_fts_pass"] =
        verify_fts_trajectory(result.trajectory, target, cfg.fts->c1, cfg.fts->c2);
  }
  if (cfg.ftcs) {
    Eigen::SelfAdjointEigenSolver<Mat3> es(cfg.controller.weight);
    const FtcsReport ftcs = check_ftcs(*cfg.ftcs, es.eigenvalues().minCoeff());
    j["ftcs_condition_pass"] = ftcs.condition_pass;
    try {
      j["trajectory_ftcs_pass"] =
          verify_ftcs_trajectory(result.trajectory, target, cfg.ftcs->eta, cfg.ftcs->varrho,
                                 cfg.t_final, cfg.ftcs_window);
    } catch (const WindowOutOfRange&) {
      j["trajectory_ftcs_pass"] = nullptr;
    }
  }
  return j;
}

using FlatReport = std::vector<std::pair<std::string, std::string>>;

inline FlatReport certificate_report(const ScenarioConfig& cfg, const SimulationResult& result) {
  using cfg_detail::fmt17;
  FlatReport rep;
  const auto put = [&rep](const std::string& k, const std::string& v) { rep.emplace_back(k, v); };
  const auto put_num = [&](const std::string& k, double v) { put(k, fmt17(v)); };
  const auto put_bool = [&](const std::string& k, bool v) { put(k, v ? "true" : "false"); };

  const Vec3 target = density_to_bloch(cfg.rho_target);
  put("scenario", cfg.name);
  put("convention.c1_c2", "bounds on |e|^2");
  put("convention.eta_b1", "bounds on |e|");

  if (cfg.fts) {
    const SystemModel model = build_system(cfg.system);
    const FtsReport fts = check_fts(*cfg.fts, model.offset);
    put_num("fts.alpha", cfg.fts->alpha);
    put_num("fts.c1", cfg.fts->c1);
    put_num("fts.c2", cfg.fts->c2);
    put_num("fts.zeta", cfg.fts->zeta);
    put_num("fts.lambda1", fts.derived.lambda1);
    put_num("fts.lambda2", fts.derived.lambda2);
    put_num("fts.lambda3", fts.derived.lambda3);
    put_num("fts.mu", fts.derived.mu);
    put_num("fts.d", fts.derived.d);
    put_num("fts.horizon.bound", fts.horizon.bound);
    put_num("fts.horizon.margin", fts.horizon.margin);
    put_bool("fts.horizon.pass", fts.horizon.pass);
    put_bool("fts.dwell.applicable", fts.dwell.applicable);
    put_num("fts.dwell.bound", fts.dwell.bound);
    put_num("fts.dwell.margin", fts.dwell.margin);
    put_bool("fts.dwell.pass", fts.dwell.pass);
    put_bool("fts.pass", fts.pass());

    const bool traj_fts = verify_fts_trajectory(result.trajectory, target, cfg.fts->c1, cfg.fts->c2);
    double max_e_sq = 0.0;
    for (const auto& p : result.trajectory.samples)
      max_e_sq = std::max(max_e_sq, (p.s - target).squaredNorm());
    put_bool("trajectory.fts.pass", traj_fts);
    put_num("trajectory.fts.e0_sq", (result.trajectory.samples.front().s - target).squaredNorm());
    put_num("trajectory.fts.max_e_sq", max_e_sq);

    const DwellStats ds = dwell_stats(result.log, 0.0, cfg.t_final + cfg.dt);
    put_num("trajectory.dwell.count", static_cast<double>(ds.count));
    put_num("trajectory.dwell.min_gap", ds.min_gap);
    put_num("trajectory.dwell.avg", ds.avg_dwell);
    put_bool("trajectory.dwell.meets_zeta", ds.min_gap >= cfg.fts->zeta);
  }

  if (cfg.ftcs) {
    Eigen::SelfAdjointEigenSolver<Mat3> es(cfg.controller.weight);
    const double lambda2 = es.eigenvalues().minCoeff();
    const FtcsReport ftcs = check_ftcs(*cfg.ftcs, lambda2);
    put_num("ftcs.gamma.intercept", cfg.ftcs->gamma.intercept);
    put_num("ftcs.gamma.slope", cfg.ftcs->gamma.slope);
    put_num("ftcs.theta_hat", cfg.ftcs->theta_hat);
    put_num("ftcs.alpha1_coeff", cfg.ftcs->alpha1.coeff);
    put_num("ftcs.alpha2_coeff", cfg.ftcs->alpha2.coeff);
    put_num("ftcs.b1", cfg.ftcs->b1);
    put_num("ftcs.varrho", cfg.ftcs->varrho);
    put_num("ftcs.eta.input", cfg.ftcs->eta);
    put_num("ftcs.eta.computed_t_final", ftcs.eta_bound_t_final);
    if (cfg.reference.is_object() && cfg.reference.contains("eta"))
      put_num("ftcs.eta.reference", cfg.reference.at("eta").get<double>());
    put_num("ftcs.condition.worst_lhs", ftcs.worst_lhs);
    put_num("ftcs.condition.worst_t", ftcs.worst_t);
    put_bool("ftcs.condition.pass", ftcs.condition_pass);
    put_num("ftcs.condition.holds_from", ftcs.holds_from);

    const auto [lo, hi] = ftcs_window_bounds(cfg.ftcs->varrho, cfg.t_final, cfg.ftcs_window);
    bool traj_pass = false;
    double max_e = std::numeric_limits<double>::quiet_NaN();
    try {
      traj_pass = verify_ftcs_trajectory(result.trajectory, target, cfg.ftcs->eta,
                                         cfg.ftcs->varrho, cfg.t_final, cfg.ftcs_window);
      max_e = max_error_on_window(result.trajectory, target, lo, hi);
    } catch (const WindowOutOfRange&) {
      put("trajectory.ftcs.note", "window outside trajectory span");
    }
    put_num("trajectory.ftcs.window_lo", lo);
    put_num("trajectory.ftcs.window_hi", hi);
    put_bool("trajectory.ftcs.pass", traj_pass);
    put_num("trajectory.ftcs.max_e", max_e);
  }
  return rep;
}

inline void write_flat_report(const std::filesystem::path& path, const FlatReport& rep) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& [k, v] : rep) out << k << " = " << v << '\n';
}

struct RunPaths {
  std::filesystem::path trajectory_csv;
  std::filesystem::path switches_csv;
  std::filesystem::path summary_json;
  std::filesystem::path certificate_report;  // empty when no certificates configured
};

struct RunOutcome {
  SimulationResult result;
  RunPaths paths;
};

inline RunOutcome run_scenario(const ScenarioConfig& cfg, const std::filesystem::path& out_dir) {
  const SystemModel model = build_system(cfg.system);
  const Vec3 s0 = density_to_bloch(cfg.rho0);
  const Vec3 target = density_to_bloch(cfg.rho_target);

  RunOutcome out;
  out.result = simulate(model, s0, target, cfg.controller, cfg.policy, cfg.t_final, cfg.dt,
                        cfg.event_tol);

  std::filesystem::create_directories(out_dir);
  if (cfg.output.write_csv) {
    out.paths.trajectory_csv = out_dir / "trajectory.csv";
    out.paths.switches_csv = out_dir / "switches.csv";
    write_trajectory_csv(out.paths.trajectory_csv, out.result.trajectory);
    write_switch_log_csv(out.paths.switches_csv, out.result.log);
  }
  if (cfg.output.write_json) {
    out.paths.summary_json = out_dir / "summary.json";
    std::ofstream s(out.paths.summary_json);
    if (!s) throw Error("cannot write " + out.paths.summary_json.string());
    json j = summary_json(out.result.summary);
    if (cfg.fts || cfg.ftcs)
      j["certificate_results"] = certificate_results_json(cfg, out.result);
    s << j.dump(2) << '\n';
  }
  if (cfg.fts || cfg.ftcs) {
    out.paths.certificate_report = out_dir / "certificate_report.txt";
    write_flat_report(out.paths.certificate_report, certificate_report(cfg, out.result));
  }
  return out;
}

inline RunOutcome run_scenario(const ScenarioConfig& cfg) {
  return run_scenario(cfg, cfg.output.directory);
}

struct PolicyRow {
  std::string policy;
  double final_v = 0.0;
  double fidelity = 0.0;
  std::size_t switches = 0;
};

inline const char* policy_name(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::None: return "none";
    case PolicyKind::Fixed: return "fixed";
    default: return "shrink";
  }
}

/// Run the scenario once per policy and emit one trajectory set per policy
/// under out_dir/<policy>/ plus a comparison.csv table. The runs are
/// independent (immutable inputs, distinct output subdirectories) and execute
/// concurrently; rows keep the requested order.
inline std::vector<PolicyRow> compare_policies(const ScenarioConfig& cfg,
                                               const std::vector<PolicyKind>& policies,
                                               const std::filesystem::path& out_dir) {
  if (policies.size() < 2) throw DomainError("compare needs at least two policies");

  std::vector<std::string> dir_names;
  for (std::size_t i = 0; i < policies.size(); ++i) {
    std::string name = policy_name(policies[i]);
    for (const auto& existing : dir_names)
      if (existing == name) name += "_" + std::to_string(i);
    dir_names.push_back(name);
  }

  std::filesystem::create_directories(out_dir);  // before the concurrent runs
  std::vector<std::future<RunOutcome>> futures;
  futures.reserve(policies.size());
  for (std::size_t i = 0; i < policies.size(); ++i) {
    futures.push_back(std::async(std::launch::async, [&cfg, &out_dir, &dir_names, &policies, i] {
      ScenarioConfig c = cfg;
      c.policy.kind = policies[i];
      return run_scenario(c, out_dir / dir_names[i]);
    }));
  }

  std::vector<PolicyRow> rows;
  for (std::size_t i = 0; i < policies.size(); ++i) {
    const RunOutcome outcome = futures[i].get();
    rows.push_back({policy_name(policies[i]), outcome.result.summary.final_v,
                    outcome.result.summary.fidelity_to_target, outcome.result.summary.switches});
  }

  std::ofstream table(out_dir / "comparison.csv");
  table << "policy,final_v,fidelity,switches\n";
  for (const auto& row : rows)
    table << row.policy << ',' << cfg_detail::fmt17(row.final_v) << ','
          << cfg_detail::fmt17(row.fidelity) << ',' << row.switches << '\n';
  return rows;
}

}  // namespace qswitch
