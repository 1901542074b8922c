// qswitch command line: run, certify, compare and presets.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "qswitch/qswitch.hpp"

namespace {

using qswitch::json;

struct CommonFlags {
  std::string config_path;
  std::string preset;
  std::string out_dir;
  std::string policy;
  double dt = 0.0;
  double xi = 0.0;
  double t_final = 0.0;
};

void add_source_flags(CLI::App* cmd, CommonFlags& flags) {
  auto* cfg = cmd->add_option("--config", flags.config_path, "Path to a scenario config (JSON)");
  auto* preset = cmd->add_option("--preset", flags.preset, "Built-in preset name");
  cfg->excludes(preset);
}

json load_base_json(const CommonFlags& flags) {
  if (!flags.config_path.empty()) {
    std::ifstream in(flags.config_path);
    if (!in) throw qswitch::ParseError("cannot open config file " + flags.config_path);
    json j;
    try {
      in >> j;
    } catch (const json::exception& e) {
      throw qswitch::ParseError("config " + flags.config_path + ": " + e.what());
    }
    return j;
  }
  if (!flags.preset.empty()) return json{{"preset", flags.preset}};
  throw qswitch::ConfigError("either --config or --preset is required");
}

qswitch::ScenarioConfig make_config(const CommonFlags& flags) {
  json j = load_base_json(flags);
  if (!flags.policy.empty()) j["policy"]["kind"] = flags.policy;
  if (flags.dt > 0.0) j["simulation"]["dt"] = flags.dt;
  if (flags.xi > 0.0) j["controller"]["xi"] = flags.xi;
  if (flags.t_final > 0.0) j["simulation"]["t_final"] = flags.t_final;
  return qswitch::parse_config(j);
}

std::filesystem::path resolve_out_dir(const CommonFlags& flags, const qswitch::ScenarioConfig& cfg) {
  if (!flags.out_dir.empty()) return flags.out_dir;
  if (const char* env = std::getenv("QSWITCH_OUT"); env && *env) return env;
  return cfg.output.directory;
}

void print_warnings(const qswitch::ScenarioConfig& cfg) {
  for (const auto& w : cfg.warnings) std::cerr << "warning: " << w << '\n';
}

int cmd_run(const CommonFlags& flags) {
  const qswitch::ScenarioConfig cfg = make_config(flags);
  print_warnings(cfg);
  const auto out_dir = resolve_out_dir(flags, cfg);
  const qswitch::RunOutcome outcome = qswitch::run_scenario(cfg, out_dir);
  const qswitch::Summary& sum = outcome.result.summary;
  std::cout << "scenario: " << cfg.name << '\n'
            << "fidelity: " << qswitch::cfg_detail::fmt17(sum.fidelity_to_target) << '\n'
            << "final_v: " << qswitch::cfg_detail::fmt17(sum.final_v) << '\n'
            << "switches: " << sum.switches << '\n';
  if (std::isfinite(sum.min_gap))
    std::cout << "min_gap: " << qswitch::cfg_detail::fmt17(sum.min_gap) << '\n';
  std::cout << "terminated_early: " << (sum.terminated_early ? "true" : "false") << '\n'
            << "outputs: " << out_dir.string() << '\n';
  return 0;
}

int cmd_certify(const CommonFlags& flags) {
  const qswitch::ScenarioConfig cfg = make_config(flags);
  print_warnings(cfg);
  if (!cfg.fts && !cfg.ftcs)
    throw qswitch::ConfigError("config has no certificates block to evaluate");
  const auto out_dir = resolve_out_dir(flags, cfg);
  const qswitch::RunOutcome outcome = qswitch::run_scenario(cfg, out_dir);
  const qswitch::FlatReport rep = qswitch::certificate_report(cfg, outcome.result);
  for (const auto& [k, v] : rep) std::cout << k << " = " << v << '\n';
  return 0;
}

int cmd_compare(const CommonFlags& flags, const std::string& policies_csv) {
  const qswitch::ScenarioConfig cfg = make_config(flags);
  print_warnings(cfg);
  std::vector<qswitch::PolicyKind> kinds;
  std::stringstream ss(policies_csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "none")
      kinds.push_back(qswitch::PolicyKind::None);
    else if (item == "fixed")
      kinds.push_back(qswitch::PolicyKind::Fixed);
    else if (item == "shrink")
      kinds.push_back(qswitch::PolicyKind::Shrink);
    else
      throw qswitch::ConfigError("unknown policy '" + item + "' in --policies");
  }
  const auto out_dir = resolve_out_dir(flags, cfg);
  const auto rows = qswitch::compare_policies(cfg, kinds, out_dir);
  std::printf("%-8s %-24s %-24s %s\n", "policy", "final_v", "fidelity", "switches");
  for (const auto& row : rows)
    std::printf("%-8s %-24.17g %-24.17g %zu\n", row.policy.c_str(), row.final_v, row.fidelity,
                row.switches);
  std::cout << "outputs: " << out_dir.string() << '\n';
  return 0;
}

int cmd_presets() {
  for (const auto& name : qswitch::preset_names()) {
    std::cout << "=== " << name << " ===\n";
    std::cout << qswitch::preset_json(name).dump(2) << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Switching Lyapunov control simulator for open qubit systems"};
  app.require_subcommand(1);

  CommonFlags run_flags;
  auto* run = app.add_subcommand("run", "Simulate one scenario and write trajectory outputs");
  add_source_flags(run, run_flags);
  run->add_option("--policy", run_flags.policy, "Switching policy: none|fixed|shrink");
  run->add_option("--out", run_flags.out_dir, "Output directory");
  run->add_option("--dt", run_flags.dt, "Integration step");
  run->add_option("--xi", run_flags.xi, "Controller gain");
  run->add_option("--t-final", run_flags.t_final, "Horizon");

  CommonFlags certify_flags;
  auto* certify = app.add_subcommand("certify", "Run and emit the certificate report");
  add_source_flags(certify, certify_flags);
  certify->add_option("--out", certify_flags.out_dir, "Output directory");

  CommonFlags compare_flags;
  std::string policies_csv = "none,fixed,shrink";
  auto* compare = app.add_subcommand("compare", "Run several policies and tabulate the results");
  add_source_flags(compare, compare_flags);
  compare->add_option("--policies", policies_csv, "Comma-separated policies to compare");
  compare->add_option("--out", compare_flags.out_dir, "Output directory");

  auto* presets = app.add_subcommand("presets", "List the built-in presets with parameters");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (run->parsed()) return cmd_run(run_flags);
    if (certify->parsed()) return cmd_certify(certify_flags);
    if (compare->parsed()) return cmd_compare(compare_flags, policies_csv);
    if (presets->parsed()) return cmd_presets();
  } catch (const qswitch::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const qswitch::AssumptionViolation& e) {
    std::cerr << "assumption violation: " << e.what() << '\n';
    return 3;
  } catch (const qswitch::Error& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
  return 0;
}
