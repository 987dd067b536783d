// Copyright 2026 The SecAgg Lab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "secagg_lab/lab/scenarios.hpp"

namespace {

using namespace secagg_lab;

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::size_t threads = 1;
  std::vector<std::string> defenses;
  std::optional<std::size_t> users;
  std::optional<std::string> mode;
};

void configure_logging() {
  auto logger = spdlog::stderr_color_mt("secagg-lab");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("SECAGG_LAB_LOG")) {
    const auto level = spdlog::level::from_str(env);
    if (level == spdlog::level::off && std::string(env) != "off") {
      spdlog::warn("SECAGG_LAB_LOG='{}' is not a log level; keeping 'warn'", env);
    } else {
      spdlog::set_level(level);
    }
  }
}

lab::ExperimentConfig resolve(const GlobalOptions& g) {
  lab::ExperimentConfig c = g.config.empty() ? lab::parse_config_text("{}") : lab::load_config(g.config);
  if (g.seed) c.seed = *g.seed;
  if (g.users) c.users = *g.users;
  if (g.mode) c.round.mode = lab::detail::parse_mode(*g.mode, "--mode");
  for (const auto& d : g.defenses) {
    if (d == "none") c.round.defenses = {};
    else if (d == "zero_update_guard") c.round.defenses.zero_update_guard.enabled = true;
    else if (d == "signed_echo") c.round.defenses.signed_echo = true;
    else if (d == "conditional_sa") c.round.defenses.conditional_sa = true;
    else throw lab::ConfigError("--defense: unknown defense '" + d + "'");
  }
  if (c.attack.target >= c.users) throw lab::ConfigError("attack.target: must name one of the users");
  return c;
}

int run(const std::string& name, const GlobalOptions& g) {
  const lab::ExperimentConfig c = resolve(g);
  spdlog::info("{}: seed {} users {} threads {}", name, c.seed, c.users, g.threads);
  lab::ScenarioReport r;
  if (name == "suppress") r = lab::run_suppress(c, g.threads);
  else if (name == "canary") r = lab::run_canary(c, g.threads);
  else if (name == "invert") r = lab::run_invert(c, g.threads);
  else if (name == "sparsity") r = lab::run_sparsity(c, g.threads);
  else r = lab::run_defend_matrix(c, g.threads);
  lab::write_report(r, g.out, name == "defend-matrix" ? "defend_matrix" : name);
  std::cout << r.summary.dump(2) << "\n";
  if (!r.ok) {
    spdlog::error("{}: soundness checks failed (see {})", name, g.out);
    return 3;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"Model-inconsistency attacks on secure aggregation, and defenses, at desk scale"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--config", g.config, "JSON experiment config")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Master seed (overrides the config)");
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  app.add_option("--defense", g.defenses, "Enable a defense (repeatable): zero_update_guard, signed_echo, conditional_sa");
  app.add_option("--users", g.users, "Number of users (overrides the config)")->check(CLI::PositiveNumber);
  app.add_option("--mode", g.mode, "fedsgd or fedavg (overrides the config)");

  const std::vector<std::pair<std::string, std::string>> commands{
      {"suppress", "Gradient suppression against secure aggregation"},
      {"canary", "Canary-gradient membership test over batch sizes"},
      {"invert", "Toy gradient inversion"},
      {"sparsity", "Gradient sparsity during honest training"},
      {"defend-matrix", "Attack x defense soundness matrix"},
  };
  std::string chosen;
  for (const auto& [name, help] : commands) {
    app.add_subcommand(name, help)->fallthrough()->callback([&chosen, n = name] { chosen = n; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  try {
    return run(chosen, g);
  } catch (const lab::ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
}
