// Copyright 2026 The balance_sim Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// balance_sim command line: run, serve, solve-lcp, check.

#include <csignal>
#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "balsim/lcp_io.hpp"
#include "balsim/selfcheck.hpp"
#include "balsim/serve.hpp"
#include "balsim/simulation.hpp"

namespace {

balsim::Server* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("balance_sim");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("BALANCE_SIM_LOG")) {
    const auto level = spdlog::level::from_str(env);
    if (level == spdlog::level::off && std::string(env) != "off")
      spdlog::warn("BALANCE_SIM_LOG='{}' not recognized; using warn", env);
    else
      spdlog::set_level(level);
  }
}

std::string number(double v) { return std::isfinite(v) ? fmt::format("{:.6g}", v) : "n/a"; }

int cmd_run(const std::string& path, bool no_balance, std::optional<double> duration,
            bool no_guides, const std::string& out) {
  const balsim::Scenario sc = balsim::load_scenario(path);
  balsim::RunOverrides ov;
  if (no_balance) ov.balance = false;
  ov.duration = duration;
  ov.guides = !no_guides;
  spdlog::info("running '{}' for {} s at h = {} s", sc.name, ov.duration.value_or(sc.duration),
               sc.timestep);
  const balsim::RunSummary s = balsim::run_to_file(sc, ov, out);
  fmt::print("steps {}\nmin_delta {}\nmin_delta_norm {}\nmax_penetration {}\nmax_guide_angle {}\n",
             s.steps, number(s.min_delta), number(s.min_delta_norm),
             number(s.max_penetration), number(s.max_guide_angle));
  return 0;
}

int cmd_serve(const std::string& path, int port, double rate) {
  if (port < 0 || port > 65535) throw balsim::ConfigError("port", "must be in [0, 65535]");
  balsim::ServeOptions opts;
  opts.port = static_cast<unsigned short>(port);
  opts.frame_rate = rate;
  balsim::Server server(balsim::load_scenario(path), opts);
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  fmt::print("listening on ws://{}:{}\n", opts.address, server.port());
  std::fflush(stdout);
  server.run();
  g_server = nullptr;
  return 0;
}

int cmd_solve_lcp(const std::string& path) {
  const balsim::LcpProblem p = balsim::parse_lcp_text(balsim::json_util::read_file(path));
  const balsim::LcpSolution s = balsim::solve_lcp(p);
  fmt::print("status {}\nmethod {}\niterations {}\nresidual {:.3e}\n", balsim::to_string(s.status),
             s.method == balsim::LcpMethod::lemke ? "lemke" : "pgs", s.iterations, s.residual);
  std::string z = "z", w = "w";
  for (int i = 0; i < s.z.size(); ++i) {
    z += fmt::format(" {:.12g}", s.z[i]);
    w += fmt::format(" {:.12g}", s.omega[i]);
  }
  fmt::print("{}\n{}\n", z, w);
  return s.status == balsim::LcpStatus::solved ? 0 : 3;
}

int cmd_check(const std::string& path) {
  const balsim::Scenario sc = balsim::load_scenario(path);
  std::vector<balsim::CheckResult> results = balsim::check_jacobians(sc.avatar, sc.seed);
  for (balsim::CheckResult& r : balsim::check_lcp(sc.seed)) results.push_back(r);
  bool ok = true;
  for (const balsim::CheckResult& r : results) {
    fmt::print("{} {:<22} worst {:.3e} tol {:.0e} cases {}\n", r.passed ? "PASS" : "FAIL", r.name,
               r.worst, r.tolerance, r.cases);
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"Whole-body balance simulation for steered avatars"};
  app.require_subcommand(1);

  std::string scenario, out, lcp_file;
  bool no_balance = false, no_guides = false;
  std::optional<double> duration;
  int port = 8765;
  double rate = 30.0;

  auto* run = app.add_subcommand("run", "batch simulation writing per-step metrics CSV");
  run->add_option("--scenario", scenario, "scenario JSON")->required()->check(CLI::ExistingFile);
  run->add_flag("--no-balance", no_balance, "disable the balance constraint");
  run->add_flag("--no-guides", no_guides, "disable all virtual guides");
  run->add_option("--duration", duration, "override the scenario duration (s)");
  run->add_option("--out", out, "metrics CSV path")->required();

  auto* serve = app.add_subcommand("serve", "live steering over WebSocket");
  serve->add_option("--scenario", scenario, "scenario JSON")->required()->check(CLI::ExistingFile);
  serve->add_option("--port", port, "TCP port (0 picks a free one)")->capture_default_str();
  serve->add_option("--rate", rate, "state frames per second")->capture_default_str();

  auto* solve = app.add_subcommand("solve-lcp", "solve an LCP from a text file");
  solve->add_option("--file", lcp_file, "k, then k rows of M, then q")
      ->required()
      ->check(CLI::ExistingFile);

  auto* check = app.add_subcommand("check", "finite-difference and LCP self-tests");
  check->add_option("--scenario", scenario, "scenario JSON")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(scenario, no_balance, duration, no_guides, out);
    if (*serve) return cmd_serve(scenario, port, rate);
    if (*solve) return cmd_solve_lcp(lcp_file);
    if (*check) return cmd_check(scenario);
  } catch (const balsim::SimulationError& e) {
    fmt::print(stderr, "simulation failed at step {}: {}\n", e.step_index(), e.what());
    return 4;
  } catch (const balsim::ConfigError& e) {
    fmt::print(stderr, "configuration error: {}\n", e.what());
    return 2;
  } catch (const balsim::FormatError& e) {
    fmt::print(stderr, "format error: {}\n", e.what());
    return 2;
  } catch (const balsim::Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 1;
  }
  return 0;
}
