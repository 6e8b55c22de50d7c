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

// Scenario files, target streams, metrics output, wire messages and the CLI.

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "balsim/lcp_io.hpp"
#include "balsim/serve.hpp"
#include "balsim/simulation.hpp"
#include "test_models.hpp"

namespace balsim {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string scenario_path(const std::string& name) {
  return testing::data_path("scenarios/" + name + ".json");
}

json scenario_json(const std::string& name) {
  return json::parse(json_util::read_file(scenario_path(name)));
}

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("balsim_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter_++));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  std::string file(const std::string& name, const std::string& text = {}) const {
    const std::string p = (path_ / name).string();
    if (!text.empty()) std::ofstream(p) << text;
    return p;
  }

 private:
  fs::path path_;
  static inline int counter_ = 0;
};

TEST(LoadScenario, BundledScenariosAreValid) {
  for (const char* name : {"standing", "table_lean", "drill", "giant_to_dwarf"}) {
    SCOPED_TRACE(name);
    const Scenario sc = load_scenario(scenario_path(name));
    EXPECT_EQ(sc.name, name);
    EXPECT_GT(sc.avatar.n_dof(), 12);
    EXPECT_GT(sc.duration, 0.0);
  }
}

TEST(LoadScenario, StandingHasNoTargets) {
  const Scenario sc = load_scenario(scenario_path("standing"));
  EXPECT_TRUE(sc.targets.empty());
  EXPECT_FALSE(sc.stream.has_value());
  EXPECT_EQ(sc.planes.size(), 1u);
}

TEST(LoadScenario, GiantToDwarfCarriesBothMorphologies) {
  const Scenario sc = load_scenario(scenario_path("giant_to_dwarf"));
  ASSERT_TRUE(sc.retarget.has_value());
  EXPECT_DOUBLE_EQ(sc.retarget->actor.root_height, 1.75);
  EXPECT_LT(sc.retarget->avatar.root_height, 1.0);
  EXPECT_EQ(sc.retarget->actor.limbs.count("arm"), 1u);
  EXPECT_EQ(sc.retarget->avatar.limbs.count("arm"), 1u);
  EXPECT_EQ(sc.retarget->task_limbs.size(), 2u);
}

TEST(LoadScenario, BadTimestepNamesTheField) {
  for (double h : {0.5, 0.0, -0.001}) {
    json doc = scenario_json("standing");
    doc["timestep"] = h;
    try {
      scenario_from_json(doc, scenario_path("standing"));
      ADD_FAILURE() << "timestep " << h << " accepted";
    } catch (const ConfigError& e) {
      EXPECT_EQ(e.field(), "timestep");
    }
  }
}

TEST(LoadScenario, FieldErrorsNameTheField) {
  json doc = scenario_json("standing");
  doc["duration"] = 0;
  try {
    scenario_from_json(doc, scenario_path("standing"));
    ADD_FAILURE();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "duration");
  }
  doc = scenario_json("drill");
  doc["guides"][0]["kind"] = "cone";
  EXPECT_THROW(scenario_from_json(doc, scenario_path("drill")), ConfigError);
  doc = scenario_json("standing");
  doc["avatar"] = "../avatars/missing.json";
  EXPECT_THROW(scenario_from_json(doc, scenario_path("standing")), ConfigError);
  doc = scenario_json("standing");
  doc.erase("timestep");
  EXPECT_THROW(scenario_from_json(doc, scenario_path("standing")), ConfigError);
}

TEST(LoadScenario, ParseErrorReportsLine) {
  TempDir dir;
  const std::string p = dir.file("broken.json", "{\n  \"timestep\": 0.001,\n  \"duration\": ,\n}\n");
  try {
    load_scenario(p);
    ADD_FAILURE();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.line(), 3);
  }
}

TEST(LoadScenario, StreamTaskMustExist) {
  TempDir dir;
  const std::string stream = dir.file("s.csv", "t,task,x,y,z\n0,left_paw,0,0,1\n");
  json doc = scenario_json("standing");
  doc["avatar"] = testing::data_path("avatars/reference.json");
  doc["target_stream"] = stream;
  EXPECT_THROW(scenario_from_json(doc, dir.file("x.json")), ConfigError);
}

TEST(TargetStream, SingleRowIsConstant) {
  const TargetStream s = TargetStream::parse("t,task,x,y,z\n0.5,hand,1,2,3\n");
  for (double t : {0.0, 0.5, 7.0})
    EXPECT_EQ(s.sample("hand", t).position, Vec3(1, 2, 3));
}

TEST(TargetStream, LinearBetweenSamples) {
  const TargetStream s = TargetStream::parse("t,task,x,y,z\n0,hand,0,0,0\n1,hand,2,-4,6\n");
  EXPECT_LT((s.sample("hand", 0.5).position - Vec3(1, -2, 3)).norm(), 1e-15);
  EXPECT_LT((s.sample("hand", 0.25).position - Vec3(0.5, -1, 1.5)).norm(), 1e-15);
  EXPECT_EQ(s.end_time(), 1.0);
}

TEST(TargetStream, OrientationsSlerp) {
  const TargetStream s = TargetStream::parse(
      "t,task,x,y,z,qw,qx,qy,qz\n"
      "0,tool,0,0,0,1,0,0,0\n"
      "2,tool,0,0,0,0,0,0,1\n");
  const Quat mid = *s.sample("tool", 1.0).orientation;
  const Quat expected(Eigen::AngleAxisd(kPi / 2, Vec3::UnitZ()));
  EXPECT_NEAR(std::abs(mid.dot(expected)), 1.0, 1e-12);
}

TEST(TargetStream, TracksAreIndependent) {
  const TargetStream s = TargetStream::parse(
      "t,task,x,y,z\n0,a,0,0,0\n0,b,1,1,1\n1,a,1,0,0\n2,b,3,1,1\n");
  EXPECT_EQ(s.tasks(), (std::vector<std::string>{"a", "b"}));
  EXPECT_LT((s.sample("a", 0.5).position - Vec3(0.5, 0, 0)).norm(), 1e-15);
  EXPECT_LT((s.sample("b", 1.0).position - Vec3(2, 1, 1)).norm(), 1e-15);
  EXPECT_THROW(s.sample("c", 0.0), ConfigError);
}

TEST(TargetStream, FormatErrorsCarryLines) {
  auto line_of = [](const std::string& text) {
    try {
      TargetStream::parse(text);
    } catch (const FormatError& e) {
      return e.line();
    }
    return -1;
  };
  EXPECT_EQ(line_of("t,task,x,y,z\n1,a,0,0,0\n0.5,a,0,0,0\n"), 3);
  EXPECT_EQ(line_of("time,task,x,y,z\n"), 1);
  EXPECT_EQ(line_of("t,task,x,y,z\n0,a,0,zero,0\n"), 2);
  EXPECT_EQ(line_of("t,task,x,y,z\n# note\n0,a,0,0\n"), 3);
  EXPECT_EQ(line_of("t,task,x,y,z,qw,qx,qy,qz\n0,a,0,0,0,2,0,0,0\n"), 2);
  EXPECT_EQ(line_of(""), 0);
}

TEST(LcpText, ParsesAndReportsBadTokens) {
  const LcpProblem p = parse_lcp_text("# two rows\n2\n2 1\n1 2\n-1 1\n");
  EXPECT_EQ(p.size(), 2);
  EXPECT_EQ(p.M(0, 1), 1.0);
  EXPECT_EQ(p.q_hat[0], -1.0);
  try {
    parse_lcp_text("2\n2 1\n1 x\n-1 1\n");
    ADD_FAILURE();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.line(), 3);
  }
  EXPECT_THROW(parse_lcp_text("2\n2 1\n1 2\n-1\n"), FormatError);
  EXPECT_THROW(parse_lcp_text(""), FormatError);
}

TEST(Simulation, OneRecordPerStepWithoutGaps) {
  const Scenario sc = load_scenario(scenario_path("standing"));
  RunOverrides ov;
  ov.duration = 0.05;
  std::ostringstream out;
  const RunSummary s = run(sc, ov, out);
  EXPECT_EQ(s.steps, 50);
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line.rfind("# generated_at=", 0), 0u);
  std::getline(in, line);
  EXPECT_EQ(line.rfind("t,delta,delta_norm", 0), 0u);
  const std::size_t columns = std::count(line.begin(), line.end(), ',');
  int rows = 0;
  double last = 0.0;
  while (std::getline(in, line)) {
    ++rows;
    EXPECT_EQ(static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')), columns);
    const double t = std::stod(line.substr(0, line.find(',')));
    EXPECT_NEAR(t - last, sc.timestep, 1e-9);
    last = t;
  }
  EXPECT_EQ(rows, 50);
}

TEST(Simulation, RunsAreDeterministic) {
  const Scenario sc = load_scenario(scenario_path("table_lean"));
  RunOverrides ov;
  ov.duration = 0.2;
  auto body = [&] {
    std::ostringstream out;
    run(sc, ov, out);
    const std::string s = out.str();
    return s.substr(s.find('\n') + 1);
  };
  EXPECT_EQ(body(), body());
}

TEST(Simulation, OverridesAndLiveTargets) {
  const Scenario sc = load_scenario(scenario_path("standing"));
  RunOverrides ov;
  ov.balance = false;
  ov.duration = 1.5;
  Simulation sim(sc, ov);
  EXPECT_FALSE(sim.balance_enabled());
  EXPECT_DOUBLE_EQ(sim.duration(), 1.5);
  const MetricsRecord r0 = sim.record();
  EXPECT_FALSE(r0.balance_on);
  sim.set_balance(true);
  EXPECT_TRUE(sim.balance_enabled());
  sim.set_target("right_hand", Vec3(0.3, -0.2, 1.2), std::nullopt);
  ASSERT_EQ(sim.targets().size(), 1u);
  EXPECT_EQ(sim.targets()[0].desired_position, Vec3(0.3, -0.2, 1.2));
  EXPECT_THROW(sim.set_target("tail", Vec3::Zero(), std::nullopt), ConfigError);
  for (int i = 0; i < 10; ++i) sim.advance();
  EXPECT_EQ(sim.steps(), 10);
  sim.reset();
  EXPECT_EQ(sim.steps(), 0);
  EXPECT_TRUE(sim.targets().empty());
  EXPECT_EQ(sim.state().q, Simulation(sc, ov).state().q);
}

TEST(Simulation, StreamDrivesTargets) {
  const Scenario sc = load_scenario(scenario_path("table_lean"));
  Simulation sim(sc);
  for (int i = 0; i < 1600; ++i) sim.advance();
  ASSERT_EQ(sim.targets().size(), 1u);
  const Vec3 expected = sc.stream->sample("right_hand", sim.state().t - sc.timestep).position;
  EXPECT_LT((sim.targets()[0].desired_position - expected).norm(), 1e-9);
}

TEST(Simulation, RetargetScalesStreamedTargets) {
  const Scenario sc = load_scenario(scenario_path("giant_to_dwarf"));
  Simulation sim(sc);
  sim.advance();
  const Vec3 actor = sc.stream->sample("left_hand", 0.0).position;
  const double ratio = sc.retarget->avatar.limbs.at("arm") / sc.retarget->actor.limbs.at("arm");
  const Vec3 expected = Vec3(0, 0, sc.retarget->avatar.root_height) +
                        ratio * (actor - Vec3(0, 0, sc.retarget->actor.root_height));
  bool found = false;
  for (const TaskTarget& t : sim.targets())
    if (t.task_frame == "left_hand") {
      found = true;
      EXPECT_LT((t.desired_position - expected).norm(), 1e-12);
    }
  EXPECT_TRUE(found);
}

serve_detail::SessionInfo info() {
  serve_detail::SessionInfo i;
  i.scenario = "drill";
  i.tasks = {"tool", "right_hand"};
  i.guides = {"drill_axis"};
  i.balance_available = true;
  return i;
}

TEST(WireProtocol, ParsesCommandsAndIgnoresUnknownFields) {
  using serve_detail::Command;
  using serve_detail::parse_command;
  Command c = parse_command(R"({"type":"set_target","task":"tool","pos":[1,2,3],"extra":5})", info());
  EXPECT_EQ(c.kind, Command::Kind::target);
  EXPECT_EQ(c.pos, Vec3(1, 2, 3));
  EXPECT_FALSE(c.quat.has_value());
  c = parse_command(R"({"type":"set_target","task":"tool","pos":[0,0,0],"quat":[0,0,0,2]})", info());
  ASSERT_TRUE(c.quat.has_value());
  EXPECT_NEAR(c.quat->z(), 1.0, 1e-15);
  c = parse_command(R"({"type":"toggle","what":"guide:drill_axis","on":false})", info());
  EXPECT_EQ(c.kind, Command::Kind::guide);
  EXPECT_EQ(c.name, "drill_axis");
  EXPECT_FALSE(c.on);
  c = parse_command(R"({"type":"toggle","what":"balance","on":true})", info());
  EXPECT_EQ(c.kind, Command::Kind::balance);
  EXPECT_EQ(parse_command(R"({"type":"reset"})", info()).kind, Command::Kind::reset);
}

TEST(WireProtocol, RejectsMalformedMessages) {
  for (const char* bad : {"{not json", "[]", R"({"type":3})", R"({"type":"jump"})",
                          R"({"type":"set_target","task":"tail","pos":[0,0,0]})",
                          R"({"type":"set_target","task":"tool","pos":[0,0]})",
                          R"({"type":"set_target","task":"tool","pos":[0,"a",0]})",
                          R"({"type":"toggle","what":"balance"})",
                          R"({"type":"toggle","what":"guide:rail","on":true})",
                          R"({"type":"toggle","what":"gravity","on":true})"}) {
    SCOPED_TRACE(bad);
    EXPECT_THROW(serve_detail::parse_command(bad, info()), Error);
  }
}

TEST(WireProtocol, MailboxKeepsLatestTargetPerTask) {
  using serve_detail::Command;
  serve_detail::Mailbox box;
  for (int i = 0; i < 5; ++i) box.post(Command{Command::Kind::target, "tool", Vec3::Constant(i)});
  box.post(Command{Command::Kind::balance, "", Vec3::Zero(), std::nullopt, true});
  box.post(Command{Command::Kind::target, "right_hand", Vec3::Ones()});
  const auto got = box.drain();
  ASSERT_EQ(got.size(), 3u);
  EXPECT_EQ(got[0].pos, Vec3::Constant(4));
  EXPECT_TRUE(box.drain().empty());
}

TEST(WireProtocol, FramesCarryDocumentedFields) {
  const json hello = serve_detail::hello_frame(info(), "steer");
  EXPECT_EQ(hello["type"], "hello");
  EXPECT_EQ(hello["protocol"], kProtocolVersion);
  Simulation sim(load_scenario(scenario_path("drill")));
  sim.advance();
  const json f = serve_detail::state_frame(sim);
  EXPECT_EQ(f["type"], "state");
  for (const char* key : {"t", "joints", "com", "delta", "delta_norm", "ellipse", "contacts", "targets"})
    EXPECT_TRUE(f.contains(key)) << key;
  EXPECT_EQ(f["joints"].size(), static_cast<std::size_t>(sim.model().num_segments()));
  EXPECT_EQ(f["com"].size(), 3u);
  EXPECT_TRUE(f["ellipse"].is_object());
  EXPECT_GT(f["contacts"].size(), 0u);
  EXPECT_TRUE(f["targets"].contains("tool"));
}

struct CliResult {
  int code = -1;
  std::string out;
};

CliResult cli(const std::string& args) {
  const std::string cmd = std::string(BALANCE_SIM_EXE) + " " + args + " 2>&1";
  CliResult r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) r.out.append(buf, n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string body_of(const std::string& path) {
  const std::string s = json_util::read_file(path);
  return s.substr(s.find('\n') + 1);
}

TEST(Cli, RunWritesMetricsAndSummary) {
  TempDir dir;
  const std::string out = dir.file("m.csv");
  const CliResult r = cli("run --scenario " + scenario_path("standing") + " --duration 0.1 --out " + out);
  EXPECT_EQ(r.code, 0) << r.out;
  for (const char* key : {"min_delta", "max_penetration", "max_guide_angle"})
    EXPECT_NE(r.out.find(key), std::string::npos) << key;
  EXPECT_TRUE(fs::exists(out));
}

TEST(Cli, RunsAreByteIdenticalApartFromHeader) {
  TempDir dir;
  const std::string a = dir.file("a.csv"), b = dir.file("b.csv");
  const std::string args = "run --scenario " + scenario_path("drill") + " --duration 0.25 --out ";
  ASSERT_EQ(cli(args + a).code, 0);
  ASSERT_EQ(cli(args + b).code, 0);
  EXPECT_EQ(body_of(a), body_of(b));
}

TEST(Cli, ErrorsGiveNonzeroExit) {
  TempDir dir;
  json doc = scenario_json("standing");
  doc["timestep"] = 0.5;
  doc["avatar"] = testing::data_path("avatars/reference.json");
  const std::string bad = dir.file("bad.json", doc.dump());
  const CliResult r = cli("run --scenario " + bad + " --out " + dir.file("x.csv"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("timestep"), std::string::npos) << r.out;
  EXPECT_NE(cli("run --scenario /nonexistent.json --out x.csv").code, 0);
  EXPECT_NE(cli("frobnicate").code, 0);
}

TEST(Cli, SolveLcp) {
  TempDir dir;
  const CliResult ok = cli("solve-lcp --file " + dir.file("p.txt", "2\n2 1\n1 2\n-1 1\n"));
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_NE(ok.out.find("status solved"), std::string::npos) << ok.out;
  EXPECT_NE(ok.out.find("z 0.5 0"), std::string::npos) << ok.out;
  const CliResult bad = cli("solve-lcp --file " + dir.file("q.txt", "2\n2 1\n"));
  EXPECT_EQ(bad.code, 2);
}

TEST(Cli, CheckPassesOnReferenceAvatar) {
  const CliResult r = cli("check --scenario " + scenario_path("standing"));
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.out.find("FAIL"), std::string::npos) << r.out;
}

}  // namespace
}  // namespace balsim
