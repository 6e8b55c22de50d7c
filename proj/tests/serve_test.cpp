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

// Scripted WebSocket clients against a live server.

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <chrono>
#include <functional>
#include <thread>

#include <gtest/gtest.h>

#include "balsim/serve.hpp"
#include "test_models.hpp"

namespace balsim {
namespace {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

class Client {
 public:
  explicit Client(unsigned short port) : ws_(io_) {
    tcp::resolver resolver(io_);
    asio::connect(ws_.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    ws_.handshake("127.0.0.1", "/");
    beast::get_lowest_layer(ws_).set_option(asio::socket_base::receive_buffer_size(1 << 20));
  }

  json read() {
    beast::flat_buffer buf;
    ws_.read(buf);
    return json::parse(beast::buffers_to_string(buf.data()));
  }

  void send(const json& j) { ws_.write(asio::buffer(j.dump())); }
  void send_raw(const std::string& s) { ws_.write(asio::buffer(s)); }

  // Reads frames until `pred` holds or `timeout` seconds pass.
  std::optional<json> until(const std::function<bool(const json&)>& pred, double timeout) {
    const auto t0 = Clock::now();
    while (seconds_since(t0) < timeout) {
      json f = read();
      if (pred(f)) return f;
    }
    return std::nullopt;
  }

 private:
  asio::io_context io_;
  websocket::stream<tcp::socket> ws_;
};

class LiveServer {
 public:
  explicit LiveServer(const std::string& scenario, ServeOptions opts = {})
      : server_(load_scenario(testing::data_path("scenarios/" + scenario + ".json")), opts),
        thread_([this] { server_.run(); }) {}
  ~LiveServer() {
    server_.stop();
    thread_.join();
  }
  unsigned short port() const { return server_.port(); }

 private:
  Server server_;
  std::thread thread_;
};

bool is_state(const json& f) { return f.at("type") == "state"; }

TEST(Serve, IdleSessionStreamsStateFrames) {
  LiveServer server("standing");
  Client c(server.port());
  const json hello = c.read();
  EXPECT_EQ(hello["type"], "hello");
  EXPECT_EQ(hello["protocol"], kProtocolVersion);
  EXPECT_EQ(hello["role"], "steer");
  ASSERT_TRUE(c.until(is_state, 2.0));
  const auto t0 = Clock::now();
  int frames = 0;
  double first_t = -1, last_t = 0;
  while (seconds_since(t0) < 2.0) {
    const json f = c.read();
    if (!is_state(f)) continue;
    ++frames;
    if (first_t < 0) first_t = f["t"];
    last_t = f["t"];
  }
  const double rate = frames / seconds_since(t0);
  EXPECT_GE(rate, 25.0);
  EXPECT_LE(rate, 40.0);
  EXPECT_NEAR(last_t - first_t, 2.0, 0.3);  // wall-clock paced
}

TEST(Serve, DragTargetIsReflectedQuicklyAndTracked) {
  LiveServer server("standing");
  Client c(server.port());
  ASSERT_TRUE(c.until(is_state, 2.0));
  Vec3 pos(0.25, -0.25, 1.0);
  double worst_latency = 0.0;
  for (int i = 0; i < 10; ++i) {
    pos.z() += 0.02;
    const auto sent = Clock::now();
    c.send({{"type", "set_target"}, {"task", "right_hand"}, {"pos", {pos.x(), pos.y(), pos.z()}}});
    const auto echoed = c.until(
        [&](const json& f) {
          if (!is_state(f) || !f["targets"].contains("right_hand")) return false;
          const auto p = f["targets"]["right_hand"]["pos"].get<std::vector<double>>();
          return std::abs(p[2] - pos.z()) < 1e-12;
        },
        1.0);
    ASSERT_TRUE(echoed) << "target " << i << " never reflected";
    worst_latency = std::max(worst_latency, seconds_since(sent));
  }
  EXPECT_LT(worst_latency, 0.1);
  const auto tracked = c.until(
      [&](const json& f) {
        if (!is_state(f)) return false;
        const auto a = f["targets"]["right_hand"]["actual"].get<std::vector<double>>();
        return (Vec3(a[0], a[1], a[2]) - pos).norm() < 0.05;
      },
      3.0);
  EXPECT_TRUE(tracked) << "hand never reached the dragged target";
}

TEST(Serve, BalanceToggleDrivesDeltaAcrossZeroAndBack) {
  LiveServer server("giant_to_dwarf");
  Client c(server.port());
  ASSERT_TRUE(c.until(is_state, 2.0));
  c.send({{"type", "toggle"}, {"what", "balance"}, {"on", false}});
  const auto negative =
      c.until([](const json& f) { return is_state(f) && f["delta"].get<double>() < 0.0; }, 8.0);
  ASSERT_TRUE(negative) << "delta never went negative with balance off";
  EXPECT_FALSE((*negative)["balance"].get<bool>());
  c.send({{"type", "toggle"}, {"what", "balance"}, {"on", true}});
  const auto recovered = c.until(
      [](const json& f) { return is_state(f) && f["balance"].get<bool>() && f["delta"].get<double>() >= 0.0; },
      3.0);
  ASSERT_TRUE(recovered) << "delta did not recover with balance on";
  // Stays recovered.
  for (int i = 0; i < 15; ++i) {
    const json f = c.read();
    if (is_state(f)) EXPECT_GE(f["delta"].get<double>(), 0.0);
  }
}

TEST(Serve, SecondClientIsReadOnlyUntilPromoted) {
  LiveServer server("drill");
  auto steer = std::make_unique<Client>(server.port());
  EXPECT_EQ(steer->read()["role"], "steer");
  Client watch(server.port());
  EXPECT_EQ(watch.read()["role"], "observe");
  watch.send({{"type", "reset"}});
  const auto err = watch.until([](const json& f) { return f["type"] == "error"; }, 2.0);
  ASSERT_TRUE(err);
  EXPECT_NE((*err)["message"].get<std::string>().find("read-only"), std::string::npos);
  EXPECT_TRUE(watch.until(is_state, 1.0)) << "observer lost its stream";
  steer.reset();
  const auto role = watch.until([](const json& f) { return f["type"] == "role"; }, 3.0);
  ASSERT_TRUE(role);
  EXPECT_EQ((*role)["role"], "steer");
}

TEST(Serve, MalformedMessagesGetErrorFramesAndKeepTheConnection) {
  LiveServer server("drill");
  Client c(server.port());
  c.read();
  for (const std::string bad : {"{oops", R"({"type":"toggle","what":"guide:none","on":true})"}) {
    c.send_raw(bad);
    const auto err = c.until([](const json& f) { return f["type"] == "error"; }, 2.0);
    ASSERT_TRUE(err) << bad;
  }
  c.send({{"type", "toggle"}, {"what", "guide:drill_axis"}, {"on", false}, {"note", "ignored"}});
  const auto off = c.until(
      [](const json& f) { return is_state(f) && !f["guides"]["drill_axis"]["enabled"].get<bool>(); }, 2.0);
  EXPECT_TRUE(off);
}

TEST(Serve, BusyPortIsAStartupError) {
  LiveServer first("standing");
  ServeOptions opts;
  opts.port = first.port();
  EXPECT_THROW(Server(load_scenario(testing::data_path("scenarios/standing.json")), opts), Error);
}

// The CLI prints its address, serves, and exits cleanly on SIGTERM.
TEST(Serve, CommandLineServer) {
  int out[2];
  ASSERT_EQ(::pipe(out), 0);
  const std::string scenario = testing::data_path("scenarios/standing.json");
  const pid_t pid = ::fork();
  ASSERT_GE(pid, 0);
  if (pid == 0) {
    ::dup2(out[1], STDOUT_FILENO);
    ::close(out[0]);
    ::close(out[1]);
    ::execl(BALANCE_SIM_EXE, BALANCE_SIM_EXE, "serve", "--scenario", scenario.c_str(), "--port",
            "0", static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(out[1]);
  std::string line;
  char ch;
  while (::read(out[0], &ch, 1) == 1 && ch != '\n') line += ch;
  ::close(out[0]);
  const auto colon = line.rfind(':');
  ASSERT_EQ(line.rfind("listening on ws://", 0), 0u) << line;
  const int port = std::stoi(line.substr(colon + 1));
  {
    Client c(static_cast<unsigned short>(port));
    EXPECT_EQ(c.read()["type"], "hello");
    EXPECT_TRUE(c.until(is_state, 2.0));
  }
  ::kill(pid, SIGTERM);
  int status = 0;
  ::waitpid(pid, &status, 0);
  EXPECT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), 0);
}

}  // namespace
}  // namespace balsim
