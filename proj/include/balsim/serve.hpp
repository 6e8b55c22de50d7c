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

// Live steering server: the simulation runs on its own thread at wall-clock
// pace and publishes JSON state frames over WebSocket.
//
// The physics loop and the network thread share nothing mutable. Inbound
// commands go through a mailbox (targets are last-write-wins per task);
// outbound frames are posted to the network thread, where every client has a
// bounded queue that drops its oldest frame when full.

#pragma once

#include <atomic>
#include <chrono>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "balsim/simulation.hpp"

namespace balsim {

inline constexpr int kProtocolVersion = 1;

struct ServeOptions {
  std::string address = "127.0.0.1";
  unsigned short port = 0;  // 0 picks a free port
  double frame_rate = 30.0;
  std::size_t client_queue = 8;
};

namespace serve_detail {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using Json = nlohmann::json;

inline Json vec_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

inline Json quat_json(const Quat& q) { return Json::array({q.w(), q.x(), q.y(), q.z()}); }

struct Command {
  enum class Kind { target, balance, guide, reset } kind;
  std::string name;
  Vec3 pos = Vec3::Zero();
  std::optional<Quat> quat;
  bool on = false;
};

// Inbound channel from the network thread to the physics loop.
class Mailbox {
 public:
  void post(Command c) {
    std::lock_guard<std::mutex> lock(mutex_);
    if (c.kind == Command::Kind::target) {
      for (Command& pending : queue_)
        if (pending.kind == Command::Kind::target && pending.name == c.name) {
          pending = std::move(c);
          return;
        }
    }
    if (c.kind == Command::Kind::reset) queue_.clear();
    queue_.push_back(std::move(c));
  }

  std::vector<Command> drain() {
    std::lock_guard<std::mutex> lock(mutex_);
    std::vector<Command> out(std::make_move_iterator(queue_.begin()),
                             std::make_move_iterator(queue_.end()));
    queue_.clear();
    return out;
  }

 private:
  std::mutex mutex_;
  std::deque<Command> queue_;
};

// Immutable facts the network side needs to validate requests.
struct SessionInfo {
  std::string scenario;
  std::set<std::string> tasks;
  std::set<std::string> guides;
  bool balance_available = false;
  double timestep = 0.0;
  double frame_rate = 30.0;
};

inline Json hello_frame(const SessionInfo& info, const std::string& role) {
  return Json{{"type", "hello"},
              {"protocol", kProtocolVersion},
              {"role", role},
              {"scenario", info.scenario},
              {"tasks", info.tasks},
              {"guides", info.guides},
              {"balance_available", info.balance_available},
              {"timestep", info.timestep},
              {"frame_rate", info.frame_rate}};
}

inline Json error_frame(const std::string& message) {
  return Json{{"type", "error"}, {"message", message}};
}

// Parses one client message. Throws Error with a user-facing message.
inline Command parse_command(const std::string& text, const SessionInfo& info) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const Json::parse_error&) {
    throw Error("malformed JSON");
  }
  if (!doc.is_object() || !doc.contains("type") || !doc.at("type").is_string())
    throw Error("message needs a string field \"type\"");
  const std::string type = doc.at("type").get<std::string>();
  Command c;
  if (type == "set_target") {
    c.kind = Command::Kind::target;
    if (!doc.contains("task") || !doc.at("task").is_string())
      throw Error("set_target needs a string field \"task\"");
    c.name = doc.at("task").get<std::string>();
    if (!info.tasks.count(c.name)) throw Error("unknown task '" + c.name + "'");
    const Json* pos = doc.contains("pos") ? &doc.at("pos") : nullptr;
    if (!pos || !pos->is_array() || pos->size() != 3)
      throw Error("set_target needs \"pos\": [x, y, z]");
    for (int i = 0; i < 3; ++i) {
      if (!(*pos)[i].is_number()) throw Error("\"pos\" entries must be numbers");
      c.pos[i] = (*pos)[i].get<double>();
    }
    if (!c.pos.allFinite()) throw Error("\"pos\" must be finite");
    if (doc.contains("quat") && !doc.at("quat").is_null()) {
      const Json& q = doc.at("quat");
      if (!q.is_array() || q.size() != 4) throw Error("\"quat\" must be [w, x, y, z]");
      double v[4];
      for (int i = 0; i < 4; ++i) {
        if (!q[i].is_number()) throw Error("\"quat\" entries must be numbers");
        v[i] = q[i].get<double>();
      }
      Quat r(v[0], v[1], v[2], v[3]);
      if (!(r.norm() > 1e-9) || !std::isfinite(r.norm())) throw Error("\"quat\" must be nonzero");
      c.quat = r.normalized();
    }
  } else if (type == "toggle") {
    if (!doc.contains("what") || !doc.at("what").is_string())
      throw Error("toggle needs a string field \"what\"");
    if (!doc.contains("on") || !doc.at("on").is_boolean())
      throw Error("toggle needs a boolean field \"on\"");
    const std::string what = doc.at("what").get<std::string>();
    c.on = doc.at("on").get<bool>();
    if (what == "balance") {
      c.kind = Command::Kind::balance;
      if (c.on && !info.balance_available)
        throw Error("balance is unavailable: no support region");
    } else if (what.rfind("guide:", 0) == 0) {
      c.kind = Command::Kind::guide;
      c.name = what.substr(6);
      if (!info.guides.count(c.name)) throw Error("unknown guide '" + c.name + "'");
    } else {
      throw Error("toggle \"what\" must be \"balance\" or \"guide:<name>\"");
    }
  } else if (type == "reset") {
    c.kind = Command::Kind::reset;
  } else {
    throw Error("unknown message type '" + type + "'");
  }
  return c;
}

inline Json state_frame(const Simulation& sim) {
  const AvatarModel& m = sim.model();
  const Poses poses = forward_kinematics(m, sim.state().q);
  Json joints = Json::array();
  for (const Segment& s : m.segments()) {
    const Transform& t = poses[s.id];
    joints.push_back({{"name", s.name},
                      {"parent", s.parent ? Json(*s.parent) : Json(nullptr)},
                      {"pos", vec_json(t.translation())},
                      {"quat", quat_json(Quat(t.linear()))}});
  }
  const Vec3 com = com_position(m, poses);
  Json frame{{"type", "state"},
             {"t", sim.state().t},
             {"step", sim.steps()},
             {"joints", joints},
             {"com", vec_json(com)},
             {"balance", sim.balance_enabled()}};
  if (sim.has_ellipse()) {
    const SupportEllipse& e = sim.ellipse();
    const double delta = balance_distance(e, com);
    const auto [e1, e2] = plane_basis(e.up_axis);
    const Vec2 axes = e.semi_axes();
    frame["delta"] = delta;
    frame["delta_norm"] = delta / (e.d * e.d);
    frame["ellipse"] = {{"center", vec_json(e.center)}, {"axes", {axes[0], axes[1]}},
                        {"angle", e.angle()},           {"d", e.d},
                        {"up", vec_json(e.up_axis)},    {"e1", vec_json(e1)},
                        {"e2", vec_json(e2)}};
  } else {
    frame["delta"] = nullptr;
    frame["delta_norm"] = nullptr;
    frame["ellipse"] = nullptr;
  }
  const StepResult& last = sim.last_step();
  std::vector<double> impulse(last.contacts.size(), 0.0);
  if (last.lcp.z.size() == last.system.size())
    for (int r = 0; r < last.system.size(); ++r)
      if (last.system.kinds[r] == RowKind::contact) impulse[last.system.source[r]] += last.lcp.z[r];
  Json contacts = Json::array();
  for (std::size_t i = 0; i < last.contacts.size(); ++i) {
    const Contact& c = last.contacts[i];
    contacts.push_back({{"segment", m.segment(c.segment).name},
                        {"point", vec_json(c.world_point)},
                        {"normal", vec_json(c.normal)},
                        {"gap", c.gap},
                        {"impulse", impulse[i]}});
  }
  frame["contacts"] = contacts;
  Json targets = Json::object();
  for (const TaskTarget& t : sim.targets()) {
    const Transform actual = task_frame_pose(m, poses, *m.find_task_frame(t.task_frame));
    Json entry{{"pos", vec_json(t.desired_position)},
               {"actual", vec_json(actual.translation())},
               {"enabled", t.enabled}};
    if (t.desired_orientation) entry["quat"] = quat_json(*t.desired_orientation);
    targets[t.task_frame] = entry;
  }
  frame["targets"] = targets;
  Json guides = Json::object();
  for (const VirtualGuide& g : sim.settings().guides) {
    const Transform pose = task_frame_pose(m, poses, *m.find_task_frame(g.task_frame));
    guides[g.name] = {{"enabled", g.enabled},
                      {"angle", guide_axis_angle(g, pose)},
                      {"lateral", guide_lateral_error(g, pose)}};
  }
  frame["guides"] = guides;
  return frame;
}

class Hub;

class Session : public std::enable_shared_from_this<Session> {
 public:
  Session(tcp::socket socket, Hub& hub, std::size_t queue_limit)
      : ws_(std::move(socket)), hub_(hub), limit_(queue_limit) {}

  void start();
  void send(std::shared_ptr<const std::string> text) {
    if (closed_) return;
    if (queue_.size() >= limit_ && queue_.size() > (writing_ ? 1u : 0u)) {
      // Drop the oldest frame that is not being written.
      queue_.erase(queue_.begin() + (writing_ ? 1 : 0));
      ++dropped_;
    }
    queue_.push_back(std::move(text));
    if (!writing_) write_next();
  }
  void set_role(const std::string& role) { role_ = role; }
  const std::string& role() const { return role_; }
  std::size_t dropped() const { return dropped_; }

 private:
  void read_next();
  void on_read(beast::error_code ec);
  void write_next() {
    if (queue_.empty() || closed_) {
      writing_ = false;
      return;
    }
    writing_ = true;
    ws_.text(true);
    ws_.async_write(asio::buffer(*queue_.front()),
                    [self = shared_from_this()](beast::error_code ec, std::size_t) {
                      self->queue_.pop_front();
                      if (ec) {
                        self->close();
                        return;
                      }
                      self->write_next();
                    });
  }
  void close();

  websocket::stream<tcp::socket> ws_;
  Hub& hub_;
  std::size_t limit_;
  beast::flat_buffer buffer_;
  std::deque<std::shared_ptr<const std::string>> queue_;
  bool writing_ = false;
  bool closed_ = false;
  std::string role_ = "observe";
  std::size_t dropped_ = 0;
};

// Network side: accepts clients, assigns roles, fans out frames. Runs entirely
// on the io_context thread.
class Hub {
 public:
  Hub(asio::io_context& io, SessionInfo info, Mailbox& mailbox, std::size_t queue_limit)
      : io_(io), info_(std::move(info)), mailbox_(mailbox), limit_(queue_limit) {}

  void attach(const std::shared_ptr<Session>& s) {
    sessions_.push_back(s);
    if (!steering_.lock()) steering_ = s;
    s->set_role(steering_.lock() == s ? "steer" : "observe");
    s->send(std::make_shared<const std::string>(hello_frame(info_, s->role()).dump()));
    spdlog::info("client connected as {}", s->role());
  }

  void detach(const Session* s) {
    const bool was_steering = steering_.lock().get() == s;
    sessions_.erase(std::remove_if(sessions_.begin(), sessions_.end(),
                                   [&](const std::weak_ptr<Session>& w) {
                                     auto p = w.lock();
                                     return !p || p.get() == s;
                                   }),
                    sessions_.end());
    if (!was_steering) return;
    steering_.reset();
    for (auto& w : sessions_)
      if (auto p = w.lock()) {
        steering_ = p;
        p->set_role("steer");
        p->send(std::make_shared<const std::string>(
            Json{{"type", "role"}, {"role", "steer"}}.dump()));
        break;
      }
  }

  void handle(Session& from, const std::string& text) {
    try {
      Command c = parse_command(text, info_);
      if (from.role() != "steer") throw Error("read-only client: another client is steering");
      mailbox_.post(std::move(c));
    } catch (const Error& e) {
      from.send(std::make_shared<const std::string>(error_frame(e.what()).dump()));
    }
  }

  void broadcast(std::shared_ptr<const std::string> frame) {
    for (auto& w : sessions_)
      if (auto p = w.lock()) p->send(frame);
  }

 private:
  asio::io_context& io_;
  SessionInfo info_;
  Mailbox& mailbox_;
  std::size_t limit_;
  std::vector<std::weak_ptr<Session>> sessions_;
  std::weak_ptr<Session> steering_;
};

inline void Session::start() {
  ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
  ws_.async_accept([self = shared_from_this()](beast::error_code ec) {
    if (ec) return;
    self->hub_.attach(self);
    self->read_next();
  });
}

inline void Session::read_next() {
  ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
    self->on_read(ec);
  });
}

inline void Session::on_read(beast::error_code ec) {
  if (ec) {
    close();
    return;
  }
  const std::string text = beast::buffers_to_string(buffer_.data());
  buffer_.consume(buffer_.size());
  hub_.handle(*this, text);
  read_next();
}

inline void Session::close() {
  if (closed_) return;
  closed_ = true;
  hub_.detach(this);
  beast::error_code ignored;
  beast::get_lowest_layer(ws_).close(ignored);
}

}  // namespace serve_detail

class Server {
 public:
  Server(Scenario scenario, ServeOptions options = {})
      : options_(options), sim_(std::move(scenario)) {
    if (!(options_.frame_rate > 0.0)) throw ConfigError("frame_rate", "must be > 0");
    serve_detail::SessionInfo info;
    info.scenario = sim_.scenario().name;
    for (const TaskFrame& t : sim_.model().task_frames()) info.tasks.insert(t.name);
    for (const VirtualGuide& g : sim_.settings().guides) info.guides.insert(g.name);
    info.balance_available = sim_.has_ellipse();
    info.timestep = sim_.timestep();
    info.frame_rate = options_.frame_rate;
    hub_ = std::make_unique<serve_detail::Hub>(io_, std::move(info), mailbox_,
                                               options_.client_queue);
    namespace asio = boost::asio;
    try {
      const auto endpoint = serve_detail::tcp::endpoint(
          asio::ip::make_address(options_.address), options_.port);
      acceptor_.open(endpoint.protocol());
      acceptor_.bind(endpoint);
      acceptor_.listen();
    } catch (const boost::system::system_error& e) {
      throw Error("cannot listen on " + options_.address + ":" +
                  std::to_string(options_.port) + ": " + e.code().message());
    }
  }

  ~Server() { stop(); }

  unsigned short port() const { return acceptor_.local_endpoint().port(); }

  // Blocks until stop() is called from another thread or a signal handler.
  void run() {
    accept_next();
    std::thread physics([this] { physics_loop(); });
    io_.run();
    running_ = false;
    physics.join();
  }

  void stop() {
    running_ = false;
    io_.stop();
  }

 private:
  void accept_next() {
    acceptor_.async_accept([this](boost::system::error_code ec,
                                  serve_detail::tcp::socket socket) {
      if (!ec)
        std::make_shared<serve_detail::Session>(std::move(socket), *hub_,
                                                options_.client_queue)
            ->start();
      if (acceptor_.is_open()) accept_next();
    });
  }

  void publish(std::string text) {
    auto frame = std::make_shared<const std::string>(std::move(text));
    boost::asio::post(io_, [this, frame] { hub_->broadcast(frame); });
  }

  void apply(const serve_detail::Command& c) {
    using Kind = serve_detail::Command::Kind;
    switch (c.kind) {
      case Kind::target: sim_.set_target(c.name, c.pos, c.quat); break;
      case Kind::balance: sim_.set_balance(c.on); break;
      case Kind::guide: sim_.set_guide(c.name, c.on); break;
      case Kind::reset: sim_.reset(); break;
    }
  }

  void physics_loop() {
    using Clock = std::chrono::steady_clock;
    const auto period = std::chrono::duration_cast<Clock::duration>(
        std::chrono::duration<double>(1.0 / options_.frame_rate));
    auto origin = Clock::now();
    double sim_origin = sim_.state().t;
    auto next_frame = origin;
    bool warned = false;
    while (running_) {
      for (const serve_detail::Command& c : mailbox_.drain()) {
        try {
          const bool reset = c.kind == serve_detail::Command::Kind::reset;
          apply(c);
          if (reset) {
            origin = Clock::now();
            sim_origin = sim_.state().t;
          }
        } catch (const Error& e) {
          publish(serve_detail::error_frame(e.what()).dump());
        }
      }
      // Step toward wall time, but never past 80% of the frame budget.
      const auto budget_end = next_frame + period * 4 / 5;
      const double wall = std::chrono::duration<double>(Clock::now() - origin).count();
      while (sim_.state().t - sim_origin + 0.5 * sim_.timestep() < wall) {
        if (Clock::now() > budget_end) {
          if (!warned) spdlog::warn("physics slower than real time; slowing the clock");
          warned = true;
          origin = Clock::now() - std::chrono::duration_cast<Clock::duration>(
                                      std::chrono::duration<double>(sim_.state().t - sim_origin));
          break;
        }
        try {
          sim_.advance();
        } catch (const SimulationError& e) {
          spdlog::error("{}; resetting", e.what());
          publish(serve_detail::Json{{"type", "error"}, {"message", e.what()}, {"reset", true}}.dump());
          sim_.reset();
          origin = Clock::now();
          sim_origin = sim_.state().t;
          break;
        }
      }
      publish(serve_detail::state_frame(sim_).dump());
      next_frame += period;
      const auto now = Clock::now();
      if (next_frame < now) next_frame = now;
      std::this_thread::sleep_until(next_frame);
    }
  }

  ServeOptions options_;
  Simulation sim_;
  boost::asio::io_context io_;
  serve_detail::tcp::acceptor acceptor_{io_};
  serve_detail::Mailbox mailbox_;
  std::unique_ptr<serve_detail::Hub> hub_;
  std::atomic<bool> running_{true};
};

}  // namespace balsim
