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

// Scenario-driven simulation: controller + constrained dynamics, one metrics
// record per step, and the batch `run` entry point.

#pragma once

#include <chrono>
#include <ctime>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "balsim/control.hpp"
#include "balsim/scenario.hpp"

namespace balsim {

struct RunOverrides {
  std::optional<bool> balance;
  std::optional<double> duration;
  bool guides = true;
};

struct MetricsRecord {
  double t = 0.0;
  double delta = 0.0;
  double delta_norm = 0.0;       // delta / d^2
  double delta_sqrt_norm = 0.0;  // sign(delta) sqrt(|delta|) / d
  Vec3 com = Vec3::Zero();
  bool balance_on = false;
  double balance_impulse = 0.0;
  int contacts = 0;
  double contact_impulse = 0.0;  // vertical, N s
  double max_penetration = 0.0;  // m, >= 0
  int limits_active = 0;
  double limit_violation = 0.0;  // rad, >= 0
  std::vector<double> task_errors;
  std::vector<double> heights;
  double reference_height = 0.0;
  std::vector<double> guide_angles;
  std::vector<double> guide_lateral;
  double kinetic = 0.0;
  double potential = 0.0;
  double stored = 0.0;  // controller springs
  bool velocity_clamped = false;

  double mechanical_energy() const { return kinetic + potential + stored; }
};

class Simulation {
 public:
  explicit Simulation(Scenario scenario, RunOverrides overrides = {})
      : sc_(std::move(scenario)), overrides_(overrides) {
    if (overrides_.duration && !(*overrides_.duration > 0.0))
      throw ConfigError("duration", "must be > 0");
    setup_initial_state();
    reset();
  }

  const Scenario& scenario() const { return sc_; }
  const AvatarModel& model() const { return sc_.avatar; }
  const SimState& state() const { return state_; }
  const SimState& initial_state() const { return initial_; }
  const SupportEllipse& ellipse() const { return ellipse_; }
  bool has_ellipse() const { return has_ellipse_; }
  long steps() const { return steps_; }
  double duration() const { return overrides_.duration.value_or(sc_.duration); }
  double timestep() const { return sc_.timestep; }
  bool balance_enabled() const { return balance_on_; }
  const ControlSettings& settings() const { return settings_; }
  const std::vector<Contact>& last_contacts() const { return last_.contacts; }
  const StepResult& last_step() const { return last_; }
  const ControlOutput& last_control() const { return control_; }
  const VecX& joint_damping() const { return joint_damping_; }

  void reset() {
    state_ = initial_;
    steps_ = 0;
    balance_on_ = overrides_.balance.value_or(sc_.balance.enabled);
    if (balance_on_ && !has_ellipse_)
      throw DegenerateSupportError("balance requested but no support region is available");
    live_.clear();
    settings_.targets = initial_targets_;
    settings_.guides = initial_guides_;
    if (!overrides_.guides)
      for (VirtualGuide& g : settings_.guides) g.enabled = false;
    last_ = StepResult{state_, {}, UnilateralSystem(model().n_dof()), {}, false};
  }

  void set_balance(bool on) {
    if (on && !has_ellipse_)
      throw DegenerateSupportError("no support region is available");
    balance_on_ = on;
  }

  void set_guide(const std::string& name, bool on) {
    for (VirtualGuide& g : settings_.guides)
      if (g.name == name) {
        g.enabled = on;
        return;
      }
    throw ConfigError("guide", "unknown guide '" + name + "'");
  }

  // Live target from an operator; overrides the recorded stream for that
  // task from now on.
  void set_target(const std::string& task, const Vec3& pos,
                  const std::optional<Quat>& orientation = std::nullopt) {
    if (!model().find_task_frame(task))
      throw ConfigError("task", "unknown task '" + task + "'");
    if (!pos.allFinite()) throw ArgumentError("target position is not finite");
    live_[task] = StreamValue{pos, orientation};
    TaskTarget& t = target_for(task);
    t.desired_position = pos;
    if (orientation) t.desired_orientation = orientation->normalized();
    t.enabled = true;
  }

  const std::vector<TaskTarget>& targets() const { return settings_.targets; }

  std::vector<std::string> column_names() const {
    std::vector<std::string> c = {"t", "delta", "delta_norm", "delta_sqrt_norm",
                                  "com_x", "com_y", "com_z", "balance_on",
                                  "balance_impulse", "contacts", "contact_impulse",
                                  "max_penetration", "limits_active", "limit_violation"};
    for (const TaskTarget& t : settings_.targets) c.push_back("err_" + t.task_frame);
    for (const auto& [label, task] : sc_.metrics.heights) c.push_back(label + "_z");
    if (sc_.metrics.reference_plane) c.push_back(*sc_.metrics.reference_plane + "_z");
    for (const VirtualGuide& g : settings_.guides) {
      c.push_back("angle_" + g.name);
      c.push_back("lateral_" + g.name);
    }
    for (const char* e : {"kinetic", "potential", "stored", "energy", "velocity_clamped"})
      c.push_back(e);
    return c;
  }

  std::string format_row(const MetricsRecord& r) const {
    std::string out = fmt::format(
        "{:.6f},{:.12g},{:.12g},{:.12g},{:.12g},{:.12g},{:.12g},{},{:.12g},{},{:.12g},{:.12g},{},{:.12g}",
        r.t, r.delta, r.delta_norm, r.delta_sqrt_norm, r.com.x(), r.com.y(), r.com.z(),
        r.balance_on ? 1 : 0, r.balance_impulse, r.contacts, r.contact_impulse,
        r.max_penetration, r.limits_active, r.limit_violation);
    for (double v : r.task_errors) out += fmt::format(",{:.12g}", v);
    for (double v : r.heights) out += fmt::format(",{:.12g}", v);
    if (sc_.metrics.reference_plane) out += fmt::format(",{:.12g}", r.reference_height);
    for (std::size_t i = 0; i < r.guide_angles.size(); ++i)
      out += fmt::format(",{:.12g},{:.12g}", r.guide_angles[i], r.guide_lateral[i]);
    out += fmt::format(",{:.12g},{:.12g},{:.12g},{:.12g},{}", r.kinetic, r.potential,
                       r.stored, r.mechanical_energy(), r.velocity_clamped ? 1 : 0);
    return out;
  }

  // Advances one timestep and returns the record of the new state.
  MetricsRecord advance() {
    update_targets(state_.t);
    control_ = control_step(model(), state_, settings_, balance_on_ ? &ellipse_ : nullptr);
    StepOptions opts = sc_.step;
    opts.joint_damping = joint_damping_;
    opts.damping_matrix = control_.task_damping;
    if (has_ellipse_) opts.balance_margin = sc_.balance.margin * ellipse_.d * ellipse_.d;
    const BalanceConstraintRow* row = control_.balance ? &*control_.balance : nullptr;
    try {
      last_ = step(model(), state_, control_.torques, sc_.planes, row, sc_.timestep, opts);
    } catch (const Error& e) {
      throw SimulationError(steps_, e.what());
    }
    if (last_.velocity_clamped)
      spdlog::warn("step {}: velocity clamped to {} m/s", steps_, opts.velocity_cap);
    state_ = last_.state;
    ++steps_;
    return record();
  }

  // Metrics of the current state (impulses from the most recent step).
  MetricsRecord record() const {
    MetricsRecord r;
    const Poses poses = forward_kinematics(model(), state_.q);
    r.t = state_.t;
    r.com = com_position(model(), poses);
    if (has_ellipse_) {
      const double d2 = ellipse_.d * ellipse_.d;
      r.delta = balance_distance(ellipse_, r.com);
      r.delta_norm = r.delta / d2;
      r.delta_sqrt_norm = std::copysign(std::sqrt(std::abs(r.delta)), r.delta) / ellipse_.d;
    }
    r.balance_on = balance_on_;
    r.velocity_clamped = last_.velocity_clamped;
    if (last_.lcp.z.size() == last_.system.size()) {
      r.balance_impulse = last_.impulse_of(RowKind::balance);
      const Vec3 up = sc_.step.gravity.norm() > 0 ? Vec3(-sc_.step.gravity.normalized())
                                                  : Vec3(Vec3::UnitZ());
      r.contact_impulse = last_.vertical_impulse(up);
      for (RowKind k : last_.system.kinds)
        if (k == RowKind::joint_limit_lower || k == RowKind::joint_limit_upper)
          ++r.limits_active;
    }
    const auto pen = detect_contacts(model(), poses, sc_.planes, 0.0);
    r.contacts = static_cast<int>(last_.contacts.size());
    for (const Contact& c : pen) r.max_penetration = std::max(r.max_penetration, -c.gap);
    for (const Joint& j : model().joints()) {
      if (!j.limited()) continue;
      const double v = state_.q[j.q_offset];
      r.limit_violation = std::max({r.limit_violation, j.lower - v, v - j.upper});
    }
    for (const TaskTarget& t : settings_.targets) {
      const Transform pose =
          task_frame_pose(model(), poses, *model().find_task_frame(t.task_frame));
      r.task_errors.push_back((t.desired_position - pose.translation()).norm());
    }
    for (const auto& [label, task] : sc_.metrics.heights) {
      const Transform pose = task_frame_pose(model(), poses, *model().find_task_frame(task));
      r.heights.push_back(up_axis().dot(pose.translation()));
    }
    if (sc_.metrics.reference_plane)
      r.reference_height =
          up_axis().dot(sc_.planes[sc_.plane_index(*sc_.metrics.reference_plane)].point);
    for (const VirtualGuide& g : settings_.guides) {
      const Transform pose =
          task_frame_pose(model(), poses, *model().find_task_frame(g.task_frame));
      r.guide_angles.push_back(guide_axis_angle(g, pose));
      r.guide_lateral.push_back(guide_lateral_error(g, pose));
    }
    r.kinetic = kinetic_energy(model(), poses, state_.qdot);
    r.potential = potential_energy(model(), poses, sc_.step.gravity);
    r.stored = posture_energy(model(), state_.q, settings_.posture);
    for (const VirtualGuide& g : settings_.guides)
      if (g.enabled)
        r.stored += guide_energy(
            g, task_frame_pose(model(), poses, *model().find_task_frame(g.task_frame)));
    return r;
  }

  Vec3 up_axis() const {
    return sc_.step.gravity.norm() > 0 ? Vec3(-sc_.step.gravity.normalized())
                                       : Vec3(Vec3::UnitZ());
  }

 private:
  TaskTarget& target_for(const std::string& task) {
    for (TaskTarget& t : settings_.targets)
      if (t.task_frame == task) return t;
    TaskTarget t = sc_.gains.task_defaults;
    t.task_frame = task;
    settings_.targets.push_back(t);
    return settings_.targets.back();
  }

  void update_targets(double t) {
    if (!sc_.stream) return;
    std::vector<TaskTarget> sampled;
    std::map<std::string, StreamValue> values = sc_.stream->sample_all(t);
    for (const auto& [task, v] : values) {
      if (live_.count(task)) continue;
      TaskTarget tt = target_for(task);
      tt.desired_position = v.position;
      if (v.orientation) tt.desired_orientation = v.orientation;
      sampled.push_back(tt);
    }
    if (sc_.retarget)
      sampled = retarget_targets(sampled, sc_.retarget->actor, sc_.retarget->avatar,
                                 sc_.retarget->task_limbs);
    for (const TaskTarget& s : sampled) {
      TaskTarget& t = target_for(s.task_frame);
      t.desired_position = s.desired_position;
      t.desired_orientation = s.desired_orientation;
    }
  }

  void setup_initial_state() {
    const AvatarModel& m = sc_.avatar;
    SimState s{m.neutral_configuration(), VecX::Zero(m.n_dof()), 0.0};
    for (const auto& [name, value] : sc_.initial.joints)
      s.q[m.joint(*m.find_joint(name)).q_offset] = value;
    for (const Joint& j : m.joints())
      if (j.limited() && (s.q[j.q_offset] < j.lower || s.q[j.q_offset] > j.upper))
        throw ConfigError("initial.joints." + j.name, "outside the joint limits");
    if (m.floating_base()) {
      s.q[0] = sc_.initial.root_xy.x();
      s.q[1] = sc_.initial.root_xy.y();
    }
    if (sc_.initial.place_on) {
      if (!m.floating_base())
        throw ConfigError("initial.place_on", "requires a floating base");
      const EnvironmentPlane& pl = sc_.planes[sc_.plane_index(*sc_.initial.place_on)];
      const Poses poses = forward_kinematics(m, s.q);
      double lowest = kInf;
      for (const Segment& seg : m.segments())
        for (const Vec3& p : seg.collision_points)
          lowest = std::min(lowest, pl.normal.dot(poses[seg.id] * p - pl.point));
      if (!std::isfinite(lowest))
        throw ConfigError("initial.place_on", "avatar has no collision points");
      s.q.head<3>() -= lowest * pl.normal;
    }
    initial_ = s;

    const Poses poses = forward_kinematics(m, s.q);
    has_ellipse_ = false;
    if (sc_.balance.explicit_ellipse) {
      const Vec3 up = sc_.plane_index(sc_.balance.support_plane) >= 0
                          ? sc_.planes[sc_.plane_index(sc_.balance.support_plane)].normal
                          : up_axis();
      ellipse_ = make_ellipse(sc_.balance.ellipse.center, sc_.balance.ellipse.a,
                              sc_.balance.ellipse.b, sc_.balance.ellipse.angle, up);
      has_ellipse_ = true;
    } else if (sc_.plane_index(sc_.balance.support_plane) >= 0) {
      std::vector<EnvironmentPlane> support{
          sc_.planes[sc_.plane_index(sc_.balance.support_plane)]};
      std::vector<Vec3> points;
      for (const Contact& c : detect_contacts(m, poses, support, sc_.step.contact_activation))
        points.push_back(c.world_point);
      try {
        ellipse_ = fit_support_ellipse(points, support[0].normal, sc_.balance.safety);
        has_ellipse_ = true;
      } catch (const DegenerateSupportError&) {
        if (sc_.balance.enabled) throw;
      }
    }

    // Controller settings resolved against the initial pose.
    settings_ = ControlSettings{};
    settings_.implicit_damping = sc_.gains.implicit_damping;
    settings_.posture.q_ref = s.q;
    settings_.posture.kp = VecX::Zero(m.n_dof());
    settings_.posture.kd = VecX::Zero(m.n_dof());
    joint_damping_ = VecX::Zero(m.n_dof());
    for (const Joint& j : m.joints()) {
      if (j.kind == JointKind::free6) continue;
      JointGain g = sc_.gains.posture;
      const int gi = detail::best_match(sc_.gains.posture_joints, j.name);
      if (gi >= 0) g = sc_.gains.posture_joints[gi].second;
      double damp = sc_.gains.damping;
      const int di = detail::best_match(sc_.gains.damping_joints, j.name);
      if (di >= 0) damp = sc_.gains.damping_joints[di].second;
      for (int k = 0; k < j.nv(); ++k) {
        settings_.posture.kp[j.dof_offset + k] = g.kp;
        settings_.posture.kd[j.dof_offset + k] = g.kd;
        joint_damping_[j.dof_offset + k] = damp;
      }
    }
    for (const TargetSpec& spec : sc_.targets) {
      TaskTarget t = spec.target;
      const Transform pose = task_frame_pose(m, poses, *m.find_task_frame(t.task_frame));
      switch (spec.anchor) {
        case TargetSpec::Anchor::absolute: t.desired_position = spec.value; break;
        case TargetSpec::Anchor::initial: t.desired_position = pose.translation(); break;
        case TargetSpec::Anchor::offset:
          t.desired_position = pose.translation() + spec.value;
          break;
      }
      if (spec.orientation_from_initial) t.desired_orientation = Quat(pose.linear());
      t.validate();
      settings_.targets.push_back(t);
    }
    if (sc_.stream)
      for (const std::string& task : sc_.stream->tasks()) target_for(task);
    for (const GuideSpec& spec : sc_.guides) {
      VirtualGuide g = spec.guide;
      const Transform pose = task_frame_pose(m, poses, *m.find_task_frame(g.task_frame));
      if (spec.point_from_initial) g.point = pose.translation();
      if (spec.direction_from_initial) g.direction = pose.linear().col(0);
      if (spec.orientation_from_initial) g.orientation = Quat(pose.linear());
      g.validate();
      settings_.guides.push_back(g);
    }
    initial_targets_ = settings_.targets;
    initial_guides_ = settings_.guides;
  }

  Scenario sc_;
  RunOverrides overrides_;
  SimState initial_;
  SimState state_;
  SupportEllipse ellipse_;
  bool has_ellipse_ = false;
  bool balance_on_ = true;
  long steps_ = 0;
  ControlSettings settings_;
  VecX joint_damping_;  // applied implicitly by the step
  std::vector<TaskTarget> initial_targets_;
  std::vector<VirtualGuide> initial_guides_;
  std::map<std::string, StreamValue> live_;
  StepResult last_{SimState{}, {}, UnilateralSystem(0), {}, false};
  ControlOutput control_;
};

struct RunSummary {
  long steps = 0;
  double min_delta = kInf;
  double min_delta_norm = kInf;
  double max_penetration = 0.0;
  double max_guide_angle = 0.0;
  double max_limit_violation = 0.0;
};

inline std::string iso_timestamp() {
  const std::time_t now = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

// Deterministic batch run. Writes a `# generated_at` line, the column header
// and one row per step to `out`.
inline RunSummary run(const Scenario& scenario, const RunOverrides& overrides,
                      std::ostream& out) {
  Simulation sim(scenario, overrides);
  out << "# generated_at=" << iso_timestamp() << " scenario=" << scenario.name << "\n";
  const auto cols = sim.column_names();
  for (std::size_t i = 0; i < cols.size(); ++i) out << (i ? "," : "") << cols[i];
  out << "\n";
  RunSummary s;
  const long n = std::lround(sim.duration() / sim.timestep());
  for (long k = 0; k < n; ++k) {
    const MetricsRecord r = sim.advance();
    out << sim.format_row(r) << "\n";
    ++s.steps;
    if (sim.has_ellipse()) {
      s.min_delta = std::min(s.min_delta, r.delta);
      s.min_delta_norm = std::min(s.min_delta_norm, r.delta_norm);
    }
    s.max_penetration = std::max(s.max_penetration, r.max_penetration);
    s.max_limit_violation = std::max(s.max_limit_violation, r.limit_violation);
    for (double a : r.guide_angles) s.max_guide_angle = std::max(s.max_guide_angle, a);
  }
  return s;
}

inline RunSummary run_to_file(const Scenario& scenario, const RunOverrides& overrides,
                              const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("out", "cannot write '" + path + "'");
  RunSummary s = run(scenario, overrides, out);
  out.flush();
  if (!out) throw ConfigError("out", "write failed for '" + path + "'");
  return s;
}

}  // namespace balsim
