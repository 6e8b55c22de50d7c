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

// Scenario files (JSON). See docs/scenario_format.md for the schema.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "balsim/control.hpp"
#include "balsim/dynamics.hpp"
#include "balsim/model_io.hpp"
#include "balsim/target_stream.hpp"

namespace balsim {

struct ExplicitEllipse {
  Vec3 center = Vec3::Zero();
  double a = 0.1;
  double b = 0.1;
  double angle = 0.0;
};

struct BalanceConfig {
  bool enabled = true;
  bool explicit_ellipse = false;
  ExplicitEllipse ellipse;
  double safety = 0.9;
  double stabilization = 0.0;
  double recovery = 0.1;
  double margin = 0.0;  // fraction of d^2 kept in reserve
  std::string support_plane = "floor";
};

struct JointGain {
  double kp = 0.0;
  double kd = 0.0;
};

struct GainConfig {
  TaskTarget task_defaults;
  JointGain posture{20.0, 2.0};
  // Per-joint posture gains keyed by exact joint name, "prefix*" or
  // "*suffix"; an exact name beats a pattern, a longer pattern beats a
  // shorter one.
  std::vector<std::pair<std::string, JointGain>> posture_joints;
  double damping = 1.0;
  std::vector<std::pair<std::string, double>> damping_joints;
  // Task and guide damping evaluated at the end-of-step velocity.
  bool implicit_damping = true;
};

struct TargetSpec {
  enum class Anchor { absolute, initial, offset };
  TaskTarget target;
  Anchor anchor = Anchor::absolute;
  Vec3 value = Vec3::Zero();
  bool orientation_from_initial = false;
};

struct GuideSpec {
  VirtualGuide guide;
  bool point_from_initial = false;
  bool direction_from_initial = false;  // frame x axis at t = 0
  bool orientation_from_initial = false;
};

struct RetargetConfig {
  Morphology actor;
  Morphology avatar;
  std::map<std::string, std::string> task_limbs;
};

struct InitialPose {
  std::map<std::string, double> joints;
  std::optional<std::string> place_on = std::string("floor");
  Vec2 root_xy = Vec2::Zero();
};

struct MetricsConfig {
  // Label -> task frame whose height is logged as `<label>_z`.
  std::vector<std::pair<std::string, std::string>> heights;
  std::optional<std::string> reference_plane;  // its height is logged too
};

struct Scenario {
  std::string name;
  std::string path;
  std::string avatar_path;
  AvatarModel avatar;
  std::vector<EnvironmentPlane> planes;
  InitialPose initial;
  BalanceConfig balance;
  GainConfig gains;
  std::vector<TargetSpec> targets;
  std::vector<GuideSpec> guides;
  std::optional<RetargetConfig> retarget;
  std::optional<TargetStream> stream;
  std::string stream_path;
  double duration = 1.0;
  double timestep = 1e-3;
  std::uint64_t seed = 0;
  StepOptions step;
  MetricsConfig metrics;

  int plane_index(const std::string& plane) const {
    for (int i = 0; i < static_cast<int>(planes.size()); ++i)
      if (planes[i].name == plane) return i;
    return -1;
  }
};

namespace detail {

using json_util::Json;

inline const Json* member(const Json& obj, const char* key) {
  if (!obj.is_object() || !obj.contains(key)) return nullptr;
  return &obj.at(key);
}

inline bool boolean(const Json& j, const std::string& field) {
  if (!j.is_boolean()) throw ConfigError(field, "expected true or false");
  return j.get<bool>();
}

inline double positive(const Json& obj, const char* key, double fallback,
                       const std::string& field) {
  const double v = json_util::number_or(obj, key, fallback, field);
  if (!(v > 0.0)) throw ConfigError(field + "." + key, "must be > 0");
  return v;
}

inline double nonnegative(const Json& obj, const char* key, double fallback,
                          const std::string& field) {
  const double v = json_util::number_or(obj, key, fallback, field);
  if (!(v >= 0.0)) throw ConfigError(field + "." + key, "must be >= 0");
  return v;
}

inline Vec3 unit(const Json& j, const std::string& field) {
  const Vec3 v = json_util::vec3(j, field);
  if (!(v.norm() > 0.0)) throw ConfigError(field, "must be nonzero");
  return v.normalized();
}

inline void read_task_gains(const Json& j, TaskTarget& t, const std::string& f) {
  t.kp = nonnegative(j, "kp", t.kp, f);
  t.kd = nonnegative(j, "kd", t.kd, f);
  t.kp_rot = nonnegative(j, "kp_rot", t.kp_rot, f);
  t.kd_rot = nonnegative(j, "kd_rot", t.kd_rot, f);
  t.max_force = positive(j, "max_force", t.max_force, f);
  t.max_torque = positive(j, "max_torque", t.max_torque, f);
}

inline Morphology read_morphology(const Json& j, const std::string& f) {
  if (!j.is_object()) throw ConfigError(f, "expected an object");
  Morphology m;
  if (!j.contains("root_height")) throw ConfigError(f + ".root_height", "missing");
  m.root_height = json_util::number(j.at("root_height"), f + ".root_height");
  const Json* limbs = member(j, "limbs");
  if (!limbs || !limbs->is_object()) throw ConfigError(f + ".limbs", "missing or not an object");
  for (auto it = limbs->begin(); it != limbs->end(); ++it)
    m.limbs[it.key()] = json_util::number(it.value(), f + ".limbs." + it.key());
  m.validate(f);
  return m;
}

inline std::string resolve(const std::filesystem::path& base, const std::string& rel) {
  const std::filesystem::path p(rel);
  return (p.is_absolute() ? p : base / p).lexically_normal().string();
}

inline bool pattern_matches(const std::string& pattern, const std::string& name) {
  if (pattern.size() > 1 && pattern.front() == '*') {
    const std::string suffix = pattern.substr(1);
    return name.size() >= suffix.size() &&
           name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  }
  if (pattern.size() > 1 && pattern.back() == '*') {
    const std::string prefix = pattern.substr(0, pattern.size() - 1);
    return name.compare(0, prefix.size(), prefix) == 0;
  }
  return pattern == name;
}

// Index of the best matching key in `entries`, or -1.
template <typename T>
int best_match(const std::vector<std::pair<std::string, T>>& entries,
               const std::string& name) {
  int best = -1;
  std::size_t best_len = 0;
  bool best_exact = false;
  for (int i = 0; i < static_cast<int>(entries.size()); ++i) {
    const std::string& key = entries[i].first;
    if (!pattern_matches(key, name)) continue;
    const bool exact = key == name;
    if (best < 0 || (exact && !best_exact) ||
        (exact == best_exact && key.size() > best_len)) {
      best = i;
      best_len = key.size();
      best_exact = exact;
    }
  }
  return best;
}

inline Scenario parse_scenario(const nlohmann::json& doc, const std::string& path) {
  using json_util::number;
  using json_util::number_or;
  using json_util::string;
  using json_util::vec3;
  if (!doc.is_object()) throw ConfigError("", "scenario must be a JSON object");
  const std::filesystem::path base =
      path.empty() ? std::filesystem::current_path()
                   : std::filesystem::path(path).parent_path();
  Scenario s;
  s.path = path;
  s.name = doc.contains("name") ? string(doc.at("name"), "name")
                                : std::filesystem::path(path).stem().string();

  if (!doc.contains("timestep")) throw ConfigError("timestep", "missing");
  s.timestep = number(doc.at("timestep"), "timestep");
  if (!(s.timestep > 0.0 && s.timestep <= 0.02))
    throw ConfigError("timestep", "must lie in (0, 0.02] s");
  if (!doc.contains("duration")) throw ConfigError("duration", "missing");
  s.duration = number(doc.at("duration"), "duration");
  if (!(s.duration > 0.0)) throw ConfigError("duration", "must be > 0");
  if (const Json* seed = member(doc, "seed")) {
    if (!seed->is_number_unsigned()) throw ConfigError("seed", "expected a non-negative integer");
    s.seed = seed->get<std::uint64_t>();
  }

  if (!doc.contains("avatar")) throw ConfigError("avatar", "missing");
  if (doc.at("avatar").is_string()) {
    s.avatar_path = resolve(base, doc.at("avatar").get<std::string>());
    try {
      s.avatar = load_avatar(s.avatar_path);
    } catch (const ConfigError& e) {
      throw ConfigError("avatar", e.what());
    }
  } else {
    s.avatar = avatar_from_json(doc.at("avatar"));
  }

  if (const Json* g = member(doc, "gravity")) s.step.gravity = vec3(*g, "gravity");

  if (const Json* env = member(doc, "environment")) {
    const Json* planes = member(*env, "planes");
    if (planes && !planes->is_array())
      throw ConfigError("environment.planes", "expected an array");
    if (planes) {
      for (std::size_t i = 0; i < planes->size(); ++i) {
        const Json& jp = (*planes)[i];
        const std::string f = "environment.planes[" + std::to_string(i) + "]";
        EnvironmentPlane p;
        p.name = string(jp.at("name"), f + ".name");
        if (s.plane_index(p.name) >= 0) throw ConfigError(f + ".name", "duplicate plane");
        if (const Json* v = member(jp, "point")) p.point = vec3(*v, f + ".point");
        if (const Json* v = member(jp, "normal")) p.normal = unit(*v, f + ".normal");
        if (const Json* v = member(jp, "extent")) {
          PlaneExtent ext;
          if (const Json* lo = member(*v, "min")) ext.min = vec3(*lo, f + ".extent.min");
          if (const Json* hi = member(*v, "max")) ext.max = vec3(*hi, f + ".extent.max");
          if ((ext.min.array() > ext.max.array()).any())
            throw ConfigError(f + ".extent", "min exceeds max");
          p.extent = ext;
        }
        p.thickness = positive(jp, "thickness", kInf, f);
        if (const Json* v = member(jp, "no_slip")) p.no_slip = boolean(*v, f + ".no_slip");
        s.planes.push_back(p);
      }
    }
  }

  if (const Json* init = member(doc, "initial")) {
    if (const Json* joints = member(*init, "joints")) {
      for (auto it = joints->begin(); it != joints->end(); ++it) {
        const auto j = s.avatar.find_joint(it.key());
        if (!j) throw ConfigError("initial.joints." + it.key(), "unknown joint");
        if (s.avatar.joint(*j).kind != JointKind::revolute)
          throw ConfigError("initial.joints." + it.key(), "not a revolute joint");
        s.initial.joints[it.key()] = number(it.value(), "initial.joints." + it.key());
      }
    }
    if (const Json* place = member(*init, "place_on")) {
      if (place->is_null()) s.initial.place_on.reset();
      else s.initial.place_on = string(*place, "initial.place_on");
    }
    if (const Json* xy = member(*init, "root_xy")) {
      if (!xy->is_array() || xy->size() != 2)
        throw ConfigError("initial.root_xy", "expected [x, y]");
      s.initial.root_xy = Vec2(number((*xy)[0], "initial.root_xy"),
                               number((*xy)[1], "initial.root_xy"));
    }
  }
  if (s.initial.place_on && s.plane_index(*s.initial.place_on) < 0)
    throw ConfigError("initial.place_on", "unknown plane '" + *s.initial.place_on + "'");

  if (const Json* b = member(doc, "balance")) {
    const std::string f = "balance";
    if (const Json* v = member(*b, "enabled")) s.balance.enabled = boolean(*v, f + ".enabled");
    if (const Json* v = member(*b, "mode")) {
      const std::string mode = string(*v, f + ".mode");
      if (mode == "explicit") s.balance.explicit_ellipse = true;
      else if (mode != "auto") throw ConfigError(f + ".mode", "expected \"auto\" or \"explicit\"");
    }
    s.balance.safety = positive(*b, "safety", s.balance.safety, f);
    if (s.balance.safety > 1.0) throw ConfigError(f + ".safety", "must lie in (0, 1]");
    s.balance.stabilization = nonnegative(*b, "stabilization", 0.0, f);
    if (s.balance.stabilization >= 1.0)
      throw ConfigError(f + ".stabilization", "must lie in [0, 1)");
    s.balance.recovery = positive(*b, "recovery", s.balance.recovery, f);
    if (s.balance.recovery > 1.0) throw ConfigError(f + ".recovery", "must lie in (0, 1]");
    s.balance.margin = nonnegative(*b, "margin", 0.0, f);
    if (s.balance.margin >= 1.0) throw ConfigError(f + ".margin", "must lie in [0, 1)");
    if (const Json* v = member(*b, "support_plane"))
      s.balance.support_plane = string(*v, f + ".support_plane");
    if (const Json* e = member(*b, "ellipse")) {
      s.balance.ellipse.center = vec3(e->at("center"), f + ".ellipse.center");
      const Json& axes = e->at("axes");
      if (!axes.is_array() || axes.size() != 2)
        throw ConfigError(f + ".ellipse.axes", "expected [a, b]");
      s.balance.ellipse.a = number(axes[0], f + ".ellipse.axes");
      s.balance.ellipse.b = number(axes[1], f + ".ellipse.axes");
      if (!(s.balance.ellipse.a > 0 && s.balance.ellipse.b > 0))
        throw ConfigError(f + ".ellipse.axes", "must be > 0");
      s.balance.ellipse.angle = number_or(*e, "angle", 0.0, f + ".ellipse");
    } else if (s.balance.explicit_ellipse) {
      throw ConfigError(f + ".ellipse", "required when mode is \"explicit\"");
    }
  }
  if (s.plane_index(s.balance.support_plane) < 0 &&
      !(s.balance.explicit_ellipse) && s.balance.enabled)
    throw ConfigError("balance.support_plane",
                      "unknown plane '" + s.balance.support_plane + "'");

  if (const Json* g = member(doc, "gains")) {
    if (const Json* t = member(*g, "task")) read_task_gains(*t, s.gains.task_defaults, "gains.task");
    if (const Json* p = member(*g, "posture")) {
      s.gains.posture.kp = nonnegative(*p, "kp", s.gains.posture.kp, "gains.posture");
      s.gains.posture.kd = nonnegative(*p, "kd", s.gains.posture.kd, "gains.posture");
      if (const Json* joints = member(*p, "joints")) {
        for (auto it = joints->begin(); it != joints->end(); ++it) {
          const std::string f = "gains.posture.joints." + it.key();
          JointGain jg = s.gains.posture;
          jg.kp = nonnegative(it.value(), "kp", jg.kp, f);
          jg.kd = nonnegative(it.value(), "kd", jg.kd, f);
          s.gains.posture_joints.emplace_back(it.key(), jg);
        }
      }
    }
    s.gains.damping = nonnegative(*g, "damping", s.gains.damping, "gains");
    if (const Json* v = member(*g, "implicit_damping")) {
      if (!v->is_boolean()) throw ConfigError("gains.implicit_damping", "expected a boolean");
      s.gains.implicit_damping = v->get<bool>();
    }
    if (const Json* joints = member(*g, "damping_joints")) {
      for (auto it = joints->begin(); it != joints->end(); ++it) {
        const double v = number(it.value(), "gains.damping_joints." + it.key());
        if (!(v >= 0.0)) throw ConfigError("gains.damping_joints." + it.key(), "must be >= 0");
        s.gains.damping_joints.emplace_back(it.key(), v);
      }
    }
  }

  if (const Json* targets = member(doc, "targets")) {
    if (!targets->is_array()) throw ConfigError("targets", "expected an array");
    for (std::size_t i = 0; i < targets->size(); ++i) {
      const Json& jt = (*targets)[i];
      const std::string f = "targets[" + std::to_string(i) + "]";
      TargetSpec spec;
      spec.target = s.gains.task_defaults;
      spec.target.task_frame = string(jt.at("task"), f + ".task");
      if (!s.avatar.find_task_frame(spec.target.task_frame))
        throw ConfigError(f + ".task", "unknown task frame '" + spec.target.task_frame + "'");
      if (const Json* v = member(jt, "pos")) {
        if (v->is_string() && v->get<std::string>() == "initial") {
          spec.anchor = TargetSpec::Anchor::initial;
        } else {
          spec.value = vec3(*v, f + ".pos");
        }
      } else if (const Json* o = member(jt, "offset")) {
        spec.anchor = TargetSpec::Anchor::offset;
        spec.value = vec3(*o, f + ".offset");
      } else {
        spec.anchor = TargetSpec::Anchor::initial;
      }
      if (const Json* q = member(jt, "quat")) {
        if (q->is_string() && q->get<std::string>() == "initial")
          spec.orientation_from_initial = true;
        else
          spec.target.desired_orientation = json_util::quat_wxyz(*q, f + ".quat");
      }
      read_task_gains(jt, spec.target, f);
      if (const Json* v = member(jt, "enabled")) spec.target.enabled = boolean(*v, f + ".enabled");
      s.targets.push_back(spec);
    }
  }

  if (const Json* guides = member(doc, "guides")) {
    if (!guides->is_array()) throw ConfigError("guides", "expected an array");
    for (std::size_t i = 0; i < guides->size(); ++i) {
      const Json& jg = (*guides)[i];
      const std::string f = "guides[" + std::to_string(i) + "]";
      GuideSpec spec;
      VirtualGuide& g = spec.guide;
      g.name = string(jg.at("name"), f + ".name");
      const std::string kind = string(jg.at("kind"), f + ".kind");
      if (kind == "axis") g.kind = GuideKind::axis;
      else if (kind == "plane") g.kind = GuideKind::plane;
      else if (kind == "point") g.kind = GuideKind::point;
      else throw ConfigError(f + ".kind", "expected axis, plane or point");
      g.task_frame = string(jg.at("task"), f + ".task");
      if (!s.avatar.find_task_frame(g.task_frame))
        throw ConfigError(f + ".task", "unknown task frame '" + g.task_frame + "'");
      if (const Json* p = member(jg, "point")) {
        if (p->is_string() && p->get<std::string>() == "initial") spec.point_from_initial = true;
        else g.point = vec3(*p, f + ".point");
      } else {
        spec.point_from_initial = true;
      }
      if (g.kind != GuideKind::point) {
        if (!jg.contains("direction")) throw ConfigError(f + ".direction", "missing");
        const Json& d = jg.at("direction");
        if (d.is_string() && d.get<std::string>() == "initial") spec.direction_from_initial = true;
        else g.direction = unit(d, f + ".direction");
      }
      if (const Json* o = member(jg, "orientation")) {
        if (o->is_string() && o->get<std::string>() == "initial")
          spec.orientation_from_initial = true;
        else
          g.orientation = json_util::quat_wxyz(*o, f + ".orientation");
      }
      g.stiffness = nonnegative(jg, "stiffness", 0.0, f);
      g.damping = nonnegative(jg, "damping", 0.0, f);
      g.angular_stiffness = nonnegative(jg, "angular_stiffness", 0.0, f);
      g.angular_damping = nonnegative(jg, "angular_damping", 0.0, f);
      if (const Json* v = member(jg, "enabled")) g.enabled = boolean(*v, f + ".enabled");
      for (const GuideSpec& other : s.guides)
        if (other.guide.name == g.name) throw ConfigError(f + ".name", "duplicate guide");
      s.guides.push_back(spec);
    }
  }

  if (const Json* r = member(doc, "retarget")) {
    RetargetConfig rc;
    if (!r->contains("actor_morphology"))
      throw ConfigError("retarget.actor_morphology", "missing");
    if (!r->contains("avatar_morphology"))
      throw ConfigError("retarget.avatar_morphology", "missing");
    rc.actor = read_morphology(r->at("actor_morphology"), "retarget.actor_morphology");
    rc.avatar = read_morphology(r->at("avatar_morphology"), "retarget.avatar_morphology");
    if (const Json* tl = member(*r, "task_limbs")) {
      for (auto it = tl->begin(); it != tl->end(); ++it) {
        const std::string limb = string(it.value(), "retarget.task_limbs." + it.key());
        if (!rc.actor.limbs.count(limb))
          throw ConfigError("retarget.actor_morphology.limbs." + limb, "missing limb entry");
        if (!rc.avatar.limbs.count(limb))
          throw ConfigError("retarget.avatar_morphology.limbs." + limb, "missing limb entry");
        rc.task_limbs[it.key()] = limb;
      }
    }
    s.retarget = rc;
  }

  if (const Json* ts = member(doc, "target_stream")) {
    s.stream_path = resolve(base, string(*ts, "target_stream"));
    try {
      s.stream = TargetStream::load(s.stream_path);
    } catch (const FormatError& e) {
      throw ConfigError("target_stream", std::string(e.what()) + " in " + s.stream_path);
    }
    s.stream->check_tasks(s.avatar);
    if (s.retarget)
      for (const std::string& task : s.stream->tasks())
        if (!s.retarget->task_limbs.count(task))
          throw ConfigError("retarget.task_limbs." + task, "task has no limb assignment");
  }

  if (const Json* solver = member(doc, "solver")) {
    const std::string f = "solver";
    s.step.baumgarte = nonnegative(*solver, "contact_stabilization", s.step.baumgarte, f);
    if (s.step.baumgarte > 1.0) throw ConfigError(f + ".contact_stabilization", "must be <= 1");
    s.step.contact_activation =
        positive(*solver, "contact_activation", s.step.contact_activation, f);
    s.step.limit_activation = positive(*solver, "limit_activation", s.step.limit_activation, f);
    s.step.velocity_cap = positive(*solver, "velocity_cap", s.step.velocity_cap, f);
    if (const Json* lcp = member(*solver, "lcp")) {
      s.step.lcp.max_iter = static_cast<int>(positive(*lcp, "max_iter", s.step.lcp.max_iter, f + ".lcp"));
      s.step.lcp.tol = positive(*lcp, "tol", s.step.lcp.tol, f + ".lcp");
      if (const Json* m = member(*lcp, "method")) {
        const std::string method = string(*m, f + ".lcp.method");
        if (method == "pgs") s.step.lcp.method = LcpMethod::pgs;
        else if (method == "lemke") s.step.lcp.method = LcpMethod::lemke;
        else if (method == "auto") s.step.lcp.method = LcpMethod::automatic;
        else throw ConfigError(f + ".lcp.method", "expected auto, pgs or lemke");
      }
    }
  }
  s.step.balance_stabilization = s.balance.stabilization;
  s.step.balance_recovery = s.balance.recovery;

  if (const Json* m = member(doc, "metrics")) {
    if (const Json* h = member(*m, "heights")) {
      for (auto it = h->begin(); it != h->end(); ++it) {
        const std::string task = string(it.value(), "metrics.heights." + it.key());
        if (!s.avatar.find_task_frame(task))
          throw ConfigError("metrics.heights." + it.key(), "unknown task frame '" + task + "'");
        s.metrics.heights.emplace_back(it.key(), task);
      }
    }
    if (const Json* p = member(*m, "reference_plane")) {
      const std::string plane = string(*p, "metrics.reference_plane");
      if (s.plane_index(plane) < 0)
        throw ConfigError("metrics.reference_plane", "unknown plane '" + plane + "'");
      s.metrics.reference_plane = plane;
    }
  }
  return s;
}

}  // namespace detail

// Builds a Scenario from parsed JSON. Relative file references resolve
// against the directory of `path`.
inline Scenario scenario_from_json(const nlohmann::json& doc, const std::string& path = {}) {
  try {
    return detail::parse_scenario(doc, path);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("", std::string("invalid scenario structure: ") + e.what());
  }
}

inline Scenario load_scenario(const std::string& path) {
  const std::string text = json_util::read_file(path);
  return scenario_from_json(json_util::parse(text), path);
}

}  // namespace balsim
