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

// Avatar description files (JSON). See docs/avatar_format.md.

#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "balsim/model.hpp"

namespace balsim {

namespace json_util {

using Json = nlohmann::json;

inline int line_of_offset(const std::string& text, std::size_t byte) {
  int line = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i)
    if (text[i] == '\n') ++line;
  return line;
}

inline Json parse(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw FormatError(line_of_offset(text, e.byte == 0 ? 0 : e.byte - 1),
                      std::string("JSON parse error: ") + e.what());
  }
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path, "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline double number(const Json& j, const std::string& field) {
  if (!j.is_number()) throw ConfigError(field, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ConfigError(field, "must be finite");
  return v;
}

inline double number_or(const Json& obj, const char* key, double fallback,
                        const std::string& field) {
  if (!obj.contains(key)) return fallback;
  return number(obj.at(key), field + "." + key);
}

inline Vec3 vec3(const Json& j, const std::string& field) {
  if (!j.is_array() || j.size() != 3)
    throw ConfigError(field, "expected an array of 3 numbers");
  return Vec3(number(j[0], field), number(j[1], field), number(j[2], field));
}

inline Quat quat_wxyz(const Json& j, const std::string& field) {
  if (!j.is_array() || j.size() != 4)
    throw ConfigError(field, "expected [w, x, y, z]");
  Quat q(number(j[0], field), number(j[1], field), number(j[2], field),
         number(j[3], field));
  if (std::abs(q.norm() - 1.0) > 1e-6)
    throw ConfigError(field, "quaternion must have unit norm");
  return q.normalized();
}

// {"xyz": [...], "rpy": [...]} with fixed-axis roll, pitch, yaw.
inline Transform transform(const Json& j, const std::string& field) {
  Transform t = Transform::Identity();
  if (j.is_null()) return t;
  if (!j.is_object()) throw ConfigError(field, "expected {xyz, rpy}");
  if (j.contains("xyz")) t.translation() = vec3(j.at("xyz"), field + ".xyz");
  if (j.contains("rpy")) {
    const Vec3 rpy = vec3(j.at("rpy"), field + ".rpy");
    t.linear() = (Eigen::AngleAxisd(rpy.z(), Vec3::UnitZ()) *
                  Eigen::AngleAxisd(rpy.y(), Vec3::UnitY()) *
                  Eigen::AngleAxisd(rpy.x(), Vec3::UnitX()))
                     .toRotationMatrix();
  }
  return t;
}

inline std::string string(const Json& j, const std::string& field) {
  if (!j.is_string()) throw ConfigError(field, "expected a string");
  return j.get<std::string>();
}

}  // namespace json_util

namespace detail {

inline AvatarModel parse_avatar(const nlohmann::json& doc) {
  using namespace json_util;
  if (!doc.is_object()) throw ConfigError("", "avatar must be a JSON object");
  if (!doc.contains("segments") || !doc.at("segments").is_array())
    throw ConfigError("segments", "missing or not an array");
  if (!doc.contains("joints") || !doc.at("joints").is_array())
    throw ConfigError("joints", "missing or not an array");
  const Json& segs = doc.at("segments");
  const Json& joints = doc.at("joints");
  if (segs.size() != joints.size())
    throw ConfigError("joints", "must be index-aligned with segments");

  AvatarModel model;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    const std::string f = "segments[" + std::to_string(i) + "]";
    const std::string fj = "joints[" + std::to_string(i) + "]";
    const Json& js = segs[i];
    const Json& jj = joints[i];
    Segment s;
    s.name = string(js.at("name"), f + ".name");
    if (js.contains("parent") && !js.at("parent").is_null()) {
      const Json& p = js.at("parent");
      if (p.is_string()) {
        auto idx = model.find_segment(p.get<std::string>());
        if (!idx) throw ConfigError(f + ".parent", "unknown segment '" + p.get<std::string>() + "'");
        s.parent = *idx;
      } else {
        s.parent = static_cast<int>(number(p, f + ".parent"));
      }
    }
    s.mass = number_or(js, "mass", 0.0, f);
    if (js.contains("com")) s.local_com = vec3(js.at("com"), f + ".com");
    if (js.contains("inertia")) {
      const Json& in = js.at("inertia");
      if (in.is_array() && in.size() == 3 && in[0].is_number()) {
        s.inertia = vec3(in, f + ".inertia").asDiagonal();
      } else if (in.is_array() && in.size() == 3) {
        for (int r = 0; r < 3; ++r)
          s.inertia.row(r) = vec3(in[r], f + ".inertia").transpose();
      } else {
        throw ConfigError(f + ".inertia", "expected 3 diagonal entries or a 3x3 matrix");
      }
    }
    if (js.contains("origin")) s.joint_origin = transform(js.at("origin"), f + ".origin");
    if (js.contains("collision_points")) {
      for (const Json& p : js.at("collision_points"))
        s.collision_points.push_back(vec3(p, f + ".collision_points"));
    }

    Joint j;
    j.name = jj.contains("name") ? string(jj.at("name"), fj + ".name") : s.name;
    const std::string kind = string(jj.at("kind"), fj + ".kind");
    if (kind == "revolute") j.kind = JointKind::revolute;
    else if (kind == "spherical") j.kind = JointKind::spherical;
    else if (kind == "free6") j.kind = JointKind::free6;
    else if (kind == "fixed") j.kind = JointKind::fixed;
    else throw ConfigError(fj + ".kind", "unknown joint kind '" + kind + "'");
    if (jj.contains("axis")) j.axis = vec3(jj.at("axis"), fj + ".axis");
    if (jj.contains("limits")) {
      const Json& lim = jj.at("limits");
      if (!lim.is_array() || lim.size() != 2)
        throw ConfigError(fj + ".limits", "expected [lower, upper]");
      j.lower = number(lim[0], fj + ".limits");
      j.upper = number(lim[1], fj + ".limits");
    }
    try {
      model.add_segment(std::move(s), std::move(j));
    } catch (const ArgumentError& e) {
      throw ConfigError(f, e.what());
    }
  }
  if (model.num_segments() == 0) throw ConfigError("segments", "empty");

  if (doc.contains("task_frames")) {
    const Json& tf = doc.at("task_frames");
    if (!tf.is_object()) throw ConfigError("task_frames", "expected an object");
    for (auto it = tf.begin(); it != tf.end(); ++it) {
      const std::string f = "task_frames." + it.key();
      TaskFrame frame;
      frame.name = it.key();
      const std::string seg = string(it.value().at("segment"), f + ".segment");
      auto idx = model.find_segment(seg);
      if (!idx) throw ConfigError(f + ".segment", "unknown segment '" + seg + "'");
      frame.segment = *idx;
      frame.local = transform(it.value(), f);
      model.add_task_frame(std::move(frame));
    }
  }
  return model;
}

}  // namespace detail

inline AvatarModel avatar_from_json(const nlohmann::json& doc) {
  try {
    return detail::parse_avatar(doc);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("", std::string("invalid avatar structure: ") + e.what());
  }
}

inline AvatarModel load_avatar(const std::string& path) {
  return avatar_from_json(json_util::parse(json_util::read_file(path)));
}

}  // namespace balsim
