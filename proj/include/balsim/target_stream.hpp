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

// Recorded target streams.
//
// CSV with header `t,task,x,y,z` or `t,task,x,y,z,qw,qx,qy,qz`; lines starting
// with '#' are comments. Times must be non-decreasing. Positions are
// interpolated linearly between samples of the same task and orientations
// spherically; outside the recorded span the nearest sample holds.

#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "balsim/model.hpp"
#include "balsim/model_io.hpp"

namespace balsim {

struct StreamValue {
  Vec3 position = Vec3::Zero();
  std::optional<Quat> orientation;
};

class TargetStream {
 public:
  struct Sample {
    double t = 0.0;
    StreamValue value;
  };

  static TargetStream parse(const std::string& text) {
    TargetStream s;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    int columns = 0;
    double last_t = -kInf;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      const std::string trimmed = trim(line);
      if (trimmed.empty() || trimmed[0] == '#') continue;
      std::vector<std::string> f = split(trimmed);
      if (columns == 0) {
        if (f == std::vector<std::string>{"t", "task", "x", "y", "z"}) columns = 5;
        else if (f == std::vector<std::string>{"t", "task", "x", "y", "z", "qw", "qx",
                                                "qy", "qz"})
          columns = 9;
        else
          throw FormatError(lineno, "expected header t,task,x,y,z[,qw,qx,qy,qz]");
        continue;
      }
      if (static_cast<int>(f.size()) != columns && !(columns == 9 && f.size() == 5))
        throw FormatError(lineno, "expected " + std::to_string(columns) + " fields, got " +
                                      std::to_string(f.size()));
      Sample smp;
      smp.t = number(f[0], lineno);
      if (smp.t < last_t) throw FormatError(lineno, "time decreases");
      last_t = smp.t;
      if (f[1].empty()) throw FormatError(lineno, "empty task name");
      smp.value.position = Vec3(number(f[2], lineno), number(f[3], lineno),
                                number(f[4], lineno));
      if (f.size() == 9) {
        Quat q(number(f[5], lineno), number(f[6], lineno), number(f[7], lineno),
               number(f[8], lineno));
        if (std::abs(q.norm() - 1.0) > 1e-6)
          throw FormatError(lineno, "orientation must be a unit quaternion");
        smp.value.orientation = q.normalized();
      }
      s.tracks_[f[1]].push_back(smp);
    }
    if (columns == 0) throw FormatError(0, "target stream has no header");
    return s;
  }

  static TargetStream load(const std::string& path) {
    return parse(json_util::read_file(path));
  }

  std::vector<std::string> tasks() const {
    std::vector<std::string> out;
    for (const auto& [name, track] : tracks_) out.push_back(name);
    return out;
  }

  bool empty() const { return tracks_.empty(); }

  double end_time() const {
    double t = 0.0;
    for (const auto& [name, track] : tracks_) t = std::max(t, track.back().t);
    return t;
  }

  // Every task must name a task frame of `model`.
  void check_tasks(const AvatarModel& model) const {
    for (const auto& [name, track] : tracks_)
      if (!model.find_task_frame(name))
        throw ConfigError("target_stream", "unknown task '" + name + "'");
  }

  StreamValue sample(const std::string& task, double t) const {
    auto it = tracks_.find(task);
    if (it == tracks_.end())
      throw ConfigError("target_stream", "unknown task '" + task + "'");
    const std::vector<Sample>& tr = it->second;
    if (t <= tr.front().t) return tr.front().value;
    if (t >= tr.back().t) return tr.back().value;
    auto hi = std::upper_bound(tr.begin(), tr.end(), t,
                               [](double x, const Sample& s) { return x < s.t; });
    auto lo = hi - 1;
    const double span = hi->t - lo->t;
    const double a = span > 0.0 ? (t - lo->t) / span : 1.0;
    StreamValue v;
    v.position = (1.0 - a) * lo->value.position + a * hi->value.position;
    if (lo->value.orientation && hi->value.orientation)
      v.orientation = lo->value.orientation->slerp(a, *hi->value.orientation);
    else
      v.orientation = a < 1.0 ? lo->value.orientation : hi->value.orientation;
    return v;
  }

  std::map<std::string, StreamValue> sample_all(double t) const {
    std::map<std::string, StreamValue> out;
    for (const auto& [name, track] : tracks_) out[name] = sample(name, t);
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
  }
  static std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, ',')) out.push_back(trim(cur));
    if (!s.empty() && s.back() == ',') out.emplace_back();
    return out;
  }
  static double number(const std::string& s, int line) {
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      throw FormatError(line, "not a number: '" + s + "'");
    }
  }

  std::map<std::string, std::vector<Sample>> tracks_;
};

}  // namespace balsim
