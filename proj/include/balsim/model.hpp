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

// Kinematic tree, forward kinematics and world-frame Jacobians.
//
// Coordinates. Each joint owns nq() configuration numbers and nv() velocity
// numbers:
//   fixed      0 / 0
//   revolute   1 / 1   angle about `axis` (child frame)
//   spherical  4 / 3   unit quaternion (w,x,y,z); body angular velocity
//   free6      7 / 6   position, unit quaternion (w,x,y,z); velocity is
//                      (world linear velocity of the frame origin,
//                       body angular velocity)
// `n_dof()` counts velocity numbers; `n_q()` counts configuration numbers.
//
// Jacobians are 6 x n_dof with rows ordered (angular; linear), all expressed
// in the world frame.

#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "balsim/common.hpp"

namespace balsim {

enum class JointKind { fixed, revolute, spherical, free6 };

inline const char* to_string(JointKind k) {
  switch (k) {
    case JointKind::fixed: return "fixed";
    case JointKind::revolute: return "revolute";
    case JointKind::spherical: return "spherical";
    case JointKind::free6: return "free6";
  }
  return "?";
}

struct Joint {
  std::string name;
  JointKind kind = JointKind::fixed;
  Vec3 axis = Vec3::UnitZ();
  // Revolute only; infinite bounds mean unlimited.
  double lower = -kInf;
  double upper = kInf;
  int q_offset = 0;
  int dof_offset = 0;

  int nq() const {
    switch (kind) {
      case JointKind::fixed: return 0;
      case JointKind::revolute: return 1;
      case JointKind::spherical: return 4;
      case JointKind::free6: return 7;
    }
    return 0;
  }
  int nv() const {
    switch (kind) {
      case JointKind::fixed: return 0;
      case JointKind::revolute: return 1;
      case JointKind::spherical: return 3;
      case JointKind::free6: return 6;
    }
    return 0;
  }
  bool limited() const {
    return kind == JointKind::revolute &&
           (std::isfinite(lower) || std::isfinite(upper));
  }
};

struct Segment {
  std::string name;
  int id = 0;
  std::optional<int> parent;
  double mass = 0.0;
  Vec3 local_com = Vec3::Zero();
  Mat3 inertia = Mat3::Zero();  // about local CoM, segment axes
  Transform joint_origin = Transform::Identity();
  std::vector<Vec3> collision_points;
};

struct TaskFrame {
  std::string name;
  int segment = 0;
  Transform local = Transform::Identity();
};

class AvatarModel {
 public:
  // Appends a segment with its joint. Segment ids are assigned in insertion
  // order, so parents must be added first.
  int add_segment(Segment seg, Joint joint) {
    const int id = static_cast<int>(segments_.size());
    seg.id = id;
    if (seg.parent && (*seg.parent < 0 || *seg.parent >= id))
      throw ArgumentError("segment '" + seg.name +
                          "': parent index must precede the segment");
    if (!seg.parent && id != 0)
      throw ArgumentError("segment '" + seg.name +
                          "': only the first segment may be a root");
    if (!(seg.mass >= 0.0) || !std::isfinite(seg.mass))
      throw ArgumentError("segment '" + seg.name + "': mass must be >= 0");
    if ((seg.inertia - seg.inertia.transpose()).cwiseAbs().maxCoeff() >
        1e-9 * (1.0 + seg.inertia.cwiseAbs().maxCoeff()))
      throw ArgumentError("segment '" + seg.name +
                          "': inertia must be symmetric");
    Eigen::SelfAdjointEigenSolver<Mat3> eig(seg.inertia);
    if (eig.eigenvalues().minCoeff() < -1e-12)
      throw ArgumentError("segment '" + seg.name +
                          "': inertia must be positive semidefinite");
    if (joint.kind == JointKind::free6 && id != 0)
      throw ArgumentError("joint '" + joint.name +
                          "': free6 is only allowed at the root");
    if (joint.kind == JointKind::free6 &&
        !seg.joint_origin.matrix().isIdentity(0.0))
      throw ArgumentError("joint '" + joint.name +
                          "': free6 root must have an identity origin");
    if (joint.kind == JointKind::revolute) {
      if (std::abs(joint.axis.norm() - 1.0) > 1e-9)
        throw ArgumentError("joint '" + joint.name +
                            "': revolute axis must have unit norm");
      if (!(joint.lower <= joint.upper))
        throw ArgumentError("joint '" + joint.name + "': lower > upper");
    }
    if (index_.count(seg.name))
      throw ArgumentError("duplicate segment name '" + seg.name + "'");
    if (joint.name.empty()) joint.name = seg.name;
    if (joint_index_.count(joint.name))
      throw ArgumentError("duplicate joint name '" + joint.name + "'");
    joint.q_offset = n_q_;
    joint.dof_offset = n_dof_;
    n_q_ += joint.nq();
    n_dof_ += joint.nv();
    index_[seg.name] = id;
    joint_index_[joint.name] = id;
    segments_.push_back(std::move(seg));
    joints_.push_back(std::move(joint));
    return id;
  }

  void add_task_frame(TaskFrame frame) {
    if (frame.segment < 0 || frame.segment >= num_segments())
      throw ArgumentError("task frame '" + frame.name +
                          "': invalid segment index");
    for (const auto& f : task_frames_)
      if (f.name == frame.name)
        throw ArgumentError("duplicate task frame '" + frame.name + "'");
    task_frames_.push_back(std::move(frame));
  }

  const std::vector<Segment>& segments() const { return segments_; }
  const std::vector<Joint>& joints() const { return joints_; }
  const std::vector<TaskFrame>& task_frames() const { return task_frames_; }
  const Segment& segment(int i) const { return segments_.at(i); }
  const Joint& joint(int i) const { return joints_.at(i); }
  int num_segments() const { return static_cast<int>(segments_.size()); }
  int n_dof() const { return n_dof_; }
  int n_q() const { return n_q_; }

  bool floating_base() const {
    return !joints_.empty() && joints_[0].kind == JointKind::free6;
  }
  // Velocity indices driven by the root free6 joint (empty if fixed base).
  int n_root_dof() const { return floating_base() ? 6 : 0; }

  std::optional<int> find_segment(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }
  std::optional<int> find_joint(const std::string& name) const {
    auto it = joint_index_.find(name);
    if (it == joint_index_.end()) return std::nullopt;
    return it->second;
  }
  const TaskFrame* find_task_frame(const std::string& name) const {
    for (const auto& f : task_frames_)
      if (f.name == name) return &f;
    return nullptr;
  }

  double total_mass() const {
    double m = 0.0;
    for (const auto& s : segments_) m += s.mass;
    return m;
  }

  // Zero joint angles, identity quaternions, root at the origin.
  VecX neutral_configuration() const {
    VecX q = VecX::Zero(n_q_);
    for (const auto& j : joints_) {
      if (j.kind == JointKind::spherical) q[j.q_offset] = 1.0;
      if (j.kind == JointKind::free6) q[j.q_offset + 3] = 1.0;
    }
    return q;
  }

  // True when segment `ancestor` lies on the root path of `seg` (inclusive).
  bool is_ancestor(int ancestor, int seg) const {
    for (std::optional<int> s = seg; s; s = segments_[*s].parent)
      if (*s == ancestor) return true;
    return false;
  }

 private:
  std::vector<Segment> segments_;
  std::vector<Joint> joints_;
  std::vector<TaskFrame> task_frames_;
  std::map<std::string, int> index_;
  std::map<std::string, int> joint_index_;
  int n_q_ = 0;
  int n_dof_ = 0;
};

struct SimState {
  VecX q;
  VecX qdot;
  double t = 0.0;
};

namespace detail {

inline Quat read_quat(const VecX& q, int at) {
  return Quat(q[at], q[at + 1], q[at + 2], q[at + 3]);
}

inline void write_quat(VecX& q, int at, const Quat& r) {
  q[at] = r.w();
  q[at + 1] = r.x();
  q[at + 2] = r.y();
  q[at + 3] = r.z();
}

inline void check_q(const AvatarModel& model, const VecX& q) {
  if (q.size() != model.n_q())
    throw ArgumentError("configuration has " + std::to_string(q.size()) +
                        " entries, model expects " +
                        std::to_string(model.n_q()));
  if (!q.allFinite()) throw ArgumentError("configuration is not finite");
}

inline Transform joint_motion(const Joint& j, const VecX& q) {
  Transform m = Transform::Identity();
  switch (j.kind) {
    case JointKind::fixed: break;
    case JointKind::revolute:
      m.linear() = Eigen::AngleAxisd(q[j.q_offset], j.axis).toRotationMatrix();
      break;
    case JointKind::spherical:
      m.linear() = read_quat(q, j.q_offset).normalized().toRotationMatrix();
      break;
    case JointKind::free6:
      m.translation() = q.segment<3>(j.q_offset);
      m.linear() = read_quat(q, j.q_offset + 3).normalized().toRotationMatrix();
      break;
  }
  return m;
}

}  // namespace detail

using Poses = std::vector<Transform>;

inline Poses forward_kinematics(const AvatarModel& model, const VecX& q) {
  detail::check_q(model, q);
  Poses out(model.num_segments());
  for (int i = 0; i < model.num_segments(); ++i) {
    const Segment& s = model.segment(i);
    const Transform local =
        s.joint_origin * detail::joint_motion(model.joint(i), q);
    out[i] = s.parent ? out[*s.parent] * local : local;
  }
  return out;
}

// World-frame motion columns of joint `i` (rows angular; linear), evaluated
// for a point at world position `p`: each column is (w, w x (p - o)) with o
// the joint frame origin, or (0, e_k) for the free6 translation part.
inline Mat6X joint_columns(const AvatarModel& model, const Poses& poses, int i,
                           const Vec3& p) {
  const Joint& j = model.joint(i);
  Mat6X cols = Mat6X::Zero(6, j.nv());
  const Vec3 o = poses[i].translation();
  const Mat3 r = poses[i].linear();
  auto angular = [&](int c, const Vec3& w) {
    cols.block<3, 1>(0, c) = w;
    cols.block<3, 1>(3, c) = w.cross(p - o);
  };
  switch (j.kind) {
    case JointKind::fixed: break;
    case JointKind::revolute: angular(0, r * j.axis); break;
    case JointKind::spherical:
      for (int k = 0; k < 3; ++k) angular(k, r.col(k));
      break;
    case JointKind::free6:
      for (int k = 0; k < 3; ++k) cols(3 + k, k) = 1.0;
      for (int k = 0; k < 3; ++k) angular(3 + k, r.col(k));
      break;
  }
  return cols;
}

// Jacobian of the world point rigidly attached to `segment` that currently
// sits at world position `p`. Uses precomputed poses.
inline Mat6X point_jacobian(const AvatarModel& model, const Poses& poses,
                            int segment, const Vec3& p) {
  Mat6X jac = Mat6X::Zero(6, model.n_dof());
  for (std::optional<int> s = segment; s; s = model.segment(*s).parent) {
    const Joint& j = model.joint(*s);
    if (j.nv() == 0) continue;
    jac.middleCols(j.dof_offset, j.nv()) = joint_columns(model, poses, *s, p);
  }
  return jac;
}

inline Mat6X body_jacobian(const AvatarModel& model, const VecX& q,
                           int segment, const Vec3& local_point) {
  if (segment < 0 || segment >= model.num_segments())
    throw ArgumentError("segment index " + std::to_string(segment) +
                        " out of range");
  const Poses poses = forward_kinematics(model, q);
  return point_jacobian(model, poses, segment, poses[segment] * local_point);
}

// Linear (translational) rows of a 6-row Jacobian: S * J with S = (0 | I3).
template <typename Derived>
Mat3X reduce_jacobian(const Eigen::MatrixBase<Derived>& j6) {
  if (j6.rows() != 6)
    throw ArgumentError("reduce_jacobian expects 6 rows, got " +
                        std::to_string(j6.rows()));
  return j6.bottomRows(3);
}

// q (+) dt * v under the velocity parameterization described at the top of
// this file.
inline VecX integrate(const AvatarModel& model, const VecX& q, const VecX& v,
                      double dt) {
  detail::check_q(model, q);
  if (v.size() != model.n_dof())
    throw ArgumentError("velocity has wrong dimension");
  VecX out = q;
  for (const Joint& j : model.joints()) {
    const int qo = j.q_offset;
    const int vo = j.dof_offset;
    switch (j.kind) {
      case JointKind::fixed: break;
      case JointKind::revolute: out[qo] += dt * v[vo]; break;
      case JointKind::spherical: {
        Quat r = detail::read_quat(q, qo) * quat_exp(dt * v.segment<3>(vo));
        detail::write_quat(out, qo, r.normalized());
        break;
      }
      case JointKind::free6: {
        out.segment<3>(qo) += dt * v.segment<3>(vo);
        Quat r =
            detail::read_quat(q, qo + 3) * quat_exp(dt * v.segment<3>(vo + 3));
        detail::write_quat(out, qo + 3, r.normalized());
        break;
      }
    }
  }
  return out;
}

// Velocity-space difference: the v with integrate(q0, v, 1) == q1 (per joint).
inline VecX difference(const AvatarModel& model, const VecX& q0,
                       const VecX& q1) {
  detail::check_q(model, q0);
  detail::check_q(model, q1);
  VecX v = VecX::Zero(model.n_dof());
  for (const Joint& j : model.joints()) {
    const int qo = j.q_offset;
    const int vo = j.dof_offset;
    switch (j.kind) {
      case JointKind::fixed: break;
      case JointKind::revolute: v[vo] = q1[qo] - q0[qo]; break;
      case JointKind::spherical:
        v.segment<3>(vo) = quat_log(detail::read_quat(q0, qo).conjugate() *
                                    detail::read_quat(q1, qo));
        break;
      case JointKind::free6:
        v.segment<3>(vo) = q1.segment<3>(qo) - q0.segment<3>(qo);
        v.segment<3>(vo + 3) =
            quat_log(detail::read_quat(q0, qo + 3).conjugate() *
                     detail::read_quat(q1, qo + 3));
        break;
    }
  }
  return v;
}

inline void normalize_configuration(const AvatarModel& model, VecX& q) {
  for (const Joint& j : model.joints()) {
    int at = -1;
    if (j.kind == JointKind::spherical) at = j.q_offset;
    if (j.kind == JointKind::free6) at = j.q_offset + 3;
    if (at >= 0) detail::write_quat(q, at, detail::read_quat(q, at).normalized());
  }
}

// World pose of a named task frame.
inline Transform task_frame_pose(const AvatarModel& model, const Poses& poses,
                                 const TaskFrame& f) {
  return poses[f.segment] * f.local;
}

}  // namespace balsim
