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

// Task-space control with virtual guides and null-space posture control.
//
// Every enabled task target pulls its frame toward a desired pose with a
// saturated PD wrench. A virtual guide attached to the same frame takes over
// the directions it constrains with its own spring-damper toward the guide
// manifold. Posture torques act only in the part of joint space that does
// not accelerate any task frame. The root of a floating base is never
// actuated.

#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include "balsim/balance.hpp"
#include "balsim/dynamics.hpp"

namespace balsim {

struct TaskTarget {
  std::string task_frame;
  Vec3 desired_position = Vec3::Zero();
  std::optional<Quat> desired_orientation;
  double kp = 500.0;      // N/m
  double kd = 50.0;       // N s/m
  double kp_rot = 50.0;   // N m/rad
  double kd_rot = 5.0;    // N m s/rad
  double max_force = kInf;
  double max_torque = kInf;
  bool enabled = true;

  void validate() const {
    if (!(kp >= 0.0 && kd >= 0.0 && kp_rot >= 0.0 && kd_rot >= 0.0))
      throw ArgumentError("task '" + task_frame + "': gains must be >= 0");
    if (!(max_force > 0.0 && max_torque > 0.0))
      throw ArgumentError("task '" + task_frame + "': caps must be > 0");
    if (!desired_position.allFinite())
      throw ArgumentError("task '" + task_frame + "': position not finite");
    if (desired_orientation &&
        std::abs(desired_orientation->norm() - 1.0) > 1e-6)
      throw ArgumentError("task '" + task_frame +
                          "': orientation must be a unit quaternion");
  }
};

enum class GuideKind { axis, plane, point };

inline const char* to_string(GuideKind k) {
  switch (k) {
    case GuideKind::axis: return "axis";
    case GuideKind::plane: return "plane";
    case GuideKind::point: return "point";
  }
  return "?";
}

struct VirtualGuide {
  std::string name;
  GuideKind kind = GuideKind::axis;
  std::string task_frame;
  Vec3 point = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();  // axis direction or plane normal
  // When set, the frame orientation is held as well.
  std::optional<Quat> orientation;
  double stiffness = 0.0;
  double damping = 0.0;
  double angular_stiffness = 0.0;
  double angular_damping = 0.0;
  bool enabled = true;

  void validate() const {
    if (kind != GuideKind::point && std::abs(direction.norm() - 1.0) > 1e-9)
      throw ArgumentError("guide '" + name + "': direction must have unit norm");
    if (!(stiffness >= 0.0 && damping >= 0.0 && angular_stiffness >= 0.0 &&
          angular_damping >= 0.0))
      throw ArgumentError("guide '" + name + "': gains must be >= 0");
    if (orientation && std::abs(orientation->norm() - 1.0) > 1e-6)
      throw ArgumentError("guide '" + name +
                          "': orientation must be a unit quaternion");
  }

  // Projector onto the translational directions the guide removes.
  Mat3 constrained() const {
    switch (kind) {
      case GuideKind::axis:
        return Mat3::Identity() - direction * direction.transpose();
      case GuideKind::plane: return direction * direction.transpose();
      case GuideKind::point: return Mat3::Identity();
    }
    return Mat3::Identity();
  }
};

// Pose error (angular; linear) from a frame pose to the guide manifold.
inline Vec6 guide_pose_error(const VirtualGuide& g, const Transform& pose) {
  Vec6 e = Vec6::Zero();
  e.tail<3>() = g.constrained() * (g.point - pose.translation());
  if (g.orientation)
    e.head<3>() = quat_log(*g.orientation * Quat(pose.linear()).conjugate());
  return e;
}

// Spring-damper wrench (torque; force) of a guide. `pose_error` points from
// the frame toward the guide and `frame_velocity` is the frame twist
// (angular; linear); only the constrained components contribute.
inline Vec6 apply_guide(const VirtualGuide& g, const Vec6& pose_error,
                        const Vec6& frame_velocity) {
  const Mat3 pc = g.constrained();
  Vec6 w = Vec6::Zero();
  w.tail<3>() = g.stiffness * (pc * pose_error.tail<3>()) -
                g.damping * (pc * frame_velocity.tail<3>());
  if (g.orientation)
    w.head<3>() = g.angular_stiffness * pose_error.head<3>() -
                  g.angular_damping * frame_velocity.head<3>();
  return w;
}

// Storage function of a guide spring; the guide is passive with respect to
// it: w . v + d/dt energy = -damping terms <= 0.
inline double guide_energy(const VirtualGuide& g, const Transform& pose) {
  const Vec6 e = guide_pose_error(g, pose);
  return 0.5 * g.stiffness * e.tail<3>().squaredNorm() +
         (g.orientation ? 0.5 * g.angular_stiffness * e.head<3>().squaredNorm()
                        : 0.0);
}

// Angle between a guide axis and the frame's x axis.
inline double guide_axis_angle(const VirtualGuide& g, const Transform& pose) {
  const Vec3 x = pose.linear().col(0);
  return std::atan2(x.cross(g.direction).norm(), x.dot(g.direction));
}

// Distance from the frame origin to the guide manifold.
inline double guide_lateral_error(const VirtualGuide& g, const Transform& pose) {
  return (g.constrained() * (pose.translation() - g.point)).norm();
}

// Per-limb segment lengths and root height of a body.
struct Morphology {
  double root_height = 1.0;
  std::map<std::string, double> limbs;

  void validate(const std::string& who) const {
    if (!(root_height > 0.0))
      throw ConfigError(who + ".root_height", "must be > 0");
    for (const auto& [limb, len] : limbs)
      if (!(len > 0.0)) throw ConfigError(who + ".limbs." + limb, "must be > 0");
  }
};

// Maps actor targets onto the avatar: each position is taken relative to the
// actor root (0, 0, root_height), scaled by the avatar/actor ratio of the
// limb its task belongs to, and re-anchored at the avatar root. Orientations
// pass through.
inline std::vector<TaskTarget> retarget_targets(
    const std::vector<TaskTarget>& actor_targets, const Morphology& actor,
    const Morphology& avatar,
    const std::map<std::string, std::string>& task_limbs) {
  const Vec3 actor_root(0, 0, actor.root_height);
  const Vec3 avatar_root(0, 0, avatar.root_height);
  std::vector<TaskTarget> out = actor_targets;
  for (TaskTarget& t : out) {
    auto limb = task_limbs.find(t.task_frame);
    if (limb == task_limbs.end())
      throw ConfigError("retarget.task_limbs." + t.task_frame,
                        "task has no limb assignment");
    auto a = actor.limbs.find(limb->second);
    if (a == actor.limbs.end())
      throw ConfigError("retarget.actor_morphology.limbs." + limb->second,
                        "missing limb entry");
    auto b = avatar.limbs.find(limb->second);
    if (b == avatar.limbs.end())
      throw ConfigError("retarget.avatar_morphology.limbs." + limb->second,
                        "missing limb entry");
    if (a->second == b->second && actor.root_height == avatar.root_height)
      continue;
    t.desired_position =
        avatar_root + (b->second / a->second) * (t.desired_position - actor_root);
  }
  return out;
}

namespace detail {

inline Vec3 clamp_norm(const Vec3& v, double cap) {
  const double n = v.norm();
  return n > cap ? Vec3(v * (cap / n)) : v;
}

// Regularized pseudoinverse of a symmetric positive semidefinite matrix.
inline MatX damped_pinv(const MatX& a, double lambda) {
  Eigen::SelfAdjointEigenSolver<MatX> eig(a);
  VecX inv = eig.eigenvalues();
  for (int i = 0; i < inv.size(); ++i) {
    const double s = std::max(inv[i], 0.0);
    inv[i] = s / (s * s + lambda * lambda);
  }
  return eig.eigenvectors() * inv.asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace detail

// Saturated PD wrench (torque; force) pulling a frame toward its target.
inline Vec6 target_wrench(const TaskTarget& t, const Transform& pose,
                          const Vec6& twist) {
  Vec6 w = Vec6::Zero();
  w.tail<3>() = detail::clamp_norm(
      t.kp * (t.desired_position - pose.translation()) - t.kd * twist.tail<3>(),
      t.max_force);
  if (t.desired_orientation) {
    const Vec3 e = quat_log(*t.desired_orientation * Quat(pose.linear()).conjugate());
    w.head<3>() = detail::clamp_norm(t.kp_rot * e - t.kd_rot * twist.head<3>(),
                                     t.max_torque);
  }
  return w;
}

struct TaskTorques {
  VecX torques;
  MatX jacobian;  // stacked 6-row Jacobians of the frames that were driven
  std::vector<std::string> frames;
  // With implicit damping: D such that the velocity-dependent part of the
  // torques is -D qdot, left to the integrator. Symmetric PSD, zero on the
  // root rows and columns. Empty otherwise.
  MatX damping;
};

namespace detail {

// Spring and damper parts of one frame's wrench, (angular; linear).
struct FrameDrive {
  Vec6 spring = Vec6::Zero();
  Mat6 damper = Mat6::Zero();
};

}  // namespace detail

// Sum of J^T w over enabled targets and guides. With `implicit_damping`,
// damping terms are returned as a matrix acting on the joint velocities
// (the root's own motion is not damped) instead of being evaluated at
// `qdot`; a saturated target part stays explicit and clamped.
inline TaskTorques task_torques(const AvatarModel& model, const Poses& poses,
                                const VecX& qdot,
                                const std::vector<TaskTarget>& targets,
                                const std::vector<VirtualGuide>& guides,
                                bool implicit_damping = false) {
  const int n = model.n_dof();
  const int r = model.n_root_dof();
  TaskTorques out;
  out.torques = VecX::Zero(n);
  out.jacobian = MatX(0, n);
  if (implicit_damping) out.damping = MatX::Zero(n, n);
  auto frame_of = [&](const std::string& name) -> const TaskFrame& {
    const TaskFrame* f = model.find_task_frame(name);
    if (!f) throw ConfigError("task_frame", "unknown task frame '" + name + "'");
    return *f;
  };
  std::map<std::string, detail::FrameDrive> drives;
  std::map<std::string, Mat6X> jacs;
  std::map<std::string, Transform> frame_poses;
  auto prepare = [&](const std::string& name) {
    const TaskFrame& f = frame_of(name);
    if (!jacs.count(f.name)) {
      const Transform pose = task_frame_pose(model, poses, f);
      frame_poses[f.name] = pose;
      jacs[f.name] = point_jacobian(model, poses, f.segment, pose.translation());
    }
    return f.name;
  };

  for (const VirtualGuide& g : guides) {
    if (!g.enabled) continue;
    const std::string name = prepare(g.task_frame);
    const Transform& pose = frame_poses.at(name);
    const Vec6 twist = jacs.at(name) * qdot;
    detail::FrameDrive& d = drives[name];
    if (!implicit_damping) {
      d.spring += apply_guide(g, guide_pose_error(g, pose), twist);
      continue;
    }
    d.spring += apply_guide(g, guide_pose_error(g, pose), Vec6::Zero());
    d.damper.bottomRightCorner<3, 3>() += g.damping * g.constrained();
    if (g.orientation)
      d.damper.topLeftCorner<3, 3>() += g.angular_damping * Mat3::Identity();
  }
  for (const TaskTarget& t : targets) {
    if (!t.enabled) continue;
    const std::string name = prepare(t.task_frame);
    const Transform& pose = frame_poses.at(name);
    const Vec6 twist = jacs.at(name) * qdot;
    Mat3 free_lin = Mat3::Identity();
    bool free_ang = true;
    for (const VirtualGuide& g : guides) {
      if (!g.enabled || g.task_frame != t.task_frame) continue;
      free_lin = (Mat3::Identity() - g.constrained()) * free_lin;
      if (g.orientation) free_ang = false;
    }
    detail::FrameDrive& d = drives[name];
    const Vec6 w = target_wrench(t, pose, twist);
    Vec6 w_spring = w;
    Mat6 c = Mat6::Zero();
    if (implicit_damping) {
      const Vec3 f_spring = t.kp * (t.desired_position - pose.translation());
      if ((f_spring - t.kd * twist.tail<3>()).norm() <= t.max_force) {
        w_spring.tail<3>() = f_spring;
        c.bottomRightCorner<3, 3>() = t.kd * Mat3::Identity();
      }
      if (t.desired_orientation) {
        const Vec3 e = quat_log(*t.desired_orientation *
                                Quat(pose.linear()).conjugate());
        if ((t.kp_rot * e - t.kd_rot * twist.head<3>()).norm() <= t.max_torque) {
          w_spring.head<3>() = t.kp_rot * e;
          c.topLeftCorner<3, 3>() = t.kd_rot * Mat3::Identity();
        }
      }
    }
    w_spring.tail<3>() = free_lin * w_spring.tail<3>();
    c.bottomRightCorner<3, 3>() =
        free_lin * c.bottomRightCorner<3, 3>() * free_lin.transpose();
    if (!free_ang) {
      w_spring.head<3>().setZero();
      c.topLeftCorner<3, 3>().setZero();
    }
    d.spring += w_spring;
    d.damper += c;
  }
  for (const auto& [name, d] : drives) {
    const Mat6X& jac = jacs.at(name);
    out.torques += jac.transpose() * d.spring;
    if (implicit_damping) {
      Mat6X ja = jac;
      ja.leftCols(r).setZero();
      const Mat6 c = 0.5 * (d.damper + d.damper.transpose());
      out.damping += ja.transpose() * c * ja;
    }
    out.jacobian.conservativeResize(out.jacobian.rows() + 6, Eigen::NoChange);
    out.jacobian.bottomRows(6) = jac;
    out.frames.push_back(name);
  }
  // Task wrenches are realized by joint torques only.
  out.torques.head(r).setZero();
  return out;
}

inline TaskTorques task_torques(const AvatarModel& model, const SimState& state,
                                const std::vector<TaskTarget>& targets,
                                const std::vector<VirtualGuide>& guides) {
  return task_torques(model, forward_kinematics(model, state.q), state.qdot,
                      targets, guides);
}

// Projects actuated torques `gamma0` so they produce no task-frame
// acceleration: returns Gamma with zero root entries and
// J M^-1 Gamma = 0 (up to regularization). With S selecting the actuated
// coordinates, A = J M^-1 S^T and W = S M^-1 S^T,
//
//   gamma = gamma0 - W^-1 A^T (A W^-1 A^T)^+ A gamma0,
//
// which for a fixed base is N^T gamma0 with
// N^T = I - J^T (J M^-1 J^T)^+ J M^-1.
inline VecX null_space_project(const AvatarModel& model, const MatX& mass,
                               const MatX& task_jacobian, const VecX& gamma0,
                               double regularization = 1e-6) {
  const int n = model.n_dof();
  const int r = model.n_root_dof();
  const int na = n - r;
  VecX out = VecX::Zero(n);
  if (task_jacobian.rows() == 0 || na == 0) {
    out.tail(na) = gamma0.tail(na);
    return out;
  }
  Eigen::LLT<MatX> llt(mass);
  if (llt.info() != Eigen::Success)
    throw DegenerateModelError("mass matrix is not positive definite");
  const MatX minv = llt.solve(MatX::Identity(n, n));
  const MatX w = minv.bottomRightCorner(na, na);
  const MatX a = task_jacobian * minv.rightCols(na);
  Eigen::LLT<MatX> wllt(w);
  const MatX winv_at = wllt.solve(a.transpose());
  const MatX lambda = detail::damped_pinv(a * winv_at, regularization);
  const VecX g0 = gamma0.tail(na);
  out.tail(na) = g0 - winv_at * (lambda * (a * g0));
  return out;
}

struct PostureGains {
  VecX q_ref;  // configuration, n_q
  VecX kp;     // per velocity coordinate, n_dof; root entries ignored
  VecX kd;
};

struct PostureTorques {
  VecX raw;        // Gamma_0
  VecX projected;  // after null-space projection
};

inline PostureTorques posture_torques(const AvatarModel& model,
                                      const SimState& state,
                                      const PostureGains& gains,
                                      const MatX& mass,
                                      const MatX& task_jacobian,
                                      double regularization = 1e-6) {
  const int n = model.n_dof();
  if (gains.kp.size() != n || gains.kd.size() != n)
    throw ArgumentError("posture gains have wrong dimension");
  PostureTorques out;
  out.raw = gains.kp.cwiseProduct(difference(model, state.q, gains.q_ref)) -
            gains.kd.cwiseProduct(state.qdot);
  out.raw.head(model.n_root_dof()).setZero();
  out.projected =
      null_space_project(model, mass, task_jacobian, out.raw, regularization);
  return out;
}

// Spring storage of the posture controller, 1/2 sum kp_i e_i^2.
inline double posture_energy(const AvatarModel& model, const VecX& q,
                             const PostureGains& gains) {
  const VecX e = difference(model, q, gains.q_ref);
  double u = 0.0;
  for (int i = model.n_root_dof(); i < model.n_dof(); ++i)
    u += 0.5 * gains.kp[i] * e[i] * e[i];
  return u;
}

struct ControlSettings {
  std::vector<TaskTarget> targets;
  std::vector<VirtualGuide> guides;
  PostureGains posture;
  VecX joint_damping;  // n_dof, N m s/rad
  double regularization = 1e-6;
  // Leave task and guide damping to the integrator (see task_torques).
  bool implicit_damping = false;
};

struct ControlOutput {
  VecX torques;
  VecX task;
  VecX posture;
  VecX posture_raw;
  VecX damping;
  MatX task_jacobian;
  MatX task_damping;  // empty unless implicit_damping
  MatX mass;
  std::optional<BalanceConstraintRow> balance;
};

// One controller update: task + projected posture + joint damping, with the
// root left unactuated, plus the balance constraint row when `ellipse` is
// given.
inline ControlOutput control_step(const AvatarModel& model,
                                  const SimState& state,
                                  const ControlSettings& settings,
                                  const SupportEllipse* ellipse) {
  const Poses poses = forward_kinematics(model, state.q);
  ControlOutput out;
  out.mass = mass_matrix(model, poses);
  TaskTorques task =
      task_torques(model, poses, state.qdot, settings.targets, settings.guides,
                   settings.implicit_damping);
  out.task = std::move(task.torques);
  out.task_damping = std::move(task.damping);
  out.task_jacobian = std::move(task.jacobian);
  const PostureTorques post =
      posture_torques(model, state, settings.posture, out.mass,
                      out.task_jacobian, settings.regularization);
  out.posture = post.projected;
  out.posture_raw = post.raw;
  out.damping = VecX::Zero(model.n_dof());
  if (settings.joint_damping.size() == model.n_dof())
    out.damping = -settings.joint_damping.cwiseProduct(state.qdot);
  out.damping.head(model.n_root_dof()).setZero();
  out.torques = out.task + out.posture + out.damping;
  out.torques.head(model.n_root_dof()).setZero();
  if (ellipse) out.balance = build_balance_row(model, poses, *ellipse);
  return out;
}

}  // namespace balsim
