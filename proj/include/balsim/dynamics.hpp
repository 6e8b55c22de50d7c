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

// Equations of motion and velocity-level time stepping with unilateral
// constraints.
//
// Spatial quantities are 6-vectors (angular; linear) in world coordinates,
// referred to the world origin. One step:
//
//   v_free = qdot + h M^-1 (tau - bias)
//   LCP:   w = J M^-1 J^T z + (J v_free + c .* gap / h),   0 <= z _|_ w >= 0
//   qdot+  = v_free + M^-1 J^T z
//   q+     = q (+) h qdot+
//
// where each constraint row carries a stabilization coefficient c.

#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Cholesky>

#include "balsim/balance.hpp"
#include "balsim/lcp.hpp"

namespace balsim {

namespace spatial {

inline Mat6 crm(const Vec6& v) {
  Mat6 m = Mat6::Zero();
  const Mat3 w = skew(v.head<3>());
  m.topLeftCorner<3, 3>() = w;
  m.bottomLeftCorner<3, 3>() = skew(v.tail<3>());
  m.bottomRightCorner<3, 3>() = w;
  return m;
}

inline Mat6 crf(const Vec6& v) { return -crm(v).transpose(); }

// Spatial inertia of a segment about the world origin.
inline Mat6 inertia(const Segment& s, const Transform& pose) {
  const Vec3 c = pose * s.local_com;
  const Mat3 r = pose.linear();
  const Mat3 ic = r * s.inertia * r.transpose();
  const Mat3 cx = skew(c);
  Mat6 out;
  out.topLeftCorner<3, 3>() = ic + s.mass * cx * cx.transpose();
  out.topRightCorner<3, 3>() = s.mass * cx;
  out.bottomLeftCorner<3, 3>() = s.mass * cx.transpose();
  out.bottomRightCorner<3, 3>() = s.mass * Mat3::Identity();
  return out;
}

}  // namespace spatial

// Composite-rigid-body mass matrix.
inline MatX mass_matrix(const AvatarModel& model, const Poses& poses) {
  const int n = model.num_segments();
  std::vector<Mat6> composite(n);
  for (int i = 0; i < n; ++i)
    composite[i] = spatial::inertia(model.segment(i), poses[i]);
  for (int i = n - 1; i > 0; --i)
    if (auto p = model.segment(i).parent) composite[*p] += composite[i];

  MatX m = MatX::Zero(model.n_dof(), model.n_dof());
  for (int i = 0; i < n; ++i) {
    const Joint& ji = model.joint(i);
    if (ji.nv() == 0) continue;
    const Mat6X si = joint_columns(model, poses, i, Vec3::Zero());
    const Mat6X f = composite[i] * si;
    m.block(ji.dof_offset, ji.dof_offset, ji.nv(), ji.nv()) = si.transpose() * f;
    for (auto j = model.segment(i).parent; j; j = model.segment(*j).parent) {
      const Joint& jj = model.joint(*j);
      if (jj.nv() == 0) continue;
      const Mat6X sj = joint_columns(model, poses, *j, Vec3::Zero());
      const MatX blk = sj.transpose() * f;
      m.block(jj.dof_offset, ji.dof_offset, jj.nv(), ji.nv()) = blk;
      m.block(ji.dof_offset, jj.dof_offset, ji.nv(), jj.nv()) = blk.transpose();
    }
  }
  return m;
}

inline MatX mass_matrix(const AvatarModel& model, const VecX& q) {
  return mass_matrix(model, forward_kinematics(model, q));
}

// World spatial velocity of every segment.
inline std::vector<Vec6> segment_velocities(const AvatarModel& model,
                                            const Poses& poses,
                                            const VecX& qdot) {
  std::vector<Vec6> vel(model.num_segments());
  for (int i = 0; i < model.num_segments(); ++i) {
    const Joint& j = model.joint(i);
    Vec6 v = Vec6::Zero();
    if (auto p = model.segment(i).parent) v = vel[*p];
    if (j.nv() > 0)
      v += joint_columns(model, poses, i, Vec3::Zero()) *
           qdot.segment(j.dof_offset, j.nv());
    vel[i] = v;
  }
  return vel;
}

// Recursive Newton-Euler with zero joint acceleration: Coriolis, centrifugal
// and gravity generalized forces, so that  M qddot + bias = tau.
inline VecX bias_forces(const AvatarModel& model, const Poses& poses,
                        const VecX& qdot, const Vec3& gravity) {
  if (qdot.size() != model.n_dof())
    throw ArgumentError("velocity has wrong dimension");
  const int n = model.num_segments();
  std::vector<Vec6> vel(n), acc(n), force(n);
  std::vector<Mat6X> cols(n);
  Vec6 base_acc = Vec6::Zero();
  base_acc.tail<3>() = -gravity;
  for (int i = 0; i < n; ++i) {
    const Joint& j = model.joint(i);
    cols[i] = joint_columns(model, poses, i, Vec3::Zero());
    const auto parent = model.segment(i).parent;
    Vec6 v = parent ? vel[*parent] : Vec6::Zero();
    Vec6 a = parent ? acc[*parent] : base_acc;
    if (j.nv() > 0) {
      const VecX qd = qdot.segment(j.dof_offset, j.nv());
      v += cols[i] * qd;
      // Columns fixed in the child body rotate with it; the free6
      // translation columns are fixed in the world.
      Vec6 moving = cols[i] * qd;
      if (j.kind == JointKind::free6)
        moving = cols[i].rightCols<3>() * qd.tail<3>();
      a += spatial::crm(v) * moving;
    }
    vel[i] = v;
    acc[i] = a;
    const Mat6 inertia = spatial::inertia(model.segment(i), poses[i]);
    force[i] = inertia * a + spatial::crf(v) * (inertia * v);
  }
  VecX tau = VecX::Zero(model.n_dof());
  for (int i = n - 1; i >= 0; --i) {
    const Joint& j = model.joint(i);
    if (j.nv() > 0) tau.segment(j.dof_offset, j.nv()) = cols[i].transpose() * force[i];
    if (auto p = model.segment(i).parent) force[*p] += force[i];
  }
  return tau;
}

inline VecX bias_forces(const AvatarModel& model, const VecX& q,
                        const VecX& qdot, const Vec3& gravity) {
  return bias_forces(model, forward_kinematics(model, q), qdot, gravity);
}

inline double kinetic_energy(const AvatarModel& model, const Poses& poses,
                             const VecX& qdot) {
  return 0.5 * qdot.dot(mass_matrix(model, poses) * qdot);
}

inline double potential_energy(const AvatarModel& model, const Poses& poses,
                               const Vec3& gravity) {
  double u = 0.0;
  for (const Segment& s : model.segments())
    u -= s.mass * gravity.dot(poses[s.id] * s.local_com);
  return u;
}

// ---------------------------------------------------------------------------
// Environment and contacts

struct PlaneExtent {
  Vec3 min = Vec3::Constant(-kInf);
  Vec3 max = Vec3::Constant(kInf);
};

struct EnvironmentPlane {
  std::string name;
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  // Bounds on the foot of the perpendicular from a candidate point.
  std::optional<PlaneExtent> extent;
  // Points deeper than this below the surface are not in contact with it.
  double thickness = kInf;
  // Contacting segments may not slide or spin on this plane.
  bool no_slip = false;
};

struct Contact {
  int segment = 0;
  Vec3 local_point = Vec3::Zero();
  int plane = 0;
  double gap = 0.0;
  Vec3 normal = Vec3::UnitZ();
  Vec3 world_point = Vec3::Zero();
};

inline std::vector<Contact> detect_contacts(const AvatarModel& model,
                                            const Poses& poses,
                                            const std::vector<EnvironmentPlane>& planes,
                                            double activation = 0.005) {
  std::vector<Contact> out;
  for (const Segment& s : model.segments()) {
    for (const Vec3& local : s.collision_points) {
      const Vec3 p = poses[s.id] * local;
      for (int k = 0; k < static_cast<int>(planes.size()); ++k) {
        const EnvironmentPlane& pl = planes[k];
        const double gap = pl.normal.dot(p - pl.point);
        if (gap >= activation || gap < -pl.thickness) continue;
        if (pl.extent) {
          const Vec3 foot = p - gap * pl.normal;
          const double eps = 1e-12;
          if ((foot.array() < pl.extent->min.array() - eps).any() ||
              (foot.array() > pl.extent->max.array() + eps).any())
            continue;
        }
        out.push_back({s.id, local, k, gap, pl.normal, p});
      }
    }
  }
  return out;
}

inline std::vector<Contact> detect_contacts(const AvatarModel& model,
                                            const VecX& q,
                                            const std::vector<EnvironmentPlane>& planes,
                                            double activation = 0.005) {
  return detect_contacts(model, forward_kinematics(model, q), planes, activation);
}

enum class RowKind {
  balance,
  joint_limit_lower,
  joint_limit_upper,
  contact
};

inline const char* to_string(RowKind k) {
  switch (k) {
    case RowKind::balance: return "balance";
    case RowKind::joint_limit_lower: return "joint_limit_lower";
    case RowKind::joint_limit_upper: return "joint_limit_upper";
    case RowKind::contact: return "contact";
  }
  return "?";
}

// Stacked unilateral constraints  rows * qdot >= -c .* gaps / h.
struct UnilateralSystem {
  MatX rows;
  VecX gaps;
  VecX stabilization;
  std::vector<RowKind> kinds;
  std::vector<int> source;  // contact index, coordinate index, or -1

  explicit UnilateralSystem(int n_dof = 0) : rows(0, n_dof) {}

  int size() const { return static_cast<int>(kinds.size()); }

  void add(const RowX& row, double gap, double stab, RowKind kind, int src) {
    if (row.size() != rows.cols())
      throw ArgumentError("constraint row has wrong dimension");
    if (!row.allFinite() || !std::isfinite(gap))
      throw ArgumentError("constraint row is not finite");
    const int r = size();
    rows.conservativeResize(r + 1, Eigen::NoChange);
    rows.row(r) = row;
    gaps.conservativeResize(r + 1);
    gaps[r] = gap;
    stabilization.conservativeResize(r + 1);
    stabilization[r] = stab;
    kinds.push_back(kind);
    source.push_back(src);
  }
};

// Rows +e_i (lower) / -e_i (upper) for revolute coordinates within `margin`
// of a bound; gap is the distance to that bound.
inline UnilateralSystem joint_limit_rows(const AvatarModel& model,
                                         const VecX& q, double margin,
                                         double stabilization = 0.2) {
  UnilateralSystem sys(model.n_dof());
  for (const Joint& j : model.joints()) {
    if (!j.limited()) continue;
    const double value = q[j.q_offset];
    RowX row = RowX::Zero(model.n_dof());
    if (value - j.lower < margin) {
      row[j.dof_offset] = 1.0;
      sys.add(row, value - j.lower, stabilization, RowKind::joint_limit_lower,
              j.dof_offset);
    }
    if (j.upper - value < margin) {
      row.setZero();
      row[j.dof_offset] = -1.0;
      sys.add(row, j.upper - value, stabilization, RowKind::joint_limit_upper,
              j.dof_offset);
    }
  }
  return sys;
}

inline void append_contact_rows(UnilateralSystem& sys, const AvatarModel& model,
                                const Poses& poses,
                                const std::vector<Contact>& contacts,
                                double stabilization) {
  for (int c = 0; c < static_cast<int>(contacts.size()); ++c) {
    const Contact& k = contacts[c];
    const Mat6X jac = point_jacobian(model, poses, k.segment, k.world_point);
    sys.add(k.normal.transpose() * jac.bottomRows<3>(), k.gap, stabilization,
            RowKind::contact, c);
  }
}

// No-slip rows: for every (segment, no_slip plane) pair in contact, the
// tangential velocity at the centroid of the contacting points and the spin
// about the normal, to be held at zero as equality constraints.
inline MatX anchor_rows(const AvatarModel& model, const Poses& poses,
                        const std::vector<Contact>& contacts,
                        const std::vector<EnvironmentPlane>& planes) {
  std::vector<std::pair<int, int>> groups;
  for (const Contact& k : contacts) {
    if (!planes[k.plane].no_slip) continue;
    const std::pair<int, int> key{k.segment, k.plane};
    if (std::find(groups.begin(), groups.end(), key) == groups.end())
      groups.push_back(key);
  }
  MatX rows(3 * static_cast<int>(groups.size()), model.n_dof());
  int at = 0;
  for (const auto& [seg, plane] : groups) {
    Vec3 centroid = Vec3::Zero();
    int count = 0;
    for (const Contact& c : contacts) {
      if (c.segment != seg || c.plane != plane) continue;
      centroid += c.world_point;
      ++count;
    }
    centroid /= count;
    const Vec3 n = planes[plane].normal;
    const auto [t1, t2] = plane_basis(n);
    const Mat6X jac = point_jacobian(model, poses, seg, centroid);
    rows.row(at++) = t1.transpose() * jac.bottomRows<3>();
    rows.row(at++) = t2.transpose() * jac.bottomRows<3>();
    rows.row(at++) = n.transpose() * jac.topRows<3>();
  }
  return rows;
}

inline void append_rows(UnilateralSystem& sys, const UnilateralSystem& other) {
  for (int r = 0; r < other.size(); ++r)
    sys.add(other.rows.row(r), other.gaps[r], other.stabilization[r],
            other.kinds[r], other.source[r]);
}

struct AssembledLcp {
  LcpProblem problem;
  VecX v_free;
  MatX minv_jt;  // n_dof x k: maps the LCP solution to a velocity change
};

// Velocity-level LCP for one step. Optional equality rows `bilateral`
// (B v+ = 0) are eliminated first: with S = B M^-1 B^T, every velocity change
// is mapped through M^-1 - M^-1 B^T S^-1 B M^-1.
inline AssembledLcp assemble_lcp(const VecX& qdot, const MatX& mass,
                                 const VecX& applied, const VecX& bias,
                                 const UnilateralSystem& sys, double h,
                                 const MatX& bilateral = MatX()) {
  if (!(h > 0.0)) throw ArgumentError("timestep must be positive");
  const int n = static_cast<int>(qdot.size());
  if (mass.rows() != n || mass.cols() != n || applied.size() != n ||
      bias.size() != n || sys.rows.cols() != n ||
      (bilateral.rows() > 0 && bilateral.cols() != n))
    throw ArgumentError("assemble_lcp: inconsistent dimensions");
  Eigen::LLT<MatX> llt(mass);
  if (llt.info() != Eigen::Success)
    throw DegenerateModelError("mass matrix is not positive definite");
  AssembledLcp out;
  out.v_free = qdot + h * llt.solve(applied - bias);
  out.minv_jt = llt.solve(sys.rows.transpose());
  if (bilateral.rows() > 0) {
    const MatX minv_bt = llt.solve(bilateral.transpose());
    MatX schur = bilateral * minv_bt;
    schur.diagonal().array() += 1e-12 * (1.0 + schur.diagonal().mean());
    const Eigen::LDLT<MatX> ldlt(schur);
    out.v_free -= minv_bt * ldlt.solve(bilateral * out.v_free);
    if (sys.size() > 0) out.minv_jt -= minv_bt * ldlt.solve(bilateral * out.minv_jt);
  }
  out.problem.M = sys.rows * out.minv_jt;
  out.problem.M = 0.5 * (out.problem.M + out.problem.M.transpose());
  out.problem.q_hat = sys.rows * out.v_free +
                      sys.stabilization.cwiseProduct(sys.gaps) / h;
  return out;
}

struct StepOptions {
  Vec3 gravity = Vec3(0.0, 0.0, -9.81);
  double baumgarte = 0.2;
  double contact_activation = 0.005;
  double limit_activation = 0.05;
  // Balance row, gap = delta - balance_margin: while gap >= 0 the row admits
  // an approach of (1 - balance_stabilization) * gap / h per step; once gap
  // is negative it restores `balance_recovery` of the deficit per step.
  double balance_stabilization = 0.0;
  double balance_recovery = 0.1;
  double balance_margin = 0.0;  // m^2, subtracted from delta
  double velocity_cap = 10.0;   // m/s, any segment origin
  // Viscous joint damping -D qdot evaluated at the end-of-step velocity
  // (N m s/rad per velocity coordinate; root entries ignored). Empty = none.
  VecX joint_damping;
  // Further damping -D qdot (n_dof x n_dof, symmetric positive semidefinite,
  // zero root rows and columns), also implicit. Empty = none.
  MatX damping_matrix;
  // Compliance added to the Delassus diagonal of contact rows, relative to
  // the mean diagonal; keeps redundant contact rows (four coplanar points on a rigid
  // foot) from making the LCP singular.
  double compliance = 1e-4;
  LcpOptions lcp;
};

struct StepResult {
  SimState state;
  std::vector<Contact> contacts;
  UnilateralSystem system;
  LcpSolution lcp;
  bool velocity_clamped = false;

  // Sum of contact normal impulses projected on `up`.
  double vertical_impulse(const Vec3& up = Vec3::UnitZ()) const {
    double s = 0.0;
    for (int r = 0; r < system.size(); ++r)
      if (system.kinds[r] == RowKind::contact)
        s += lcp.z[r] * contacts[system.source[r]].normal.dot(up);
    return s;
  }
  double impulse_of(RowKind kind) const {
    double s = 0.0;
    for (int r = 0; r < system.size(); ++r)
      if (system.kinds[r] == kind) s += lcp.z[r];
    return s;
  }
};

class StepError : public Error {
 public:
  using Error::Error;
};

// Semi-implicit Euler step with one joint LCP over all active unilateral
// rows (contacts, joint limits and the optional balance row); no-slip anchors
// enter as equality constraints.
inline StepResult step(const AvatarModel& model, const SimState& state,
                       const VecX& applied,
                       const std::vector<EnvironmentPlane>& planes,
                       const BalanceConstraintRow* balance, double h,
                       const StepOptions& opts = {}) {
  if (!(h > 0.0 && h <= 0.02))
    throw ArgumentError("timestep must lie in (0, 0.02] s");
  if (state.qdot.size() != model.n_dof() || applied.size() != model.n_dof())
    throw ArgumentError("step: state/torque dimension mismatch");
  if (!state.qdot.allFinite() || !applied.allFinite())
    throw ArgumentError("step: non-finite velocity or torque");
  const Poses poses = forward_kinematics(model, state.q);
  // With damping D folded in: (M + h D) v+ = M qdot + h (applied - bias)
  // + impulses, i.e. the usual update with M + h D and applied - D qdot.
  MatX mass = mass_matrix(model, poses);
  const VecX bias = bias_forces(model, poses, state.qdot, opts.gravity);
  VecX torque = applied;
  if (opts.joint_damping.size() > 0) {
    if (opts.joint_damping.size() != model.n_dof() || (opts.joint_damping.array() < 0.0).any())
      throw ArgumentError("step: joint damping must be n_dof non-negative entries");
    const int na = model.n_dof() - model.n_root_dof();
    const VecX d = opts.joint_damping.tail(na);
    mass.diagonal().tail(na) += h * d;
    torque.tail(na) -= d.cwiseProduct(state.qdot.tail(na));
  }
  if (opts.damping_matrix.size() > 0) {
    if (opts.damping_matrix.rows() != model.n_dof() ||
        opts.damping_matrix.cols() != model.n_dof() ||
        !opts.damping_matrix.allFinite())
      throw ArgumentError("step: damping matrix must be n_dof x n_dof");
    mass += h * opts.damping_matrix;
    torque -= opts.damping_matrix * state.qdot;
  }

  StepResult res{state, {}, UnilateralSystem(model.n_dof()), {}, false};
  res.contacts = detect_contacts(model, poses, planes, opts.contact_activation);
  append_contact_rows(res.system, model, poses, res.contacts, opts.baumgarte);
  const MatX anchors = anchor_rows(model, poses, res.contacts, planes);
  append_rows(res.system, joint_limit_rows(model, state.q, opts.limit_activation,
                                           opts.baumgarte));
  if (balance) {
    const double gap = balance->delta - opts.balance_margin;
    const double stab =
        gap >= 0.0 ? 1.0 - opts.balance_stabilization : opts.balance_recovery;
    res.system.add(balance->jacobian, gap, stab, RowKind::balance, -1);
  }

  const AssembledLcp lcp =
      assemble_lcp(state.qdot, mass, torque, bias, res.system, h, anchors);
  LcpProblem problem = lcp.problem;
  if (opts.compliance > 0.0 && problem.size() > 0) {
    const double soft = opts.compliance * problem.M.diagonal().mean();
    for (int r = 0; r < problem.size(); ++r)
      if (res.system.kinds[r] == RowKind::contact) problem.M(r, r) += soft;
  }
  res.lcp = solve_lcp(problem, opts.lcp);
  if (res.lcp.status != LcpStatus::solved)
    throw StepError(std::string("LCP ") + to_string(res.lcp.status) +
                    " (rows=" + std::to_string(res.system.size()) +
                    ", residual=" + std::to_string(res.lcp.residual) + ")");
  VecX v = lcp.v_free;
  if (res.system.size() > 0) v += lcp.minv_jt * res.lcp.z;

  if (opts.velocity_cap > 0.0) {
    const auto vel = segment_velocities(model, poses, v);
    double worst = 0.0;
    for (int i = 0; i < model.num_segments(); ++i) {
      const Vec3 o = poses[i].translation();
      worst = std::max(worst, (vel[i].tail<3>() + vel[i].head<3>().cross(o)).norm());
    }
    if (worst > opts.velocity_cap) {
      v *= opts.velocity_cap / worst;
      res.velocity_clamped = true;
    }
  }
  if (!v.allFinite()) throw StepError("non-finite velocity after LCP");

  res.state.qdot = v;
  res.state.q = integrate(model, state.q, v, h);
  res.state.t = state.t + h;
  return res;
}

}  // namespace balsim
