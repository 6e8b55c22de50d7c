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

// Static balance as a single unilateral constraint.
//
// The support polygon is approximated by an ellipse on the ground plane. With
// v = P (x_com - x_c) the horizontal CoM offset in the ellipse plane,
//
//   delta = d^2 - v^T Q v
//
// is positive strictly inside the ellipse, zero on it and negative outside.
// Its gradient with respect to the generalized velocities is
//
//   d delta = -(x_com - x_c)^T P^T (Q + Q^T) P J_com dq.

#pragma once

#include <algorithm>
#include <vector>

#include <Eigen/Eigenvalues>

#include "balsim/com.hpp"

namespace balsim {

struct SupportEllipse {
  Vec3 center = Vec3::Zero();
  Mat2 q_metric = Mat2::Identity();  // symmetric positive definite
  double d = 1.0;
  Vec3 up_axis = Vec3::UnitZ();

  // Rows span the ground plane: P = [e1^T; e2^T].
  Eigen::Matrix<double, 2, 3> projection() const {
    const auto [e1, e2] = plane_basis(up_axis);
    Eigen::Matrix<double, 2, 3> p;
    p.row(0) = e1.transpose();
    p.row(1) = e2.transpose();
    return p;
  }

  // Semi-axes (major first) and the angle of the major axis from e1, for
  // display.
  Vec2 semi_axes() const {
    Eigen::SelfAdjointEigenSolver<Mat2> eig(q_metric);
    const Vec2 lam = eig.eigenvalues();  // ascending: major axis first
    return Vec2(d / std::sqrt(lam[0]), d / std::sqrt(lam[1]));
  }
  double angle() const {
    Eigen::SelfAdjointEigenSolver<Mat2> eig(q_metric);
    const Vec2 major = eig.eigenvectors().col(0);
    double a = std::atan2(major.y(), major.x());
    if (a > kPi / 2) a -= kPi;
    if (a <= -kPi / 2) a += kPi;
    return a;
  }

  void validate() const {
    if (!(d > 0.0) || !std::isfinite(d))
      throw DegenerateSupportError("ellipse limit distance must be > 0");
    if (std::abs(up_axis.norm() - 1.0) > 1e-9)
      throw DegenerateSupportError("ellipse up axis must have unit norm");
    Eigen::SelfAdjointEigenSolver<Mat2> eig(q_metric);
    if (!(eig.eigenvalues().minCoeff() > 0.0) || !q_metric.allFinite())
      throw DegenerateSupportError("ellipse metric must be positive definite");
  }
};

// Builds an ellipse from center, semi-axes and the angle of the first axis
// measured from e1 toward e2. Normalized with d = max(a, b).
inline SupportEllipse make_ellipse(const Vec3& center, double a, double b,
                                   double angle, const Vec3& up = Vec3::UnitZ()) {
  if (!(a > 0.0) || !(b > 0.0))
    throw DegenerateSupportError("ellipse semi-axes must be > 0");
  SupportEllipse e;
  e.center = center;
  e.up_axis = up.normalized();
  e.d = std::max(a, b);
  Mat2 r;
  r << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
  const Mat2 diag = Vec2(e.d * e.d / (a * a), e.d * e.d / (b * b)).asDiagonal();
  e.q_metric = r * diag * r.transpose();
  e.q_metric = 0.5 * (e.q_metric + e.q_metric.transpose());
  return e;
}

namespace detail {

inline double cross2(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

}  // namespace detail

// Counter-clockwise convex hull (Andrew's monotone chain), collinear points
// dropped.
inline std::vector<Vec2> convex_hull(std::vector<Vec2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](const Vec2& a, const Vec2& b) { return a == b; }),
            pts.end());
  if (pts.size() < 3) return pts;
  std::vector<Vec2> hull(2 * pts.size());
  size_t k = 0;
  for (size_t i = 0; i < pts.size(); ++i) {
    while (k >= 2 && detail::cross2(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  for (size_t i = pts.size() - 1, t = k + 1; i > 0; --i) {
    while (k >= t && detail::cross2(hull[k - 2], hull[k - 1], pts[i - 1]) <= 0)
      --k;
    hull[k++] = pts[i - 1];
  }
  hull.resize(k - 1);
  return hull;
}

// Elliptical approximation of the support polygon of `contact_points`.
//
// The ellipse is centered on the hull's area centroid and aligned with the
// hull's principal axes; each semi-axis is the distance from the centroid to
// the nearer side of the principal-frame bounding box. If that ellipse pokes
// out of the hull it is shrunk uniformly until it fits, then scaled by
// `safety`.
inline SupportEllipse fit_support_ellipse(const std::vector<Vec3>& contact_points,
                                          const Vec3& up_axis, double safety) {
  if (!(safety > 0.0 && safety <= 1.0))
    throw ArgumentError("safety factor must be in (0, 1]");
  if (!(up_axis.norm() > 0.0)) throw ArgumentError("up axis must be nonzero");
  const Vec3 up = up_axis.normalized();
  if (contact_points.size() < 3)
    throw DegenerateSupportError("need at least 3 contact points, got " +
                                 std::to_string(contact_points.size()));
  const auto [e1, e2] = plane_basis(up);
  std::vector<Vec2> flat;
  double height = 0.0;
  for (const Vec3& p : contact_points) {
    flat.emplace_back(e1.dot(p), e2.dot(p));
    height += up.dot(p);
  }
  height /= static_cast<double>(contact_points.size());

  const std::vector<Vec2> hull = convex_hull(flat);
  double extent = 0.0;
  for (const Vec2& p : flat) extent = std::max(extent, (p - flat[0]).norm());
  if (hull.size() < 3)
    throw DegenerateSupportError("contact points are collinear");

  // Polygon area, centroid and second moments.
  double area2 = 0.0;
  Vec2 c = Vec2::Zero();
  const size_t n = hull.size();
  for (size_t i = 0; i < n; ++i) {
    const Vec2& a = hull[i];
    const Vec2& b = hull[(i + 1) % n];
    const double cr = a.x() * b.y() - b.x() * a.y();
    area2 += cr;
    c += (a + b) * cr;
  }
  if (!(std::abs(area2) > 1e-12 * std::max(1e-300, extent * extent)))
    throw DegenerateSupportError("contact points are collinear");
  c /= 3.0 * area2;
  Mat2 cov = Mat2::Zero();
  for (size_t i = 0; i < n; ++i) {
    const Vec2 a = hull[i] - c;
    const Vec2 b = hull[(i + 1) % n] - c;
    const double cr = a.x() * b.y() - b.x() * a.y();
    cov(0, 0) += cr * (a.x() * a.x() + a.x() * b.x() + b.x() * b.x());
    cov(1, 1) += cr * (a.y() * a.y() + a.y() * b.y() + b.y() * b.y());
    cov(0, 1) += cr * (2 * a.x() * a.y() + a.x() * b.y() + b.x() * a.y() +
                       2 * b.x() * b.y());
  }
  cov(0, 0) /= 12.0;
  cov(1, 1) /= 12.0;
  cov(0, 1) /= 24.0;
  cov(1, 0) = cov(0, 1);

  Mat2 axes = Mat2::Identity();  // columns: major, minor
  Eigen::SelfAdjointEigenSolver<Mat2> eig(cov);
  const Vec2 lam = eig.eigenvalues();
  if (std::abs(lam[1] - lam[0]) > 1e-9 * std::abs(lam[0] + lam[1])) {
    axes.col(0) = eig.eigenvectors().col(1);
    if (axes(0, 0) < 0.0 || (axes(0, 0) == 0.0 && axes(1, 0) < 0.0))
      axes.col(0) = -axes.col(0);
    axes.col(1) = Vec2(-axes(1, 0), axes(0, 0));
  }

  Vec2 lo = Vec2::Constant(kInf);
  Vec2 hi = Vec2::Constant(-kInf);
  for (const Vec2& p : hull) {
    const Vec2 local = axes.transpose() * (p - c);
    lo = lo.cwiseMin(local);
    hi = hi.cwiseMax(local);
  }
  double a = std::min(-lo[0], hi[0]);
  double b = std::min(-lo[1], hi[1]);
  if (!(a > 0.0) || !(b > 0.0))
    throw DegenerateSupportError("support region has no interior");

  // Fit inside the hull: support function of the ellipse along each outward
  // edge normal must not exceed the edge offset.
  const Mat2 shape = axes * Vec2(a * a, b * b).asDiagonal() * axes.transpose();
  double shrink = 1.0;
  for (size_t i = 0; i < n; ++i) {
    const Vec2 edge = hull[(i + 1) % n] - hull[i];
    const Vec2 normal = Vec2(edge.y(), -edge.x()).normalized();  // outward (ccw)
    const double offset = normal.dot(hull[i] - c);
    const double reach = std::sqrt(normal.dot(shape * normal));
    if (reach > 0.0) shrink = std::min(shrink, offset / reach);
  }
  a *= shrink * safety;
  b *= shrink * safety;

  const Vec3 center = c.x() * e1 + c.y() * e2 + height * up;
  const double angle = std::atan2(axes(1, 0), axes(0, 0));
  return make_ellipse(center, a, b, angle, up);
}

inline double balance_distance(const SupportEllipse& e, const Vec3& x_com) {
  const Vec2 v = e.projection() * (x_com - e.center);
  return e.d * e.d - v.dot(e.q_metric * v);
}

inline RowX balance_jacobian(const AvatarModel& model, const Poses& poses,
                             const SupportEllipse& e) {
  e.validate();
  const Vec3 offset = com_position(model, poses) - e.center;
  const auto p = e.projection();
  const Mat2 sym = e.q_metric + e.q_metric.transpose();
  const Eigen::RowVector3d lead = -offset.transpose() * p.transpose() * sym * p;
  return lead * com_jacobian(model, poses);
}

inline RowX balance_jacobian(const AvatarModel& model, const VecX& q,
                             const SupportEllipse& e) {
  return balance_jacobian(model, forward_kinematics(model, q), e);
}

struct BalanceConstraintRow {
  double delta = 0.0;
  RowX jacobian;
};

inline BalanceConstraintRow build_balance_row(const AvatarModel& model,
                                              const Poses& poses,
                                              const SupportEllipse& e) {
  BalanceConstraintRow row;
  row.delta = balance_distance(e, com_position(model, poses));
  row.jacobian = balance_jacobian(model, poses, e);
  return row;
}

inline BalanceConstraintRow build_balance_row(const AvatarModel& model,
                                              const SimState& state,
                                              const SupportEllipse& e) {
  return build_balance_row(model, forward_kinematics(model, state.q), e);
}

}  // namespace balsim
