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

// Whole-body center of mass and its 3 x n_dof Jacobian.

#pragma once

#include "balsim/model.hpp"

namespace balsim {

namespace detail {
inline double checked_total_mass(const AvatarModel& model) {
  const double m = model.total_mass();
  if (!(m > 0.0))
    throw DegenerateModelError("total mass is zero; center of mass undefined");
  return m;
}
}  // namespace detail

inline Vec3 com_position(const AvatarModel& model, const Poses& poses) {
  const double total = detail::checked_total_mass(model);
  Vec3 acc = Vec3::Zero();
  for (const Segment& s : model.segments())
    acc += s.mass * (poses[s.id] * s.local_com);
  return acc / total;
}

inline Vec3 com_position(const AvatarModel& model, const VecX& q) {
  return com_position(model, forward_kinematics(model, q));
}

// Mass-weighted mean of the reduced Jacobians of each segment's CoM.
inline Mat3X com_jacobian(const AvatarModel& model, const Poses& poses) {
  const double total = detail::checked_total_mass(model);
  Mat3X acc = Mat3X::Zero(3, model.n_dof());
  for (const Segment& s : model.segments()) {
    if (s.mass == 0.0) continue;
    const Mat6X j = point_jacobian(model, poses, s.id, poses[s.id] * s.local_com);
    acc += s.mass * reduce_jacobian(j);
  }
  return acc / total;
}

inline Mat3X com_jacobian(const AvatarModel& model, const VecX& q) {
  return com_jacobian(model, forward_kinematics(model, q));
}

}  // namespace balsim
