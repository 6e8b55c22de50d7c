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

// Task wrenches, virtual guides, null-space posture and retargeting.

#include <random>

#include <gtest/gtest.h>

#include <Eigen/QR>

#include "balsim/control.hpp"
#include "oracles.hpp"
#include "test_models.hpp"

namespace balsim {
namespace {

Transform pose_at(const Vec3& p, const Quat& r = Quat::Identity()) {
  Transform t = Transform::Identity();
  t.linear() = r.toRotationMatrix();
  t.translation() = p;
  return t;
}

TEST(TargetWrench, LinearBelowCap) {
  TaskTarget t;
  t.desired_position = Vec3(0.1, -0.2, 0.05);
  t.kp = 100;
  t.kd = 7;
  const Vec6 twist = (Vec6() << 0, 0, 0, 0.3, 0.1, -0.2).finished();
  const Vec6 w = target_wrench(t, pose_at(Vec3::Zero()), twist);
  const Vec3 expected = 100 * Vec3(0.1, -0.2, 0.05) - 7 * Vec3(0.3, 0.1, -0.2);
  EXPECT_LT((w.tail<3>() - expected).norm(), 1e-12);
  EXPECT_EQ(w.head<3>(), Vec3::Zero());
}

TEST(TargetWrench, SaturationHitsCapAndKeepsDirection) {
  TaskTarget t;
  t.desired_position = Vec3(3.0, 4.0, 0.0);
  t.kp = 100;
  t.max_force = 25;
  t.desired_orientation = Quat(Eigen::AngleAxisd(1.2, Vec3::UnitZ()));
  t.kp_rot = 80;
  t.max_torque = 5;
  const Vec6 w = target_wrench(t, pose_at(Vec3::Zero()), Vec6::Zero());
  EXPECT_NEAR(w.tail<3>().norm(), 25.0, 1e-12);
  EXPECT_LT((w.tail<3>().normalized() - Vec3(0.6, 0.8, 0.0)).norm(), 1e-12);
  EXPECT_NEAR(w.head<3>().norm(), 5.0, 1e-12);
  EXPECT_LT((w.head<3>().normalized() - Vec3::UnitZ()).norm(), 1e-12);
}

TEST(TargetWrench, OrientationErrorIsRotationVector) {
  TaskTarget t;
  t.desired_orientation = Quat(Eigen::AngleAxisd(0.3, Vec3(1, 2, 2) / 3.0));
  t.kp_rot = 10;
  t.kd_rot = 0;
  const Vec6 w = target_wrench(t, pose_at(Vec3::Zero()), Vec6::Zero());
  EXPECT_LT((w.head<3>() - 10 * 0.3 * Vec3(1, 2, 2) / 3.0).norm(), 1e-12);
}

TEST(TaskTarget, ValidateRejectsBadValues) {
  TaskTarget t;
  t.kp = -1;
  EXPECT_THROW(t.validate(), ArgumentError);
  t = TaskTarget{};
  t.max_force = 0;
  EXPECT_THROW(t.validate(), ArgumentError);
  t = TaskTarget{};
  t.desired_orientation = Quat(2, 0, 0, 0);
  EXPECT_THROW(t.validate(), ArgumentError);
}

TEST(VirtualGuide, ConstrainedProjectors) {
  VirtualGuide g;
  g.direction = Vec3(0, 0.6, 0.8);
  g.kind = GuideKind::axis;
  EXPECT_LT((g.constrained() * g.direction).norm(), 1e-15);
  g.kind = GuideKind::plane;
  EXPECT_LT((g.constrained() * g.direction - g.direction).norm(), 1e-15);
  EXPECT_LT((g.constrained() * Vec3(1, 0, 0)).norm(), 1e-15);
  g.kind = GuideKind::point;
  EXPECT_EQ(g.constrained(), Mat3::Identity());
  g.kind = GuideKind::axis;
  g.direction = Vec3(1, 1, 0);
  EXPECT_THROW(g.validate(), ArgumentError);
}

TEST(VirtualGuide, ErrorIgnoresMotionAlongAxis) {
  VirtualGuide g;
  g.kind = GuideKind::axis;
  g.direction = Vec3::UnitX();
  g.point = Vec3(0, 0, 1);
  const Transform pose = pose_at(Vec3(5.0, 0.02, 1.03));
  const Vec6 e = guide_pose_error(g, pose);
  EXPECT_LT((e.tail<3>() - Vec3(0, -0.02, -0.03)).norm(), 1e-12);
  EXPECT_NEAR(guide_lateral_error(g, pose), std::hypot(0.02, 0.03), 1e-12);
  EXPECT_NEAR(guide_axis_angle(g, pose), 0.0, 1e-12);
  const Transform tilted = pose_at(Vec3::Zero(), Quat(Eigen::AngleAxisd(0.25, Vec3::UnitZ())));
  EXPECT_NEAR(guide_axis_angle(g, tilted), 0.25, 1e-12);
}

// Along any motion, w . v + dE/dt equals minus the damper dissipation.
TEST(VirtualGuide, PassiveWithRespectToItsSpring) {
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (GuideKind kind : {GuideKind::axis, GuideKind::plane, GuideKind::point}) {
    for (int trial = 0; trial < 20; ++trial) {
      VirtualGuide g;
      g.kind = kind;
      g.direction = Vec3(u(rng), u(rng), u(rng)).normalized();
      g.point = Vec3(u(rng), u(rng), u(rng));
      g.orientation = Quat(Eigen::AngleAxisd(u(rng), Vec3(u(rng), u(rng), u(rng)).normalized()));
      g.stiffness = 300;
      g.damping = 20;
      g.angular_stiffness = 15;
      g.angular_damping = 2;
      const Quat r0(Eigen::AngleAxisd(u(rng), Vec3(u(rng), u(rng), u(rng)).normalized()));
      const Vec3 p0(u(rng), u(rng), u(rng));
      Vec6 v;
      v << u(rng), u(rng), u(rng), u(rng), u(rng), u(rng);
      auto moved = [&](double dt) {
        const Vec3 w = v.head<3>();
        const Quat dq(Eigen::AngleAxisd(w.norm() * dt, w.normalized()));
        return pose_at(p0 + dt * v.tail<3>(), dq * r0);
      };
      const double dt = 1e-6;
      const double de = (guide_energy(g, moved(dt)) - guide_energy(g, moved(-dt))) / (2 * dt);
      const Transform pose = moved(0.0);
      const Vec6 w = apply_guide(g, guide_pose_error(g, pose), v);
      const double dissipation = g.damping * (g.constrained() * v.tail<3>()).squaredNorm() +
                                 g.angular_damping * v.head<3>().squaredNorm();
      EXPECT_NEAR(w.dot(v) + de, -dissipation, 1e-6 * (1.0 + dissipation));
      EXPECT_LE(w.dot(v) + de, 1e-6);
    }
  }
}

// Fixed base: N^T gamma with N^T = I - J^T (J M^-1 J^T)^+ J M^-1.
TEST(NullSpaceProject, FixedBaseMatchesPseudoinverseFormula) {
  std::mt19937 rng(21);
  for (int trial = 0; trial < 10; ++trial) {
    AvatarModel model = testing::random_tree(rng, 9, false);
    TaskFrame f;
    f.name = "tip";
    f.segment = model.num_segments() - 1;
    model.add_task_frame(f);
    const VecX q = testing::random_configuration(model, rng);
    const Poses poses = forward_kinematics(model, q);
    const MatX m = mass_matrix(model, poses);
    const MatX j = point_jacobian(model, poses, f.segment,
                                  task_frame_pose(model, poses, f).translation());
    const VecX g0 = testing::random_velocity(model, rng, 5.0);
    const MatX minv = m.inverse();
    const MatX lam = (j * minv * j.transpose()).completeOrthogonalDecomposition().pseudoInverse();
    const VecX expected = g0 - j.transpose() * lam * j * minv * g0;
    const VecX got = null_space_project(model, m, j, g0, 1e-9);
    EXPECT_LT((got - expected).norm(), 1e-6 * (1.0 + g0.norm()));
    EXPECT_LT((j * minv * got).norm(), 1e-6 * (1.0 + (j * minv * g0).norm()));
  }
}

TEST(NullSpaceProject, FloatingBaseLeavesRootAndTasksUntouched) {
  const AvatarModel& model = testing::reference_humanoid();
  std::mt19937 rng(22);
  for (int trial = 0; trial < 5; ++trial) {
    const VecX q = testing::random_configuration(model, rng, 0.5);
    const Poses poses = forward_kinematics(model, q);
    const MatX m = mass_matrix(model, poses);
    MatX j(12, model.n_dof());
    int row = 0;
    for (const char* name : {"left_hand", "right_hand"}) {
      const TaskFrame& f = *model.find_task_frame(name);
      j.middleRows(row, 6) =
          point_jacobian(model, poses, f.segment, task_frame_pose(model, poses, f).translation());
      row += 6;
    }
    VecX g0 = testing::random_velocity(model, rng, 10.0);
    const VecX got = null_space_project(model, m, j, g0);
    EXPECT_EQ(got.head(model.n_root_dof()), VecX::Zero(model.n_root_dof()));
    const MatX minv = m.inverse();
    g0.head(model.n_root_dof()).setZero();
    EXPECT_LT((j * minv * got).norm(), 1e-5 * (j * minv * g0).norm());
  }
}

TEST(NullSpaceProject, NoTasksPassesActuatedTorques) {
  const AvatarModel& model = testing::reference_humanoid();
  const VecX q = model.neutral_configuration();
  const MatX m = mass_matrix(model, q);
  const VecX g0 = VecX::Ones(model.n_dof());
  const VecX got = null_space_project(model, m, MatX(0, model.n_dof()), g0);
  EXPECT_EQ(got.head(6), VecX::Zero(6));
  EXPECT_EQ(got.tail(model.n_dof() - 6), g0.tail(model.n_dof() - 6));
}

struct HumanoidFixture : ::testing::Test {
  const AvatarModel& model = testing::reference_humanoid();
  std::mt19937 rng{31};
  VecX q;
  VecX qdot;
  Poses poses;

  void SetUp() override {
    q = testing::random_configuration(model, rng, 0.4);
    qdot = testing::random_velocity(model, rng, 0.5);
    poses = forward_kinematics(model, q);
  }
  Transform frame(const std::string& name) const {
    return task_frame_pose(model, poses, *model.find_task_frame(name));
  }
  Mat6X jac(const std::string& name) const {
    const TaskFrame& f = *model.find_task_frame(name);
    return point_jacobian(model, poses, f.segment, frame(name).translation());
  }
};

TEST_F(HumanoidFixture, TaskTorquesAreJacobianTransposeWrench) {
  TaskTarget t;
  t.task_frame = "right_hand";
  t.desired_position = frame("right_hand").translation() + Vec3(0.1, 0.05, -0.02);
  const TaskTorques out = task_torques(model, poses, qdot, {t}, {});
  VecX expected = jac("right_hand").transpose() *
                  target_wrench(t, frame("right_hand"), jac("right_hand") * qdot);
  expected.head(6).setZero();
  EXPECT_LT((out.torques - expected).norm(), 1e-10);
  ASSERT_EQ(out.frames.size(), 1u);
  EXPECT_EQ(out.jacobian, MatX(jac("right_hand")));
}

TEST_F(HumanoidFixture, GuideReplacesTargetInConstrainedDirections) {
  VirtualGuide g;
  g.name = "rail";
  g.task_frame = "tool";
  g.kind = GuideKind::axis;
  g.direction = Vec3::UnitX();
  g.point = frame("tool").translation();
  g.orientation = Quat(frame("tool").linear());
  g.stiffness = 1000;
  TaskTarget t;
  t.task_frame = "tool";
  t.desired_position = g.point + Vec3(0.2, 0.3, -0.1);
  t.desired_orientation = Quat(Eigen::AngleAxisd(0.4, Vec3::UnitY())) * *g.orientation;
  t.kd = 0;
  const VecX still = VecX::Zero(model.n_dof());
  const TaskTorques out = task_torques(model, poses, still, {t}, {g});
  Vec6 w = Vec6::Zero();
  w.tail<3>() = t.kp * Vec3(0.2, 0.0, 0.0);
  VecX expected = jac("tool").transpose() * w;
  expected.head(6).setZero();
  EXPECT_LT((out.torques - expected).norm(), 1e-9);

  g.enabled = false;
  const TaskTorques free = task_torques(model, poses, still, {t}, {g});
  VecX unguided = jac("tool").transpose() * target_wrench(t, frame("tool"), Vec6::Zero());
  unguided.head(6).setZero();
  EXPECT_LT((free.torques - unguided).norm(), 1e-9);
}

TEST_F(HumanoidFixture, ImplicitDampingSplitsOffVelocityTerms) {
  qdot.head(6).setZero();  // the implicit form damps joint motion only
  TaskTarget hand;
  hand.task_frame = "left_hand";
  hand.desired_position = frame("left_hand").translation() + Vec3(0.05, 0.0, 0.02);
  hand.desired_orientation = Quat(Eigen::AngleAxisd(0.1, Vec3::UnitX())) *
                             Quat(frame("left_hand").linear());
  TaskTarget tool;
  tool.task_frame = "tool";
  tool.desired_position = frame("tool").translation() + Vec3(0.0, 0.04, 0.0);
  VirtualGuide g;
  g.task_frame = "tool";
  g.kind = GuideKind::plane;
  g.direction = Vec3::UnitZ();
  g.point = frame("tool").translation() + Vec3(0, 0, 0.01);
  g.orientation = Quat(frame("tool").linear());
  g.stiffness = 2000;
  g.damping = 90;
  g.angular_stiffness = 30;
  g.angular_damping = 3;

  const TaskTorques ex = task_torques(model, poses, qdot, {hand, tool}, {g});
  const TaskTorques im = task_torques(model, poses, qdot, {hand, tool}, {g}, true);
  ASSERT_EQ(im.damping.rows(), model.n_dof());
  EXPECT_TRUE(ex.damping.size() == 0);
  EXPECT_LT((im.torques - im.damping * qdot - ex.torques).norm(), 1e-9 * (1 + ex.torques.norm()));
  EXPECT_LT((im.damping - im.damping.transpose()).cwiseAbs().maxCoeff(), 1e-12);
  Eigen::SelfAdjointEigenSolver<MatX> eig(im.damping);
  EXPECT_GT(eig.eigenvalues().minCoeff(), -1e-9);
  EXPECT_EQ(im.damping.topRows(6).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(im.damping.leftCols(6).cwiseAbs().maxCoeff(), 0.0);
}

TEST_F(HumanoidFixture, SaturatedTargetStaysExplicit) {
  TaskTarget t;
  t.task_frame = "right_hand";
  t.desired_position = frame("right_hand").translation() + Vec3(2.0, 0.0, 0.0);
  t.max_force = 10;
  const TaskTorques ex = task_torques(model, poses, qdot, {t}, {});
  const TaskTorques im = task_torques(model, poses, qdot, {t}, {}, true);
  EXPECT_EQ(im.damping.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_LT((im.torques - ex.torques).norm(), 1e-12);
}

TEST_F(HumanoidFixture, UnknownTaskFrameIsConfigError) {
  TaskTarget t;
  t.task_frame = "tail";
  EXPECT_THROW(task_torques(model, poses, qdot, {t}, {}), ConfigError);
}

TEST_F(HumanoidFixture, ControlStepSumsPartsAndLeavesRootUnactuated) {
  ControlSettings s;
  TaskTarget t;
  t.task_frame = "right_hand";
  t.desired_position = frame("right_hand").translation() + Vec3(0, 0, 0.1);
  s.targets = {t};
  s.posture.q_ref = model.neutral_configuration();
  s.posture.kp = VecX::Constant(model.n_dof(), 20.0);
  s.posture.kd = VecX::Constant(model.n_dof(), 1.0);
  s.joint_damping = VecX::Constant(model.n_dof(), 0.5);
  const SimState state{q, qdot, 0.0};
  const SupportEllipse e = make_ellipse(Vec3::Zero(), 0.2, 0.1, 0.0);
  const ControlOutput with = control_step(model, state, s, &e);
  EXPECT_EQ(with.torques.head(6), VecX::Zero(6));
  EXPECT_LT((with.torques.tail(model.n_dof() - 6) -
             (with.task + with.posture + with.damping).tail(model.n_dof() - 6))
                .norm(),
            1e-12);
  ASSERT_TRUE(with.balance.has_value());
  EXPECT_NEAR(with.balance->delta, balance_distance(e, com_position(model, poses)), 1e-14);
  const ControlOutput without = control_step(model, state, s, nullptr);
  EXPECT_FALSE(without.balance.has_value());
  EXPECT_TRUE(without.task_damping.size() == 0);
}

TEST(PostureEnergy, HalfKpErrorSquared) {
  AvatarModel model = testing::three_link_chain();
  PostureGains g;
  g.q_ref = VecX::Zero(model.n_q());
  g.kp = Vec3(10, 20, 30);
  g.kd = VecX::Zero(3);
  const VecX q = Vec3(0.1, -0.2, 0.3);
  EXPECT_NEAR(posture_energy(model, q, g), 0.5 * (10 * 0.01 + 20 * 0.04 + 30 * 0.09), 1e-12);
}

TEST(Retarget, ScalesAboutTheRoot) {
  Morphology actor{1.75, {{"arm", 1.0}}};
  Morphology avatar{0.6, {{"arm", 0.4}}};
  TaskTarget t;
  t.task_frame = "hand";
  t.desired_position = Vec3(1.0, 0.25, 1.45);
  const auto out = retarget_targets({t}, actor, avatar, {{"hand", "arm"}});
  EXPECT_LT((out[0].desired_position - Vec3(0.4, 0.1, 0.6 - 0.4 * 0.3)).norm(), 1e-12);
  const auto same = retarget_targets({t}, actor, actor, {{"hand", "arm"}});
  EXPECT_EQ(same[0].desired_position, t.desired_position);
  EXPECT_THROW(retarget_targets({t}, actor, avatar, {}), ConfigError);
  EXPECT_THROW(retarget_targets({t}, actor, Morphology{0.6, {}}, {{"hand", "arm"}}), ConfigError);
}

}  // namespace
}  // namespace balsim
