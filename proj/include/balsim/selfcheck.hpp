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

// Runtime self-tests behind `balance_sim check`: Jacobians against central
// differences on the scenario's avatar, and the LCP solver against the
// enumeration oracle.

#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "balsim/balance.hpp"
#include "balsim/lcp.hpp"

namespace balsim {

struct CheckResult {
  std::string name;
  bool passed = false;
  double worst = 0.0;  // largest error seen
  double tolerance = 0.0;
  int cases = 0;
};

namespace selfcheck {

inline VecX sample_configuration(const AvatarModel& model, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  VecX q = model.neutral_configuration();
  for (const Joint& j : model.joints()) {
    switch (j.kind) {
      case JointKind::fixed: break;
      case JointKind::revolute: {
        const double lo = std::isfinite(j.lower) ? j.lower : -kPi;
        const double hi = std::isfinite(j.upper) ? j.upper : kPi;
        q[j.q_offset] = lo + 0.5 * (hi - lo) * (u(rng) + 1.0);
        break;
      }
      case JointKind::spherical:
        detail::write_quat(q, j.q_offset, Quat(u(rng), u(rng), u(rng), u(rng)).normalized());
        break;
      case JointKind::free6:
        q.segment<3>(j.q_offset) = Vec3(u(rng), u(rng), 1.0 + u(rng));
        detail::write_quat(q, j.q_offset + 3,
                           Quat(u(rng), u(rng), u(rng), u(rng)).normalized());
        break;
    }
  }
  return q;
}

inline double rel_err(const MatX& a, const MatX& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff());
}

inline MatX central_difference(const AvatarModel& model, const VecX& q,
                               const std::function<MatX(const VecX&)>& f, double eps) {
  const int n = model.n_dof();
  MatX out;
  for (int k = 0; k < n; ++k) {
    VecX e = VecX::Zero(n);
    e[k] = 1.0;
    const MatX col = (f(integrate(model, q, e, eps)) - f(integrate(model, q, e, -eps))) / (2 * eps);
    if (k == 0) out.resize(col.rows(), n);
    out.col(k) = col;
  }
  return out;
}

}  // namespace selfcheck

// Body point, CoM and balance Jacobians over `configs` random configurations.
inline std::vector<CheckResult> check_jacobians(const AvatarModel& model,
                                                std::uint64_t seed, int configs = 100,
                                                double tol = 1e-5) {
  using namespace selfcheck;
  std::mt19937_64 rng(seed);
  CheckResult body{"body_jacobian", true, 0.0, tol, 0};
  CheckResult com{"com_jacobian", true, 0.0, tol, 0};
  CheckResult bal{"balance_jacobian", true, 0.0, tol, 0};
  const double eps = 1e-6;
  const SupportEllipse ellipse = make_ellipse(Vec3(0.05, -0.02, 0.0), 0.12, 0.2, 0.3);
  for (int c = 0; c < configs; ++c) {
    const VecX q = sample_configuration(model, rng);
    for (int s = 0; s < model.num_segments(); ++s) {
      const Vec3 local = model.segment(s).local_com;
      const MatX analytic = body_jacobian(model, q, s, local);
      const MatX numeric = central_difference(
          model, q,
          [&](const VecX& x) -> MatX {
            const Transform t = forward_kinematics(model, x)[s];
            const Mat3 rot = t.linear();
            MatX v(12, 1);
            v.topRows(9) = Eigen::Map<const VecX>(rot.data(), 9);
            v.bottomRows(3) = t * local;
            return v;
          },
          eps);
      // Angular rows from dR R^T = [w]x.
      const Mat3 r = forward_kinematics(model, q)[s].linear();
      MatX fd(6, model.n_dof());
      for (int k = 0; k < model.n_dof(); ++k) {
        const Mat3 dr = Eigen::Map<const Mat3>(numeric.col(k).data());
        const Mat3 w = dr * r.transpose();
        fd.block<3, 1>(0, k) = Vec3(w(2, 1) - w(1, 2), w(0, 2) - w(2, 0), w(1, 0) - w(0, 1)) / 2.0;
        fd.block<3, 1>(3, k) = numeric.block<3, 1>(9, k);
      }
      body.worst = std::max(body.worst, rel_err(analytic, fd));
      ++body.cases;
    }
    com.worst = std::max(
        com.worst,
        rel_err(com_jacobian(model, q),
                central_difference(model, q, [&](const VecX& x) -> MatX { return com_position(model, x); }, eps)));
    ++com.cases;
    bal.worst = std::max(
        bal.worst,
        rel_err(balance_jacobian(model, q, ellipse),
                central_difference(
                    model, q,
                    [&](const VecX& x) -> MatX {
                      MatX v(1, 1);
                      v(0, 0) = balance_distance(ellipse, com_position(model, x));
                      return v;
                    },
                    eps)));
    ++bal.cases;
  }
  for (CheckResult* r : {&body, &com, &bal}) r->passed = r->worst < tol;
  return {body, com, bal};
}

// solve_lcp against the enumeration oracle on random SPD problems, k <= 8.
inline std::vector<CheckResult> check_lcp(std::uint64_t seed, int problems = 1000,
                                          double tol = 1e-8) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n;
  CheckResult agree{"lcp_oracle_agreement", true, 0.0, tol, 0};
  CheckResult resid{"lcp_residual", true, 0.0, tol, 0};
  for (int i = 0; i < problems; ++i) {
    const int k = 1 + i % 8;
    MatX a(k, k);
    for (int e = 0; e < a.size(); ++e) a.data()[e] = n(rng);
    VecX q(k);
    for (int e = 0; e < k; ++e) q[e] = n(rng);
    const LcpProblem p{a.transpose() * a + 0.1 * MatX::Identity(k, k), q};
    const LcpSolution s = solve_lcp(p);
    const LcpSolution o = enumerate_lcp_oracle(p);
    const double diff = (s.status == LcpStatus::solved && o.status == LcpStatus::solved)
                            ? (s.z - o.z).cwiseAbs().maxCoeff()
                            : kInf;
    agree.worst = std::max(agree.worst, diff);
    resid.worst = std::max(resid.worst, complementarity_residual(p, s.z));
    ++agree.cases;
    ++resid.cases;
  }
  agree.passed = agree.worst <= tol;
  resid.passed = resid.worst <= tol;
  return {agree, resid};
}

}  // namespace balsim
