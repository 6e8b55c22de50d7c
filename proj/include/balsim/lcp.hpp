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

// Linear complementarity problems
//
//   find z such that  z >= 0,  w = M z + q_hat >= 0,  z^T w = 0.
//
// Two solvers sit behind solve_lcp(): projected Gauss-Seidel, sharpened by an
// exact solve on the active set it identifies, and Lemke's complementary
// pivoting with a lexicographic ratio test. enumerate_lcp_oracle() tries all
// 2^k active sets and is meant for testing only.

#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include <Eigen/LU>
#include <Eigen/QR>

#include "balsim/common.hpp"

namespace balsim {

struct LcpProblem {
  MatX M;
  VecX q_hat;

  int size() const { return static_cast<int>(q_hat.size()); }

  void validate() const {
    if (M.rows() != M.cols())
      throw ArgumentError("LCP matrix must be square");
    if (M.rows() != q_hat.size())
      throw ArgumentError("LCP q_hat has " + std::to_string(q_hat.size()) +
                          " entries, matrix is " + std::to_string(M.rows()) +
                          "x" + std::to_string(M.cols()));
    if (!M.allFinite() || !q_hat.allFinite())
      throw ArgumentError("LCP data is not finite");
  }
};

enum class LcpStatus { solved, infeasible, iteration_limit };
enum class LcpMethod { automatic, pgs, lemke };

inline const char* to_string(LcpStatus s) {
  switch (s) {
    case LcpStatus::solved: return "solved";
    case LcpStatus::infeasible: return "infeasible";
    case LcpStatus::iteration_limit: return "iteration_limit";
  }
  return "?";
}

struct LcpOptions {
  int max_iter = 2000;  // PGS sweeps; also the Lemke pivot budget
  double tol = 1e-8;
  LcpMethod method = LcpMethod::automatic;
  int polish_interval = 25;
  // Optional initial guess for PGS (ignored if its size does not match).
  VecX warm_start;
};

struct LcpSolution {
  VecX z;
  VecX omega;
  LcpStatus status = LcpStatus::iteration_limit;
  double residual = kInf;
  int iterations = 0;
  LcpMethod method = LcpMethod::automatic;
};

// max(|min(z,0)|_inf, |min(w,0)|_inf, sum_i |z_i w_i|) with w = M z + q_hat.
inline double complementarity_residual(const LcpProblem& p, const VecX& z) {
  if (z.size() != p.size())
    throw ArgumentError("residual: z has wrong dimension");
  if (p.size() == 0) return 0.0;
  const VecX w = p.M * z + p.q_hat;
  const double neg_z = (-z).cwiseMax(0.0).maxCoeff();
  const double neg_w = (-w).cwiseMax(0.0).maxCoeff();
  const double comp = z.cwiseProduct(w).cwiseAbs().sum();
  return std::max({neg_z, neg_w, comp});
}

namespace detail {

inline LcpSolution finish(const LcpProblem& p, VecX z, LcpStatus status,
                          int iterations, LcpMethod method, double tol) {
  LcpSolution s;
  s.z = std::move(z);
  s.omega = p.M * s.z + p.q_hat;
  s.residual = complementarity_residual(p, s.z);
  s.iterations = iterations;
  s.method = method;
  s.status = status;
  if (status == LcpStatus::solved && !(s.residual <= tol))
    s.status = LcpStatus::iteration_limit;
  return s;
}

// Solves the principal subsystem M_AA z_A = -q_A for the index set `active`
// (least-squares minimum-norm if singular) and returns the full z, or an empty
// vector if the result is not a valid LCP solution within `tol`.
inline VecX polish(const LcpProblem& p, const std::vector<int>& active,
                   double tol) {
  const int k = p.size();
  const int na = static_cast<int>(active.size());
  VecX z = VecX::Zero(k);
  if (na > 0) {
    MatX maa(na, na);
    VecX qa(na);
    for (int r = 0; r < na; ++r) {
      qa[r] = p.q_hat[active[r]];
      for (int c = 0; c < na; ++c) maa(r, c) = p.M(active[r], active[c]);
    }
    Eigen::CompleteOrthogonalDecomposition<MatX> cod(maa);
    const VecX za = cod.solve(-qa);
    if (!za.allFinite()) return {};
    for (int r = 0; r < na; ++r) z[active[r]] = std::max(0.0, za[r]);
    for (int r = 0; r < na; ++r)
      if (za[r] < -tol) return {};
  }
  if (complementarity_residual(p, z) > tol) return {};
  return z;
}

inline std::vector<int> active_set(const VecX& z, const VecX& w) {
  std::vector<int> a;
  for (int i = 0; i < z.size(); ++i)
    if (z[i] > w[i]) a.push_back(i);
  return a;
}

}  // namespace detail

inline LcpSolution solve_lcp_pgs(const LcpProblem& p,
                                 const LcpOptions& opts = {}) {
  p.validate();
  const int k = p.size();
  VecX z = VecX::Zero(k);
  if (opts.warm_start.size() == k) z = opts.warm_start.cwiseMax(0.0);
  if (k == 0) return detail::finish(p, z, LcpStatus::solved, 0, LcpMethod::pgs, opts.tol);
  if (p.q_hat.minCoeff() >= 0.0 && opts.warm_start.size() != k)
    return detail::finish(p, z, LcpStatus::solved, 0, LcpMethod::pgs, opts.tol);

  const int interval = std::max(1, opts.polish_interval);
  for (int sweep = 1; sweep <= opts.max_iter; ++sweep) {
    for (int i = 0; i < k; ++i) {
      const double mii = p.M(i, i);
      const double wi = p.M.row(i).dot(z) + p.q_hat[i];
      if (mii > 1e-300) {
        z[i] = std::max(0.0, z[i] - wi / mii);
      } else {
        z[i] = 0.0;
      }
    }
    const bool check = (sweep % 10 == 0) || sweep == opts.max_iter;
    const bool try_polish = (sweep % interval == 0);
    if (!check && !try_polish) continue;
    const VecX w = p.M * z + p.q_hat;
    if (try_polish) {
      VecX zp = detail::polish(p, detail::active_set(z, w), opts.tol);
      if (zp.size() == k)
        return detail::finish(p, zp, LcpStatus::solved, sweep, LcpMethod::pgs,
                              opts.tol);
    }
    if (check && complementarity_residual(p, z) <= opts.tol) {
      VecX zp = detail::polish(p, detail::active_set(z, w), opts.tol);
      if (zp.size() == k &&
          complementarity_residual(p, zp) <= complementarity_residual(p, z))
        z = zp;
      return detail::finish(p, z, LcpStatus::solved, sweep, LcpMethod::pgs,
                            opts.tol);
    }
  }
  return detail::finish(p, z, LcpStatus::iteration_limit, opts.max_iter,
                        LcpMethod::pgs, opts.tol);
}

// Lemke's complementary pivoting on  w - M z - e z0 = q_hat,  with a
// lexicographic ratio test (degenerate-safe). The basis inverse is updated by
// Gauss-Jordan pivots and refactored periodically.
inline LcpSolution solve_lcp_lemke(const LcpProblem& p,
                                   const LcpOptions& opts = {}) {
  p.validate();
  const int k = p.size();
  if (k == 0 || p.q_hat.minCoeff() >= 0.0)
    return detail::finish(p, VecX::Zero(k), LcpStatus::solved, 0,
                          LcpMethod::lemke, opts.tol);

  // Variable ids: [0,k) w, [k,2k) z, 2k z0.
  const int z0 = 2 * k;
  auto column = [&](int var) -> VecX {
    if (var < k) return VecX::Unit(k, var);
    if (var < 2 * k) return -p.M.col(var - k);
    return -VecX::Ones(k);
  };
  std::vector<int> basic(k);
  for (int i = 0; i < k; ++i) basic[i] = i;
  MatX binv = MatX::Identity(k, k);
  VecX x = p.q_hat;

  auto refactor = [&]() {
    MatX b(k, k);
    for (int i = 0; i < k; ++i) b.col(i) = column(basic[i]);
    Eigen::PartialPivLU<MatX> lu(b);
    binv = lu.inverse();
    x = binv * p.q_hat;
  };

  const double piv_tol = 1e-11;
  // Lexicographic minimum ratio over rows with d_i > piv_tol. Returns -1 if
  // there is none (ray).
  auto ratio_test = [&](const VecX& d) -> int {
    std::vector<int> cand;
    for (int i = 0; i < k; ++i)
      if (d[i] > piv_tol) cand.push_back(i);
    if (cand.empty()) return -1;
    // Column 0 is x, then columns of binv.
    for (int col = -1; col < k && cand.size() > 1; ++col) {
      double best = kInf;
      for (int i : cand) {
        const double v = (col < 0 ? x[i] : binv(i, col)) / d[i];
        best = std::min(best, v);
      }
      const double slack = 1e-12 * (1.0 + std::abs(best));
      std::vector<int> keep;
      for (int i : cand) {
        const double v = (col < 0 ? x[i] : binv(i, col)) / d[i];
        if (v <= best + slack) keep.push_back(i);
      }
      // z0 leaving terminates the method; prefer it among ties.
      for (int i : keep)
        if (basic[i] == z0) return i;
      cand = std::move(keep);
    }
    return cand.front();
  };

  auto pivot = [&](int r, int entering, const VecX& d) {
    const double dr = d[r];
    binv.row(r) /= dr;
    x[r] /= dr;
    for (int i = 0; i < k; ++i) {
      if (i == r || d[i] == 0.0) continue;
      binv.row(i) -= d[i] * binv.row(r);
      x[i] -= d[i] * x[r];
    }
    basic[r] = entering;
  };

  // Initial pivot: z0 enters, the row with the lexicographically most
  // negative q_hat leaves.
  int leaving = 0;
  {
    VecX d = -VecX::Ones(k);  // binv = I
    int r = 0;
    for (int i = 1; i < k; ++i) {
      if (x[i] < x[r] - 1e-15 * (1.0 + std::abs(x[r]))) {
        r = i;
      } else if (std::abs(x[i] - x[r]) <= 1e-15 * (1.0 + std::abs(x[r]))) {
        r = i;  // identity rows: larger index is lexicographically smaller
      }
    }
    leaving = basic[r];
    pivot(r, z0, d);
  }

  auto extract = [&]() {
    VecX z = VecX::Zero(k);
    for (int i = 0; i < k; ++i)
      if (basic[i] >= k && basic[i] < 2 * k) z[basic[i] - k] = std::max(0.0, x[i]);
    return z;
  };

  const int budget = std::max(opts.max_iter, 20 * k);
  for (int it = 1; it <= budget; ++it) {
    const int entering = leaving < k ? leaving + k : leaving - k;
    const VecX d = binv * column(entering);
    const int r = ratio_test(d);
    if (r < 0)
      return detail::finish(p, extract(), LcpStatus::infeasible, it,
                            LcpMethod::lemke, opts.tol);
    leaving = basic[r];
    pivot(r, entering, d);
    if (it % 16 == 0) refactor();
    if (leaving == z0) {
      refactor();
      VecX z = extract();
      // Sharpen on the final complementary basis, with and without basic
      // variables sitting at zero, and on the set the iterate suggests.
      std::vector<int> basis_set, positive;
      for (int i = 0; i < k; ++i) {
        if (basic[i] < k || basic[i] >= 2 * k) continue;
        basis_set.push_back(basic[i] - k);
        if (x[i] > opts.tol) positive.push_back(basic[i] - k);
      }
      std::sort(basis_set.begin(), basis_set.end());
      std::sort(positive.begin(), positive.end());
      const VecX w = p.M * z + p.q_hat;
      for (const auto& set : {basis_set, positive, detail::active_set(z, w)}) {
        VecX zp = detail::polish(p, set, opts.tol);
        if (zp.size() == k &&
            complementarity_residual(p, zp) < complementarity_residual(p, z))
          z = zp;
      }
      return detail::finish(p, z, LcpStatus::solved, it, LcpMethod::lemke,
                            opts.tol);
    }
  }
  return detail::finish(p, extract(), LcpStatus::iteration_limit, budget,
                        LcpMethod::lemke, opts.tol);
}

// PGS first (cheap, warm-startable); Lemke if PGS does not reach `tol`.
inline LcpSolution solve_lcp(const LcpProblem& p, const LcpOptions& opts = {}) {
  switch (opts.method) {
    case LcpMethod::pgs: return solve_lcp_pgs(p, opts);
    case LcpMethod::lemke: return solve_lcp_lemke(p, opts);
    case LcpMethod::automatic: break;
  }
  LcpSolution pgs = solve_lcp_pgs(p, opts);
  if (pgs.status == LcpStatus::solved) return pgs;
  LcpSolution lemke = solve_lcp_lemke(p, opts);
  lemke.iterations += pgs.iterations;
  if (lemke.status == LcpStatus::solved || lemke.residual < pgs.residual)
    return lemke;
  return pgs;
}

// Brute force over all 2^k active sets in increasing bitmask order; the first
// set giving z_A >= 0 and w_I >= 0 wins. Testing oracle, k <= 12.
inline LcpSolution enumerate_lcp_oracle(const LcpProblem& p,
                                        double feas_tol = 1e-10) {
  p.validate();
  const int k = p.size();
  if (k > 12) throw ArgumentError("enumeration oracle limited to k <= 12");
  const double scale = 1.0 + p.M.cwiseAbs().maxCoeff() + p.q_hat.cwiseAbs().maxCoeff();
  for (unsigned mask = 0; mask < (1u << k); ++mask) {
    std::vector<int> a;
    for (int i = 0; i < k; ++i)
      if (mask & (1u << i)) a.push_back(i);
    const int na = static_cast<int>(a.size());
    VecX z = VecX::Zero(k);
    if (na > 0) {
      MatX maa(na, na);
      VecX qa(na);
      for (int r = 0; r < na; ++r) {
        qa[r] = p.q_hat[a[r]];
        for (int c = 0; c < na; ++c) maa(r, c) = p.M(a[r], a[c]);
      }
      Eigen::FullPivLU<MatX> lu(maa);
      if (!lu.isInvertible()) continue;
      const VecX za = lu.solve(-qa);
      bool ok = true;
      for (int r = 0; r < na; ++r) {
        if (za[r] < -feas_tol * scale) ok = false;
        z[a[r]] = std::max(0.0, za[r]);
      }
      if (!ok) continue;
    }
    const VecX w = p.M * z + p.q_hat;
    bool ok = true;
    for (int i = 0; i < k; ++i)
      if (!(mask & (1u << i)) && w[i] < -feas_tol * scale) ok = false;
    if (!ok) continue;
    LcpSolution s;
    s.z = z;
    s.omega = w;
    s.residual = complementarity_residual(p, z);
    s.status = LcpStatus::solved;
    s.iterations = static_cast<int>(mask) + 1;
    return s;
  }
  LcpSolution s;
  s.z = VecX::Zero(k);
  s.omega = p.q_hat;
  s.residual = complementarity_residual(p, s.z);
  s.status = LcpStatus::infeasible;
  s.iterations = 1 << k;
  return s;
}

}  // namespace balsim
