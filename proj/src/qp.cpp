/*
 * Copyright 2026 The lmpcast Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "lmp/qp.hpp"

#include <algorithm>
#include <limits>

namespace lmp::qp {

namespace {

MatrixXd active_rows(const Problem& p, const std::vector<int>& working) {
  const Index ne = p.Aeq.rows();
  MatrixXd C(ne + static_cast<Index>(working.size()), p.dim());
  if (ne > 0) C.topRows(ne) = p.Aeq;
  for (std::size_t k = 0; k < working.size(); ++k) C.row(ne + k) = p.Ain.row(working[k]);
  return C;
}

// Orthonormal basis of the null space of C.
MatrixXd null_space(const MatrixXd& C, Index n) {
  if (C.rows() == 0) return MatrixXd::Identity(n, n);
  Eigen::JacobiSVD<MatrixXd> svd(C, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  const double tol = 1e-11 * std::max(1.0, sv.size() ? sv(0) : 0.0);
  Index rank = 0;
  for (Index i = 0; i < sv.size(); ++i)
    if (sv(i) > tol) ++rank;
  return svd.matrixV().rightCols(n - rank);
}

}  // namespace

Result solve(const Problem& p, const VectorXd& x0, const Options& opt) {
  const Index n = p.dim();
  const Index mi = p.Ain.rows();
  const Index ne = p.Aeq.rows();
  const int max_it = opt.max_iterations > 0 ? opt.max_iterations
                                            : static_cast<int>(50 * (n + mi) + 100);
  const int bland_after = static_cast<int>(n + mi + 10);

  Result r;
  r.x = x0;
  std::vector<int> working;
  std::vector<char> in_w(mi, 0);

  for (int it = 0; it < max_it; ++it) {
    r.iterations = it + 1;
    const VectorXd grad = p.H * r.x + p.c;
    const MatrixXd C = active_rows(p, working);
    const MatrixXd Z = null_space(C, n);

    VectorXd step = VectorXd::Zero(n);
    bool zero_curvature = false;
    if (Z.cols() > 0) {
      const MatrixXd Hr = Z.transpose() * p.H * Z;
      const VectorXd gr = Z.transpose() * grad;
      Eigen::SelfAdjointEigenSolver<MatrixXd> es(Hr);
      const VectorXd& lam = es.eigenvalues();
      const MatrixXd& Q = es.eigenvectors();
      const double lmax = lam.size() ? std::max(0.0, lam.maxCoeff()) : 0.0;
      const double thr = 1e-10 * lmax;
      VectorXd qg = Q.transpose() * gr;
      VectorXd null_part = VectorXd::Zero(qg.size());
      VectorXd newton = VectorXd::Zero(qg.size());
      for (Index i = 0; i < lam.size(); ++i) {
        if (lam(i) > thr && lam(i) > 0.0)
          newton(i) = -qg(i) / lam(i);
        else
          null_part(i) = -qg(i);
      }
      if (null_part.norm() > 1e-11 * std::max(1.0, grad.norm())) {
        step = Z * (Q * null_part);
        zero_curvature = true;
      } else {
        step = Z * (Q * newton);
      }
    }

    const double xscale = 1.0 + r.x.lpNorm<Eigen::Infinity>();
    if (!zero_curvature && step.lpNorm<Eigen::Infinity>() <= opt.step_tol * xscale) {
      // Stationary on the working set: check multiplier signs.
      VectorXd nu = VectorXd::Zero(C.rows());
      if (C.rows() > 0) nu = C.transpose().completeOrthogonalDecomposition().solve(-grad);
      int drop = -1;
      double most_negative = -opt.multiplier_tol * std::max(1.0, grad.lpNorm<Eigen::Infinity>());
      const bool bland = it >= bland_after;
      for (std::size_t k = 0; k < working.size(); ++k) {
        const double z = nu(ne + k);
        if (bland) {
          if (z < most_negative && (drop < 0 || working[k] < working[drop])) drop = static_cast<int>(k);
        } else if (z < most_negative) {
          most_negative = z;
          drop = static_cast<int>(k);
        }
      }
      if (drop < 0) {
        r.y = nu.head(ne);
        r.z = VectorXd::Zero(mi);
        for (std::size_t k = 0; k < working.size(); ++k) r.z(working[k]) = std::max(0.0, nu(ne + k));
        r.working = working;
        std::sort(r.working.begin(), r.working.end());
        return r;
      }
      in_w[working[drop]] = 0;
      working.erase(working.begin() + drop);
      continue;
    }

    double alpha = zero_curvature ? std::numeric_limits<double>::infinity() : 1.0;
    int block = -1;
    const double pnorm = step.norm();
    for (Index i = 0; i < mi; ++i) {
      if (in_w[i]) continue;
      const double ap = p.Ain.row(i).dot(step);
      if (ap <= 1e-13 * p.Ain.row(i).norm() * pnorm) continue;
      const double slack = std::max(0.0, p.bin(i) - p.Ain.row(i).dot(r.x));
      const double ratio = slack / ap;
      if (ratio < alpha) {
        alpha = ratio;
        block = static_cast<int>(i);
      }
    }
    if (!std::isfinite(alpha)) throw NumericalError("QP unbounded along a zero-curvature direction");
    r.x += alpha * step;
    if (block >= 0) {
      working.push_back(block);
      in_w[block] = 1;
    }
  }
  throw NumericalError("active-set QP hit its iteration limit (" + std::to_string(max_it) + ")");
}

FeasibilityResult find_feasible(const Problem& p, const VectorXd& x0, const std::vector<bool>& soft,
                                double tol) {
  const Index n = p.dim();
  const Index mi = p.Ain.rows();
  FeasibilityResult out;

  double t0 = 0.0;
  for (Index i = 0; i < mi; ++i)
    if (soft[i]) t0 = std::max(t0, p.Ain.row(i).dot(x0) - p.bin(i));
  const double scale = 1.0 + (mi ? p.bin.lpNorm<Eigen::Infinity>() : 0.0);
  if (t0 <= tol * scale) {
    out.feasible = true;
    out.x = x0;
    return out;
  }

  Problem q;
  q.H = MatrixXd::Zero(n + 1, n + 1);
  q.c = VectorXd::Zero(n + 1);
  q.c(n) = 1.0;
  q.Aeq = MatrixXd::Zero(p.Aeq.rows(), n + 1);
  q.Aeq.leftCols(n) = p.Aeq;
  q.beq = p.beq;
  q.Ain = MatrixXd::Zero(mi + 1, n + 1);
  q.Ain.topLeftCorner(mi, n) = p.Ain;
  for (Index i = 0; i < mi; ++i)
    if (soft[i]) q.Ain(i, n) = -1.0;
  q.Ain(mi, n) = -1.0;
  q.bin.resize(mi + 1);
  q.bin.head(mi) = p.bin;
  q.bin(mi) = 0.0;

  VectorXd start(n + 1);
  start.head(n) = x0;
  start(n) = t0;
  const Result r = solve(q, start);
  out.x = r.x.head(n);
  out.max_violation = r.x(n);
  out.feasible = out.max_violation <= tol * scale;
  if (!out.feasible)
    for (Index i = 0; i < mi; ++i)
      if (soft[i] && r.z(i) > 0.0) out.violated.push_back(static_cast<int>(i));
  return out;
}

}  // namespace lmp::qp
