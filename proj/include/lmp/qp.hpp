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

#pragma once

#include "lmp/types.hpp"

#include <vector>

namespace lmp::qp {

/// min 1/2 x'Hx + c'x  s.t.  Aeq x = beq,  Ain x <= bin.
/// H must be symmetric positive semidefinite.
struct Problem {
  MatrixXd H;
  VectorXd c;
  MatrixXd Aeq;
  VectorXd beq;
  MatrixXd Ain;
  VectorXd bin;

  Index dim() const { return c.size(); }
};

/// Multipliers follow grad + Aeq'y + Ain'z = 0 with z >= 0.
struct Result {
  VectorXd x;
  VectorXd y;                // equality multipliers
  VectorXd z;                // inequality multipliers, zero off the working set
  std::vector<int> working;  // inequality indices in the final working set, sorted
  int iterations = 0;
};

struct Options {
  int max_iterations = 0;  // 0 -> 50 * (dim + #inequalities)
  double step_tol = 1e-12;
  double multiplier_tol = 1e-10;
};

/// Primal active-set method started from a feasible point. Handles a
/// semidefinite reduced Hessian by stepping along zero-curvature descent
/// directions to the nearest blocking constraint, so LPs are covered too.
/// Degenerate vertices fall back to Bland's rule after dim+#ineq iterations.
///
/// Throws NumericalError if the iteration limit is hit or the problem is
/// unbounded along a zero-curvature direction.
Result solve(const Problem& p, const VectorXd& x0, const Options& opt = {});

struct FeasibilityResult {
  bool feasible = false;
  VectorXd x;
  double max_violation = 0.0;
  std::vector<int> violated;  // soft inequalities carrying positive phase-1 multipliers
};

/// Phase 1: minimises the largest violation t of the inequalities flagged
/// in `soft` (a_i x - t <= b_i), keeping equalities and the remaining
/// inequalities hard. x0 must satisfy the hard constraints.
FeasibilityResult find_feasible(const Problem& p, const VectorXd& x0, const std::vector<bool>& soft,
                                double tol = 1e-9);

}  // namespace lmp::qp
