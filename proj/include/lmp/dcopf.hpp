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

#include "lmp/grid.hpp"

#include <memory>
#include <optional>
#include <utility>
#include <vector>

namespace lmp {

/// One DC-OPF market clearing:
///
///   min  sum_i a_i g_i^2 + b_i g_i + c_i
///   s.t. 1'(g - d) = 0                       : lambda
///        g_min <= g <= g_max                 : tau-, tau+
///        f_min <= T (G g - d) <= f_max       : mu-, mu+
///
/// where G maps generators to their buses.
struct OpfInstance {
  std::shared_ptr<const GridMatrices> matrices;
  std::vector<GeneratorBid> bids;
  VectorXd demand;                           // n, MW
  std::optional<VectorXd> gen_caps_override;  // per-generator g_max
  /// Permits a == 0 (zero-cost renewables). Ties among zero-cost
  /// generators go to the lowest generator id.
  bool allow_zero_cost = false;

  VectorXd gen_max() const;
  VectorXd gen_min() const;
  int num_generators() const { return static_cast<int>(bids.size()); }
};

/// Inequality constraint numbering shared by binding sets and regimes, with
/// m lines and G generators:
///   [0, m)          line upper   (mu+)
///   [m, 2m)         line lower   (mu-)
///   [2m, 2m+G)      gen upper    (tau+)
///   [2m+G, 2m+2G)   gen lower    (tau-)
struct ConstraintIndex {
  int m = 0, G = 0;
  int line_upper(int l) const { return l; }
  int line_lower(int l) const { return m + l; }
  int gen_upper(int i) const { return 2 * m + i; }
  int gen_lower(int i) const { return 2 * m + G + i; }
  int size() const { return 2 * m + 2 * G; }
};

struct OpfSolution {
  VectorXd dispatch;  // per generator, MW
  double lambda = 0.0;
  VectorXd mu_lower, mu_upper;    // m
  VectorXd tau_lower, tau_upper;  // G
  VectorXd lmp;                   // n
  double mec = 0.0;
  VectorXd mcc;                // n, zero at the reference bus
  VectorXd congestion_vector;  // s = A' D mu, n-1
  VectorXd line_flows;         // m
  std::vector<int> binding_set;  // active inequalities, sorted
  double objective = 0.0;
  int iterations = 0;

  bool degenerate = false;            // weakly active constraint remained
  bool cost_perturbed = false;        // degeneracy resolution re-solved with perturbed b
  std::vector<int> weakly_active;     // active with multiplier < 1e-9
  std::vector<int> working_set;       // final active-set working set

  /// mu = mu- - mu+, the sign convention of LMP = lambda 1 + T' mu.
  VectorXd mu() const { return mu_lower - mu_upper; }
};

/// Thrown when line limits cannot be met (or demand is outside total
/// generation range). `violated` lists constraint indices per ConstraintIndex.
struct OpfInfeasible : InfeasibleError {
  OpfInfeasible(const std::string& w, std::vector<int> v) : InfeasibleError(w), violated(std::move(v)) {}
  std::vector<int> violated;
};

struct OpfOptions {
  double active_tol = 1e-7;        // relative slack tolerance for activity
  double weak_multiplier = 1e-9;   // below this an active constraint is weakly active
  double perturbation = 1e-7;      // scale of the deterministic b perturbation
  std::uint64_t perturbation_seed = 0x6c6d70ULL;
};

OpfSolution solve(const OpfInstance& inst, const OpfOptions& opt = {});

/// (mec, mcc) with mec = lambda and mcc = T' mu.
std::pair<double, VectorXd> decompose_lmp(const OpfSolution& sol, const GridMatrices& mats);

/// s = A' D mu; B^{-1} s equals mcc on the non-reference buses.
VectorXd congestion_vector(const OpfSolution& sol, const GridMatrices& mats);

/// Scaled KKT residuals; all four should be ~0 at an optimum.
struct KktResiduals {
  double stationarity = 0.0;
  double primal = 0.0;
  double dual = 0.0;
  double complementarity = 0.0;
  double max() const { return std::max({stationarity, primal, dual, complementarity}); }
};
KktResiduals kkt_residuals(const OpfInstance& inst, const OpfSolution& sol);

/// Lagrangian dual function evaluated at the solution's multipliers (needs
/// a > 0 for every generator so the inner minimisation is finite).
double dual_objective(const OpfInstance& inst, const OpfSolution& sol);

/// Pricing regime: the binding set and, when non-degenerate, LMP and
/// dispatch as affine functions of theta = [demand (n); gen caps (G)].
struct PricingRegime {
  std::vector<int> binding_set;
  bool degenerate = false;
  struct Affine {
    VectorXd intercept;
    MatrixXd sensitivity;
    VectorXd operator()(const VectorXd& theta) const { return intercept + sensitivity * theta; }
  };
  std::optional<Affine> lmp;
  std::optional<Affine> dispatch;
};

/// theta = [demand; gen caps] of an instance.
VectorXd parameter_vector(const OpfInstance& inst);

PricingRegime extract_regime(const OpfInstance& inst, const OpfSolution& sol);

}  // namespace lmp
