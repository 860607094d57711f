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

#include <filesystem>
#include <string>
#include <vector>

namespace lmp {

struct Bus {
  int id = 0;
  bool is_reference = false;
};

/// Flow on a line is positive in the from_bus -> to_bus direction.
struct Line {
  int id = 0;
  int from_bus = 0;
  int to_bus = 0;
  double reactance = 1.0;  // per unit, > 0
  double flow_min = 0.0;   // MW, <= 0
  double flow_max = 0.0;   // MW, >= 0
};

/// Quadratic bid C(g) = a g^2 + b g + c.
struct GeneratorBid {
  int id = 0;
  int bus = 0;
  std::string type = "conventional";
  double a = 0.0;  // $/MW^2h
  double b = 0.0;  // $/MWh
  double c = 0.0;  // $
  double g_min = 0.0;
  double g_max = 0.0;
};

struct GridSpec {
  std::vector<Bus> buses;
  std::vector<Line> lines;
  std::vector<GeneratorBid> generators;

  int n() const { return static_cast<int>(buses.size()); }
  int m() const { return static_cast<int>(lines.size()); }
  int reference_bus() const;
};

/// Topology-derived matrices of a DC network.
///
/// Reduced quantities (incidence_reduced, laplacian_reduced) drop the
/// reference bus and keep the remaining buses in increasing id order;
/// `reduced_buses` records that order. The PTDF keeps full bus order with an
/// exactly-zero column at the reference bus.
struct GridMatrices {
  int reference_bus = 0;
  std::vector<int> reduced_buses;  // reduced index -> bus id
  std::vector<int> reduced_index;  // bus id -> reduced index, -1 for reference

  MatrixXd incidence_full;     // m x n
  MatrixXd incidence_reduced;  // m x (n-1)
  VectorXd susceptance;        // diagonal of D, 1/x
  MatrixXd laplacian_reduced;  // (n-1) x (n-1), A^T D A
  MatrixXd ptdf;               // m x n
  VectorXd flow_min, flow_max;
  Eigen::LLT<MatrixXd> laplacian_factor;

  int n() const { return static_cast<int>(incidence_full.cols()); }
  int m() const { return static_cast<int>(incidence_full.rows()); }

  /// x = B^{-1} rhs using the cached Cholesky factor.
  template <class Derived>
  MatrixXd solve_laplacian(const Eigen::MatrixBase<Derived>& rhs) const {
    return laplacian_factor.solve(rhs);
  }

  /// Restrict a full n-vector to the non-reference buses.
  VectorXd reduce(const VectorXd& full) const;
  /// Expand an (n-1)-vector to full bus order, zero at the reference bus.
  VectorXd expand(const VectorXd& reduced) const;
};

/// Checks the GridSpec invariants (contiguous ids, one reference bus,
/// positive reactances, sign of flow limits, connectivity).
void validate(const GridSpec& spec);

GridMatrices build_matrices(const GridSpec& spec);

/// Line flows T * injection for a balanced nodal injection vector.
VectorXd flows(const GridMatrices& mats, const VectorXd& injection);

/// buses.csv / lines.csv / gens.csv in `dir`.
GridSpec load_grid(const std::filesystem::path& dir);
void save_grid(const GridSpec& spec, const std::filesystem::path& dir);

/// MATPOWER case30 (IEEE 30-bus) converted to the DC model: reactances,
/// rateA limits, quadratic gencost. Bus k of the case is id k-1; bus 1 is the
/// reference.
GridSpec ieee30();

/// Nominal real-power loads of case30 (Pd, MW) in bus-id order; 189.2 MW total.
VectorXd ieee30_loads();

}  // namespace lmp
