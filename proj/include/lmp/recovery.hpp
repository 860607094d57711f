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

#include "lmp/timeutil.hpp"
#include "lmp/types.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace lmp {

struct AdmmParams {
  double kappa1 = 1.5;
  double kappa2 = 2.0;
  double rho = 0.8;
  double epsilon = 60.0;      // absolute stop on ||B1 Pi - S||_1
  double epsilon_rel = 2e-3;  // relative stop, times ||Pi||_1; the smaller bound applies
  double input_mean_abs = 0.03;  // Pi rescaled to this mean |entry| inside the loop; 0 keeps it
  double consensus_tol = 1e-2;   // stop also needs max |B1 - B2|, |B1 - B3| below this
  int max_iters = 5000;
  double shrink_weight = 2.0;  // soft-threshold numerator, divided by rho

  void validate() const;
};

struct RecoveredStructure {
  MatrixXd B;  // (n-1) x (n-1), B1 projected onto {psd} and {<= I}
  MatrixXd S;  // (n-1) x T
  std::vector<double> residual_history;  // ||B1 Pi - S||_1 per iteration
  int iterations = 0;
  bool converged = false;
};

/// Sparse congestion matrix and topology matrix from MCC prices by the
/// three-copy ADMM splitting:
///
///   min ||S||_1 + k1 tr(P B) - k2 log|B|  s.t.  B Pi = S,  B psd,  B <= I
///
/// with P = I - 11'. S starts at Pi (B = I). Residuals and the stopping rule
/// are in the rescaled units; S is returned in the units of Pi. Returns the
/// lowest-residual iterate when max_iters is reached. The returned B is the
/// symmetrized B1 projected onto the feasible set by project_feasible_B.
RecoveredStructure admm_recover(const MatrixXd& Pi, const AdmmParams& params = {});

/// Nearest point (Frobenius) to symmetric A in {psd} and {entry-wise <= I},
/// by Dykstra's alternating projections. Stops when the smallest eigenvalue
/// is >= -tol and no entry exceeds I by more than tol.
MatrixXd project_feasible_B(const MatrixXd& A, double tol = 1e-10, int max_iters = 100000);

/// Divides by the entry-wise maximum absolute value.
MatrixXd normalize_B(const MatrixXd& B);

/// Upper-triangle entries with |value| > threshold.
int count_links(const MatrixXd& B_hat, double threshold);
std::vector<std::pair<int, int>> links(const MatrixXd& B_hat, double threshold);

/// Percent of links in `curr` absent from `prev`; 0 when `curr` has none.
double link_diff_percent(const MatrixXd& B_prev, const MatrixXd& B_curr, double threshold);

/// S = B Pi, or B^{-1} Pi when `inverse` is set.
MatrixXd congestion_matrix(const MatrixXd& B, const MatrixXd& Pi, bool inverse = false);

struct CongestionClusters {
  MatrixXd centroids;  // k x (n-1)
  std::vector<int> labels;
  int k() const { return static_cast<int>(centroids.rows()); }
};

/// k-means over the columns of S with k from the elbow rule. A single
/// distinct column (including all-zero S) gives one regime.
CongestionClusters cluster_congestions(const MatrixXd& S, int k_lo, int k_hi, std::uint64_t seed,
                                       int n_restarts = 10);

/// Nodal price history in wide form.
struct PriceTable {
  std::vector<Timestamp> timestamps;
  std::vector<long long> node_ids;
  MatrixXd lmp;  // nodes x T
};

/// prices.csv: timestamp_iso8601, node_id, lmp_usd_per_mwh.
PriceTable read_prices(const std::filesystem::path& path);

enum class MecProxy { Mean, Median, Reference };
MecProxy parse_mec_proxy(const std::string& s);

/// MCC estimate: LMP minus a per-timestamp energy component. With
/// Reference the reference node's LMP is used. The reference node's row is
/// dropped, giving (n-1) x T.
MatrixXd mcc_from_prices(const MatrixXd& lmp, MecProxy proxy, int reference_row = 0);

/// topology.csv: node_i, node_j, weight for |B_hat_ij| > threshold.
void write_topology(const std::filesystem::path& path, const MatrixXd& B_hat, double threshold,
                    const std::vector<long long>& node_ids);

}  // namespace lmp
