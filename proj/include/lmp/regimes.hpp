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

#include <cstdint>
#include <vector>

namespace lmp {

struct PcaModel {
  VectorXd mean;
  MatrixXd components;               // d x n_components, orthonormal columns
  VectorXd explained_variance_ratio;  // all retained-rank directions, non-increasing
  VectorXd explained_variance;
  int rank = 0;
  bool rank_deficient = false;

  int n_components() const { return static_cast<int>(components.cols()); }
};

/// Rows of X are samples. Keeps the fewest leading components whose
/// cumulative explained variance reaches `variance_target`.
PcaModel fit_pca(const MatrixXd& X, double variance_target = 0.98);

/// Identity projection of dimension d (PCA disabled).
PcaModel identity_pca(Index d);

MatrixXd project(const PcaModel& pca, const MatrixXd& X);
VectorXd project(const PcaModel& pca, const VectorXd& x);
MatrixXd reconstruct(const PcaModel& pca, const MatrixXd& Z);

struct KMeansModel {
  MatrixXd centroids;  // k x d
  double inertia = 0.0;
  std::vector<int> labels;
  int iterations = 0;
  int restart = 0;                      // index of the winning restart
  std::vector<double> inertia_history;  // per Lloyd iteration, winning restart

  int k() const { return static_cast<int>(centroids.rows()); }
};

/// Nearest row of `centroids`; ties go to the lowest index.
int nearest_centroid(const MatrixXd& centroids, const VectorRef& p);

/// Number of distinct rows (exact comparison).
int count_distinct_rows(const MatrixXd& X);

/// k-means++ seeding, Lloyd iterations to an assignment fixpoint or
/// `max_iterations`; best restart by inertia, then lowest restart index.
KMeansModel fit_kmeans(const MatrixXd& points, int k, std::uint64_t seed, int n_restarts = 10,
                       int max_iterations = 300);

struct ElbowResult {
  int k = 1;
  std::vector<int> ks;
  std::vector<double> inertia;  // for ks
  bool flat = false;
};

/// Elbow by the largest second difference I(k-1) - 2 I(k) + I(k+1) over
/// [k_lo, k_hi]. Inertia beyond the number of distinct points is zero.
ElbowResult elbow_select(const MatrixXd& points, int k_lo, int k_hi, std::uint64_t seed,
                         int n_restarts = 10);

struct RegimeOptions {
  bool use_pca = true;
  double variance_target = 0.98;
  int k = 0;  // 0 selects by elbow
  int k_lo = 2, k_hi = 10;
  int n_restarts = 10;
  bool hour_of_day = false;  // 24 regimes keyed by hour
};

struct MixRegimeModel {
  PcaModel pca;
  KMeansModel kmeans;
  bool hour_of_day = false;

  int n_regimes() const { return hour_of_day ? 24 : kmeans.k(); }
};

/// Rows of M are M-vectors; `hours` is only consulted for hour-of-day mode.
MixRegimeModel fit_mix_regimes(const MatrixXd& M, const std::vector<int>& hours,
                               const RegimeOptions& opt, std::uint64_t seed);

int assign_regime(const MixRegimeModel& model, const VectorRef& m, int hour = -1);

}  // namespace lmp
