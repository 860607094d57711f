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

#include "lmp/regimes.hpp"

#include "lmp/log.hpp"
#include "lmp/rng.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <string>

namespace lmp {

PcaModel fit_pca(const MatrixXd& X, double variance_target) {
  const Index N = X.rows(), d = X.cols();
  if (d == 0) throw ValidationError("fit_pca: zero-dimensional input");
  if (N < 2 * d)
    throw ValidationError("fit_pca: need at least " + std::to_string(2 * d) + " samples, got " +
                          std::to_string(N));
  if (!(variance_target > 0.0 && variance_target <= 1.0))
    throw ValidationError("fit_pca: variance target must be in (0, 1]");

  PcaModel pca;
  pca.mean = X.colwise().mean().transpose();
  const MatrixXd Xc = X.rowwise() - pca.mean.transpose();
  Eigen::BDCSVD<MatrixXd> svd(Xc, Eigen::ComputeThinV);
  const VectorXd& s = svd.singularValues();
  const double s0 = s.size() ? s(0) : 0.0;
  int rank = 0;
  for (Index j = 0; j < s.size(); ++j)
    if (s(j) > 1e-10 * s0 && s(j) > 0.0) ++rank;
  pca.rank = rank;
  pca.rank_deficient = rank < d;

  pca.explained_variance = s.array().square() / static_cast<double>(N - 1);
  const double total = pca.explained_variance.sum();
  pca.explained_variance_ratio =
      total > 0.0 ? VectorXd(pca.explained_variance / total) : VectorXd::Zero(s.size());
  if (rank == 0) {
    warn("fit_pca: input has zero variance; no components retained");
    pca.components = MatrixXd::Zero(d, 0);
    return pca;
  }

  int keep = 0;
  double cum = 0.0;
  while (keep < rank) {
    cum += pca.explained_variance_ratio(keep++);
    if (cum >= variance_target - 1e-12) break;
  }
  if (pca.rank_deficient) warn("fit_pca: rank-deficient input (rank " + std::to_string(rank) + ")");

  pca.components = svd.matrixV().leftCols(keep);
  for (int j = 0; j < keep; ++j) {
    Index arg;
    pca.components.col(j).cwiseAbs().maxCoeff(&arg);
    if (pca.components(arg, j) < 0.0) pca.components.col(j) *= -1.0;
  }
  return pca;
}

PcaModel identity_pca(Index d) {
  PcaModel pca;
  pca.mean = VectorXd::Zero(d);
  pca.components = MatrixXd::Identity(d, d);
  pca.explained_variance_ratio = VectorXd::Constant(d, 1.0 / static_cast<double>(d));
  pca.explained_variance = VectorXd::Zero(d);
  pca.rank = static_cast<int>(d);
  return pca;
}

MatrixXd project(const PcaModel& pca, const MatrixXd& X) {
  if (X.cols() != pca.mean.size()) throw ValidationError("project: feature dimension mismatch");
  return (X.rowwise() - pca.mean.transpose()) * pca.components;
}

VectorXd project(const PcaModel& pca, const VectorXd& x) {
  if (x.size() != pca.mean.size()) throw ValidationError("project: feature dimension mismatch");
  return pca.components.transpose() * (x - pca.mean);
}

MatrixXd reconstruct(const PcaModel& pca, const MatrixXd& Z) {
  return (Z * pca.components.transpose()).rowwise() + pca.mean.transpose();
}

int nearest_centroid(const MatrixXd& centroids, const VectorRef& p) {
  int best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (Index c = 0; c < centroids.rows(); ++c) {
    const double dist = (centroids.row(c).transpose() - p).squaredNorm();
    if (dist < bd) {
      bd = dist;
      best = static_cast<int>(c);
    }
  }
  return best;
}

int count_distinct_rows(const MatrixXd& X) {
  std::vector<Index> idx(X.rows());
  std::iota(idx.begin(), idx.end(), 0);
  auto less = [&](Index a, Index b) {
    for (Index j = 0; j < X.cols(); ++j)
      if (X(a, j) != X(b, j)) return X(a, j) < X(b, j);
    return false;
  };
  std::sort(idx.begin(), idx.end(), less);
  int distinct = idx.empty() ? 0 : 1;
  for (std::size_t i = 1; i < idx.size(); ++i)
    if (less(idx[i - 1], idx[i])) ++distinct;
  return distinct;
}

namespace {

MatrixXd plus_plus_seed(const MatrixXd& P, int k, Rng& rng) {
  const Index N = P.rows();
  MatrixXd C(k, P.cols());
  C.row(0) = P.row(static_cast<Index>(rng.below(static_cast<std::uint64_t>(N))));
  VectorXd d2 = (P.rowwise() - C.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Index pick = N - 1;
    if (total > 0.0) {
      const double u = rng.uniform() * total;
      double acc = 0.0;
      for (Index i = 0; i < N; ++i) {
        acc += d2(i);
        if (acc > u) {
          pick = i;
          break;
        }
      }
    }
    C.row(c) = P.row(pick);
    d2 = d2.cwiseMin((P.rowwise() - C.row(c)).rowwise().squaredNorm());
  }
  return C;
}

KMeansModel lloyd(const MatrixXd& P, MatrixXd C, int max_iterations) {
  const Index N = P.rows();
  const int k = static_cast<int>(C.rows());
  KMeansModel m;
  m.labels.assign(N, -1);
  for (int it = 0; it < max_iterations; ++it) {
    bool changed = false;
    double inertia = 0.0;
    for (Index i = 0; i < N; ++i) {
      const int c = nearest_centroid(C, P.row(i).transpose());
      if (c != m.labels[i]) changed = true;
      m.labels[i] = c;
      inertia += (P.row(i) - C.row(c)).squaredNorm();
    }
    m.inertia_history.push_back(inertia);
    m.iterations = it + 1;
    if (!changed && it > 0) break;

    MatrixXd sum = MatrixXd::Zero(k, P.cols());
    std::vector<Index> count(k, 0);
    for (Index i = 0; i < N; ++i) {
      sum.row(m.labels[i]) += P.row(i);
      ++count[m.labels[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (count[c] > 0) {
        C.row(c) = sum.row(c) / static_cast<double>(count[c]);
        continue;
      }
      // Empty cluster: take over the point farthest from its centroid.
      Index far = 0;
      double fd = -1.0;
      for (Index i = 0; i < N; ++i) {
        const double d = (P.row(i) - C.row(m.labels[i])).squaredNorm();
        if (d > fd) {
          fd = d;
          far = i;
        }
      }
      C.row(c) = P.row(far);
      m.labels[far] = c;
    }
  }
  m.centroids = C;
  m.inertia = 0.0;
  for (Index i = 0; i < N; ++i) {
    m.labels[i] = nearest_centroid(C, P.row(i).transpose());
    m.inertia += (P.row(i) - C.row(m.labels[i])).squaredNorm();
  }
  return m;
}

}  // namespace

KMeansModel fit_kmeans(const MatrixXd& points, int k, std::uint64_t seed, int n_restarts,
                       int max_iterations) {
  if (k < 1) throw ValidationError("fit_kmeans: k must be >= 1");
  if (points.rows() == 0) throw ValidationError("fit_kmeans: no points");
  const int distinct = count_distinct_rows(points);
  if (k > distinct)
    throw ValidationError("fit_kmeans: k = " + std::to_string(k) + " exceeds " +
                          std::to_string(distinct) + " distinct points");
  KMeansModel best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(1, n_restarts); ++r) {
    Rng rng(seed, "kmeans-restart", static_cast<std::uint64_t>(r));
    KMeansModel m = lloyd(points, plus_plus_seed(points, k, rng), max_iterations);
    m.restart = r;
    if (m.inertia < best.inertia) best = std::move(m);
  }
  return best;
}

ElbowResult elbow_select(const MatrixXd& points, int k_lo, int k_hi, std::uint64_t seed,
                         int n_restarts) {
  if (k_lo < 1 || k_hi < k_lo) throw ValidationError("elbow_select: empty k range");
  const int distinct = count_distinct_rows(points);
  auto inertia_at = [&](int k) {
    if (k >= distinct) return 0.0;
    return fit_kmeans(points, k, seed, n_restarts).inertia;
  };
  const int lo = std::max(1, k_lo - 1);
  std::vector<double> I;
  for (int k = lo; k <= k_hi + 1; ++k) I.push_back(inertia_at(k));
  auto at = [&](int k) { return I[static_cast<std::size_t>(std::max(k, lo) - lo)]; };

  ElbowResult res;
  double best = -std::numeric_limits<double>::infinity();
  for (int k = k_lo; k <= k_hi; ++k) {
    res.ks.push_back(k);
    res.inertia.push_back(at(k));
    const double d2 = at(k - 1) - 2.0 * at(k) + at(k + 1);
    if (d2 > best) {
      best = d2;
      res.k = k;
    }
  }
  const double scale = *std::max_element(I.begin(), I.end());
  if (!(best > 1e-12 * scale)) {
    res.flat = true;
    res.k = k_lo;
    warn("elbow_select: inertia curve has no kink; using k = " + std::to_string(k_lo));
  }
  return res;
}

MixRegimeModel fit_mix_regimes(const MatrixXd& M, const std::vector<int>& hours,
                               const RegimeOptions& opt, std::uint64_t seed) {
  MixRegimeModel model;
  model.pca = opt.use_pca ? fit_pca(M, opt.variance_target) : identity_pca(M.cols());
  const MatrixXd Z = project(model.pca, M);
  if (opt.hour_of_day) {
    if (static_cast<Index>(hours.size()) != M.rows())
      throw ValidationError("fit_mix_regimes: hour labels do not match rows");
    model.hour_of_day = true;
    MatrixXd C = MatrixXd::Zero(24, Z.cols());
    VectorXd count = VectorXd::Zero(24);
    for (Index i = 0; i < Z.rows(); ++i) {
      C.row(hours[i]) += Z.row(i);
      count(hours[i]) += 1.0;
    }
    for (int h = 0; h < 24; ++h)
      if (count(h) > 0) C.row(h) /= count(h);
    model.kmeans.centroids = C;
    model.kmeans.labels = hours;
    return model;
  }
  int k = opt.k;
  if (k <= 0) k = elbow_select(Z, opt.k_lo, opt.k_hi, seed, opt.n_restarts).k;
  k = std::min(k, count_distinct_rows(Z));
  model.kmeans = fit_kmeans(Z, k, seed, opt.n_restarts);
  return model;
}

int assign_regime(const MixRegimeModel& model, const VectorRef& m, int hour) {
  if (m.size() != model.pca.mean.size())
    throw ValidationError("assign_regime: M-vector has dimension " + std::to_string(m.size()) +
                          ", model expects " + std::to_string(model.pca.mean.size()));
  if (model.hour_of_day) {
    if (hour < 0 || hour > 23) throw ValidationError("assign_regime: hour of day required");
    return hour;
  }
  return nearest_centroid(model.kmeans.centroids, project(model.pca, VectorXd(m)));
}

}  // namespace lmp
