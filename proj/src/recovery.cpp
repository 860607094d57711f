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

#include "lmp/recovery.hpp"

#include "lmp/csv.hpp"
#include "lmp/log.hpp"
#include "lmp/regimes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace lmp {

void AdmmParams::validate() const {
  if (!(kappa1 >= 0.0 && kappa2 > 0.0 && rho > 0.0 && epsilon > 0.0 && epsilon_rel >= 0.0 &&
        max_iters > 0 && shrink_weight >= 0.0 && input_mean_abs >= 0.0 && consensus_tol > 0.0))
    throw ValidationError("ADMM parameters must be positive");
}

RecoveredStructure admm_recover(const MatrixXd& Pi_in, const AdmmParams& prm) {
  prm.validate();
  if (Pi_in.rows() == 0 || Pi_in.cols() == 0 || !Pi_in.allFinite())
    throw ValidationError("admm_recover: price matrix must be non-empty and finite");
  const double level = Pi_in.cwiseAbs().mean();
  const double scale = prm.input_mean_abs > 0.0 && level > 0.0 ? prm.input_mean_abs / level : 1.0;
  const MatrixXd Pi = scale * Pi_in;
  const Index N = Pi.rows();
  const MatrixXd I = MatrixXd::Identity(N, N);
  const MatrixXd P = I - MatrixXd::Ones(N, N);

  const Eigen::LLT<MatrixXd> K(2.0 * I + Pi * Pi.transpose());
  if (K.info() != Eigen::Success) throw NumericalError("admm_recover: 2I + Pi Pi' not positive definite");

  MatrixXd B1 = I, B2 = I, B3 = I;
  MatrixXd S = Pi;
  MatrixXd M12 = MatrixXd::Zero(N, N), M13 = MatrixXd::Zero(N, N), M = MatrixXd::Zero(N, Pi.cols());
  const double stop = std::min(prm.epsilon, prm.epsilon_rel * Pi.cwiseAbs().sum());
  const double weight = prm.shrink_weight / prm.rho;

  RecoveredStructure best;
  double best_res = std::numeric_limits<double>::infinity();
  RecoveredStructure out;
  for (int it = 1; it <= prm.max_iters; ++it) {
    const MatrixXd rhs = B2 - M12 + B3 - M13 + (S - M) * Pi.transpose() - (prm.kappa1 / prm.rho) * P;
    B1 = K.solve(rhs.transpose()).transpose();

    B2 = (B1 + M12).cwiseMin(I);

    const MatrixXd V = B1 + M13;
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (V + V.transpose()));
    const VectorXd g = es.eigenvalues();
    const VectorXd lam = 0.5 * (g.array() + (g.array().square() + 4.0 * prm.kappa2 / prm.rho).sqrt());
    B3 = es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();

    const MatrixXd BPi = B1 * Pi;
    const MatrixXd X = BPi + M;
    S = X.unaryExpr([weight](double x) {
      const double a = std::abs(x);
      return a > weight ? x * (1.0 - weight / a) : 0.0;
    });

    M12 += prm.rho * (B1 - B2);
    M13 += prm.rho * (B1 - B3);
    M += prm.rho * (BPi - S);

    const double res = (BPi - S).cwiseAbs().sum();
    const double gap = std::max((B1 - B2).cwiseAbs().maxCoeff(), (B1 - B3).cwiseAbs().maxCoeff());
    out.residual_history.push_back(res);
    if (res < best_res) {
      best_res = res;
      best.B = B1;
      best.S = S;
      best.iterations = it;
    }
    if (res <= stop && gap <= prm.consensus_tol) {
      out.B = project_feasible_B(0.5 * (B1 + B1.transpose()));
      out.S = S / scale;
      out.iterations = it;
      out.converged = true;
      return out;
    }
  }
  out.B = project_feasible_B(0.5 * (best.B + best.B.transpose()));
  out.S = best.S / scale;
  out.iterations = prm.max_iters;
  out.converged = false;
  return out;
}

MatrixXd project_feasible_B(const MatrixXd& A, double tol, int max_iters) {
  const Index n = A.rows();
  const MatrixXd I = MatrixXd::Identity(n, n);
  auto psd = [](const MatrixXd& X) -> MatrixXd {
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (X + X.transpose()));
    return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).asDiagonal() * es.eigenvectors().transpose();
  };
  MatrixXd X = A, P = MatrixXd::Zero(n, n), Q = MatrixXd::Zero(n, n);
  for (int it = 0; it < max_iters; ++it) {
    const MatrixXd Y = psd(X + P);
    P = X + P - Y;
    X = (Y + Q).cwiseMin(I);
    Q = Y + Q - X;
    const MatrixXd Xs = 0.5 * (X + X.transpose());
    if (Eigen::SelfAdjointEigenSolver<MatrixXd>(Xs, Eigen::EigenvaluesOnly).eigenvalues().minCoeff() >= -tol) return Xs;
  }
  throw NumericalError("project_feasible_B: no convergence");
}

MatrixXd normalize_B(const MatrixXd& B) {
  const double m = B.size() ? B.cwiseAbs().maxCoeff() : 0.0;
  if (!(m > 0.0)) throw ValidationError("normalize_B: zero matrix");
  return B / m;
}

std::vector<std::pair<int, int>> links(const MatrixXd& B_hat, double threshold) {
  std::vector<std::pair<int, int>> out;
  for (Index i = 0; i < B_hat.rows(); ++i)
    for (Index j = i + 1; j < B_hat.cols(); ++j)
      if (std::abs(B_hat(i, j)) > threshold) out.emplace_back(static_cast<int>(i), static_cast<int>(j));
  return out;
}

int count_links(const MatrixXd& B_hat, double threshold) {
  return static_cast<int>(links(B_hat, threshold).size());
}

double link_diff_percent(const MatrixXd& B_prev, const MatrixXd& B_curr, double threshold) {
  if (B_prev.rows() != B_curr.rows() || B_prev.cols() != B_curr.cols())
    throw ValidationError("link_diff_percent: dimension mismatch");
  const auto curr = links(B_curr, threshold);
  if (curr.empty()) {
    warn("link_diff_percent: no links above threshold in the current matrix");
    return 0.0;
  }
  const auto prev = links(B_prev, threshold);
  int missing = 0;
  for (const auto& l : curr)
    if (!std::binary_search(prev.begin(), prev.end(), l)) ++missing;
  return 100.0 * missing / static_cast<double>(curr.size());
}

MatrixXd congestion_matrix(const MatrixXd& B, const MatrixXd& Pi, bool inverse) {
  if (B.rows() != B.cols() || B.cols() != Pi.rows())
    throw ValidationError("congestion_matrix: dimension mismatch");
  if (!inverse) return B * Pi;
  const Eigen::FullPivLU<MatrixXd> lu(B);
  if (!lu.isInvertible()) throw NumericalError("congestion_matrix: B is singular");
  return lu.solve(Pi);
}

CongestionClusters cluster_congestions(const MatrixXd& S, int k_lo, int k_hi, std::uint64_t seed,
                                       int n_restarts) {
  if (S.cols() == 0) throw ValidationError("cluster_congestions: no columns");
  const MatrixXd X = S.transpose();
  CongestionClusters c;
  const int distinct = count_distinct_rows(X);
  if (distinct <= 1 || S.cols() < 2) {
    c.centroids = X.colwise().mean();
    c.labels.assign(static_cast<std::size_t>(X.rows()), 0);
    return c;
  }
  const int hi = std::max(k_lo, std::min(k_hi, distinct));
  const int k = std::min(elbow_select(X, k_lo, hi, seed, n_restarts).k, distinct);
  auto km = fit_kmeans(X, k, seed, n_restarts);
  c.centroids = std::move(km.centroids);
  c.labels = std::move(km.labels);
  return c;
}

PriceTable read_prices(const std::filesystem::path& path) {
  const auto tab = csv::read(path, {"timestamp_iso8601", "node_id", "lmp_usd_per_mwh"});
  const auto ct = tab.column("timestamp_iso8601"), cn = tab.column("node_id"),
             cp = tab.column("lmp_usd_per_mwh");
  std::map<Timestamp, std::map<long long, double>> cells;
  std::map<long long, int> nodes;
  for (std::size_t r = 0; r < tab.rows(); ++r) {
    const long long node = tab.integer(r, cn);
    nodes.emplace(node, 0);
    auto& row = cells[parse_iso8601(tab.at(r, ct))];
    if (!row.emplace(node, tab.number(r, cp)).second)
      throw ValidationError(path.string() + ": duplicate price for node " + std::to_string(node) +
                            " at " + tab.at(r, ct));
  }
  PriceTable p;
  int idx = 0;
  for (auto& [id, i] : nodes) {
    i = idx++;
    p.node_ids.push_back(id);
  }
  p.lmp.resize(static_cast<Index>(nodes.size()), static_cast<Index>(cells.size()));
  Index t = 0;
  for (const auto& [ts, row] : cells) {
    if (row.size() != nodes.size())
      throw ValidationError(path.string() + ": missing node prices at " + format_iso8601(ts));
    p.timestamps.push_back(ts);
    for (const auto& [node, v] : row) p.lmp(nodes.at(node), t) = v;
    ++t;
  }
  if (!p.lmp.allFinite()) throw ValidationError(path.string() + ": non-finite prices");
  return p;
}

MecProxy parse_mec_proxy(const std::string& s) {
  if (s == "mean") return MecProxy::Mean;
  if (s == "median") return MecProxy::Median;
  if (s == "reference") return MecProxy::Reference;
  throw ConfigError("unknown MEC proxy '" + s + "' (mean, median, reference)");
}

MatrixXd mcc_from_prices(const MatrixXd& lmp, MecProxy proxy, int reference_row) {
  const Index n = lmp.rows();
  if (reference_row < 0 || reference_row >= n) throw ValidationError("mcc_from_prices: bad reference row");
  MatrixXd Pi(n - 1, lmp.cols());
  for (Index t = 0; t < lmp.cols(); ++t) {
    double mec = 0.0;
    if (proxy == MecProxy::Mean) {
      mec = lmp.col(t).mean();
    } else if (proxy == MecProxy::Reference) {
      mec = lmp(reference_row, t);
    } else {
      VectorXd c = lmp.col(t);
      std::sort(c.data(), c.data() + n);
      mec = n % 2 ? c(n / 2) : 0.5 * (c(n / 2 - 1) + c(n / 2));
    }
    Index r = 0;
    for (Index i = 0; i < n; ++i)
      if (i != reference_row) Pi(r++, t) = lmp(i, t) - mec;
  }
  return Pi;
}

void write_topology(const std::filesystem::path& path, const MatrixXd& B_hat, double threshold,
                    const std::vector<long long>& node_ids) {
  if (static_cast<Index>(node_ids.size()) != B_hat.rows())
    throw ValidationError("write_topology: node id count mismatch");
  csv::Writer w(path, {"node_i", "node_j", "weight"});
  for (const auto& [i, j] : links(B_hat, threshold)) {
    w << node_ids[i] << node_ids[j] << B_hat(i, j);
    w.end_row();
  }
}

}  // namespace lmp
