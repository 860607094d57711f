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

#include "doctest.h"
#include "support.hpp"

#include "lmp/dcopf.hpp"
#include "lmp/log.hpp"
#include "lmp/recovery.hpp"

#include <filesystem>
#include <fstream>

using namespace lmp;
using doctest::Approx;

namespace {

MatrixXd triangle_laplacian() {
  MatrixXd L(3, 3);
  L << 2, -1, -1, -1, 2, -1, -1, -1, 2;
  return L;
}

struct RichCase {
  GridMatrices M;
  MatrixXd S_true, Pi;
  RecoveredStructure rec;
};

const RichCase& rich() {
  static const RichCase c = [] {
    RichCase r;
    r.M = build_matrices(ieee30());
    r.S_true = testing::random_congestion(r.M, 1440, 0.4, 3);
    r.Pi = r.M.solve_laplacian(r.S_true);
    r.rec = admm_recover(r.Pi);
    return r;
  }();
  return c;
}

}  // namespace

TEST_CASE("zero prices keep S at zero") {
  const auto r = admm_recover(MatrixXd::Zero(4, 30));
  CHECK(r.converged);
  for (double res : r.residual_history) CHECK(res == 0.0);
  CHECK(r.S.cwiseAbs().maxCoeff() == 0.0);
  CHECK((r.B - r.B.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(r.B.maxCoeff() <= 1.0 + 1e-8);
}

TEST_CASE("parameter validation") {
  AdmmParams p;
  p.rho = 0.0;
  CHECK_THROWS_AS(p.validate(), ValidationError);
  p = {};
  p.max_iters = 0;
  CHECK_THROWS_AS(p.validate(), ValidationError);
  MatrixXd bad = MatrixXd::Ones(3, 3);
  bad(1, 1) = std::nan("");
  CHECK_THROWS_AS(admm_recover(bad), ValidationError);
}

TEST_CASE("recovery on multi-line congestion finds the grid and the support") {
  const auto& c = rich();
  const auto& r = c.rec;
  CHECK(r.converged);
  CHECK(r.iterations < 2000);
  CHECK((r.B - r.B.transpose()).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(Eigen::SelfAdjointEigenSolver<MatrixXd>(r.B).eigenvalues().minCoeff() >= -1e-8);
  CHECK(testing::support_jaccard(r.S, c.S_true) >= 0.6);

  // Every true link is found and spurious links stay a minority.
  const MatrixXd Bt = normalize_B(c.M.laplacian_reduced), Bh = normalize_B(r.B);
  int tp = 0, fp = 0, fn = 0;
  for (Index i = 0; i < Bt.rows(); ++i)
    for (Index j = i + 1; j < Bt.cols(); ++j) {
      const bool found = std::abs(Bh(i, j)) > 0.01, truth = std::abs(Bt(i, j)) > 1e-9;
      tp += found && truth;
      fp += found && !truth;
      fn += !found && truth;
    }
  CHECK(fn == 0);
  CHECK(fp < tp);
}

TEST_CASE("recovered support is invariant to scaling the prices") {
  const auto& c = rich();
  const MatrixXd Pi = c.Pi.leftCols(240);
  const auto base = admm_recover(Pi);
  for (double k : {0.5, 2.0}) {
    const auto r = admm_recover(k * Pi);
    CHECK(r.iterations == base.iterations);
    const double a = 1e-3 * r.S.cwiseAbs().maxCoeff(), b = 1e-3 * base.S.cwiseAbs().maxCoeff();
    const auto mism = ((r.S.array().abs() > a) != (base.S.array().abs() > b)).count();
    CHECK(mism <= base.S.size() / 1000);
    CHECK((r.S - k * base.S).cwiseAbs().maxCoeff() <= 1e-6 * k * base.S.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("non-convergence returns the lowest-residual iterate") {
  AdmmParams p;
  p.max_iters = 5;
  p.epsilon = 1e-12;
  const auto r = admm_recover(rich().Pi.leftCols(100), p);
  CHECK_FALSE(r.converged);
  CHECK(r.residual_history.size() == 5u);
}

TEST_CASE("feasible projection of B") {
  Rng rng(5, "project-b");
  MatrixXd A(6, 6);
  for (Index i = 0; i < A.size(); ++i) A(i) = rng.normal();
  A = 0.5 * (A + A.transpose());
  const MatrixXd X = project_feasible_B(A);
  CHECK((X - X.transpose()).cwiseAbs().maxCoeff() == 0.0);
  CHECK(Eigen::SelfAdjointEigenSolver<MatrixXd>(X).eigenvalues().minCoeff() >= -1e-10);
  CHECK((X - MatrixXd::Identity(6, 6)).maxCoeff() <= 1e-8);
  // A point already in the set is returned unchanged.
  MatrixXd L = 2.0 * MatrixXd::Identity(4, 4) - MatrixXd::Ones(4, 4) * 0.25;
  L = L / L.maxCoeff();
  CHECK((project_feasible_B(L) - L).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("recovered B satisfies the structural invariants") {
  Rng rng(6, "recover-invariants");
  MatrixXd Pi(7, 300);
  for (Index i = 0; i < Pi.size(); ++i) Pi(i) = rng.normal();
  const auto rec = admm_recover(Pi);
  CHECK((rec.B - rec.B.transpose()).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(Eigen::SelfAdjointEigenSolver<MatrixXd>(rec.B).eigenvalues().minCoeff() >= -1e-8);
  CHECK((rec.B - MatrixXd::Identity(7, 7)).maxCoeff() <= 1e-8);
}

TEST_CASE("normalize_B") {
  CHECK(normalize_B(2.0 * MatrixXd::Identity(3, 3)).isApprox(MatrixXd::Identity(3, 3)));
  MatrixXd B(2, 2);
  B << 1.0, -4.0, -4.0, 0.5;
  const MatrixXd Bh = normalize_B(B);
  CHECK(Bh.isApprox(B / 4.0));
  CHECK(normalize_B(Bh).isApprox(Bh));
  CHECK_THROWS_AS(normalize_B(MatrixXd::Zero(2, 2)), ValidationError);
}

TEST_CASE("link counting and week-over-week differences") {
  const MatrixXd Bh = normalize_B(triangle_laplacian());
  CHECK(count_links(Bh, 0.01) == 3);
  CHECK(count_links(Bh, 1.0) == 0);
  int last = count_links(Bh, 0.0);
  for (double t = 0.0; t <= 1.0; t += 0.05) {
    const int c = count_links(Bh, t);
    CHECK(c <= last);
    last = c;
  }

  CHECK(link_diff_percent(Bh, Bh, 0.01) == 0.0);
  MatrixXd a = MatrixXd::Identity(4, 4), b = MatrixXd::Identity(4, 4);
  a(0, 1) = a(1, 0) = -0.5;
  b(2, 3) = b(3, 2) = -0.5;
  CHECK(link_diff_percent(a, b, 0.01) == 100.0);
  warnings_enabled() = false;
  CHECK(link_diff_percent(a, MatrixXd::Identity(4, 4), 0.01) == 0.0);
  warnings_enabled() = true;
  CHECK_THROWS_AS(link_diff_percent(a, MatrixXd::Identity(3, 3), 0.01), ValidationError);
}

TEST_CASE("congestion matrix of a single congested line sits on its endpoints") {
  // Three buses, cheap generation at bus 0 behind a tight line 0-1.
  GridSpec g;
  g.buses = {{0, true}, {1, false}, {2, false}};
  g.lines = {{0, 0, 1, 0.1, -5.0, 5.0}, {1, 1, 2, 0.1, -50, 50}, {2, 0, 2, 0.1, -50, 50}};
  g.generators = {testing::bid(0, 0, 0.01, 1.0, 0, 100), testing::bid(1, 2, 0.01, 20.0, 0, 100)};
  VectorXd d(3);
  d << 0.0, 10.0, 10.0;
  const auto inst = testing::make_instance(g, d);
  const auto sol = solve(inst);
  const auto& M = *inst.matrices;
  const VectorXd s = congestion_vector(sol, M);
  const VectorXd pi = M.reduce(sol.mcc);
  const MatrixXd S = congestion_matrix(M.laplacian_reduced, pi);
  CHECK((S.col(0) - s).cwiseAbs().maxCoeff() < 1e-8);
  // Bus 0 is the reference, so only reduced entry 0 (bus 1) carries the line.
  CHECK(std::abs(S(0, 0)) > 1e-6);
  CHECK(std::abs(S(1, 0)) < 1e-8);
  CHECK(congestion_matrix(M.laplacian_reduced, MatrixXd::Zero(2, 4)).cwiseAbs().maxCoeff() == 0.0);
  CHECK(congestion_matrix(M.laplacian_reduced, S, true).isApprox(M.solve_laplacian(S)));
  CHECK_THROWS_AS(congestion_matrix(M.laplacian_reduced, MatrixXd::Zero(3, 4)), ValidationError);
}

TEST_CASE("congestion clustering") {
  MatrixXd S = MatrixXd::Zero(5, 40);
  for (int t = 0; t < 40; ++t) {
    if (t % 2) {
      S(0, t) = 3.0;
      S(1, t) = -3.0;
    } else {
      S(3, t) = -2.0;
      S(4, t) = 2.0;
    }
  }
  const auto c = cluster_congestions(S, 2, 10, 5);
  CHECK(c.k() == 2);
  for (int t = 2; t < 40; ++t) CHECK(c.labels[t] == c.labels[t % 2]);
  CHECK(c.labels[0] != c.labels[1]);

  const auto one = cluster_congestions(MatrixXd::Ones(5, 10), 2, 10, 5);
  CHECK(one.k() == 1);
  CHECK(cluster_congestions(MatrixXd::Zero(5, 10), 2, 10, 5).k() == 1);
}

TEST_CASE("congestion prices from nodal prices") {
  MatrixXd lmp(4, 2);
  lmp << 10, 5, 12, 5, 11, 6, 30, 8;
  const MatrixXd mean = mcc_from_prices(lmp, MecProxy::Mean, 0);
  CHECK(mean.rows() == 3);
  CHECK(mean(0, 0) == Approx(12 - 15.75));
  CHECK(mean(2, 1) == Approx(8 - 6.0));
  const MatrixXd med = mcc_from_prices(lmp, MecProxy::Median, 0);
  CHECK(med(0, 0) == Approx(12 - 11.5));
  CHECK(med(1, 1) == Approx(6 - 5.5));
  const MatrixXd ref = mcc_from_prices(lmp, MecProxy::Reference, 0);
  CHECK(ref(2, 0) == Approx(20.0));
  CHECK(ref(0, 1) == Approx(0.0));
  CHECK(parse_mec_proxy("median") == MecProxy::Median);
  CHECK_THROWS_AS(parse_mec_proxy("mode"), ConfigError);
}

TEST_CASE("price csv round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "lmp_test_recovery";
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "prices.csv");
    f << "timestamp_iso8601,node_id,lmp_usd_per_mwh\n"
      << "2026-01-01T01:00:00Z,2,5.5\n2026-01-01T00:00:00Z,2,4\n"
      << "2026-01-01T00:00:00Z,1,3\n2026-01-01T01:00:00Z,1,3.5\n";
  }
  const auto p = read_prices(dir / "prices.csv");
  CHECK(p.node_ids == std::vector<long long>{1, 2});
  CHECK(p.timestamps.size() == 2u);
  CHECK(p.lmp(1, 0) == 4.0);
  CHECK(p.lmp(0, 1) == 3.5);
  {
    std::ofstream f(dir / "gap.csv");
    f << "timestamp_iso8601,node_id,lmp_usd_per_mwh\n"
      << "2026-01-01T00:00:00Z,1,3\n2026-01-01T00:00:00Z,2,4\n2026-01-01T01:00:00Z,1,3\n";
  }
  CHECK_THROWS_AS(read_prices(dir / "gap.csv"), ValidationError);
  std::filesystem::remove_all(dir);
}
