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

#include <filesystem>

using namespace lmp;
using doctest::Approx;

namespace {

// Triangle with lines (1->0), (1->2), (0->2), all x = 1, reference bus 0.
GridSpec triangle() {
  GridSpec g;
  g.buses = {{0, true}, {1, false}, {2, false}};
  g.lines = {{0, 1, 0, 1.0, -10, 10}, {1, 1, 2, 1.0, -10, 10}, {2, 0, 2, 1.0, -10, 10}};
  return g;
}

}  // namespace

TEST_CASE("two-bus PTDF routes the bus-1 injection over the single line") {
  // Line oriented 1 -> 0 so an injection at bus 1 flows forward.
  const auto m = build_matrices(testing::two_bus(5.0, 1, 0));
  CHECK(m.ptdf.rows() == 1);
  CHECK(m.ptdf(0, 0) == 0.0);
  CHECK(m.ptdf(0, 1) == Approx(1.0));
  VectorXd inj(2);
  inj << -1.0, 1.0;
  CHECK(flows(m, inj)(0) == Approx(1.0));
  CHECK(flows(m, VectorXd::Zero(2))(0) == 0.0);
}

TEST_CASE("triangle PTDF matches the hand-solved reduced Laplacian system") {
  // Hand oracle: B = [[2,-1],[-1,2]] on buses (1,2); B theta = e1 gives
  // theta = (2/3, 1/3), theta_0 = 0. Flows (theta_f - theta_t)/x on
  // (1->0), (1->2), (0->2) are (2/3, 1/3, -1/3).
  const auto m = build_matrices(triangle());
  CHECK(m.laplacian_reduced(0, 0) == Approx(2.0));
  CHECK(m.laplacian_reduced(0, 1) == Approx(-1.0));
  CHECK(m.ptdf.col(0).norm() == 0.0);
  CHECK(m.ptdf(0, 1) == Approx(2.0 / 3.0));
  CHECK(m.ptdf(1, 1) == Approx(1.0 / 3.0));
  CHECK(m.ptdf(2, 1) == Approx(-1.0 / 3.0));

  VectorXd inj(3);
  inj << -1.0, 1.0, 0.0;
  const VectorXd f = flows(m, inj);
  CHECK(f(0) == Approx(2.0 / 3.0));
  CHECK(f(1) == Approx(1.0 / 3.0));
  CHECK(f(2) == Approx(-1.0 / 3.0));
}

TEST_CASE("reference bus is taken from the flag, not file order") {
  auto g = triangle();
  g.buses = {{0, false}, {1, false}, {2, true}};
  const auto m = build_matrices(g);
  CHECK(m.reference_bus == 2);
  CHECK(m.ptdf.col(2).norm() == 0.0);
  CHECK(m.reduced_buses == std::vector<int>{0, 1});
}

TEST_CASE("grid validation errors") {
  SUBCASE("disconnected") {
    GridSpec g;
    g.buses = {{0, true}, {1, false}, {2, false}, {3, false}};
    g.lines = {{0, 0, 1, 1.0, -1, 1}, {1, 2, 3, 1.0, -1, 1}};
    CHECK_THROWS_AS(build_matrices(g), StructuralError);
  }
  SUBCASE("non-positive reactance") {
    auto g = testing::two_bus(1.0);
    g.lines[0].reactance = 0.0;
    CHECK_THROWS_AS(build_matrices(g), ValidationError);
  }
  SUBCASE("two reference buses") {
    auto g = testing::two_bus(1.0);
    g.buses[1].is_reference = true;
    CHECK_THROWS_AS(build_matrices(g), ValidationError);
  }
  SUBCASE("unbalanced injection") {
    const auto m = build_matrices(triangle());
    VectorXd inj(3);
    inj << 1.0, 0.0, 0.0;
    CHECK_THROWS_AS(flows(m, inj), ValidationError);
  }
}

TEST_CASE("matrix invariants hold on random grids") {
  Rng rng(11, "grid-props");
  for (int trial = 0; trial < 40; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(12));
    const bool tree = trial % 3 == 0;
    const auto spec = testing::random_grid(rng, n, tree ? 0 : static_cast<int>(rng.below(5)), 10, 50);
    const auto m = build_matrices(spec);

    CHECK((m.incidence_full * VectorXd::Ones(n)).cwiseAbs().maxCoeff() == 0.0);
    const MatrixXd& B = m.laplacian_reduced;
    CHECK((B - B.transpose()).cwiseAbs().maxCoeff() == 0.0);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(B);
    CHECK(es.eigenvalues().minCoeff() > 0.0);
    for (int i = 0; i < n - 1; ++i)
      for (int j = 0; j < n - 1; ++j)
        if (i != j) CHECK(B(i, j) <= 0.0);
    CHECK(m.ptdf.col(m.reference_bus).cwiseAbs().maxCoeff() == 0.0);
    if (tree) {
      for (Index k = 0; k < m.ptdf.size(); ++k) {
        const double v = std::abs(m.ptdf.data()[k]);
        CHECK((v < 1e-12 || std::abs(v - 1.0) < 1e-12));
      }
    }

    // Flow conservation: net line outflow at each bus equals its injection.
    VectorXd x(n), y(n);
    for (int i = 0; i < n; ++i) {
      x(i) = rng.normal();
      y(i) = rng.normal();
    }
    x.array() -= x.mean();
    y.array() -= y.mean();
    const VectorXd fx = flows(m, x);
    CHECK((m.incidence_full.transpose() * fx - x).cwiseAbs().maxCoeff() < 1e-9);
    const VectorXd fxy = flows(m, x + y);
    const VectorXd sum = fx + flows(m, y);
    CHECK((fxy - sum).norm() <= 1e-10 * std::max(1.0, sum.norm()));
  }
}

TEST_CASE("IEEE 30-bus case: shipped CSV triple matches the embedded case") {
  const auto spec = ieee30();
  CHECK(spec.n() == 30);
  CHECK(spec.m() == 41);
  CHECK(spec.generators.size() == 6);
  CHECK(ieee30_loads().sum() == Approx(189.2));
  (void)build_matrices(spec);

  const std::filesystem::path shipped = LMP_DATA_DIR "/ieee30";
  const auto loaded = load_grid(shipped);
  REQUIRE(loaded.m() == spec.m());
  for (int l = 0; l < spec.m(); ++l) {
    CHECK(loaded.lines[l].from_bus == spec.lines[l].from_bus);
    CHECK(loaded.lines[l].to_bus == spec.lines[l].to_bus);
    CHECK(loaded.lines[l].reactance == spec.lines[l].reactance);
    CHECK(loaded.lines[l].flow_max == spec.lines[l].flow_max);
  }
  REQUIRE(loaded.generators.size() == spec.generators.size());
  for (std::size_t i = 0; i < spec.generators.size(); ++i) {
    CHECK(loaded.generators[i].a == spec.generators[i].a);
    CHECK(loaded.generators[i].bus == spec.generators[i].bus);
  }
}

TEST_CASE("grid CSV round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "lmp_grid_roundtrip";
  std::filesystem::remove_all(dir);
  save_grid(ieee30(), dir);
  const auto back = load_grid(dir);
  const auto a = build_matrices(ieee30()), b = build_matrices(back);
  CHECK((a.ptdf - b.ptdf).cwiseAbs().maxCoeff() == 0.0);
  std::filesystem::remove_all(dir);
}
