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
#include "oracles.hpp"
#include "support.hpp"

#include <algorithm>

using namespace lmp;
using namespace lmp::testing;
using doctest::Approx;

namespace {

OpfInstance two_bus_case(double limit) {
  auto spec = two_bus(limit);
  spec.generators = {bid(0, 0, 0.5, 0.0), bid(1, 1, 1.0, 10.0)};
  VectorXd d(2);
  d << 0.0, 1.0;
  return make_instance(spec, d);
}

bool contains(const std::vector<int>& v, int x) { return std::find(v.begin(), v.end(), x) != v.end(); }

}  // namespace

TEST_CASE("single generator, no congestion: first-order condition") {
  // A 2-bus grid with an unconstraining line stands in for the 1-bus case.
  auto spec = two_bus(100.0);
  spec.generators = {bid(0, 0, 1.0, 0.0)};
  VectorXd d(2);
  d << 1.0, 0.0;
  const auto sol = solve(make_instance(spec, d));
  CHECK(sol.dispatch(0) == Approx(1.0));
  CHECK(sol.lambda == Approx(2.0));
  CHECK(sol.lmp(0) == Approx(2.0));
  CHECK(sol.lmp(1) == Approx(2.0));
  CHECK(sol.mu_upper.norm() == 0.0);
  CHECK(sol.mu_lower.norm() == 0.0);
  CHECK(sol.binding_set.empty());

  const auto reg = extract_regime(make_instance(spec, d), sol);
  REQUIRE(reg.lmp);
  // dLMP/dd = 2a
  CHECK(reg.lmp->sensitivity(0, 0) == Approx(2.0));
  CHECK(reg.lmp->sensitivity(1, 1) == Approx(2.0));
}

TEST_CASE("two-bus, large line limit: equal LMPs from the marginal-cost system") {
  // Hand KKT: 2*0.5*g0 = 2*1*g1 + 10 with g0 + g1 = 1 forces g1 < 0, so
  // g1 sits at g_min = 0, g0 = 1, lambda = 1, tau_lower(1) = 10 - 1 = 9.
  const auto inst = two_bus_case(100.0);
  const auto sol = solve(inst);
  CHECK(sol.dispatch(0) == Approx(1.0));
  CHECK(sol.dispatch(1) == Approx(0.0));
  CHECK(sol.lambda == Approx(1.0));
  CHECK(sol.lmp(1) == Approx(1.0));
  CHECK(sol.tau_lower(1) == Approx(9.0));
  const auto [mec, mcc] = decompose_lmp(sol, *inst.matrices);
  CHECK(mec == Approx(1.0));
  CHECK(mcc.norm() == 0.0);
  CHECK(congestion_vector(sol, *inst.matrices).norm() == 0.0);
}

TEST_CASE("two-bus, line limit 0.4: brute-force oracle") {
  const auto inst = two_bus_case(0.4);
  const auto oracle = oracles::brute_force_two_bus(inst, 1e-4);
  const auto sol = solve(inst);

  CHECK(std::abs(sol.dispatch(0) - oracle.g0) <= 1e-4);
  CHECK(std::abs(sol.dispatch(1) - oracle.g1) <= 1e-4);
  CHECK(std::abs(sol.lmp(0) - oracle.lmp0) <= 1e-4);
  CHECK(std::abs(sol.lmp(1) - oracle.lmp1) <= 1e-4);
  CHECK(std::abs(sol.mu_upper(0) - oracle.mu_upper) <= 1e-4);
  CHECK(sol.lmp(1) > sol.lmp(0));

  // Frozen oracle values: g = (0.4, 0.6), LMP = (0.4, 11.2), mu+ = 10.8.
  CHECK(oracle.g0 == Approx(0.4));
  CHECK(oracle.lmp1 == Approx(11.2));
  CHECK(oracle.mu_upper == Approx(10.8));

  const auto [mec, mcc] = decompose_lmp(sol, *inst.matrices);
  CHECK(mcc(0) == 0.0);
  CHECK(mcc(1) == Approx(10.8));
  CHECK((VectorXd::Constant(2, mec) + mcc - sol.lmp).norm() < 1e-8);

  // Line 0->1 touches the reference bus: s has the single reduced entry.
  const VectorXd s = congestion_vector(sol, *inst.matrices);
  REQUIRE(s.size() == 1);
  CHECK(s(0) == Approx(10.8));
  CHECK(inst.matrices->solve_laplacian(s)(0, 0) == Approx(mcc(1)));

  const auto reg = extract_regime(inst, sol);
  CHECK(reg.binding_set == std::vector<int>{0});  // line 0 upper
  REQUIRE(reg.lmp);
  VectorXd theta = parameter_vector(inst);
  CHECK((reg.lmp->operator()(theta) - sol.lmp).norm() < 1e-10);
  auto moved = inst;
  moved.demand(1) += 0.05;
  const auto fresh = solve(moved);
  CHECK(fresh.binding_set == sol.binding_set);
  CHECK((reg.lmp->operator()(parameter_vector(moved)) - fresh.lmp).lpNorm<Eigen::Infinity>() <= 1e-6);
  CHECK(solve(inst).binding_set == sol.binding_set);
}

TEST_CASE("single congested interior line: s supported on both endpoints") {
  // Path 0 - 1 - 2 with the cheap unit at bus 0 and load at bus 2; the
  // 1 -> 2 line binds, so s lives on reduced entries of buses 1 and 2 only.
  GridSpec spec;
  spec.buses = {{0, true}, {1, false}, {2, false}};
  spec.lines = {{0, 0, 1, 0.5, -100, 100}, {1, 1, 2, 0.5, -3, 3}};
  spec.generators = {bid(0, 0, 0.1, 1.0), bid(1, 2, 0.2, 20.0)};
  VectorXd d(3);
  d << 0.0, 0.0, 5.0;
  const auto inst = make_instance(spec, d);
  const auto sol = solve(inst);
  CHECK(contains(sol.binding_set, 1));
  const VectorXd s = congestion_vector(sol, *inst.matrices);
  CHECK(std::abs(s(0)) > 1e-6);
  CHECK(std::abs(s(1)) > 1e-6);
  CHECK(s(0) == Approx(-s(1)));
  const VectorXd pi = inst.matrices->solve_laplacian(s);
  CHECK((pi - inst.matrices->reduce(sol.mcc)).norm() < 1e-8);
}

TEST_CASE("infeasible line limits are reported with the violated set") {
  auto spec = two_bus(0.4);
  spec.generators = {bid(0, 0, 0.5, 0.0)};
  VectorXd d(2);
  d << 0.0, 1.0;
  try {
    (void)solve(make_instance(spec, d));
    FAIL("expected infeasibility");
  } catch (const OpfInfeasible& e) {
    CHECK(!e.violated.empty());
    CHECK(e.kind() == ErrorKind::Infeasible);
  }
}

TEST_CASE("demand outside the generation range is infeasible") {
  auto inst = two_bus_case(100.0);
  inst.demand(1) = 50.0;
  CHECK_THROWS_AS(solve(inst), OpfInfeasible);
}

TEST_CASE("zero quadratic cost requires the zero-cost flag") {
  auto spec = two_bus(100.0);
  spec.generators = {bid(0, 0, 0.0, 0.0), bid(1, 1, 0.0, 0.0), bid(2, 1, 0.1, 5.0)};
  VectorXd d(2);
  d << 1.0, 3.0;
  auto inst = make_instance(spec, d);
  CHECK_THROWS_AS(solve(inst), ValidationError);
  inst.allow_zero_cost = true;
  const auto sol = solve(inst);
  CHECK(sol.dispatch.sum() == Approx(4.0));
  CHECK(sol.dispatch(2) == Approx(0.0).epsilon(1e-9));
  // Tie between the two free units goes to the lowest id.
  CHECK(sol.dispatch(0) == Approx(4.0));
}

TEST_CASE("random grids: KKT, duality, complementarity, cost scaling") {
  Rng rng(2024, "dcopf-props");
  int congested = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(9));
    const auto spec = random_grid(rng, n, static_cast<int>(rng.below(4)), 5, 60);
    const auto inst = make_instance(spec, random_demand(rng, spec, 0.5));
    OpfSolution sol;
    try {
      sol = solve(inst);
    } catch (const OpfInfeasible&) {
      continue;
    }
    CAPTURE(trial);
    CHECK(kkt_residuals(inst, sol).max() <= 1e-6);
    CHECK(std::abs(sol.dispatch.sum() - inst.demand.sum()) <= 1e-8 * inst.demand.sum());
    const double dual = dual_objective(inst, sol);
    CHECK(std::abs(dual - sol.objective) <= 1e-6 * std::max(1.0, std::abs(sol.objective)));
    for (int l = 0; l < inst.matrices->m(); ++l) {
      if (sol.mu_upper(l) > 1e-9) CHECK(sol.line_flows(l) == Approx(inst.matrices->flow_max(l)));
      if (sol.mu_lower(l) > 1e-9) CHECK(sol.line_flows(l) == Approx(inst.matrices->flow_min(l)));
    }
    if (sol.mu().norm() > 0) ++congested;
    const VectorXd pi = inst.matrices->solve_laplacian(sol.congestion_vector);
    CHECK((pi - inst.matrices->reduce(sol.mcc)).lpNorm<Eigen::Infinity>() < 1e-8);

    auto scaled = inst;
    for (auto& b : scaled.bids) {
      b.a *= 3.0;
      b.b *= 3.0;
      b.c *= 3.0;
    }
    const auto s3 = solve(scaled);
    CHECK((s3.dispatch - sol.dispatch).lpNorm<Eigen::Infinity>() < 1e-7);
    CHECK(s3.lambda == Approx(3.0 * sol.lambda));
    CHECK((s3.lmp - 3.0 * sol.lmp).lpNorm<Eigen::Infinity>() < 1e-6);
    CHECK((s3.mu() - 3.0 * sol.mu()).lpNorm<Eigen::Infinity>() < 1e-6);
  }
  CHECK(congested > 3);
}
