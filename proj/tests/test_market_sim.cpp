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

#include "lmp/log.hpp"
#include "lmp/market_sim.hpp"
#include "lmp/regimes.hpp"

using namespace lmp;
using doctest::Approx;

namespace {

const SimulatedMarket& market() {
  static const SimulatedMarket m = [] {
    warnings_enabled() = false;
    SimulationConfig cfg;
    cfg.seed = 3;
    return simulate(ieee30_market(), cfg);
  }();
  return m;
}

}  // namespace

TEST_CASE("demand model: constant history, known MVN, equivariance") {
  VectorXd profile(24);
  for (int h = 0; h < 24; ++h) profile(h) = 100.0 + h;
  MatrixXd H = profile.transpose().replicate(30, 1);
  const auto c = fit_demand_model(H);
  CHECK((c.mean - profile).norm() < 1e-9);
  CHECK(c.covariance.cwiseAbs().maxCoeff() < 1e-9);

  // Draws from a known N24 with a random correlation structure.
  Rng rng(1, "mvn-known");
  MatrixXd L = MatrixXd::Zero(24, 24);
  for (int i = 0; i < 24; ++i)
    for (int j = 0; j <= i; ++j) L(i, j) = (i == j ? 3.0 : 0.5 * rng.normal());
  const int N = 4000;
  MatrixXd X(N, 24);
  for (int k = 0; k < N; ++k) {
    VectorXd z(24);
    for (int h = 0; h < 24; ++h) z(h) = rng.normal();
    X.row(k) = (profile + L * z).transpose();
  }
  const auto fit = fit_demand_model(X);
  const MatrixXd Sigma = L * L.transpose();
  for (int h = 0; h < 24; ++h) CHECK(std::abs(fit.mean(h) - profile(h)) <= 3.0 * std::sqrt(Sigma(h, h) / N));

  const auto scaled = fit_demand_model(2.5 * X);
  CHECK((scaled.mean - 2.5 * fit.mean).norm() < 1e-9 * fit.mean.norm());
  CHECK((scaled.covariance - 6.25 * fit.covariance).norm() < 1e-9 * scaled.covariance.norm());

  CHECK_THROWS_AS(fit_demand_model(H.topRows(24)), ValidationError);
}

TEST_CASE("renewable sampling: zero variance, reproducibility, hourly variance") {
  RenewableModel r;
  r.profile = solar_profile(135.0);
  CHECK(r.profile.maxCoeff() == Approx(135.0));
  CHECK(r.profile(2) == 0.0);
  r.variance_scale = 0.0;
  Rng a(4, "ren");
  CHECK(sample_day(r, a) == r.profile);

  r.variance_scale = 0.1;
  Rng b1(9, "ren", 2), b2(9, "ren", 2);
  CHECK(sample_day(r, b1) == sample_day(r, b2));

  const int N = 10000;
  VectorXd sum = VectorXd::Zero(24), sq = VectorXd::Zero(24);
  Rng rng(10, "ren-var");
  for (int k = 0; k < N; ++k) {
    const VectorXd g = sample_day(r, rng);
    sum += g;
    sq += g.cwiseProduct(g);
  }
  for (int h = 9; h <= 16; ++h) {
    const double mean = sum(h) / N, var = sq(h) / N - mean * mean;
    CHECK(std::abs(var - 0.1 * r.profile(h)) <= 0.1 * 0.1 * r.profile(h));
  }
}

TEST_CASE("build_instances: fractions, renewable caps, line scaling") {
  auto spec = testing::two_bus(10.0);
  spec.generators = {testing::bid(0, 0, 0.1, 1.0, 0, 50), testing::bid(1, 1, 0.0, 0.0, 0, 20)};
  spec.generators[1].type = "renewable";
  NodalFractions f;
  f.load_buses = {0, 1};
  f.alpha = VectorXd::Constant(2, 0.5);
  f.renewable_gens = {1};
  f.beta = VectorXd::Ones(1);
  VectorXd d = VectorXd::Constant(24, 10.0), g = VectorXd::Constant(24, 4.0);
  const auto insts = build_instances(spec, d, g, f, 1.2);
  REQUIRE(insts.size() == 24);
  CHECK(insts[5].demand(0) == 5.0);
  CHECK(insts[5].demand(1) == 5.0);
  CHECK(insts[5].gen_max()(1) == 4.0);
  CHECK(insts[5].gen_max()(0) == 50.0);
  CHECK(insts[5].matrices->flow_max(0) == Approx(12.0));

  f.alpha << 1.0, 0.0;
  CHECK_THROWS_AS(build_instances(spec, d, g, f, 1.2), ValidationError);
}

TEST_CASE("IEEE 30-bus market: generators 2 and 4 are zero-cost renewables") {
  const auto mc = ieee30_market();
  CHECK(mc.fractions.renewable_gens == std::vector<int>{1, 3});
  for (int k : mc.fractions.renewable_gens) {
    CHECK(mc.spec.generators[k].a == 0.0);
    CHECK(mc.spec.generators[k].b == 0.0);
    CHECK(mc.spec.generators[k].type == "renewable");
  }
  CHECK(mc.renewable_peak == 135.0);
  CHECK(mc.nominal_load == Approx(189.2));
  CHECK(mc.fractions.alpha.sum() == Approx(1.0));
  mc.fractions.validate(30, 6);
}

TEST_CASE("simulation invariants") {
  const auto& m = market();
  CHECK(m.hours() == 24 * 140);
  CHECK(m.feasibility_rate() >= 0.99);
  CHECK(m.demand_model.mean.mean() == Approx(189.2));
  int congested = 0;
  for (int t = 0; t < m.hours(); ++t) {
    const auto& s = m.solutions[t];
    const double d = m.demand_days(t / 24, t % 24);
    CHECK(std::abs(s.dispatch.sum() - d) <= 1e-9 * d);
    const VectorXd pi = m.matrices->solve_laplacian(VectorXd(m.S.col(t)));
    CHECK((pi - m.Pi.col(t)).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK(congestion_support(m.S.col(t)) == m.congestion_patterns[m.congestion_label[t]]);
    if (!m.congestion_patterns[m.congestion_label[t]].empty()) ++congested;
  }
  CHECK(congested > 0);
  CHECK(m.congestion_patterns.size() >= 2);

  const auto mix = build_mix_vectors(m.mix(0, m.train_hours()), {}, {});
  CHECK(mix.vectors.size() == static_cast<std::size_t>(m.train_hours()));
}

TEST_CASE("simulation is a deterministic function of config and seed") {
  SimulationConfig cfg;
  cfg.seed = 3;
  cfg.train_days = 5;
  cfg.test_days = 2;
  const auto a = simulate(ieee30_market(), cfg), b = simulate(ieee30_market(), cfg);
  CHECK(a.lmp == b.lmp);
  CHECK(a.demand_days == b.demand_days);
  // Days do not depend on how many came before.
  CHECK(a.demand_days.topRows(5) == market().demand_days.topRows(5));
}

TEST_CASE("constant inputs give one column pattern per hour shape") {
  SimulationConfig cfg;
  cfg.train_days = 3;
  cfg.test_days = 0;
  cfg.variance_scale = 0.0;
  auto mc = ieee30_market();
  auto m = simulate(mc, cfg);
  // Zero renewable variance and a day-invariant demand draw repeat Pi.
  MatrixXd lmp;
  const MatrixXd D = m.demand_days.row(0).replicate(3, 1), R = m.renewable_days.row(0).replicate(3, 1);
  solve_days(m, mc.fractions, D, R, lmp);
  CHECK(lmp.middleCols(24, 24) == lmp.leftCols(24));
  CHECK(lmp.leftCols(24) == m.lmp.leftCols(24));
}

TEST_CASE("synthetic forecasts: nearest profile, error formula, monotone in profile count") {
  const auto& m = market();
  const auto one = synthesize_forecasts(m, 100, 1, 1);
  for (int i = 1; i < one.demand.rows(); ++i) CHECK(one.demand.row(i) == one.demand.row(0));

  const auto f = synthesize_forecasts(m);
  const int first = m.config.train_days;
  for (int i = 0; i < f.demand.rows(); ++i) {
    const int c = nearest_centroid(f.demand_profiles, m.demand_days.row(first + i).transpose());
    CHECK(f.demand.row(i) == f.demand_profiles.row(c));
  }
  const MatrixXd L = m.demand_days.middleRows(first, m.config.test_days);
  double direct = 0.0, base = 0.0;
  for (Index i = 0; i < L.size(); ++i) {
    direct += (L.data()[i] - f.demand.data()[i]) * (L.data()[i] - f.demand.data()[i]);
    base += L.data()[i] * L.data()[i];
  }
  CHECK(std::abs(f.err_demand - std::sqrt(direct / base)) <= 1e-12);

  double prev = 1.0;
  for (int k : {1, 2, 5, 10}) {
    const double e = synthesize_forecasts(m, 100, k, 2).err_demand;
    CHECK(e <= prev + 1e-3);
    prev = e;
  }
}

TEST_CASE("simplex projection keeps positive fractions summing to one") {
  VectorXd v(4);
  v << 0.5, 0.4, -0.2, 0.3;
  const VectorXd p = project_to_simplex(v);
  CHECK(p.sum() == Approx(1.0));
  CHECK(p.minCoeff() > 0.0);
  VectorXd inside(3);
  inside << 0.2, 0.3, 0.5;
  CHECK((project_to_simplex(inside) - inside).norm() < 1e-12);
}
