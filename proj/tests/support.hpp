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

// Shared fixtures for unit and acceptance tests.
#pragma once

#include "lmp/dcopf.hpp"
#include "lmp/grid.hpp"
#include "lmp/rng.hpp"

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>

namespace lmp::testing {

inline GridSpec two_bus(double limit, int from = 0, int to = 1) {
  GridSpec g;
  g.buses = {{0, true}, {1, false}};
  g.lines = {{0, from, to, 1.0, -limit, limit}};
  return g;
}

inline GeneratorBid bid(int id, int bus, double a, double b, double gmin = 0.0, double gmax = 10.0) {
  GeneratorBid g;
  g.id = id;
  g.bus = bus;
  g.a = a;
  g.b = b;
  g.g_min = gmin;
  g.g_max = gmax;
  return g;
}

/// Random connected grid: a random spanning tree plus `extra` chords.
/// Generators on ~half the buses with positive quadratic costs.
inline GridSpec random_grid(Rng& rng, int n, int extra, double limit_lo, double limit_hi) {
  GridSpec g;
  for (int i = 0; i < n; ++i) g.buses.push_back({i, i == 0});
  int id = 0;
  auto add_line = [&](int f, int t) {
    const double lim = limit_lo + (limit_hi - limit_lo) * rng.uniform();
    g.lines.push_back({id++, f, t, 0.05 + 0.45 * rng.uniform(), -lim, lim});
  };
  for (int i = 1; i < n; ++i) add_line(static_cast<int>(rng.below(i)), i);
  for (int e = 0; e < extra; ++e) {
    const int f = static_cast<int>(rng.below(n));
    int t = static_cast<int>(rng.below(n));
    if (t == f) t = (f + 1) % n;
    add_line(f, t);
  }
  int gid = 0;
  for (int i = 0; i < n; ++i) {
    if (i == 0 || rng.uniform() < 0.5) {
      auto b = bid(gid++, i, 0.01 + 0.09 * rng.uniform(), 1.0 + 29.0 * rng.uniform(), 0.0,
                   40.0 + 60.0 * rng.uniform());
      g.generators.push_back(b);
    }
  }
  return g;
}

inline OpfInstance make_instance(const GridSpec& spec, const VectorXd& demand) {
  OpfInstance inst;
  inst.matrices = std::make_shared<const GridMatrices>(build_matrices(spec));
  inst.bids = spec.generators;
  inst.demand = demand;
  return inst;
}

/// Random demand covering roughly `fill` of total generation capacity.
inline VectorXd random_demand(Rng& rng, const GridSpec& spec, double fill) {
  VectorXd d(spec.n());
  for (int i = 0; i < spec.n(); ++i) d(i) = rng.uniform();
  double cap = 0.0;
  for (const auto& g : spec.generators) cap += g.g_max;
  return d * (fill * cap / d.sum());
}

/// Congestion columns with one or two random lines congested in a fraction
/// `busy` of the hours, multipliers uniform in [-5, 5]. Returns S; the price
/// matrix is B^{-1} S.
inline MatrixXd random_congestion(const GridMatrices& M, int T, double busy, std::uint64_t seed) {
  Rng rng(seed, "random-congestion");
  MatrixXd S = MatrixXd::Zero(M.n() - 1, T);
  for (int t = 0; t < T; ++t) {
    if (rng.uniform() >= busy) continue;
    const int k = 1 + static_cast<int>(rng.below(2));
    for (int c = 0; c < k; ++c) {
      const int l = static_cast<int>(rng.below(static_cast<std::uint64_t>(M.m())));
      const double mu = 10.0 * rng.uniform() - 5.0;
      S.col(t) += M.incidence_reduced.row(l).transpose() * (M.susceptance(l) * mu);
    }
  }
  return S;
}

/// Jaccard index between {|S| > rel * max|S|} and {|truth| > 1e-6}.
inline double support_jaccard(const MatrixXd& S, const MatrixXd& truth, double rel = 1e-3) {
  const double thr = S.size() ? rel * S.cwiseAbs().maxCoeff() : 0.0;
  long inter = 0, uni = 0;
  for (Index j = 0; j < S.cols(); ++j)
    for (Index i = 0; i < S.rows(); ++i) {
      const bool a = std::abs(S(i, j)) > thr && thr > 0.0, b = std::abs(truth(i, j)) > 1e-6;
      inter += a && b;
      uni += a || b;
    }
  return uni ? static_cast<double>(inter) / static_cast<double>(uni) : 1.0;
}

}  // namespace lmp::testing
