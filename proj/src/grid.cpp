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

#include "lmp/grid.hpp"

#include "lmp/csv.hpp"

#include <numeric>

namespace lmp {

int GridSpec::reference_bus() const {
  for (const auto& b : buses)
    if (b.is_reference) return b.id;
  throw ValidationError("grid has no reference bus");
}

void validate(const GridSpec& spec) {
  const int n = spec.n();
  if (n < 2) throw ValidationError("grid needs at least 2 buses");
  if (spec.m() < 1) throw ValidationError("grid needs at least 1 line");
  std::vector<bool> seen(n, false);
  int refs = 0;
  for (const auto& b : spec.buses) {
    if (b.id < 0 || b.id >= n || seen[b.id])
      throw ValidationError("bus ids must be contiguous 0..n-1 (bad id " + std::to_string(b.id) + ")");
    seen[b.id] = true;
    refs += b.is_reference ? 1 : 0;
  }
  if (refs != 1) throw ValidationError("exactly one reference bus required, found " + std::to_string(refs));
  for (const auto& l : spec.lines) {
    const std::string tag = "line " + std::to_string(l.id) + ": ";
    if (l.from_bus < 0 || l.from_bus >= n || l.to_bus < 0 || l.to_bus >= n)
      throw ValidationError(tag + "endpoint out of range");
    if (l.from_bus == l.to_bus) throw ValidationError(tag + "self loop");
    if (!(l.reactance > 0.0)) throw ValidationError(tag + "reactance must be positive");
    if (!(l.flow_min <= 0.0 && l.flow_max >= 0.0))
      throw ValidationError(tag + "flow limits must satisfy flow_min <= 0 <= flow_max");
  }
  for (const auto& g : spec.generators) {
    const std::string tag = "generator " + std::to_string(g.id) + ": ";
    if (g.bus < 0 || g.bus >= n) throw ValidationError(tag + "bus out of range");
    if (!(g.g_min <= g.g_max)) throw ValidationError(tag + "g_min > g_max");
    if (g.a < 0.0) throw ValidationError(tag + "negative quadratic cost");
  }

  // connectivity by union-find
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& l : spec.lines) parent[find(l.from_bus)] = find(l.to_bus);
  const int root = find(0);
  for (int i = 1; i < n; ++i)
    if (find(i) != root) throw StructuralError("grid is disconnected (bus " + std::to_string(i) + ")");
}

VectorXd GridMatrices::reduce(const VectorXd& full) const {
  VectorXd r(reduced_buses.size());
  for (std::size_t k = 0; k < reduced_buses.size(); ++k) r(k) = full(reduced_buses[k]);
  return r;
}

VectorXd GridMatrices::expand(const VectorXd& reduced) const {
  VectorXd f = VectorXd::Zero(n());
  for (std::size_t k = 0; k < reduced_buses.size(); ++k) f(reduced_buses[k]) = reduced(k);
  return f;
}

GridMatrices build_matrices(const GridSpec& spec) {
  validate(spec);
  const int n = spec.n(), m = spec.m();
  GridMatrices g;
  g.reference_bus = spec.reference_bus();
  g.reduced_index.assign(n, -1);
  for (int i = 0, k = 0; i < n; ++i) {
    if (i == g.reference_bus) continue;
    g.reduced_buses.push_back(i);
    g.reduced_index[i] = k++;
  }

  g.incidence_full = MatrixXd::Zero(m, n);
  g.susceptance.resize(m);
  g.flow_min.resize(m);
  g.flow_max.resize(m);
  for (int l = 0; l < m; ++l) {
    const Line& ln = spec.lines[l];
    g.incidence_full(l, ln.from_bus) = 1.0;
    g.incidence_full(l, ln.to_bus) = -1.0;
    g.susceptance(l) = 1.0 / ln.reactance;
    g.flow_min(l) = ln.flow_min;
    g.flow_max(l) = ln.flow_max;
  }
  g.incidence_reduced.resize(m, n - 1);
  for (int k = 0; k < n - 1; ++k) g.incidence_reduced.col(k) = g.incidence_full.col(g.reduced_buses[k]);

  g.laplacian_reduced =
      g.incidence_reduced.transpose() * g.susceptance.asDiagonal() * g.incidence_reduced;
  g.laplacian_factor.compute(g.laplacian_reduced);
  if (g.laplacian_factor.info() != Eigen::Success)
    throw StructuralError("reduced Laplacian is not positive definite");

  // T_red^T = B^{-1} A^T D, so T_red = D A B^{-1} without forming the inverse.
  const MatrixXd rhs = g.incidence_reduced.transpose() * g.susceptance.asDiagonal();
  const MatrixXd ptdf_red_t = g.solve_laplacian(rhs);
  g.ptdf = MatrixXd::Zero(m, n);
  for (int k = 0; k < n - 1; ++k) g.ptdf.col(g.reduced_buses[k]) = ptdf_red_t.row(k).transpose();
  return g;
}

VectorXd flows(const GridMatrices& mats, const VectorXd& injection) {
  if (injection.size() != mats.n()) throw ValidationError("injection has wrong dimension");
  const double imbalance = injection.sum();
  const double scale = injection.cwiseAbs().sum();
  if (std::abs(imbalance) > 1e-8 * scale + 1e-12)
    throw ValidationError("unbalanced injection (sum = " + std::to_string(imbalance) + ")");
  return mats.ptdf * injection;
}

GridSpec load_grid(const std::filesystem::path& dir) {
  GridSpec spec;
  {
    const auto t = csv::read(dir / "buses.csv", {"bus_id", "is_ref"});
    const auto cid = t.column("bus_id"), cref = t.column("is_ref");
    for (std::size_t r = 0; r < t.rows(); ++r)
      spec.buses.push_back({static_cast<int>(t.integer(r, cid)), t.integer(r, cref) != 0});
  }
  {
    const auto t = csv::read(dir / "lines.csv", {"line_id", "from_bus", "to_bus", "reactance_pu", "fmax_mw"});
    const auto ci = t.column("line_id"), cf = t.column("from_bus"), ct = t.column("to_bus"),
               cx = t.column("reactance_pu"), cm = t.column("fmax_mw");
    for (std::size_t r = 0; r < t.rows(); ++r) {
      const double fmax = t.number(r, cm);
      spec.lines.push_back({static_cast<int>(t.integer(r, ci)), static_cast<int>(t.integer(r, cf)),
                            static_cast<int>(t.integer(r, ct)), t.number(r, cx), -fmax, fmax});
    }
  }
  {
    const auto t = csv::read(dir / "gens.csv", {"gen_id", "bus_id", "gen_type", "cost_a", "cost_b",
                                                "cost_c", "gmin_mw", "gmax_mw"});
    const auto ci = t.column("gen_id"), cb = t.column("bus_id"), cty = t.column("gen_type"),
               ca = t.column("cost_a"), cbb = t.column("cost_b"), cc = t.column("cost_c"),
               clo = t.column("gmin_mw"), chi = t.column("gmax_mw");
    for (std::size_t r = 0; r < t.rows(); ++r) {
      GeneratorBid g;
      g.id = static_cast<int>(t.integer(r, ci));
      g.bus = static_cast<int>(t.integer(r, cb));
      g.type = t.at(r, cty);
      g.a = t.number(r, ca);
      g.b = t.number(r, cbb);
      g.c = t.number(r, cc);
      g.g_min = t.number(r, clo);
      g.g_max = t.number(r, chi);
      spec.generators.push_back(g);
    }
  }
  validate(spec);
  return spec;
}

void save_grid(const GridSpec& spec, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    csv::Writer w(dir / "buses.csv", {"bus_id", "is_ref"});
    for (const auto& b : spec.buses) {
      w << b.id << (b.is_reference ? 1 : 0);
      w.end_row();
    }
  }
  {
    csv::Writer w(dir / "lines.csv", {"line_id", "from_bus", "to_bus", "reactance_pu", "fmax_mw"});
    for (const auto& l : spec.lines) {
      w << l.id << l.from_bus << l.to_bus << l.reactance << l.flow_max;
      w.end_row();
    }
  }
  {
    csv::Writer w(dir / "gens.csv",
                  {"gen_id", "bus_id", "gen_type", "cost_a", "cost_b", "cost_c", "gmin_mw", "gmax_mw"});
    for (const auto& g : spec.generators) {
      w << g.id << g.bus << g.type << g.a << g.b << g.c << g.g_min << g.g_max;
      w.end_row();
    }
  }
}

GridSpec ieee30() {
  // fbus, tbus, x, rateA (MATPOWER case30 branch table)
  struct Br { int f, t; double x, rate; };
  static constexpr Br branches[] = {
      {1, 2, 0.06, 130},  {1, 3, 0.19, 130},  {2, 4, 0.17, 65},   {3, 4, 0.04, 130},
      {2, 5, 0.2, 130},   {2, 6, 0.18, 65},   {4, 6, 0.04, 90},   {5, 7, 0.12, 70},
      {6, 7, 0.08, 130},  {6, 8, 0.04, 32},   {6, 9, 0.21, 65},   {6, 10, 0.56, 32},
      {9, 11, 0.21, 65},  {9, 10, 0.11, 65},  {4, 12, 0.26, 65},  {12, 13, 0.14, 65},
      {12, 14, 0.26, 32}, {12, 15, 0.13, 32}, {12, 16, 0.2, 32},  {14, 15, 0.2, 16},
      {16, 17, 0.19, 16}, {15, 18, 0.22, 16}, {18, 19, 0.13, 16}, {19, 20, 0.07, 32},
      {10, 20, 0.21, 32}, {10, 17, 0.08, 32}, {10, 21, 0.07, 32}, {10, 22, 0.15, 32},
      {21, 22, 0.02, 32}, {15, 23, 0.2, 16},  {22, 24, 0.18, 16}, {23, 24, 0.27, 16},
      {24, 25, 0.33, 16}, {25, 26, 0.38, 16}, {25, 27, 0.21, 16}, {28, 27, 0.4, 65},
      {27, 29, 0.42, 16}, {27, 30, 0.6, 16},  {29, 30, 0.45, 16}, {8, 28, 0.2, 32},
      {6, 28, 0.06, 32},
  };
  // bus, Pmin, Pmax, a, b, c
  struct Gen { int bus; double pmin, pmax, a, b, c; };
  static constexpr Gen gens[] = {
      {1, 0, 80, 0.02, 2.0, 0},    {2, 0, 80, 0.0175, 1.75, 0}, {22, 0, 50, 0.0625, 1.0, 0},
      {27, 0, 55, 0.00834, 3.25, 0}, {23, 0, 30, 0.025, 3.0, 0}, {13, 0, 40, 0.025, 3.0, 0},
  };

  GridSpec spec;
  for (int i = 0; i < 30; ++i) spec.buses.push_back({i, i == 0});
  int id = 0;
  for (const auto& b : branches)
    spec.lines.push_back({id++, b.f - 1, b.t - 1, b.x, -b.rate, b.rate});
  id = 0;
  for (const auto& g : gens) {
    GeneratorBid bid;
    bid.id = id++;
    bid.bus = g.bus - 1;
    bid.a = g.a;
    bid.b = g.b;
    bid.c = g.c;
    bid.g_min = g.pmin;
    bid.g_max = g.pmax;
    spec.generators.push_back(bid);
  }
  return spec;
}

VectorXd ieee30_loads() {
  VectorXd pd(30);
  pd << 0, 21.7, 2.4, 7.6, 0, 0, 22.8, 30, 0, 5.8, 0, 11.2, 0, 6.2, 8.2, 3.5, 9, 3.2, 9.5, 2.2,
      17.5, 0, 3.2, 8.7, 0, 3.5, 0, 0, 2.4, 10.6;
  return pd;
}

}  // namespace lmp
