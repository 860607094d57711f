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

#include "lmp/market_sim.hpp"

#include "lmp/csv.hpp"
#include "lmp/regimes.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

namespace lmp {

DemandModel fit_demand_model(const MatrixXd& history) {
  if (history.cols() != 24) throw ValidationError("fit_demand_model: profiles must have 24 hours");
  if (history.rows() < 25)
    throw ValidationError("fit_demand_model: need at least 25 daily profiles, got " +
                          std::to_string(history.rows()));
  DemandModel m;
  m.mean = history.colwise().mean().transpose();
  const MatrixXd Xc = history.rowwise() - m.mean.transpose();
  m.covariance = (Xc.transpose() * Xc) / static_cast<double>(history.rows() - 1);
  m.covariance = 0.5 * (m.covariance + m.covariance.transpose());
  m.covariance.diagonal().array() += 1e-8 * m.covariance.trace();
  if (m.mean.minCoeff() <= 0.0) throw ValidationError("fit_demand_model: mean demand must be positive");
  return m;
}

VectorXd sample_day(const DemandModel& model, Rng& rng, double floor_fraction) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(model.covariance);
  const VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  VectorXd z(model.mean.size());
  for (Index h = 0; h < z.size(); ++h) z(h) = rng.normal();
  VectorXd d = model.mean + es.eigenvectors() * root.cwiseProduct(z);
  return d.cwiseMax(floor_fraction * model.mean);
}

VectorXd sample_day(const RenewableModel& model, Rng& rng) {
  VectorXd g(model.profile.size());
  for (Index h = 0; h < g.size(); ++h) {
    const double z = rng.normal();
    g(h) = model.profile(h) + std::sqrt(std::max(0.0, model.profile(h) * model.variance_scale)) * z;
  }
  return g.cwiseMax(0.0);
}

void NodalFractions::validate(int n, int G) const {
  auto check = [](const VectorXd& v, const std::vector<int>& idx, int bound, const char* what) {
    if (v.size() != static_cast<Index>(idx.size()) || v.size() == 0)
      throw ValidationError(std::string(what) + " fractions: size mismatch");
    if (v.minCoeff() <= 0.0) throw ValidationError(std::string(what) + " fractions must be > 0");
    if (std::abs(v.sum() - 1.0) > 1e-9) throw ValidationError(std::string(what) + " fractions must sum to 1");
    for (int i : idx)
      if (i < 0 || i >= bound) throw ValidationError(std::string(what) + " index out of range");
  };
  check(alpha, load_buses, n, "load");
  check(beta, renewable_gens, G, "renewable");
}

VectorXd project_to_simplex(const VectorXd& v, double floor) {
  // Euclidean projection onto {x >= floor, sum x = 1}.
  const Index n = v.size();
  const double budget = 1.0 - floor * static_cast<double>(n);
  if (budget <= 0.0) throw ValidationError("project_to_simplex: floor too large");
  VectorXd u = (v.array() - floor).matrix();
  VectorXd s = u;
  std::sort(s.data(), s.data() + n, std::greater<double>());
  double cum = 0.0, theta = 0.0;
  for (Index i = 0; i < n; ++i) {
    cum += s(i);
    const double t = (cum - budget) / static_cast<double>(i + 1);
    if (s(i) - t > 0.0) theta = t;
  }
  return ((u.array() - theta).cwiseMax(0.0) + floor).matrix();
}

MarketCase ieee30_market() {
  MarketCase mc;
  mc.spec = ieee30();
  const int renewables[] = {1, 3};
  double cap = 0.0;
  VectorXd beta(2);
  for (int k = 0; k < 2; ++k) {
    auto& g = mc.spec.generators[renewables[k]];
    beta(k) = g.g_max;
    cap += g.g_max;
    g.type = "renewable";
    g.a = g.b = g.c = 0.0;
    mc.fractions.renewable_gens.push_back(renewables[k]);
  }
  mc.fractions.beta = beta / cap;
  mc.renewable_peak = cap;

  const VectorXd pd = ieee30_loads();
  std::vector<double> a;
  for (Index i = 0; i < pd.size(); ++i)
    if (pd(i) > 0.0) {
      mc.fractions.load_buses.push_back(static_cast<int>(i));
      a.push_back(pd(i));
    }
  mc.fractions.alpha = Eigen::Map<VectorXd>(a.data(), static_cast<Index>(a.size())) / pd.sum();
  mc.nominal_load = pd.sum();
  return mc;
}

VectorXd solar_profile(double peak) {
  VectorXd p = VectorXd::Zero(24);
  for (int h = 0; h < 24; ++h) {
    const double x = (h + 0.5 - 6.0) / 14.0;
    if (x > 0.0 && x < 1.0) p(h) = std::sin(std::numbers::pi * x);
  }
  return p * (peak / p.maxCoeff());
}

MatrixXd synthetic_demand_history(int days, double level, std::uint64_t seed) {
  VectorXd shape(24);
  for (int h = 0; h < 24; ++h) {
    const double z = (h + 0.5 - 14.0) / 4.0;
    shape(h) = 0.9 + 0.2 * std::exp(-0.5 * z * z);
  }
  shape /= shape.mean();
  Rng rng(seed, "demand-history");
  MatrixXd H(days, 24);
  double f = 0.0;
  for (int d = 0; d < days; ++d) {
    f = 0.6 * f + 0.015 * rng.normal();
    for (int h = 0; h < 24; ++h) H(d, h) = level * shape(h) * (1.0 + f) * (1.0 + 0.008 * rng.normal());
  }
  return H;
}

GridSpec scale_line_limits(GridSpec spec, double factor) {
  if (!(factor > 0.0)) throw ValidationError("line scale must be positive");
  for (auto& l : spec.lines) {
    l.flow_min *= factor;
    l.flow_max *= factor;
  }
  return spec;
}

std::vector<OpfInstance> build_instances(std::shared_ptr<const GridMatrices> matrices,
                                         const GridSpec& spec, const VectorRef& day_demand,
                                         const VectorRef& day_renewable,
                                         const NodalFractions& fractions) {
  const int n = spec.n(), G = static_cast<int>(spec.generators.size());
  fractions.validate(n, G);
  if (day_demand.size() != day_renewable.size())
    throw ValidationError("build_instances: demand and renewable profiles differ in length");
  VectorXd base_caps(G);
  for (int i = 0; i < G; ++i) base_caps(i) = spec.generators[i].g_max;

  std::vector<OpfInstance> out;
  for (Index h = 0; h < day_demand.size(); ++h) {
    OpfInstance inst;
    inst.matrices = matrices;
    inst.bids = spec.generators;
    inst.allow_zero_cost = true;
    inst.demand = VectorXd::Zero(n);
    for (std::size_t j = 0; j < fractions.load_buses.size(); ++j)
      inst.demand(fractions.load_buses[j]) += fractions.alpha(static_cast<Index>(j)) * day_demand(h);
    VectorXd caps = base_caps;
    for (std::size_t k = 0; k < fractions.renewable_gens.size(); ++k)
      caps(fractions.renewable_gens[k]) = fractions.beta(static_cast<Index>(k)) * day_renewable(h);
    inst.gen_caps_override = caps;
    out.push_back(std::move(inst));
  }
  return out;
}

std::vector<OpfInstance> build_instances(const GridSpec& spec, const VectorRef& day_demand,
                                         const VectorRef& day_renewable,
                                         const NodalFractions& fractions, double line_scale) {
  auto m = std::make_shared<const GridMatrices>(build_matrices(scale_line_limits(spec, line_scale)));
  return build_instances(m, spec, day_demand, day_renewable, fractions);
}

std::vector<int> congestion_support(const VectorRef& s, double tol) {
  std::vector<int> out;
  for (Index i = 0; i < s.size(); ++i)
    if (std::abs(s(i)) > tol) out.push_back(static_cast<int>(i));
  return out;
}

MixSeries SimulatedMarket::mix(int first_hour, int count) const {
  MixSeries s;
  s.gen_types = {"conventional", "renewable"};
  s.regions = {"system"};
  s.generation.resize(count, 2);
  s.load.resize(count, 1);
  std::vector<bool> renewable(mcase.spec.generators.size(), false);
  for (int k : mcase.fractions.renewable_gens) renewable[k] = true;
  for (int t = 0; t < count; ++t) {
    const int T = first_hour + t;
    s.timestamps.push_back(timestamps[T]);
    double conv = 0.0, ren = 0.0;
    for (Index i = 0; i < dispatch.rows(); ++i) (renewable[i] ? ren : conv) += std::max(0.0, dispatch(i, T));
    s.generation.row(t) << conv, ren;
    s.load(t, 0) = demand_days(T / 24, T % 24);
  }
  return s;
}

SimulatedMarket simulate(const MarketCase& mcase, const SimulationConfig& cfg) {
  SimulatedMarket m;
  m.mcase = mcase;
  m.config = cfg;
  m.matrices = std::make_shared<const GridMatrices>(
      build_matrices(scale_line_limits(mcase.spec, cfg.line_scale)));

  m.demand_model = fit_demand_model(synthetic_demand_history(cfg.history_days, mcase.nominal_load, cfg.seed));
  m.demand_model.scale(mcase.nominal_load / m.demand_model.mean.mean());
  m.renewable_model.profile = solar_profile(mcase.renewable_peak);
  m.renewable_model.variance_scale = cfg.variance_scale;

  const int days = cfg.train_days + cfg.test_days;
  const int n = mcase.spec.n(), G = static_cast<int>(mcase.spec.generators.size());
  const int T = 24 * days;
  m.demand_days.resize(days, 24);
  m.renewable_days.resize(days, 24);
  m.lmp.resize(n, T);
  m.Pi.resize(n - 1, T);
  m.S.resize(n - 1, T);
  m.dispatch.resize(G, T);
  m.solutions.resize(T);
  std::map<std::vector<int>, int> pattern_id;

  for (int d = 0; d < days; ++d) {
    bool done = false;
    for (int r = 0; r <= cfg.max_redraws && !done; ++r) {
      const std::uint64_t stream = static_cast<std::uint64_t>(d) * 1024 + static_cast<std::uint64_t>(r);
      Rng rd(cfg.seed, "sim-demand", stream), rg(cfg.seed, "sim-renewable", stream);
      const VectorXd dd = sample_day(m.demand_model, rd);
      const VectorXd gg = sample_day(m.renewable_model, rg);
      const auto insts = build_instances(m.matrices, mcase.spec, dd, gg, mcase.fractions);
      std::vector<OpfSolution> sols;
      try {
        for (const auto& inst : insts) {
          ++m.attempted_hours;
          sols.push_back(solve(inst));
        }
      } catch (const OpfInfeasible&) {
        ++m.infeasible_hours;
        ++m.redrawn_days;
        continue;
      }
      m.demand_days.row(d) = dd.transpose();
      m.renewable_days.row(d) = gg.transpose();
      for (int h = 0; h < 24; ++h) {
        const int t = 24 * d + h;
        auto& s = sols[h];
        m.lmp.col(t) = s.lmp;
        m.Pi.col(t) = m.matrices->reduce(s.mcc);
        m.S.col(t) = s.congestion_vector;
        m.dispatch.col(t) = s.dispatch;
        m.solutions[t] = std::move(s);
      }
      done = true;
    }
    if (!done)
      throw InfeasibleError("simulate: day " + std::to_string(d) + " infeasible after " +
                            std::to_string(cfg.max_redraws) + " redraws");
  }
  if (m.feasibility_rate() < cfg.min_feasible) {
    std::ostringstream msg;
    msg << "simulate: feasibility rate " << m.feasibility_rate() << " below " << cfg.min_feasible << " ("
        << m.infeasible_hours << " infeasible of " << m.attempted_hours << " hours)";
    throw InfeasibleError(msg.str());
  }

  for (int t = 0; t < T; ++t) {
    m.timestamps.push_back(cfg.start + static_cast<Timestamp>(t) * kSecondsPerHour);
    const auto sup = congestion_support(m.S.col(t));
    auto [it, fresh] = pattern_id.emplace(sup, static_cast<int>(m.congestion_patterns.size()));
    if (fresh) m.congestion_patterns.push_back(sup);
    m.congestion_label.push_back(it->second);
  }
  return m;
}

void solve_days(const SimulatedMarket& base, const NodalFractions& fractions,
                const MatrixXd& demand_days, const MatrixXd& renewable_days, MatrixXd& lmp_out) {
  const int days = static_cast<int>(demand_days.rows());
  lmp_out.resize(base.mcase.spec.n(), 24 * days);
  for (int d = 0; d < days; ++d) {
    const auto insts = build_instances(base.matrices, base.mcase.spec, demand_days.row(d).transpose(),
                                       renewable_days.row(d).transpose(), fractions);
    for (int h = 0; h < 24; ++h) {
      try {
        lmp_out.col(24 * d + h) = solve(insts[h]).lmp;
      } catch (const OpfInfeasible& e) {
        throw OpfInfeasible("hour " + std::to_string(24 * d + h) + ": " + e.what(), e.violated);
      }
    }
  }
}

double relative_frobenius_error(const MatrixRef& actual, const MatrixRef& forecast) {
  if (actual.rows() != forecast.rows() || actual.cols() != forecast.cols())
    throw ValidationError("relative_frobenius_error: shape mismatch");
  const double den = actual.norm();
  if (!(den > 0.0)) throw ValidationError("relative_frobenius_error: zero actual matrix");
  return (actual - forecast).norm() / den;
}

SyntheticForecasts synthesize_forecasts(const SimulatedMarket& market, int samples,
                                        int n_demand_profiles, int n_renewable_profiles) {
  const int first = market.config.train_days, days = market.config.test_days;
  const std::uint64_t seed = market.config.seed;
  MatrixXd D(static_cast<Index>(days) * samples, 24), R(static_cast<Index>(days) * samples, 24);
  for (int i = 0; i < days; ++i)
    for (int s = 0; s < samples; ++s) {
      const std::uint64_t k = static_cast<std::uint64_t>(i) * samples + s;
      Rng rd(seed, "forecast-demand", k), rg(seed, "forecast-renewable", k);
      D.row(static_cast<Index>(k)) = sample_day(market.demand_model, rd).transpose();
      R.row(static_cast<Index>(k)) = sample_day(market.renewable_model, rg).transpose();
    }
  SyntheticForecasts f;
  f.demand_profiles = fit_kmeans(D, n_demand_profiles, seed ^ 0x64656dULL).centroids;
  f.renewable_profiles = fit_kmeans(R, n_renewable_profiles, seed ^ 0x72656eULL).centroids;
  f.demand.resize(days, 24);
  f.renewable.resize(days, 24);
  for (int i = 0; i < days; ++i) {
    const VectorXd d = market.demand_days.row(first + i).transpose();
    const VectorXd g = market.renewable_days.row(first + i).transpose();
    f.demand.row(i) = f.demand_profiles.row(nearest_centroid(f.demand_profiles, d));
    f.renewable.row(i) = f.renewable_profiles.row(nearest_centroid(f.renewable_profiles, g));
  }
  f.err_demand = relative_frobenius_error(market.demand_days.middleRows(first, days), f.demand);
  f.err_renewable = relative_frobenius_error(market.renewable_days.middleRows(first, days), f.renewable);
  return f;
}

void write_prices(const std::filesystem::path& path, const std::vector<Timestamp>& t,
                  const MatrixRef& lmp) {
  csv::Writer w(path, {"timestamp_iso8601", "node_id", "lmp_usd_per_mwh"});
  for (Index c = 0; c < lmp.cols(); ++c)
    for (Index i = 0; i < lmp.rows(); ++i) {
      w << format_iso8601(t[static_cast<std::size_t>(c)]) << static_cast<long long>(i) << lmp(i, c);
      w.end_row();
    }
}

void write_market(const SimulatedMarket& m, const std::filesystem::path& dir,
                  const SyntheticForecasts* forecasts) {
  std::filesystem::create_directories(dir);
  save_grid(scale_line_limits(m.mcase.spec, m.config.line_scale), dir);
  write_prices(dir / "prices.csv", m.timestamps, m.lmp);
  write_mix(m.mix(0, m.hours()), dir / "mix.csv", dir / "load.csv");
  {
    csv::Writer w(dir / "congestion_truth.csv", {"timestamp_iso8601", "label", "support", "binding"});
    for (int t = 0; t < m.hours(); ++t) {
      std::string sup, bind;
      for (int i : m.congestion_patterns[m.congestion_label[t]])
        sup += (sup.empty() ? "" : ";") + std::to_string(i);
      for (int b : m.solutions[t].binding_set) bind += (bind.empty() ? "" : ";") + std::to_string(b);
      w << format_iso8601(m.timestamps[t]) << m.congestion_label[t] << sup << bind;
      w.end_row();
    }
  }
  if (!forecasts) return;
  MixSeries f;
  f.gen_types = {"conventional", "renewable"};
  f.regions = {"system"};
  const int first = 24 * m.config.train_days, T = 24 * m.config.test_days;
  f.generation.resize(T, 2);
  f.load.resize(T, 1);
  for (int t = 0; t < T; ++t) {
    f.timestamps.push_back(m.timestamps[first + t]);
    const double d = forecasts->demand(t / 24, t % 24), g = std::min(forecasts->renewable(t / 24, t % 24), d);
    f.generation.row(t) << d - g, g;
    f.load(t, 0) = d;
  }
  write_mix(f, dir / "forecast_mix.csv", dir / "forecast_load.csv");
}

}  // namespace lmp
