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

#include "lmp/dcopf.hpp"
#include "lmp/grid.hpp"
#include "lmp/mix.hpp"
#include "lmp/rng.hpp"
#include "lmp/timeutil.hpp"

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace lmp {

/// Daily total-demand profile d ~ N24(mean, covariance).
struct DemandModel {
  VectorXd mean;        // 24, MW
  MatrixXd covariance;  // 24 x 24

  void scale(double c) {
    mean *= c;
    covariance *= c * c;
  }
};

/// Hourly renewable availability G_h ~ N(profile_h, profile_h * variance_scale).
struct RenewableModel {
  VectorXd profile;  // 24, MW
  double variance_scale = 0.1;
};

/// Rows of `history` are daily 24-hour profiles (at least 25). Sample
/// covariance with a ridge of 1e-8 * trace.
DemandModel fit_demand_model(const MatrixXd& history);

/// Demand draws are floored at `floor_fraction` of the mean, hour by hour.
VectorXd sample_day(const DemandModel& model, Rng& rng, double floor_fraction = 0.01);
/// Renewable draws are clamped at zero.
VectorXd sample_day(const RenewableModel& model, Rng& rng);

/// Fixed nodal shares: load bus i takes alpha_i of total demand; renewable
/// generator k (index into the bid list) takes beta_k of total availability.
struct NodalFractions {
  std::vector<int> load_buses;
  VectorXd alpha;
  std::vector<int> renewable_gens;
  VectorXd beta;

  void validate(int n, int G) const;
};

/// Positive simplex projection used after perturbing fractions.
VectorXd project_to_simplex(const VectorXd& v, double floor = 1e-6);

/// Grid, fractions and base profiles of a synthetic market.
struct MarketCase {
  GridSpec spec;  // renewable units have zero cost and type "renewable"
  NodalFractions fractions;
  double nominal_load = 0.0;    // MW, target daily average demand
  double renewable_peak = 0.0;  // MW, peak of the typical profile
};

/// IEEE 30-bus with the second and fourth generators turned into zero-cost
/// renewables. Load fractions follow the case's nominal loads; renewable
/// fractions follow the displaced units' g_max.
MarketCase ieee30_market();

/// Stylized clear-sky solar profile scaled to `peak`: a half sine between
/// 06:00 and 20:00, zero at night.
VectorXd solar_profile(double peak);

/// Synthetic history of daily total-demand profiles with an afternoon peak,
/// a persistent day-level factor and hourly noise. Average level `level`.
MatrixXd synthetic_demand_history(int days, double level, std::uint64_t seed);

/// Lines scaled uniformly by `factor`.
GridSpec scale_line_limits(GridSpec spec, double factor);

/// One instance per hour: nodal demand alpha_i d_tot(h), renewable caps
/// beta_k G(h), conventional caps from the bids. Line limits scaled.
std::vector<OpfInstance> build_instances(const GridSpec& spec, const VectorRef& day_demand,
                                         const VectorRef& day_renewable,
                                         const NodalFractions& fractions, double line_scale = 1.2);

/// Same, reusing prebuilt (already scaled) matrices.
std::vector<OpfInstance> build_instances(std::shared_ptr<const GridMatrices> matrices,
                                         const GridSpec& spec, const VectorRef& day_demand,
                                         const VectorRef& day_renewable,
                                         const NodalFractions& fractions);

struct SimulationConfig {
  int history_days = 90;
  int train_days = 90;
  int test_days = 50;
  double line_scale = 1.2;
  double variance_scale = 0.1;
  double min_feasible = 0.99;
  int max_redraws = 20;  // per day, when an hour is infeasible
  Timestamp start = 1767225600;  // 2026-01-01T00:00Z
  std::uint64_t seed = 1;
};

/// Per-hour market outcome.
struct SimulatedMarket {
  MarketCase mcase;
  std::shared_ptr<const GridMatrices> matrices;  // with scaled line limits
  DemandModel demand_model;
  RenewableModel renewable_model;
  SimulationConfig config;

  MatrixXd demand_days;     // days x 24, total demand
  MatrixXd renewable_days;  // days x 24, total renewable availability
  std::vector<Timestamp> timestamps;
  std::vector<OpfSolution> solutions;
  MatrixXd lmp;        // n x T
  MatrixXd Pi;         // (n-1) x T, mcc on non-reference buses
  MatrixXd S;          // (n-1) x T, A' D mu
  MatrixXd dispatch;   // G x T
  std::vector<int> congestion_label;  // id of the support pattern of s(t)
  std::vector<std::vector<int>> congestion_patterns;  // label -> reduced-bus support
  int attempted_hours = 0;
  int infeasible_hours = 0;
  int redrawn_days = 0;

  int days() const { return static_cast<int>(demand_days.rows()); }
  int hours() const { return static_cast<int>(timestamps.size()); }
  int train_hours() const { return 24 * config.train_days; }
  double feasibility_rate() const {
    return attempted_hours ? 1.0 - static_cast<double>(infeasible_hours) / attempted_hours : 1.0;
  }
  /// Generation by type (conventional, renewable) and system load.
  MixSeries mix(int first_hour, int count) const;
};

/// Support (reduced-bus indices) of s with |s_i| > tol.
std::vector<int> congestion_support(const VectorRef& s, double tol = 1e-6);

/// Fits the demand model to a synthetic history, scales its mean to the
/// case's nominal load and simulates train then test days.
SimulatedMarket simulate(const MarketCase& mcase, const SimulationConfig& cfg);

/// Simulates given daily profiles on the market's grid; used for re-runs
/// with perturbed fractions. Infeasible hours throw OpfInfeasible tagged
/// with the hour index.
void solve_days(const SimulatedMarket& base, const NodalFractions& fractions,
                const MatrixXd& demand_days, const MatrixXd& renewable_days, MatrixXd& lmp_out);

/// Synthetic day-ahead forecasts: pool `samples` draws per test day, cluster
/// them into typical profiles and forecast each day by the profile nearest
/// its actual.
struct SyntheticForecasts {
  MatrixXd demand;     // test days x 24
  MatrixXd renewable;  // test days x 24
  MatrixXd demand_profiles, renewable_profiles;
  double err_demand = 0.0, err_renewable = 0.0;
};

SyntheticForecasts synthesize_forecasts(const SimulatedMarket& market, int samples = 100,
                                        int n_demand_profiles = 5, int n_renewable_profiles = 2);

/// err = ||X - Xhat||_F / ||X||_F.
double relative_frobenius_error(const MatrixRef& actual, const MatrixRef& forecast);

/// Writes buses/lines/gens, prices.csv, mix.csv, load.csv,
/// congestion_truth.csv and, when given, forecast_mix.csv/forecast_load.csv.
void write_market(const SimulatedMarket& m, const std::filesystem::path& dir,
                  const SyntheticForecasts* forecasts = nullptr);

/// Long-format prices: timestamp_iso8601, node_id, lmp_usd_per_mwh.
void write_prices(const std::filesystem::path& path, const std::vector<Timestamp>& t,
                  const MatrixRef& lmp);

}  // namespace lmp
