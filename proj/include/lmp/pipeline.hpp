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

#include "lmp/market_sim.hpp"
#include "lmp/mix.hpp"
#include "lmp/pricemodel.hpp"
#include "lmp/recovery.hpp"
#include "lmp/regimes.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace lmp {

// ---------------------------------------------------------------------------
// Configuration

enum class Variant { AlgM, AlgMhat, AlgMhatArima, AlgMhatDayAgo, DayAgoNaive };

/// Names: ALG-M, ALG-Mhat, ALG-Mhat+ARIMA, ALG-Mhat+DayAgo, DayAgo.
Variant parse_variant(const std::string& s);
std::string variant_name(Variant v);

struct PipelineConfig {
  // [data]
  std::filesystem::path generation_csv, load_csv, prices_csv, congestion_labels_csv;
  std::vector<std::string> gen_types, regions;
  std::optional<Timestamp> train_start, train_end;  // inclusive
  // [predict]
  std::filesystem::path forecast_generation_csv, forecast_load_csv;
  std::filesystem::path actual_generation_csv, actual_load_csv;
  std::filesystem::path history_prices_csv;
  std::optional<Timestamp> predict_start, predict_end;
  Variant variant = Variant::AlgMhat;
  // [regimes]
  bool normalize_mix = true;
  RegimeOptions regimes;
  // [recovery]
  AdmmParams admm;
  MecProxy mec = MecProxy::Mean;
  int reference_row = 0;
  double link_threshold = 0.01;
  int congestion_k_lo = 2, congestion_k_hi = 10;
  // [pricemodel]
  MarsOptions mars;
  double half_life_days = 14.0;
  ClassifierOptions classifier;
  SmoothingConfig smoothing;
  ArmaOrder arma;
  // [retrain]
  int topology_every_days = 14;
  // [simulate]
  SimulationConfig simulation;
  // [sensitivity]
  std::vector<double> demand_levels{0.0, 0.01, 0.02, 0.03, 0.04, 0.05};
  std::vector<double> renewable_levels{0.0, 0.01, 0.02, 0.03, 0.04, 0.05};
  std::vector<double> ratio_levels{0.0, 0.01, 0.02, 0.03, 0.04};
  double fixed_demand_error = 0.01, fixed_renewable_error = 0.015;
  // [evaluate]
  double price_floor = 1.0;

  std::uint64_t seed = 1;

  /// key=value lines in a fixed order; hashed into the bundle manifest.
  std::string canonical() const;
};

/// Reads an INI file (flat key=value, [sections] per module). Relative paths
/// resolve against the file's directory. Unknown keys are an error.
PipelineConfig load_config(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Model bundle

struct RegimePriceModel {
  RegimeBaseline baseline;
  std::vector<MarsModel> mars;         // per node
  std::vector<MarsModel> mars_dayago;  // per node, extra day-ago feature
};

struct ModelBundle {
  static constexpr int kSchemaVersion = 1;
  int schema_version = kSchemaVersion;
  std::uint64_t config_hash = 0;

  std::vector<std::string> gen_types, regions;
  std::vector<long long> node_ids;
  bool normalize_mix = true;
  double mean_total = 0.0;
  Timestamp train_first = 0, train_last = 0;
  Timestamp topology_time = 0;  // train_last of the run that recovered B

  MixRegimeModel mix_model;
  RecoveredStructure recovery;
  int reference_row = 0;
  MecProxy mec = MecProxy::Mean;
  std::vector<CongestionClusters> congestion;  // per M-regime
  CongestionClassifier classifier;
  std::map<std::pair<int, int>, RegimePriceModel> price_models;
  MatrixXd regime_mean_price;  // M-regimes x nodes, fallback
  std::vector<HourlyResidualModel> residual;  // per node; empty when not fitted
  MatrixXd last_day_prices;  // nodes x 24, the final training day
  SmoothingConfig smoothing;

  int n_nodes() const { return static_cast<int>(node_ids.size()); }
};

/// Directory with manifest.txt (versions, config hash, file hashes) and one
/// little-endian binary file per model.
void save_bundle(const ModelBundle& b, const std::filesystem::path& dir);
ModelBundle load_bundle(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Training

/// Aligned training inputs: mix rows and price columns share timestamps.
struct TrainingData {
  MixSeries mix;
  PriceTable prices;
  std::vector<int> congestion_labels;  // optional, per hour
};

struct TrainingReport {
  std::vector<int> m_regime, c_regime;
  MatrixXd Pi;  // (nodes-1) x T
  int n_links = 0;
};

/// Restricts both inputs to their common timestamps inside the optional
/// window. Requires a gap-free hourly axis of at least six weeks.
TrainingData align_training_data(const MixSeries& mix, const PriceTable& prices,
                                 std::optional<Timestamp> first = {}, std::optional<Timestamp> last = {});

/// Mix features used for regimes and classification: normalized M-vectors,
/// or raw generation and load when `normalize` is off.
MatrixXd mix_features(const MixSeries& s, bool normalize, double mean_total);

/// Training Steps 0-5. Throws with a stage tag on failure.
ModelBundle train(const TrainingData& data, const PipelineConfig& cfg, TrainingReport* report = nullptr);
ModelBundle train(const PipelineConfig& cfg, TrainingReport* report = nullptr);

/// Refits baselines, price models and residual models on new data with the
/// bundle's regimes, topology and classifier (the daily MARS cadence).
ModelBundle refit_price_models(const ModelBundle& b, const TrainingData& data, const PipelineConfig& cfg);

// ---------------------------------------------------------------------------
// Prediction

struct Forecast {
  std::vector<Timestamp> timestamps;
  std::vector<long long> node_ids;
  MatrixXd raw, smoothed;  // nodes x T
  std::vector<int> m_regime, c_regime;
  std::vector<std::vector<bool>> spike;  // per node
  Variant variant = Variant::AlgMhat;

  ForecastSeries series(int node) const;
};

/// Prediction Steps 0-4 on a day-ahead mix. `history` supplies observed
/// prices for the day-ago feature and the residual-model updates; only
/// prices strictly before each forecast day are used.
Forecast predict(const ModelBundle& b, const MixSeries& input, Variant variant,
                 const PriceTable* history = nullptr);

void write_forecast(const Forecast& f, const std::filesystem::path& path);
Forecast read_forecast(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Evaluation

struct ErrorMetrics {
  double mape = 0.0;   // percent
  double mdape = 0.0;  // percent
  double rmse = 0.0;
  int used = 0, excluded = 0;  // samples above / below the price floor
};

/// Percent errors over |a| >= floor; RMSE over all samples.
ErrorMetrics error_metrics(const VectorXd& actual, const VectorXd& predicted, double floor = 1.0);

struct EvaluationReport {
  std::vector<long long> node_ids;
  std::vector<ErrorMetrics> per_node;
  ErrorMetrics pooled;
  VectorXd err_k;  // ||LMP_k - LMPhat_k||_F / ||LMP_k||_F per node
  double mean_err_k = 0.0;
  std::vector<Timestamp> days;
  std::vector<ErrorMetrics> per_day;  // pooled over nodes
  int actual_spike_events = 0, predicted_spike_events = 0, spike_hits = 0, spike_false_alarms = 0;
};

/// Compares on the common (timestamp, node) set. `use_smoothed` selects the
/// forecast column.
EvaluationReport evaluate(const PriceTable& actual, const Forecast& f, bool use_smoothed = true,
                          double floor = 1.0, const SmoothingConfig& spikes = {});

void write_report(const EvaluationReport& r, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Spikes

/// Runs of consecutive flagged samples as [first, last] index pairs.
std::vector<std::pair<Index, Index>> spike_events(const std::vector<bool>& flags);

struct SpikeReport {
  int actual_events = 0, predicted_events = 0, hits = 0, false_alarms = 0;
  double hit_rate() const { return actual_events ? static_cast<double>(hits) / actual_events : 0.0; }
};

/// An actual event is hit when a predicted event overlaps it within
/// `tolerance` samples; predicted events overlapping nothing are false alarms.
SpikeReport spike_report(const std::vector<bool>& actual, const std::vector<bool>& predicted, int tolerance = 1);

// ---------------------------------------------------------------------------
// Study on the simulator

enum class SweepAxis { Demand, Renewable, Ratio };
SweepAxis parse_axis(const std::string& s);

struct SweepPoint {
  double level = 0.0;
  double achieved = 0.0;  // realized relative error of the swept quantity
  double mean_err_k = 0.0;
  double mean_err_k_raw = 0.0;
};

/// Test-day forecast inputs with prescribed relative Frobenius errors. The
/// error direction is the typical-profile forecast error, rescaled.
MixSeries forecast_mix_at(const SimulatedMarket& m, const SyntheticForecasts& f, double demand_error,
                          double renewable_error, std::uint64_t seed);

/// Trains on the simulator's training window (or uses `bundle`), then for
/// every level predicts the test window and reports mean err_k. Ratio levels
/// perturb alpha and beta of the test actuals by a seeded direction.
std::vector<SweepPoint> sensitivity_sweep(const SimulatedMarket& m, const ModelBundle& bundle,
                                          const PipelineConfig& cfg, SweepAxis axis,
                                          const std::vector<double>& levels);

/// Steps 2-3 alone on a price window: recovery, S = B Pi and one global
/// clustering of its columns.
struct TopologyRun {
  std::vector<Timestamp> timestamps;
  std::vector<long long> node_ids;
  RecoveredStructure recovery;
  MatrixXd S;  // congestion_matrix(B, Pi), small entries zeroed
  CongestionClusters clusters;
};
TopologyRun recover_topology(const PriceTable& prices, const PipelineConfig& cfg);

/// Training data from the simulator's training window.
TrainingData training_data(const SimulatedMarket& m, bool with_truth_labels = false);
PriceTable price_table(const SimulatedMarket& m, int first_hour, int count);

}  // namespace lmp
