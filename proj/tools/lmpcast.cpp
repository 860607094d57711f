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

// lmpcast: nodal price forecasting from generation mix and recovered topology.

#include "lmp/csv.hpp"
#include "lmp/log.hpp"
#include "lmp/market_sim.hpp"
#include "lmp/pipeline.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <string>

namespace fs = std::filesystem;
using namespace lmp;

namespace {

struct Globals {
  std::string config;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out = ".";
  std::string variant;
};

PipelineConfig load(const Globals& g) {
  PipelineConfig cfg = g.config.empty() ? PipelineConfig{} : load_config(g.config);
  if (g.seed_set) {
    cfg.seed = g.seed;
    cfg.simulation.seed = g.seed;
  }
  if (!g.variant.empty()) cfg.variant = parse_variant(g.variant);
  return cfg;
}

PipelineConfig simulator_defaults(PipelineConfig cfg, const Globals& g) {
  // The 30-bus study uses raw mix values without PCA.
  if (g.config.empty()) {
    cfg.normalize_mix = false;
    cfg.regimes.use_pca = false;
  }
  return cfg;
}

// Keeps rows of a mix series inside [first, last].
MixSeries window(const MixSeries& s, std::optional<Timestamp> first, std::optional<Timestamp> last) {
  if (!first && !last) return s;
  MixSeries w;
  w.gen_types = s.gen_types;
  w.regions = s.regions;
  std::vector<Index> rows;
  for (Index r = 0; r < s.size(); ++r) {
    const Timestamp t = s.timestamps[static_cast<std::size_t>(r)];
    if ((!first || t >= *first) && (!last || t <= *last)) rows.push_back(r);
  }
  w.generation.resize(static_cast<Index>(rows.size()), s.generation.cols());
  w.load.resize(static_cast<Index>(rows.size()), s.load.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    w.timestamps.push_back(s.timestamps[static_cast<std::size_t>(rows[k])]);
    w.generation.row(static_cast<Index>(k)) = s.generation.row(rows[k]);
    w.load.row(static_cast<Index>(k)) = s.load.row(rows[k]);
  }
  return w;
}

void write_config_template(const fs::path& dir, const SimulatedMarket& m) {
  const auto at = [&](int h) { return format_iso8601(m.timestamps[static_cast<std::size_t>(h)]); };
  std::ofstream o(dir / "lmpcast.ini");
  o << "seed = " << m.config.seed << "\n\n"
    << "[data]\n"
    << "generation_csv = mix.csv\n"
    << "load_csv = load.csv\n"
    << "prices_csv = prices.csv\n"
    << "train_start = " << at(0) << "\n"
    << "train_end = " << at(m.train_hours() - 1) << "\n\n"
    << "[predict]\n"
    << "forecast_generation_csv = forecast_mix.csv\n"
    << "forecast_load_csv = forecast_load.csv\n"
    << "actual_generation_csv = mix.csv\n"
    << "actual_load_csv = load.csv\n"
    << "history_prices_csv = prices.csv\n"
    << "start = " << at(m.train_hours()) << "\n"
    << "end = " << at(m.hours() - 1) << "\n"
    << "variant = ALG-Mhat\n\n"
    << "[regimes]\n"
    << "normalize_mix = false\n"
    << "use_pca = false\n";
}

int cmd_simulate(const Globals& g) {
  const PipelineConfig cfg = load(g);
  const fs::path out(g.out);
  const SimulatedMarket m = simulate(ieee30_market(), cfg.simulation);
  const SyntheticForecasts f = synthesize_forecasts(m);
  write_market(m, out, &f);
  if (!fs::exists(out / "lmpcast.ini")) write_config_template(out, m);
  std::cout << "simulated " << m.hours() << " hours, feasibility " << m.feasibility_rate()
            << ", forecast error demand " << f.err_demand << " renewable " << f.err_renewable << '\n';
  return 0;
}

int cmd_recover(const Globals& g) {
  const PipelineConfig cfg = load(g);
  if (cfg.prices_csv.empty()) throw ConfigError("[data] prices_csv is required");
  PriceTable prices = read_prices(cfg.prices_csv);
  if (cfg.train_start || cfg.train_end) {
    std::vector<Index> cols;
    for (std::size_t c = 0; c < prices.timestamps.size(); ++c) {
      const Timestamp t = prices.timestamps[c];
      if ((!cfg.train_start || t >= *cfg.train_start) && (!cfg.train_end || t <= *cfg.train_end))
        cols.push_back(static_cast<Index>(c));
    }
    PriceTable w;
    w.node_ids = prices.node_ids;
    w.lmp.resize(prices.lmp.rows(), static_cast<Index>(cols.size()));
    for (std::size_t k = 0; k < cols.size(); ++k) {
      w.timestamps.push_back(prices.timestamps[static_cast<std::size_t>(cols[k])]);
      w.lmp.col(static_cast<Index>(k)) = prices.lmp.col(cols[k]);
    }
    prices = std::move(w);
  }
  const TopologyRun run = recover_topology(prices, cfg);
  const fs::path out(g.out);
  fs::create_directories(out);
  const MatrixXd B_hat = normalize_B(run.recovery.B);
  // B drops the reference row; name its rows by the remaining node ids.
  std::vector<long long> ids;
  for (std::size_t r = 0; r < run.node_ids.size(); ++r)
    if (static_cast<int>(r) != cfg.reference_row) ids.push_back(run.node_ids[r]);
  write_topology(out / "topology.csv", B_hat, cfg.link_threshold, ids);
  {
    csv::Writer w(out / "congestion_labels.csv", {"timestamp_iso8601", "label"});
    for (std::size_t t = 0; t < run.timestamps.size(); ++t) {
      w << format_iso8601(run.timestamps[t]) << run.clusters.labels[t];
      w.end_row();
    }
  }
  std::cout << "iterations " << run.recovery.iterations << (run.recovery.converged ? " (converged)" : " (not converged)")
            << ", links " << count_links(B_hat, cfg.link_threshold) << ", congestion regimes " << run.clusters.k()
            << '\n';
  return 0;
}

int cmd_train(const Globals& g) {
  const PipelineConfig cfg = load(g);
  TrainingReport rep;
  const ModelBundle b = train(cfg, &rep);
  save_bundle(b, g.out);
  std::cout << "bundle " << g.out << ": " << b.mix_model.n_regimes() << " M-regimes, " << b.price_models.size()
            << " price models, " << rep.n_links << " links\n";
  return 0;
}

int cmd_predict(const Globals& g, const std::string& bundle_dir) {
  const PipelineConfig cfg = load(g);
  const ModelBundle b = load_bundle(bundle_dir);
  const bool actual = cfg.variant == Variant::AlgM;
  const fs::path gen = actual ? cfg.actual_generation_csv : cfg.forecast_generation_csv;
  const fs::path load = actual ? cfg.actual_load_csv : cfg.forecast_load_csv;
  if (gen.empty() || load.empty())
    throw ConfigError(std::string("[predict] ") + (actual ? "actual" : "forecast") +
                      "_generation_csv and _load_csv are required");
  const MixSeries input = window(read_mix(gen, load, b.gen_types, b.regions), cfg.predict_start, cfg.predict_end);
  std::optional<PriceTable> history;
  if (!cfg.history_prices_csv.empty()) history = read_prices(cfg.history_prices_csv);
  const Forecast f = predict(b, input, cfg.variant, history ? &*history : nullptr);
  write_forecast(f, fs::path(g.out) / "forecast.csv");
  std::cout << variant_name(cfg.variant) << ": " << f.timestamps.size() << " hours x " << f.node_ids.size()
            << " nodes -> " << (fs::path(g.out) / "forecast.csv").string() << '\n';
  return 0;
}

int cmd_evaluate(const Globals& g, const std::string& actual_csv, const std::string& forecast_csv, bool raw) {
  const PipelineConfig cfg = load(g);
  const fs::path actual = actual_csv.empty() ? cfg.history_prices_csv : fs::path(actual_csv);
  if (actual.empty()) throw ConfigError("evaluate: --actual or [predict] history_prices_csv is required");
  const EvaluationReport r = evaluate(read_prices(actual), read_forecast(forecast_csv), !raw, cfg.price_floor, cfg.smoothing);
  write_report(r, fs::path(g.out) / "report.csv");
  std::cout << "MAPE " << r.pooled.mape << "% MdAPE " << r.pooled.mdape << "% RMSE " << r.pooled.rmse
            << " mean err_k " << r.mean_err_k << " (excluded " << r.pooled.excluded << ")\n";
  return 0;
}

int cmd_sensitivity(const Globals& g, const std::vector<std::string>& axes) {
  const PipelineConfig cfg = simulator_defaults(load(g), g);
  const SimulatedMarket m = simulate(ieee30_market(), cfg.simulation);
  const ModelBundle b = train(training_data(m), cfg);
  fs::create_directories(g.out);
  csv::Writer w(fs::path(g.out) / "sensitivity.csv", {"axis", "level", "achieved", "mean_err_k", "mean_err_k_raw"});
  for (const auto& name : axes) {
    const SweepAxis axis = parse_axis(name);
    const auto& levels = axis == SweepAxis::Demand ? cfg.demand_levels
                         : axis == SweepAxis::Renewable ? cfg.renewable_levels
                                                        : cfg.ratio_levels;
    for (const auto& p : sensitivity_sweep(m, b, cfg, axis, levels)) {
      w << name << p.level << p.achieved << p.mean_err_k << p.mean_err_k_raw;
      w.end_row();
      std::cout << name << " " << p.level << ": err_k " << 100.0 * p.mean_err_k << "%\n";
    }
  }
  return 0;
}

int cmd_spike_report(const Globals& g, const std::string& actual_csv, const std::string& forecast_csv) {
  const PipelineConfig cfg = load(g);
  const fs::path actual = actual_csv.empty() ? cfg.history_prices_csv : fs::path(actual_csv);
  if (actual.empty()) throw ConfigError("spike-report: --actual or [predict] history_prices_csv is required");
  const EvaluationReport r = evaluate(read_prices(actual), read_forecast(forecast_csv), true, cfg.price_floor, cfg.smoothing);
  fs::create_directories(g.out);
  csv::Writer w(fs::path(g.out) / "spikes.csv", {"actual_events", "predicted_events", "hits", "false_alarms", "hit_rate"});
  SpikeReport s{r.actual_spike_events, r.predicted_spike_events, r.spike_hits, r.spike_false_alarms};
  w << s.actual_events << s.predicted_events << s.hits << s.false_alarms << s.hit_rate();
  w.end_row();
  std::cout << "actual events " << s.actual_events << ", predicted " << s.predicted_events << ", hits " << s.hits
            << ", false alarms " << s.false_alarms << ", hit rate " << s.hit_rate() << '\n';
  return 0;
}

int cmd_retrain(const Globals& g, const std::string& bundle_dir, bool full) {
  const PipelineConfig cfg = load(g);
  const ModelBundle old = load_bundle(bundle_dir);
  const MixSeries mix = read_mix(cfg.generation_csv, cfg.load_csv, old.gen_types, old.regions);
  TrainingData data = align_training_data(mix, read_prices(cfg.prices_csv), cfg.train_start, cfg.train_end);
  const double days = static_cast<double>(data.mix.timestamps.back() - old.topology_time) / kSecondsPerDay;
  if (full || days >= cfg.topology_every_days) {
    save_bundle(train(cfg), g.out);
    std::cout << "full retrain (topology age " << days << " days)\n";
  } else {
    save_bundle(refit_price_models(old, data, cfg), g.out);
    std::cout << "price models refit (topology age " << days << " days)\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lmpcast: nodal price forecasting from generation mix and recovered topology"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "INI configuration file");
  app.add_option("--seed", g.seed, "random seed")->each([&](const std::string&) { g.seed_set = true; });
  app.add_option("--out", g.out, "output directory");
  app.add_option("--variant", g.variant, "ALG-M, ALG-Mhat, ALG-Mhat+ARIMA, ALG-Mhat+DayAgo or DayAgo");

  auto* simulate = app.add_subcommand("simulate", "simulate the IEEE 30-bus market and write its CSVs");
  auto* recover = app.add_subcommand("recover", "recover topology and congestion regimes from prices");
  auto* trn = app.add_subcommand("train", "train a model bundle");
  std::string bundle_dir;
  auto* pred = app.add_subcommand("predict", "write forecast.csv from a bundle and day-ahead inputs");
  pred->add_option("--bundle", bundle_dir, "bundle directory")->required();
  std::string actual_csv, forecast_csv;
  bool raw = false;
  auto* eval = app.add_subcommand("evaluate", "compare a forecast with actual prices");
  eval->add_option("--actual", actual_csv, "actual prices.csv");
  eval->add_option("--forecast", forecast_csv, "forecast.csv")->required();
  eval->add_flag("--raw", raw, "score the raw instead of the smoothed forecast");
  std::vector<std::string> axes{"demand", "renewable", "ratio"};
  auto* sens = app.add_subcommand("sensitivity", "forecast error versus input error on the simulator");
  sens->add_option("--axis", axes, "demand, renewable and/or ratio");
  auto* spikes = app.add_subcommand("spike-report", "event-level spike hits of a forecast");
  spikes->add_option("--actual", actual_csv, "actual prices.csv");
  spikes->add_option("--forecast", forecast_csv, "forecast.csv")->required();
  bool full = false;
  auto* retrain = app.add_subcommand("retrain", "refit price models, or retrain fully when the topology is due");
  retrain->add_option("--bundle", bundle_dir, "current bundle directory")->required();
  retrain->add_flag("--full", full, "force a full retrain");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*simulate) return cmd_simulate(g);
    if (*recover) return cmd_recover(g);
    if (*trn) return cmd_train(g);
    if (*pred) return cmd_predict(g, bundle_dir);
    if (*eval) return cmd_evaluate(g, actual_csv, forecast_csv, raw);
    if (*sens) return cmd_sensitivity(g, axes);
    if (*spikes) return cmd_spike_report(g, actual_csv, forecast_csv);
    if (*retrain) return cmd_retrain(g, bundle_dir, full);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
