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

#include "lmp/pipeline.hpp"

#include "lmp/binio.hpp"
#include "lmp/csv.hpp"
#include "lmp/log.hpp"
#include "lmp/rng.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

namespace lmp {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Variants

Variant parse_variant(const std::string& s) {
  if (s == "ALG-M" || s == "alg-m") return Variant::AlgM;
  if (s == "ALG-Mhat" || s == "alg-mhat") return Variant::AlgMhat;
  if (s == "ALG-Mhat+ARIMA" || s == "alg-mhat+arima") return Variant::AlgMhatArima;
  if (s == "ALG-Mhat+DayAgo" || s == "alg-mhat+dayago") return Variant::AlgMhatDayAgo;
  if (s == "DayAgo" || s == "dayago") return Variant::DayAgoNaive;
  throw ConfigError("unknown variant '" + s +
                    "' (ALG-M, ALG-Mhat, ALG-Mhat+ARIMA, ALG-Mhat+DayAgo, DayAgo)");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::AlgM: return "ALG-M";
    case Variant::AlgMhat: return "ALG-Mhat";
    case Variant::AlgMhatArima: return "ALG-Mhat+ARIMA";
    case Variant::AlgMhatDayAgo: return "ALG-Mhat+DayAgo";
    case Variant::DayAgoNaive: return "DayAgo";
  }
  return "";
}

// ---------------------------------------------------------------------------
// Configuration

namespace {

std::string mec_name(MecProxy p) {
  switch (p) {
    case MecProxy::Mean: return "mean";
    case MecProxy::Median: return "median";
    case MecProxy::Reference: return "reference";
  }
  return "";
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  for (std::string item; std::getline(in, item, ',');) {
    const auto b = item.find_first_not_of(" \t");
    const auto e = item.find_last_not_of(" \t");
    if (b != std::string::npos) out.push_back(item.substr(b, e - b + 1));
  }
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string s;
  for (const auto& x : v) s += (s.empty() ? "" : ",") + x;
  return s;
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : ",") + csv::format_number(x);
  return s;
}

class Ini {
 public:
  Ini(const fs::path& path) : path_(path) {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
    try {
      boost::property_tree::ini_parser::read_ini(path.string(), tree_);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ConfigError("config " + path.string() + ": " + e.message() + " at line " + std::to_string(e.line()));
    }
  }

  std::optional<std::string> raw(const std::string& key) {
    used_.insert(key);
    const auto v = tree_.get_optional<std::string>(boost::property_tree::ptree::path_type(key, '.'));
    if (!v || v->empty()) return std::nullopt;
    return *v;
  }

  void get(const std::string& key, double& out) {
    if (auto v = raw(key)) out = parse<double>(key, *v);
  }
  void get(const std::string& key, int& out) {
    if (auto v = raw(key)) out = parse<int>(key, *v);
  }
  void get(const std::string& key, std::uint64_t& out) {
    if (auto v = raw(key)) out = parse<std::uint64_t>(key, *v);
  }
  void get(const std::string& key, bool& out) {
    if (auto v = raw(key)) {
      if (*v == "true" || *v == "1" || *v == "yes") out = true;
      else if (*v == "false" || *v == "0" || *v == "no") out = false;
      else throw ConfigError("config " + path_.string() + ": " + key + " is not a boolean: " + *v);
    }
  }
  void get(const std::string& key, fs::path& out) {
    if (auto v = raw(key)) {
      const fs::path p(*v);
      out = p.is_absolute() ? p : path_.parent_path() / p;
    }
  }
  void get(const std::string& key, std::vector<std::string>& out) {
    if (auto v = raw(key)) out = split_list(*v);
  }
  void get(const std::string& key, std::vector<double>& out) {
    if (auto v = raw(key)) {
      out.clear();
      for (const auto& x : split_list(*v)) out.push_back(parse<double>(key, x));
    }
  }
  void get(const std::string& key, std::optional<Timestamp>& out) {
    if (auto v = raw(key)) {
      try {
        out = parse_iso8601(*v);
      } catch (const Error&) {
        throw ConfigError("config " + path_.string() + ": " + key + " is not a timestamp: " + *v);
      }
    }
  }
  void get(const std::string& key, Timestamp& out) {
    std::optional<Timestamp> t;
    get(key, t);
    if (t) out = *t;
  }

  /// Rejects keys that were never requested.
  void check_unused() const {
    for (const auto& [section, child] : tree_) {
      if (child.empty()) {
        if (!used_.count(section)) throw ConfigError("config " + path_.string() + ": unknown key " + section);
        continue;
      }
      for (const auto& [key, value] : child) {
        const std::string full = section + "." + key;
        if (!used_.count(full)) throw ConfigError("config " + path_.string() + ": unknown key " + full);
      }
    }
  }

 private:
  template <class T>
  T parse(const std::string& key, const std::string& v) const {
    std::istringstream in(v);
    T x{};
    in >> x;
    if (in.fail() || !in.eof())
      throw ConfigError("config " + path_.string() + ": " + key + " has invalid value '" + v + "'");
    return x;
  }

  fs::path path_;
  boost::property_tree::ptree tree_;
  std::set<std::string> used_;
};

}  // namespace

PipelineConfig load_config(const fs::path& path) {
  Ini ini(path);
  PipelineConfig c;
  ini.get("seed", c.seed);
  ini.get("general.seed", c.seed);

  ini.get("data.generation_csv", c.generation_csv);
  ini.get("data.load_csv", c.load_csv);
  ini.get("data.prices_csv", c.prices_csv);
  ini.get("data.congestion_labels_csv", c.congestion_labels_csv);
  ini.get("data.gen_types", c.gen_types);
  ini.get("data.regions", c.regions);
  ini.get("data.train_start", c.train_start);
  ini.get("data.train_end", c.train_end);

  ini.get("predict.forecast_generation_csv", c.forecast_generation_csv);
  ini.get("predict.forecast_load_csv", c.forecast_load_csv);
  ini.get("predict.actual_generation_csv", c.actual_generation_csv);
  ini.get("predict.actual_load_csv", c.actual_load_csv);
  ini.get("predict.history_prices_csv", c.history_prices_csv);
  ini.get("predict.start", c.predict_start);
  ini.get("predict.end", c.predict_end);
  if (auto v = ini.raw("predict.variant")) c.variant = parse_variant(*v);

  ini.get("regimes.normalize_mix", c.normalize_mix);
  ini.get("regimes.use_pca", c.regimes.use_pca);
  ini.get("regimes.variance_target", c.regimes.variance_target);
  ini.get("regimes.k", c.regimes.k);
  ini.get("regimes.k_lo", c.regimes.k_lo);
  ini.get("regimes.k_hi", c.regimes.k_hi);
  ini.get("regimes.n_restarts", c.regimes.n_restarts);
  ini.get("regimes.hour_of_day", c.regimes.hour_of_day);

  ini.get("admm.kappa1", c.admm.kappa1);
  ini.get("admm.kappa2", c.admm.kappa2);
  ini.get("admm.rho", c.admm.rho);
  ini.get("admm.epsilon", c.admm.epsilon);
  ini.get("admm.epsilon_rel", c.admm.epsilon_rel);
  ini.get("admm.input_mean_abs", c.admm.input_mean_abs);
  ini.get("admm.consensus_tol", c.admm.consensus_tol);
  ini.get("admm.max_iters", c.admm.max_iters);
  ini.get("admm.shrink_weight", c.admm.shrink_weight);

  if (auto v = ini.raw("recovery.mec_proxy")) c.mec = parse_mec_proxy(*v);
  ini.get("recovery.reference_row", c.reference_row);
  ini.get("recovery.link_threshold", c.link_threshold);
  ini.get("recovery.k_lo", c.congestion_k_lo);
  ini.get("recovery.k_hi", c.congestion_k_hi);

  ini.get("mars.max_terms", c.mars.max_terms);
  ini.get("mars.gcv_penalty", c.mars.gcv_penalty);
  ini.get("mars.tail", c.mars.tail);
  ini.get("mars.min_gain", c.mars.min_gain);
  ini.get("mars.half_life_days", c.half_life_days);

  ini.get("classifier.l2", c.classifier.l2);
  ini.get("classifier.grad_tol", c.classifier.grad_tol);
  ini.get("classifier.max_iters", c.classifier.max_iters);
  ini.get("classifier.min_class_samples", c.classifier.min_class_samples);

  ini.get("smoothing.k_mad", c.smoothing.k_mad);
  ini.get("smoothing.window", c.smoothing.window);
  ini.get("smoothing.median_window", c.smoothing.median_window);

  ini.get("arima.d", c.arma.d);
  ini.get("arima.q", c.arma.q);

  ini.get("retrain.topology_every_days", c.topology_every_days);

  ini.get("simulate.history_days", c.simulation.history_days);
  ini.get("simulate.train_days", c.simulation.train_days);
  ini.get("simulate.test_days", c.simulation.test_days);
  ini.get("simulate.line_scale", c.simulation.line_scale);
  ini.get("simulate.variance_scale", c.simulation.variance_scale);
  ini.get("simulate.min_feasible", c.simulation.min_feasible);
  ini.get("simulate.max_redraws", c.simulation.max_redraws);
  ini.get("simulate.start", c.simulation.start);

  ini.get("sensitivity.demand_levels", c.demand_levels);
  ini.get("sensitivity.renewable_levels", c.renewable_levels);
  ini.get("sensitivity.ratio_levels", c.ratio_levels);
  ini.get("sensitivity.fixed_demand_error", c.fixed_demand_error);
  ini.get("sensitivity.fixed_renewable_error", c.fixed_renewable_error);

  ini.get("evaluate.price_floor", c.price_floor);
  ini.check_unused();

  c.simulation.seed = c.seed;
  c.admm.validate();
  c.smoothing.validate();
  if (c.half_life_days <= 0.0) throw ConfigError("mars.half_life_days must be positive");
  if (c.arma.d < 0 || c.arma.d > 1 || c.arma.q < 0 || c.arma.q > 1)
    throw ConfigError("arima.d and arima.q must be 0 or 1");
  if (c.topology_every_days < 1) throw ConfigError("retrain.topology_every_days must be >= 1");
  return c;
}

std::string PipelineConfig::canonical() const {
  std::ostringstream o;
  auto ts = [](const std::optional<Timestamp>& t) { return t ? format_iso8601(*t) : std::string(); };
  auto num = [](double v) { return csv::format_number(v); };
  o << "seed=" << seed << '\n'
    << "data.generation_csv=" << generation_csv.string() << '\n'
    << "data.load_csv=" << load_csv.string() << '\n'
    << "data.prices_csv=" << prices_csv.string() << '\n'
    << "data.congestion_labels_csv=" << congestion_labels_csv.string() << '\n'
    << "data.gen_types=" << join(gen_types) << '\n'
    << "data.regions=" << join(regions) << '\n'
    << "data.train_start=" << ts(train_start) << '\n'
    << "data.train_end=" << ts(train_end) << '\n'
    << "regimes.normalize_mix=" << normalize_mix << '\n'
    << "regimes.use_pca=" << regimes.use_pca << '\n'
    << "regimes.variance_target=" << num(regimes.variance_target) << '\n'
    << "regimes.k=" << regimes.k << '\n'
    << "regimes.k_lo=" << regimes.k_lo << '\n'
    << "regimes.k_hi=" << regimes.k_hi << '\n'
    << "regimes.n_restarts=" << regimes.n_restarts << '\n'
    << "regimes.hour_of_day=" << regimes.hour_of_day << '\n'
    << "admm.kappa1=" << num(admm.kappa1) << '\n'
    << "admm.kappa2=" << num(admm.kappa2) << '\n'
    << "admm.rho=" << num(admm.rho) << '\n'
    << "admm.epsilon=" << num(admm.epsilon) << '\n'
    << "admm.epsilon_rel=" << num(admm.epsilon_rel) << '\n'
    << "admm.input_mean_abs=" << num(admm.input_mean_abs) << '\n'
    << "admm.consensus_tol=" << num(admm.consensus_tol) << '\n'
    << "admm.max_iters=" << admm.max_iters << '\n'
    << "admm.shrink_weight=" << num(admm.shrink_weight) << '\n'
    << "recovery.mec_proxy=" << mec_name(mec) << '\n'
    << "recovery.reference_row=" << reference_row << '\n'
    << "recovery.link_threshold=" << num(link_threshold) << '\n'
    << "recovery.k_lo=" << congestion_k_lo << '\n'
    << "recovery.k_hi=" << congestion_k_hi << '\n'
    << "mars.max_terms=" << mars.max_terms << '\n'
    << "mars.gcv_penalty=" << num(mars.gcv_penalty) << '\n'
    << "mars.tail=" << num(mars.tail) << '\n'
    << "mars.min_gain=" << num(mars.min_gain) << '\n'
    << "mars.half_life_days=" << num(half_life_days) << '\n'
    << "classifier.l2=" << num(classifier.l2) << '\n'
    << "classifier.grad_tol=" << num(classifier.grad_tol) << '\n'
    << "classifier.max_iters=" << classifier.max_iters << '\n'
    << "classifier.min_class_samples=" << classifier.min_class_samples << '\n'
    << "smoothing.k_mad=" << num(smoothing.k_mad) << '\n'
    << "smoothing.window=" << smoothing.window << '\n'
    << "smoothing.median_window=" << smoothing.median_window << '\n'
    << "arima.d=" << arma.d << '\n'
    << "arima.q=" << arma.q << '\n'
    << "retrain.topology_every_days=" << topology_every_days << '\n'
    << "simulate.history_days=" << simulation.history_days << '\n'
    << "simulate.train_days=" << simulation.train_days << '\n'
    << "simulate.test_days=" << simulation.test_days << '\n'
    << "simulate.line_scale=" << num(simulation.line_scale) << '\n'
    << "simulate.variance_scale=" << num(simulation.variance_scale) << '\n'
    << "simulate.min_feasible=" << num(simulation.min_feasible) << '\n'
    << "simulate.max_redraws=" << simulation.max_redraws << '\n'
    << "simulate.start=" << format_iso8601(simulation.start) << '\n'
    << "sensitivity.demand_levels=" << join(demand_levels) << '\n'
    << "sensitivity.renewable_levels=" << join(renewable_levels) << '\n'
    << "sensitivity.ratio_levels=" << join(ratio_levels) << '\n'
    << "sensitivity.fixed_demand_error=" << num(fixed_demand_error) << '\n'
    << "sensitivity.fixed_renewable_error=" << num(fixed_renewable_error) << '\n'
    << "evaluate.price_floor=" << num(price_floor) << '\n';
  return o.str();
}

// ---------------------------------------------------------------------------
// Bundle serialization

namespace {

constexpr const char* kBundleFiles[] = {"meta.bin", "mix_regimes.bin", "recovery.bin", "congestion.bin",
                                        "classifier.bin", "price_models.bin", "residuals.bin"};

void put(bin::Writer& w, const MarsModel& m) {
  w.i64(m.n_features);
  w.f64(m.intercept);
  w.f64(m.gcv);
  w.f64(m.r2);
  w.u64(m.terms.size());
  for (const auto& t : m.terms) {
    w.i64(t.feature);
    w.f64(t.knot);
    w.i64(t.sign);
    w.f64(t.coef);
  }
}

MarsModel get_mars(bin::Reader& r) {
  MarsModel m;
  m.n_features = static_cast<int>(r.i64());
  m.intercept = r.f64();
  m.gcv = r.f64();
  m.r2 = r.f64();
  const auto n = r.u64();
  for (std::uint64_t k = 0; k < n; ++k) {
    HingeTerm t;
    t.feature = static_cast<int>(r.i64());
    t.knot = r.f64();
    t.sign = static_cast<int>(r.i64());
    t.coef = r.f64();
    m.terms.push_back(t);
  }
  return m;
}

void put(bin::Writer& w, const LogisticModel& m) {
  w.ints(m.classes);
  w.vec(m.mean);
  w.vec(m.scale);
  w.mat(m.W);
  w.i64(m.constant ? 1 : 0);
  w.i64(m.iterations);
}

LogisticModel get_logistic(bin::Reader& r) {
  LogisticModel m;
  m.classes = r.ints();
  m.mean = r.vec();
  m.scale = r.vec();
  m.W = r.mat();
  m.constant = r.i64() != 0;
  m.iterations = static_cast<int>(r.i64());
  return m;
}

void put(bin::Writer& w, const ArmaFit& a) {
  w.i64(a.d);
  for (double v : {a.c, a.phi, a.theta, a.sigma2}) w.f64(v);
  w.i64(a.fallback ? 1 : 0);
  for (double v : {a.last_y, a.last_w, a.last_e}) w.f64(v);
}

ArmaFit get_arma(bin::Reader& r) {
  ArmaFit a;
  a.d = static_cast<int>(r.i64());
  a.c = r.f64();
  a.phi = r.f64();
  a.theta = r.f64();
  a.sigma2 = r.f64();
  a.fallback = r.i64() != 0;
  a.last_y = r.f64();
  a.last_w = r.f64();
  a.last_e = r.f64();
  return a;
}

std::vector<long long> get_ids(bin::Reader& r) {
  std::vector<long long> ids(r.u64());
  for (auto& id : ids) id = r.i64();
  return ids;
}

void check_done(const bin::Reader& r, const fs::path& p) {
  if (!r.done()) throw ValidationError("bundle file " + p.string() + " has trailing bytes");
}

}  // namespace

void save_bundle(const ModelBundle& b, const fs::path& dir) {
  fs::create_directories(dir);
  std::vector<bin::Writer> w(std::size(kBundleFiles));

  auto& meta = w[0];
  meta.i64(b.schema_version);
  meta.u64(b.config_hash);
  meta.strs(b.gen_types);
  meta.strs(b.regions);
  meta.u64(b.node_ids.size());
  for (long long id : b.node_ids) meta.i64(id);
  meta.i64(b.normalize_mix ? 1 : 0);
  meta.f64(b.mean_total);
  meta.i64(b.train_first);
  meta.i64(b.train_last);
  meta.i64(b.topology_time);
  meta.i64(b.reference_row);
  meta.i64(static_cast<int>(b.mec));
  meta.f64(b.smoothing.k_mad);
  meta.i64(b.smoothing.window);
  meta.i64(b.smoothing.median_window);
  meta.mat(b.last_day_prices);
  meta.mat(b.regime_mean_price);

  auto& mr = w[1];
  const auto& pca = b.mix_model.pca;
  mr.vec(pca.mean);
  mr.mat(pca.components);
  mr.vec(pca.explained_variance_ratio);
  mr.vec(pca.explained_variance);
  mr.i64(pca.rank);
  mr.i64(pca.rank_deficient ? 1 : 0);
  const auto& km = b.mix_model.kmeans;
  mr.mat(km.centroids);
  mr.f64(km.inertia);
  mr.ints(km.labels);
  mr.i64(km.iterations);
  mr.i64(km.restart);
  mr.i64(b.mix_model.hour_of_day ? 1 : 0);

  auto& rc = w[2];
  rc.mat(b.recovery.B);
  rc.mat(b.recovery.S);
  rc.u64(b.recovery.residual_history.size());
  for (double v : b.recovery.residual_history) rc.f64(v);
  rc.i64(b.recovery.iterations);
  rc.i64(b.recovery.converged ? 1 : 0);

  auto& cg = w[3];
  cg.u64(b.congestion.size());
  for (const auto& c : b.congestion) {
    cg.mat(c.centroids);
    cg.ints(c.labels);
  }

  auto& cl = w[4];
  cl.u64(b.classifier.regimes.size());
  for (const auto& m : b.classifier.regimes) put(cl, m);

  auto& pm = w[5];
  pm.u64(b.price_models.size());
  for (const auto& [key, m] : b.price_models) {
    pm.i64(key.first);
    pm.i64(key.second);
    pm.i64(m.baseline.count);
    pm.vec(m.baseline.generation);
    pm.vec(m.baseline.load);
    pm.vec(m.baseline.price);
    pm.u64(m.mars.size());
    for (const auto& x : m.mars) put(pm, x);
    pm.u64(m.mars_dayago.size());
    for (const auto& x : m.mars_dayago) put(pm, x);
  }

  auto& rs = w[6];
  rs.u64(b.residual.size());
  for (const auto& h : b.residual) {
    rs.i64(h.order.d);
    rs.i64(h.order.q);
    rs.u64(h.hours.size());
    for (const auto& a : h.hours) put(rs, a);
  }

  std::ostringstream manifest;
  manifest << "format=lmpcast-bundle\n"
           << "schema_version=" << b.schema_version << '\n'
           << "config_hash=" << std::hex << b.config_hash << std::dec << '\n'
           << "byte_order=little\n";
  for (std::size_t k = 0; k < w.size(); ++k)
    manifest << "file=" << kBundleFiles[k] << ' ' << std::hex << w[k].save(dir / kBundleFiles[k]) << std::dec
             << '\n';
  std::ofstream out(dir / "manifest.txt", std::ios::binary);
  out << manifest.str();
  if (!out) throw ConfigError("cannot write " + (dir / "manifest.txt").string());
}

ModelBundle load_bundle(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.txt";
  std::ifstream in(mpath);
  if (!in) throw ConfigError("bundle manifest not found: " + mpath.string());
  std::map<std::string, std::uint64_t> hashes;
  int schema = -1;
  for (std::string line; std::getline(in, line);) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key == "schema_version") {
      schema = std::stoi(value);
    } else if (key == "file") {
      std::istringstream v(value);
      std::string name;
      std::uint64_t h = 0;
      v >> name >> std::hex >> h;
      hashes[name] = h;
    }
  }
  if (schema != ModelBundle::kSchemaVersion)
    throw ValidationError("bundle " + dir.string() + ": schema version " + std::to_string(schema) +
                          ", expected " + std::to_string(ModelBundle::kSchemaVersion));
  auto open = [&](const char* name) {
    const auto it = hashes.find(name);
    if (it == hashes.end()) throw ValidationError("bundle manifest lacks " + std::string(name));
    return bin::Reader(dir / name, it->second);
  };

  ModelBundle b;
  {
    auto r = open("meta.bin");
    b.schema_version = static_cast<int>(r.i64());
    b.config_hash = r.u64();
    b.gen_types = r.strs();
    b.regions = r.strs();
    b.node_ids = get_ids(r);
    b.normalize_mix = r.i64() != 0;
    b.mean_total = r.f64();
    b.train_first = r.i64();
    b.train_last = r.i64();
    b.topology_time = r.i64();
    b.reference_row = static_cast<int>(r.i64());
    b.mec = static_cast<MecProxy>(r.i64());
    b.smoothing.k_mad = r.f64();
    b.smoothing.window = static_cast<int>(r.i64());
    b.smoothing.median_window = static_cast<int>(r.i64());
    b.last_day_prices = r.mat();
    b.regime_mean_price = r.mat();
    check_done(r, dir / "meta.bin");
  }
  {
    auto r = open("mix_regimes.bin");
    auto& pca = b.mix_model.pca;
    pca.mean = r.vec();
    pca.components = r.mat();
    pca.explained_variance_ratio = r.vec();
    pca.explained_variance = r.vec();
    pca.rank = static_cast<int>(r.i64());
    pca.rank_deficient = r.i64() != 0;
    auto& km = b.mix_model.kmeans;
    km.centroids = r.mat();
    km.inertia = r.f64();
    km.labels = r.ints();
    km.iterations = static_cast<int>(r.i64());
    km.restart = static_cast<int>(r.i64());
    b.mix_model.hour_of_day = r.i64() != 0;
    check_done(r, dir / "mix_regimes.bin");
  }
  {
    auto r = open("recovery.bin");
    b.recovery.B = r.mat();
    b.recovery.S = r.mat();
    b.recovery.residual_history.resize(r.u64());
    for (auto& v : b.recovery.residual_history) v = r.f64();
    b.recovery.iterations = static_cast<int>(r.i64());
    b.recovery.converged = r.i64() != 0;
    check_done(r, dir / "recovery.bin");
  }
  {
    auto r = open("congestion.bin");
    b.congestion.resize(r.u64());
    for (auto& c : b.congestion) {
      c.centroids = r.mat();
      c.labels = r.ints();
    }
    check_done(r, dir / "congestion.bin");
  }
  {
    auto r = open("classifier.bin");
    const auto n = r.u64();
    for (std::uint64_t k = 0; k < n; ++k) b.classifier.regimes.push_back(get_logistic(r));
    check_done(r, dir / "classifier.bin");
  }
  {
    auto r = open("price_models.bin");
    const auto n = r.u64();
    for (std::uint64_t k = 0; k < n; ++k) {
      RegimePriceModel m;
      m.baseline.m_regime = static_cast<int>(r.i64());
      m.baseline.c_regime = static_cast<int>(r.i64());
      m.baseline.count = static_cast<int>(r.i64());
      m.baseline.generation = r.vec();
      m.baseline.load = r.vec();
      m.baseline.price = r.vec();
      m.mars.resize(r.u64());
      for (auto& x : m.mars) x = get_mars(r);
      m.mars_dayago.resize(r.u64());
      for (auto& x : m.mars_dayago) x = get_mars(r);
      b.price_models[{m.baseline.m_regime, m.baseline.c_regime}] = std::move(m);
    }
    check_done(r, dir / "price_models.bin");
  }
  {
    auto r = open("residuals.bin");
    b.residual.resize(r.u64());
    for (auto& h : b.residual) {
      h.order.d = static_cast<int>(r.i64());
      h.order.q = static_cast<int>(r.i64());
      h.hours.resize(r.u64());
      for (auto& a : h.hours) a = get_arma(r);
    }
    check_done(r, dir / "residuals.bin");
  }
  return b;
}

// ---------------------------------------------------------------------------
// Training

namespace {

Timestamp day_of(Timestamp t) {
  return (t >= 0 ? t : t - (kSecondsPerDay - 1)) / kSecondsPerDay;
}

std::uint64_t substream_seed(std::uint64_t seed, std::string_view name, std::uint64_t index = 0) {
  return Rng(seed, name, index).next_u64();
}

// Runs `fn` and rethrows its error with a stage tag, keeping the error kind.
template <class Fn>
auto stage(const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const Error& e) {
    const std::string msg = std::string("[") + name + "] " + e.what();
    switch (e.kind()) {
      case ErrorKind::Validation: throw ValidationError(msg);
      case ErrorKind::Structural: throw StructuralError(msg);
      case ErrorKind::Numerical: throw NumericalError(msg);
      case ErrorKind::Infeasible: throw InfeasibleError(msg);
      case ErrorKind::Config: throw ConfigError(msg);
    }
    throw;
  }
}

VectorXd deviation(const RegimeBaseline& b, const MatrixXd& generation, const MatrixXd& load, Index t) {
  VectorXd x(b.generation.size() + b.load.size());
  x << generation.row(t).transpose() - b.generation, load.row(t).transpose() - b.load;
  return x;
}

std::vector<int> hours_of(const std::vector<Timestamp>& ts) {
  std::vector<int> h;
  h.reserve(ts.size());
  for (Timestamp t : ts) h.push_back(hour_of_day(t));
  return h;
}

std::vector<int> read_labels(const fs::path& path, const std::vector<Timestamp>& ts) {
  const auto table = csv::read(path, {"timestamp_iso8601", "label"});
  const auto ct = table.column("timestamp_iso8601"), cl = table.column("label");
  std::unordered_map<Timestamp, int> by_time;
  for (std::size_t r = 0; r < table.rows(); ++r)
    by_time[parse_iso8601(table.at(r, ct))] = static_cast<int>(table.integer(r, cl));
  std::vector<int> out;
  out.reserve(ts.size());
  for (Timestamp t : ts) {
    const auto it = by_time.find(t);
    if (it == by_time.end())
      throw ValidationError(path.string() + ": no congestion label at " + format_iso8601(t));
    out.push_back(it->second);
  }
  return out;
}

// Step 5 and the in-sample residual models, given labels.
void fit_price_models(ModelBundle& b, const TrainingData& data, const MatrixXd& X, const std::vector<int>& m,
                      const std::vector<int>& c, const PipelineConfig& cfg) {
  const auto& gen = data.mix.generation;
  const auto& load = data.mix.load;
  const MatrixXd price = data.prices.lmp.transpose();  // T x N
  const Index T = price.rows(), N = price.cols();
  const int n_regimes = b.mix_model.n_regimes();

  MatrixXd dayago(T, N);
  for (Index k = 0; k < N; ++k) dayago.col(k) = day_ago(price.col(k));

  b.price_models.clear();
  std::map<std::pair<int, int>, std::vector<Index>> rows;
  for (Index t = 0; t < T; ++t) rows[{m[static_cast<std::size_t>(t)], c[static_cast<std::size_t>(t)]}].push_back(t);
  const int d = static_cast<int>(gen.cols() + load.cols());
  for (const auto& [key, idx] : rows) {
    RegimePriceModel pm;
    pm.baseline = regime_baseline(gen, load, price, m, c, key.first, key.second);
    const Index R = static_cast<Index>(idx.size());
    MatrixXd F(R, d);
    std::vector<Timestamp> ts;
    for (Index r = 0; r < R; ++r) {
      F.row(r) = deviation(pm.baseline, gen, load, idx[static_cast<std::size_t>(r)]).transpose();
      ts.push_back(data.mix.timestamps[static_cast<std::size_t>(idx[static_cast<std::size_t>(r)])]);
    }
    const VectorXd w = recency_weights(ts, cfg.half_life_days);
    MatrixXd Fd(R, d + 1);
    Fd.leftCols(d) = F;
    for (Index k = 0; k < N; ++k) {
      VectorXd y(R);
      for (Index r = 0; r < R; ++r) {
        const Index t = idx[static_cast<std::size_t>(r)];
        y(r) = price(t, k) - pm.baseline.price(k);
        Fd(r, d) = dayago(t, k) - pm.baseline.price(k);
      }
      if (R >= 10) {
        pm.mars.push_back(mars_fit(F, y, w, cfg.mars));
        pm.mars_dayago.push_back(mars_fit(Fd, y, w, cfg.mars));
      } else {
        MarsModel flat;
        flat.n_features = d;
        pm.mars.push_back(flat);
        flat.n_features = d + 1;
        pm.mars_dayago.push_back(flat);
      }
    }
    b.price_models[key] = std::move(pm);
  }

  b.regime_mean_price = MatrixXd::Zero(n_regimes, N);
  std::vector<int> count(static_cast<std::size_t>(n_regimes), 0);
  for (Index t = 0; t < T; ++t) {
    b.regime_mean_price.row(m[static_cast<std::size_t>(t)]) += price.row(t);
    ++count[static_cast<std::size_t>(m[static_cast<std::size_t>(t)])];
  }
  for (int i = 0; i < n_regimes; ++i)
    if (count[static_cast<std::size_t>(i)] > 0) b.regime_mean_price.row(i) /= count[static_cast<std::size_t>(i)];

  // In-sample residuals of the classified model on whole days.
  const Index D = T / 24;
  std::vector<MatrixXd> resid(static_cast<std::size_t>(N), MatrixXd(D, 24));
  for (Index t = 0; t < D * 24; ++t) {
    const int i = m[static_cast<std::size_t>(t)];
    const int j = b.classifier.classify(X.row(t).transpose(), i);
    const auto it = b.price_models.find({i, j});
    for (Index k = 0; k < N; ++k) {
      double p = b.regime_mean_price(i, k);
      if (it != b.price_models.end())
        p = it->second.baseline.price(k) + it->second.mars[static_cast<std::size_t>(k)].predict(
                                               deviation(it->second.baseline, gen, load, t));
      resid[static_cast<std::size_t>(k)](t / 24, t % 24) = price(t, k) - p;
    }
  }
  b.residual.clear();
  if (D >= 15) {
    for (Index k = 0; k < N; ++k) b.residual.push_back(fit_hourly_residuals(resid[static_cast<std::size_t>(k)], cfg.arma));
  } else {
    warn("fewer than 15 training days; no residual model");
  }
  b.last_day_prices = data.prices.lmp.rightCols(24);
}

}  // namespace

MatrixXd mix_features(const MixSeries& s, bool normalize, double mean_total) {
  if (normalize) return build_mix_vectors(s, mean_total).feature_matrix();
  MatrixXd X(s.size(), s.generation.cols() + s.load.cols());
  X << s.generation, s.load;
  return X;
}

TrainingData align_training_data(const MixSeries& mix, const PriceTable& prices, std::optional<Timestamp> first,
                                 std::optional<Timestamp> last) {
  std::unordered_map<Timestamp, Index> price_col;
  for (std::size_t c = 0; c < prices.timestamps.size(); ++c)
    price_col[prices.timestamps[c]] = static_cast<Index>(c);
  std::vector<Index> mix_rows, cols;
  for (Index r = 0; r < mix.size(); ++r) {
    const Timestamp t = mix.timestamps[static_cast<std::size_t>(r)];
    if ((first && t < *first) || (last && t > *last)) continue;
    const auto it = price_col.find(t);
    if (it == price_col.end()) continue;
    mix_rows.push_back(r);
    cols.push_back(it->second);
  }
  // Whole UTC days only.
  std::size_t b = 0, e = mix_rows.size();
  while (b < e && hour_of_day(mix.timestamps[static_cast<std::size_t>(mix_rows[b])]) != 0) ++b;
  while (e > b && hour_of_day(mix.timestamps[static_cast<std::size_t>(mix_rows[e - 1])]) != 23) --e;
  if (e - b < 42 * 24)
    throw ValidationError("training needs at least 6 weeks of aligned hourly history; have " +
                          std::to_string(e - b) + " hours");

  TrainingData d;
  d.mix.gen_types = mix.gen_types;
  d.mix.regions = mix.regions;
  const Index T = static_cast<Index>(e - b);
  d.mix.generation.resize(T, mix.generation.cols());
  d.mix.load.resize(T, mix.load.cols());
  d.prices.node_ids = prices.node_ids;
  d.prices.lmp.resize(prices.lmp.rows(), T);
  for (Index t = 0; t < T; ++t) {
    const Index r = mix_rows[b + static_cast<std::size_t>(t)], c = cols[b + static_cast<std::size_t>(t)];
    d.mix.timestamps.push_back(mix.timestamps[static_cast<std::size_t>(r)]);
    d.mix.generation.row(t) = mix.generation.row(r);
    d.mix.load.row(t) = mix.load.row(r);
    d.prices.lmp.col(t) = prices.lmp.col(c);
  }
  d.prices.timestamps = d.mix.timestamps;
  check_gaps(d.mix.timestamps, kSecondsPerHour);
  return d;
}

ModelBundle train(const TrainingData& data, const PipelineConfig& cfg, TrainingReport* report) {
  const Index T = data.mix.size();
  if (data.prices.lmp.cols() != T) throw ValidationError("train: mix and prices are not aligned");
  if (!data.congestion_labels.empty() && static_cast<Index>(data.congestion_labels.size()) != T)
    throw ValidationError("train: congestion label count differs from hours");

  ModelBundle b;
  b.config_hash = fnv1a64(cfg.canonical());
  b.gen_types = data.mix.gen_types;
  b.regions = data.mix.regions;
  b.node_ids = data.prices.node_ids;
  b.normalize_mix = cfg.normalize_mix;
  b.train_first = data.mix.timestamps.front();
  b.train_last = data.mix.timestamps.back();
  b.topology_time = b.train_last;
  b.reference_row = cfg.reference_row;
  b.mec = cfg.mec;
  b.smoothing = cfg.smoothing;

  // Step 0: mix features.
  const MatrixXd X = stage("mix", [&] {
    if (cfg.normalize_mix) {
      const auto mv = build_mix_vectors(data.mix);
      b.mean_total = mv.mean_total;
      return mv.feature_matrix();
    }
    b.mean_total = data.mix.total_demand().mean();
    return mix_features(data.mix, false, b.mean_total);
  });
  const auto hours = hours_of(data.mix.timestamps);

  // Step 1: M-regimes.
  std::vector<int> m(static_cast<std::size_t>(T));
  stage("regimes", [&] {
    b.mix_model = fit_mix_regimes(X, hours, cfg.regimes, substream_seed(cfg.seed, "mix-regimes"));
    for (Index t = 0; t < T; ++t)
      m[static_cast<std::size_t>(t)] = assign_regime(b.mix_model, X.row(t).transpose(), hours[static_cast<std::size_t>(t)]);
  });
  const int n_regimes = b.mix_model.n_regimes();

  // Step 2: topology and congestion recovery.
  const MatrixXd Pi = stage("recovery", [&] {
    MatrixXd P = mcc_from_prices(data.prices.lmp, cfg.mec, cfg.reference_row);
    b.recovery = admm_recover(P, cfg.admm);
    if (!b.recovery.converged) warn("ADMM did not converge; using the lowest-residual iterate");
    return P;
  });

  // Step 3: congestion regimes per M-regime.
  std::vector<int> c(static_cast<std::size_t>(T), 0);
  stage("congestion", [&] {
    if (!data.congestion_labels.empty()) {
      c = data.congestion_labels;
      return;
    }
    const MatrixXd S = congestion_matrix(b.recovery.B, Pi);
    const double tol = 1e-3 * Pi.cwiseAbs().maxCoeff();
    for (int i = 0; i < n_regimes; ++i) {
      std::vector<Index> cols;
      for (Index t = 0; t < T; ++t)
        if (m[static_cast<std::size_t>(t)] == i) cols.push_back(t);
      MatrixXd Si(S.rows(), static_cast<Index>(cols.size()));
      for (std::size_t r = 0; r < cols.size(); ++r) Si.col(static_cast<Index>(r)) = S.col(cols[r]);
      Si = Si.unaryExpr([tol](double v) { return std::abs(v) <= tol ? 0.0 : v; });
      CongestionClusters cc;
      if (Si.cols() >= 2) {
        cc = cluster_congestions(Si, cfg.congestion_k_lo, cfg.congestion_k_hi,
                                 substream_seed(cfg.seed, "congestion-regimes", static_cast<std::uint64_t>(i)));
      } else {
        cc.centroids = Si.transpose();
        cc.labels.assign(cols.size(), 0);
      }
      for (std::size_t r = 0; r < cols.size(); ++r) c[static_cast<std::size_t>(cols[r])] = cc.labels[r];
      b.congestion.push_back(std::move(cc));
    }
  });

  // Step 4: congestion classifier.
  stage("classifier", [&] { b.classifier = train_classifier(X, c, m, n_regimes, cfg.classifier); });

  // Step 5: baselines, price models and residual models.
  stage("pricemodel", [&] { fit_price_models(b, data, X, m, c, cfg); });

  if (report) {
    report->m_regime = m;
    report->c_regime = c;
    report->Pi = Pi;
    report->n_links = count_links(normalize_B(b.recovery.B), cfg.link_threshold);
  }
  return b;
}

ModelBundle train(const PipelineConfig& cfg, TrainingReport* report) {
  if (cfg.prices_csv.empty() || cfg.generation_csv.empty() || cfg.load_csv.empty())
    throw ConfigError("[data] generation_csv, load_csv and prices_csv are required");
  const MixSeries mix = stage("data", [&] { return read_mix(cfg.generation_csv, cfg.load_csv, cfg.gen_types, cfg.regions); });
  const PriceTable prices = stage("data", [&] { return read_prices(cfg.prices_csv); });
  TrainingData data = stage("data", [&] { return align_training_data(mix, prices, cfg.train_start, cfg.train_end); });
  if (!cfg.congestion_labels_csv.empty())
    data.congestion_labels = stage("data", [&] { return read_labels(cfg.congestion_labels_csv, data.mix.timestamps); });
  return train(data, cfg, report);
}

ModelBundle refit_price_models(const ModelBundle& b, const TrainingData& data, const PipelineConfig& cfg) {
  if (data.mix.gen_types != b.gen_types || data.mix.regions != b.regions || data.prices.node_ids != b.node_ids)
    throw ValidationError("refit: data does not match the bundle's types, regions or nodes");
  ModelBundle out = b;
  out.config_hash = fnv1a64(cfg.canonical());
  out.train_first = data.mix.timestamps.front();
  out.train_last = data.mix.timestamps.back();
  out.smoothing = cfg.smoothing;
  const MatrixXd X = mix_features(data.mix, b.normalize_mix, b.mean_total);
  const auto hours = hours_of(data.mix.timestamps);
  const Index T = X.rows();
  std::vector<int> m(static_cast<std::size_t>(T)), c(static_cast<std::size_t>(T));
  for (Index t = 0; t < T; ++t) {
    const auto r = static_cast<std::size_t>(t);
    m[r] = assign_regime(b.mix_model, X.row(t).transpose(), hours[r]);
    c[r] = data.congestion_labels.empty() ? b.classifier.classify(X.row(t).transpose(), m[r]) : data.congestion_labels[r];
  }
  stage("pricemodel", [&] { fit_price_models(out, data, X, m, c, cfg); });
  return out;
}

TopologyRun recover_topology(const PriceTable& prices, const PipelineConfig& cfg) {
  TopologyRun run;
  run.timestamps = prices.timestamps;
  run.node_ids = prices.node_ids;
  const MatrixXd Pi = mcc_from_prices(prices.lmp, cfg.mec, cfg.reference_row);
  run.recovery = admm_recover(Pi, cfg.admm);
  const double tol = 1e-3 * Pi.cwiseAbs().maxCoeff();
  run.S = congestion_matrix(run.recovery.B, Pi).unaryExpr([tol](double v) { return std::abs(v) <= tol ? 0.0 : v; });
  run.clusters = cluster_congestions(run.S, cfg.congestion_k_lo, cfg.congestion_k_hi,
                                     substream_seed(cfg.seed, "congestion-regimes"));
  return run;
}

// ---------------------------------------------------------------------------
// Prediction

ForecastSeries Forecast::series(int node) const {
  ForecastSeries s;
  s.timestamps = timestamps;
  s.raw = raw.row(node).transpose();
  s.smoothed = smoothed.row(node).transpose();
  s.m_regime = m_regime;
  s.c_regime = c_regime;
  s.spike = spike[static_cast<std::size_t>(node)];
  return s;
}

namespace {

// Observed prices for the bundle's nodes: the history table, then the
// bundle's last training day.
class PriceLookup {
 public:
  PriceLookup(const ModelBundle& b, const PriceTable* history) : b_(b), history_(history) {
    if (!history) return;
    std::unordered_map<long long, Index> row;
    for (std::size_t r = 0; r < history->node_ids.size(); ++r) row[history->node_ids[r]] = static_cast<Index>(r);
    for (long long id : b.node_ids) {
      const auto it = row.find(id);
      rows_.push_back(it == row.end() ? -1 : it->second);
    }
    for (std::size_t c = 0; c < history->timestamps.size(); ++c) col_[history->timestamps[c]] = static_cast<Index>(c);
  }

  std::optional<double> at(int node, Timestamp t) const {
    if (history_) {
      const auto it = col_.find(t);
      const Index r = rows_[static_cast<std::size_t>(node)];
      if (it != col_.end() && r >= 0) return history_->lmp(r, it->second);
    }
    const Timestamp first = b_.train_last - 23 * kSecondsPerHour;
    if (t >= first && t <= b_.train_last && (t - first) % kSecondsPerHour == 0)
      return b_.last_day_prices(node, (t - first) / kSecondsPerHour);
    return std::nullopt;
  }

 private:
  const ModelBundle& b_;
  const PriceTable* history_;
  std::vector<Index> rows_;
  std::unordered_map<Timestamp, Index> col_;
};

}  // namespace

Forecast predict(const ModelBundle& b, const MixSeries& input, Variant variant, const PriceTable* history) {
  for (const auto& g : input.gen_types)
    if (std::find(b.gen_types.begin(), b.gen_types.end(), g) == b.gen_types.end())
      throw ValidationError("predict: generation type '" + g + "' not in the bundle");
  for (const auto& r : input.regions)
    if (std::find(b.regions.begin(), b.regions.end(), r) == b.regions.end())
      throw ValidationError("predict: region '" + r + "' not in the bundle");
  if (input.gen_types != b.gen_types || input.regions != b.regions)
    throw ValidationError("predict: generation types or regions differ from the bundle");
  if (input.size() == 0) throw ValidationError("predict: empty input");

  const int N = b.n_nodes();
  const Index T = input.size();
  Forecast f;
  f.variant = variant;
  f.timestamps = input.timestamps;
  f.node_ids = b.node_ids;
  f.raw.resize(N, T);
  f.m_regime.assign(static_cast<std::size_t>(T), -1);
  f.c_regime.assign(static_cast<std::size_t>(T), -1);
  const PriceLookup observed(b, history);

  if (variant == Variant::DayAgoNaive) {
    for (Index t = 0; t < T; ++t)
      for (int k = 0; k < N; ++k) {
        const Timestamp prev = f.timestamps[static_cast<std::size_t>(t)] - kSecondsPerDay;
        const auto p = observed.at(k, prev);
        if (!p) throw ValidationError("predict: no observed price at " + format_iso8601(prev));
        f.raw(k, t) = *p;
      }
    f.smoothed = f.raw;
    for (int k = 0; k < N; ++k)
      f.spike.push_back(flag_spikes(f.raw.row(k).transpose(), b.smoothing.k_mad, b.smoothing.median_window));
    return f;
  }

  const MatrixXd X = mix_features(input, b.normalize_mix, b.mean_total);
  bool warned_model = false, warned_dayago = false;
  for (Index t = 0; t < T; ++t) {
    const auto ti = static_cast<std::size_t>(t);
    const Timestamp ts = f.timestamps[ti];
    const int i = assign_regime(b.mix_model, X.row(t).transpose(), hour_of_day(ts));
    const int j = b.classifier.classify(X.row(t).transpose(), i);
    f.m_regime[ti] = i;
    f.c_regime[ti] = j;
    const auto it = b.price_models.find({i, j});
    if (it == b.price_models.end()) {
      if (!warned_model) warn("no price model for regime pair; using the M-regime mean price");
      warned_model = true;
      f.raw.col(t) = b.regime_mean_price.row(i).transpose();
      continue;
    }
    const auto& pm = it->second;
    const VectorXd dev = deviation(pm.baseline, input.generation, input.load, t);
    for (int k = 0; k < N; ++k) {
      const auto ku = static_cast<std::size_t>(k);
      if (variant == Variant::AlgMhatDayAgo) {
        VectorXd x(dev.size() + 1);
        const auto p = observed.at(k, ts - kSecondsPerDay);
        if (!p && !warned_dayago) warn("day-ago price missing; using the regime mean");
        warned_dayago = warned_dayago || !p;
        x << dev, (p ? *p : pm.baseline.price(k)) - pm.baseline.price(k);
        f.raw(k, t) = pm.baseline.price(k) + pm.mars_dayago[ku].predict(x);
      } else {
        f.raw(k, t) = pm.baseline.price(k) + pm.mars[ku].predict(dev);
      }
    }
  }

  if (variant == Variant::AlgMhatArima) {
    if (static_cast<int>(b.residual.size()) != N) throw ValidationError("predict: bundle has no residual model");
    const MatrixXd base = f.raw;
    std::map<Timestamp, std::vector<Index>> days;
    for (Index t = 0; t < T; ++t) days[day_of(f.timestamps[static_cast<std::size_t>(t)])].push_back(t);
    std::vector<HourlyResidualModel> model = b.residual;
    Timestamp state = day_of(b.train_last);
    for (const auto& [day, cols] : days) {
      // Catch up on residuals of days before this one.
      for (Timestamp e = state + 1; e < day; ++e) {
        const auto known = days.find(e);
        for (int k = 0; k < N; ++k) {
          VectorXd r = VectorXd::Constant(24, std::numeric_limits<double>::quiet_NaN());
          if (known != days.end())
            for (Index t : known->second) {
              const Timestamp ts = f.timestamps[static_cast<std::size_t>(t)];
              if (const auto p = observed.at(k, ts)) r(hour_of_day(ts)) = *p - base(k, t);
            }
          model[static_cast<std::size_t>(k)].update(r);
        }
      }
      state = std::max(state, day - 1);
      for (int k = 0; k < N; ++k) {
        const VectorXd next = model[static_cast<std::size_t>(k)].forecast();
        for (Index t : cols) f.raw(k, t) += next(hour_of_day(f.timestamps[static_cast<std::size_t>(t)]));
      }
    }
  }

  f.smoothed.resize(N, T);
  for (int k = 0; k < N; ++k) {
    std::vector<bool> spikes;
    f.smoothed.row(k) = smooth(VectorXd(f.raw.row(k).transpose()), b.smoothing, &spikes).transpose();
    f.spike.push_back(std::move(spikes));
  }
  return f;
}

void write_forecast(const Forecast& f, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  csv::Writer w(path, {"timestamp", "node_id", "raw", "smoothed", "m_regime", "congestion_regime", "spike_flag"});
  for (std::size_t t = 0; t < f.timestamps.size(); ++t)
    for (std::size_t k = 0; k < f.node_ids.size(); ++k) {
      const auto ti = static_cast<Index>(t), ki = static_cast<Index>(k);
      w << format_iso8601(f.timestamps[t]) << f.node_ids[k] << f.raw(ki, ti) << f.smoothed(ki, ti) << f.m_regime[t]
        << f.c_regime[t] << (f.spike[k][t] ? 1 : 0);
      w.end_row();
    }
}

Forecast read_forecast(const fs::path& path) {
  const auto table =
      csv::read(path, {"timestamp", "node_id", "raw", "smoothed", "m_regime", "congestion_regime", "spike_flag"});
  const auto cT = table.column("timestamp"), cN = table.column("node_id"), cR = table.column("raw"),
             cS = table.column("smoothed"), cM = table.column("m_regime"), cC = table.column("congestion_regime"),
             cF = table.column("spike_flag");
  Forecast f;
  std::map<Timestamp, Index> tcol;
  std::map<long long, Index> nrow;
  for (std::size_t r = 0; r < table.rows(); ++r) {
    tcol.emplace(parse_iso8601(table.at(r, cT)), 0);
    nrow.emplace(table.integer(r, cN), 0);
  }
  for (auto& [t, c] : tcol) {
    c = static_cast<Index>(f.timestamps.size());
    f.timestamps.push_back(t);
  }
  for (auto& [id, r] : nrow) {
    r = static_cast<Index>(f.node_ids.size());
    f.node_ids.push_back(id);
  }
  const Index N = static_cast<Index>(nrow.size()), T = static_cast<Index>(tcol.size());
  if (static_cast<std::size_t>(N * T) != table.rows())
    throw ValidationError(path.string() + ": forecast is not a full timestamp x node grid");
  f.raw.resize(N, T);
  f.smoothed.resize(N, T);
  f.m_regime.assign(static_cast<std::size_t>(T), -1);
  f.c_regime.assign(static_cast<std::size_t>(T), -1);
  f.spike.assign(static_cast<std::size_t>(N), std::vector<bool>(static_cast<std::size_t>(T), false));
  for (std::size_t r = 0; r < table.rows(); ++r) {
    const Index t = tcol.at(parse_iso8601(table.at(r, cT))), k = nrow.at(table.integer(r, cN));
    f.raw(k, t) = table.number(r, cR);
    f.smoothed(k, t) = table.number(r, cS);
    f.m_regime[static_cast<std::size_t>(t)] = static_cast<int>(table.integer(r, cM));
    f.c_regime[static_cast<std::size_t>(t)] = static_cast<int>(table.integer(r, cC));
    f.spike[static_cast<std::size_t>(k)][static_cast<std::size_t>(t)] = table.integer(r, cF) != 0;
  }
  return f;
}

// ---------------------------------------------------------------------------
// Evaluation

ErrorMetrics error_metrics(const VectorXd& actual, const VectorXd& predicted, double floor) {
  if (actual.size() != predicted.size()) throw ValidationError("error_metrics: length mismatch");
  if (actual.size() == 0) throw ValidationError("error_metrics: no samples");
  ErrorMetrics m;
  std::vector<double> ape;
  double sq = 0.0;
  for (Index i = 0; i < actual.size(); ++i) {
    const double e = actual(i) - predicted(i);
    sq += e * e;
    if (std::abs(actual(i)) >= floor) ape.push_back(std::abs(e) / std::abs(actual(i)));
  }
  m.rmse = std::sqrt(sq / static_cast<double>(actual.size()));
  m.used = static_cast<int>(ape.size());
  m.excluded = static_cast<int>(actual.size()) - m.used;
  if (ape.empty()) {
    m.mape = m.mdape = std::numeric_limits<double>::quiet_NaN();
    return m;
  }
  double sum = 0.0;
  for (double v : ape) sum += v;
  m.mape = 100.0 * sum / static_cast<double>(ape.size());
  std::sort(ape.begin(), ape.end());
  const std::size_t n = ape.size();
  m.mdape = 100.0 * (n % 2 ? ape[n / 2] : 0.5 * (ape[n / 2 - 1] + ape[n / 2]));
  return m;
}

EvaluationReport evaluate(const PriceTable& actual, const Forecast& f, bool use_smoothed, double floor,
                          const SmoothingConfig& spikes) {
  std::unordered_map<Timestamp, Index> acol, fcol;
  for (std::size_t c = 0; c < actual.timestamps.size(); ++c) acol[actual.timestamps[c]] = static_cast<Index>(c);
  for (std::size_t c = 0; c < f.timestamps.size(); ++c) fcol[f.timestamps[c]] = static_cast<Index>(c);
  std::vector<Timestamp> ts;
  for (Timestamp t : f.timestamps)
    if (acol.count(t)) ts.push_back(t);
  std::sort(ts.begin(), ts.end());
  std::unordered_map<long long, Index> arow;
  for (std::size_t r = 0; r < actual.node_ids.size(); ++r) arow[actual.node_ids[r]] = static_cast<Index>(r);
  std::vector<std::pair<Index, Index>> nodes;  // (actual row, forecast row)
  EvaluationReport rep;
  for (std::size_t k = 0; k < f.node_ids.size(); ++k) {
    const auto it = arow.find(f.node_ids[k]);
    if (it == arow.end()) continue;
    nodes.emplace_back(it->second, static_cast<Index>(k));
    rep.node_ids.push_back(f.node_ids[k]);
  }
  if (ts.empty() || nodes.empty()) throw ValidationError("evaluate: forecast and actual prices do not overlap");

  const Index N = static_cast<Index>(nodes.size()), T = static_cast<Index>(ts.size());
  const MatrixXd& pred = use_smoothed ? f.smoothed : f.raw;
  MatrixXd A(N, T), P(N, T);
  std::vector<std::vector<bool>> pspike(static_cast<std::size_t>(N));
  for (Index k = 0; k < N; ++k)
    for (Index t = 0; t < T; ++t) {
      const auto [ar, fr] = nodes[static_cast<std::size_t>(k)];
      A(k, t) = actual.lmp(ar, acol.at(ts[static_cast<std::size_t>(t)]));
      const Index fc = fcol.at(ts[static_cast<std::size_t>(t)]);
      P(k, t) = pred(fr, fc);
      pspike[static_cast<std::size_t>(k)].push_back(f.spike[static_cast<std::size_t>(fr)][static_cast<std::size_t>(fc)]);
    }

  rep.pooled = error_metrics(A.reshaped(), P.reshaped(), floor);
  rep.err_k.resize(N);
  for (Index k = 0; k < N; ++k) {
    rep.per_node.push_back(error_metrics(A.row(k).transpose(), P.row(k).transpose(), floor));
    rep.err_k(k) = relative_frobenius_error(A.row(k), P.row(k));
    const SpikeReport s = spike_report(flag_spikes(A.row(k).transpose(), spikes.k_mad, spikes.median_window),
                                       pspike[static_cast<std::size_t>(k)]);
    rep.actual_spike_events += s.actual_events;
    rep.predicted_spike_events += s.predicted_events;
    rep.spike_hits += s.hits;
    rep.spike_false_alarms += s.false_alarms;
  }
  rep.mean_err_k = rep.err_k.mean();

  for (Index t0 = 0; t0 < T;) {
    Index t1 = t0;
    const Timestamp d = day_of(ts[static_cast<std::size_t>(t0)]);
    while (t1 < T && day_of(ts[static_cast<std::size_t>(t1)]) == d) ++t1;
    rep.days.push_back(d * kSecondsPerDay);
    rep.per_day.push_back(error_metrics(A.middleCols(t0, t1 - t0).reshaped(), P.middleCols(t0, t1 - t0).reshaped(), floor));
    t0 = t1;
  }
  return rep;
}

void write_report(const EvaluationReport& r, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  csv::Writer w(path, {"scope", "key", "metric", "value"});
  auto metrics = [&](const std::string& scope, const std::string& key, const ErrorMetrics& m) {
    for (const auto& [name, v] : {std::pair<const char*, double>{"mape_pct", m.mape}, {"mdape_pct", m.mdape},
                                  {"rmse", m.rmse}, {"used", m.used}, {"excluded", m.excluded}}) {
      w << scope << key << name << v;
      w.end_row();
    }
  };
  metrics("pooled", "all", r.pooled);
  w << "pooled" << "all" << "mean_err_k" << r.mean_err_k;
  w.end_row();
  for (const auto& [name, v] : {std::pair<const char*, int>{"actual_events", r.actual_spike_events},
                                {"predicted_events", r.predicted_spike_events},
                                {"hits", r.spike_hits},
                                {"false_alarms", r.spike_false_alarms}}) {
    w << "spikes" << "all" << name << v;
    w.end_row();
  }
  for (std::size_t k = 0; k < r.node_ids.size(); ++k) {
    const std::string id = std::to_string(r.node_ids[k]);
    metrics("node", id, r.per_node[k]);
    w << "node" << id << "err_k" << r.err_k(static_cast<Index>(k));
    w.end_row();
  }
  for (std::size_t d = 0; d < r.days.size(); ++d) metrics("day", format_iso8601(r.days[d]).substr(0, 10), r.per_day[d]);
}

// ---------------------------------------------------------------------------
// Spikes

std::vector<std::pair<Index, Index>> spike_events(const std::vector<bool>& flags) {
  std::vector<std::pair<Index, Index>> ev;
  const Index n = static_cast<Index>(flags.size());
  for (Index i = 0; i < n;) {
    if (!flags[static_cast<std::size_t>(i)]) {
      ++i;
      continue;
    }
    Index j = i;
    while (j + 1 < n && flags[static_cast<std::size_t>(j + 1)]) ++j;
    ev.emplace_back(i, j);
    i = j + 1;
  }
  return ev;
}

SpikeReport spike_report(const std::vector<bool>& actual, const std::vector<bool>& predicted, int tolerance) {
  if (actual.size() != predicted.size()) throw ValidationError("spike_report: length mismatch");
  const auto a = spike_events(actual), p = spike_events(predicted);
  auto overlap = [tolerance](const std::pair<Index, Index>& x, const std::pair<Index, Index>& y) {
    return x.first <= y.second + tolerance && y.first <= x.second + tolerance;
  };
  SpikeReport r;
  r.actual_events = static_cast<int>(a.size());
  r.predicted_events = static_cast<int>(p.size());
  for (const auto& x : a)
    if (std::any_of(p.begin(), p.end(), [&](const auto& y) { return overlap(x, y); })) ++r.hits;
  for (const auto& y : p)
    if (std::none_of(a.begin(), a.end(), [&](const auto& x) { return overlap(x, y); })) ++r.false_alarms;
  return r;
}

// ---------------------------------------------------------------------------
// Simulator study

SweepAxis parse_axis(const std::string& s) {
  if (s == "demand") return SweepAxis::Demand;
  if (s == "renewable") return SweepAxis::Renewable;
  if (s == "ratio") return SweepAxis::Ratio;
  throw ConfigError("unknown sensitivity axis '" + s + "' (demand, renewable, ratio)");
}

PriceTable price_table(const SimulatedMarket& m, int first_hour, int count) {
  PriceTable p;
  p.timestamps.assign(m.timestamps.begin() + first_hour, m.timestamps.begin() + first_hour + count);
  for (const auto& bus : m.mcase.spec.buses) p.node_ids.push_back(bus.id);
  p.lmp = m.lmp.middleCols(first_hour, count);
  return p;
}

TrainingData training_data(const SimulatedMarket& m, bool with_truth_labels) {
  TrainingData d;
  d.mix = m.mix(0, m.train_hours());
  d.prices = price_table(m, 0, m.train_hours());
  if (with_truth_labels)
    d.congestion_labels.assign(m.congestion_label.begin(), m.congestion_label.begin() + m.train_hours());
  return d;
}

namespace {

// Day-ahead mix from total demand and renewable forecasts, both days x 24.
MixSeries forecast_mix(const SimulatedMarket& m, const MatrixXd& demand, const MatrixXd& renewable) {
  MixSeries f;
  f.gen_types = {"conventional", "renewable"};
  f.regions = {"system"};
  const int first = m.train_hours(), T = static_cast<int>(demand.rows()) * 24;
  f.generation.resize(T, 2);
  f.load.resize(T, 1);
  for (int t = 0; t < T; ++t) {
    f.timestamps.push_back(m.timestamps[static_cast<std::size_t>(first + t)]);
    const double d = demand(t / 24, t % 24), g = std::clamp(renewable(t / 24, t % 24), 0.0, d);
    f.generation.row(t) << d - g, g;
    f.load(t, 0) = d;
  }
  return f;
}

// actual + level * ||actual|| * dir / ||dir||.
MatrixXd at_error(const MatrixXd& actual, const MatrixXd& forecast, double level) {
  const MatrixXd dir = forecast - actual;
  const double n = dir.norm();
  if (level == 0.0 || n == 0.0) return actual;
  return actual + (level * actual.norm() / n) * dir;
}

}  // namespace

MixSeries forecast_mix_at(const SimulatedMarket& m, const SyntheticForecasts& f, double demand_error,
                          double renewable_error, std::uint64_t /*seed*/) {
  const int D = m.config.test_days;
  const MatrixXd L = m.demand_days.middleRows(m.config.train_days, D);
  const MatrixXd G = m.renewable_days.middleRows(m.config.train_days, D);
  return forecast_mix(m, at_error(L, f.demand, demand_error), at_error(G, f.renewable, renewable_error));
}

std::vector<SweepPoint> sensitivity_sweep(const SimulatedMarket& m, const ModelBundle& bundle,
                                          const PipelineConfig& cfg, SweepAxis axis,
                                          const std::vector<double>& levels) {
  const int D = m.config.test_days, first = m.train_hours();
  const SyntheticForecasts f = synthesize_forecasts(m);
  const MatrixXd L = m.demand_days.middleRows(m.config.train_days, D);
  const MatrixXd G = m.renewable_days.middleRows(m.config.train_days, D);
  const PriceTable base = price_table(m, first, 24 * D);

  std::vector<SweepPoint> out;
  for (std::size_t li = 0; li < levels.size(); ++li) {
    const double level = levels[li];
    SweepPoint pt;
    pt.level = level;
    PriceTable actual = base;
    MixSeries input;
    if (axis == SweepAxis::Demand) {
      const MatrixXd Lh = at_error(L, f.demand, level);
      input = forecast_mix(m, Lh, at_error(G, f.renewable, cfg.fixed_renewable_error));
      pt.achieved = relative_frobenius_error(L, Lh);
    } else if (axis == SweepAxis::Renewable) {
      const MatrixXd Gh = at_error(G, f.renewable, level);
      input = forecast_mix(m, at_error(L, f.demand, cfg.fixed_demand_error), Gh);
      pt.achieved = relative_frobenius_error(G, Gh);
    } else {
      input = forecast_mix(m, f.demand, f.renewable);
      if (level > 0.0) {
        const auto& fr = m.mcase.fractions;
        bool solved = false;
        for (int attempt = 0; attempt < 100 && !solved; ++attempt) {
          Rng rng(cfg.seed, "ratio-direction", li * 1000 + static_cast<std::uint64_t>(attempt));
          auto perturb = [&](const VectorXd& v) {
            VectorXd dir(v.size());
            for (Index i = 0; i < v.size(); ++i) dir(i) = rng.normal();
            dir.array() -= dir.mean();
            return project_to_simplex(v + (level * v.norm() / dir.norm()) * dir);
          };
          NodalFractions p = fr;
          p.alpha = perturb(fr.alpha);
          p.beta = perturb(fr.beta);
          try {
            solve_days(m, p, L, G, actual.lmp);
            solved = true;
            pt.achieved = 0.5 * ((p.alpha - fr.alpha).norm() / fr.alpha.norm() +
                                 (p.beta - fr.beta).norm() / fr.beta.norm());
          } catch (const InfeasibleError&) {
          }
        }
        if (!solved) throw InfeasibleError("sensitivity: ratio level " + csv::format_number(level) +
                                           " infeasible after 100 draws");
      }
    }
    const Forecast fc = predict(bundle, input, cfg.variant, &actual);
    pt.mean_err_k = evaluate(actual, fc, true, cfg.price_floor, bundle.smoothing).mean_err_k;
    pt.mean_err_k_raw = evaluate(actual, fc, false, cfg.price_floor, bundle.smoothing).mean_err_k;
    out.push_back(pt);
  }
  return out;
}

}  // namespace lmp
