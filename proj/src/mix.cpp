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

#include "lmp/mix.hpp"

#include "lmp/csv.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

namespace lmp {

VectorXd MixVector::features() const {
  VectorXd f(gen_fractions.size() + load_fractions.size() + 1);
  f << gen_fractions, load_fractions, scaled_total;
  return f;
}

MatrixXd MixVectors::feature_matrix() const {
  if (vectors.empty()) return MatrixXd();
  MatrixXd M(static_cast<Index>(vectors.size()), vectors.front().features().size());
  for (std::size_t i = 0; i < vectors.size(); ++i) M.row(static_cast<Index>(i)) = vectors[i].features();
  return M;
}

void check_gaps(const std::vector<Timestamp>& t, Timestamp step) {
  std::ostringstream missing;
  int gaps = 0;
  for (std::size_t i = 1; i < t.size(); ++i) {
    const Timestamp dt = t[i] - t[i - 1];
    if (dt <= 0)
      throw ValidationError("timestamps not strictly increasing at " + format_iso8601(t[i]));
    if (dt != step) {
      if (gaps++ < 20) missing << ' ' << format_iso8601(t[i - 1] + step) << ".." << format_iso8601(t[i] - step);
    }
  }
  if (gaps > 0)
    throw ValidationError("timestamp gaps (" + std::to_string(gaps) + "):" + missing.str());
}

MixVectors build_mix_vectors(const MixSeries& s, std::optional<double> mean_total,
                             const MixOptions& opt) {
  const Index T = s.size();
  if (T == 0) throw ValidationError("build_mix_vectors: empty series");
  if (s.generation.rows() != T || s.load.rows() != T ||
      s.generation.cols() != static_cast<Index>(s.gen_types.size()) ||
      s.load.cols() != static_cast<Index>(s.regions.size()))
    throw ValidationError("build_mix_vectors: series shape does not match its labels");
  if (s.gen_types.empty() || s.regions.empty())
    throw ValidationError("build_mix_vectors: need at least one generation type and one region");
  if (!s.generation.allFinite() || !s.load.allFinite() || s.generation.minCoeff() < 0.0 ||
      s.load.minCoeff() < 0.0)
    throw ValidationError("build_mix_vectors: generation and load must be finite and non-negative");
  check_gaps(s.timestamps, opt.step);

  const VectorXd dtot = s.total_demand();
  MixVectors out;
  out.mean_total = mean_total ? *mean_total : dtot.mean();
  if (!(out.mean_total > 0.0)) throw ValidationError("build_mix_vectors: mean total demand must be positive");

  out.vectors.reserve(static_cast<std::size_t>(T));
  for (Index t = 0; t < T; ++t) {
    const double g = s.generation.row(t).sum();
    const double d = dtot(t);
    if (!(d > 0.0) || !(g > 0.0))
      throw ValidationError("build_mix_vectors: zero total at " + format_iso8601(s.timestamps[t]));
    if (std::abs(g - d) > opt.imbalance_tol * d) {
      std::ostringstream msg;
      msg << "build_mix_vectors: generation " << g << " MW vs load " << d << " MW at "
          << format_iso8601(s.timestamps[t]) << " exceeds imbalance tolerance";
      throw ValidationError(msg.str());
    }
    MixVector v;
    v.gen_fractions = s.generation.row(t).transpose() / g;
    v.load_fractions = s.load.row(t).transpose() / d;
    v.scaled_total = d / out.mean_total;
    out.vectors.push_back(std::move(v));
  }
  return out;
}

namespace {

Timestamp hour_floor(Timestamp t) {
  return t - (((t % kSecondsPerHour) + kSecondsPerHour) % kSecondsPerHour);
}

std::size_t name_index(std::vector<std::string>& names, bool open, const std::string& name,
                       const std::string& what, const std::string& source) {
  auto it = std::find(names.begin(), names.end(), name);
  if (it != names.end()) return static_cast<std::size_t>(it - names.begin());
  if (!open) throw ValidationError(source + ": unknown " + what + " '" + name + "'");
  names.push_back(name);
  return names.size() - 1;
}

// Long (timestamp, key, mw) table pivoted to rows per timestamp; absent
// cells are NaN.
void pivot(const csv::Table& tab, const std::string& key_col, std::vector<std::string>& names,
           bool open, const std::string& what, std::vector<Timestamp>& stamps, MatrixXd& mw) {
  const auto ct = tab.column("timestamp_iso8601"), ck = tab.column(key_col), cv = tab.column("mw");
  std::map<Timestamp, std::map<std::size_t, double>> cells;
  for (std::size_t r = 0; r < tab.rows(); ++r) {
    const Timestamp t = parse_iso8601(tab.at(r, ct));
    const std::size_t k = name_index(names, open, tab.at(r, ck), what, tab.source);
    auto& row = cells[t];
    if (row.count(k))
      throw ValidationError(tab.source + ": duplicate " + what + " '" + tab.at(r, ck) + "' at " +
                            tab.at(r, ct));
    row[k] = tab.number(r, cv);
  }
  stamps.clear();
  mw.setConstant(static_cast<Index>(cells.size()), static_cast<Index>(names.size()),
                 std::numeric_limits<double>::quiet_NaN());
  Index i = 0;
  for (const auto& [t, row] : cells) {
    stamps.push_back(t);
    for (const auto& [k, v] : row) mw(i, static_cast<Index>(k)) = v;
    ++i;
  }
}

}  // namespace

MixSeries align_resolutions(const GenerationSamples& gen, const HourlyLoad& load) {
  if (gen.timestamps.empty() || load.timestamps.empty())
    throw ValidationError("align_resolutions: empty input");
  const Index K = static_cast<Index>(gen.gen_types.size());
  std::map<Timestamp, std::pair<VectorXd, VectorXd>> hours;  // sum, count per type
  for (std::size_t i = 0; i < gen.timestamps.size(); ++i) {
    auto& [sum, count] = hours[hour_floor(gen.timestamps[i])];
    if (sum.size() == 0) {
      sum = VectorXd::Zero(K);
      count = VectorXd::Zero(K);
    }
    for (Index k = 0; k < K; ++k) {
      const double v = gen.mw(static_cast<Index>(i), k);
      if (std::isnan(v)) continue;
      sum(k) += v;
      count(k) += 1.0;
    }
  }

  MixSeries s;
  s.gen_types = gen.gen_types;
  s.regions = load.regions;
  s.timestamps = load.timestamps;
  const Index T = static_cast<Index>(load.timestamps.size());
  s.generation.resize(T, K);
  s.load = load.mw;
  std::ostringstream gaps;
  int n_gaps = 0;
  for (Index t = 0; t < T; ++t) {
    const auto it = hours.find(hour_floor(load.timestamps[t]));
    const bool ok = it != hours.end() && it->second.second.minCoeff() >= 6.0;
    if (!ok) {
      if (n_gaps++ < 20) gaps << ' ' << format_iso8601(load.timestamps[t]);
      continue;
    }
    s.generation.row(t) = it->second.first.cwiseQuotient(it->second.second).transpose();
  }
  if (n_gaps > 0)
    throw ValidationError("align_resolutions: " + std::to_string(n_gaps) +
                          " hour(s) with fewer than 6 generation samples:" + gaps.str());
  if (!s.load.allFinite()) throw ValidationError("align_resolutions: load has missing regions");
  return s;
}

GenerationSamples read_generation_csv(const std::filesystem::path& path,
                                      const std::vector<std::string>& declared_types) {
  const auto tab = csv::read(path, {"timestamp_iso8601", "gen_type", "mw"});
  GenerationSamples g;
  g.gen_types = declared_types;
  pivot(tab, "gen_type", g.gen_types, declared_types.empty(), "generation type", g.timestamps, g.mw);
  return g;
}

HourlyLoad read_load_csv(const std::filesystem::path& path,
                         const std::vector<std::string>& declared_regions) {
  const auto tab = csv::read(path, {"timestamp_iso8601", "region", "mw"});
  HourlyLoad l;
  l.regions = declared_regions;
  pivot(tab, "region", l.regions, declared_regions.empty(), "region", l.timestamps, l.mw);
  return l;
}

MixSeries read_mix(const std::filesystem::path& mix_csv, const std::filesystem::path& load_csv,
                   const std::vector<std::string>& gen_types, const std::vector<std::string>& regions) {
  auto gen = read_generation_csv(mix_csv, gen_types);
  auto load = read_load_csv(load_csv, regions);
  bool hourly = true;
  for (std::size_t i = 0; i < gen.timestamps.size() && hourly; ++i)
    hourly = gen.timestamps[i] == hour_floor(gen.timestamps[i]) &&
             (i == 0 || gen.timestamps[i] - gen.timestamps[i - 1] >= kSecondsPerHour);
  if (!hourly) return align_resolutions(gen, load);

  MixSeries s;
  s.gen_types = gen.gen_types;
  s.regions = load.regions;
  s.timestamps = load.timestamps;
  s.load = load.mw;
  s.generation.resize(s.size(), static_cast<Index>(s.gen_types.size()));
  std::size_t j = 0;
  for (Index t = 0; t < s.size(); ++t) {
    while (j < gen.timestamps.size() && gen.timestamps[j] < s.timestamps[t]) ++j;
    if (j == gen.timestamps.size() || gen.timestamps[j] != s.timestamps[t])
      throw ValidationError(mix_csv.string() + ": no generation at " + format_iso8601(s.timestamps[t]));
    s.generation.row(t) = gen.mw.row(static_cast<Index>(j));
  }
  if (!s.generation.allFinite() || !s.load.allFinite())
    throw ValidationError("read_mix: some type or region is missing at some hour");
  return s;
}

void write_mix(const MixSeries& s, const std::filesystem::path& mix_csv,
               const std::filesystem::path& load_csv) {
  {
    csv::Writer w(mix_csv, {"timestamp_iso8601", "gen_type", "mw"});
    for (Index t = 0; t < s.size(); ++t)
      for (std::size_t k = 0; k < s.gen_types.size(); ++k) {
        w << format_iso8601(s.timestamps[t]) << s.gen_types[k] << s.generation(t, static_cast<Index>(k));
        w.end_row();
      }
  }
  csv::Writer w(load_csv, {"timestamp_iso8601", "region", "mw"});
  for (Index t = 0; t < s.size(); ++t)
    for (std::size_t r = 0; r < s.regions.size(); ++r) {
      w << format_iso8601(s.timestamps[t]) << s.regions[r] << s.load(t, static_cast<Index>(r));
      w.end_row();
    }
}

}  // namespace lmp
