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

#include "lmp/timeutil.hpp"
#include "lmp/types.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace lmp {

/// Hourly generation by type and load by region on a common time axis.
struct MixSeries {
  std::vector<Timestamp> timestamps;
  std::vector<std::string> gen_types;
  std::vector<std::string> regions;
  MatrixXd generation;  // T x |K|, MW
  MatrixXd load;        // T x |R|, MW

  Index size() const { return static_cast<Index>(timestamps.size()); }
  VectorXd total_demand() const { return load.rowwise().sum(); }
};

/// Normalized generation mix, normalized regional load and scaled total
/// demand. Dimension |R| + |K| + 1.
struct MixVector {
  VectorXd gen_fractions;
  VectorXd load_fractions;
  double scaled_total = 0.0;

  VectorXd features() const;
};

struct MixOptions {
  double imbalance_tol = 0.02;     // |sum g - sum d| / sum d
  Timestamp step = kSecondsPerHour;
};

struct MixVectors {
  std::vector<MixVector> vectors;
  double mean_total = 0.0;  // the denominator actually used

  MatrixXd feature_matrix() const;  // rows are vectors
};

/// With `mean_total` absent the series mean is used (training); at
/// prediction time the training value is passed back in.
MixVectors build_mix_vectors(const MixSeries& series, std::optional<double> mean_total = {},
                             const MixOptions& opt = {});

/// Checks the time axis is gap-free at `step`. Throws ValidationError
/// listing missing intervals.
void check_gaps(const std::vector<Timestamp>& t, Timestamp step);

struct GenerationSamples {
  std::vector<Timestamp> timestamps;  // 5-minute stamps
  std::vector<std::string> gen_types;
  MatrixXd mw;  // rows per stamp
};

struct HourlyLoad {
  std::vector<Timestamp> timestamps;
  std::vector<std::string> regions;
  MatrixXd mw;
};

/// Averages 5-minute generation within each clock hour and joins it with the
/// hourly load. An hour with fewer than 6 of 12 samples is a gap.
MixSeries align_resolutions(const GenerationSamples& gen, const HourlyLoad& load);

/// mix.csv: timestamp_iso8601, gen_type, mw. load.csv: timestamp_iso8601,
/// region, mw. Declared types and regions fix the column order; unseen names
/// are an error. Empty declarations accept the names in order of appearance.
GenerationSamples read_generation_csv(const std::filesystem::path& path,
                                      const std::vector<std::string>& declared_types = {});
HourlyLoad read_load_csv(const std::filesystem::path& path,
                         const std::vector<std::string>& declared_regions = {});

/// Reads both files and aligns them; generation may be hourly or 5-minute.
MixSeries read_mix(const std::filesystem::path& mix_csv, const std::filesystem::path& load_csv,
                   const std::vector<std::string>& gen_types = {},
                   const std::vector<std::string>& regions = {});

void write_mix(const MixSeries& s, const std::filesystem::path& mix_csv,
               const std::filesystem::path& load_csv);

}  // namespace lmp
