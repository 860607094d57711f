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

#include "lmp/mix.hpp"

#include <filesystem>

using namespace lmp;
using doctest::Approx;

namespace {

MixSeries series(int T, Timestamp t0 = 1700000000 - 1700000000 % 3600) {
  MixSeries s;
  s.gen_types = {"wind", "coal"};
  s.regions = {"r1", "r2"};
  s.generation.resize(T, 2);
  s.load.resize(T, 2);
  for (int t = 0; t < T; ++t) {
    s.timestamps.push_back(t0 + t * kSecondsPerHour);
    s.generation.row(t) << 30.0 + t, 70.0;
    s.load.row(t) << 40.0, 60.0 + t;
  }
  return s;
}

}  // namespace

TEST_CASE("M-vector arithmetic") {
  auto s = series(1);
  const auto mv = build_mix_vectors(s, 125.0);
  VectorXd expect(5);
  expect << 0.3, 0.7, 0.4, 0.6, 0.8;
  CHECK((mv.vectors[0].features() - expect).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(mv.mean_total == 125.0);
}

TEST_CASE("single generation type has fraction one") {
  MixSeries s;
  s.gen_types = {"gas"};
  s.regions = {"r"};
  s.timestamps = {0, 3600};
  s.generation = MatrixXd::Constant(2, 1, 50.0);
  s.load = MatrixXd::Constant(2, 1, 50.0);
  const auto mv = build_mix_vectors(s);
  CHECK(mv.vectors[1].gen_fractions(0) == 1.0);
  CHECK(mv.vectors[1].scaled_total == 1.0);
}

TEST_CASE("prediction-time denominator reuse") {
  const auto s = series(4);
  const auto a = build_mix_vectors(s, 100.0), b = build_mix_vectors(s, 200.0);
  for (int t = 0; t < 4; ++t) {
    CHECK(b.vectors[t].scaled_total == Approx(a.vectors[t].scaled_total / 2));
    CHECK(a.vectors[t].gen_fractions == b.vectors[t].gen_fractions);
  }
  const auto train = build_mix_vectors(s);
  CHECK(train.mean_total == Approx(s.total_demand().mean()));
}

TEST_CASE("fractions are scale invariant and round trip") {
  auto s = series(24);
  const auto a = build_mix_vectors(s);
  auto scaled = s;
  scaled.generation *= 3.0;
  scaled.load *= 3.0;
  const auto b = build_mix_vectors(scaled);
  const VectorXd d = s.total_demand();
  for (int t = 0; t < 24; ++t) {
    CHECK((a.vectors[t].gen_fractions - b.vectors[t].gen_fractions).norm() < 1e-15);
    CHECK(b.vectors[t].scaled_total * b.mean_total == Approx(3.0 * d(t)));
    const VectorXd back = a.vectors[t].load_fractions * a.vectors[t].scaled_total * a.mean_total;
    CHECK((back - s.load.row(t).transpose()).norm() <= 1e-9 * d(t));
  }
}

TEST_CASE("gaps and imbalance are errors") {
  auto s = series(5);
  s.timestamps[3] += kSecondsPerHour;
  s.timestamps[4] += kSecondsPerHour;
  CHECK_THROWS_AS(build_mix_vectors(s), ValidationError);

  auto u = series(3);
  u.generation(1, 1) = 90.0;  // 20% over load
  CHECK_THROWS_AS(build_mix_vectors(u), ValidationError);
  u.generation(1, 1) = 71.0;  // within 2%
  CHECK_NOTHROW(build_mix_vectors(u));
}

TEST_CASE("5-minute generation averages to hourly") {
  GenerationSamples g;
  g.gen_types = {"solar", "gas"};
  g.mw.resize(12, 2);
  for (int i = 0; i < 12; ++i) {
    g.timestamps.push_back(7200 + 300 * i);
    g.mw.row(i) << i + 1.0, 5.0;
  }
  HourlyLoad l;
  l.regions = {"r"};
  l.timestamps = {7200};
  l.mw = MatrixXd::Constant(1, 1, 11.5);
  const auto s = align_resolutions(g, l);
  CHECK(s.generation(0, 0) == Approx(6.5));
  CHECK(s.generation(0, 1) == 5.0);

  GenerationSamples half = g;
  half.timestamps.resize(5);
  half.mw.conservativeResize(5, 2);
  CHECK_THROWS_AS(align_resolutions(half, l), ValidationError);
}

TEST_CASE("mix and load CSV round trip, unseen types rejected") {
  const auto dir = std::filesystem::temp_directory_path() / "lmp_mix_roundtrip";
  std::filesystem::create_directories(dir);
  const auto s = series(6);
  write_mix(s, dir / "mix.csv", dir / "load.csv");
  const auto back = read_mix(dir / "mix.csv", dir / "load.csv", s.gen_types, s.regions);
  CHECK(back.generation == s.generation);
  CHECK(back.load == s.load);
  CHECK(back.timestamps == s.timestamps);
  CHECK_THROWS_AS(read_mix(dir / "mix.csv", dir / "load.csv", {"wind"}, s.regions), ValidationError);
  std::filesystem::remove_all(dir);
}
