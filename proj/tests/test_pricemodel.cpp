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
#include "support.hpp"

#include "lmp/log.hpp"
#include "lmp/pricemodel.hpp"

#include <cmath>

using namespace lmp;
using doctest::Approx;

namespace {

// Two Gaussian clouds separated along the first axis.
void two_clouds(MatrixXd& X, std::vector<int>& y, int a, int b, double gap) {
  Rng rng(4, "clouds");
  const int N = 120;
  X.resize(N, 3);
  y.resize(N);
  for (int i = 0; i < N; ++i) {
    const bool second = i % 2;
    y[static_cast<std::size_t>(i)] = second ? b : a;
    X(i, 0) = (second ? gap : -gap) + 0.3 * rng.normal();
    X(i, 1) = rng.normal();
    X(i, 2) = 0.5 * rng.normal();
  }
}

}  // namespace

TEST_CASE("logistic regression separates two clouds and is label-symmetric") {
  MatrixXd X;
  std::vector<int> y;
  two_clouds(X, y, 0, 1, 2.0);
  const auto m = fit_logistic(X, y);
  int correct = 0;
  for (Index i = 0; i < X.rows(); ++i) correct += m.classify(X.row(i).transpose()) == y[static_cast<std::size_t>(i)];
  CHECK(correct == X.rows());
  for (std::size_t k = 1; k < m.loss_history.size(); ++k) CHECK(m.loss_history[k] <= m.loss_history[k - 1] + 1e-15);

  Rng rng(9, "probe");
  for (int k = 0; k < 20; ++k) {
    VectorXd x(3);
    for (int j = 0; j < 3; ++j) x(j) = 3.0 * rng.normal();
    CHECK(m.probabilities(x).sum() == Approx(1.0).epsilon(1e-10));
  }

  // Swapping the class ids gives the same probability per class.
  std::vector<int> swapped = y;
  for (auto& c : swapped) c = c == 0 ? 7 : 3;  // 0 -> 7, 1 -> 3, so order flips
  const auto s = fit_logistic(X, swapped);
  REQUIRE(s.classes == std::vector<int>{3, 7});
  for (Index i = 0; i < X.rows(); i += 7) {
    const VectorXd p = m.probabilities(X.row(i).transpose()), q = s.probabilities(X.row(i).transpose());
    CHECK(p(0) == Approx(q(1)).epsilon(1e-9));
    CHECK(p(1) == Approx(q(0)).epsilon(1e-9));
  }
}

TEST_CASE("classifier: pure-class centroids, constant regimes, unknown regimes") {
  MatrixXd X;
  std::vector<int> y;
  two_clouds(X, y, 2, 5, 1.5);
  std::vector<int> reg(static_cast<std::size_t>(X.rows()), 0);
  // Regime 1: a single congestion class.
  MatrixXd X2(X.rows() + 10, 3);
  X2 << X, MatrixXd::Constant(10, 3, 0.25);
  std::vector<int> y2 = y, reg2 = reg;
  for (int k = 0; k < 10; ++k) {
    y2.push_back(4);
    reg2.push_back(1);
  }
  warnings_enabled() = false;
  const auto c = train_classifier(X2, y2, reg2, 2);
  warnings_enabled() = true;
  VectorXd c2 = VectorXd::Zero(3), c5 = VectorXd::Zero(3);
  int n2 = 0, n5 = 0;
  for (Index i = 0; i < X.rows(); ++i) {
    if (y[static_cast<std::size_t>(i)] == 2) {
      c2 += X.row(i).transpose();
      ++n2;
    } else {
      c5 += X.row(i).transpose();
      ++n5;
    }
  }
  CHECK(c.classify(c2 / n2, 0) == 2);
  CHECK(c.classify(c5 / n5, 0) == 5);
  CHECK(c.regimes[1].constant);
  CHECK(c.classify(VectorXd::Constant(3, 100.0), 1) == 4);
  CHECK_THROWS_AS(c.classify(c2, 2), ValidationError);
  CHECK_THROWS_AS(c.classify(VectorXd::Zero(2), 0), ValidationError);
}

TEST_CASE("classifier: rare classes drop out, ties go to the lowest class") {
  MatrixXd X;
  std::vector<int> y;
  two_clouds(X, y, 0, 1, 2.0);
  y[0] = 9;  // a single sample of class 9
  const auto m = fit_logistic(X, y);
  CHECK(m.classes == std::vector<int>{0, 1});

  LogisticModel tie;
  tie.classes = {1, 4, 6};
  tie.mean = VectorXd::Zero(2);
  tie.scale = VectorXd::Ones(2);
  tie.W = MatrixXd::Zero(3, 3);
  CHECK(tie.classify(VectorXd::Ones(2)) == 1);
}

TEST_CASE("regime baselines average exactly the labelled rows") {
  MatrixXd g(4, 2), l(4, 1), p(4, 3);
  g << 1, 2, 3, 4, 5, 6, 7, 8;
  l << 10, 20, 30, 40;
  p << 1, 1, 1, 2, 2, 2, 3, 3, 3, 4, 4, 4;
  const std::vector<int> mi{0, 1, 0, 0}, cj{0, 0, 0, 1};
  const auto b = regime_baseline(g, l, p, mi, cj, 0, 0);
  CHECK(b.count == 2);
  CHECK(b.generation(0) == Approx(3.0));
  CHECK(b.generation(1) == Approx(4.0));
  CHECK(b.load(0) == Approx(20.0));
  CHECK(b.price(2) == Approx(2.0));
  CHECK_THROWS_AS(regime_baseline(g, l, p, mi, cj, 1, 1), ValidationError);
}

TEST_CASE("MARS recovers a single hinge") {
  const int N = 200;
  MatrixXd X(N, 1);
  VectorXd y(N);
  for (int i = 0; i < N; ++i) {
    X(i, 0) = i / static_cast<double>(N);
    y(i) = std::max(X(i, 0) - 0.5, 0.0);
  }
  const auto m = mars_fit(X, y);
  REQUIRE(m.terms.size() == 1u);
  CHECK(m.terms[0].sign == 1);
  CHECK(std::abs(m.terms[0].knot - 0.5) <= 0.02);
  CHECK(m.r2 > 0.999);
  for (std::size_t k = 1; k < m.prune_gcv.size(); ++k) CHECK(m.prune_gcv[k] <= m.prune_gcv[k - 1]);
  for (int i = 0; i < N; i += 17) CHECK(m.predict(X.row(i).transpose()) == Approx(y(i)).epsilon(1e-2).scale(1.0));
}

TEST_CASE("MARS: constant and affine targets") {
  const int N = 60;
  MatrixXd X(N, 2);
  Rng rng(2, "mars-affine");
  for (int i = 0; i < N; ++i) {
    X(i, 0) = rng.uniform();
    X(i, 1) = rng.normal();
  }
  const auto c = mars_fit(X, VectorXd::Constant(N, 4.5));
  CHECK(c.terms.empty());
  CHECK(c.intercept == Approx(4.5));
  CHECK(c.predict(VectorXd::Zero(2)) == Approx(4.5));

  const VectorXd y = (2.0 - 3.0 * X.col(1).array()).matrix();
  const auto a = mars_fit(X, y);
  CHECK((a.predict_rows(X) - y).cwiseAbs().maxCoeff() < 1e-6);
  for (const auto& t : a.terms) CHECK(t.feature == 1);

  CHECK_THROWS_AS(mars_fit(X.topRows(5), y.head(5)), ValidationError);
  CHECK_THROWS_AS(a.predict(VectorXd::Zero(3)), ValidationError);
}

TEST_CASE("MARS fit is continuous at every knot and honours weights") {
  const int N = 400;
  Rng rng(6, "mars-cont");
  MatrixXd X(N, 3);
  VectorXd y(N);
  for (int i = 0; i < N; ++i) {
    for (int j = 0; j < 3; ++j) X(i, j) = rng.normal();
    y(i) = std::max(X(i, 0), 0.0) - 2.0 * std::max(0.3 - X(i, 2), 0.0) + 0.05 * rng.normal();
  }
  VectorXd w(N);
  for (int i = 0; i < N; ++i) w(i) = 0.5 + rng.uniform();
  const auto m = mars_fit(X, y, w);
  CHECK(m.r2 > 0.95);
  CHECK(static_cast<int>(m.terms.size()) + 1 <= MarsOptions{}.max_terms);
  for (const auto& t : m.terms) {
    VectorXd lo = VectorXd::Zero(3), hi = VectorXd::Zero(3);
    lo(t.feature) = t.knot - 1e-12;
    hi(t.feature) = t.knot + 1e-12;
    CHECK(std::abs(m.predict(lo) - m.predict(hi)) < 1e-10);
  }
  for (std::size_t k = 1; k < m.prune_gcv.size(); ++k) CHECK(m.prune_gcv[k] <= m.prune_gcv[k - 1]);
  CHECK_THROWS_AS(mars_fit(X, y, VectorXd::Zero(N)), ValidationError);
}

TEST_CASE("recency weights") {
  const std::vector<Timestamp> same{100, 100, 100};
  CHECK(recency_weights(same).isApprox(VectorXd::Ones(3)));
  const std::vector<Timestamp> ts{0, 14 * 86400};
  const VectorXd w = recency_weights(ts, 14.0);
  CHECK(w(0) / w(1) == Approx(0.5));
  CHECK(w.mean() == Approx(1.0).epsilon(1e-15));
  CHECK_THROWS_AS(recency_weights(ts, 0.0), ValidationError);
}

TEST_CASE("ARMA: AR(1) coefficient, white noise, constants") {
  Rng rng(11, "arma");
  VectorXd ar(200);
  ar(0) = 0.0;
  for (Index t = 1; t < 200; ++t) ar(t) = 0.8 * ar(t - 1) + rng.normal();
  const auto f = fit_arma(ar);
  CHECK(std::abs(f.phi - 0.8) <= 0.1);
  CHECK(std::abs(f.phi) < 1.0);

  VectorXd wn(200);
  for (Index t = 0; t < 200; ++t) wn(t) = 5.0 + rng.normal();
  const auto g = fit_arma(wn);
  // phi and theta may cancel on white noise; the implied one-step response must not.
  CHECK(std::abs(g.phi + g.theta) <= 3.0 / std::sqrt(200.0));
  CHECK(g.forecast() == Approx(5.0).epsilon(0.1));

  const auto k = fit_arma(VectorXd::Constant(30, 2.5));
  CHECK(k.forecast() == Approx(2.5));
  const auto kd = fit_arma(VectorXd::Constant(30, 2.5), {1, 1});
  CHECK(kd.forecast() == Approx(2.5));
  CHECK_THROWS_AS(fit_arma(ar, {2, 1}), ValidationError);

  // Updating with the series' own continuation matches refitting state.
  auto u = fit_arma(ar.head(150));
  for (Index t = 150; t < 200; ++t) u.update(ar(t));
  CHECK(u.last_y == ar(199));
  CHECK(u.forecast() == Approx(u.c + u.phi * ar(199) + u.theta * u.last_e));
  auto gap = u;
  const double next = gap.forecast();
  gap.update(std::nan(""));
  CHECK(gap.last_y == Approx(next));
  CHECK(gap.last_e == 0.0);
}

TEST_CASE("hourly residual model") {
  MatrixXd R = MatrixXd::Constant(20, 24, 1.0);
  for (Index h = 0; h < 24; ++h) R.col(h).array() += 0.1 * static_cast<double>(h);
  const auto m = fit_hourly_residuals(R);
  REQUIRE(m.hours.size() == 24u);
  CHECK(m.forecast()(23) == Approx(3.3));
  CHECK_THROWS_AS(fit_hourly_residuals(R.topRows(10)), ValidationError);
  CHECK_THROWS_AS(fit_hourly_residuals(R.leftCols(12)), ValidationError);
}

TEST_CASE("smoothing removes spikes and keeps flags") {
  SmoothingConfig cfg;
  const VectorXd flat = VectorXd::Constant(48, 20.0);
  std::vector<bool> flags;
  CHECK(smooth(flat, cfg, &flags).isApprox(flat));
  CHECK(std::none_of(flags.begin(), flags.end(), [](bool b) { return b; }));

  VectorXd spiky = flat;
  spiky(17) = 300.0;
  ForecastSeries f;
  f.raw = spiky;
  smooth(f, cfg);
  CHECK(f.smoothed.isApprox(flat));
  CHECK(f.spike[17]);
  CHECK(f.raw(17) == 300.0);
  CHECK(std::count(f.spike.begin(), f.spike.end(), true) == 1);

  VectorXd ramp(48);
  for (Index t = 0; t < 48; ++t) ramp(t) = 2.0 * static_cast<double>(t);
  const VectorXd r = smooth(ramp, cfg);
  CHECK((r.segment(3, 42) - ramp.segment(3, 42)).cwiseAbs().maxCoeff() < 1e-9);

  cfg.window = 2;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("day-ago shifts by 24 hours") {
  VectorXd p(48);
  for (Index t = 0; t < 48; ++t) p(t) = static_cast<double>(t);
  const VectorXd d = day_ago(p, VectorXd::Constant(24, -1.0));
  CHECK(d(0) == -1.0);
  CHECK(d(30) == 6.0);
  CHECK(day_ago(p)(5) == 5.0);
}
