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

#include <cstdint>
#include <vector>

namespace lmp {

// ---------------------------------------------------------------------------
// Congestion classifier

struct ClassifierOptions {
  double l2 = 1e-3;
  double grad_tol = 1e-6;
  int max_iters = 10000;
  int min_class_samples = 5;
};

/// Softmax regression for one M-regime. Features are standardized with the
/// stored mean and scale; W has a bias row first.
struct LogisticModel {
  std::vector<int> classes;  // sorted class ids
  VectorXd mean, scale;
  MatrixXd W;  // (d+1) x C
  bool constant = false;
  int iterations = 0;
  std::vector<double> loss_history;

  VectorXd probabilities(const VectorRef& x) const;
  int classify(const VectorRef& x) const;
};

LogisticModel fit_logistic(const MatrixXd& X, const std::vector<int>& y, const ClassifierOptions& opt = {});

struct CongestionClassifier {
  std::vector<LogisticModel> regimes;  // indexed by M-regime

  int classify(const VectorRef& m, int regime) const;
  VectorXd probabilities(const VectorRef& m, int regime) const;
};

/// One model per M-regime. A regime with fewer than two classes holding
/// `min_class_samples` rows each gets a constant classifier for its most
/// frequent class (lowest id on ties).
CongestionClassifier train_classifier(const MatrixXd& X, const std::vector<int>& congestion,
                                      const std::vector<int>& m_regime, int n_regimes,
                                      const ClassifierOptions& opt = {});

// ---------------------------------------------------------------------------
// Regime baselines

struct RegimeBaseline {
  int m_regime = 0, c_regime = 0;
  int count = 0;
  VectorXd generation;  // per generation type
  VectorXd load;        // per region
  VectorXd price;       // per node
};

/// Means over exactly the rows labelled (i, j). Rows are hours; generation
/// T x K, load T x R, price T x N.
RegimeBaseline regime_baseline(const MatrixXd& generation, const MatrixXd& load, const MatrixXd& price,
                               const std::vector<int>& m_regime, const std::vector<int>& c_regime, int i,
                               int j);

// ---------------------------------------------------------------------------
// MARS

struct HingeTerm {
  int feature = 0;
  double knot = 0.0;
  int sign = 1;  // +1: max(x - knot, 0), -1: max(knot - x, 0)
  double coef = 0.0;

  double basis(const VectorRef& x) const {
    const double v = sign > 0 ? x(feature) - knot : knot - x(feature);
    return v > 0.0 ? v : 0.0;
  }
};

struct MarsOptions {
  int max_terms = 21;  // including the intercept
  double gcv_penalty = 3.0;
  double tail = 0.05;  // knot candidates exclude this fraction at each end
  double min_gain = 1e-3;  // forward pass stops when R^2 improves by less
};

struct MarsModel {
  int n_features = 0;
  double intercept = 0.0;
  std::vector<HingeTerm> terms;
  double gcv = 0.0;
  double r2 = 0.0;
  std::vector<double> prune_gcv;  // GCV after each accepted pruning step

  double predict(const VectorRef& x) const;
  VectorXd predict_rows(const MatrixXd& X) const;
};

/// Additive (degree-1) MARS by weighted least squares. X rows are samples.
/// Forward pass adds reflected hinge pairs; backward pass drops single terms
/// while GCV does not increase.
MarsModel mars_fit(const MatrixXd& X, const VectorXd& y, const VectorXd& weights,
                   const MarsOptions& opt = {});
MarsModel mars_fit(const MatrixXd& X, const VectorXd& y, const MarsOptions& opt = {});

/// 2^(-age/half_life) with age in days from the latest timestamp, scaled to
/// mean 1.
VectorXd recency_weights(const std::vector<Timestamp>& ts, double half_life_days = 14.0);

// ---------------------------------------------------------------------------
// Hourly residual model

struct ArmaOrder {
  int d = 0;  // differencing, 0 or 1
  int q = 1;  // MA order, 0 or 1
};

struct ArmaFit {
  int d = 0;
  double c = 0.0, phi = 0.0, theta = 0.0;
  double sigma2 = 0.0;
  bool fallback = false;  // non-stationary fit replaced by a shrunk AR(1)
  double last_y = 0.0;    // last level
  double last_w = 0.0;    // last (differenced) value
  double last_e = 0.0;    // last innovation

  double forecast() const;
  /// Advances the state by one observed level; a missing observation
  /// (NaN) advances with the forecast and a zero innovation.
  void update(double y);
};

/// Conditional least squares with e_0 = 0. For fixed theta the problem is
/// linear in (c, phi); theta is found by grid search and golden refinement.
ArmaFit fit_arma(const VectorXd& y, ArmaOrder order = {});

struct HourlyResidualModel {
  ArmaOrder order;
  std::vector<ArmaFit> hours;  // 24

  VectorXd forecast() const;  // next day, per hour
  void update(const VectorRef& day);  // one observed day, per hour
};

/// Residuals are days x 24; needs at least 15 days.
HourlyResidualModel fit_hourly_residuals(const MatrixXd& residuals, ArmaOrder order = {});

// ---------------------------------------------------------------------------
// Smoothing

struct SmoothingConfig {
  double k_mad = 3.0;
  int window = 3;
  int median_window = 5;

  void validate() const;
};

struct ForecastSeries {
  std::vector<Timestamp> timestamps;
  VectorXd raw, smoothed;
  std::vector<int> m_regime, c_regime;
  std::vector<bool> spike;

  Index size() const { return raw.size(); }
};

/// Centered rolling median, window truncated at the ends.
VectorXd rolling_median(const VectorXd& x, int window);

/// Points with |x - rolling median| > k_mad * MAD, the median absolute
/// deviation of x about its median.
std::vector<bool> flag_spikes(const VectorXd& x, double k_mad, int median_window = 5);

/// Removes flagged spikes by linear interpolation, then applies a centered
/// moving average. Sets `smoothed` and `spike`; `raw` is kept.
void smooth(ForecastSeries& f, const SmoothingConfig& cfg = {});
VectorXd smooth(const VectorXd& raw, const SmoothingConfig& cfg, std::vector<bool>* spikes = nullptr);

/// Price 24 samples earlier; the first day repeats `before` (the last day of
/// history) or the first observed day when empty.
VectorXd day_ago(const VectorXd& prices, const VectorXd& before = {});

}  // namespace lmp
