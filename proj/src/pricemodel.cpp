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

#include "lmp/pricemodel.hpp"

#include "lmp/log.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

namespace lmp {

namespace {

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t h = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(h), v.end());
  const double hi = v[h];
  if (v.size() % 2) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(h));
  return 0.5 * (lo + hi);
}

VectorXd softmax(const VectorXd& z) {
  const VectorXd e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

}  // namespace

// ---------------------------------------------------------------------------
// Congestion classifier

VectorXd LogisticModel::probabilities(const VectorRef& x) const {
  if (constant) return VectorXd::Ones(1);
  if (x.size() != mean.size()) throw ValidationError("classifier: feature dimension mismatch");
  VectorXd z(W.rows());
  z(0) = 1.0;
  z.tail(mean.size()) = (x - mean).cwiseQuotient(scale);
  return softmax(W.transpose() * z);
}

int LogisticModel::classify(const VectorRef& x) const {
  if (classes.empty()) throw ValidationError("classifier: untrained regime");
  if (constant) return classes.front();
  const VectorXd p = probabilities(x);
  Index best = 0;
  for (Index c = 1; c < p.size(); ++c)
    if (p(c) > p(best)) best = c;
  return classes[static_cast<std::size_t>(best)];
}

LogisticModel fit_logistic(const MatrixXd& X, const std::vector<int>& y, const ClassifierOptions& opt) {
  if (static_cast<std::size_t>(X.rows()) != y.size() || X.rows() == 0)
    throw ValidationError("fit_logistic: need one label per row");
  if (!X.allFinite()) throw ValidationError("fit_logistic: non-finite features");
  std::map<int, int> counts;
  for (int c : y) ++counts[c];

  LogisticModel m;
  std::vector<int> kept;
  for (const auto& [c, n] : counts)
    if (n >= opt.min_class_samples) kept.push_back(c);
  if (kept.size() < 2) {
    int best = counts.begin()->first;
    for (const auto& [c, n] : counts)
      if (n > counts[best]) best = c;
    m.classes = {best};
    m.constant = true;
    warn("classifier: regime with a single usable congestion class, constant prediction " +
         std::to_string(best));
    return m;
  }
  m.classes = kept;

  std::vector<Index> rows;
  std::vector<int> col;
  for (Index i = 0; i < X.rows(); ++i) {
    const auto it = std::find(kept.begin(), kept.end(), y[static_cast<std::size_t>(i)]);
    if (it == kept.end()) continue;
    rows.push_back(i);
    col.push_back(static_cast<int>(it - kept.begin()));
  }
  const auto N = static_cast<Index>(rows.size()), d = X.cols(), C = static_cast<Index>(kept.size());
  MatrixXd Xs(N, d);
  for (Index r = 0; r < N; ++r) Xs.row(r) = X.row(rows[static_cast<std::size_t>(r)]);
  m.mean = Xs.colwise().mean().transpose();
  m.scale = ((Xs.rowwise() - m.mean.transpose()).colwise().squaredNorm() / static_cast<double>(N))
                .cwiseSqrt()
                .transpose();
  for (Index j = 0; j < d; ++j)
    if (!(m.scale(j) > 1e-12)) m.scale(j) = 1.0;

  MatrixXd Z(N, d + 1);
  Z.col(0).setOnes();
  Z.rightCols(d) = (Xs.rowwise() - m.mean.transpose()).array().rowwise() / m.scale.transpose().array();
  MatrixXd Y = MatrixXd::Zero(N, C);
  for (Index r = 0; r < N; ++r) Y(r, col[static_cast<std::size_t>(r)]) = 1.0;

  const MatrixXd H = Z.transpose() * Z / static_cast<double>(N);
  const double L = 0.5 * Eigen::SelfAdjointEigenSolver<MatrixXd>(H, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff() + opt.l2;
  const double step = 1.0 / L;

  m.W = MatrixXd::Zero(d + 1, C);
  auto loss_grad = [&](const MatrixXd& W, MatrixXd* G) {
    MatrixXd P = Z * W;
    double loss = 0.0;
    for (Index r = 0; r < N; ++r) {
      const double mx = P.row(r).maxCoeff();
      P.row(r) = (P.row(r).array() - mx).exp();
      const double s = P.row(r).sum();
      P.row(r) /= s;
      loss -= std::log(std::max(P(r, col[static_cast<std::size_t>(r)]), 1e-300));
    }
    loss /= static_cast<double>(N);
    loss += 0.5 * opt.l2 * W.bottomRows(d).squaredNorm();
    if (G) {
      *G = Z.transpose() * (P - Y) / static_cast<double>(N);
      G->bottomRows(d) += opt.l2 * W.bottomRows(d);
    }
    return loss;
  };

  MatrixXd G;
  double loss = loss_grad(m.W, &G);
  m.loss_history.push_back(loss);
  int it = 0;
  while (it < opt.max_iters && G.norm() > opt.grad_tol) {
    m.W -= step * G;
    loss = loss_grad(m.W, &G);
    m.loss_history.push_back(loss);
    ++it;
  }
  m.iterations = it;
  return m;
}

int CongestionClassifier::classify(const VectorRef& m, int regime) const {
  if (regime < 0 || regime >= static_cast<int>(regimes.size()))
    throw ValidationError("classifier: unknown M-regime " + std::to_string(regime));
  return regimes[static_cast<std::size_t>(regime)].classify(m);
}

VectorXd CongestionClassifier::probabilities(const VectorRef& m, int regime) const {
  if (regime < 0 || regime >= static_cast<int>(regimes.size()))
    throw ValidationError("classifier: unknown M-regime " + std::to_string(regime));
  return regimes[static_cast<std::size_t>(regime)].probabilities(m);
}

CongestionClassifier train_classifier(const MatrixXd& X, const std::vector<int>& congestion,
                                      const std::vector<int>& m_regime, int n_regimes,
                                      const ClassifierOptions& opt) {
  if (static_cast<std::size_t>(X.rows()) != congestion.size() || congestion.size() != m_regime.size())
    throw ValidationError("train_classifier: label counts differ from rows");
  CongestionClassifier out;
  for (int i = 0; i < n_regimes; ++i) {
    std::vector<Index> rows;
    std::vector<int> y;
    for (std::size_t r = 0; r < m_regime.size(); ++r)
      if (m_regime[r] == i) {
        rows.push_back(static_cast<Index>(r));
        y.push_back(congestion[r]);
      }
    if (rows.empty()) throw ValidationError("train_classifier: M-regime " + std::to_string(i) + " has no rows");
    MatrixXd Xi(static_cast<Index>(rows.size()), X.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) Xi.row(static_cast<Index>(r)) = X.row(rows[r]);
    out.regimes.push_back(fit_logistic(Xi, y, opt));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Regime baselines

RegimeBaseline regime_baseline(const MatrixXd& generation, const MatrixXd& load, const MatrixXd& price,
                               const std::vector<int>& m_regime, const std::vector<int>& c_regime, int i,
                               int j) {
  const Index T = generation.rows();
  if (load.rows() != T || price.rows() != T || static_cast<Index>(m_regime.size()) != T ||
      static_cast<Index>(c_regime.size()) != T)
    throw ValidationError("regime_baseline: row counts differ");
  RegimeBaseline b;
  b.m_regime = i;
  b.c_regime = j;
  b.generation = VectorXd::Zero(generation.cols());
  b.load = VectorXd::Zero(load.cols());
  b.price = VectorXd::Zero(price.cols());
  for (Index t = 0; t < T; ++t) {
    if (m_regime[static_cast<std::size_t>(t)] != i || c_regime[static_cast<std::size_t>(t)] != j) continue;
    ++b.count;
    b.generation += generation.row(t).transpose();
    b.load += load.row(t).transpose();
    b.price += price.row(t).transpose();
  }
  if (b.count == 0) throw ValidationError("regime_baseline: no rows in regime");
  b.generation /= b.count;
  b.load /= b.count;
  b.price /= b.count;
  return b;
}

// ---------------------------------------------------------------------------
// MARS

double MarsModel::predict(const VectorRef& x) const {
  if (x.size() != n_features) throw ValidationError("mars_predict: feature dimension mismatch");
  double v = intercept;
  for (const auto& t : terms) v += t.coef * t.basis(x);
  return v;
}

VectorXd MarsModel::predict_rows(const MatrixXd& X) const {
  VectorXd out(X.rows());
  for (Index r = 0; r < X.rows(); ++r) out(r) = predict(X.row(r).transpose());
  return out;
}

namespace {

struct Candidate {
  double gain = 0.0;
  int feature = -1;
  double knot = 0.0;
};

// Weighted least squares on a subset of columns of the design via the Gram
// matrix. Returns RSS and fills the coefficients.
double gram_fit(const MatrixXd& G, const VectorXd& b, double yy, const std::vector<int>& cols, VectorXd* beta) {
  const auto k = static_cast<Index>(cols.size());
  MatrixXd Gs(k, k);
  VectorXd bs(k);
  for (Index r = 0; r < k; ++r) {
    bs(r) = b(cols[static_cast<std::size_t>(r)]);
    for (Index c = 0; c < k; ++c) Gs(r, c) = G(cols[static_cast<std::size_t>(r)], cols[static_cast<std::size_t>(c)]);
  }
  const VectorXd x = Gs.colPivHouseholderQr().solve(bs);
  if (beta) *beta = x;
  return std::max(0.0, yy - bs.dot(x));
}

double gcv_score(double rss, double n, int n_terms, double penalty) {
  const double c = n_terms + penalty * (n_terms - 1) / 2.0;
  if (c >= n) return std::numeric_limits<double>::infinity();
  const double den = 1.0 - c / n;
  return rss / n / (den * den);
}

}  // namespace

MarsModel mars_fit(const MatrixXd& X, const VectorXd& y, const MarsOptions& opt) {
  return mars_fit(X, y, VectorXd::Ones(y.size()), opt);
}

MarsModel mars_fit(const MatrixXd& X, const VectorXd& y, const VectorXd& weights, const MarsOptions& opt) {
  const Index N = X.rows(), d = X.cols();
  if (N < 10) throw ValidationError("mars_fit: need at least 10 samples");
  if (y.size() != N || weights.size() != N) throw ValidationError("mars_fit: length mismatch");
  if (!X.allFinite() || !y.allFinite()) throw ValidationError("mars_fit: non-finite input");
  if (!(weights.minCoeff() > 0.0)) throw ValidationError("mars_fit: weights must be positive");
  if (opt.max_terms < 1 || opt.gcv_penalty < 0.0 || !(opt.tail >= 0.0 && opt.tail < 0.5))
    throw ValidationError("mars_fit: bad options");

  const VectorXd sw = weights.cwiseSqrt();
  const VectorXd yw = sw.cwiseProduct(y);
  std::vector<VectorXd> Q{sw / sw.norm()};
  VectorXd r = yw - Q[0].dot(yw) * Q[0];
  const double tss = r.squaredNorm();

  MarsModel m;
  m.n_features = static_cast<int>(d);
  std::vector<HingeTerm> terms;

  auto column = [&](const HingeTerm& t) {
    VectorXd c(N);
    for (Index i = 0; i < N; ++i) c(i) = sw(i) * t.basis(X.row(i).transpose());
    return c;
  };

  std::vector<std::vector<Index>> order(static_cast<std::size_t>(d));
  for (Index f = 0; f < d; ++f) {
    auto& o = order[static_cast<std::size_t>(f)];
    o.resize(static_cast<std::size_t>(N));
    std::iota(o.begin(), o.end(), Index{0});
    std::stable_sort(o.begin(), o.end(), [&](Index a, Index b) { return X(a, f) < X(b, f); });
  }

  const double scale_tss = tss > 0.0 ? tss : 1.0;
  double rss = tss;
  while (tss > 1e-24 * std::max(1.0, yw.squaredNorm()) &&
         static_cast<int>(terms.size()) + 3 <= opt.max_terms && rss > opt.min_gain * scale_tss) {
    Candidate best;
    const auto M = static_cast<Index>(Q.size());
    for (Index f = 0; f < d; ++f) {
      const auto& o = order[static_cast<std::size_t>(f)];
      // Sorted sequences and suffix sums (index k covers sorted positions >= k).
      VectorXd xs(N), ws(N);
      for (Index p = 0; p < N; ++p) {
        xs(p) = X(o[static_cast<std::size_t>(p)], f);
        ws(p) = sw(o[static_cast<std::size_t>(p)]);
      }
      MatrixXd A(N + 1, M + 1), B(N + 1, M + 1);  // suffix of sw*x*v and sw*v
      VectorXd W0(N + 1), W1(N + 1), W2(N + 1);
      A.row(N).setZero();
      B.row(N).setZero();
      W0(N) = W1(N) = W2(N) = 0.0;
      for (Index p = N - 1; p >= 0; --p) {
        const Index i = o[static_cast<std::size_t>(p)];
        const double w2 = ws(p) * ws(p);
        W0(p) = W0(p + 1) + w2;
        W1(p) = W1(p + 1) + w2 * xs(p);
        W2(p) = W2(p + 1) + w2 * xs(p) * xs(p);
        for (Index c = 0; c <= M; ++c) {
          const double v = c < M ? Q[static_cast<std::size_t>(c)](i) : r(i);
          B(p, c) = B(p + 1, c) + ws(p) * v;
          A(p, c) = A(p + 1, c) + ws(p) * xs(p) * v;
        }
      }
      const auto skip = static_cast<Index>(std::floor(opt.tail * static_cast<double>(N)));
      const Index lo = skip, hi = N - 1 - skip;
      VectorXd cu(M), cl(M);
      for (Index k = lo; k <= hi; ++k) {
        if (k > 0 && xs(k) == xs(k - 1)) continue;
        const double q = xs(k);
        Index k2 = k;
        while (k2 < N && xs(k2) == q) ++k2;
        // u = sw (x - q)_+ over positions >= k2, l = sw (q - x)_+ over positions < k.
        const double uu0 = W2(k2) - 2.0 * q * W1(k2) + q * q * W0(k2);
        const double ll0 = q * q * (W0(0) - W0(k)) - 2.0 * q * (W1(0) - W1(k)) + (W2(0) - W2(k));
        for (Index c = 0; c < M; ++c) {
          cu(c) = A(k2, c) - q * B(k2, c);
          cl(c) = q * (B(0, c) - B(k, c)) - (A(0, c) - A(k, c));
        }
        const double ru = A(k2, M) - q * B(k2, M);
        const double rl = q * (B(0, M) - B(k, M)) - (A(0, M) - A(k, M));
        const double uu = uu0 - cu.squaredNorm(), ll = ll0 - cl.squaredNorm(), ul = -cu.dot(cl);
        const bool u_ok = uu > 1e-10 * uu0 && uu0 > 0.0, l_ok = ll > 1e-10 * ll0 && ll0 > 0.0;
        double gain = 0.0;
        if (u_ok && l_ok) {
          const double det = uu * ll - ul * ul;
          if (det > 1e-10 * uu * ll)
            gain = (ll * ru * ru - 2.0 * ul * ru * rl + uu * rl * rl) / det;
          else
            gain = std::max(ru * ru / uu, rl * rl / ll);
        } else if (u_ok) {
          gain = ru * ru / uu;
        } else if (l_ok) {
          gain = rl * rl / ll;
        }
        if (gain > best.gain) best = {gain, static_cast<int>(f), q};
      }
    }
    if (best.feature < 0 || best.gain < opt.min_gain * scale_tss) break;

    bool added = false;
    for (int sign : {1, -1}) {
      HingeTerm t{best.feature, best.knot, sign, 0.0};
      VectorXd c = column(t);
      const double c0 = c.squaredNorm();
      if (!(c0 > 0.0)) continue;
      for (int pass = 0; pass < 2; ++pass)
        for (const auto& qv : Q) c -= qv.dot(c) * qv;
      if (c.squaredNorm() <= 1e-10 * c0) continue;
      c.normalize();
      r -= c.dot(r) * c;
      Q.push_back(std::move(c));
      terms.push_back(t);
      added = true;
    }
    if (!added) break;
    rss = r.squaredNorm();
  }

  // Gram system over [intercept, terms] in the weighted space.
  const auto K = static_cast<Index>(terms.size()) + 1;
  MatrixXd D(N, K);
  D.col(0) = sw;
  for (Index k = 1; k < K; ++k) D.col(k) = column(terms[static_cast<std::size_t>(k - 1)]);
  const MatrixXd G = D.transpose() * D;
  const VectorXd b = D.transpose() * yw;
  const double yy = yw.squaredNorm();

  std::vector<int> cols(static_cast<std::size_t>(K));
  std::iota(cols.begin(), cols.end(), 0);
  const auto n = static_cast<double>(N);
  VectorXd beta;
  double cur_rss = gram_fit(G, b, yy, cols, &beta);
  double cur = gcv_score(cur_rss, n, static_cast<int>(cols.size()), opt.gcv_penalty);
  m.prune_gcv.push_back(cur);
  while (cols.size() > 1) {
    double best_gcv = std::numeric_limits<double>::infinity();
    std::size_t drop = 0;
    for (std::size_t c = 1; c < cols.size(); ++c) {
      std::vector<int> trial = cols;
      trial.erase(trial.begin() + static_cast<std::ptrdiff_t>(c));
      const double g = gcv_score(gram_fit(G, b, yy, trial, nullptr), n, static_cast<int>(trial.size()), opt.gcv_penalty);
      if (g < best_gcv) {
        best_gcv = g;
        drop = c;
      }
    }
    if (!(best_gcv <= cur)) break;
    cols.erase(cols.begin() + static_cast<std::ptrdiff_t>(drop));
    cur = best_gcv;
    m.prune_gcv.push_back(cur);
  }
  cur_rss = gram_fit(G, b, yy, cols, &beta);
  m.gcv = cur;
  m.intercept = beta(0);
  for (std::size_t c = 1; c < cols.size(); ++c) {
    HingeTerm t = terms[static_cast<std::size_t>(cols[c] - 1)];
    t.coef = beta(static_cast<Index>(c));
    m.terms.push_back(t);
  }
  m.r2 = tss > 0.0 ? 1.0 - cur_rss / tss : 1.0;
  return m;
}

VectorXd recency_weights(const std::vector<Timestamp>& ts, double half_life_days) {
  if (!(half_life_days > 0.0)) throw ValidationError("recency_weights: half life must be positive");
  VectorXd w(static_cast<Index>(ts.size()));
  if (ts.empty()) return w;
  const Timestamp latest = *std::max_element(ts.begin(), ts.end());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const double age = static_cast<double>(latest - ts[i]) / 86400.0;
    w(static_cast<Index>(i)) = std::exp2(-age / half_life_days);
  }
  return w / w.mean();
}

// ---------------------------------------------------------------------------
// Hourly residual model

double ArmaFit::forecast() const {
  const double w = c + phi * last_w + theta * last_e;
  return d ? last_y + w : w;
}

void ArmaFit::update(double y) {
  const double w_hat = c + phi * last_w + theta * last_e;
  if (std::isnan(y)) {
    last_e = 0.0;
    last_w = w_hat;
    last_y = d ? last_y + w_hat : w_hat;
    return;
  }
  const double w = d ? y - last_y : y;
  last_e = w - w_hat;
  last_w = w;
  last_y = y;
}

namespace {

struct ClsResult {
  double sse = std::numeric_limits<double>::infinity();
  double c = 0.0, phi = 0.0;
};

// For fixed theta, e_t = z_t - c a_t - phi b_t with z, a, b obeying the MA
// recursion; (c, phi) by ordinary least squares.
ClsResult cls_fixed_theta(const VectorXd& w, double theta) {
  const Index n = w.size();
  double z = 0.0, a = 0.0, b = 0.0;
  Eigen::Matrix2d AtA = Eigen::Matrix2d::Zero();
  Eigen::Vector2d Atz = Eigen::Vector2d::Zero();
  double zz = 0.0;
  for (Index t = 1; t < n; ++t) {
    z = w(t) - theta * z;
    a = 1.0 - theta * a;
    b = w(t - 1) - theta * b;
    AtA(0, 0) += a * a;
    AtA(0, 1) += a * b;
    AtA(1, 1) += b * b;
    Atz(0) += a * z;
    Atz(1) += b * z;
    zz += z * z;
  }
  AtA(1, 0) = AtA(0, 1);
  ClsResult r;
  const Eigen::Vector2d x = AtA.ldlt().solve(Atz);
  r.c = x(0);
  r.phi = x(1);
  r.sse = std::max(0.0, zz - x.dot(Atz));
  return r;
}

}  // namespace

ArmaFit fit_arma(const VectorXd& y, ArmaOrder order) {
  if (order.d < 0 || order.d > 1 || order.q < 0 || order.q > 1)
    throw ValidationError("fit_arma: supported orders are d, q in {0, 1}");
  if (y.size() < 3 + order.d || !y.allFinite()) throw ValidationError("fit_arma: series too short or non-finite");
  ArmaFit f;
  f.d = order.d;
  f.last_y = y(y.size() - 1);
  const VectorXd w = order.d ? VectorXd(y.tail(y.size() - 1) - y.head(y.size() - 1)) : y;
  const Index n = w.size();
  const double mean = w.mean();
  const double var = (w.array() - mean).square().mean();
  f.last_w = w(n - 1);
  if (!(var > 1e-14 * (mean * mean + 1e-300))) {
    f.c = mean;
    return f;
  }

  double theta = 0.0;
  ClsResult best = cls_fixed_theta(w, 0.0);
  if (order.q == 1) {
    for (int g = -49; g <= 49; ++g) {
      const double th = 0.02 * g;
      const auto r = cls_fixed_theta(w, th);
      if (r.sse < best.sse) {
        best = r;
        theta = th;
      }
    }
    double lo = std::max(-0.99, theta - 0.02), hi = std::min(0.99, theta + 0.02);
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double x1 = hi - gr * (hi - lo), x2 = lo + gr * (hi - lo);
    auto f1 = cls_fixed_theta(w, x1), f2 = cls_fixed_theta(w, x2);
    for (int it = 0; it < 60; ++it) {
      if (f1.sse < f2.sse) {
        hi = x2;
        x2 = x1;
        f2 = f1;
        x1 = hi - gr * (hi - lo);
        f1 = cls_fixed_theta(w, x1);
      } else {
        lo = x1;
        x1 = x2;
        f1 = f2;
        x2 = lo + gr * (hi - lo);
        f2 = cls_fixed_theta(w, x2);
      }
    }
    const double tm = 0.5 * (lo + hi);
    const auto rm = cls_fixed_theta(w, tm);
    if (rm.sse < best.sse) {
      best = rm;
      theta = tm;
    }
  }
  f.c = best.c;
  f.phi = best.phi;
  f.theta = theta;
  if (!(std::abs(f.phi) < 1.0)) {
    const auto ar = cls_fixed_theta(w, 0.0);
    f.phi = std::clamp(ar.phi, -0.99, 0.99);
    double s = 0.0;
    for (Index t = 1; t < n; ++t) s += w(t) - f.phi * w(t - 1);
    f.c = s / static_cast<double>(n - 1);
    f.theta = 0.0;
    f.fallback = true;
  }
  double e = 0.0, sse = 0.0;
  for (Index t = 1; t < n; ++t) {
    e = w(t) - f.c - f.phi * w(t - 1) - f.theta * e;
    sse += e * e;
  }
  f.last_e = e;
  const double dof = static_cast<double>(n - 1) - (2.0 + order.q);
  f.sigma2 = sse / std::max(1.0, dof);
  return f;
}

VectorXd HourlyResidualModel::forecast() const {
  VectorXd out(static_cast<Index>(hours.size()));
  for (std::size_t h = 0; h < hours.size(); ++h) out(static_cast<Index>(h)) = hours[h].forecast();
  return out;
}

void HourlyResidualModel::update(const VectorRef& day) {
  if (day.size() != static_cast<Index>(hours.size())) throw ValidationError("residual update: expected 24 values");
  for (std::size_t h = 0; h < hours.size(); ++h) hours[h].update(day(static_cast<Index>(h)));
}

HourlyResidualModel fit_hourly_residuals(const MatrixXd& residuals, ArmaOrder order) {
  if (residuals.cols() != 24) throw ValidationError("fit_hourly_residuals: expected 24 columns");
  if (residuals.rows() < 15) throw ValidationError("fit_hourly_residuals: need at least 15 days");
  HourlyResidualModel m;
  m.order = order;
  for (Index h = 0; h < 24; ++h) {
    m.hours.push_back(fit_arma(residuals.col(h), order));
    if (m.hours.back().fallback)
      warn("hourly residual model: hour " + std::to_string(h) + " non-stationary, shrunk AR(1) used");
  }
  return m;
}

// ---------------------------------------------------------------------------
// Smoothing

void SmoothingConfig::validate() const {
  if (!(k_mad > 0.0)) throw ValidationError("smoothing: k_mad must be positive");
  if (window < 1 || window % 2 == 0) throw ValidationError("smoothing: window must be odd and >= 1");
  if (median_window < 1 || median_window % 2 == 0)
    throw ValidationError("smoothing: median window must be odd and >= 1");
}

VectorXd rolling_median(const VectorXd& x, int window) {
  const Index T = x.size(), half = window / 2;
  VectorXd out(T);
  std::vector<double> buf;
  for (Index t = 0; t < T; ++t) {
    const Index a = std::max<Index>(0, t - half), b = std::min<Index>(T - 1, t + half);
    buf.assign(x.data() + a, x.data() + b + 1);
    out(t) = median_of(buf);
  }
  return out;
}

std::vector<bool> flag_spikes(const VectorXd& x, double k_mad, int median_window) {
  const VectorXd dev = x - rolling_median(x, median_window);
  const double med = median_of({x.data(), x.data() + x.size()});
  std::vector<double> ad(static_cast<std::size_t>(x.size()));
  for (Index t = 0; t < x.size(); ++t) ad[static_cast<std::size_t>(t)] = std::abs(x(t) - med);
  const double mad = median_of(ad);
  std::vector<bool> out(static_cast<std::size_t>(x.size()));
  for (Index t = 0; t < x.size(); ++t) out[static_cast<std::size_t>(t)] = std::abs(dev(t)) > k_mad * mad;
  return out;
}

VectorXd smooth(const VectorXd& raw, const SmoothingConfig& cfg, std::vector<bool>* spikes) {
  cfg.validate();
  const Index T = raw.size();
  if (T < cfg.window) throw ValidationError("smooth: series shorter than the window");
  const auto flags = flag_spikes(raw, cfg.k_mad, cfg.median_window);
  if (spikes) *spikes = flags;
  if (std::all_of(flags.begin(), flags.end(), [](bool b) { return b; })) {
    warn("smooth: every point flagged as a spike, returning the rolling median");
    return rolling_median(raw, cfg.median_window);
  }
  VectorXd x = raw;
  Index prev = -1;
  for (Index t = 0; t < T; ++t) {
    if (!flags[static_cast<std::size_t>(t)]) {
      prev = t;
      continue;
    }
    Index next = t + 1;
    while (next < T && flags[static_cast<std::size_t>(next)]) ++next;
    if (prev < 0)
      x(t) = raw(next);
    else if (next >= T)
      x(t) = raw(prev);
    else
      x(t) = raw(prev) + (raw(next) - raw(prev)) * static_cast<double>(t - prev) / static_cast<double>(next - prev);
  }
  const Index half = cfg.window / 2;
  VectorXd out(T);
  for (Index t = 0; t < T; ++t) {
    const Index a = std::max<Index>(0, t - half), b = std::min<Index>(T - 1, t + half);
    out(t) = x.segment(a, b - a + 1).mean();
  }
  return out;
}

void smooth(ForecastSeries& f, const SmoothingConfig& cfg) {
  f.smoothed = smooth(f.raw, cfg, &f.spike);
}

VectorXd day_ago(const VectorXd& prices, const VectorXd& before) {
  const Index T = prices.size();
  if (before.size() != 0 && before.size() != 24) throw ValidationError("day_ago: history must be 24 hours");
  VectorXd out(T);
  for (Index t = 0; t < T; ++t) {
    if (t >= 24)
      out(t) = prices(t - 24);
    else
      out(t) = before.size() ? before(t) : prices(t);
  }
  return out;
}

}  // namespace lmp
