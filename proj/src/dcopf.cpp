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

#include "lmp/dcopf.hpp"

#include "lmp/qp.hpp"
#include "lmp/rng.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace lmp {

namespace {

constexpr double kZeroCostTieStep = 1e-5;  // above the perturbation scale

MatrixXd generator_ptdf(const OpfInstance& inst) {
  const auto& T = inst.matrices->ptdf;
  MatrixXd Tg(T.rows(), inst.num_generators());
  for (int i = 0; i < inst.num_generators(); ++i) Tg.col(i) = T.col(inst.bids[i].bus);
  return Tg;
}

void validate_instance(const OpfInstance& inst) {
  if (!inst.matrices) throw ValidationError("OPF instance without grid matrices");
  const int n = inst.matrices->n();
  const int G = inst.num_generators();
  if (G == 0) throw ValidationError("OPF instance without generators");
  if (inst.demand.size() != n) throw ValidationError("demand vector has wrong dimension");
  if (!inst.demand.allFinite()) throw ValidationError("demand must be finite");
  if ((inst.demand.array() < 0.0).any()) throw ValidationError("demand must be non-negative");
  if (inst.gen_caps_override && inst.gen_caps_override->size() != G)
    throw ValidationError("generator cap override has wrong dimension");
  const VectorXd lo = inst.gen_min(), hi = inst.gen_max();
  for (int i = 0; i < G; ++i) {
    const auto& g = inst.bids[i];
    if (g.bus < 0 || g.bus >= n) throw ValidationError("generator bus out of range");
    if (!(lo(i) <= hi(i)))
      throw ValidationError("generator " + std::to_string(g.id) + ": g_min > g_max");
    if (g.a < 0.0 || (g.a == 0.0 && !inst.allow_zero_cost))
      throw ValidationError("generator " + std::to_string(g.id) +
                            ": quadratic cost must be positive (zero-cost flag not set)");
  }
  const double total = inst.demand.sum();
  if (total < lo.sum() - 1e-9 * (1 + total) || total > hi.sum() + 1e-9 * (1 + total)) {
    std::ostringstream os;
    os << "total demand " << total << " MW outside generation range [" << lo.sum() << ", "
       << hi.sum() << "]";
    throw OpfInfeasible(os.str(), {});
  }
}

qp::Problem build_qp(const OpfInstance& inst, const VectorXd& linear_cost) {
  const auto& M = *inst.matrices;
  const int m = M.m(), G = inst.num_generators();
  const ConstraintIndex ci{m, G};
  const MatrixXd Tg = generator_ptdf(inst);
  const VectorXd Td = M.ptdf * inst.demand;
  const VectorXd lo = inst.gen_min(), hi = inst.gen_max();

  qp::Problem p;
  p.H = MatrixXd::Zero(G, G);
  for (int i = 0; i < G; ++i) p.H(i, i) = 2.0 * inst.bids[i].a;
  p.c = linear_cost;
  p.Aeq = MatrixXd::Ones(1, G);
  p.beq = VectorXd::Constant(1, inst.demand.sum());
  p.Ain = MatrixXd::Zero(ci.size(), G);
  p.bin.resize(ci.size());
  for (int l = 0; l < m; ++l) {
    p.Ain.row(ci.line_upper(l)) = Tg.row(l);
    p.bin(ci.line_upper(l)) = M.flow_max(l) + Td(l);
    p.Ain.row(ci.line_lower(l)) = -Tg.row(l);
    p.bin(ci.line_lower(l)) = -M.flow_min(l) - Td(l);
  }
  for (int i = 0; i < G; ++i) {
    p.Ain(ci.gen_upper(i), i) = 1.0;
    p.bin(ci.gen_upper(i)) = hi(i);
    p.Ain(ci.gen_lower(i), i) = -1.0;
    p.bin(ci.gen_lower(i)) = -lo(i);
  }
  return p;
}

VectorXd effective_linear_cost(const OpfInstance& inst) {
  const int G = inst.num_generators();
  VectorXd b(G);
  for (int i = 0; i < G; ++i) b(i) = inst.bids[i].b;
  if (inst.allow_zero_cost) {
    // Zero-cost ties resolved toward the lowest generator id.
    std::vector<int> order;
    for (int i = 0; i < G; ++i)
      if (inst.bids[i].a == 0.0) order.push_back(i);
    std::sort(order.begin(), order.end(),
              [&](int x, int y) { return inst.bids[x].id < inst.bids[y].id; });
    for (std::size_t k = 0; k < order.size(); ++k) b(order[k]) += kZeroCostTieStep * static_cast<double>(k);
  }
  return b;
}

VectorXd merit_order_start(const OpfInstance& inst, const VectorXd& b) {
  const int G = inst.num_generators();
  const VectorXd lo = inst.gen_min(), hi = inst.gen_max();
  VectorXd g = lo;
  double remaining = inst.demand.sum() - lo.sum();
  std::vector<int> order(G);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
    const double cx = b(x) + 2.0 * inst.bids[x].a * lo(x), cy = b(y) + 2.0 * inst.bids[y].a * lo(y);
    return cx != cy ? cx < cy : inst.bids[x].id < inst.bids[y].id;
  });
  for (int i : order) {
    const double add = std::clamp(remaining, 0.0, hi(i) - lo(i));
    g(i) += add;
    remaining -= add;
  }
  return g;
}

OpfSolution assemble(const OpfInstance& inst, const qp::Problem& p, const qp::Result& r,
                     const OpfOptions& opt) {
  const auto& M = *inst.matrices;
  const int m = M.m(), G = inst.num_generators();
  const ConstraintIndex ci{m, G};
  OpfSolution s;
  s.dispatch = r.x;
  s.lambda = -r.y(0);
  s.mu_upper = r.z.segment(0, m);
  s.mu_lower = r.z.segment(m, m);
  s.tau_upper = r.z.segment(2 * m, G);
  s.tau_lower = r.z.segment(2 * m + G, G);
  s.iterations = r.iterations;
  s.working_set = r.working;

  VectorXd injection = -inst.demand;
  for (int i = 0; i < G; ++i) injection(inst.bids[i].bus) += s.dispatch(i);
  s.line_flows = M.ptdf * injection;

  auto [mec, mcc] = decompose_lmp(s, M);
  s.mec = mec;
  s.mcc = mcc;
  s.lmp = VectorXd::Constant(M.n(), mec) + mcc;
  s.congestion_vector = congestion_vector(s, M);

  s.objective = 0.0;
  for (int i = 0; i < G; ++i) {
    const auto& bid = inst.bids[i];
    s.objective += bid.a * s.dispatch(i) * s.dispatch(i) + bid.b * s.dispatch(i) + bid.c;
  }

  const VectorXd slack = p.bin - p.Ain * s.dispatch;
  for (int k = 0; k < ci.size(); ++k) {
    if (slack(k) <= opt.active_tol * (1.0 + std::abs(p.bin(k)))) {
      s.binding_set.push_back(k);
      if (r.z(k) < opt.weak_multiplier) s.weakly_active.push_back(k);
    }
  }
  s.degenerate = !s.weakly_active.empty();
  return s;
}

OpfSolution solve_with_costs(const OpfInstance& inst, const VectorXd& b, const OpfOptions& opt) {
  const qp::Problem p = build_qp(inst, b);
  const VectorXd start = merit_order_start(inst, b);
  const int m = inst.matrices->m();
  std::vector<bool> soft(p.Ain.rows(), false);
  for (int k = 0; k < 2 * m; ++k) soft[k] = true;
  const auto feas = qp::find_feasible(p, start, soft);
  if (!feas.feasible) {
    std::ostringstream os;
    os << "line limits cannot be met (max violation " << feas.max_violation << " MW); constraints:";
    for (int k : feas.violated) os << ' ' << k;
    throw OpfInfeasible(os.str(), feas.violated);
  }
  const qp::Result r = qp::solve(p, feas.x);
  return assemble(inst, p, r, opt);
}

}  // namespace

VectorXd OpfInstance::gen_max() const {
  if (gen_caps_override) return *gen_caps_override;
  VectorXd v(bids.size());
  for (std::size_t i = 0; i < bids.size(); ++i) v(i) = bids[i].g_max;
  return v;
}

VectorXd OpfInstance::gen_min() const {
  VectorXd v(bids.size());
  for (std::size_t i = 0; i < bids.size(); ++i) v(i) = bids[i].g_min;
  return v;
}

OpfSolution solve(const OpfInstance& inst, const OpfOptions& opt) {
  validate_instance(inst);
  const VectorXd b = effective_linear_cost(inst);
  OpfSolution s = solve_with_costs(inst, b, opt);
  if (!s.degenerate) return s;

  VectorXd perturbed = b;
  for (int i = 0; i < inst.num_generators(); ++i) {
    Rng rng(opt.perturbation_seed, "opf-cost-perturbation", static_cast<std::uint64_t>(inst.bids[i].id));
    perturbed(i) += opt.perturbation * (1.0 + std::abs(b(i))) * (2.0 * rng.uniform() - 1.0);
  }
  OpfSolution t = solve_with_costs(inst, perturbed, opt);
  t.cost_perturbed = true;
  // Objective reported for the unperturbed costs.
  t.objective = 0.0;
  for (int i = 0; i < inst.num_generators(); ++i) {
    const auto& bid = inst.bids[i];
    t.objective += bid.a * t.dispatch(i) * t.dispatch(i) + bid.b * t.dispatch(i) + bid.c;
  }
  return t;
}

std::pair<double, VectorXd> decompose_lmp(const OpfSolution& sol, const GridMatrices& mats) {
  VectorXd mcc = mats.ptdf.transpose() * sol.mu();
  mcc(mats.reference_bus) = 0.0;
  return {sol.lambda, mcc};
}

VectorXd congestion_vector(const OpfSolution& sol, const GridMatrices& mats) {
  return mats.incidence_reduced.transpose() * (mats.susceptance.asDiagonal() * sol.mu());
}

KktResiduals kkt_residuals(const OpfInstance& inst, const OpfSolution& sol) {
  const auto& M = *inst.matrices;
  const int m = M.m(), G = inst.num_generators();
  VectorXd b(G), a(G);
  for (int i = 0; i < G; ++i) {
    a(i) = inst.bids[i].a;
    b(i) = inst.bids[i].b;
  }
  const VectorXd marginal = 2.0 * a.cwiseProduct(sol.dispatch) + b;
  const double price_scale = 1.0 + marginal.lpNorm<Eigen::Infinity>() + std::abs(sol.lambda);

  KktResiduals r;
  VectorXd stat(G);
  for (int i = 0; i < G; ++i)
    stat(i) = marginal(i) - sol.lmp(inst.bids[i].bus) + sol.tau_upper(i) - sol.tau_lower(i);
  r.stationarity = stat.lpNorm<Eigen::Infinity>() / price_scale;

  const qp::Problem p = build_qp(inst, b);
  const VectorXd slack = p.bin - p.Ain * sol.dispatch;
  const double rhs_scale = 1.0 + p.bin.lpNorm<Eigen::Infinity>();
  const double balance = std::abs(sol.dispatch.sum() - inst.demand.sum()) / (1.0 + inst.demand.sum());
  r.primal = std::max(balance, std::max(0.0, -slack.minCoeff()) / rhs_scale);

  VectorXd z(2 * m + 2 * G);
  z << sol.mu_upper, sol.mu_lower, sol.tau_upper, sol.tau_lower;
  r.dual = std::max(0.0, -z.minCoeff()) / price_scale;
  r.complementarity =
      z.cwiseProduct(slack).cwiseAbs().maxCoeff() / (price_scale * rhs_scale);
  return r;
}

double dual_objective(const OpfInstance& inst, const OpfSolution& sol) {
  const auto& M = *inst.matrices;
  const int G = inst.num_generators();
  const MatrixXd Tg = generator_ptdf(inst);
  const VectorXd Td = M.ptdf * inst.demand;
  const VectorXd lo = inst.gen_min(), hi = inst.gen_max();
  const VectorXd line_term = Tg.transpose() * (sol.mu_upper - sol.mu_lower);
  double q = sol.lambda * inst.demand.sum() - sol.mu_upper.dot(Td + M.flow_max) +
             sol.mu_lower.dot(M.flow_min + Td) - sol.tau_upper.dot(hi) + sol.tau_lower.dot(lo);
  for (int i = 0; i < G; ++i) {
    const auto& bid = inst.bids[i];
    if (!(bid.a > 0.0)) throw ValidationError("dual objective needs strictly convex costs");
    const double k = bid.b - sol.lambda + line_term(i) + sol.tau_upper(i) - sol.tau_lower(i);
    q += bid.c - k * k / (4.0 * bid.a);
  }
  return q;
}

VectorXd parameter_vector(const OpfInstance& inst) {
  const int n = inst.matrices->n(), G = inst.num_generators();
  VectorXd theta(n + G);
  theta << inst.demand, inst.gen_max();
  return theta;
}

PricingRegime extract_regime(const OpfInstance& inst, const OpfSolution& sol) {
  PricingRegime reg;
  reg.binding_set = sol.binding_set;
  reg.degenerate = sol.degenerate;
  if (sol.degenerate) return reg;

  const auto& M = *inst.matrices;
  const int n = M.n(), m = M.m(), G = inst.num_generators();
  const qp::Problem p = build_qp(inst, effective_linear_cost(inst));
  const auto& W = sol.working_set;
  const int k = 1 + static_cast<int>(W.size());

  MatrixXd C(k, G);
  C.row(0) = p.Aeq.row(0);
  for (int j = 0; j < k - 1; ++j) C.row(1 + j) = p.Ain.row(W[j]);

  // d(rhs)/d(theta) for each row of C.
  MatrixXd E = MatrixXd::Zero(k, n + G);
  E.row(0).head(n).setOnes();
  for (int j = 0; j < k - 1; ++j) {
    const int c = W[j];
    if (c < m) {
      E.row(1 + j).head(n) = M.ptdf.row(c);
    } else if (c < 2 * m) {
      E.row(1 + j).head(n) = -M.ptdf.row(c - m);
    } else if (c < 2 * m + G) {
      E(1 + j, n + (c - 2 * m)) = 1.0;
    }
  }

  MatrixXd K = MatrixXd::Zero(G + k, G + k);
  K.topLeftCorner(G, G) = p.H;
  K.topRightCorner(G, k) = C.transpose();
  K.bottomLeftCorner(k, G) = C;
  Eigen::FullPivLU<MatrixXd> lu(K);
  lu.setThreshold(1e-10);
  if (!lu.isInvertible()) {
    reg.degenerate = true;
    return reg;
  }
  MatrixXd rhs = MatrixXd::Zero(G + k, n + G);
  rhs.bottomRows(k) = E;
  const MatrixXd X = lu.solve(rhs);

  // LMP = -y 1 + T' (mu- - mu+) as a linear function of nu = [y; z_W].
  MatrixXd L = MatrixXd::Zero(n, k);
  L.col(0).setConstant(-1.0);
  for (int j = 0; j < k - 1; ++j) {
    const int c = W[j];
    if (c < m)
      L.col(1 + j) = -M.ptdf.row(c).transpose();
    else if (c < 2 * m)
      L.col(1 + j) = M.ptdf.row(c - m).transpose();
  }
  L.row(M.reference_bus).setZero();
  L(M.reference_bus, 0) = -1.0;

  const VectorXd theta = parameter_vector(inst);
  PricingRegime::Affine price;
  price.sensitivity = L * X.bottomRows(k);
  price.intercept = sol.lmp - price.sensitivity * theta;
  PricingRegime::Affine disp;
  disp.sensitivity = X.topRows(G);
  disp.intercept = sol.dispatch - disp.sensitivity * theta;
  reg.lmp = price;
  reg.dispatch = disp;
  return reg;
}

}  // namespace lmp
