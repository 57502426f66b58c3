// Copyright 2026 The mixpgd Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mixpgd/losses.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "mixpgd/util.hpp"

namespace mixpgd {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

}  // namespace

// ---------------------------------------------------------------------------
// CTC

double ctc_nll(const Tensor& log_probs, std::span<const int> labels, int blank, Tensor* grad) {
  const std::size_t T = log_probs.dim(0), K = log_probs.dim(1), L = labels.size();
  if (blank < 0 || static_cast<std::size_t>(blank) >= K) {
    throw std::invalid_argument("ctc: blank index out of range");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= K || l == blank) {
      throw std::invalid_argument("ctc: label index " + std::to_string(l) + " invalid");
    }
  }
  if (ctc_required_frames(labels) > T) {
    throw std::invalid_argument("ctc: label sequence of length " + std::to_string(L) + " needs " +
                                std::to_string(ctc_required_frames(labels)) + " frames, only " +
                                std::to_string(T) + " available");
  }
  const std::size_t S = 2 * L + 1;
  auto ext = [&](std::size_t s) { return s % 2 == 0 ? blank : labels[s / 2]; };
  auto skip_allowed = [&](std::size_t s) { return s >= 2 && s % 2 == 1 && ext(s) != ext(s - 2); };

  std::vector<double> alpha(T * S, kNegInf), beta(T * S, kNegInf);
  alpha[0] = log_probs(0, static_cast<std::size_t>(blank));
  if (S > 1) alpha[1] = log_probs(0, static_cast<std::size_t>(ext(1)));
  for (std::size_t t = 1; t < T; ++t) {
    for (std::size_t s = 0; s < S; ++s) {
      double a = alpha[(t - 1) * S + s];
      if (s >= 1) a = log_add(a, alpha[(t - 1) * S + s - 1]);
      if (skip_allowed(s)) a = log_add(a, alpha[(t - 1) * S + s - 2]);
      alpha[t * S + s] = a == kNegInf ? kNegInf : a + log_probs(t, static_cast<std::size_t>(ext(s)));
    }
  }
  double log_p = alpha[(T - 1) * S + S - 1];
  if (S > 1) log_p = log_add(log_p, alpha[(T - 1) * S + S - 2]);
  if (std::isnan(log_p)) {
    // Non-finite network output: report it as a NaN loss so callers can
    // detect divergence instead of failing inside the loss.
    if (grad) *grad = Tensor(log_probs.shape(), std::nan(""));
    return log_p;
  }
  if (!std::isfinite(log_p)) {
    throw std::invalid_argument("ctc: no alignment has non-zero probability");
  }
  if (grad) {
    beta[(T - 1) * S + S - 1] = log_probs(T - 1, static_cast<std::size_t>(blank));
    if (S > 1) beta[(T - 1) * S + S - 2] = log_probs(T - 1, static_cast<std::size_t>(ext(S - 2)));
    for (std::size_t t = T - 1; t-- > 0;) {
      for (std::size_t s = 0; s < S; ++s) {
        double b = beta[(t + 1) * S + s];
        if (s + 1 < S) b = log_add(b, beta[(t + 1) * S + s + 1]);
        if (s + 2 < S && skip_allowed(s + 2)) b = log_add(b, beta[(t + 1) * S + s + 2]);
        beta[t * S + s] = b == kNegInf ? kNegInf : b + log_probs(t, static_cast<std::size_t>(ext(s)));
      }
    }
    *grad = Tensor({T, K});
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t s = 0; s < S; ++s) {
        const double ab = alpha[t * S + s] + beta[t * S + s];
        if (ab == kNegInf) continue;
        const auto k = static_cast<std::size_t>(ext(s));
        (*grad)(t, k) -= std::exp(ab - log_probs(t, k) - log_p);
      }
    }
  }
  return -log_p;
}

CtcResult ctc_loss(const ModelOutput& output, const FeatureBatch& batch, int blank, bool want_grad) {
  const std::size_t B = output.batch_size();
  if (B != batch.batch_size()) throw std::invalid_argument("ctc_loss: batch size mismatch");
  for (std::size_t i = 0; i < B; ++i) {
    const auto need = ctc_required_frames(batch.labels_of(i));
    if (need > output.out_lengths[i]) {
      throw std::invalid_argument("ctc_loss: example '" + batch.ids[i] + "' is infeasible: label needs " +
                                  std::to_string(need) + " frames, model emits " +
                                  std::to_string(output.out_lengths[i]));
    }
  }
  CtcResult r;
  r.per_example.assign(B, 0.0);
  if (want_grad) r.grad = Tensor(output.log_probs.shape());
  const std::size_t Tmax = output.log_probs.dim(1), K = output.n_classes();
  parallel_for(B, [&](std::size_t i) {
    const Tensor lp = output.example(i);
    Tensor g;
    r.per_example[i] = ctc_nll(lp, batch.labels_of(i), blank, want_grad ? &g : nullptr);
    if (want_grad) {
      double* dst = r.grad.data() + i * Tmax * K;
      for (std::size_t j = 0; j < g.size(); ++j) dst[j] = g[j] / static_cast<double>(B);
    }
  });
  double sum = 0.0;
  for (double v : r.per_example) sum += v;
  r.loss = sum / static_cast<double>(B);
  return r;
}

// ---------------------------------------------------------------------------
// Optimal transport

Tensor cosine_cost(const Tensor& pred_clean, const Tensor& pred_adv) {
  if (pred_clean.rank() != 2 || pred_adv.rank() != 2 || pred_clean.dim(1) != pred_adv.dim(1)) {
    throw std::invalid_argument("cosine_cost: prediction matrices must be [frames, K] with equal K, got " +
                                pred_clean.shape_string() + " and " + pred_adv.shape_string());
  }
  const std::size_t A = pred_clean.dim(0), B = pred_adv.dim(0), K = pred_clean.dim(1);
  std::vector<double> na(A), nb(B);
  for (std::size_t i = 0; i < A; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += pred_clean(i, k) * pred_clean(i, k);
    na[i] = std::sqrt(s);
  }
  for (std::size_t j = 0; j < B; ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += pred_adv(j, k) * pred_adv(j, k);
    nb[j] = std::sqrt(s);
  }
  Tensor c({A, B});
  for (std::size_t i = 0; i < A; ++i) {
    for (std::size_t j = 0; j < B; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < K; ++k) dot += pred_clean(i, k) * pred_adv(j, k);
      c(i, j) = std::clamp(1.0 - dot / (na[i] * nb[j] + 1e-12), 0.0, 2.0);
    }
  }
  return c;
}

namespace {

void validate_problem(const TransportProblem& p) {
  const std::size_t A = p.cost.dim(0), B = p.cost.dim(1);
  if (p.row_marginal.size() != A || p.col_marginal.size() != B) {
    throw std::invalid_argument("sinkhorn: marginal sizes do not match cost matrix " + p.cost.shape_string());
  }
  if (!(p.entropic_reg > 0.0)) throw std::invalid_argument("sinkhorn: entropic_reg must be > 0");
  if (p.max_iters < 1) throw std::invalid_argument("sinkhorn: max_iters must be >= 1");
  for (double v : p.cost.values()) {
    if (!std::isfinite(v)) throw std::invalid_argument("sinkhorn: non-finite cost entry");
  }
  auto check = [](const std::vector<double>& m, const char* which) {
    double s = 0.0;
    for (double v : m) {
      if (!(v >= 0.0)) throw std::invalid_argument(std::string("sinkhorn: negative ") + which + " marginal entry");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-8) throw std::invalid_argument(std::string("sinkhorn: ") + which + " marginal does not sum to 1");
  };
  check(p.row_marginal, "row");
  check(p.col_marginal, "column");
}

struct SinkhornState {
  std::vector<double> f, g;
};

// One sweep: column scaling then row scaling.
void sinkhorn_sweep(const TransportProblem& p, SinkhornState& st) {
  const std::size_t A = p.cost.dim(0), B = p.cost.dim(1);
  const double eps = p.entropic_reg;
  for (std::size_t j = 0; j < B; ++j) {
    if (p.col_marginal[j] == 0.0) {
      st.g[j] = kNegInf;
      continue;
    }
    double m = kNegInf;
    for (std::size_t i = 0; i < A; ++i) {
      if (st.f[i] != kNegInf) m = std::max(m, (st.f[i] - p.cost(i, j)) / eps);
    }
    double s = 0.0;
    for (std::size_t i = 0; i < A; ++i) {
      if (st.f[i] != kNegInf) s += std::exp((st.f[i] - p.cost(i, j)) / eps - m);
    }
    st.g[j] = eps * std::log(p.col_marginal[j]) - eps * (m + std::log(s));
  }
  for (std::size_t i = 0; i < A; ++i) {
    if (p.row_marginal[i] == 0.0) {
      st.f[i] = kNegInf;
      continue;
    }
    double m = kNegInf;
    for (std::size_t j = 0; j < B; ++j) {
      if (st.g[j] != kNegInf) m = std::max(m, (st.g[j] - p.cost(i, j)) / eps);
    }
    double s = 0.0;
    for (std::size_t j = 0; j < B; ++j) {
      if (st.g[j] != kNegInf) s += std::exp((st.g[j] - p.cost(i, j)) / eps - m);
    }
    st.f[i] = eps * std::log(p.row_marginal[i]) - eps * (m + std::log(s));
  }
}

Tensor plan_of(const TransportProblem& p, const SinkhornState& st) {
  const std::size_t A = p.cost.dim(0), B = p.cost.dim(1);
  Tensor t({A, B});
  for (std::size_t i = 0; i < A; ++i) {
    for (std::size_t j = 0; j < B; ++j) {
      if (st.f[i] == kNegInf || st.g[j] == kNegInf) continue;
      t(i, j) = std::exp((st.f[i] + st.g[j] - p.cost(i, j)) / p.entropic_reg);
    }
  }
  return t;
}

double inner(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double col_violation(const Tensor& plan, const std::vector<double>& cols) {
  double err = 0.0;
  for (std::size_t j = 0; j < plan.dim(1); ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < plan.dim(0); ++i) s += plan(i, j);
    err = std::max(err, std::abs(s - cols[j]));
  }
  return err;
}

// Projects a plan with exact rows and approximate columns onto the
// transport polytope (Altschuler, Weed & Rigollet 2017): shrink
// over-full columns, then over-full rows, then return the missing mass as
// a rank-one correction. Moves the plan by at most twice the L1 residual.
void round_to_marginals(Tensor& plan, const std::vector<double>& rows, const std::vector<double>& cols) {
  const std::size_t A = plan.dim(0), B = plan.dim(1);
  for (std::size_t j = 0; j < B; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < A; ++i) s += plan(i, j);
    if (s > cols[j]) {
      for (std::size_t i = 0; i < A; ++i) plan(i, j) *= cols[j] / s;
    }
  }
  std::vector<double> row_gap(A), col_gap(B);
  for (std::size_t i = 0; i < A; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < B; ++j) s += plan(i, j);
    if (s > rows[i]) {
      for (std::size_t j = 0; j < B; ++j) plan(i, j) *= rows[i] / s;
      s = rows[i];
    }
    row_gap[i] = rows[i] - s;
  }
  double missing = 0.0;
  for (double v : row_gap) missing += v;
  if (missing <= 0.0) return;
  for (std::size_t j = 0; j < B; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < A; ++i) s += plan(i, j);
    col_gap[j] = std::max(0.0, cols[j] - s);
  }
  for (std::size_t i = 0; i < A; ++i) {
    for (std::size_t j = 0; j < B; ++j) plan(i, j) += row_gap[i] * col_gap[j] / missing;
  }
}

}  // namespace

TransportPlan sinkhorn_ot(const TransportProblem& problem) {
  validate_problem(problem);
  SinkhornState st{std::vector<double>(problem.cost.dim(0), 0.0),
                   std::vector<double>(problem.cost.dim(1), 0.0)};
  TransportPlan out;
  int it = 0;
  if (problem.eps_scaling) {
    // Warm start: solve a geometric ladder of coarser regularizations first,
    // halving down to the target. The fixed point at the target is unchanged;
    // only the starting potentials are better.
    double cmax = 0.0;
    for (double c : problem.cost.values()) cmax = std::max(cmax, c);
    std::vector<double> ladder;
    for (double r = 2.0 * problem.entropic_reg; r < cmax; r *= 2.0) ladder.push_back(r);
    const int stage_cap = std::max(1, problem.max_iters / (2 * (static_cast<int>(ladder.size()) + 1)));
    TransportProblem coarse = problem;
    for (auto r = ladder.rbegin(); r != ladder.rend(); ++r) {
      coarse.entropic_reg = *r;
      for (int k = 0; k < stage_cap && it < problem.max_iters; ++k, ++it) {
        sinkhorn_sweep(coarse, st);
        if (col_violation(plan_of(coarse, st), problem.col_marginal) < problem.tol) break;
      }
    }
  }
  while (it < problem.max_iters) {
    sinkhorn_sweep(problem, st);
    ++it;
    // Rows are exact after the sweep; columns carry the residual.
    out.plan = plan_of(problem, st);
    out.marginal_error = col_violation(out.plan, problem.col_marginal);
    if (out.marginal_error < problem.tol) {
      out.converged = true;
      break;
    }
  }
  if (out.plan.size() == 0) {
    out.plan = plan_of(problem, st);
    out.marginal_error = col_violation(out.plan, problem.col_marginal);
  }
  out.iterations_used = it;
  round_to_marginals(out.plan, problem.row_marginal, problem.col_marginal);
  out.objective = std::max(0.0, inner(out.plan, problem.cost));
  out.f = st.f;
  out.g = st.g;
  return out;
}

SinkhornTrace sinkhorn_trace(const TransportProblem& problem) {
  validate_problem(problem);
  SinkhornState st{std::vector<double>(problem.cost.dim(0), 0.0),
                   std::vector<double>(problem.cost.dim(1), 0.0)};
  SinkhornTrace trace;
  for (int it = 0; it < problem.max_iters; ++it) {
    sinkhorn_sweep(problem, st);
    const Tensor plan = plan_of(problem, st);
    trace.objective.push_back(inner(plan, problem.cost));
    double dual = problem.entropic_reg;
    for (std::size_t i = 0; i < st.f.size(); ++i) {
      if (problem.row_marginal[i] > 0.0) dual += problem.row_marginal[i] * st.f[i];
    }
    for (std::size_t j = 0; j < st.g.size(); ++j) {
      if (problem.col_marginal[j] > 0.0) dual += problem.col_marginal[j] * st.g[j];
    }
    double mass = 0.0;
    for (double v : plan.values()) mass += v;
    trace.dual.push_back(dual - problem.entropic_reg * mass);
  }
  return trace;
}

Tensor sinkhorn_cost_gradient(const TransportProblem& problem, const TransportPlan& plan) {
  const std::size_t A = plan.plan.dim(0), B = plan.plan.dim(1);
  const double eps = problem.entropic_reg;
  const Tensor& T = plan.plan;
  const Tensor& C = problem.cost;
  Eigen::VectorXd a = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(A));
  Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(B));
  Eigen::VectorXd s = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(A));
  Eigen::VectorXd w = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(B));
  Eigen::MatrixXd Tm(static_cast<Eigen::Index>(A), static_cast<Eigen::Index>(B));
  for (std::size_t i = 0; i < A; ++i) {
    for (std::size_t j = 0; j < B; ++j) {
      const auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
      Tm(ii, jj) = T(i, j);
      a(ii) += T(i, j);
      b(jj) += T(i, j);
      s(ii) += T(i, j) * C(i, j);
      w(jj) += T(i, j) * C(i, j);
    }
  }
  // Adjoint of the marginal constraints: [diag(a) T; T^T diag(b)] [l; m] = [s; w].
  // Eliminating l leaves a PSD Schur complement with the all-ones null
  // direction, removed by pinning the last column multiplier to zero.
  Eigen::VectorXd a_inv = a.unaryExpr([](double v) { return v > 0.0 ? 1.0 / v : 0.0; });
  Eigen::MatrixXd schur = Eigen::MatrixXd(b.asDiagonal()) - Tm.transpose() * a_inv.asDiagonal() * Tm;
  Eigen::VectorXd rhs = w - Tm.transpose() * a_inv.cwiseProduct(s);
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(B));
  if (B > 1) {
    const Eigen::Index n = static_cast<Eigen::Index>(B) - 1;
    mu.head(n) = schur.topLeftCorner(n, n).ldlt().solve(rhs.head(n));
  }
  Eigen::VectorXd lambda = a_inv.cwiseProduct(s - Tm * mu);
  Tensor grad({A, B});
  for (std::size_t i = 0; i < A; ++i) {
    for (std::size_t j = 0; j < B; ++j) {
      const double tij = T(i, j);
      if (tij == 0.0) continue;
      grad(i, j) = tij * (1.0 + (lambda(static_cast<Eigen::Index>(i)) +
                                 mu(static_cast<Eigen::Index>(j)) - C(i, j)) / eps);
    }
  }
  return grad;
}

LossGrad ot_loss(const Tensor& pred_clean, const Tensor& pred_adv, const SinkhornConfig& cfg) {
  const std::size_t A = pred_clean.dim(0), B = pred_adv.dim(0), K = pred_clean.dim(1);
  TransportProblem prob;
  prob.cost = cosine_cost(pred_clean, pred_adv);
  prob.row_marginal.assign(A, 1.0 / static_cast<double>(A));
  prob.col_marginal.assign(B, 1.0 / static_cast<double>(B));
  prob.entropic_reg = cfg.reg;
  prob.max_iters = cfg.max_iters;
  prob.tol = cfg.tol;
  prob.eps_scaling = cfg.eps_scaling;
  const TransportPlan plan = sinkhorn_ot(prob);

  Tensor dcost;
  if (cfg.grad == "envelope") {
    dcost = plan.plan;
  } else if (cfg.grad == "implicit") {
    dcost = sinkhorn_cost_gradient(prob, plan);
  } else {
    throw std::invalid_argument("sinkhorn.grad: unknown mode '" + cfg.grad + "'");
  }

  // Chain through C[i][j] = 1 - <p_i, q_j> / (|p_i| |q_j| + 1e-12).
  std::vector<double> np(A), nq(B);
  for (std::size_t i = 0; i < A; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += pred_clean(i, k) * pred_clean(i, k);
    np[i] = std::sqrt(s);
  }
  for (std::size_t j = 0; j < B; ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += pred_adv(j, k) * pred_adv(j, k);
    nq[j] = std::sqrt(s);
  }
  LossGrad out;
  out.value = plan.objective;
  out.converged = plan.converged;
  out.grad = Tensor({B, K});
  for (std::size_t i = 0; i < A; ++i) {
    for (std::size_t j = 0; j < B; ++j) {
      const double gij = dcost(i, j);
      if (gij == 0.0) continue;
      const double raw = 1.0 - prob.cost(i, j);
      // Entries clamped to [0, 2] carry no gradient.
      if (raw <= -1.0 || raw >= 1.0) continue;
      double dot = 0.0;
      for (std::size_t k = 0; k < K; ++k) dot += pred_clean(i, k) * pred_adv(j, k);
      const double den = np[i] * nq[j] + 1e-12;
      const double coef = nq[j] > 0.0 ? dot * np[i] / (nq[j] * den * den) : 0.0;
      for (std::size_t k = 0; k < K; ++k) {
        out.grad(j, k) += gij * -(pred_clean(i, k) / den - coef * pred_adv(j, k));
      }
    }
  }
  return out;
}

LossGrad kl_loss(const Tensor& pred_clean, const Tensor& pred_adv) {
  if (!pred_clean.same_shape(pred_adv) || pred_clean.rank() != 2) {
    throw std::invalid_argument("kl_loss: shape mismatch " + pred_clean.shape_string() + " vs " +
                                pred_adv.shape_string());
  }
  const std::size_t T = pred_clean.dim(0), K = pred_clean.dim(1);
  LossGrad out;
  out.grad = Tensor({T, K});
  if (T == 0) return out;
  std::vector<double> lp(K), lq(K);
  auto log_softmax = [K](const double* z, std::vector<double>& dst) {
    double m = z[0];
    for (std::size_t k = 1; k < K; ++k) m = std::max(m, z[k]);
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += std::exp(z[k] - m);
    const double lse = m + std::log(s);
    for (std::size_t k = 0; k < K; ++k) dst[k] = z[k] - lse;
  };
  double total = 0.0;
  for (std::size_t t = 0; t < T; ++t) {
    log_softmax(pred_clean.data() + t * K, lp);
    log_softmax(pred_adv.data() + t * K, lq);
    double kl = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      const double p = std::exp(lp[k]);
      if (p > 0.0) kl += p * (lp[k] - lq[k]);
      out.grad(t, k) = (std::exp(lq[k]) - p) / static_cast<double>(T);
    }
    total += kl;
  }
  out.value = std::max(0.0, total / static_cast<double>(T));
  return out;
}

// ---------------------------------------------------------------------------
// Combined

UnsupKind parse_unsup_kind(const std::string& s) {
  if (s == "ot") return UnsupKind::ot;
  if (s == "kl") return UnsupKind::kl;
  throw std::invalid_argument("unsup_kind: expected 'ot' or 'kl', got '" + s + "'");
}

std::string to_string(UnsupKind k) { return k == UnsupKind::ot ? "ot" : "kl"; }

LossGrad unsup_loss(const ModelOutput& clean, const ModelOutput& adv, UnsupKind kind,
                    const SinkhornConfig& cfg, int* unconverged) {
  const std::size_t B = adv.batch_size();
  if (clean.batch_size() != B || clean.out_lengths != adv.out_lengths ||
      clean.n_classes() != adv.n_classes()) {
    throw std::invalid_argument("unsup_loss: clean and adversarial outputs differ in shape");
  }
  const std::size_t Tmax = adv.log_probs.dim(1), K = adv.n_classes();
  LossGrad out;
  out.grad = Tensor(adv.log_probs.shape());
  std::vector<double> values(B, 0.0);
  std::vector<char> conv(B, 1);
  parallel_for(B, [&](std::size_t i) {
    Tensor pc = clean.example(i), pa = adv.example(i);
    LossGrad lg;
    if (kind == UnsupKind::ot) {
      for (auto& v : pc.values()) v = std::exp(v);
      for (auto& v : pa.values()) v = std::exp(v);
      lg = ot_loss(pc, pa, cfg);
      // d/d log q = d/dq * q
      for (std::size_t j = 0; j < lg.grad.size(); ++j) lg.grad[j] *= pa[j];
    } else {
      lg = kl_loss(pc, pa);
    }
    values[i] = lg.value;
    conv[i] = lg.converged ? 1 : 0;
    double* dst = out.grad.data() + i * Tmax * K;
    for (std::size_t j = 0; j < lg.grad.size(); ++j) dst[j] = lg.grad[j] / static_cast<double>(B);
  });
  double sum = 0.0;
  int bad = 0;
  for (std::size_t i = 0; i < B; ++i) {
    sum += values[i];
    bad += conv[i] ? 0 : 1;
  }
  out.value = sum / static_cast<double>(B);
  out.converged = bad == 0;
  if (unconverged) *unconverged = bad;
  return out;
}

LossValue mixed_loss(const FeatureBatch& batch, const ModelOutput& adv, const ModelOutput& clean,
                     int blank, double beta, UnsupKind kind, const SinkhornConfig& cfg) {
  if (!(beta >= 0.0)) throw std::invalid_argument("mixed_loss: beta must be >= 0");
  LossValue lv;
  lv.beta = beta;
  CtcResult ctc = ctc_loss(adv, batch, blank, true);
  LossGrad un = unsup_loss(clean, adv, kind, cfg, &lv.sinkhorn_unconverged);
  lv.components["ctc"] = ctc.loss;
  lv.components["ot_or_kl"] = un.value;
  lv.value = ctc.loss + beta * un.value;
  lv.grad = std::move(ctc.grad);
  if (beta != 0.0) {
    for (std::size_t i = 0; i < lv.grad.size(); ++i) lv.grad[i] += beta * un.grad[i];
  }
  return lv;
}

}  // namespace mixpgd
