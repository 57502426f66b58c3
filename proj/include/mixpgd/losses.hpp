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

#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "mixpgd/data.hpp"
#include "mixpgd/model.hpp"
#include "mixpgd/tensor.hpp"

namespace mixpgd {

// ---------------------------------------------------------------------------
// CTC

struct CtcResult {
  double loss = 0.0;                // mean over the batch
  std::vector<double> per_example;  // negative log-likelihoods
  Tensor grad;                      // d loss / d log_probs, shaped like log_probs
};

/// Negative log-likelihood of `labels` under per-frame log-probabilities
/// `log_probs` ([frames, classes]) summed over all CTC alignments. When
/// `grad` is non-null it receives d nll / d log_probs ([frames, classes]).
/// Throws std::invalid_argument if the labels need more frames than given.
double ctc_nll(const Tensor& log_probs, std::span<const int> labels, int blank, Tensor* grad);

/// Batch CTC with mean reduction. Infeasible examples raise an error naming
/// the example id.
CtcResult ctc_loss(const ModelOutput& output, const FeatureBatch& batch, int blank,
                   bool want_grad = true);

// ---------------------------------------------------------------------------
// Optimal transport

struct SinkhornConfig {
  double reg = 0.05;
  int max_iters = 100;
  double tol = 1e-6;
  /// "implicit" differentiates <T, C> exactly through the converged plan;
  /// "envelope" holds the plan fixed and returns T as dL/dC.
  std::string grad = "implicit";
  /// Warm-start each solve from a ladder of coarser regularizations.
  bool eps_scaling = true;
};

struct TransportProblem {
  Tensor cost;                      // [rows, cols], entries in [0, 2]
  std::vector<double> row_marginal;
  std::vector<double> col_marginal;
  double entropic_reg = 0.1;
  int max_iters = 100;
  double tol = 1e-6;
  /// Warm-start from a halving ladder of larger regularizations; the
  /// sweeps spent there count against max_iters.
  bool eps_scaling = false;
};

struct TransportPlan {
  Tensor plan;  // rounded onto the exact marginals before return
  double objective = 0.0;  // <T, C> without the entropy term
  int iterations_used = 0;
  bool converged = false;
  double marginal_error = 0.0;  // max abs column-sum violation of the last sweep, before rounding
  std::vector<double> f, g;     // dual potentials
};

/// C[i][j] = 1 - <p_i, q_j> / (|p_i| |q_j| + 1e-12).
Tensor cosine_cost(const Tensor& pred_clean, const Tensor& pred_adv);

/// Log-domain Sinkhorn. Throws on non-finite costs or invalid marginals.
TransportPlan sinkhorn_ot(const TransportProblem& problem);

/// Per-sweep history of a Sinkhorn run: the transport objective <T, C> and
/// the entropic dual objective
///   sum_i a_i f_i + sum_j b_j g_j - reg * sum_ij exp((f_i + g_j - C_ij) / reg) + reg.
/// Each sweep is an exact block-coordinate ascent step, so the dual is
/// non-decreasing; the transport objective carries no such guarantee.
struct SinkhornTrace {
  std::vector<double> objective;
  std::vector<double> dual;
};
SinkhornTrace sinkhorn_trace(const TransportProblem& problem);

/// d <T*, C> / d C for a converged plan, by implicit differentiation of the
/// Sinkhorn fixed point.
Tensor sinkhorn_cost_gradient(const TransportProblem& problem, const TransportPlan& plan);

struct LossGrad {
  double value = 0.0;
  Tensor grad;  // w.r.t. the adversarial-side input
  bool converged = true;
};

/// Frame-level OT between two prediction matrices ([frames, classes]) under
/// cosine cost and uniform marginals.
LossGrad ot_loss(const Tensor& pred_clean, const Tensor& pred_adv, const SinkhornConfig& cfg);

/// Mean over frames of KL(softmax(clean) || softmax(adv)). Inputs are logits
/// or log-probabilities of equal shape.
LossGrad kl_loss(const Tensor& pred_clean, const Tensor& pred_adv);

// ---------------------------------------------------------------------------
// Combined loss

enum class UnsupKind { ot, kl };
UnsupKind parse_unsup_kind(const std::string& s);
std::string to_string(UnsupKind k);

struct LossValue {
  double value = 0.0;
  std::map<std::string, double> components;  // "ctc", "ot_or_kl"
  double beta = 0.0;
  Tensor grad;  // d value / d adversarial log_probs
  int sinkhorn_unconverged = 0;
};

/// Batch mean of the unsupervised term. OT compares per-frame probability
/// vectors exp(log_probs); KL compares the log-probabilities directly.
LossGrad unsup_loss(const ModelOutput& clean, const ModelOutput& adv, UnsupKind kind,
                    const SinkhornConfig& cfg, int* unconverged = nullptr);

/// ctc(adv, labels) + beta * unsup(clean, adv).
LossValue mixed_loss(const FeatureBatch& batch, const ModelOutput& adv, const ModelOutput& clean,
                     int blank, double beta, UnsupKind kind, const SinkhornConfig& cfg);

}  // namespace mixpgd
