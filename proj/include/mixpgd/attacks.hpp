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

#include <cstdint>
#include <optional>
#include <string>

#include "mixpgd/data.hpp"
#include "mixpgd/losses.hpp"
#include "mixpgd/model.hpp"

namespace mixpgd {

enum class AttackFamily { fgsm, mifgsm, pgd, feature_scattering, mixpgd };

AttackFamily parse_attack_family(const std::string& s);
std::string to_string(AttackFamily f);

/// L-infinity attack on the model-input features. Epsilon and step size are
/// in normalized log-mel units.
struct AttackConfig {
  std::string name;  // report label, e.g. "PGD20"; defaults to the family name
  AttackFamily family = AttackFamily::pgd;
  double epsilon = 0.00004;
  double step_size = 0.00001;
  int n_steps = 20;
  double beta = 1.0;
  UnsupKind unsup_kind = UnsupKind::ot;
  double momentum_decay = 1.0;
  bool random_init = true;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  std::string label() const { return name.empty() ? to_string(family) : name; }
  /// Canonical JSON text of the `attack` block.
  std::string canonical_json() const;
  std::string hash() const;
};

struct Perturbation {
  Tensor delta;  // shaped like batch.features
  double epsilon_used = 0.0;
  int gradient_queries = 0;
  int sinkhorn_warnings = 0;  // unconverged OT plans seen during the attack
};

Perturbation fgsm(const Model& model, const FeatureBatch& batch, const AttackConfig& cfg);
Perturbation mifgsm(const Model& model, const FeatureBatch& batch, const AttackConfig& cfg);
Perturbation pgd(const Model& model, const FeatureBatch& batch, const AttackConfig& cfg);
/// PGD steps starting from an explicit perturbation (projected first).
Perturbation pgd_from(const Model& model, const FeatureBatch& batch, const AttackConfig& cfg,
                      const Tensor& initial_delta);
Perturbation feature_scattering(const Model& model, const FeatureBatch& batch,
                                const AttackConfig& cfg, const SinkhornConfig& sinkhorn);
Perturbation mixpgd(const Model& model, const FeatureBatch& batch, const AttackConfig& cfg,
                    const SinkhornConfig& sinkhorn);

/// Dispatches on cfg.family.
Perturbation generate(const Model& model, const FeatureBatch& batch, const AttackConfig& cfg,
                      const SinkhornConfig& sinkhorn);

/// The two random starting points used by the iterative attacks. Both are
/// zero on padding frames and projected into the epsilon ball.
Tensor uniform_init(const FeatureBatch& batch, double epsilon, std::uint64_t seed);
Tensor gaussian_init(const FeatureBatch& batch, double epsilon, std::uint64_t seed,
                     double scale = 1e-4);

/// features + delta
FeatureBatch apply_perturbation(const FeatureBatch& batch, const Perturbation& p);

/// Max-abs of delta and whether it is zero on every padding frame.
struct BudgetCheck {
  double linf = 0.0;
  bool padding_clean = true;
  bool within(double epsilon) const { return padding_clean && linf <= epsilon + 1e-9; }
};
BudgetCheck check_budget(const FeatureBatch& batch, const Tensor& delta);

}  // namespace mixpgd
