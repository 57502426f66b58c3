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

#include "mixpgd/attacks.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "mixpgd/util.hpp"

namespace mixpgd {

AttackFamily parse_attack_family(const std::string& s) {
  if (s == "fgsm") return AttackFamily::fgsm;
  if (s == "mifgsm") return AttackFamily::mifgsm;
  if (s == "pgd") return AttackFamily::pgd;
  if (s == "feature_scattering") return AttackFamily::feature_scattering;
  if (s == "mixpgd") return AttackFamily::mixpgd;
  throw std::invalid_argument("attack.family: unknown family '" + s + "'");
}

std::string to_string(AttackFamily f) {
  switch (f) {
    case AttackFamily::fgsm: return "fgsm";
    case AttackFamily::mifgsm: return "mifgsm";
    case AttackFamily::pgd: return "pgd";
    case AttackFamily::feature_scattering: return "feature_scattering";
    case AttackFamily::mixpgd: return "mixpgd";
  }
  return "?";
}

void AttackConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& what) {
    throw std::invalid_argument("attack." + field + ": " + what);
  };
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) fail("epsilon", "must be finite and >= 0");
  // A zero budget admits a zero step (the epsilon/4 default at epsilon 0).
  const bool step_ok = step_size > 0.0 || (step_size == 0.0 && epsilon == 0.0);
  if (!step_ok || !std::isfinite(step_size)) fail("step_size", "must be finite and > 0");
  if (n_steps < 0) fail("n_steps", "must be >= 0");
  if (family == AttackFamily::fgsm && n_steps != 1) fail("n_steps", "fgsm requires n_steps == 1");
  const bool iterative = family != AttackFamily::fgsm;
  if (iterative && epsilon > 0.0 && step_size > epsilon * (1.0 + 1e-12)) {
    fail("step_size", "must not exceed epsilon for iterative attacks");
  }
  if (!(beta >= 0.0)) fail("beta", "must be >= 0");
  if (!(momentum_decay >= 0.0)) fail("momentum_decay", "must be >= 0");
}

std::string AttackConfig::canonical_json() const {
  nlohmann::json j = {
      {"family", to_string(family)},       {"epsilon", epsilon},
      {"step_size", step_size},            {"n_steps", n_steps},
      {"beta", beta},                      {"unsup_kind", to_string(unsup_kind)},
      {"momentum_decay", momentum_decay},  {"random_init", random_init},
      {"seed", seed}};
  return j.dump();
}

std::string AttackConfig::hash() const { return content_hash(canonical_json()); }

// ---------------------------------------------------------------------------

namespace {

void project(const FeatureBatch& batch, double epsilon, Tensor& delta) {
  const std::size_t B = batch.batch_size(), F = batch.mel_bins(), T = batch.max_frames();
  for (std::size_t i = 0; i < B; ++i) {
    const std::size_t len = batch.feature_lengths[i];
    for (std::size_t m = 0; m < F; ++m) {
      double* row = delta.data() + (i * F + m) * T;
      for (std::size_t t = 0; t < len; ++t) row[t] = std::clamp(row[t], -epsilon, epsilon);
      std::fill(row + len, row + T, 0.0);
    }
  }
}

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Objective ctc_objective(const FeatureBatch& batch, int blank) {
  return [&batch, blank](const ModelOutput& out) {
    CtcResult r = ctc_loss(out, batch, blank, true);
    return ObjectiveResult{r.loss, std::move(r.grad)};
  };
}

Tensor input_gradient(const Model& model, const FeatureBatch& batch, const Tensor& delta,
                      const Objective& objective, Perturbation& p) {
  GradientResult g = model.gradients(add(batch.features, delta), batch.feature_lengths, Mode::eval,
                                     objective, {.input = true, .params = false});
  ++p.gradient_queries;
  return std::move(g.input_grad);
}

// x <- proj(x + step * sign(grad)) for n steps.
void sign_ascent(const Model& model, const FeatureBatch& batch, const AttackConfig& cfg,
                 const Objective& objective, Perturbation& p) {
  for (int s = 0; s < cfg.n_steps; ++s) {
    const Tensor g = input_gradient(model, batch, p.delta, objective, p);
    for (std::size_t i = 0; i < p.delta.size(); ++i) p.delta[i] += cfg.step_size * sign(g[i]);
    project(batch, cfg.epsilon, p.delta);
  }
}

Perturbation start(const FeatureBatch& batch, const AttackConfig& cfg) {
  cfg.validate();
  Perturbation p;
  p.delta = Tensor(batch.features.shape());
  p.epsilon_used = cfg.epsilon;
  return p;
}

void require_family(const AttackConfig& cfg, AttackFamily f) {
  if (cfg.family != f) {
    throw std::invalid_argument("attack: config family '" + to_string(cfg.family) + "' passed to " +
                                to_string(f));
  }
}

}  // namespace

Tensor uniform_init(const FeatureBatch& batch, double epsilon, std::uint64_t seed) {
  Tensor delta(batch.features.shape());
  const std::size_t F = batch.mel_bins(), T = batch.max_frames();
  for (std::size_t i = 0; i < batch.batch_size(); ++i) {
    Rng rng(mix_seed(seed, 0xa11, i));
    std::uniform_real_distribution<double> u(-epsilon, epsilon);
    for (std::size_t m = 0; m < F; ++m) {
      for (std::size_t t = 0; t < batch.feature_lengths[i]; ++t) delta(i, m, t) = epsilon > 0 ? u(rng) : 0.0;
    }
    (void)T;
  }
  project(batch, epsilon, delta);
  return delta;
}

Tensor gaussian_init(const FeatureBatch& batch, double epsilon, std::uint64_t seed, double scale) {
  Tensor delta(batch.features.shape());
  const std::size_t F = batch.mel_bins();
  for (std::size_t i = 0; i < batch.batch_size(); ++i) {
    Rng rng(mix_seed(seed, 0x9a5, i));
    std::normal_distribution<double> n(0.0, 1.0);
    for (std::size_t m = 0; m < F; ++m) {
      for (std::size_t t = 0; t < batch.feature_lengths[i]; ++t) delta(i, m, t) = scale * n(rng);
    }
  }
  project(batch, epsilon, delta);
  return delta;
}

Perturbation fgsm(const Model& model, const FeatureBatch& batch, const AttackConfig& cfg) {
  require_family(cfg, AttackFamily::fgsm);
  Perturbation p = start(batch, cfg);
  const Tensor g = input_gradient(model, batch, p.delta, ctc_objective(batch, static_cast<int>(model.config().n_classes) - 1), p);
  for (std::size_t i = 0; i < p.delta.size(); ++i) p.delta[i] = cfg.epsilon * sign(g[i]);
  project(batch, cfg.epsilon, p.delta);
  return p;
}

Perturbation mifgsm(const Model& model, const FeatureBatch& batch, const AttackConfig& cfg) {
  require_family(cfg, AttackFamily::mifgsm);
  Perturbation p = start(batch, cfg);
  const auto objective = ctc_objective(batch, static_cast<int>(model.config().n_classes) - 1);
  const std::size_t F = batch.mel_bins(), T = batch.max_frames();
  Tensor momentum(batch.features.shape());
  for (int s = 0; s < cfg.n_steps; ++s) {
    const Tensor g = input_gradient(model, batch, p.delta, objective, p);
    for (std::size_t i = 0; i < batch.batch_size(); ++i) {
      double l1 = 0.0;
      for (std::size_t j = i * F * T; j < (i + 1) * F * T; ++j) l1 += std::abs(g[j]);
      const double inv = l1 > 0.0 ? 1.0 / l1 : 0.0;
      for (std::size_t j = i * F * T; j < (i + 1) * F * T; ++j) {
        momentum[j] = cfg.momentum_decay * momentum[j] + g[j] * inv;
        p.delta[j] += cfg.step_size * sign(momentum[j]);
      }
    }
    project(batch, cfg.epsilon, p.delta);
  }
  return p;
}

Perturbation pgd_from(const Model& model, const FeatureBatch& batch, const AttackConfig& cfg,
                      const Tensor& initial_delta) {
  require_same_shape(batch.features, initial_delta, "pgd initial delta");
  Perturbation p = start(batch, cfg);
  p.delta = initial_delta;
  project(batch, cfg.epsilon, p.delta);
  sign_ascent(model, batch, cfg, ctc_objective(batch, static_cast<int>(model.config().n_classes) - 1), p);
  return p;
}

Perturbation pgd(const Model& model, const FeatureBatch& batch, const AttackConfig& cfg) {
  require_family(cfg, AttackFamily::pgd);
  const Tensor init = cfg.random_init ? uniform_init(batch, cfg.epsilon, cfg.seed)
                                      : Tensor(batch.features.shape());
  return pgd_from(model, batch, cfg, init);
}

Perturbation feature_scattering(const Model& model, const FeatureBatch& batch,
                                const AttackConfig& cfg, const SinkhornConfig& sinkhorn) {
  require_family(cfg, AttackFamily::feature_scattering);
  Perturbation p = start(batch, cfg);
  if (cfg.random_init) p.delta = uniform_init(batch, cfg.epsilon, cfg.seed);
  const ModelOutput clean = model.forward(batch, Mode::eval);
  const Objective objective = [&](const ModelOutput& adv) {
    int bad = 0;
    LossGrad lg = unsup_loss(clean, adv, cfg.unsup_kind, sinkhorn, &bad);
    p.sinkhorn_warnings += bad;
    return ObjectiveResult{lg.value, std::move(lg.grad)};
  };
  sign_ascent(model, batch, cfg, objective, p);
  return p;
}

Perturbation mixpgd(const Model& model, const FeatureBatch& batch, const AttackConfig& cfg,
                    const SinkhornConfig& sinkhorn) {
  require_family(cfg, AttackFamily::mixpgd);
  Perturbation p = start(batch, cfg);
  p.delta = gaussian_init(batch, cfg.epsilon, cfg.seed);
  const ModelOutput clean = model.forward(batch, Mode::eval);
  const int blank = static_cast<int>(model.config().n_classes) - 1;
  const Objective objective = [&](const ModelOutput& adv) {
    LossValue lv = mixed_loss(batch, adv, clean, blank, cfg.beta, cfg.unsup_kind, sinkhorn);
    p.sinkhorn_warnings += lv.sinkhorn_unconverged;
    return ObjectiveResult{lv.value, std::move(lv.grad)};
  };
  sign_ascent(model, batch, cfg, objective, p);
  return p;
}

Perturbation generate(const Model& model, const FeatureBatch& batch, const AttackConfig& cfg,
                      const SinkhornConfig& sinkhorn) {
  switch (cfg.family) {
    case AttackFamily::fgsm: return fgsm(model, batch, cfg);
    case AttackFamily::mifgsm: return mifgsm(model, batch, cfg);
    case AttackFamily::pgd: return pgd(model, batch, cfg);
    case AttackFamily::feature_scattering: return feature_scattering(model, batch, cfg, sinkhorn);
    case AttackFamily::mixpgd: return mixpgd(model, batch, cfg, sinkhorn);
  }
  throw std::invalid_argument("attack: unknown family");
}

FeatureBatch apply_perturbation(const FeatureBatch& batch, const Perturbation& p) {
  return with_features(batch, add(batch.features, p.delta));
}

BudgetCheck check_budget(const FeatureBatch& batch, const Tensor& delta) {
  require_same_shape(batch.features, delta, "check_budget");
  BudgetCheck c;
  const std::size_t F = batch.mel_bins(), T = batch.max_frames();
  for (std::size_t i = 0; i < batch.batch_size(); ++i) {
    for (std::size_t m = 0; m < F; ++m) {
      for (std::size_t t = 0; t < T; ++t) {
        const double v = delta(i, m, t);
        if (t >= batch.feature_lengths[i]) {
          if (v != 0.0) c.padding_clean = false;
        } else {
          c.linf = std::max(c.linf, std::abs(v));
        }
      }
    }
  }
  return c;
}

}  // namespace mixpgd
