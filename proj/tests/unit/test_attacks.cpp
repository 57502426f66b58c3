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

#include "doctest.h"

#include <cmath>

#include "mixpgd/attacks.hpp"
#include "mixpgd/kernels.hpp"
#include "mixpgd/losses.hpp"
#include "support.hpp"

using namespace mixpgd;
using namespace mixpgd::testing;

namespace {

constexpr double kEps = 0.1;

AttackConfig config(AttackFamily family, int steps, std::uint64_t seed = 3) {
  AttackConfig c;
  c.family = family;
  c.epsilon = kEps;
  c.step_size = kEps / 4.0;
  c.n_steps = family == AttackFamily::fgsm ? 1 : steps;
  c.seed = seed;
  if (family == AttackFamily::fgsm) c.step_size = kEps;
  if (family == AttackFamily::mifgsm) c.random_init = false;
  return c;
}

double ctc_at(const Model& m, const FeatureBatch& b, const Tensor& delta) {
  const FeatureBatch adv = with_features(b, [&] {
    Tensor x = b.features;
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += delta[i];
    return x;
  }());
  return ctc_loss(m.forward(adv, Mode::eval), adv, 28, false).loss;
}

double unsup_at(const Model& m, const FeatureBatch& b, const Tensor& delta, const SinkhornConfig& sk) {
  Tensor x = b.features;
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += delta[i];
  return unsup_loss(m.forward(b, Mode::eval), m.forward(x, b.feature_lengths, Mode::eval), UnsupKind::ot, sk).value;
}

double mixed_at(const Model& m, const FeatureBatch& b, const Tensor& delta, const SinkhornConfig& sk) {
  Tensor x = b.features;
  for (std::size_t i = 0; i < x.size(); ++i) x[i] += delta[i];
  const FeatureBatch adv = with_features(b, x);
  return mixed_loss(adv, m.forward(adv, Mode::eval), m.forward(b, Mode::eval), 28, 1.0, UnsupKind::ot, sk).value;
}

const AttackFamily kFamilies[] = {AttackFamily::fgsm, AttackFamily::mifgsm, AttackFamily::pgd,
                                  AttackFamily::feature_scattering, AttackFamily::mixpgd};

}  // namespace

TEST_CASE("attack config: validation and names") {
  AttackConfig c = config(AttackFamily::pgd, 20);
  CHECK_NOTHROW(c.validate());
  c.step_size = 2.0 * kEps;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("step_size"), std::invalid_argument);
  c = config(AttackFamily::fgsm, 1);
  c.n_steps = 3;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("n_steps"), std::invalid_argument);
  c = config(AttackFamily::pgd, 20);
  c.epsilon = -1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  for (AttackFamily f : kFamilies) CHECK(parse_attack_family(to_string(f)) == f);
  CHECK_THROWS_AS(parse_attack_family("cw"), std::invalid_argument);
  AttackConfig a = config(AttackFamily::pgd, 20), b = a;
  CHECK(a.hash() == b.hash());
  b.n_steps = 100;
  CHECK(a.hash() != b.hash());
}

TEST_CASE("attacks: every output respects the budget and leaves padding untouched") {
  const Model& model = trained_toy_model();
  SinkhornConfig sk;
  for (const auto& batch : toy_batches(50, 3, 4)) {
    for (AttackFamily f : kFamilies) {
      for (std::uint64_t seed : {1u, 2u}) {
        const Perturbation p = generate(model, batch, config(f, 5, seed), sk);
        const BudgetCheck c = check_budget(batch, p.delta);
        CHECK(c.padding_clean);
        CHECK(c.linf <= kEps);
        CHECK(p.epsilon_used == kEps);
      }
    }
  }
}

TEST_CASE("attacks: zero budget yields a zero perturbation") {
  const Model& model = trained_toy_model();
  const FeatureBatch batch = toy_batches(51, 1, 3)[0];
  for (AttackFamily f : kFamilies) {
    AttackConfig c = config(f, 7);
    c.epsilon = 0.0;
    c.step_size = 0.0;
    const Perturbation p = generate(model, batch, c, {});
    for (double v : p.delta.values()) CHECK(v == 0.0);
  }
  AttackConfig fs = config(AttackFamily::feature_scattering, 3);
  fs.epsilon = 0.0;
  fs.step_size = 0.0;
  const Perturbation p = feature_scattering(model, batch, fs, {});
  for (double v : p.delta.values()) CHECK(v == 0.0);
  // Adversarial predictions equal the clean ones; the entropic OT distance
  // between them vanishes as the regularization drops below the cosine
  // distances between near-duplicate frames.
  double previous = 1e300;
  for (double reg : {0.05, 1e-3, 1e-4}) {
    SinkhornConfig sk;
    sk.reg = reg;
    sk.max_iters = 2000;
    const double v = unsup_at(model, batch, p.delta, sk);
    CHECK(v < previous);
    previous = v;
  }
  CHECK(previous < 1e-4);
}

TEST_CASE("fgsm: sign-step structure") {
  const Model& model = trained_toy_model();
  const FeatureBatch batch = toy_batches(52, 1, 4)[0];
  const Perturbation p = fgsm(model, batch, config(AttackFamily::fgsm, 1));
  std::size_t nonzero = 0;
  for (double v : p.delta.values()) {
    CHECK((v == 0.0 || v == kEps || v == -kEps));
    nonzero += v != 0.0;
  }
  CHECK(nonzero > 0);
  CHECK(p.gradient_queries == 1);
}

TEST_CASE("attacks: the reduction lattice holds exactly") {
  const Model& model = trained_toy_model();
  const FeatureBatch batch = toy_batches(53, 1, 4)[0];
  // One momentum step with no decay is FGSM at the same step size.
  AttackConfig mi = config(AttackFamily::mifgsm, 1);
  mi.momentum_decay = 0.0;
  mi.step_size = kEps;
  CHECK(mifgsm(model, batch, mi).delta.values() == fgsm(model, batch, config(AttackFamily::fgsm, 1)).delta.values());
  // mixPGD without the unsupervised term is PGD from the Gaussian start.
  AttackConfig mx = config(AttackFamily::mixpgd, 6, 9);
  mx.beta = 0.0;
  const Perturbation a = mixpgd::mixpgd(model, batch, mx, {});
  AttackConfig pg = config(AttackFamily::pgd, 6, 9);
  const Perturbation b = pgd_from(model, batch, pg, gaussian_init(batch, kEps, 9));
  CHECK(a.delta.values() == b.delta.values());
  // Feature scattering with no steps returns its clamped random start.
  AttackConfig fs = config(AttackFamily::feature_scattering, 0, 4);
  CHECK(feature_scattering(model, batch, fs, {}).delta.values() == uniform_init(batch, kEps, 4).values());
}

TEST_CASE("attacks: deterministic, pure, and query-counted") {
  const Model& model = trained_toy_model();
  const FeatureBatch batch = toy_batches(54, 1, 3)[0];
  const std::string before = model.parameter_hash();
  kernels::set_deterministic(true);
  for (AttackFamily f : kFamilies) {
    const AttackConfig c = config(f, 4, 17);
    const Perturbation a = generate(model, batch, c, {});
    const Perturbation b = generate(model, batch, c, {});
    CHECK(a.delta.values() == b.delta.values());
    CHECK(a.gradient_queries == c.n_steps);
    CHECK(model.parameter_hash() == before);
  }
  kernels::set_deterministic(false);
  // Different seeds move the random starts.
  CHECK(generate(model, batch, config(AttackFamily::pgd, 2, 1), {}).delta.values() !=
        generate(model, batch, config(AttackFamily::pgd, 2, 2), {}).delta.values());
}

TEST_CASE("attacks: ascent properties on a trained toy model") {
  const Model& model = trained_toy_model();
  const auto batches = toy_batches(60, 10, 4);
  SinkhornConfig sk;
  int fgsm_up = 0, mi_vs_fgsm = 0, pgd_long = 0, fs_up = 0, mix_up = 0;
  for (std::size_t i = 0; i < batches.size(); ++i) {
    const FeatureBatch& b = batches[i];
    const Tensor zero(b.features.shape());
    const double clean = ctc_at(model, b, zero);
    const double fg = ctc_at(model, b, fgsm(model, b, config(AttackFamily::fgsm, 1)).delta);
    fgsm_up += fg >= clean;
    mi_vs_fgsm += ctc_at(model, b, mifgsm(model, b, config(AttackFamily::mifgsm, 10)).delta) >= fg;
    const Tensor init = uniform_init(b, kEps, i);
    const double p20 = ctc_at(model, b, pgd_from(model, b, config(AttackFamily::pgd, 20), init).delta);
    const double p100 = ctc_at(model, b, pgd_from(model, b, config(AttackFamily::pgd, 100), init).delta);
    pgd_long += p100 >= p20;
    AttackConfig fs = config(AttackFamily::feature_scattering, 5, i);
    fs_up += unsup_at(model, b, feature_scattering(model, b, fs, sk).delta, sk) >=
             unsup_at(model, b, uniform_init(b, kEps, i), sk);
    AttackConfig mx = config(AttackFamily::mixpgd, 4, i);
    mix_up += mixed_at(model, b, mixpgd::mixpgd(model, b, mx, sk).delta, sk) >=
              mixed_at(model, b, gaussian_init(b, kEps, i), sk);
  }
  MESSAGE("fgsm>=clean " << fgsm_up << "/10, mifgsm>=fgsm " << mi_vs_fgsm << "/10, pgd100>=pgd20 " << pgd_long
                         << "/10, fs ascent " << fs_up << "/10, mixpgd ascent " << mix_up << "/10");
  CHECK(fgsm_up >= 9);
  CHECK(mi_vs_fgsm >= 7);
  CHECK(pgd_long >= 8);
  CHECK(fs_up >= 8);
  CHECK(mix_up >= 9);  // >= 85% of 10 batches
}
