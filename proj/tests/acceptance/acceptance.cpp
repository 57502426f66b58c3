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

// Acceptance suite: one PASS/FAIL line per criterion. Tolerances and
// thresholds are fixed here; criteria can be selected by number on the
// command line (default: all).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mixpgd/attacks.hpp"
#include "mixpgd/config.hpp"
#include "mixpgd/evaluation.hpp"
#include "mixpgd/kernels.hpp"
#include "mixpgd/losses.hpp"
#include "mixpgd/training.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace mixpgd;
using namespace mixpgd::testing;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 3) {
  std::ostringstream ss;
  ss.precision(digits);
  ss << v;
  return ss.str();
}

// ---------------------------------------------------------------------------
// 1. CTC against alignment enumeration

constexpr int kCtcDraws = 200;
constexpr double kCtcRelTol = 1e-5;
constexpr double kCtcBudgetSeconds = 60.0;

Outcome ctc_oracle() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  std::uniform_int_distribution<std::size_t> pick_t(1, 6), pick_l(1, 3), pick_k(2, 4);
  int checked = 0, agree = 0;
  double worst = 0.0;
  while (checked < kCtcDraws) {
    const std::size_t T = pick_t(rng), L = pick_l(rng), K = pick_k(rng);
    const int blank = static_cast<int>(K) - 1;
    std::uniform_int_distribution<int> pick_label(0, blank - 1);
    std::vector<int> labels(L);
    for (auto& l : labels) l = pick_label(rng);
    if (ctc_required_frames(labels) > T) continue;  // no alignment exists
    const Tensor lp = log_softmax_rows(random_tensor({T, K}, rng(), 2.0));
    const double fused = ctc_nll(lp, labels, blank, nullptr);
    const double err = relative_error(fused, brute_force_ctc_nll(lp, labels, blank));
    worst = std::max(worst, err);
    agree += err < kCtcRelTol;
    ++checked;
  }
  const double secs = seconds_since(t0);
  return {agree == checked && secs < kCtcBudgetSeconds,
          std::to_string(agree) + "/" + std::to_string(checked) + " within " + fmt(kCtcRelTol) +
              " relative, worst " + fmt(worst) + ", " + fmt(secs) + " s"};
}

// ---------------------------------------------------------------------------
// 2. Sinkhorn against exact OT

constexpr int kSinkhornProblems = 50;
constexpr double kSinkhornReg = 0.01;
constexpr double kSinkhornMaxGap = 0.05;
constexpr double kMarginalTol = 1e-6;
constexpr int kSinkhornIters = 10000;
constexpr double kSinkhornBudgetSeconds = 60.0;

Outcome sinkhorn_oracle() {
  const auto t0 = Clock::now();
  int ok = 0, converged = 0;
  double worst_gap = 0.0, min_gap = 1e300, worst_marginal = 0.0, worst_residual = 0.0;
  for (int p = 0; p < kSinkhornProblems; ++p) {
    const std::size_t n = 2 + static_cast<std::size_t>(p % 3);
    const Tensor cost = random_cost(n, n, 500 + static_cast<std::uint64_t>(p));
    const double exact = exact_uniform_ot(cost);
    TransportProblem problem = uniform_problem(cost, kSinkhornReg, kSinkhornIters, kMarginalTol);
    problem.eps_scaling = SinkhornConfig{}.eps_scaling;
    const TransportPlan plan = sinkhorn_ot(problem);
    const double gap = plan.objective - exact;
    worst_gap = std::max(worst_gap, gap);
    min_gap = std::min(min_gap, gap);
    bool good = gap >= 0.0 && gap < kSinkhornMaxGap;
    if (plan.converged) {
      ++converged;
      worst_residual = std::max(worst_residual, plan.marginal_error);
      // Marginals recomputed from the returned plan.
      const double target = 1.0 / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        double row = 0.0, col = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          row += plan.plan(i, j);
          col += plan.plan(j, i);
        }
        const double m = std::max(std::abs(row - target), std::abs(col - target));
        worst_marginal = std::max(worst_marginal, m);
        good = good && m <= kMarginalTol;
      }
    }
    ok += good;
  }
  const double secs = seconds_since(t0);
  return {ok == kSinkhornProblems && converged > 0 && secs < kSinkhornBudgetSeconds,
          std::to_string(ok) + "/" + std::to_string(kSinkhornProblems) + " with 0 <= gap < " +
              fmt(kSinkhornMaxGap) + " (gap range [" + fmt(min_gap) + ", " + fmt(worst_gap) + "]), " +
              std::to_string(converged) + " converged (last-sweep residual <= " + fmt(worst_residual) +
              "), worst marginal of the returned plans " + fmt(worst_marginal) + ", " +
              fmt(secs) + " s"};
}

// ---------------------------------------------------------------------------
// 3. Gradients against central differences

constexpr double kFdRelTol = 1e-3;
constexpr double kFdAgreement = 0.95;
constexpr double kFdBudgetSeconds = 300.0;

SinkhornConfig tight_sinkhorn() {
  SinkhornConfig c;
  c.reg = 0.1;
  c.max_iters = 20000;
  c.tol = 1e-14;
  return c;
}

struct FdTally {
  std::size_t ok = 0, total = 0;
  void add(double fraction, std::size_t n) {
    ok += static_cast<std::size_t>(std::lround(fraction * static_cast<double>(n)));
    total += n;
  }
  double fraction() const { return total ? static_cast<double>(ok) / static_cast<double>(total) : 0.0; }
};

Outcome gradient_checks() {
  const auto t0 = Clock::now();
  const SinkhornConfig sk = tight_sinkhorn();
  const int blank = Alphabet().blank_index();
  std::map<std::string, FdTally> tally;

  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const Model model(tiny_model_config(), 70 + seed);
    const auto ex = toy_examples(80 + seed, 2, tiny_mel());
    const FeatureBatch batch = make_batch(ex, Alphabet());
    const Tensor clean_x = batch.features;
    const Tensor adv_x = [&] {
      Tensor x = clean_x;
      const Tensor d = uniform_init(batch, 0.1, seed);
      for (std::size_t i = 0; i < x.size(); ++i) x[i] += d[i];
      return x;
    }();
    const ModelOutput clean_out = model.forward(batch, Mode::eval);

    // Valid (non-padding) input coordinates.
    std::vector<std::size_t> coords;
    for (std::size_t c : sample_coords(adv_x.size(), 200, seed)) {
      const std::size_t b = c / (batch.mel_bins() * batch.max_frames());
      if (c % batch.max_frames() < batch.feature_lengths[b]) coords.push_back(c);
    }
    coords.resize(std::min<std::size_t>(coords.size(), 60));

    using LossOf = std::function<ObjectiveResult(const ModelOutput&)>;
    const std::map<std::string, LossOf> losses{
        {"ctc_loss",
         [&](const ModelOutput& o) {
           CtcResult r = ctc_loss(o, batch, blank);
           return ObjectiveResult{r.loss, std::move(r.grad)};
         }},
        {"ot_loss",
         [&](const ModelOutput& o) {
           LossGrad r = unsup_loss(clean_out, o, UnsupKind::ot, sk);
           return ObjectiveResult{r.value, std::move(r.grad)};
         }},
        {"kl_loss",
         [&](const ModelOutput& o) {
           LossGrad r = unsup_loss(clean_out, o, UnsupKind::kl, sk);
           return ObjectiveResult{r.value, std::move(r.grad)};
         }},
        {"mixed_loss",
         [&](const ModelOutput& o) {
           LossValue r = mixed_loss(batch, o, clean_out, blank, 1.0, UnsupKind::ot, sk);
           return ObjectiveResult{r.value, std::move(r.grad)};
         }},
    };
    for (const auto& [name, loss] : losses) {
      // Through the recognizer: d loss / d adversarial features.
      const GradientResult g = model.gradients(adv_x, batch.feature_lengths, Mode::eval, loss, {});
      const auto f = [&](const Tensor& x) { return loss(model.forward(x, batch.feature_lengths, Mode::eval)).value; };
      tally[name].add(fd_agreement(adv_x, g.input_grad, f, coords, 1e-5, kFdRelTol), coords.size());

      // At the loss itself: d loss / d adversarial log-probabilities.
      const ModelOutput adv_out = model.forward(adv_x, batch.feature_lengths, Mode::eval);
      const ObjectiveResult r = loss(adv_out);
      std::vector<std::size_t> lp_coords;
      for (std::size_t i = 0; i < adv_out.batch_size(); ++i) {
        for (std::size_t t = 0; t < adv_out.out_lengths[i]; ++t) {
          for (std::size_t k = 0; k < adv_out.n_classes(); ++k) {
            lp_coords.push_back((i * adv_out.log_probs.dim(1) + t) * adv_out.n_classes() + k);
          }
        }
      }
      lp_coords = [&] {
        std::vector<std::size_t> pick;
        for (std::size_t idx : sample_coords(lp_coords.size(), 60, seed + 9)) pick.push_back(lp_coords[idx]);
        return pick;
      }();
      const auto h = [&](const Tensor& lp) {
        ModelOutput o = adv_out;
        o.log_probs = lp;
        return loss(o).value;
      };
      tally[name].add(fd_agreement(adv_out.log_probs, r.grad, h, lp_coords, 1e-6, kFdRelTol), lp_coords.size());
    }
  }
  const double secs = seconds_since(t0);
  bool pass = secs < kFdBudgetSeconds;
  std::string detail;
  for (const auto& [name, t] : tally) {
    pass = pass && t.fraction() >= kFdAgreement;
    detail += name + " " + fmt(100.0 * t.fraction(), 4) + "% of " + std::to_string(t.total) + ", ";
  }
  return {pass, detail + "need >= " + fmt(100.0 * kFdAgreement) + "%, " + fmt(secs) + " s"};
}

// ---------------------------------------------------------------------------
// Desk-scale configuration shared by the remaining criteria.

RunConfig desk_config() {
  static const RunConfig cfg = load_run_config(MIXPGD_DESK_CONFIG);
  return cfg;
}

const AttackFamily kFamilies[] = {AttackFamily::fgsm, AttackFamily::mifgsm, AttackFamily::pgd,
                                  AttackFamily::feature_scattering, AttackFamily::mixpgd};

AttackConfig family_config(AttackFamily f, double eps, int steps, std::uint64_t seed) {
  AttackConfig c;
  c.family = f;
  c.epsilon = eps;
  c.step_size = f == AttackFamily::fgsm ? eps : eps / 4.0;
  c.n_steps = f == AttackFamily::fgsm ? 1 : steps;
  c.seed = seed;
  return c;
}

std::vector<FeatureBatch> desk_batches(const RunConfig& cfg, std::uint64_t seed, std::size_t n_batches,
                                       std::size_t size) {
  const auto ex = toy_examples(seed, n_batches * size, cfg.data.mel);
  std::vector<FeatureBatch> out;
  for (std::size_t b = 0; b < n_batches; ++b) {
    out.push_back(make_batch(std::span(ex).subspan(b * size, size), Alphabet(), cfg.data.mel));
  }
  return out;
}

// ---------------------------------------------------------------------------
// 4. Budget and purity

Outcome budget_and_purity() {
  const RunConfig cfg = desk_config();
  std::size_t calls = 0, within = 0, padding_clean = 0, pure = 0;
  double worst_ratio = 0.0;
  for (std::uint64_t m = 0; m < 2; ++m) {
    const Model model(cfg.model, 300 + m);
    const std::string hash = model.parameter_hash();
    for (const FeatureBatch& batch : desk_batches(cfg, 310 + m, 2, 4)) {
      for (double eps : {0.01, 0.1, 0.5}) {
        for (AttackFamily f : kFamilies) {
          for (std::uint64_t seed = 0; seed < 3; ++seed) {
            const Perturbation p = generate(model, batch, family_config(f, eps, 3, seed), cfg.sinkhorn);
            const BudgetCheck c = check_budget(batch, p.delta);
            ++calls;
            within += c.linf <= eps;
            padding_clean += c.padding_clean;
            pure += model.parameter_hash() == hash;
            worst_ratio = std::max(worst_ratio, c.linf / eps);
          }
        }
      }
    }
  }
  return {within == calls && padding_clean == calls && pure == calls,
          std::to_string(calls) + " attack calls: " + std::to_string(within) + " within budget (max |delta|/eps " +
              fmt(worst_ratio, 17) + "), " + std::to_string(padding_clean) + " padding-clean, " +
              std::to_string(pure) + " with unchanged parameter hash"};
}

// ---------------------------------------------------------------------------
// 5. Reduction lattice

Outcome reduction_lattice() {
  const RunConfig cfg = desk_config();
  const Model model(cfg.model, 400);
  int checks = 0, held = 0;
  auto expect = [&](bool ok) {
    ++checks;
    held += ok;
  };
  for (const FeatureBatch& batch : desk_batches(cfg, 410, 3, 3)) {
    for (std::uint64_t seed = 0; seed < 2; ++seed) {
      const double eps = cfg.train.epsilon;
      AttackConfig mi = family_config(AttackFamily::mifgsm, eps, 1, seed);
      mi.momentum_decay = 0.0;
      mi.step_size = eps;
      mi.random_init = false;
      expect(mifgsm(model, batch, mi).delta.values() ==
             fgsm(model, batch, family_config(AttackFamily::fgsm, eps, 1, seed)).delta.values());
      // Every iterate of mixPGD without the unsupervised term is the PGD iterate.
      for (int steps = 1; steps <= 4; ++steps) {
        AttackConfig mx = family_config(AttackFamily::mixpgd, eps, steps, seed);
        mx.beta = 0.0;
        const Perturbation a = mixpgd::mixpgd(model, batch, mx, cfg.sinkhorn);
        const Perturbation b = pgd_from(model, batch, family_config(AttackFamily::pgd, eps, steps, seed),
                                        gaussian_init(batch, eps, seed));
        expect(a.delta.values() == b.delta.values());
      }
      const ModelOutput clean = model.forward(batch, Mode::eval);
      const FeatureBatch adv = apply_perturbation(
          batch, pgd(model, batch, family_config(AttackFamily::pgd, eps, 2, seed)));
      const ModelOutput adv_out = model.forward(adv, Mode::eval);
      const CtcResult ctc = ctc_loss(adv_out, adv, Alphabet().blank_index());
      for (UnsupKind kind : {UnsupKind::ot, UnsupKind::kl}) {
        const LossValue lv = mixed_loss(adv, adv_out, clean, Alphabet().blank_index(), 0.0, kind, cfg.sinkhorn);
        expect(lv.value == ctc.loss && lv.grad.values() == ctc.grad.values());
      }
    }
  }
  return {held == checks, std::to_string(held) + "/" + std::to_string(checks) + " exact equalities"};
}

// ---------------------------------------------------------------------------
// 6-9. Desk-scale study: ten seeded repetitions of train + evaluate.

constexpr int kRepetitions = 10;

struct SeedResult {
  std::map<std::string, double> wer;  // "<model>/<condition>"
};

struct Study {
  std::vector<SeedResult> seeds;
  std::map<std::string, double> seconds;  // wall time per stage
};

std::string model_line(const SeedResult& r, const std::string& m, const std::vector<std::string>& conds) {
  std::string s = m + ":";
  for (const auto& c : conds) {
    const auto it = r.wer.find(m + "/" + c);
    if (it != r.wer.end()) s += " " + c + " " + fmt(it->second, 4);
  }
  return s;
}

const Study& desk_study() {
  static const Study study = [] {
    Study st;
    const RunConfig base = desk_config();
    const double eps = base.eval.epsilon;
    const AttackConfig fgsm_a = preset_attack("fgsm", eps), pgd20 = preset_attack("pgd20", eps),
                       pgd100 = preset_attack("pgd100", eps);
    for (int s = 0; s < kRepetitions; ++s) {
      RunConfig cfg = base;
      cfg.train.seed = base.train.seed + static_cast<std::uint64_t>(s);
      const auto train_set = toy_examples(base.data.toy_seed + static_cast<std::uint64_t>(s), base.data.toy_n_train,
                                          base.data.mel);
      const auto eval_set = toy_examples(base.data.toy_eval_seed + static_cast<std::uint64_t>(s),
                                         base.data.toy_n_eval, base.data.mel);
      TrainOptions to;
      to.mel = base.data.mel;
      to.sinkhorn = base.sinkhorn;
      to.config_hash = base.hash();
      EvalOptions eo;
      eo.batch_size = base.eval.batch_size;
      eo.seed = static_cast<std::uint64_t>(s);
      eo.sinkhorn = base.sinkhorn;

      SeedResult r;
      auto timed_train = [&](const std::string& stage, TrainConfig tc, const ModelConfig& mc) {
        const auto t0 = Clock::now();
        Model m = train(tc, train_set, mc, to).checkpoint.model();
        st.seconds["train " + stage] += seconds_since(t0);
        return m;
      };
      auto timed_eval = [&](const std::string& model_name, const Model& target, const Model& source,
                            const std::string& cond, const AttackConfig* a) {
        const auto t0 = Clock::now();
        r.wer[model_name + "/" + cond] =
            attacked_error_rates(target, source, eval_set, a, Alphabet(), base.data.mel, eo).wer;
        st.seconds["eval " + model_name + "/" + cond] += seconds_since(t0);
      };

      TrainConfig tc = cfg.train;
      tc.regime = Regime::standard;
      const Model standard = timed_train("standard", tc, cfg.model);
      tc.regime = Regime::pgd_adv;
      const Model pgd_adv = timed_train("pgd_adv", tc, cfg.model);
      tc.regime = Regime::mixpgd;
      tc.unsup_kind = UnsupKind::ot;
      const Model mix_ot = timed_train("mixpgd", tc, cfg.model);
      tc.unsup_kind = UnsupKind::kl;
      const Model mix_kl = timed_train("mixpgd_kl", tc, cfg.model);
      TrainConfig sc = cfg.train;
      sc.regime = parse_regime(base.eval.surrogate.regime);
      sc.seed = cfg.train.seed + base.eval.surrogate.seed_offset;
      const Model surrogate = timed_train("surrogate", sc, surrogate_model_config(cfg));

      timed_eval("standard", standard, standard, "clean", nullptr);
      timed_eval("standard", standard, standard, "FGSM", &fgsm_a);
      timed_eval("standard", standard, standard, "PGD20", &pgd20);
      timed_eval("standard", standard, standard, "PGD100", &pgd100);
      timed_eval("pgd_adv", pgd_adv, pgd_adv, "PGD20", &pgd20);
      timed_eval("mixpgd", mix_ot, mix_ot, "FGSM", &fgsm_a);
      timed_eval("mixpgd", mix_ot, mix_ot, "PGD20", &pgd20);
      timed_eval("mixpgd_kl", mix_kl, mix_kl, "FGSM", &fgsm_a);
      timed_eval("mixpgd_kl", mix_kl, mix_kl, "PGD20", &pgd20);
      timed_eval("standard", standard, surrogate, "transfer PGD20", &pgd20);
      timed_eval("pgd_adv", pgd_adv, surrogate, "transfer PGD20", &pgd20);
      timed_eval("mixpgd", mix_ot, surrogate, "transfer PGD20", &pgd20);

      std::cout << "  seed " << s << " WER% | "
                << model_line(r, "standard", {"clean", "FGSM", "PGD20", "PGD100", "transfer PGD20"}) << " | "
                << model_line(r, "pgd_adv", {"PGD20", "transfer PGD20"}) << " | "
                << model_line(r, "mixpgd", {"FGSM", "PGD20", "transfer PGD20"}) << " | "
                << model_line(r, "mixpgd_kl", {"FGSM", "PGD20"}) << std::endl;
      st.seeds.push_back(std::move(r));
    }
    return st;
  }();
  return study;
}

double stage_seconds(const Study& st, const std::vector<std::string>& prefixes) {
  double total = 0.0;
  for (const auto& [k, v] : st.seconds) {
    for (const auto& p : prefixes) {
      if (k.rfind(p, 0) == 0) {
        total += v;
        break;
      }
    }
  }
  return total;
}

constexpr int kOrderingMinSeeds = 9;        // of 10
constexpr double kOrderingBudgetSeconds = 1800.0;
constexpr int kDefenseMinSeeds = 7;         // of 10, per margin
constexpr double kDefenseBudgetSeconds = 7200.0;
constexpr int kAblationMinSeeds = 7;        // of 10, per attack column
constexpr double kTransferMinFraction = 0.70;

Outcome attack_strength_ordering() {
  const Study& st = desk_study();
  int held = 0;
  for (const auto& r : st.seeds) {
    const auto& w = r.wer;
    held += w.at("standard/clean") <= w.at("standard/FGSM") && w.at("standard/FGSM") <= w.at("standard/PGD20") &&
            w.at("standard/PGD20") <= w.at("standard/PGD100");
  }
  const double secs = stage_seconds(st, {"train standard", "eval standard/clean", "eval standard/FGSM",
                                         "eval standard/PGD"});
  return {held >= kOrderingMinSeeds && secs < kOrderingBudgetSeconds,
          "clean <= FGSM <= PGD20 <= PGD100 in " + std::to_string(held) + "/" + std::to_string(kRepetitions) +
              " seeds (need " + std::to_string(kOrderingMinSeeds) + "), " + fmt(secs) + " s"};
}

Outcome defense_ordering() {
  const Study& st = desk_study();
  int mix_vs_pgd = 0, pgd_vs_std = 0, both = 0;
  double gap_sum = 0.0;
  for (const auto& r : st.seeds) {
    const double mix = r.wer.at("mixpgd/PGD20"), pgd = r.wer.at("pgd_adv/PGD20"), std_ = r.wer.at("standard/PGD20");
    mix_vs_pgd += mix <= pgd;
    pgd_vs_std += pgd <= std_;
    both += mix <= pgd && pgd <= std_;
    gap_sum += pgd - mix;
  }
  const double secs = stage_seconds(st, {"train standard", "train pgd_adv", "train mixpgd",
                                         "eval standard/PGD20", "eval pgd_adv/PGD20", "eval mixpgd/PGD20"}) -
                      stage_seconds(st, {"train mixpgd_kl"});
  return {mix_vs_pgd >= kDefenseMinSeeds && pgd_vs_std >= kDefenseMinSeeds && secs < kDefenseBudgetSeconds,
          "PGD20 WER: mixpgd <= pgd_adv in " + std::to_string(mix_vs_pgd) + "/10, pgd_adv <= standard in " +
              std::to_string(pgd_vs_std) + "/10 (both in " + std::to_string(both) + "/10; need " +
              std::to_string(kDefenseMinSeeds) + " each), mean pgd_adv - mixpgd " +
              fmt(gap_sum / kRepetitions, 4) + " WER points, " + fmt(secs) + " s"};
}

Outcome ablation_direction() {
  const Study& st = desk_study();
  int fgsm_ok = 0, pgd_ok = 0;
  for (const auto& r : st.seeds) {
    fgsm_ok += r.wer.at("mixpgd/FGSM") <= r.wer.at("mixpgd_kl/FGSM");
    pgd_ok += r.wer.at("mixpgd/PGD20") <= r.wer.at("mixpgd_kl/PGD20");
  }
  return {fgsm_ok >= kAblationMinSeeds && pgd_ok >= kAblationMinSeeds,
          "OT <= KL under FGSM in " + std::to_string(fgsm_ok) + "/10, under PGD20 in " + std::to_string(pgd_ok) +
              "/10 (need " + std::to_string(kAblationMinSeeds) + " each)"};
}

Outcome transfer_weakness() {
  const Study& st = desk_study();
  int held = 0, total = 0;
  for (const auto& r : st.seeds) {
    for (const char* m : {"standard", "pgd_adv", "mixpgd"}) {
      held += r.wer.at(std::string(m) + "/transfer PGD20") <= r.wer.at(std::string(m) + "/PGD20");
      ++total;
    }
  }
  const double frac = static_cast<double>(held) / total;
  return {frac >= kTransferMinFraction,
          "transferred PGD20 WER <= white-box PGD20 WER in " + std::to_string(held) + "/" + std::to_string(total) +
              " (seed, target) configs (" + fmt(100.0 * frac) + "%, need " + fmt(100.0 * kTransferMinFraction) +
              "%)"};
}

// ---------------------------------------------------------------------------
// 10. Determinism

Outcome determinism() {
  RunConfig cfg = desk_config();
  cfg.train.regime = Regime::mixpgd;
  cfg.train.epochs = 2;  // two epochs suffice to exercise every stage of the loop
  const auto train_set = toy_examples(cfg.data.toy_seed, 40, cfg.data.mel);
  const auto eval_set = toy_examples(cfg.data.toy_eval_seed, 10, cfg.data.mel);
  TrainOptions to;
  to.mel = cfg.data.mel;
  to.sinkhorn = cfg.sinkhorn;
  to.config_hash = cfg.hash();
  EvalOptions eo;
  eo.batch_size = cfg.eval.batch_size;
  eo.seed = cfg.eval.seed;
  eo.sinkhorn = cfg.sinkhorn;
  eo.config_hash = cfg.hash();
  const auto attacks = preset_attacks({"fgsm", "mifgsm", "pgd20"}, cfg.eval.epsilon);

  const bool saved = kernels::deterministic();
  kernels::set_deterministic(true);
  std::vector<std::string> hashes, reports;
  for (int run = 0; run < 2; ++run) {
    const TrainResult r = train(cfg.train, train_set, cfg.model, to);
    hashes.push_back(r.log.summary.final_param_hash);
    reports.push_back(evaluate_whitebox(r.checkpoint, eval_set, attacks, eo).to_csv());
  }
  kernels::set_deterministic(saved);
  return {hashes[0] == hashes[1] && reports[0] == reports[1],
          std::string("final parameter hash ") + (hashes[0] == hashes[1] ? "identical (" + hashes[0] + ")" : "differs") +
              ", EvalReport values " + (reports[0] == reports[1] ? "identical" : "differ")};
}

struct Criterion {
  int id;
  const char* title;
  Outcome (*run)();
};

const Criterion kCriteria[] = {
    {1, "CTC matches alignment enumeration", ctc_oracle},
    {2, "Sinkhorn bounds exact OT", sinkhorn_oracle},
    {3, "loss gradients match finite differences", gradient_checks},
    {4, "perturbation budget, padding and purity", budget_and_purity},
    {5, "reduction lattice", reduction_lattice},
    {6, "attack-strength ordering on a standard model", attack_strength_ordering},
    {7, "defense ordering under PGD20", defense_ordering},
    {8, "OT versus KL ablation direction", ablation_direction},
    {9, "transfer attacks are weaker than white-box", transfer_weakness},
    {10, "determinism", determinism},
};

}  // namespace

int main(int argc, char** argv) {
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failed = 0;
  for (const auto& c : kCriteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << c.id << ": " << c.title << " -- " << o.detail
              << std::endl;
  }
  return failed ? 1 : 0;
}
