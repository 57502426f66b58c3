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

#include "mixpgd/training.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "mixpgd/metrics.hpp"
#include "mixpgd/util.hpp"

namespace mixpgd {

Regime parse_regime(const std::string& s) {
  if (s == "standard") return Regime::standard;
  if (s == "fgsm_adv") return Regime::fgsm_adv;
  if (s == "pgd_adv") return Regime::pgd_adv;
  if (s == "feature_scattering") return Regime::feature_scattering;
  if (s == "mixpgd") return Regime::mixpgd;
  throw std::invalid_argument("train.regime: unknown regime '" + s +
                              "' (expected standard, fgsm_adv, pgd_adv, feature_scattering, "
                              "mixpgd)");
}

std::string to_string(Regime r) {
  switch (r) {
    case Regime::standard: return "standard";
    case Regime::fgsm_adv: return "fgsm_adv";
    case Regime::pgd_adv: return "pgd_adv";
    case Regime::feature_scattering: return "feature_scattering";
    case Regime::mixpgd: return "mixpgd";
  }
  return "?";
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& what) {
    throw std::invalid_argument("train." + field + ": " + what);
  };
  if (epochs < 1) fail("epochs", "must be >= 1");
  if (inner_iters < 1) fail("inner_iters", "must be >= 1");
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (!(eta2 > 0.0)) fail("eta2", "must be > 0");
  if (!(eta1 > 0.0)) fail("eta1", "must be > 0");
  if (!(epsilon >= 0.0)) fail("epsilon", "must be >= 0");
  if (!(beta >= 0.0)) fail("beta", "must be >= 0");
  if (!(grad_clip > 0.0)) fail("grad_clip", "must be > 0");
  if (!(lr_schedule.pct_start > 0.0 && lr_schedule.pct_start < 1.0)) {
    fail("lr_schedule.pct_start", "must lie in (0, 1)");
  }
  if (!(lr_schedule.div_factor >= 1.0)) fail("lr_schedule.div_factor", "must be >= 1");
  if (!(lr_schedule.final_div_factor >= 1.0)) fail("lr_schedule.final_div_factor", "must be >= 1");
}

// ---------------------------------------------------------------------------

OneCycleSchedule::OneCycleSchedule(double peak_lr, std::size_t total_steps,
                                   const OneCycleConfig& cfg)
    : peak_(peak_lr),
      initial_(peak_lr / cfg.div_factor),
      final_(peak_lr / cfg.div_factor / cfg.final_div_factor),
      total_(std::max<std::size_t>(total_steps, 1)) {
  const long warm = std::lround(cfg.pct_start * static_cast<double>(total_)) - 1;
  peak_step_ = static_cast<std::size_t>(std::clamp<long>(warm, 0, static_cast<long>(total_) - 1));
}

double OneCycleSchedule::lr(std::size_t step) const {
  auto cos_anneal = [](double start, double end, double pct) {
    return end + (start - end) / 2.0 * (1.0 + std::cos(std::numbers::pi * pct));
  };
  step = std::min(step, total_ - 1);
  if (step <= peak_step_) {
    if (peak_step_ == 0) return peak_;
    return cos_anneal(initial_, peak_, static_cast<double>(step) / peak_step_);
  }
  const std::size_t span = total_ - 1 - peak_step_;
  return cos_anneal(peak_, final_, static_cast<double>(step - peak_step_) / span);
}

AdamW::AdamW(const ParameterSet& params, AdamWConfig cfg) : cfg_(cfg) {
  state_.first_moment = params.zeros_like();
  state_.second_moment = params.zeros_like();
}

void AdamW::step(ParameterSet& params, const ParameterSet& grads, double lr) {
  ++state_.step;
  const double t = static_cast<double>(state_.step);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& w = params[k].value;
    const auto& g = grads[k].value;
    auto& m = state_.first_moment[k].value;
    auto& v = state_.second_moment[k].value;
    require_same_shape(w, g, params[k].name.c_str());
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] *= 1.0 - lr * cfg_.weight_decay;
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

double clip_grad_norm(ParameterSet& grads, double max_norm) {
  const double norm = std::sqrt(grads.squared_norm());
  if (std::isfinite(norm) && norm > max_norm) grads.scale(max_norm / (norm + 1e-6));
  return norm;
}

// ---------------------------------------------------------------------------

void TrainLog::write_jsonl(std::ostream& os) const {
  for (const auto& r : records) {
    nlohmann::json j{{"epoch", r.epoch},           {"step", r.step},
                     {"clean_loss", r.clean_loss}, {"adv_loss", r.adv_loss},
                     {"lr", r.lr},                 {"wall_time", r.wall_time},
                     {"inner_queries", r.inner_queries}};
    if (!r.params_before_inner.empty()) {
      j["params_before_inner"] = r.params_before_inner;
      j["params_after_inner"] = r.params_after_inner;
    }
    os << j.dump() << '\n';
  }
  nlohmann::json s{{"summary",
                    {{"epochs_run", summary.epochs_run},
                     {"checkpoint_path", summary.checkpoint_path},
                     {"final_param_hash", summary.final_param_hash},
                     {"epoch_mean_loss", summary.epoch_mean_loss}}}};
  if (summary.best_dev_wer) s["summary"]["best_dev_wer"] = *summary.best_dev_wer;
  else s["summary"]["best_dev_wer"] = nullptr;
  os << s.dump() << '\n';
}

TrainingDiverged::TrainingDiverged(const std::string& batch_id, int epoch, std::size_t step)
    : std::runtime_error("training diverged (non-finite loss) at epoch " + std::to_string(epoch) +
                         ", step " + std::to_string(step) + ", batch " + batch_id),
      batch_id_(batch_id) {}

// ---------------------------------------------------------------------------

AttackConfig inner_attack_config(const TrainConfig& cfg, std::uint64_t attack_seed) {
  AttackConfig a;
  a.epsilon = cfg.epsilon;
  a.step_size = cfg.eta1;
  a.n_steps = cfg.inner_iters;
  a.beta = cfg.beta;
  a.unsup_kind = cfg.unsup_kind;
  a.seed = attack_seed;
  a.random_init = true;
  switch (cfg.regime) {
    case Regime::standard:
    case Regime::pgd_adv: a.family = AttackFamily::pgd; break;
    case Regime::fgsm_adv:
      a.family = AttackFamily::fgsm;
      a.n_steps = 1;
      a.step_size = cfg.epsilon > 0.0 ? cfg.epsilon : cfg.eta1;
      break;
    case Regime::feature_scattering: a.family = AttackFamily::feature_scattering; break;
    case Regime::mixpgd: a.family = AttackFamily::mixpgd; break;
  }
  a.name = to_string(a.family);
  return a;
}

Perturbation inner_maximization(const Model& model, const FeatureBatch& batch,
                                const TrainConfig& cfg, const SinkhornConfig& sinkhorn,
                                std::uint64_t attack_seed) {
  if (cfg.regime == Regime::standard) {
    Perturbation p;
    p.delta = Tensor(batch.features.shape());
    p.epsilon_used = 0.0;
    return p;
  }
  return generate(model, batch, inner_attack_config(cfg, attack_seed), sinkhorn);
}

namespace {

std::string join_ids(const std::vector<std::string>& ids) {
  std::string s;
  for (const auto& id : ids) s += (s.empty() ? "" : ",") + id;
  return s;
}

Objective ctc_objective(const FeatureBatch& batch, int blank) {
  return [&batch, blank](const ModelOutput& out) {
    CtcResult r = ctc_loss(out, batch, blank, true);
    return ObjectiveResult{r.loss, std::move(r.grad)};
  };
}

double dev_wer(const Model& model, const std::vector<AudioExample>& dev, const TrainOptions& opt,
               std::size_t batch_size) {
  std::vector<std::string> refs, hyps;
  for (std::size_t s = 0; s < dev.size(); s += batch_size) {
    const std::size_t e = std::min(dev.size(), s + batch_size);
    FeatureBatch b = make_batch(std::span(dev).subspan(s, e - s), opt.alphabet, opt.mel);
    auto h = greedy_decode(model.forward(b, Mode::eval), opt.alphabet);
    refs.insert(refs.end(), b.transcripts.begin(), b.transcripts.end());
    hyps.insert(hyps.end(), h.begin(), h.end());
  }
  return error_rates(refs, hyps).wer;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const std::vector<AudioExample>& data,
                  const ModelConfig& model_config, const TrainOptions& options) {
  cfg.validate();
  model_config.validate(options.alphabet);
  if (data.empty()) throw std::invalid_argument("train: corpus is empty");
  for (const auto& ex : data) {
    if (!ex.features) throw std::invalid_argument("train: example " + ex.id + " has no features");
    if (ex.features->dim(0) != model_config.n_feats) {
      throw std::invalid_argument("train: example " + ex.id + " has " +
                                  std::to_string(ex.features->dim(0)) +
                                  " feature bins but model.n_feats is " +
                                  std::to_string(model_config.n_feats));
    }
    const auto labels = options.alphabet.encode(ex.transcript);
    const std::size_t frames = model_config.output_length(ex.features->dim(1));
    if (ctc_required_frames(labels) > frames) {
      throw std::invalid_argument("train: example " + ex.id +
                                  " is CTC-infeasible (transcript needs " +
                                  std::to_string(ctc_required_frames(labels)) +
                                  " output frames, model produces " + std::to_string(frames) + ")");
    }
  }

  const auto t0 = std::chrono::steady_clock::now();
  const int blank = options.alphabet.blank_index();
  Model model(model_config, mix_seed(cfg.seed, 0x1417));
  AdamW optimizer(model.parameters(), cfg.optimizer);

  const std::size_t n_batches = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = n_batches * static_cast<std::size_t>(cfg.epochs);
  const OneCycleSchedule schedule(cfg.eta2, total_steps, cfg.lr_schedule);

  TrainResult result;
  auto& log = result.log;
  Checkpoint ckpt;
  ckpt.model_config = model_config;
  ckpt.alphabet = options.alphabet;
  ckpt.mel = options.mel;
  ckpt.meta.regime = to_string(cfg.regime);
  ckpt.meta.seed = cfg.seed;
  ckpt.meta.config_hash = options.config_hash;

  std::optional<double> best_score;
  std::size_t step = 0;
  std::vector<std::size_t> order(data.size());

  auto snapshot = [&](int epoch, const std::string& rng_state) {
    ckpt.parameters = model.parameters();
    ckpt.meta.epoch = epoch;
    ckpt.meta.global_step = step;
    ckpt.meta.rng_state = rng_state;
    ckpt.optimizer = optimizer.state();
  };

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffler(mix_seed(cfg.seed, 0x5f, static_cast<std::uint64_t>(epoch)));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), shuffler);
    std::ostringstream rng_state;
    rng_state << shuffler;

    double loss_sum = 0.0;
    for (std::size_t b = 0; b < n_batches; ++b, ++step) {
      std::vector<AudioExample> members;
      for (std::size_t k = b * cfg.batch_size; k < std::min(data.size(), (b + 1) * cfg.batch_size);
           ++k) {
        members.push_back(data[order[k]]);
      }
      const FeatureBatch batch = make_batch(members, options.alphabet, options.mel);
      const std::string batch_id = join_ids(batch.ids);

      StepRecord rec;
      rec.epoch = epoch;
      rec.step = step;
      rec.lr = schedule.lr(step);

      if (options.audit_purity) rec.params_before_inner = model.parameter_hash();
      const Perturbation p = inner_maximization(
          model, batch, cfg, options.sinkhorn,
          mix_seed(cfg.seed, 0xa77ac, step));
      if (options.audit_purity) rec.params_after_inner = model.parameter_hash();
      rec.inner_queries = p.gradient_queries;

      const FeatureBatch adv =
          cfg.regime == Regime::standard ? batch : apply_perturbation(batch, p);
      const std::uint64_t dropout_seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch), step);
      GradientResult g = model.gradients(adv.features, adv.feature_lengths, Mode::train,
                                         ctc_objective(adv, blank),
                                         {.input = false, .params = true}, dropout_seed);
      rec.adv_loss = g.value;
      ParameterSet grads = std::move(g.param_grad);

      if (cfg.regime == Regime::standard) {
        rec.clean_loss = rec.adv_loss;
      } else if (cfg.mix_clean) {
        GradientResult c = model.gradients(batch.features, batch.feature_lengths, Mode::train,
                                           ctc_objective(batch, blank),
                                           {.input = false, .params = true},
                                           mix_seed(dropout_seed, 0xc1ea));
        rec.clean_loss = c.value;
        grads.add_scaled(c.param_grad, 1.0);
      } else {
        rec.clean_loss = ctc_loss(model.forward(batch, Mode::eval), batch, blank, false).loss;
      }

      const double grad_norm = clip_grad_norm(grads, cfg.grad_clip);
      if (!std::isfinite(rec.adv_loss) || !std::isfinite(rec.clean_loss) ||
          !std::isfinite(grad_norm)) {
        throw TrainingDiverged(batch_id, epoch, step);
      }
      optimizer.step(model.parameters(), grads, rec.lr);
      rec.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      loss_sum += rec.adv_loss + (cfg.mix_clean && cfg.regime != Regime::standard ? rec.clean_loss : 0.0);
      log.records.push_back(rec);
    }

    log.summary.epochs_run = epoch + 1;
    log.summary.epoch_mean_loss.push_back(loss_sum / static_cast<double>(n_batches));
    snapshot(epoch, rng_state.str());

    // Lower is better: dev WER when a dev set is given, else mean training loss.
    double score = log.summary.epoch_mean_loss.back();
    if (options.dev && !options.dev->empty()) {
      score = dev_wer(model, *options.dev, options, cfg.batch_size);
      if (!log.summary.best_dev_wer || score < *log.summary.best_dev_wer) {
        log.summary.best_dev_wer = score;
      }
    }
    const bool is_best = !best_score || score < *best_score;
    if (is_best) best_score = score;

    if (options.out_dir) {
      const auto& dir = *options.out_dir;
      save_checkpoint(ckpt, dir / ("epoch_" + std::to_string(epoch) + ".ckpt"));
      save_checkpoint(ckpt, dir / "last.ckpt");
      if (is_best) save_checkpoint(ckpt, dir / "best.ckpt");
      log.summary.checkpoint_path = (dir / "last.ckpt").string();
      std::ofstream jl(dir / "train_log.jsonl", std::ios::trunc);
      log.write_jsonl(jl);
    }
    if (options.progress) {
      std::ostringstream msg;
      msg << "epoch " << epoch << " mean_loss " << log.summary.epoch_mean_loss.back();
      if (options.dev && !options.dev->empty()) msg << " dev_wer " << score;
      options.progress(msg.str());
    }
  }

  log.summary.final_param_hash = model.parameter_hash();
  result.checkpoint = ckpt;
  return result;
}

}  // namespace mixpgd
