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
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mixpgd/attacks.hpp"
#include "mixpgd/checkpoint.hpp"
#include "mixpgd/data.hpp"
#include "mixpgd/losses.hpp"
#include "mixpgd/model.hpp"

namespace mixpgd {

enum class Regime { standard, fgsm_adv, pgd_adv, feature_scattering, mixpgd };

Regime parse_regime(const std::string& s);
std::string to_string(Regime r);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// One-cycle learning-rate policy with cosine annealing in both phases.
struct OneCycleConfig {
  double pct_start = 0.3;
  double div_factor = 25.0;
  double final_div_factor = 1e4;
};

struct TrainConfig {
  Regime regime = Regime::standard;
  int epochs = 25;          // outer iterations
  int inner_iters = 4;      // attack steps per batch
  double epsilon = 0.00004;
  double eta1 = 0.00001;    // attack step size
  double eta2 = 0.0005;     // peak learning rate
  std::size_t batch_size = 10;
  double beta = 1.0;
  UnsupKind unsup_kind = UnsupKind::ot;
  std::uint64_t seed = 0;
  AdamWConfig optimizer;
  OneCycleConfig lr_schedule;
  double grad_clip = 5.0;
  bool mix_clean = false;

  void validate() const;
};

class OneCycleSchedule {
 public:
  OneCycleSchedule(double peak_lr, std::size_t total_steps, const OneCycleConfig& cfg);
  double lr(std::size_t step) const;
  std::size_t peak_step() const { return peak_step_; }

 private:
  double peak_, initial_, final_;
  std::size_t total_, peak_step_;
};

class AdamW {
 public:
  AdamW(const ParameterSet& params, AdamWConfig cfg);
  void step(ParameterSet& params, const ParameterSet& grads, double lr);
  OptimizerState state() const { return state_; }
  void restore(OptimizerState s) { state_ = std::move(s); }

 private:
  AdamWConfig cfg_;
  OptimizerState state_;
};

/// Scales grads in place so their global L2 norm is at most max_norm;
/// returns the norm before clipping.
double clip_grad_norm(ParameterSet& grads, double max_norm);

struct StepRecord {
  int epoch = 0;
  std::size_t step = 0;  // global step
  double clean_loss = 0.0;
  double adv_loss = 0.0;
  double lr = 0.0;
  double wall_time = 0.0;  // seconds since training start
  int inner_queries = 0;
  std::string params_before_inner;  // hashes around the inner loop
  std::string params_after_inner;
};

struct TrainSummary {
  int epochs_run = 0;
  std::optional<double> best_dev_wer;
  std::string checkpoint_path;
  std::string final_param_hash;
  std::vector<double> epoch_mean_loss;
};

struct TrainLog {
  std::vector<StepRecord> records;
  TrainSummary summary;

  /// One JSON object per line.
  void write_jsonl(std::ostream& os) const;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& batch_id, int epoch, std::size_t step);
  const std::string& batch_id() const { return batch_id_; }

 private:
  std::string batch_id_;
};

struct TrainOptions {
  Alphabet alphabet;
  MelConfig mel;
  SinkhornConfig sinkhorn;
  std::string config_hash;
  /// Optional held-out set used to pick the `best` checkpoint.
  const std::vector<AudioExample>* dev = nullptr;
  /// When set, per-epoch checkpoints plus best/last aliases and train_log.jsonl
  /// are written here.
  std::optional<std::filesystem::path> out_dir;
  /// Record parameter hashes around every inner loop (costly on large models).
  bool audit_purity = false;
  std::function<void(const std::string&)> progress;
};

struct TrainResult {
  Checkpoint checkpoint;
  TrainLog log;
};

/// Inner maximization for one batch: the attack that the regime trains
/// against. Standard training returns a zero perturbation.
Perturbation inner_maximization(const Model& model, const FeatureBatch& batch,
                                const TrainConfig& cfg, const SinkhornConfig& sinkhorn,
                                std::uint64_t attack_seed);

/// The attack configuration inner_maximization uses for a regime.
AttackConfig inner_attack_config(const TrainConfig& cfg, std::uint64_t attack_seed);

/// Examples must carry features (see featurize_corpus).
TrainResult train(const TrainConfig& cfg, const std::vector<AudioExample>& data,
                  const ModelConfig& model_config, const TrainOptions& options);

}  // namespace mixpgd
