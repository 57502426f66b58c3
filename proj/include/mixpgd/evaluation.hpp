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
#include <string>
#include <vector>

#include "mixpgd/attacks.hpp"
#include "mixpgd/checkpoint.hpp"
#include "mixpgd/data.hpp"
#include "mixpgd/losses.hpp"
#include "mixpgd/metrics.hpp"
#include "mixpgd/training.hpp"

namespace mixpgd {

struct EvalRow {
  std::string model_id;
  std::string regime;
  std::string attack_name;  // "clean" for the unattacked row
  std::string attack_config_hash;
  std::string setting = "whitebox";  // or "transfer"
  std::string surrogate_id;          // transfer rows only
  double epsilon = 0.0;
  int steps = 0;
  double cer = 0.0;
  double wer = 0.0;
  std::size_t n_examples = 0;
  bool failed = false;
  std::string error;
};

struct EvalMetadata {
  std::string corpus_id;
  std::uint64_t seed = 0;
  std::string timestamp;
  std::string code_version;
  std::string config_hash;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  EvalMetadata metadata;

  /// Appends rows of another report; throws if a (model_id, setting,
  /// attack hash) pair would repeat.
  void merge(const EvalReport& other);
  const EvalRow* find(const std::string& model_id, const std::string& attack_name,
                      const std::string& setting = "whitebox") const;

  std::string to_json() const;
  /// Columns model_id,regime,attack,epsilon,steps,cer,wer followed by the
  /// provenance columns setting,surrogate,attack_hash,config_hash,seed,code_version.
  std::string to_csv() const;
  /// Writes <stem>.json and <stem>.csv into dir.
  void write(const std::filesystem::path& dir, const std::string& stem = "eval_report") const;
  /// Conditions as rows, models as columns, "WER (CER)" cells.
  std::string format_table() const;
};

struct EvalOptions {
  std::size_t batch_size = 10;
  std::uint64_t seed = 0;
  SinkhornConfig sinkhorn;
  std::string model_id;  // derived from the checkpoint when empty
  std::string corpus_id;
  std::string config_hash;
};

/// The named attack presets: fgsm, mifgsm, pgd20, pgd50, pgd100 (and
/// "clean", which maps to no attack). Step size is epsilon / 4.
AttackConfig preset_attack(const std::string& name, double epsilon);
std::vector<AttackConfig> preset_attacks(const std::vector<std::string>& names, double epsilon);

std::string checkpoint_model_id(const Checkpoint& ckpt);

/// Corpus-level rates of a model on the given examples, optionally
/// perturbed by `attack` computed on `source` (the model itself when null).
ErrorRates attacked_error_rates(const Model& target, const Model& source,
                                const std::vector<AudioExample>& corpus,
                                const AttackConfig* attack, const Alphabet& alphabet,
                                const MelConfig& mel, const EvalOptions& opt);

/// Clean row plus one row per attack, all on the evaluated model itself.
EvalReport evaluate_whitebox(const Checkpoint& ckpt, const std::vector<AudioExample>& corpus,
                             const std::vector<AttackConfig>& attacks, const EvalOptions& opt);

/// Perturbations computed on the surrogate, decoded by the target.
EvalReport evaluate_transfer(const Checkpoint& target, const Checkpoint& surrogate,
                             const std::vector<AudioExample>& corpus,
                             const std::vector<AttackConfig>& attacks, const EvalOptions& opt);

struct AblationResult {
  EvalReport report;
  TrainConfig ot_config;
  TrainConfig kl_config;
  Checkpoint ot_checkpoint;
  Checkpoint kl_checkpoint;
};

/// Trains the mixpgd regime twice, differing only in unsup_kind, and runs
/// the white-box suite on both.
AblationResult ablation_unsup(const std::vector<AudioExample>& train_corpus,
                              const std::vector<AudioExample>& eval_corpus,
                              const TrainConfig& base, const ModelConfig& model_config,
                              const TrainOptions& train_options,
                              const std::vector<AttackConfig>& attacks, const EvalOptions& opt);

}  // namespace mixpgd
