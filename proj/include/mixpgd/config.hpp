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
#include <string>
#include <vector>

#include "mixpgd/attacks.hpp"
#include "mixpgd/data.hpp"
#include "mixpgd/losses.hpp"
#include "mixpgd/model.hpp"
#include "mixpgd/training.hpp"

namespace mixpgd {

struct DataConfig {
  std::string train_manifest;  // empty: use the toy corpus
  std::string eval_manifest;
  std::string dev_manifest;
  std::uint64_t toy_seed = 7;
  std::size_t toy_n_train = 100;
  std::uint64_t toy_eval_seed = 1007;
  std::size_t toy_n_eval = 30;
  MelConfig mel;
};

struct SurrogateConfig {
  std::string checkpoint;     // pre-trained surrogate; trained on demand when empty
  double width_scale = 0.5;   // applied to cnn_channels, rnn_dim, rnn_hidden
  std::uint64_t seed_offset = 1;
  std::string regime = "standard";
};

struct EvalConfig {
  std::size_t batch_size = 10;
  std::uint64_t seed = 0;
  double epsilon = 0.00004;
  std::vector<std::string> attacks{"fgsm", "mifgsm", "pgd20", "pgd100"};
  std::vector<std::string> transfer_attacks{"fgsm", "mifgsm", "pgd50"};
  SurrogateConfig surrogate;
};

struct OutputConfig {
  std::string dir = "runs/default";
};

/// Effective configuration of a run: every module's settings with defaults
/// resolved.
struct RunConfig {
  DataConfig data;
  ModelConfig model;
  TrainConfig train;
  AttackConfig attack;
  SinkhornConfig sinkhorn;
  EvalConfig eval;
  OutputConfig output;

  /// Canonical JSON text of the effective config (sorted keys).
  std::string to_json(int indent = -1) const;
  std::string hash() const;
  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

/// Thrown for unknown keys, wrong types and invalid values.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Parses YAML or JSON text (JSON is a YAML subset) on top of the defaults,
/// then applies `key.path=value` overrides. Unknown keys are rejected.
/// The transfer surrogate's architecture: the run's model with cnn_channels,
/// rnn_dim and rnn_hidden scaled by eval.surrogate.width_scale.
ModelConfig surrogate_model_config(const RunConfig& cfg);

RunConfig parse_run_config(const std::string& text, const std::vector<std::string>& overrides = {});
RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides = {});

}  // namespace mixpgd
