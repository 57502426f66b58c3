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
#include <optional>
#include <string>

#include "mixpgd/data.hpp"
#include "mixpgd/model.hpp"

namespace mixpgd {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct OptimizerState {
  std::uint64_t step = 0;
  ParameterSet first_moment;
  ParameterSet second_moment;
};

struct TrainingMeta {
  std::string regime = "standard";
  int epoch = 0;
  std::uint64_t seed = 0;
  std::uint64_t global_step = 0;
  std::string config_hash;
  std::string rng_state;  // textual engine state of the data shuffler
};

struct Checkpoint {
  ModelConfig model_config;
  ParameterSet parameters;
  Alphabet alphabet;
  MelConfig mel;
  TrainingMeta meta;
  std::optional<OptimizerState> optimizer;

  Model model() const { return Model(model_config, parameters); }
};

/// Single-file container: magic, format version, JSON header, then the
/// named float64 blobs. Written to a temporary file and renamed into place.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

/// Throws std::runtime_error on a bad magic, version mismatch, checksum
/// failure or truncated file. When `expected` is given, every model field
/// must match and the first mismatch is named in the error.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const ModelConfig* expected = nullptr);

}  // namespace mixpgd
