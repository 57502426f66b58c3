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

#include <atomic>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mixpgd/data.hpp"
#include "mixpgd/tensor.hpp"

namespace mixpgd {

/// Recognizer shape: conv front-end, residual CNN blocks, bidirectional GRU
/// stack, two-layer classifier.
struct ModelConfig {
  std::size_t n_feats = 128;  // mel bins of the input
  std::size_t cnn_channels = 32;
  std::size_t n_rescnn_blocks = 2;
  std::size_t n_birnn_layers = 2;
  std::size_t rnn_dim = 128;  // width of the projection feeding the GRU stack
  std::size_t rnn_hidden = 128;
  std::size_t n_classes = 29;
  std::size_t conv_downsample_factor = 2;  // time stride of the front-end
  std::size_t freq_stride = 2;
  double dropout = 0.1;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
  void validate(const Alphabet& alphabet) const;
  std::size_t output_length(std::size_t frames) const {
    return downsampled_length(frames, conv_downsample_factor);
  }
  bool operator==(const ModelConfig&) const = default;
};

struct Parameter {
  std::string name;
  Tensor value;
};

/// Ordered, named parameter tensors. Gradients share the same layout.
class ParameterSet {
 public:
  void add(std::string name, Tensor value);
  std::size_t size() const { return params_.size(); }
  std::size_t element_count() const;
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  const Parameter* find(const std::string& name) const;
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  ParameterSet zeros_like() const;
  void add_scaled(const ParameterSet& other, double scale);
  void scale(double s);
  double squared_norm() const;
  /// FNV-1a over names, shapes and raw values.
  std::string hash() const;

 private:
  std::vector<Parameter> params_;
};

enum class Mode { train, eval };

/// log_probs is [batch, max_out_frames, n_classes]; frames beyond
/// out_lengths[i] are zero.
struct ModelOutput {
  Tensor log_probs;
  std::vector<std::size_t> out_lengths;

  std::size_t batch_size() const { return out_lengths.size(); }
  std::size_t n_classes() const { return log_probs.dim(2); }
  /// Valid frames of example i as a [out_lengths[i], n_classes] matrix.
  Tensor example(std::size_t i) const;
};

/// A scalar function of the model output with its gradient w.r.t. log_probs.
struct ObjectiveResult {
  double value = 0.0;
  Tensor grad;
};
using Objective = std::function<ObjectiveResult(const ModelOutput&)>;

struct GradientRequest {
  bool input = true;
  bool params = false;
};

struct GradientResult {
  ModelOutput output;
  double value = 0.0;
  Tensor input_grad;       // shaped like the features; zero on padding
  ParameterSet param_grad;  // empty unless requested
};

class Model {
 public:
  /// Fresh model with seeded uniform fan-in initialization.
  Model(ModelConfig config, std::uint64_t seed);
  /// Adopts existing parameters; throws if any shape disagrees with config.
  Model(ModelConfig config, ParameterSet params);

  Model(const Model& other);
  Model& operator=(const Model& other);

  const ModelConfig& config() const { return config_; }
  const ParameterSet& parameters() const { return params_; }
  ParameterSet& parameters() { return params_; }
  std::string parameter_hash() const { return params_.hash(); }

  ModelOutput forward(const FeatureBatch& batch, Mode mode, std::uint64_t dropout_seed = 0) const;
  ModelOutput forward(const Tensor& features, std::span<const std::size_t> lengths, Mode mode,
                      std::uint64_t dropout_seed = 0) const;

  /// Forward pass, objective, and backward pass in one call. Counts as one
  /// gradient query.
  GradientResult gradients(const Tensor& features, std::span<const std::size_t> lengths,
                           Mode mode, const Objective& objective, GradientRequest request,
                           std::uint64_t dropout_seed = 0) const;

  std::uint64_t gradient_queries() const { return gradient_queries_.load(); }
  void reset_gradient_queries() { gradient_queries_ = 0; }

  /// Expected parameter names and shapes for a config.
  static ParameterSet layout(const ModelConfig& config);

 private:
  ModelConfig config_;
  ParameterSet params_;
  mutable std::atomic<std::uint64_t> gradient_queries_{0};
};

/// Greedy CTC decoding: per-frame argmax, collapse repeats, drop blanks.
/// Only the first out_lengths[i] frames of each example are read.
std::vector<std::string> greedy_decode(const ModelOutput& output, const Alphabet& alphabet);

/// Collapse rule applied to a sequence of per-frame class indices.
std::string collapse_ctc(std::span<const int> frame_classes, const Alphabet& alphabet);

}  // namespace mixpgd
