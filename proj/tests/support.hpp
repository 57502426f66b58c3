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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "mixpgd/data.hpp"
#include "mixpgd/model.hpp"
#include "mixpgd/tensor.hpp"
#include "mixpgd/training.hpp"
#include "mixpgd/util.hpp"

namespace mixpgd::testing {

inline Tensor random_tensor(std::vector<std::size_t> shape, std::uint64_t seed, double scale = 1.0) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  std::normal_distribution<double> d(0.0, scale);
  for (auto& v : t.values()) v = d(rng);
  return t;
}

/// Row-wise log-softmax of a [rows, cols] tensor.
inline Tensor log_softmax_rows(const Tensor& z) {
  Tensor out = z;
  const std::size_t R = z.dim(0), K = z.dim(1);
  for (std::size_t r = 0; r < R; ++r) {
    double m = z(r, 0);
    for (std::size_t k = 1; k < K; ++k) m = std::max(m, z(r, k));
    double s = 0.0;
    for (std::size_t k = 0; k < K; ++k) s += std::exp(z(r, k) - m);
    for (std::size_t k = 0; k < K; ++k) out(r, k) = z(r, k) - m - std::log(s);
  }
  return out;
}

/// |a - n| / max(|a|, |n|, floor)
inline double relative_error(double analytic, double numeric, double floor = 1e-8) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Fraction of the sampled coordinates whose analytic gradient matches the
/// central finite difference of `f` within `tol` relative error.
inline double fd_agreement(Tensor x, const Tensor& analytic, const std::function<double(const Tensor&)>& f,
                           const std::vector<std::size_t>& coords, double h, double tol) {
  std::size_t ok = 0;
  for (std::size_t c : coords) {
    const double x0 = x[c];
    x[c] = x0 + h;
    const double fp = f(x);
    x[c] = x0 - h;
    const double fm = f(x);
    x[c] = x0;
    const double numeric = (fp - fm) / (2.0 * h);
    if (relative_error(analytic[c], numeric) <= tol) ++ok;
  }
  return coords.empty() ? 1.0 : static_cast<double>(ok) / static_cast<double>(coords.size());
}

inline std::vector<std::size_t> sample_coords(std::size_t n, std::size_t k, std::uint64_t seed) {
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  if (k >= n) return all;
  Rng rng(seed);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(k);
  return all;
}

/// A small recognizer that runs in milliseconds.
inline ModelConfig tiny_model_config(std::size_t n_feats = 16) {
  ModelConfig c;
  c.n_feats = n_feats;
  c.cnn_channels = 2;
  c.n_rescnn_blocks = 1;
  c.n_birnn_layers = 1;
  c.rnn_dim = 8;
  c.rnn_hidden = 6;
  c.dropout = 0.1;
  return c;
}

inline MelConfig tiny_mel(int bins = 16) {
  MelConfig m;
  m.mel_bins = bins;
  return m;
}

/// Featurized toy examples.
inline std::vector<AudioExample> toy_examples(std::uint64_t seed, std::size_t n, const MelConfig& mel) {
  auto ex = synth_toy_corpus(seed, n, mel);
  featurize_corpus(ex, mel);
  return ex;
}

/// A tiny model trained briefly on the toy corpus under standard training;
/// built once per test binary.
inline const Model& trained_toy_model() {
  static const Model model = [] {
    const MelConfig mel = tiny_mel();
    const auto data = toy_examples(7, 40, mel);
    TrainConfig cfg;
    cfg.epochs = 6;
    cfg.batch_size = 8;
    cfg.eta2 = 0.005;
    cfg.seed = 1;
    TrainOptions opt;
    opt.mel = mel;
    return train(cfg, data, tiny_model_config(), opt).checkpoint.model();
  }();
  return model;
}

/// Featurized toy batches of `size` examples each.
inline std::vector<FeatureBatch> toy_batches(std::uint64_t seed, std::size_t n_batches, std::size_t size) {
  const auto ex = toy_examples(seed, n_batches * size, tiny_mel());
  std::vector<FeatureBatch> out;
  for (std::size_t b = 0; b < n_batches; ++b) {
    out.push_back(make_batch(std::span(ex).subspan(b * size, size), Alphabet()));
  }
  return out;
}

}  // namespace mixpgd::testing
