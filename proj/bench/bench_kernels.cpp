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

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "mixpgd/attacks.hpp"
#include "mixpgd/data.hpp"
#include "mixpgd/kernels.hpp"
#include "mixpgd/model.hpp"
#include "mixpgd/util.hpp"

namespace {

using namespace mixpgd;

std::vector<double> random_vector(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> d;
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

template <bool Parallel>
void BM_GemmNT(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_vector(n * n, 1), b = random_vector(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::gemm_nt(n, n, n, a.data(), b.data(), c.data(), false);
    else kernels::reference::gemm_nt(n, n, n, a.data(), b.data(), c.data(), false);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * n * n));
}

kernels::Conv2dShape conv_shape(std::size_t channels, std::size_t frames) {
  kernels::Conv2dShape s;
  s.in_channels = channels;
  s.out_channels = channels;
  s.in_h = frames;
  s.in_w = 20;
  return s;
}

template <bool Parallel>
void BM_Conv2dForward(benchmark::State& state) {
  const auto s = conv_shape(static_cast<std::size_t>(state.range(0)), 200);
  const auto in = random_vector(s.in_channels * s.in_h * s.in_w, 3);
  const auto w = random_vector(s.weight_size(), 4);
  const auto bias = random_vector(s.out_channels, 5);
  std::vector<double> out(s.out_channels * s.out_h() * s.out_w());
  for (auto _ : state) {
    if constexpr (Parallel) kernels::conv2d_forward(s, in.data(), w.data(), bias.data(), out.data());
    else kernels::reference::conv2d_forward(s, in.data(), w.data(), bias.data(), out.data());
    benchmark::DoNotOptimize(out.data());
  }
}

template <bool Parallel>
void BM_Conv2dBackwardParams(benchmark::State& state) {
  const auto s = conv_shape(static_cast<std::size_t>(state.range(0)), 200);
  const auto in = random_vector(s.in_channels * s.in_h * s.in_w, 6);
  const auto dout = random_vector(s.out_channels * s.out_h() * s.out_w(), 7);
  std::vector<double> dw(s.weight_size()), db(s.out_channels);
  for (auto _ : state) {
    if constexpr (Parallel) kernels::conv2d_backward_params(s, in.data(), dout.data(), dw.data(), db.data());
    else kernels::reference::conv2d_backward_params(s, in.data(), dout.data(), dw.data(), db.data());
    benchmark::DoNotOptimize(dw.data());
  }
}

// Whole-model batched forward/backward with parallel vs deterministic kernels.
void BM_ModelGradient(benchmark::State& state) {
  kernels::set_deterministic(state.range(0) == 0);
  MelConfig mel;
  mel.mel_bins = 40;
  auto corpus = synth_toy_corpus(3, 10, mel);
  featurize_corpus(corpus, mel);
  const FeatureBatch batch = make_batch(corpus, Alphabet(), mel);
  ModelConfig cfg;
  cfg.n_feats = 40;
  cfg.cnn_channels = 8;
  cfg.rnn_dim = 64;
  cfg.rnn_hidden = 64;
  const Model model(cfg, 1);
  AttackConfig attack;
  attack.family = AttackFamily::pgd;
  attack.epsilon = 0.05;
  attack.step_size = 0.0125;
  attack.n_steps = 1;
  for (auto _ : state) {
    const Perturbation p = pgd(model, batch, attack);
    benchmark::DoNotOptimize(p.delta.data());
  }
  kernels::set_deterministic(false);
}

}  // namespace

BENCHMARK(BM_GemmNT<false>)->Arg(64)->Arg(256);
BENCHMARK(BM_GemmNT<true>)->Arg(64)->Arg(256);
BENCHMARK(BM_Conv2dForward<false>)->Arg(8)->Arg(32);
BENCHMARK(BM_Conv2dForward<true>)->Arg(8)->Arg(32);
BENCHMARK(BM_Conv2dBackwardParams<false>)->Arg(8)->Arg(32);
BENCHMARK(BM_Conv2dBackwardParams<true>)->Arg(8)->Arg(32);
BENCHMARK(BM_ModelGradient)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
