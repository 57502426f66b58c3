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
#include <filesystem>
#include <fstream>

#include "mixpgd/checkpoint.hpp"
#include "mixpgd/kernels.hpp"
#include "mixpgd/losses.hpp"
#include "mixpgd/model.hpp"
#include "support.hpp"

using namespace mixpgd;
using namespace mixpgd::testing;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::path(MIXPGD_TEST_DATA_DIR) / "scratch" / "model";
  std::filesystem::create_directories(dir);
  return dir / name;
}

// Output whose frame argmaxes are the given classes.
ModelOutput output_with_argmax(const std::vector<int>& classes, std::size_t n_classes = 29) {
  ModelOutput out;
  out.log_probs = Tensor({1, classes.size(), n_classes}, std::log(0.5 / static_cast<double>(n_classes - 1)));
  for (std::size_t t = 0; t < classes.size(); ++t) out.log_probs(0, t, static_cast<std::size_t>(classes[t])) = std::log(0.5);
  out.out_lengths = {classes.size()};
  return out;
}

FeatureBatch toy_batch(std::size_t n, std::uint64_t seed, std::size_t bins = 16) {
  const auto ex = toy_examples(seed, n, tiny_mel(static_cast<int>(bins)));
  return make_batch(ex, Alphabet());
}

Objective ctc_objective(const FeatureBatch& batch) {
  return [&batch](const ModelOutput& out) {
    CtcResult r = ctc_loss(out, batch, Alphabet().blank_index());
    return ObjectiveResult{r.loss, std::move(r.grad)};
  };
}

}  // namespace

TEST_CASE("forward: default architecture maps [2, 128, 80] to [2, 40, 29]") {
  ModelConfig cfg;
  cfg.cnn_channels = 4;
  cfg.rnn_dim = 16;
  cfg.rnn_hidden = 8;
  const Model model(cfg, 1);
  const Tensor x = random_tensor({2, 128, 80}, 3);
  const std::vector<std::size_t> lengths{80, 61};
  const ModelOutput out = model.forward(x, lengths, Mode::eval);
  CHECK(out.log_probs.dim(0) == 2);
  CHECK(out.log_probs.dim(1) == 40);
  CHECK(out.log_probs.dim(2) == 29);
  CHECK(out.out_lengths == std::vector<std::size_t>{40, 31});
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t t = 0; t < out.log_probs.dim(1); ++t) {
      double s = 0.0;
      for (std::size_t k = 0; k < 29; ++k) s += std::exp(out.log_probs(b, t, k));
      if (t < out.out_lengths[b]) {
        CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
      } else {
        CHECK(s == doctest::Approx(29.0));  // padding frames are exactly zero log-probs
      }
    }
  }
}

TEST_CASE("forward: eval mode is deterministic; train-mode dropout follows its seed") {
  const Model model(tiny_model_config(), 4);
  const FeatureBatch b = toy_batch(3, 5);
  CHECK(model.forward(b, Mode::eval).log_probs.values() == model.forward(b, Mode::eval).log_probs.values());
  const auto t1 = model.forward(b, Mode::train, 11).log_probs.values();
  CHECK(t1 == model.forward(b, Mode::train, 11).log_probs.values());
  CHECK(t1 != model.forward(b, Mode::train, 12).log_probs.values());
  CHECK(t1 != model.forward(b, Mode::eval).log_probs.values());
}

TEST_CASE("forward: padding does not change an example's output or loss") {
  const Model model(tiny_model_config(), 6);
  const auto ex = toy_examples(8, 4, tiny_mel());
  const FeatureBatch batch = make_batch(ex, Alphabet());
  const ModelOutput batched = model.forward(batch, Mode::eval);
  const CtcResult batch_loss = ctc_loss(batched, batch, Alphabet().blank_index(), false);
  for (std::size_t i = 0; i < ex.size(); ++i) {
    const FeatureBatch alone = make_batch(std::span(ex).subspan(i, 1), Alphabet());
    const ModelOutput single = model.forward(alone, Mode::eval);
    const Tensor a = single.example(0), b = batched.example(i);
    REQUIRE(a.same_shape(b));
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k] == doctest::Approx(b[k]).epsilon(1e-9));
    const double l = ctc_loss(single, alone, Alphabet().blank_index(), false).loss;
    CHECK(relative_error(l, batch_loss.per_example[i]) <= 1e-5);
  }
}

TEST_CASE("forward: shape errors name the layer") {
  const ModelConfig cfg = tiny_model_config(16);
  const Model model(cfg, 1);
  const Tensor wrong_bins = random_tensor({1, 20, 30}, 1);
  const std::vector<std::size_t> len{30};
  try {
    model.forward(wrong_bins, len, Mode::eval);
    FAIL("expected an error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("conv_in") != std::string::npos);
  }
  ParameterSet params = model.parameters();
  const std::string name = params[2].name;
  params[2].value = Tensor({params[2].value.size() + 1});
  try {
    Model broken(cfg, params);
    FAIL("expected an error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find(name) != std::string::npos);
  }
  ModelConfig bad = cfg;
  bad.n_classes = 30;
  CHECK_THROWS_WITH_AS(bad.validate(Alphabet()), doctest::Contains("n_classes"), std::invalid_argument);
  bad = cfg;
  bad.conv_downsample_factor = 0;
  CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("conv_downsample_factor"), std::invalid_argument);
}

TEST_CASE("gradients: input gradient of CTC matches central differences") {
  const Model model(tiny_model_config(), 9);
  const FeatureBatch batch = toy_batch(2, 10);
  const Objective obj = ctc_objective(batch);
  const GradientResult g = model.gradients(batch.features, batch.feature_lengths, Mode::eval, obj, {});
  double norm = 0.0;
  for (double v : g.input_grad.values()) norm += v * v;
  CHECK(norm > 0.0);
  // Padding positions carry no gradient.
  for (std::size_t m = 0; m < batch.mel_bins(); ++m) {
    for (std::size_t t = batch.feature_lengths[0]; t < batch.max_frames(); ++t) CHECK(g.input_grad(0, m, t) == 0.0);
  }
  std::vector<std::size_t> coords;
  for (std::size_t c : sample_coords(batch.features.size(), 400, 3)) {
    const std::size_t b = c / (batch.mel_bins() * batch.max_frames());
    const std::size_t t = c % batch.max_frames();
    if (t < batch.feature_lengths[b]) coords.push_back(c);
  }
  coords.resize(std::min<std::size_t>(coords.size(), 120));
  const auto f = [&](const Tensor& x) {
    return ctc_loss(model.forward(x, batch.feature_lengths, Mode::eval), batch, Alphabet().blank_index(), false).loss;
  };
  CHECK(fd_agreement(batch.features, g.input_grad, f, coords, 1e-5, 1e-3) >= 0.95);
}

TEST_CASE("gradients: parameter gradient matches central differences") {
  Model model(tiny_model_config(), 12);
  const FeatureBatch batch = toy_batch(2, 13);
  const GradientResult g =
      model.gradients(batch.features, batch.feature_lengths, Mode::eval, ctc_objective(batch), {false, true});
  REQUIRE(g.param_grad.size() == model.parameters().size());
  std::size_t ok = 0, total = 0;
  for (std::size_t p = 0; p < model.parameters().size(); ++p) {
    Tensor& w = model.parameters()[p].value;
    for (std::size_t c : sample_coords(w.size(), 3, 100 + p)) {
      const double w0 = w[c];
      w[c] = w0 + 1e-5;
      const double fp = ctc_loss(model.forward(batch, Mode::eval), batch, 28, false).loss;
      w[c] = w0 - 1e-5;
      const double fm = ctc_loss(model.forward(batch, Mode::eval), batch, 28, false).loss;
      w[c] = w0;
      ++total;
      if (relative_error(g.param_grad[p].value[c], (fp - fm) / 2e-5, 1e-6) <= 1e-3) ++ok;
    }
  }
  CHECK(static_cast<double>(ok) / static_cast<double>(total) >= 0.95);
  CHECK(g.value == doctest::Approx(ctc_loss(model.forward(batch, Mode::eval), batch, 28, false).loss));
}

TEST_CASE("gradients: each call counts as one query and leaves parameters untouched") {
  const Model model(tiny_model_config(), 14);
  const FeatureBatch batch = toy_batch(2, 15);
  const std::string before = model.parameter_hash();
  CHECK(model.gradient_queries() == 0);
  for (int i = 0; i < 3; ++i) model.gradients(batch.features, batch.feature_lengths, Mode::eval, ctc_objective(batch), {});
  CHECK(model.gradient_queries() == 3);
  CHECK(model.parameter_hash() == before);
}

TEST_CASE("greedy decoding: collapse rule") {
  const Alphabet a;
  const int blank = a.blank_index();
  const int ca = a.index_of('a'), cb = a.index_of('b');
  CHECK(greedy_decode(output_with_argmax({blank, ca, ca, blank, cb}), a)[0] == "ab");
  CHECK(greedy_decode(output_with_argmax({blank, blank, blank}), a)[0] == "");
  CHECK(greedy_decode(output_with_argmax({ca, blank, ca}), a)[0] == "aa");
  CHECK(collapse_ctc(std::vector<int>{cb, cb, ca, blank, ca, ca}, a) == "baa");
  // Frames beyond out_lengths are ignored.
  ModelOutput cut = output_with_argmax({ca, blank, cb, cb});
  cut.out_lengths = {2};
  CHECK(greedy_decode(cut, a)[0] == "a");
}

TEST_CASE("greedy decoding: positive scaling invariance and length contract") {
  const Model model(tiny_model_config(), 16);
  const FeatureBatch batch = toy_batch(5, 17);
  const ModelOutput out = model.forward(batch, Mode::eval);
  const auto decoded = greedy_decode(out, Alphabet());
  for (double s : {0.01, 0.5, 3.0, 1000.0}) {
    ModelOutput scaled = out;
    for (auto& v : scaled.log_probs.values()) v *= s;
    CHECK(greedy_decode(scaled, Alphabet()) == decoded);
  }
  for (std::size_t i = 0; i < decoded.size(); ++i) CHECK(decoded[i].size() <= out.out_lengths[i]);
}

TEST_CASE("checkpoint: round trip restores parameters and outputs") {
  Checkpoint ck;
  ck.model_config = tiny_model_config();
  ck.parameters = Model(ck.model_config, 21).parameters();
  ck.mel = tiny_mel();
  ck.meta.regime = "standard";
  ck.meta.epoch = 3;
  ck.meta.seed = 77;
  ck.meta.config_hash = "abc123";
  OptimizerState opt{5, ck.parameters.zeros_like(), ck.parameters.zeros_like()};
  opt.first_moment.add_scaled(ck.parameters, 0.25);
  ck.optimizer = opt;
  const auto path = scratch("roundtrip.ckpt");
  save_checkpoint(ck, path);
  CHECK_FALSE(std::filesystem::exists(path.string() + ".tmp"));

  const Checkpoint back = load_checkpoint(path, &ck.model_config);
  CHECK(back.model_config == ck.model_config);
  CHECK(back.parameters.hash() == ck.parameters.hash());
  CHECK(back.meta.regime == "standard");
  CHECK(back.meta.epoch == 3);
  CHECK(back.meta.seed == 77);
  CHECK(back.meta.config_hash == "abc123");
  CHECK(back.alphabet == ck.alphabet);
  CHECK(back.mel.mel_bins == ck.mel.mel_bins);
  REQUIRE(back.optimizer);
  CHECK(back.optimizer->step == 5);
  CHECK(back.optimizer->first_moment.hash() == opt.first_moment.hash());

  kernels::set_deterministic(true);
  const FeatureBatch probe = toy_batch(3, 22);
  const auto a = ck.model().forward(probe, Mode::eval).log_probs;
  const auto b = back.model().forward(probe, Mode::eval).log_probs;
  kernels::set_deterministic(false);
  double max_diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) max_diff = std::max(max_diff, std::abs(a[i] - b[i]));
  CHECK(max_diff <= 1e-6);
  CHECK(a.values() == b.values());
}

TEST_CASE("checkpoint: mismatches and corruption are explicit errors") {
  Checkpoint ck;
  ck.model_config = tiny_model_config();
  ck.parameters = Model(ck.model_config, 31).parameters();
  ck.mel = tiny_mel();
  const auto path = scratch("errors.ckpt");
  save_checkpoint(ck, path);

  ModelConfig expected = ck.model_config;
  expected.n_classes = 30;
  CHECK_THROWS_WITH_AS(load_checkpoint(path, &expected), doctest::Contains("n_classes"), std::runtime_error);
  expected = ck.model_config;
  expected.rnn_hidden = 7;
  CHECK_THROWS_WITH_AS(load_checkpoint(path, &expected), doctest::Contains("rnn_hidden"), std::runtime_error);

  std::string bytes;
  {
    std::ifstream in(path, std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(in), {});
  }
  auto write = [&](const std::string& name, const std::string& data) {
    const auto p = scratch(name);
    std::ofstream(p, std::ios::binary) << data;
    return p;
  };
  std::string versioned = bytes;
  versioned[8] = 2;
  CHECK_THROWS_WITH_AS(load_checkpoint(write("version.ckpt", versioned)), doctest::Contains("format_version"),
                       std::runtime_error);
  std::string flipped = bytes;
  flipped[flipped.size() - 5] ^= 0x40;
  CHECK_THROWS_WITH_AS(load_checkpoint(write("flipped.ckpt", flipped)), doctest::Contains("checksum"),
                       std::runtime_error);
  CHECK_THROWS_WITH_AS(load_checkpoint(write("short.ckpt", bytes.substr(0, bytes.size() - 100))),
                       doctest::Contains("truncated"), std::runtime_error);
  CHECK_THROWS_WITH_AS(load_checkpoint(write("magic.ckpt", "NOTACKPT" + bytes.substr(8))),
                       doctest::Contains("magic"), std::runtime_error);
  CHECK_THROWS_AS(load_checkpoint(scratch("absent.ckpt")), std::runtime_error);
}
