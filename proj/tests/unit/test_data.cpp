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
#include <numbers>
#include <random>

#include "mixpgd/data.hpp"
#include "support.hpp"

using namespace mixpgd;
using mixpgd::testing::toy_examples;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::path(MIXPGD_TEST_DATA_DIR) / "scratch" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::vector<double> sine(double hz, std::size_t samples, double amp = 0.5) {
  std::vector<double> w(samples);
  for (std::size_t i = 0; i < samples; ++i) w[i] = amp * std::sin(2.0 * std::numbers::pi * hz * i / 16000.0);
  return w;
}

// Direct O(N^2) DFT log-mel with the same window and filter definitions.
Tensor naive_log_mel(const std::vector<double>& wave, const MelConfig& cfg) {
  const int n = cfg.win_length;
  const int n_freq = n / 2 + 1;
  auto to_mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
  auto to_hz = [](double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); };
  const double lo = to_mel(cfg.f_min), hi = to_mel(cfg.f_max);
  std::vector<double> edges(cfg.mel_bins + 2);
  for (int i = 0; i < cfg.mel_bins + 2; ++i) edges[i] = to_hz(lo + (hi - lo) * i / (cfg.mel_bins + 1));
  const std::size_t frames = (wave.size() - n) / cfg.hop_length + 1;
  Tensor out({static_cast<std::size_t>(cfg.mel_bins), frames});
  for (std::size_t t = 0; t < frames; ++t) {
    std::vector<double> power(n_freq);
    for (int k = 0; k < n_freq; ++k) {
      double re = 0.0, im = 0.0;
      for (int i = 0; i < n; ++i) {
        const double x = wave[t * cfg.hop_length + i] * (0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n));
        re += x * std::cos(2.0 * std::numbers::pi * k * i / n);
        im -= x * std::sin(2.0 * std::numbers::pi * k * i / n);
      }
      power[k] = re * re + im * im;
    }
    for (int m = 0; m < cfg.mel_bins; ++m) {
      double e = 0.0;
      for (int k = 0; k < n_freq; ++k) {
        const double f = static_cast<double>(k) * cfg.sample_rate / n;
        double w = 0.0;
        if (f > edges[m] && f <= edges[m + 1]) w = (f - edges[m]) / (edges[m + 1] - edges[m]);
        else if (f > edges[m + 1] && f < edges[m + 2]) w = (edges[m + 2] - f) / (edges[m + 2] - edges[m + 1]);
        e += w * power[k];
      }
      out(m, t) = std::log(e + cfg.log_floor);
    }
  }
  return out;
}

}  // namespace

TEST_CASE("alphabet: layout, blank outside the symbol range, round trip") {
  const Alphabet a;
  CHECK(a.size() == 28);
  CHECK(a.blank_index() == 28);
  CHECK(a.n_classes() == 29);
  const std::string s = "it's a test of the alphabet";
  const auto enc = a.encode(s);
  for (int idx : enc) CHECK(idx < a.blank_index());
  CHECK(a.decode(enc) == s);
  CHECK_THROWS_AS(a.encode("Upper"), std::invalid_argument);
  CHECK_THROWS_AS(Alphabet("abca"), std::invalid_argument);
}

TEST_CASE("alphabet: normalization lowercases, drops punctuation, collapses spaces") {
  const Alphabet a;
  CHECK(a.normalize("Hello, World!") == "hello world");
  CHECK(a.normalize("  DON'T   stop ") == "don't stop");
  CHECK(a.normalize("caf\xc3\xa9 na\xc3\xafve") == "cafe naive");
  CHECK(a.normalize("it\xe2\x80\x99s") == "it's");
  CHECK(a.normalize("123 !?") == "");
}

TEST_CASE("featurize: frame count, finiteness, determinism") {
  MelConfig cfg;
  CHECK(frame_count(16000, cfg) == 98);
  CHECK(frame_count(399, cfg) == 0);
  CHECK(frame_count(400, cfg) == 1);

  AudioExample one_second{"sec", sine(440.0, 16000), "a", 0, std::nullopt};
  const Tensor f = featurize(one_second, cfg);
  CHECK(f.dim(0) == 128);
  CHECK(f.dim(1) == 98);
  const Tensor g = featurize(one_second, cfg);
  CHECK(f.values() == g.values());

  AudioExample silent{"zero", std::vector<double>(16000, 0.0), "a", 0, std::nullopt};
  const Tensor z = featurize(silent, cfg);
  for (double v : z.values()) {
    REQUIRE(std::isfinite(v));
    CHECK(v == doctest::Approx(std::log(cfg.log_floor)));
  }
  Tensor zn = z;
  normalize_utterance(zn);
  for (double v : zn.values()) CHECK(std::isfinite(v));
}

TEST_CASE("featurize: FFT path matches a direct DFT") {
  MelConfig cfg;
  cfg.mel_bins = 20;
  std::vector<double> wave = sine(700.0, 1200);
  Rng rng(5);
  std::normal_distribution<double> noise(0.0, 0.05);
  for (auto& v : wave) v += noise(rng);
  const Tensor fast = featurize({"dft", wave, "a", 0, std::nullopt}, cfg);
  const Tensor slow = naive_log_mel(wave, cfg);
  REQUIRE(fast.dim(1) == slow.dim(1));
  for (std::size_t i = 0; i < fast.size(); ++i) CHECK(fast[i] == doctest::Approx(slow[i]).epsilon(1e-9));
}

TEST_CASE("featurize: a pure tone peaks in the mel band containing it") {
  MelConfig cfg;
  cfg.mel_bins = 40;
  const Tensor f = featurize({"tone", sine(1000.0, 4000), "a", 0, std::nullopt}, cfg);
  std::size_t best = 0;
  for (std::size_t m = 1; m < f.dim(0); ++m) {
    if (f(m, 3) > f(best, 3)) best = m;
  }
  auto to_mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
  const double step = to_mel(8000.0) / 41.0;
  const double expected_center = to_mel(1000.0) / step - 1.0;  // filter m is centred at edge m + 1
  CHECK(std::abs(static_cast<double>(best) - expected_center) <= 1.0);
}

TEST_CASE("featurize: too-short waveform names the example") {
  AudioExample ex{"tiny-17", std::vector<double>(100, 0.1), "a", 0, std::nullopt};
  try {
    featurize(ex, MelConfig{});
    FAIL("expected an error");
  } catch (const std::invalid_argument& e) {
    CHECK(std::string(e.what()).find("tiny-17") != std::string::npos);
  }
}

TEST_CASE("wav: 16-bit round trip within quantization") {
  const auto dir = scratch_dir("wav");
  const auto wave = sine(300.0, 1000, 0.8);
  write_wav(dir / "x.wav", wave, 16000);
  const WavData back = read_wav(dir / "x.wav");
  CHECK(back.sample_rate == 16000);
  REQUIRE(back.samples.size() == wave.size());
  for (std::size_t i = 0; i < wave.size(); ++i) CHECK(std::abs(back.samples[i] - wave[i]) <= 0.5 / 32768.0 + 1e-15);
  std::ofstream(dir / "bad.wav") << "not a wav";
  CHECK_THROWS(read_wav(dir / "bad.wav"));
}

TEST_CASE("manifest: rows in file order, normalized transcripts, rejects") {
  const auto dir = scratch_dir("manifest");
  auto corpus = synth_toy_corpus(3, 3);
  corpus[0].transcript = "abc";
  write_corpus(dir, corpus, 16000);
  {
    std::ofstream m(dir / "manifest.csv", std::ios::app);
    m << "extra,wav/" << corpus[1].id << ".wav,\"Hello, World!\"\n";
  }
  const ManifestResult r = load_manifest(dir / "manifest.csv", Alphabet());
  REQUIRE(r.examples.size() == 4);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(r.examples[i].id == corpus[i].id);
    CHECK(r.examples[i].transcript == corpus[i].transcript);
    CHECK(r.examples[i].duration_frames > 0);
  }
  CHECK(r.examples[3].transcript == "hello world");
  CHECK(r.rejects.empty());

  const auto missing = scratch_dir("manifest_missing");
  std::ofstream(missing / "manifest.csv") << "id,audio_path,transcript\nlost,nowhere.wav,hi\n";
  const ManifestResult m = load_manifest(missing / "manifest.csv", Alphabet());
  CHECK(m.examples.empty());
  REQUIRE(m.rejects.size() == 1);
  CHECK(m.rejects[0] == "lost");
  CHECK(m.warnings.size() == 1);

  CHECK_THROWS(load_manifest(missing / "absent.csv", Alphabet()));
}

TEST_CASE("make_batch: padding, lengths, labels") {
  MelConfig cfg;
  cfg.mel_bins = 8;
  const Alphabet a;
  AudioExample e1{"e1", {}, "ab", 50, mixpgd::testing::random_tensor({8, 50}, 1)};
  AudioExample e2{"e2", {}, "cab a", 80, mixpgd::testing::random_tensor({8, 80}, 2)};
  const std::vector<AudioExample> two{e1, e2};
  const FeatureBatch b = make_batch(two, a, cfg);
  CHECK(b.features.dim(0) == 2);
  CHECK(b.features.dim(1) == 8);
  CHECK(b.features.dim(2) == 80);
  CHECK(b.feature_lengths == std::vector<std::size_t>{50, 80});
  CHECK(b.label_lengths == std::vector<std::size_t>{2, 5});
  CHECK(b.max_label_length == 5);
  for (std::size_t m = 0; m < 8; ++m) {
    for (std::size_t t = 50; t < 80; ++t) CHECK(b.features(0, m, t) == 0.0);
    for (std::size_t t = 0; t < 50; ++t) CHECK(b.features(0, m, t) == (*e1.features)(m, t));
  }
  CHECK(a.decode(b.labels_of(1)) == "cab a");
  for (std::size_t k = 2; k < 5; ++k) CHECK(b.labels[k] == a.blank_index());

  const FeatureBatch single = make_batch(std::span(two).first(1), a, cfg);
  CHECK(single.feature_lengths == std::vector<std::size_t>{50});
  CHECK_THROWS_AS(make_batch(std::span<const AudioExample>{}, a, cfg), std::invalid_argument);
}

TEST_CASE("make_batch: CTC-infeasible transcripts are flagged") {
  const Alphabet a;
  AudioExample ok{"ok", {}, "ab", 8, Tensor({4, 8})};
  AudioExample too_long{"long", {}, "abcde", 8, Tensor({4, 8})};
  AudioExample repeats{"rep", {}, "aaa", 8, Tensor({4, 8})};
  const std::vector<AudioExample> ex{ok, too_long, repeats};
  const FeatureBatch b = make_batch(ex, a);
  // Stride 2 leaves 4 output frames; "aaa" needs 3 labels + 2 separating blanks.
  CHECK(ctc_required_frames(b.labels_of(2)) == 5);
  CHECK(ctc_infeasible_examples(b, 2) == std::vector<std::string>{"long", "rep"});
  CHECK(ctc_infeasible_examples(b, 1).empty());
}

TEST_CASE("toy corpus: deterministic, seed-sensitive, valid transcripts") {
  const auto a = synth_toy_corpus(7, 10);
  const auto b = synth_toy_corpus(7, 10);
  REQUIRE(a.size() == 10);
  bool all_equal = true;
  for (std::size_t i = 0; i < 10; ++i) {
    all_equal = all_equal && a[i].waveform == b[i].waveform && a[i].transcript == b[i].transcript;
  }
  CHECK(all_equal);
  const auto c = synth_toy_corpus(8, 10);
  bool any_diff = false;
  for (std::size_t i = 0; i < 10; ++i) any_diff = any_diff || a[i].waveform != c[i].waveform;
  CHECK(any_diff);
  CHECK(synth_toy_corpus(7, 1).size() == 1);

  const Alphabet alpha;
  for (const auto& ex : synth_toy_corpus(11, 40)) {
    CHECK_FALSE(ex.transcript.empty());
    CHECK(alpha.normalize(ex.transcript) == ex.transcript);
    CHECK(alpha.decode(alpha.encode(ex.transcript)) == ex.transcript);
    CHECK(ex.duration_frames > 0);
  }
}

TEST_CASE("featurize_corpus: parallel featurization is finite and deterministic") {
  const MelConfig mel = mixpgd::testing::tiny_mel(16);
  const auto a = toy_examples(2, 12, mel);
  const auto b = toy_examples(2, 12, mel);
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].features);
    CHECK(a[i].features->values() == b[i].features->values());
    CHECK(a[i].duration_frames == a[i].features->dim(1));
    for (double v : a[i].features->values()) CHECK(std::isfinite(v));
  }
}
