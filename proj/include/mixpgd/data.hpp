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
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mixpgd/tensor.hpp"

namespace mixpgd {

/// Character label space. Symbols occupy indices [0, size()); the CTC blank
/// sits at index size(), outside the character range.
class Alphabet {
 public:
  /// Lowercase a-z, space, apostrophe.
  Alphabet();
  explicit Alphabet(std::string symbols);

  const std::string& symbols() const { return symbols_; }
  std::size_t size() const { return symbols_.size(); }
  int blank_index() const { return static_cast<int>(symbols_.size()); }
  std::size_t n_classes() const { return symbols_.size() + 1; }

  bool contains(char c) const { return index_[static_cast<unsigned char>(c)] >= 0; }
  int index_of(char c) const { return index_[static_cast<unsigned char>(c)]; }
  char symbol(int index) const { return symbols_.at(static_cast<std::size_t>(index)); }

  /// Throws std::invalid_argument on characters outside the symbol set.
  std::vector<int> encode(std::string_view text) const;
  /// Blank indices are skipped; other out-of-range indices throw.
  std::string decode(std::span<const int> indices) const;

  /// Lowercases, folds common accented Latin letters and hyphens, drops
  /// everything else outside the symbol set, collapses whitespace.
  std::string normalize(std::string_view text) const;

  bool operator==(const Alphabet& other) const { return symbols_ == other.symbols_; }

 private:
  std::string symbols_;
  int index_[256];
};

struct MelConfig {
  int sample_rate = 16000;
  int mel_bins = 128;
  int win_length = 400;
  int hop_length = 160;
  double log_floor = 1e-6;
  double f_min = 0.0;
  double f_max = 8000.0;
  /// Per-utterance, per-bin mean/variance normalization after log-mel.
  bool normalize = true;
};

/// Number of STFT frames: floor((samples - win) / hop) + 1, or 0 if the
/// waveform is shorter than one window.
std::size_t frame_count(std::size_t samples, const MelConfig& cfg);

struct AudioExample {
  std::string id;
  std::vector<double> waveform;  // 16 kHz mono, may be empty if features are set
  std::string transcript;
  std::size_t duration_frames = 0;
  /// Model-input features [mel_bins, frames], filled by featurize_corpus.
  std::optional<Tensor> features;
};

/// Log-mel spectrogram [mel_bins, frames]. Throws if the waveform is
/// shorter than one analysis window.
Tensor featurize(const AudioExample& example, const MelConfig& cfg);

/// Per-bin zero-mean unit-variance normalization over time, in place.
void normalize_utterance(Tensor& log_mel);

/// Featurizes (and normalizes, if configured) every example in parallel.
void featurize_corpus(std::vector<AudioExample>& examples, const MelConfig& cfg);

struct WavData {
  int sample_rate = 0;
  std::vector<double> samples;  // in [-1, 1]
};

/// 16-bit PCM or 32-bit float WAV; multi-channel input is averaged to mono.
WavData read_wav(const std::filesystem::path& path);
void write_wav(const std::filesystem::path& path, std::span<const double> samples,
               int sample_rate);

struct ManifestResult {
  std::vector<AudioExample> examples;
  std::vector<std::string> rejects;
  std::vector<std::string> warnings;
};

/// CSV with header `id,audio_path,transcript`. Relative audio paths resolve
/// against the manifest's directory. Throws if the manifest is missing.
ManifestResult load_manifest(const std::filesystem::path& path, const Alphabet& alphabet,
                             const MelConfig& cfg = {});

/// Writes a manifest plus one WAV per example into `dir`.
void write_corpus(const std::filesystem::path& dir, const std::vector<AudioExample>& examples,
                  int sample_rate);

/// Deterministic tone-sequence corpus. Each character is a two-tone burst
/// (one low, one high component), characters are separated by short gaps
/// and words by longer silences.
std::vector<AudioExample> synth_toy_corpus(std::uint64_t seed, std::size_t n,
                                           const MelConfig& cfg = {});

/// Padded batch. features is [batch, mel_bins, max_frames]; labels is
/// [batch, max_label_len] padded with the blank index.
struct FeatureBatch {
  Tensor features;
  std::vector<std::size_t> feature_lengths;
  std::vector<int> labels;
  std::size_t max_label_length = 0;
  std::vector<std::size_t> label_lengths;
  std::vector<std::string> ids;
  std::vector<std::string> transcripts;

  std::size_t batch_size() const { return feature_lengths.size(); }
  std::size_t mel_bins() const { return features.dim(1); }
  std::size_t max_frames() const { return features.dim(2); }
  std::span<const int> labels_of(std::size_t i) const {
    return {labels.data() + i * max_label_length, label_lengths[i]};
  }
};

/// Throws on an empty list or on examples without features and waveform.
FeatureBatch make_batch(std::span<const AudioExample> examples, const Alphabet& alphabet,
                        const MelConfig& cfg = {});

/// Output frames of a kernel-3, padding-1 convolution with the given time
/// stride.
inline std::size_t downsampled_length(std::size_t frames, std::size_t stride) {
  return frames == 0 ? 0 : (frames - 1) / stride + 1;
}

/// Minimum frames a CTC alignment of `labels` needs: one per label plus one
/// blank between each pair of equal neighbours.
std::size_t ctc_required_frames(std::span<const int> labels);

/// Ids of batch examples whose transcript cannot be aligned to the model's
/// downsampled output length.
std::vector<std::string> ctc_infeasible_examples(const FeatureBatch& batch,
                                                 std::size_t downsample);

/// Copy of the batch with features replaced (same shape required).
FeatureBatch with_features(const FeatureBatch& batch, Tensor features);

}  // namespace mixpgd
