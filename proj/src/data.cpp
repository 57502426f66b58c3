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

#include "mixpgd/data.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include "mixpgd/util.hpp"

namespace mixpgd {

// ---------------------------------------------------------------------------
// Alphabet

Alphabet::Alphabet() : Alphabet("abcdefghijklmnopqrstuvwxyz '") {}

Alphabet::Alphabet(std::string symbols) : symbols_(std::move(symbols)) {
  std::fill(std::begin(index_), std::end(index_), -1);
  if (symbols_.empty()) throw std::invalid_argument("alphabet: empty symbol list");
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    auto& slot = index_[static_cast<unsigned char>(symbols_[i])];
    if (slot >= 0) {
      throw std::invalid_argument(std::string("alphabet: duplicate symbol '") + symbols_[i] + "'");
    }
    slot = static_cast<int>(i);
  }
}

std::vector<int> Alphabet::encode(std::string_view text) const {
  std::vector<int> out;
  out.reserve(text.size());
  for (char c : text) {
    const int idx = index_of(c);
    if (idx < 0) {
      throw std::invalid_argument(std::string("alphabet: symbol '") + c + "' not in alphabet");
    }
    out.push_back(idx);
  }
  return out;
}

std::string Alphabet::decode(std::span<const int> indices) const {
  std::string out;
  out.reserve(indices.size());
  for (int idx : indices) {
    if (idx == blank_index()) continue;
    if (idx < 0 || idx > blank_index()) {
      throw std::out_of_range("alphabet: index " + std::to_string(idx) + " out of range");
    }
    out.push_back(symbols_[static_cast<std::size_t>(idx)]);
  }
  return out;
}

namespace {

// Latin-1 supplement letters (U+00C0..U+00FF) folded to ASCII.
char fold_latin1(unsigned code) {
  static const char* const table =
      "aaaaaaaceeeeiiii"  // C0-CF
      "dnooooo ouuuuyts"  // D0-DF (D7 multiplication sign -> ' ')
      "aaaaaaaceeeeiiii"  // E0-EF
      "dnooooo ouuuuyty"; // F0-FF (F7 division sign -> ' ')
  if (code < 0xC0 || code > 0xFF) return '\0';
  return table[code - 0xC0];
}

}  // namespace

std::string Alphabet::normalize(std::string_view text) const {
  std::string out;
  out.reserve(text.size());
  auto emit = [&](char c) {
    if (c == ' ') {
      if (contains(' ') && !out.empty() && out.back() != ' ') out.push_back(' ');
      return;
    }
    if (contains(c)) out.push_back(c);
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const auto b = static_cast<unsigned char>(text[i]);
    if (b < 0x80) {
      char c = static_cast<char>(std::tolower(b));
      if (std::isspace(b) || c == '-' || c == '_') c = ' ';
      if (c == '`') c = '\'';
      emit(c);
    } else if ((b & 0xE0) == 0xC0 && i + 1 < text.size()) {
      const unsigned code = ((b & 0x1Fu) << 6) | (static_cast<unsigned char>(text[i + 1]) & 0x3Fu);
      ++i;
      if (code == 0x2019 || code == 0x2018) {
        emit('\'');
      } else if (char f = fold_latin1(code); f != '\0') {
        emit(f);
      }
    } else if ((b & 0xF0) == 0xE0 && i + 2 < text.size()) {
      const unsigned code = ((b & 0x0Fu) << 12) |
                            ((static_cast<unsigned char>(text[i + 1]) & 0x3Fu) << 6) |
                            (static_cast<unsigned char>(text[i + 2]) & 0x3Fu);
      i += 2;
      if (code == 0x2019 || code == 0x2018) emit('\'');
    }
  }
  while (!out.empty() && out.back() == ' ') out.pop_back();
  return out;
}

// ---------------------------------------------------------------------------
// Featurization

std::size_t frame_count(std::size_t samples, const MelConfig& cfg) {
  const auto win = static_cast<std::size_t>(cfg.win_length);
  const auto hop = static_cast<std::size_t>(cfg.hop_length);
  if (samples < win) return 0;
  return (samples - win) / hop + 1;
}

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// [mel_bins, n_fft/2 + 1] triangular filters.
std::vector<double> mel_filterbank(const MelConfig& cfg) {
  const int n_fft = cfg.win_length;
  const int n_freq = n_fft / 2 + 1;
  const double mel_lo = hz_to_mel(cfg.f_min);
  const double mel_hi = hz_to_mel(std::min(cfg.f_max, cfg.sample_rate / 2.0));
  std::vector<double> edges(static_cast<std::size_t>(cfg.mel_bins) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) /
                                      static_cast<double>(cfg.mel_bins + 1));
  }
  std::vector<double> fb(static_cast<std::size_t>(cfg.mel_bins * n_freq), 0.0);
  for (int m = 0; m < cfg.mel_bins; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (int k = 0; k < n_freq; ++k) {
      const double f = static_cast<double>(k) * cfg.sample_rate / n_fft;
      double w = 0.0;
      if (f > lo && f <= mid) w = (f - lo) / (mid - lo);
      else if (f > mid && f < hi) w = (hi - f) / (hi - mid);
      fb[static_cast<std::size_t>(m * n_freq + k)] = w;
    }
  }
  return fb;
}

// FFTW planning is not thread-safe; plans are created once per size and
// executed through the new-array interface, which is.
struct FftPlan {
  fftw_plan plan = nullptr;
  int n = 0;
};

std::mutex& fftw_mutex() {
  static std::mutex m;
  return m;
}

const FftPlan& plan_for(int n) {
  static std::map<int, std::unique_ptr<FftPlan>> plans;
  std::lock_guard lock(fftw_mutex());
  auto& slot = plans[n];
  if (!slot) {
    slot = std::make_unique<FftPlan>();
    slot->n = n;
    double* in = fftw_alloc_real(static_cast<std::size_t>(n));
    fftw_complex* out = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
    slot->plan = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
    fftw_free(in);
    fftw_free(out);
  }
  return *slot;
}

}  // namespace

Tensor featurize(const AudioExample& example, const MelConfig& cfg) {
  if (cfg.mel_bins <= 0 || cfg.win_length <= 0 || cfg.hop_length <= 0 || cfg.log_floor <= 0) {
    throw std::invalid_argument("featurize: invalid mel configuration");
  }
  const std::size_t frames = frame_count(example.waveform.size(), cfg);
  if (example.waveform.empty() || frames == 0) {
    throw std::invalid_argument("featurize: example '" + example.id +
                                "' is shorter than one analysis window (" +
                                std::to_string(example.waveform.size()) + " samples)");
  }
  const int n_fft = cfg.win_length;
  const int n_freq = n_fft / 2 + 1;
  const auto fb = mel_filterbank(cfg);
  const FftPlan& plan = plan_for(n_fft);

  std::vector<double> window(static_cast<std::size_t>(n_fft));
  for (int i = 0; i < n_fft; ++i) {
    window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n_fft);
  }

  double* buf = fftw_alloc_real(static_cast<std::size_t>(n_fft));
  fftw_complex* spec = fftw_alloc_complex(static_cast<std::size_t>(n_freq));
  std::vector<double> power(static_cast<std::size_t>(n_freq));
  Tensor out({static_cast<std::size_t>(cfg.mel_bins), frames});
  for (std::size_t t = 0; t < frames; ++t) {
    const double* src = example.waveform.data() + t * static_cast<std::size_t>(cfg.hop_length);
    for (int i = 0; i < n_fft; ++i) buf[i] = src[i] * window[i];
    fftw_execute_dft_r2c(plan.plan, buf, spec);
    for (int k = 0; k < n_freq; ++k) power[k] = spec[k][0] * spec[k][0] + spec[k][1] * spec[k][1];
    for (int m = 0; m < cfg.mel_bins; ++m) {
      const double* w = fb.data() + static_cast<std::size_t>(m * n_freq);
      double e = 0.0;
      for (int k = 0; k < n_freq; ++k) e += w[k] * power[k];
      out(static_cast<std::size_t>(m), t) = std::log(e + cfg.log_floor);
    }
  }
  fftw_free(buf);
  fftw_free(spec);
  return out;
}

void normalize_utterance(Tensor& log_mel) {
  const std::size_t bins = log_mel.dim(0), frames = log_mel.dim(1);
  for (std::size_t m = 0; m < bins; ++m) {
    double mean = 0.0;
    for (std::size_t t = 0; t < frames; ++t) mean += log_mel(m, t);
    mean /= static_cast<double>(frames);
    double var = 0.0;
    for (std::size_t t = 0; t < frames; ++t) {
      const double d = log_mel(m, t) - mean;
      var += d * d;
    }
    var /= static_cast<double>(frames);
    const double scale = 1.0 / std::sqrt(var + 1e-5);
    for (std::size_t t = 0; t < frames; ++t) log_mel(m, t) = (log_mel(m, t) - mean) * scale;
  }
}

void featurize_corpus(std::vector<AudioExample>& examples, const MelConfig& cfg) {
  parallel_for(examples.size(), [&](std::size_t i) {
    auto& ex = examples[i];
    Tensor f = featurize(ex, cfg);
    if (cfg.normalize) normalize_utterance(f);
    ex.duration_frames = f.dim(1);
    ex.features = std::move(f);
  });
}

// ---------------------------------------------------------------------------
// WAV I/O

namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t read_u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
void put_u16(std::ostream& os, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

}  // namespace

WavData read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("wav: cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), {});
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw std::runtime_error("wav: not a RIFF/WAVE file: " + path.string());
  }
  int format = 0, channels = 0, bits = 0;
  WavData wav;
  std::size_t pos = 12;
  bool have_fmt = false;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t size = read_u32(bytes.data() + pos + 4);
    const unsigned char* body = bytes.data() + pos + 8;
    if (pos + 8 + size > bytes.size()) throw std::runtime_error("wav: truncated chunk in " + path.string());
    if (std::memcmp(bytes.data() + pos, "fmt ", 4) == 0 && size >= 16) {
      format = read_u16(body);
      channels = read_u16(body + 2);
      wav.sample_rate = static_cast<int>(read_u32(body + 4));
      bits = read_u16(body + 14);
      have_fmt = true;
    } else if (std::memcmp(bytes.data() + pos, "data", 4) == 0) {
      if (!have_fmt || channels <= 0) throw std::runtime_error("wav: data before fmt in " + path.string());
      const std::size_t frame_bytes = static_cast<std::size_t>(channels) * (bits / 8);
      const std::size_t n = size / frame_bytes;
      wav.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (int c = 0; c < channels; ++c) {
          const unsigned char* s = body + i * frame_bytes + static_cast<std::size_t>(c) * (bits / 8);
          if (format == 1 && bits == 16) {
            acc += static_cast<std::int16_t>(read_u16(s)) / 32768.0;
          } else if (format == 3 && bits == 32) {
            float f;
            std::memcpy(&f, s, 4);
            acc += f;
          } else {
            throw std::runtime_error("wav: unsupported encoding (format " + std::to_string(format) +
                                     ", " + std::to_string(bits) + " bits) in " + path.string());
          }
        }
        wav.samples[i] = acc / channels;
      }
      return wav;
    }
    pos += 8 + size + (size & 1u);
  }
  throw std::runtime_error("wav: no data chunk in " + path.string());
}

void write_wav(const std::filesystem::path& path, std::span<const double> samples, int sample_rate) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("wav: cannot write " + path.string());
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  os.write("RIFF", 4);
  put_u32(os, 36 + data_bytes);
  os.write("WAVEfmt ", 8);
  put_u32(os, 16);
  put_u16(os, 1);
  put_u16(os, 1);
  put_u32(os, static_cast<std::uint32_t>(sample_rate));
  put_u32(os, static_cast<std::uint32_t>(sample_rate * 2));
  put_u16(os, 2);
  put_u16(os, 16);
  os.write("data", 4);
  put_u32(os, data_bytes);
  for (double s : samples) {
    // Same 1/32768 scale as the reader; +1.0 saturates at the largest code.
    const long q = std::clamp(std::lround(s * 32768.0), -32768L, 32767L);
    put_u16(os, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

std::vector<std::string> parse_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  return out + "\"";
}

}  // namespace

ManifestResult load_manifest(const std::filesystem::path& path, const Alphabet& alphabet,
                             const MelConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("manifest: cannot open " + path.string());
  ManifestResult result;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("manifest: empty file " + path.string());
  const auto header = parse_csv_line(line);
  auto column = [&](const std::string& name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw std::runtime_error("manifest: missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_id = column("id"), c_audio = column("audio_path"),
                    c_text = column("transcript");
  const auto base = path.parent_path();
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    const auto f = parse_csv_line(line);
    const std::string id = f.size() > c_id && !f[c_id].empty() ? f[c_id] : "row" + std::to_string(row);
    auto reject = [&](const std::string& why) {
      result.rejects.push_back(id);
      result.warnings.push_back("manifest row " + std::to_string(row) + " (" + id + "): " + why);
    };
    if (f.size() <= std::max({c_id, c_audio, c_text})) {
      reject("too few fields");
      continue;
    }
    AudioExample ex;
    ex.id = id;
    ex.transcript = alphabet.normalize(f[c_text]);
    if (ex.transcript.empty()) {
      reject("transcript empty after normalization");
      continue;
    }
    std::filesystem::path audio = f[c_audio];
    if (audio.is_relative()) audio = base / audio;
    try {
      WavData wav = read_wav(audio);
      if (wav.sample_rate != cfg.sample_rate) {
        reject("sample rate " + std::to_string(wav.sample_rate) + " != " +
               std::to_string(cfg.sample_rate));
        continue;
      }
      ex.waveform = std::move(wav.samples);
    } catch (const std::exception& e) {
      reject(e.what());
      continue;
    }
    ex.duration_frames = frame_count(ex.waveform.size(), cfg);
    if (ex.duration_frames == 0) {
      reject("audio shorter than one analysis window");
      continue;
    }
    result.examples.push_back(std::move(ex));
  }
  return result;
}

void write_corpus(const std::filesystem::path& dir, const std::vector<AudioExample>& examples,
                  int sample_rate) {
  std::filesystem::create_directories(dir / "wav");
  std::ofstream manifest(dir / "manifest.csv");
  if (!manifest) throw std::runtime_error("cannot write manifest in " + dir.string());
  manifest << "id,audio_path,transcript\n";
  for (const auto& ex : examples) {
    const auto rel = std::filesystem::path("wav") / (ex.id + ".wav");
    write_wav(dir / rel, ex.waveform, sample_rate);
    manifest << csv_quote(ex.id) << ',' << csv_quote(rel.string()) << ',' << csv_quote(ex.transcript)
             << '\n';
  }
}

// ---------------------------------------------------------------------------
// Toy corpus

namespace {

const std::vector<std::string>& toy_vocabulary() {
  static const std::vector<std::string> words = {
      "go",   "up",   "no",   "yes",  "stop", "left", "right", "down", "on",   "off",
      "red",  "blue", "cat",  "dog",  "sun",  "day",  "it's",  "we",   "see",  "tree",
      "kid",  "fox",  "jam",  "quiz", "wave", "map",  "box",   "zip",  "hi",   "men"};
  return words;
}

}  // namespace

std::vector<AudioExample> synth_toy_corpus(std::uint64_t seed, std::size_t n, const MelConfig& cfg) {
  static const double kLow[] = {300.0, 420.0, 560.0, 720.0, 900.0, 1100.0};
  static const double kHigh[] = {1500.0, 1900.0, 2400.0, 3000.0, 3700.0};
  const Alphabet alphabet;
  const auto& vocab = toy_vocabulary();
  const std::size_t hop = static_cast<std::size_t>(cfg.hop_length);
  const double sr = cfg.sample_rate;

  std::vector<AudioExample> corpus;
  corpus.reserve(n);
  for (std::size_t u = 0; u < n; ++u) {
    Rng rng(mix_seed(seed, 0x70c0, u));
    std::uniform_int_distribution<std::size_t> pick_word(0, vocab.size() - 1);
    std::uniform_int_distribution<int> n_words_dist(1, 3);
    std::uniform_int_distribution<int> char_frames(3, 5);
    std::uniform_int_distribution<int> gap_frames(1, 1);
    std::uniform_int_distribution<int> space_frames(5, 6);
    std::uniform_int_distribution<int> edge_frames(3, 6);
    std::uniform_real_distribution<double> amp(0.15, 0.45);
    std::uniform_real_distribution<double> jitter(0.98, 1.02);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    std::normal_distribution<double> noise(0.0, 0.002);

    std::string text;
    const int n_words = n_words_dist(rng);
    for (int w = 0; w < n_words; ++w) {
      if (w) text.push_back(' ');
      text += vocab[pick_word(rng)];
    }

    std::vector<double> wave;
    auto silence = [&](int frames) { wave.resize(wave.size() + static_cast<std::size_t>(frames) * hop, 0.0); };
    silence(edge_frames(rng));
    for (std::size_t i = 0; i < text.size(); ++i) {
      const char c = text[i];
      if (c == ' ') {
        silence(space_frames(rng));
        continue;
      }
      const int idx = alphabet.index_of(c);
      const double f1 = kLow[idx / 5] * jitter(rng), f2 = kHigh[idx % 5] * jitter(rng);
      const double a1 = amp(rng), a2 = amp(rng), p1 = phase(rng), p2 = phase(rng);
      const std::size_t len = static_cast<std::size_t>(char_frames(rng)) * hop;
      const std::size_t ramp = len / 8;
      for (std::size_t s = 0; s < len; ++s) {
        double env = 1.0;
        if (s < ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * s / ramp);
        else if (s >= len - ramp) env = 0.5 - 0.5 * std::cos(std::numbers::pi * (len - s) / ramp);
        const double t = s / sr;
        wave.push_back(env * (a1 * std::sin(2.0 * std::numbers::pi * f1 * t + p1) +
                              a2 * std::sin(2.0 * std::numbers::pi * f2 * t + p2)));
      }
      if (i + 1 < text.size() && text[i + 1] != ' ') silence(gap_frames(rng));
    }
    silence(edge_frames(rng));
    wave.resize(std::max<std::size_t>(wave.size(), static_cast<std::size_t>(cfg.win_length)), 0.0);
    for (double& s : wave) s += noise(rng);

    AudioExample ex;
    ex.id = "toy-" + std::to_string(seed) + "-" + std::to_string(u);
    ex.transcript = std::move(text);
    ex.duration_frames = frame_count(wave.size(), cfg);
    ex.waveform = std::move(wave);
    corpus.push_back(std::move(ex));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Batching

FeatureBatch make_batch(std::span<const AudioExample> examples, const Alphabet& alphabet,
                        const MelConfig& cfg) {
  if (examples.empty()) throw std::invalid_argument("make_batch: empty example list");
  std::vector<Tensor> feats;
  std::vector<std::vector<int>> labels;
  feats.reserve(examples.size());
  for (const auto& ex : examples) {
    if (ex.features) {
      feats.push_back(*ex.features);
    } else {
      Tensor f = featurize(ex, cfg);
      if (cfg.normalize) normalize_utterance(f);
      feats.push_back(std::move(f));
    }
    if (ex.transcript.empty()) throw std::invalid_argument("make_batch: empty transcript for " + ex.id);
    labels.push_back(alphabet.encode(ex.transcript));
  }
  const std::size_t bins = feats.front().dim(0);
  std::size_t max_t = 0, max_l = 0;
  for (std::size_t i = 0; i < feats.size(); ++i) {
    if (feats[i].dim(0) != bins) {
      throw std::invalid_argument("make_batch: mel bin mismatch for " + examples[i].id);
    }
    max_t = std::max(max_t, feats[i].dim(1));
    max_l = std::max(max_l, labels[i].size());
  }
  FeatureBatch b;
  b.features = Tensor({feats.size(), bins, max_t});
  b.max_label_length = max_l;
  b.labels.assign(feats.size() * max_l, alphabet.blank_index());
  for (std::size_t i = 0; i < feats.size(); ++i) {
    const std::size_t t_len = feats[i].dim(1);
    for (std::size_t m = 0; m < bins; ++m) {
      for (std::size_t t = 0; t < t_len; ++t) b.features(i, m, t) = feats[i](m, t);
    }
    b.feature_lengths.push_back(t_len);
    std::copy(labels[i].begin(), labels[i].end(), b.labels.begin() + static_cast<long>(i * max_l));
    b.label_lengths.push_back(labels[i].size());
    b.ids.push_back(examples[i].id);
    b.transcripts.push_back(examples[i].transcript);
  }
  return b;
}

std::size_t ctc_required_frames(std::span<const int> labels) {
  std::size_t need = labels.size();
  for (std::size_t i = 1; i < labels.size(); ++i) {
    if (labels[i] == labels[i - 1]) ++need;
  }
  return need;
}

std::vector<std::string> ctc_infeasible_examples(const FeatureBatch& batch, std::size_t downsample) {
  std::vector<std::string> bad;
  for (std::size_t i = 0; i < batch.batch_size(); ++i) {
    if (ctc_required_frames(batch.labels_of(i)) >
        downsampled_length(batch.feature_lengths[i], downsample)) {
      bad.push_back(batch.ids[i]);
    }
  }
  return bad;
}

FeatureBatch with_features(const FeatureBatch& batch, Tensor features) {
  require_same_shape(batch.features, features, "with_features");
  FeatureBatch out = batch;
  out.features = std::move(features);
  return out;
}

}  // namespace mixpgd
