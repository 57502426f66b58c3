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

#include "mixpgd/checkpoint.hpp"

#include "json.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "mixpgd/util.hpp"

namespace mixpgd {
namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'M', 'I', 'X', 'P', 'G', 'D', 'C', 'K'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are stored little-endian");

json model_config_json(const ModelConfig& c) {
  return json{{"n_feats", c.n_feats},
              {"cnn_channels", c.cnn_channels},
              {"n_rescnn_blocks", c.n_rescnn_blocks},
              {"n_birnn_layers", c.n_birnn_layers},
              {"rnn_dim", c.rnn_dim},
              {"rnn_hidden", c.rnn_hidden},
              {"n_classes", c.n_classes},
              {"conv_downsample_factor", c.conv_downsample_factor},
              {"freq_stride", c.freq_stride},
              {"dropout", c.dropout}};
}

ModelConfig model_config_from(const json& j) {
  ModelConfig c;
  c.n_feats = j.at("n_feats").get<std::size_t>();
  c.cnn_channels = j.at("cnn_channels").get<std::size_t>();
  c.n_rescnn_blocks = j.at("n_rescnn_blocks").get<std::size_t>();
  c.n_birnn_layers = j.at("n_birnn_layers").get<std::size_t>();
  c.rnn_dim = j.at("rnn_dim").get<std::size_t>();
  c.rnn_hidden = j.at("rnn_hidden").get<std::size_t>();
  c.n_classes = j.at("n_classes").get<std::size_t>();
  c.conv_downsample_factor = j.at("conv_downsample_factor").get<std::size_t>();
  c.freq_stride = j.at("freq_stride").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  return c;
}

json mel_json(const MelConfig& m) {
  return json{{"sample_rate", m.sample_rate}, {"mel_bins", m.mel_bins},
              {"win_length", m.win_length},   {"hop_length", m.hop_length},
              {"log_floor", m.log_floor},     {"f_min", m.f_min},
              {"f_max", m.f_max},             {"normalize", m.normalize}};
}

MelConfig mel_from(const json& j) {
  MelConfig m;
  m.sample_rate = j.at("sample_rate").get<int>();
  m.mel_bins = j.at("mel_bins").get<int>();
  m.win_length = j.at("win_length").get<int>();
  m.hop_length = j.at("hop_length").get<int>();
  m.log_floor = j.at("log_floor").get<double>();
  m.f_min = j.at("f_min").get<double>();
  m.f_max = j.at("f_max").get<double>();
  m.normalize = j.at("normalize").get<bool>();
  return m;
}

struct BlobWriter {
  json table = json::array();
  std::string bytes;

  void add(const std::string& name, const Tensor& t) {
    table.push_back({{"name", name},
                     {"shape", t.shape()},
                     {"offset", bytes.size()},
                     {"count", t.size()}});
    const auto* p = reinterpret_cast<const char*>(t.data());
    bytes.append(p, t.size() * sizeof(double));
  }
  void add_set(const std::string& prefix, const ParameterSet& ps) {
    for (const auto& p : ps) add(prefix + p.name, p.value);
  }
};

template <typename T>
void put(std::string& out, T v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t& pos, const std::string& path) {
  if (pos + sizeof(T) > in.size()) {
    throw std::runtime_error("checkpoint " + path + ": truncated file");
  }
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

void check_model_field(const char* name, std::size_t want, std::size_t got) {
  if (want != got) {
    throw std::runtime_error("checkpoint model_config mismatch: " + std::string(name) +
                             " is " + std::to_string(got) + ", expected " +
                             std::to_string(want));
  }
}

void check_expected(const ModelConfig& want, const ModelConfig& got) {
  check_model_field("n_feats", want.n_feats, got.n_feats);
  check_model_field("cnn_channels", want.cnn_channels, got.cnn_channels);
  check_model_field("n_rescnn_blocks", want.n_rescnn_blocks, got.n_rescnn_blocks);
  check_model_field("n_birnn_layers", want.n_birnn_layers, got.n_birnn_layers);
  check_model_field("rnn_dim", want.rnn_dim, got.rnn_dim);
  check_model_field("rnn_hidden", want.rnn_hidden, got.rnn_hidden);
  check_model_field("n_classes", want.n_classes, got.n_classes);
  check_model_field("conv_downsample_factor", want.conv_downsample_factor,
                    got.conv_downsample_factor);
  check_model_field("freq_stride", want.freq_stride, got.freq_stride);
  if (want.dropout != got.dropout) {
    throw std::runtime_error("checkpoint model_config mismatch: dropout");
  }
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  BlobWriter blobs;
  blobs.add_set("param/", ckpt.parameters);
  if (ckpt.optimizer) {
    blobs.add_set("adam_m/", ckpt.optimizer->first_moment);
    blobs.add_set("adam_v/", ckpt.optimizer->second_moment);
  }

  Fnv1a checksum;
  checksum.update(blobs.bytes.data(), blobs.bytes.size());

  json header{{"format_version", kCheckpointFormatVersion},
              {"code_version", kCodeVersion},
              {"model_config", model_config_json(ckpt.model_config)},
              {"alphabet", ckpt.alphabet.symbols()},
              {"mel", mel_json(ckpt.mel)},
              {"regime", ckpt.meta.regime},
              {"epoch", ckpt.meta.epoch},
              {"seed", ckpt.meta.seed},
              {"global_step", ckpt.meta.global_step},
              {"config_hash", ckpt.meta.config_hash},
              {"rng_state", ckpt.meta.rng_state},
              {"param_hash", ckpt.parameters.hash()},
              {"blobs", blobs.table},
              {"blob_bytes", blobs.bytes.size()},
              {"checksum", checksum.hex()}};
  if (ckpt.optimizer) header["optimizer_step"] = ckpt.optimizer->step;

  const std::string text = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointFormatVersion);
  put<std::uint64_t>(out, text.size());
  out += text;
  out += blobs.bytes;

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot write checkpoint " + tmp.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("short write on checkpoint " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected) {
  const std::string where = path.string();
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint not found: " + where);
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string in = ss.str();

  if (in.size() < sizeof(kMagic) || std::memcmp(in.data(), kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("checkpoint " + where + ": bad magic (not a checkpoint file)");
  }
  std::size_t pos = sizeof(kMagic);
  const auto version = get<std::uint32_t>(in, pos, where);
  if (version != kCheckpointFormatVersion) {
    throw std::runtime_error("checkpoint " + where + ": format_version " +
                             std::to_string(version) + " is not supported (expected " +
                             std::to_string(kCheckpointFormatVersion) + ")");
  }
  const auto header_len = get<std::uint64_t>(in, pos, where);
  if (header_len > in.size() - pos) {
    throw std::runtime_error("checkpoint " + where + ": truncated header");
  }
  json header;
  try {
    header = json::parse(in.substr(pos, header_len));
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint " + where + ": corrupted header: " + e.what());
  }
  pos += header_len;

  const std::string blob_bytes = in.substr(pos);
  try {
    if (header.at("format_version").get<std::uint32_t>() != version) {
      throw std::runtime_error("checkpoint " + where + ": header format_version disagrees");
    }
    if (blob_bytes.size() != header.at("blob_bytes").get<std::size_t>()) {
      throw std::runtime_error("checkpoint " + where + ": truncated parameter data");
    }
    Fnv1a checksum;
    checksum.update(blob_bytes.data(), blob_bytes.size());
    if (checksum.hex() != header.at("checksum").get<std::string>()) {
      throw std::runtime_error("checkpoint " + where + ": checksum mismatch (corrupted file)");
    }

    Checkpoint ckpt;
    ckpt.model_config = model_config_from(header.at("model_config"));
    if (expected) check_expected(*expected, ckpt.model_config);
    ckpt.alphabet = Alphabet(header.at("alphabet").get<std::string>());
    ckpt.mel = mel_from(header.at("mel"));
    ckpt.meta.regime = header.at("regime").get<std::string>();
    ckpt.meta.epoch = header.at("epoch").get<int>();
    ckpt.meta.seed = header.at("seed").get<std::uint64_t>();
    ckpt.meta.global_step = header.at("global_step").get<std::uint64_t>();
    ckpt.meta.config_hash = header.at("config_hash").get<std::string>();
    ckpt.meta.rng_state = header.at("rng_state").get<std::string>();

    ParameterSet params, m, v;
    for (const auto& entry : header.at("blobs")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<std::vector<std::size_t>>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const auto count = entry.at("count").get<std::size_t>();
      if (Tensor::count(shape) != count || offset + count * sizeof(double) > blob_bytes.size()) {
        throw std::runtime_error("checkpoint " + where + ": blob table corrupted at " + name);
      }
      Tensor t(shape);
      std::memcpy(t.data(), blob_bytes.data() + offset, count * sizeof(double));
      const auto slash = name.find('/');
      const auto kind = name.substr(0, slash);
      auto pname = name.substr(slash + 1);
      if (kind == "param") params.add(std::move(pname), std::move(t));
      else if (kind == "adam_m") m.add(std::move(pname), std::move(t));
      else if (kind == "adam_v") v.add(std::move(pname), std::move(t));
      else throw std::runtime_error("checkpoint " + where + ": unknown blob " + name);
    }
    // Shape validation against the declared config; errors name the layer.
    ckpt.parameters = Model(ckpt.model_config, params).parameters();
    if (header.contains("optimizer_step")) {
      ckpt.optimizer = OptimizerState{header.at("optimizer_step").get<std::uint64_t>(),
                                      std::move(m), std::move(v)};
    }
    return ckpt;
  } catch (const json::exception& e) {
    throw std::runtime_error("checkpoint " + where + ": corrupted header: " + e.what());
  }
}

}  // namespace mixpgd
