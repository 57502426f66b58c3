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

#include "mixpgd/config.hpp"

#include "json.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mixpgd/evaluation.hpp"
#include "mixpgd/util.hpp"

namespace mixpgd {

namespace {

using nlohmann::json;

json to_json_tree(const RunConfig& c) {
  const auto& m = c.data.mel;
  json data{{"train_manifest", c.data.train_manifest},
            {"eval_manifest", c.data.eval_manifest},
            {"dev_manifest", c.data.dev_manifest},
            {"toy_seed", c.data.toy_seed},
            {"toy_n_train", c.data.toy_n_train},
            {"toy_eval_seed", c.data.toy_eval_seed},
            {"toy_n_eval", c.data.toy_n_eval},
            {"sample_rate", m.sample_rate},
            {"mel_bins", m.mel_bins},
            {"win_length", m.win_length},
            {"hop_length", m.hop_length},
            {"log_floor", m.log_floor},
            {"f_min", m.f_min},
            {"f_max", m.f_max},
            {"normalize", m.normalize}};
  const auto& md = c.model;
  json model{{"n_feats", md.n_feats},
             {"cnn_channels", md.cnn_channels},
             {"n_rescnn_blocks", md.n_rescnn_blocks},
             {"n_birnn_layers", md.n_birnn_layers},
             {"rnn_dim", md.rnn_dim},
             {"rnn_hidden", md.rnn_hidden},
             {"n_classes", md.n_classes},
             {"conv_downsample_factor", md.conv_downsample_factor},
             {"freq_stride", md.freq_stride},
             {"dropout", md.dropout}};
  const auto& t = c.train;
  json train{{"regime", to_string(t.regime)},
             {"epochs", t.epochs},
             {"inner_iters", t.inner_iters},
             {"epsilon", t.epsilon},
             {"eta1", t.eta1},
             {"eta2", t.eta2},
             {"batch_size", t.batch_size},
             {"beta", t.beta},
             {"unsup_kind", to_string(t.unsup_kind)},
             {"seed", t.seed},
             {"optimizer",
              {{"name", "adamw"},
               {"beta1", t.optimizer.beta1},
               {"beta2", t.optimizer.beta2},
               {"eps", t.optimizer.eps},
               {"weight_decay", t.optimizer.weight_decay}}},
             {"lr_schedule",
              {{"name", "one_cycle"},
               {"pct_start", t.lr_schedule.pct_start},
               {"div_factor", t.lr_schedule.div_factor},
               {"final_div_factor", t.lr_schedule.final_div_factor}}},
             {"grad_clip", t.grad_clip},
             {"mix_clean", t.mix_clean}};
  const auto& a = c.attack;
  json attack{{"name", a.name},
              {"family", to_string(a.family)},
              {"epsilon", a.epsilon},
              {"step_size", a.step_size},
              {"n_steps", a.n_steps},
              {"beta", a.beta},
              {"unsup_kind", to_string(a.unsup_kind)},
              {"momentum_decay", a.momentum_decay},
              {"random_init", a.random_init},
              {"seed", a.seed}};
  json sinkhorn{{"reg", c.sinkhorn.reg},
                {"max_iters", c.sinkhorn.max_iters},
                {"tol", c.sinkhorn.tol},
                {"grad", c.sinkhorn.grad},
                {"eps_scaling", c.sinkhorn.eps_scaling}};
  const auto& e = c.eval;
  json eval{{"batch_size", e.batch_size},
            {"seed", e.seed},
            {"epsilon", e.epsilon},
            {"attacks", e.attacks},
            {"transfer_attacks", e.transfer_attacks},
            {"surrogate",
             {{"checkpoint", e.surrogate.checkpoint},
              {"width_scale", e.surrogate.width_scale},
              {"seed_offset", e.surrogate.seed_offset},
              {"regime", e.surrogate.regime}}}};
  json output{{"dir", c.output.dir}};
  return json{{"data", data},   {"model", model},       {"train", train},
              {"attack", attack}, {"sinkhorn", sinkhorn}, {"eval", eval},
              {"output", output}};
}

// Keys whose default is "derived from epsilon" unless given explicitly.
json default_tree() {
  json j = to_json_tree(RunConfig{});
  j["train"]["eta1"] = nullptr;
  j["attack"]["step_size"] = nullptr;
  j["eval"]["epsilon"] = nullptr;
  return j;
}

bool parse_int(const std::string& s, json& out) {
  if (s.empty()) return false;
  if (s[0] == '-') {
    long long v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) return false;
    out = v;
    return true;
  }
  const char* b = s.data() + (s[0] == '+' ? 1 : 0);
  unsigned long long v = 0;
  auto [p, ec] = std::from_chars(b, s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) return false;
  out = v;
  return true;
}

json scalar_to_json(const std::string& s, bool quoted) {
  if (quoted) return s;
  if (s == "~" || s == "null" || s == "Null" || s == "NULL" || s.empty()) return nullptr;
  if (s == "true" || s == "True" || s == "TRUE") return true;
  if (s == "false" || s == "False" || s == "FALSE") return false;
  json out;
  if (parse_int(s, out)) return out;
  char* end = nullptr;
  const double d = std::strtod(s.c_str(), &end);
  if (end == s.c_str() + s.size()) return d;
  return s;
}

json yaml_to_json(const YAML::Node& n) {
  switch (n.Type()) {
    case YAML::NodeType::Undefined:
    case YAML::NodeType::Null: return nullptr;
    case YAML::NodeType::Scalar: return scalar_to_json(n.Scalar(), n.Tag() == "!");
    case YAML::NodeType::Sequence: {
      json a = json::array();
      for (const auto& item : n) a.push_back(yaml_to_json(item));
      return a;
    }
    case YAML::NodeType::Map: {
      json o = json::object();
      for (const auto& kv : n) o[kv.first.as<std::string>()] = yaml_to_json(kv.second);
      return o;
    }
  }
  return nullptr;
}

std::string type_name(const json& j) {
  if (j.is_null()) return "number";
  if (j.is_boolean()) return "boolean";
  if (j.is_number_unsigned()) return "non-negative integer";
  if (j.is_number_integer()) return "integer";
  if (j.is_number()) return "number";
  if (j.is_string()) return "string";
  if (j.is_array()) return "list of strings";
  return "mapping";
}

bool compatible(const json& def, const json& v) {
  if (def.is_null()) return v.is_null() || v.is_number();
  if (def.is_boolean()) return v.is_boolean();
  if (def.is_number_unsigned()) return v.is_number_unsigned();
  if (def.is_number_integer()) return v.is_number_integer();
  if (def.is_number()) return v.is_number();
  if (def.is_string()) return v.is_string();
  if (def.is_array()) {
    if (!v.is_array()) return false;
    for (const auto& x : v) {
      if (!x.is_string()) return false;
    }
    return true;
  }
  return v.is_object();
}

// Overlays `user` onto `base`, rejecting keys absent from the schema.
void overlay(json& base, const json& user, const std::string& prefix) {
  if (!user.is_object()) {
    throw ConfigError("config" + (prefix.empty() ? "" : " key '" + prefix + "'") +
                      ": expected a mapping");
  }
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!base.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
    json& slot = base[it.key()];
    if (slot.is_object()) {
      overlay(slot, it.value(), key);
    } else if (!compatible(slot, it.value())) {
      throw ConfigError("config key '" + key + "': expected " + type_name(slot));
    } else {
      slot = it.value();
    }
  }
}

void apply_override(json& tree, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("--set expects key=value, got '" + assignment + "'");
  }
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = yaml_to_json(YAML::Load(text));
  } catch (const YAML::Exception& e) {
    throw ConfigError("--set " + path + ": cannot parse value: " + e.what());
  }
  if (value.is_null() && !text.empty() && text != "~" && text != "null") value = text;
  // Build a nested object from the dotted path and overlay it.
  json patch = value;
  std::vector<std::string> parts;
  std::stringstream ss(path);
  for (std::string p; std::getline(ss, p, '.');) parts.push_back(p);
  for (auto it = parts.rbegin(); it != parts.rend(); ++it) patch = json{{*it, patch}};
  overlay(tree, patch, "");
}

template <typename T>
T field(const json& section, const char* sec, const char* key) {
  try {
    return section.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config key '") + sec + "." + key + "': invalid value");
  }
}

RunConfig from_tree(json& j) {
  RunConfig c;
  const json& d = j["data"];
  c.data.train_manifest = field<std::string>(d, "data", "train_manifest");
  c.data.eval_manifest = field<std::string>(d, "data", "eval_manifest");
  c.data.dev_manifest = field<std::string>(d, "data", "dev_manifest");
  c.data.toy_seed = field<std::uint64_t>(d, "data", "toy_seed");
  c.data.toy_n_train = field<std::size_t>(d, "data", "toy_n_train");
  c.data.toy_eval_seed = field<std::uint64_t>(d, "data", "toy_eval_seed");
  c.data.toy_n_eval = field<std::size_t>(d, "data", "toy_n_eval");
  c.data.mel.sample_rate = field<int>(d, "data", "sample_rate");
  c.data.mel.mel_bins = field<int>(d, "data", "mel_bins");
  c.data.mel.win_length = field<int>(d, "data", "win_length");
  c.data.mel.hop_length = field<int>(d, "data", "hop_length");
  c.data.mel.log_floor = field<double>(d, "data", "log_floor");
  c.data.mel.f_min = field<double>(d, "data", "f_min");
  c.data.mel.f_max = field<double>(d, "data", "f_max");
  c.data.mel.normalize = field<bool>(d, "data", "normalize");

  const json& m = j["model"];
  c.model.n_feats = field<std::size_t>(m, "model", "n_feats");
  c.model.cnn_channels = field<std::size_t>(m, "model", "cnn_channels");
  c.model.n_rescnn_blocks = field<std::size_t>(m, "model", "n_rescnn_blocks");
  c.model.n_birnn_layers = field<std::size_t>(m, "model", "n_birnn_layers");
  c.model.rnn_dim = field<std::size_t>(m, "model", "rnn_dim");
  c.model.rnn_hidden = field<std::size_t>(m, "model", "rnn_hidden");
  c.model.n_classes = field<std::size_t>(m, "model", "n_classes");
  c.model.conv_downsample_factor = field<std::size_t>(m, "model", "conv_downsample_factor");
  c.model.freq_stride = field<std::size_t>(m, "model", "freq_stride");
  c.model.dropout = field<double>(m, "model", "dropout");

  json& t = j["train"];
  try {
    c.train.regime = parse_regime(field<std::string>(t, "train", "regime"));
    c.train.unsup_kind = parse_unsup_kind(field<std::string>(t, "train", "unsup_kind"));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  c.train.epochs = field<int>(t, "train", "epochs");
  c.train.inner_iters = field<int>(t, "train", "inner_iters");
  c.train.epsilon = field<double>(t, "train", "epsilon");
  if (t["eta1"].is_null()) t["eta1"] = c.train.epsilon / 4.0;
  c.train.eta1 = field<double>(t, "train", "eta1");
  c.train.eta2 = field<double>(t, "train", "eta2");
  c.train.batch_size = field<std::size_t>(t, "train", "batch_size");
  c.train.beta = field<double>(t, "train", "beta");
  c.train.seed = field<std::uint64_t>(t, "train", "seed");
  const json& opt = t["optimizer"];
  if (field<std::string>(opt, "train.optimizer", "name") != "adamw") {
    throw ConfigError("config key 'train.optimizer.name': only 'adamw' is supported");
  }
  c.train.optimizer.beta1 = field<double>(opt, "train.optimizer", "beta1");
  c.train.optimizer.beta2 = field<double>(opt, "train.optimizer", "beta2");
  c.train.optimizer.eps = field<double>(opt, "train.optimizer", "eps");
  c.train.optimizer.weight_decay = field<double>(opt, "train.optimizer", "weight_decay");
  const json& lr = t["lr_schedule"];
  if (field<std::string>(lr, "train.lr_schedule", "name") != "one_cycle") {
    throw ConfigError("config key 'train.lr_schedule.name': only 'one_cycle' is supported");
  }
  c.train.lr_schedule.pct_start = field<double>(lr, "train.lr_schedule", "pct_start");
  c.train.lr_schedule.div_factor = field<double>(lr, "train.lr_schedule", "div_factor");
  c.train.lr_schedule.final_div_factor =
      field<double>(lr, "train.lr_schedule", "final_div_factor");
  c.train.grad_clip = field<double>(t, "train", "grad_clip");
  c.train.mix_clean = field<bool>(t, "train", "mix_clean");

  json& a = j["attack"];
  c.attack.name = field<std::string>(a, "attack", "name");
  try {
    c.attack.family = parse_attack_family(field<std::string>(a, "attack", "family"));
    c.attack.unsup_kind = parse_unsup_kind(field<std::string>(a, "attack", "unsup_kind"));
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  c.attack.epsilon = field<double>(a, "attack", "epsilon");
  if (a["step_size"].is_null()) a["step_size"] = c.attack.epsilon / 4.0;
  c.attack.step_size = field<double>(a, "attack", "step_size");
  c.attack.n_steps = field<int>(a, "attack", "n_steps");
  c.attack.beta = field<double>(a, "attack", "beta");
  c.attack.momentum_decay = field<double>(a, "attack", "momentum_decay");
  c.attack.random_init = field<bool>(a, "attack", "random_init");
  c.attack.seed = field<std::uint64_t>(a, "attack", "seed");

  const json& s = j["sinkhorn"];
  c.sinkhorn.reg = field<double>(s, "sinkhorn", "reg");
  c.sinkhorn.max_iters = field<int>(s, "sinkhorn", "max_iters");
  c.sinkhorn.tol = field<double>(s, "sinkhorn", "tol");
  c.sinkhorn.grad = field<std::string>(s, "sinkhorn", "grad");
  c.sinkhorn.eps_scaling = field<bool>(s, "sinkhorn", "eps_scaling");

  json& e = j["eval"];
  c.eval.batch_size = field<std::size_t>(e, "eval", "batch_size");
  c.eval.seed = field<std::uint64_t>(e, "eval", "seed");
  if (e["epsilon"].is_null()) e["epsilon"] = c.train.epsilon;
  c.eval.epsilon = field<double>(e, "eval", "epsilon");
  c.eval.attacks = field<std::vector<std::string>>(e, "eval", "attacks");
  c.eval.transfer_attacks = field<std::vector<std::string>>(e, "eval", "transfer_attacks");
  const json& sg = e["surrogate"];
  c.eval.surrogate.checkpoint = field<std::string>(sg, "eval.surrogate", "checkpoint");
  c.eval.surrogate.width_scale = field<double>(sg, "eval.surrogate", "width_scale");
  c.eval.surrogate.seed_offset = field<std::uint64_t>(sg, "eval.surrogate", "seed_offset");
  c.eval.surrogate.regime = field<std::string>(sg, "eval.surrogate", "regime");

  c.output.dir = field<std::string>(j["output"], "output", "dir");
  return c;
}

}  // namespace

std::string RunConfig::to_json(int indent) const { return to_json_tree(*this).dump(indent); }

std::string RunConfig::hash() const { return content_hash(to_json()); }

void RunConfig::validate() const {
  try {
    const auto& m = data.mel;
    if (m.sample_rate <= 0) throw std::invalid_argument("data.sample_rate: must be > 0");
    if (m.mel_bins <= 0) throw std::invalid_argument("data.mel_bins: must be > 0");
    if (m.win_length <= 0) throw std::invalid_argument("data.win_length: must be > 0");
    if (m.hop_length <= 0) throw std::invalid_argument("data.hop_length: must be > 0");
    if (!(m.log_floor > 0.0)) throw std::invalid_argument("data.log_floor: must be > 0");
    if (!(m.f_max > m.f_min)) throw std::invalid_argument("data.f_max: must exceed f_min");
    if (data.train_manifest.empty() && data.toy_n_train < 1) {
      throw std::invalid_argument("data.toy_n_train: must be >= 1");
    }
    if (model.n_feats != static_cast<std::size_t>(m.mel_bins)) {
      throw std::invalid_argument("model.n_feats: must equal data.mel_bins (" +
                                  std::to_string(model.n_feats) + " vs " +
                                  std::to_string(m.mel_bins) + ")");
    }
    model.validate(Alphabet());
    train.validate();
    attack.validate();
    if (!(sinkhorn.reg > 0.0)) throw std::invalid_argument("sinkhorn.reg: must be > 0");
    if (sinkhorn.max_iters < 1) throw std::invalid_argument("sinkhorn.max_iters: must be >= 1");
    if (!(sinkhorn.tol > 0.0)) throw std::invalid_argument("sinkhorn.tol: must be > 0");
    if (sinkhorn.grad != "implicit" && sinkhorn.grad != "envelope") {
      throw std::invalid_argument("sinkhorn.grad: expected 'implicit' or 'envelope'");
    }
    if (eval.batch_size < 1) throw std::invalid_argument("eval.batch_size: must be >= 1");
    if (!(eval.epsilon >= 0.0)) throw std::invalid_argument("eval.epsilon: must be >= 0");
    preset_attacks(eval.attacks, eval.epsilon);
    preset_attacks(eval.transfer_attacks, eval.epsilon);
    if (!(eval.surrogate.width_scale > 0.0 && eval.surrogate.width_scale <= 1.0)) {
      throw std::invalid_argument("eval.surrogate.width_scale: must lie in (0, 1]");
    }
    parse_regime(eval.surrogate.regime);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

ModelConfig surrogate_model_config(const RunConfig& cfg) {
  ModelConfig m = cfg.model;
  auto scale = [&](std::size_t v) {
    const auto scaled = std::lround(static_cast<double>(v) * cfg.eval.surrogate.width_scale);
    return std::max<std::size_t>(1, static_cast<std::size_t>(scaled));
  };
  m.cnn_channels = scale(m.cnn_channels);
  m.rnn_dim = scale(m.rnn_dim);
  m.rnn_hidden = scale(m.rnn_hidden);
  return m;
}

RunConfig parse_run_config(const std::string& text, const std::vector<std::string>& overrides) {
  json tree = default_tree();
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("config: parse error: ") + e.what());
  }
  if (root && !root.IsNull()) overlay(tree, yaml_to_json(root), "");
  for (const auto& o : overrides) apply_override(tree, o);
  RunConfig c = from_tree(tree);
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides) {
  std::ifstream f(path);
  if (!f) throw ConfigError("config file not found: " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str(), overrides);
}

}  // namespace mixpgd
