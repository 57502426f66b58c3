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

#include "mixpgd/evaluation.hpp"

#include "json.hpp"

#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "mixpgd/util.hpp"

namespace mixpgd {

namespace {

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream ss;
  ss << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return ss.str();
}

std::string fmt(double v, int digits = 2) {
  if (!std::isfinite(v)) return "nan";
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(digits) << v;
  return ss.str();
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += (c == '"') ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

const std::string kCleanHash = content_hash("{\"family\":\"clean\"}");

}  // namespace

// ---------------------------------------------------------------------------

void EvalReport::merge(const EvalReport& other) {
  std::set<std::tuple<std::string, std::string, std::string>> seen;
  for (const auto& r : rows) seen.emplace(r.model_id, r.setting, r.attack_config_hash);
  for (const auto& r : other.rows) {
    if (!seen.emplace(r.model_id, r.setting, r.attack_config_hash).second) {
      throw std::invalid_argument("EvalReport: duplicate row for model " + r.model_id +
                                  " attack " + r.attack_name);
    }
    rows.push_back(r);
  }
}

const EvalRow* EvalReport::find(const std::string& model_id, const std::string& attack_name,
                                const std::string& setting) const {
  for (const auto& r : rows) {
    if (r.model_id == model_id && r.attack_name == attack_name && r.setting == setting) return &r;
  }
  return nullptr;
}

std::string EvalReport::to_json() const {
  nlohmann::json rs = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json j{{"model_id", r.model_id},
                     {"regime", r.regime},
                     {"attack", r.attack_name},
                     {"attack_config_hash", r.attack_config_hash},
                     {"setting", r.setting},
                     {"epsilon", r.epsilon},
                     {"steps", r.steps},
                     {"n_examples", r.n_examples},
                     {"status", r.failed ? "failed" : "ok"}};
    if (!r.surrogate_id.empty()) j["surrogate_id"] = r.surrogate_id;
    if (r.failed) {
      j["cer"] = nullptr;
      j["wer"] = nullptr;
      j["error"] = r.error;
    } else {
      j["cer"] = r.cer;
      j["wer"] = r.wer;
    }
    rs.push_back(std::move(j));
  }
  nlohmann::json out{{"rows", rs},
                     {"metadata",
                      {{"corpus_id", metadata.corpus_id},
                       {"seed", metadata.seed},
                       {"timestamp", metadata.timestamp},
                       {"code_version", metadata.code_version},
                       {"config_hash", metadata.config_hash}}}};
  return out.dump(2);
}

std::string EvalReport::to_csv() const {
  std::ostringstream ss;
  ss << "model_id,regime,attack,epsilon,steps,cer,wer,setting,surrogate,attack_hash,"
        "config_hash,seed,code_version\n";
  ss << std::setprecision(17);
  for (const auto& r : rows) {
    ss << csv_field(r.model_id) << ',' << r.regime << ',' << csv_field(r.attack_name) << ','
       << r.epsilon << ',' << r.steps << ',';
    if (r.failed) ss << "failed,failed,";
    else ss << r.cer << ',' << r.wer << ',';
    ss << r.setting << ',' << csv_field(r.surrogate_id) << ',' << r.attack_config_hash << ','
       << metadata.config_hash << ',' << metadata.seed << ',' << metadata.code_version << '\n';
  }
  return ss.str();
}

void EvalReport::write(const std::filesystem::path& dir, const std::string& stem) const {
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / (stem + ".json"));
    f << to_json() << '\n';
  }
  std::ofstream f(dir / (stem + ".csv"));
  f << to_csv();
}

std::string EvalReport::format_table() const {
  std::vector<std::string> models, conditions;
  std::map<std::pair<std::string, std::string>, const EvalRow*> cells;
  for (const auto& r : rows) {
    const std::string col = r.setting == "transfer" ? r.model_id + " <- " + r.surrogate_id
                                                    : r.model_id;
    if (std::find(models.begin(), models.end(), col) == models.end()) models.push_back(col);
    if (std::find(conditions.begin(), conditions.end(), r.attack_name) == conditions.end()) {
      conditions.push_back(r.attack_name);
    }
    cells[{r.attack_name, col}] = &r;
  }
  std::size_t w0 = 10;
  for (const auto& c : conditions) w0 = std::max(w0, c.size() + 2);
  std::vector<std::size_t> widths;
  for (const auto& m : models) widths.push_back(std::max<std::size_t>(m.size() + 2, 18));

  std::ostringstream ss;
  ss << std::left << std::setw(static_cast<int>(w0)) << "condition";
  for (std::size_t k = 0; k < models.size(); ++k) {
    ss << std::setw(static_cast<int>(widths[k])) << models[k];
  }
  ss << "\n";
  for (const auto& c : conditions) {
    ss << std::setw(static_cast<int>(w0)) << c;
    for (std::size_t k = 0; k < models.size(); ++k) {
      auto it = cells.find({c, models[k]});
      std::string cell = "-";
      if (it != cells.end()) {
        cell = it->second->failed ? "failed"
                                  : fmt(it->second->wer) + " (" + fmt(it->second->cer) + ")";
      }
      ss << std::setw(static_cast<int>(widths[k])) << cell;
    }
    ss << "\n";
  }
  ss << "cells: WER% (CER%); seed " << metadata.seed << ", config " << metadata.config_hash
     << ", " << metadata.code_version << "\n";
  return ss.str();
}

// ---------------------------------------------------------------------------

AttackConfig preset_attack(const std::string& name, double epsilon) {
  AttackConfig a;
  a.name = name;
  a.epsilon = epsilon;
  a.step_size = epsilon > 0.0 ? epsilon / 4.0 : 1e-12;
  if (name == "fgsm" || name == "FGSM") {
    a.family = AttackFamily::fgsm;
    a.n_steps = 1;
    a.step_size = epsilon > 0.0 ? epsilon : 1e-12;
    a.random_init = false;
    a.name = "FGSM";
  } else if (name == "mifgsm" || name == "MIFGSM") {
    a.family = AttackFamily::mifgsm;
    a.n_steps = 10;
    a.momentum_decay = 1.0;
    a.random_init = false;
    a.name = "MIFGSM";
  } else if (name.rfind("pgd", 0) == 0 || name.rfind("PGD", 0) == 0) {
    a.family = AttackFamily::pgd;
    const std::string digits = name.substr(3);
    if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos) {
      throw std::invalid_argument("eval.attacks: unknown attack '" + name + "'");
    }
    a.n_steps = std::stoi(digits);
    a.name = "PGD" + digits;
  } else {
    throw std::invalid_argument("eval.attacks: unknown attack '" + name +
                                "' (expected fgsm, mifgsm, pgd<N>)");
  }
  a.validate();
  return a;
}

std::vector<AttackConfig> preset_attacks(const std::vector<std::string>& names, double epsilon) {
  std::vector<AttackConfig> out;
  for (const auto& n : names) {
    if (n == "clean") continue;
    out.push_back(preset_attack(n, epsilon));
  }
  return out;
}

std::string checkpoint_model_id(const Checkpoint& ckpt) {
  return ckpt.meta.regime + "-" + ckpt.parameters.hash().substr(0, 8);
}

ErrorRates attacked_error_rates(const Model& target, const Model& source,
                                const std::vector<AudioExample>& corpus,
                                const AttackConfig* attack, const Alphabet& alphabet,
                                const MelConfig& mel, const EvalOptions& opt) {
  if (corpus.empty()) throw std::invalid_argument("evaluate: corpus is empty");
  if (target.config().n_feats != source.config().n_feats) {
    throw std::invalid_argument("evaluate: surrogate expects " +
                                std::to_string(source.config().n_feats) +
                                " feature bins but target expects " +
                                std::to_string(target.config().n_feats));
  }
  std::vector<std::string> refs, hyps;
  const std::size_t bs = std::max<std::size_t>(opt.batch_size, 1);
  for (std::size_t s = 0, b = 0; s < corpus.size(); s += bs, ++b) {
    const std::size_t e = std::min(corpus.size(), s + bs);
    FeatureBatch batch = make_batch(std::span(corpus).subspan(s, e - s), alphabet, mel);
    if (attack) {
      AttackConfig cfg = *attack;
      cfg.seed = mix_seed(attack->seed, opt.seed, b);
      const Perturbation p = generate(source, batch, cfg, opt.sinkhorn);
      batch = apply_perturbation(batch, p);
    }
    auto h = greedy_decode(target.forward(batch, Mode::eval), alphabet);
    refs.insert(refs.end(), batch.transcripts.begin(), batch.transcripts.end());
    hyps.insert(hyps.end(), h.begin(), h.end());
  }
  return error_rates(refs, hyps);
}

namespace {

EvalReport run_rows(const Checkpoint& target, const Checkpoint* surrogate,
                    const std::vector<AudioExample>& corpus,
                    const std::vector<AttackConfig>& attacks, const EvalOptions& opt) {
  const Model model = target.model();
  const Model source = surrogate ? surrogate->model() : model;
  EvalReport report;
  report.metadata = {opt.corpus_id, opt.seed, utc_timestamp(), kCodeVersion,
                     opt.config_hash.empty() ? target.meta.config_hash : opt.config_hash};
  const std::string id = opt.model_id.empty() ? checkpoint_model_id(target) : opt.model_id;
  const std::string setting = surrogate ? "transfer" : "whitebox";
  const std::string sid = surrogate ? checkpoint_model_id(*surrogate) : "";

  auto row_for = [&](const AttackConfig* a) {
    EvalRow row;
    row.model_id = id;
    row.regime = target.meta.regime;
    row.setting = setting;
    row.surrogate_id = sid;
    row.attack_name = a ? a->label() : "clean";
    row.attack_config_hash = a ? a->hash() : kCleanHash;
    row.epsilon = a ? a->epsilon : 0.0;
    row.steps = a ? a->n_steps : 0;
    try {
      const ErrorRates er = attacked_error_rates(model, source, corpus, a, target.alphabet,
                                                 target.mel, opt);
      row.cer = er.cer;
      row.wer = er.wer;
      row.n_examples = er.n_examples;
    } catch (const std::exception& e) {
      row.failed = true;
      row.error = e.what();
      row.cer = row.wer = std::nan("");
    }
    return row;
  };

  if (!surrogate) report.rows.push_back(row_for(nullptr));
  for (const auto& a : attacks) report.rows.push_back(row_for(&a));
  return report;
}

}  // namespace

EvalReport evaluate_whitebox(const Checkpoint& ckpt, const std::vector<AudioExample>& corpus,
                             const std::vector<AttackConfig>& attacks, const EvalOptions& opt) {
  return run_rows(ckpt, nullptr, corpus, attacks, opt);
}

EvalReport evaluate_transfer(const Checkpoint& target, const Checkpoint& surrogate,
                             const std::vector<AudioExample>& corpus,
                             const std::vector<AttackConfig>& attacks, const EvalOptions& opt) {
  if (target.model_config.n_feats != surrogate.model_config.n_feats ||
      target.mel.mel_bins != surrogate.mel.mel_bins ||
      target.mel.hop_length != surrogate.mel.hop_length ||
      target.mel.win_length != surrogate.mel.win_length ||
      target.mel.sample_rate != surrogate.mel.sample_rate ||
      target.mel.normalize != surrogate.mel.normalize) {
    throw std::invalid_argument(
        "evaluate_transfer: surrogate and target feature pipelines are incompatible");
  }
  return run_rows(target, &surrogate, corpus, attacks, opt);
}

AblationResult ablation_unsup(const std::vector<AudioExample>& train_corpus,
                              const std::vector<AudioExample>& eval_corpus,
                              const TrainConfig& base, const ModelConfig& model_config,
                              const TrainOptions& train_options,
                              const std::vector<AttackConfig>& attacks, const EvalOptions& opt) {
  AblationResult out;
  out.ot_config = base;
  out.ot_config.regime = Regime::mixpgd;
  out.ot_config.unsup_kind = UnsupKind::ot;
  out.kl_config = out.ot_config;
  out.kl_config.unsup_kind = UnsupKind::kl;

  TrainOptions to = train_options;
  to.out_dir.reset();
  out.ot_checkpoint = train(out.ot_config, train_corpus, model_config, to).checkpoint;
  out.kl_checkpoint = train(out.kl_config, train_corpus, model_config, to).checkpoint;

  EvalOptions o = opt;
  o.model_id = "mixpgd-ot";
  out.report = evaluate_whitebox(out.ot_checkpoint, eval_corpus, attacks, o);
  o.model_id = "mixpgd-kl";
  out.report.merge(evaluate_whitebox(out.kl_checkpoint, eval_corpus, attacks, o));
  return out;
}

}  // namespace mixpgd
