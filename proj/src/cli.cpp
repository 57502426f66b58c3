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

#include "mixpgd/cli.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mixpgd/attacks.hpp"
#include "mixpgd/checkpoint.hpp"
#include "mixpgd/config.hpp"
#include "mixpgd/data.hpp"
#include "mixpgd/evaluation.hpp"
#include "mixpgd/kernels.hpp"
#include "mixpgd/training.hpp"
#include "mixpgd/util.hpp"

namespace fs = std::filesystem;

namespace mixpgd {

namespace {

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct CommonOptions {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  bool force = false;
};

RunConfig load_config(const CommonOptions& o) {
  return o.config.empty() ? parse_run_config("", o.sets) : load_run_config(o.config, o.sets);
}

// Run directories are append-only: an existing non-empty directory needs --force.
fs::path prepare_run_dir(const std::string& dir, bool force) {
  const fs::path p(dir);
  if (fs::exists(p) && !fs::is_empty(p) && !force) {
    throw UsageError("run directory " + dir + " already exists; pass --force to reuse it");
  }
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << text;
}

void write_effective_config(const fs::path& dir, const RunConfig& cfg) {
  write_text(dir / "config.json", cfg.to_json(2) + "\n");
}

std::vector<AudioExample> featurized(std::vector<AudioExample> ex, const MelConfig& mel) {
  featurize_corpus(ex, mel);
  return ex;
}

std::vector<AudioExample> manifest_corpus(const std::string& path, const MelConfig& mel,
                                          std::ostream& err) {
  if (!fs::exists(path)) throw UsageError("manifest not found: " + path);
  ManifestResult r = load_manifest(path, Alphabet(), mel);
  for (const auto& w : r.warnings) err << "warning: " << w << "\n";
  if (r.examples.empty()) throw UsageError("manifest " + path + " has no usable rows");
  return featurized(std::move(r.examples), mel);
}

std::vector<AudioExample> train_corpus(const RunConfig& cfg, std::ostream& err) {
  if (!cfg.data.train_manifest.empty()) {
    return manifest_corpus(cfg.data.train_manifest, cfg.data.mel, err);
  }
  return featurized(synth_toy_corpus(cfg.data.toy_seed, cfg.data.toy_n_train, cfg.data.mel),
                    cfg.data.mel);
}

std::vector<AudioExample> eval_corpus(const RunConfig& cfg, const MelConfig& mel,
                                      const std::string& override_path, std::ostream& err) {
  const std::string path = override_path.empty() ? cfg.data.eval_manifest : override_path;
  if (!path.empty()) return manifest_corpus(path, mel, err);
  return featurized(synth_toy_corpus(cfg.data.toy_eval_seed, cfg.data.toy_n_eval, mel), mel);
}

std::string corpus_id(const RunConfig& cfg, const std::string& override_path) {
  const std::string path = override_path.empty() ? cfg.data.eval_manifest : override_path;
  if (!path.empty()) return "manifest:" + path;
  return "toy:" + std::to_string(cfg.data.toy_eval_seed) + ":" +
         std::to_string(cfg.data.toy_n_eval);
}

Checkpoint load_existing(const std::string& path) {
  if (path.empty()) throw UsageError("--checkpoint is required");
  if (!fs::exists(path)) throw UsageError("checkpoint not found: " + path);
  return load_checkpoint(path);
}

TrainOptions train_options(const RunConfig& cfg, std::ostream& err) {
  TrainOptions o;
  o.mel = cfg.data.mel;
  o.sinkhorn = cfg.sinkhorn;
  o.config_hash = cfg.hash();
  o.progress = [&err](const std::string& s) { err << s << "\n"; };
  return o;
}

EvalOptions eval_options(const RunConfig& cfg, const std::string& corpus) {
  EvalOptions o;
  o.batch_size = cfg.eval.batch_size;
  o.seed = cfg.eval.seed;
  o.sinkhorn = cfg.sinkhorn;
  o.corpus_id = corpus;
  o.config_hash = cfg.hash();
  return o;
}

void write_npy(const fs::path& p, const Tensor& t) {
  std::string shape = "(";
  for (std::size_t d : t.shape()) shape += std::to_string(d) + ", ";
  if (t.rank() > 1) shape.erase(shape.size() - 2);
  else shape.erase(shape.size() - 1);
  shape += ")";
  std::string header = "{'descr': '<f8', 'fortran_order': False, 'shape': " + shape + ", }";
  const std::size_t total = 10 + header.size() + 1;
  header.append((64 - total % 64) % 64, ' ');
  header += '\n';
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f.write("\x93NUMPY\x01\x00", 8);
  const auto len = static_cast<std::uint16_t>(header.size());
  f.put(static_cast<char>(len & 0xff));
  f.put(static_cast<char>(len >> 8));
  f.write(header.data(), static_cast<std::streamsize>(header.size()));
  f.write(reinterpret_cast<const char*>(t.data()),
          static_cast<std::streamsize>(t.size() * sizeof(double)));
}

Tensor example_slice(const Tensor& batch_tensor, std::size_t i, std::size_t frames) {
  const std::size_t F = batch_tensor.dim(1), T = batch_tensor.dim(2);
  Tensor out({F, frames});
  for (std::size_t m = 0; m < F; ++m) {
    for (std::size_t t = 0; t < frames; ++t) out(m, t) = batch_tensor[(i * F + m) * T + t];
  }
  return out;
}

// ---------------------------------------------------------------------------

struct TrainedModel {
  std::string id;
  Checkpoint checkpoint;
};

TrainedModel train_regime(const RunConfig& cfg, Regime regime, const std::vector<AudioExample>& data,
                          const fs::path& dir, std::ostream& err) {
  TrainConfig tc = cfg.train;
  tc.regime = regime;
  TrainOptions to = train_options(cfg, err);
  to.out_dir = dir / to_string(regime);
  err << "training " << to_string(regime) << "\n";
  TrainResult r = train(tc, data, cfg.model, to);
  return {to_string(regime), std::move(r.checkpoint)};
}

int cmd_train(const CommonOptions& o, const std::string& regime, std::ostream& out,
              std::ostream& err) {
  std::vector<std::string> sets = o.sets;
  if (!regime.empty()) sets.push_back("train.regime=" + regime);
  if (!o.out.empty()) sets.push_back("output.dir=" + o.out);
  CommonOptions oo = o;
  oo.sets = sets;
  const RunConfig cfg = load_config(oo);
  const fs::path dir = prepare_run_dir(cfg.output.dir, o.force);
  write_effective_config(dir, cfg);

  const auto data = train_corpus(cfg, err);
  TrainOptions to = train_options(cfg, err);
  to.out_dir = dir;
  std::optional<std::vector<AudioExample>> dev;
  if (!cfg.data.dev_manifest.empty()) {
    dev = manifest_corpus(cfg.data.dev_manifest, cfg.data.mel, err);
    to.dev = &*dev;
  }
  const TrainResult r = train(cfg.train, data, cfg.model, to);

  nlohmann::json summary{{"regime", to_string(cfg.train.regime)},
                         {"epochs_run", r.log.summary.epochs_run},
                         {"final_param_hash", r.log.summary.final_param_hash},
                         {"checkpoint", r.log.summary.checkpoint_path},
                         {"epoch_mean_loss", r.log.summary.epoch_mean_loss},
                         {"config_hash", cfg.hash()},
                         {"seed", cfg.train.seed},
                         {"code_version", kCodeVersion}};
  write_text(dir / "summary.json", summary.dump(2) + "\n");
  out << "trained " << to_string(cfg.train.regime) << " for " << r.log.summary.epochs_run
      << " epochs\nfinal_param_hash " << r.log.summary.final_param_hash << "\nconfig_hash "
      << cfg.hash() << "\nseed " << cfg.train.seed << "\nrun_dir " << dir.string() << "\n";
  return kExitOk;
}

int cmd_attack(const CommonOptions& o, const std::string& ckpt_path, const std::string& corpus,
               const std::string& attack_name, std::size_t limit, std::ostream& out,
               std::ostream& err) {
  const RunConfig cfg = load_config(o);
  const Checkpoint ckpt = load_existing(ckpt_path);
  AttackConfig attack = attack_name.empty() ? cfg.attack
                                            : preset_attack(attack_name, cfg.eval.epsilon);
  attack.validate();
  const fs::path dir = prepare_run_dir(o.out.empty() ? cfg.output.dir : o.out, o.force);

  auto examples = eval_corpus(cfg, ckpt.mel, corpus, err);
  if (limit > 0 && examples.size() > limit) examples.resize(limit);
  const Model model = ckpt.model();
  nlohmann::json items = nlohmann::json::array();
  double linf = 0.0;
  const std::size_t bs = cfg.eval.batch_size;
  for (std::size_t s = 0, b = 0; s < examples.size(); s += bs, ++b) {
    const std::size_t e = std::min(examples.size(), s + bs);
    const FeatureBatch batch =
        make_batch(std::span(examples).subspan(s, e - s), ckpt.alphabet, ckpt.mel);
    AttackConfig a = attack;
    a.seed = mix_seed(attack.seed, cfg.eval.seed, b);
    const Perturbation p = generate(model, batch, a, cfg.sinkhorn);
    const BudgetCheck bc = check_budget(batch, p.delta);
    linf = std::max(linf, bc.linf);
    const FeatureBatch adv = apply_perturbation(batch, p);
    const auto clean_hyp = greedy_decode(model.forward(batch, Mode::eval), ckpt.alphabet);
    const auto adv_hyp = greedy_decode(model.forward(adv, Mode::eval), ckpt.alphabet);
    for (std::size_t i = 0; i < batch.batch_size(); ++i) {
      const std::size_t frames = batch.feature_lengths[i];
      write_npy(dir / (batch.ids[i] + ".clean.npy"), example_slice(batch.features, i, frames));
      write_npy(dir / (batch.ids[i] + ".adv.npy"), example_slice(adv.features, i, frames));
      items.push_back({{"id", batch.ids[i]},
                       {"transcript", batch.transcripts[i]},
                       {"clean_hypothesis", clean_hyp[i]},
                       {"adv_hypothesis", adv_hyp[i]}});
    }
  }
  nlohmann::json meta{{"attack", nlohmann::json::parse(attack.canonical_json())},
                      {"attack_name", attack.label()},
                      {"attack_config_hash", attack.hash()},
                      {"checkpoint", ckpt_path},
                      {"model_id", checkpoint_model_id(ckpt)},
                      {"linf", linf},
                      {"examples", items},
                      {"config_hash", cfg.hash()},
                      {"seed", cfg.eval.seed},
                      {"code_version", kCodeVersion}};
  write_text(dir / "attack.json", meta.dump(2) + "\n");
  out << "wrote " << items.size() << " perturbed examples to " << dir.string() << " (max |delta| "
      << linf << ", attack " << attack.label() << ", hash " << attack.hash() << ")\n";
  return kExitOk;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int cmd_evaluate(const CommonOptions& o, const std::vector<std::string>& ckpts,
                 const std::string& corpus, const std::optional<std::string>& attacks_arg,
                 const std::string& surrogate_path, std::ostream& out, std::ostream& err) {
  RunConfig cfg = load_config(o);
  std::vector<std::string> names = cfg.eval.attacks;
  double epsilon = cfg.eval.epsilon;
  if (attacks_arg) {
    if (!attacks_arg->empty() && fs::is_regular_file(*attacks_arg)) {
      const RunConfig ac = load_run_config(*attacks_arg);
      names = ac.eval.attacks;
      epsilon = ac.eval.epsilon;
    } else {
      names = split_list(*attacks_arg);
    }
  }
  const auto attacks = preset_attacks(names, epsilon);
  if (ckpts.empty()) throw UsageError("--checkpoint is required");
  std::vector<Checkpoint> models;
  for (const auto& p : ckpts) models.push_back(load_existing(p));
  std::optional<Checkpoint> surrogate;
  if (!surrogate_path.empty()) surrogate = load_existing(surrogate_path);

  const fs::path dir = prepare_run_dir(o.out.empty() ? cfg.output.dir : o.out, o.force);
  write_effective_config(dir, cfg);
  const auto examples = eval_corpus(cfg, models.front().mel, corpus, err);
  const EvalOptions eo = eval_options(cfg, corpus_id(cfg, corpus));

  EvalReport report;
  report.metadata = {eo.corpus_id, eo.seed, "", kCodeVersion, eo.config_hash};
  for (std::size_t k = 0; k < models.size(); ++k) {
    EvalReport r = surrogate ? evaluate_transfer(models[k], *surrogate, examples, attacks, eo)
                             : evaluate_whitebox(models[k], examples, attacks, eo);
    if (k == 0) report.metadata = r.metadata;
    report.merge(r);
  }
  report.write(dir);
  out << report.format_table();
  bool any_failed = false;
  for (const auto& r : report.rows) {
    if (r.failed) {
      err << "row failed: " << r.model_id << " / " << r.attack_name << ": " << r.error << "\n";
      any_failed = true;
    }
  }
  return any_failed ? kExitRuntime : kExitOk;
}

// Published full-scale numbers, printed next to the desk-scale measurements.
struct ReferenceCell {
  const char* condition;
  const char* model;
  double cer;  // negative when not reported
  double wer;
};

constexpr ReferenceCell kReferenceTable1[] = {
    {"clean", "standard", 11.3370, 28.78},   {"clean", "fgsm_adv", 10.8772, 33.70},
    {"clean", "pgd_adv", 10.6461, 33.16},    {"clean", "feature_scattering", 9.6515, 30.01},
    {"clean", "mixpgd", 9.2731, 29.02},      {"FGSM", "standard", 15.4303, 48.70},
    {"FGSM", "fgsm_adv", 13.1881, 40.23},    {"FGSM", "pgd_adv", 12.7255, 39.20},
    {"FGSM", "feature_scattering", 12.7788, 39.08}, {"FGSM", "mixpgd", 11.2406, 35.07},
    {"MIFGSM", "standard", 17.1673, 57.29},  {"MIFGSM", "fgsm_adv", 13.1366, 39.75},
    {"MIFGSM", "pgd_adv", 12.8168, 39.54},   {"MIFGSM", "feature_scattering", 13.4278, 41.02},
    {"MIFGSM", "mixpgd", 11.2915, 35.15},    {"PGD20", "standard", 21.8359, 69.69},
    {"PGD20", "fgsm_adv", 13.1991, 40.29},   {"PGD20", "pgd_adv", 12.8599, 39.59},
    {"PGD20", "feature_scattering", 14.2479, 45.34}, {"PGD20", "mixpgd", 11.3015, 35.29},
    {"PGD100", "standard", 24.2174, 75.61},  {"PGD100", "fgsm_adv", 13.1569, 40.45},
    {"PGD100", "pgd_adv", 12.8633, 41.02},   {"PGD100", "feature_scattering", 14.5591, 47.60},
    {"PGD100", "mixpgd", 11.4232, 35.39},
};

constexpr ReferenceCell kReferenceTable2[] = {
    {"FGSM", "standard", -1, 38.93},   {"MIFGSM", "standard", -1, 41.44},
    {"PGD50", "standard", -1, 46.43},  {"FGSM", "fgsm_adv", -1, 33.93},
    {"MIFGSM", "fgsm_adv", -1, 33.95}, {"PGD50", "fgsm_adv", -1, 34.05},
    {"FGSM", "pgd_adv", -1, 33.25},    {"MIFGSM", "pgd_adv", -1, 33.28},
    {"PGD50", "pgd_adv", -1, 33.32},   {"FGSM", "feature_scattering", -1, 57.50},
    {"MIFGSM", "feature_scattering", -1, 58.16}, {"PGD50", "feature_scattering", -1, 58.71},
    {"FGSM", "mixpgd", -1, 29.26},     {"MIFGSM", "mixpgd", -1, 29.36},
    {"PGD50", "mixpgd", -1, 29.38},
};

constexpr ReferenceCell kReferenceTable3[] = {
    {"FGSM", "mixpgd-kl", -1, 39.59},  {"MIFGSM", "mixpgd-kl", -1, 39.76},
    {"PGD20", "mixpgd-kl", -1, 40.13}, {"PGD100", "mixpgd-kl", -1, 40.35},
    {"FGSM", "mixpgd-ot", -1, 35.07},  {"MIFGSM", "mixpgd-ot", -1, 35.15},
    {"PGD20", "mixpgd-ot", -1, 35.29}, {"PGD100", "mixpgd-ot", -1, 35.39},
};

template <std::size_t N>
std::string format_reference(const ReferenceCell (&cells)[N], const std::string& title) {
  EvalReport ref;
  for (const auto& c : cells) {
    EvalRow r;
    r.model_id = c.model;
    r.attack_name = c.condition;
    r.attack_config_hash = std::string(c.model) + "/" + c.condition;
    r.wer = c.wer;
    r.cer = c.cer < 0 ? std::nan("") : c.cer;
    ref.rows.push_back(r);
  }
  std::string table = ref.format_table();
  table = table.substr(0, table.rfind("cells:"));
  return "== " + title + " ==\n" + table +
         "cells: WER% (CER%, nan = not reported); full-scale corpus, eps 0.00004\n";
}

int cmd_repro(const CommonOptions& o, int table, std::ostream& out, std::ostream& err) {
  if (table < 1 || table > 3) throw UsageError("--table must be 1, 2 or 3");
  CommonOptions oo = o;
  if (!o.out.empty()) oo.sets.push_back("output.dir=" + o.out);
  const RunConfig cfg = load_config(oo);
  const fs::path dir = prepare_run_dir(cfg.output.dir, o.force);
  write_effective_config(dir, cfg);
  const auto data = train_corpus(cfg, err);
  const auto examples = eval_corpus(cfg, cfg.data.mel, "", err);
  EvalOptions eo = eval_options(cfg, corpus_id(cfg, ""));

  const std::vector<Regime> regimes{Regime::standard, Regime::fgsm_adv, Regime::pgd_adv,
                                    Regime::feature_scattering, Regime::mixpgd};
  EvalReport report;
  std::string reference;
  if (table == 1) {
    const auto attacks = preset_attacks(cfg.eval.attacks, cfg.eval.epsilon);
    for (Regime r : regimes) {
      TrainedModel m = train_regime(cfg, r, data, dir, err);
      eo.model_id = m.id;
      EvalReport rep = evaluate_whitebox(m.checkpoint, examples, attacks, eo);
      if (report.rows.empty()) report.metadata = rep.metadata;
      report.merge(rep);
    }
    reference = format_reference(kReferenceTable1, "published reference (not desk-reproducible)");
  } else if (table == 2) {
    const auto attacks = preset_attacks(cfg.eval.transfer_attacks, cfg.eval.epsilon);
    Checkpoint surrogate;
    if (!cfg.eval.surrogate.checkpoint.empty()) {
      surrogate = load_existing(cfg.eval.surrogate.checkpoint);
    } else {
      TrainConfig sc = cfg.train;
      sc.regime = parse_regime(cfg.eval.surrogate.regime);
      sc.seed = cfg.train.seed + cfg.eval.surrogate.seed_offset;
      TrainOptions to = train_options(cfg, err);
      to.out_dir = dir / "surrogate";
      err << "training surrogate\n";
      surrogate = train(sc, data, surrogate_model_config(cfg), to).checkpoint;
    }
    for (Regime r : regimes) {
      TrainedModel m = train_regime(cfg, r, data, dir, err);
      eo.model_id = m.id;
      EvalReport rep = evaluate_transfer(m.checkpoint, surrogate, examples, attacks, eo);
      if (report.rows.empty()) report.metadata = rep.metadata;
      report.merge(rep);
    }
    reference = format_reference(kReferenceTable2, "published reference (not desk-reproducible)");
  } else {
    const auto attacks = preset_attacks(cfg.eval.attacks, cfg.eval.epsilon);
    TrainOptions to = train_options(cfg, err);
    AblationResult ab = ablation_unsup(data, examples, cfg.train, cfg.model, to, attacks, eo);
    save_checkpoint(ab.ot_checkpoint, dir / "mixpgd-ot" / "last.ckpt");
    save_checkpoint(ab.kl_checkpoint, dir / "mixpgd-kl" / "last.ckpt");
    report = ab.report;
    reference = format_reference(kReferenceTable3, "published reference (not desk-reproducible)");
  }
  report.write(dir, "table" + std::to_string(table));
  out << "== measured at desk scale (table " << table << ") ==\n"
      << report.format_table() << "\n"
      << reference;
  return kExitOk;
}

int cmd_synth(const CommonOptions& o, std::uint64_t seed, std::size_t n, std::ostream& out) {
  if (n < 1) throw UsageError("--n must be >= 1");
  const RunConfig cfg = load_config(o);
  if (o.out.empty()) throw UsageError("--out is required");
  const fs::path dir = prepare_run_dir(o.out, o.force);
  const auto corpus = synth_toy_corpus(seed, n, cfg.data.mel);
  write_corpus(dir, corpus, cfg.data.mel.sample_rate);
  nlohmann::json meta{{"seed", seed},
                      {"n", n},
                      {"sample_rate", cfg.data.mel.sample_rate},
                      {"config_hash", cfg.hash()},
                      {"code_version", kCodeVersion}};
  write_text(dir / "corpus.json", meta.dump(2) + "\n");
  out << "wrote " << n << " examples to " << (dir / "manifest.csv").string() << "\n";
  return kExitOk;
}

void add_common(CLI::App* cmd, CommonOptions& o, bool with_out = true) {
  cmd->add_option("--config", o.config, "Run config (YAML or JSON)");
  cmd->add_option("--set", o.sets, "Override a config key: section.key=value")->take_all();
  if (with_out) cmd->add_option("--out", o.out, "Output directory");
  cmd->add_flag("--force", o.force, "Reuse an existing output directory");
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Adversarial training and robustness evaluation for CTC speech recognizers",
               "mixpgd"};
  app.require_subcommand(1);

  CommonOptions o;
  std::string regime, checkpoint, corpus, attack_name, surrogate;
  std::vector<std::string> checkpoints;
  std::string attacks_list;
  std::size_t limit = 0, n = 10;
  std::uint64_t seed = 7;
  int table = 0;

  auto* train_cmd = app.add_subcommand("train", "Train a recognizer under one regime");
  add_common(train_cmd, o);
  train_cmd->add_option("--regime", regime,
                        "standard | fgsm_adv | pgd_adv | feature_scattering | mixpgd");

  auto* attack_cmd = app.add_subcommand("attack", "Generate and save perturbed features");
  add_common(attack_cmd, o);
  attack_cmd->add_option("--checkpoint", checkpoint)->required();
  attack_cmd->add_option("--corpus", corpus, "Manifest CSV (default: config eval corpus)");
  attack_cmd->add_option("--attack", attack_name,
                         "Preset (fgsm, mifgsm, pgd<N>); default: config attack block");
  attack_cmd->add_option("--limit", limit, "Maximum number of examples");

  auto* eval_cmd = app.add_subcommand("evaluate", "CER/WER under white-box or transfer attacks");
  add_common(eval_cmd, o);
  eval_cmd->add_option("--checkpoint", checkpoints, "Checkpoint(s) to evaluate")->required();
  eval_cmd->add_option("--corpus", corpus, "Manifest CSV (default: config eval corpus)");
  auto* attacks_opt = eval_cmd->add_option(
      "--attacks", attacks_list, "Config file with eval.attacks, or a comma list; '' = clean only");
  eval_cmd->add_option("--surrogate", surrogate, "Surrogate checkpoint for transfer attacks");

  auto* repro_cmd = app.add_subcommand("repro", "Desk-scale pipeline for one results table");
  add_common(repro_cmd, o);
  repro_cmd->add_option("--table", table, "1, 2 or 3")->required();

  auto* synth_cmd = app.add_subcommand("synth-data", "Write the synthetic tone corpus");
  add_common(synth_cmd, o);
  synth_cmd->add_option("--seed", seed);
  synth_cmd->add_option("--n", n);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train_cmd) return cmd_train(o, regime, out, err);
    if (*attack_cmd) return cmd_attack(o, checkpoint, corpus, attack_name, limit, out, err);
    if (*eval_cmd) {
      std::optional<std::string> attacks;
      if (attacks_opt->count() > 0) attacks = attacks_list;
      return cmd_evaluate(o, checkpoints, corpus, attacks, surrogate, out, err);
    }
    if (*repro_cmd) return cmd_repro(o, table, out, err);
    if (*synth_cmd) return cmd_synth(o, seed, n, out);
  } catch (const TrainingDiverged& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace mixpgd
