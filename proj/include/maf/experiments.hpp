// Copyright 2026 The MAF Authors.
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

// Experiment runner behind the command-line tool: config resolution,
// train / evaluate / ablate / sweep / report. Every metric row carries the
// hash of the fully resolved run config, its seed and the artifact version.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "maf/checkpoint.hpp"
#include "maf/data.hpp"
#include "maf/evaluate.hpp"
#include "maf/metrics.hpp"
#include "maf/model.hpp"
#include "maf/synthetic.hpp"
#include "maf/train.hpp"

namespace maf {

inline constexpr const char* kArtifactVersion = "maf-1.0.0";

inline constexpr const char* kFusionOnlyNote =
    "host is a from-scratch desk-scale transformer; differences isolate the fusion mechanism and are not "
    "comparable to pretrained-model scores. METEOR and BERTScore are not computed (-).";

struct ExperimentConfig {
  std::optional<std::string> dataset;  // dataset file; the synthetic task otherwise
  SyntheticSpec synthetic;             // num_instances is the training-set size
  std::size_t synthetic_test = 100;
  std::uint64_t split_seed = 0;
  ModelConfig model;
  TrainHyper train;
  std::vector<Variant> variants = {Variant::kMaf};
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::string out = "runs";
  std::size_t decode_max_len = 8;
  std::size_t threads = 1;

  // Every check that can fail before any model is built.
  void validate() const {
    if (variants.empty()) throw ConfigError("config: at least one variant is required");
    if (seeds.empty()) throw ConfigError("config: at least one seed is required");
    if (decode_max_len == 0) throw ConfigError("config: decode_max_len must be positive");
    if (threads == 0) throw ConfigError("config: threads must be positive");
    if (out.empty()) throw ConfigError("config: output directory must be set");
    if (!(train.lr >= 0.0) || train.batch_size == 0) throw ConfigError("config: lr must be >= 0 and batch_size > 0");
    model.validate();
    if (dataset) {
      if (!std::filesystem::exists(*dataset)) throw ConfigError("config: dataset '" + *dataset + "' does not exist");
    } else {
      synthetic.validate();
      if (synthetic.num_instances == 0 || synthetic_test == 0) {
        throw ConfigError("config: synthetic train and test sizes must be positive");
      }
      if (synthetic.audio_dim != model.audio_input_dim || synthetic.video_dim != model.video_input_dim) {
        throw ConfigError("config: synthetic feature widths must match the model's input dims");
      }
    }
  }
};

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["dataset"] = c.dataset ? nlohmann::json(*c.dataset) : nlohmann::json(nullptr);
  j["synthetic"] = to_json(c.synthetic);
  j["synthetic_test"] = c.synthetic_test;
  j["split_seed"] = c.split_seed;
  j["model"] = to_json(c.model);
  j["train"] = {{"lr", c.train.lr},
                {"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"grad_clip", c.train.grad_clip}};
  auto vs = nlohmann::json::array();
  for (Variant v : c.variants) vs.push_back(variant_name(v));
  j["variants"] = vs;
  j["seeds"] = c.seeds;
  j["out"] = c.out;
  j["decode_max_len"] = c.decode_max_len;
  j["threads"] = c.threads;
  return j;
}

inline ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  ExperimentConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "dataset") {
        if (!value.is_null()) c.dataset = value.get<std::string>();
      } else if (key == "synthetic") {
        update_from_json(c.synthetic, value);
      } else if (key == "synthetic_test") {
        c.synthetic_test = value.get<std::size_t>();
      } else if (key == "split_seed") {
        c.split_seed = value.get<std::uint64_t>();
      } else if (key == "model") {
        update_from_json(c.model, value);
      } else if (key == "train") {
        for (const auto& [k, v] : value.items()) {
          if (k == "lr") c.train.lr = v.get<double>();
          else if (k == "epochs") c.train.epochs = v.get<std::size_t>();
          else if (k == "batch_size") c.train.batch_size = v.get<std::size_t>();
          else if (k == "grad_clip") c.train.grad_clip = v.get<double>();
          else throw ConfigError("config: unknown train key '" + k + "'");
        }
      } else if (key == "variants") {
        c.variants.clear();
        for (const auto& v : value) c.variants.push_back(parse_variant(v.get<std::string>()));
      } else if (key == "seeds") {
        c.seeds = value.get<std::vector<std::uint64_t>>();
      } else if (key == "out") {
        c.out = value.get<std::string>();
      } else if (key == "decode_max_len") {
        c.decode_max_len = value.get<std::size_t>();
      } else if (key == "threads") {
        c.threads = value.get<std::size_t>();
      } else {
        throw ConfigError("config: unknown key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

inline ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config: " + path.string() + ": " + e.what());
  }
  return parse_experiment_config(j);
}

// FNV-1a over the canonical (sorted-key) JSON dump, as 16 hex digits.
inline std::string config_hash(const nlohmann::json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// The config of one (variant, seed, fusion layer) run, with run-list and
// output fields removed so equal hashes mean equal computations.
inline nlohmann::json run_config(const ExperimentConfig& c, Variant v, std::uint64_t seed, std::size_t layer) {
  ExperimentConfig r = c;
  r.model.variant = v;
  r.model.seed = seed;
  r.model.fusion_layer_index = layer;
  nlohmann::json j = to_json(r);
  j.erase("variants");
  j.erase("seeds");
  j.erase("out");
  j.erase("threads");
  j["version"] = kArtifactVersion;
  return j;
}

struct Splits {
  std::vector<DialogueInstance> train, validation, test;
};

inline Splits load_splits(const ExperimentConfig& c) {
  Splits s;
  if (c.dataset) {
    const auto corpus = load_and_validate(std::filesystem::path(*c.dataset));
    const auto ids = split(corpus, c.split_seed);
    s.train = select(corpus, ids.train);
    s.validation = select(corpus, ids.validation);
    s.test = select(corpus, ids.test);
  } else {
    SyntheticSpec spec = c.synthetic;
    spec.num_instances = c.synthetic.num_instances + c.synthetic_test;
    auto corpus = generate(spec);
    s.test.assign(corpus.begin() + static_cast<std::ptrdiff_t>(c.synthetic.num_instances), corpus.end());
    corpus.resize(c.synthetic.num_instances);
    s.train = std::move(corpus);
  }
  return s;
}

struct RunOutcome {
  MetricRow row;
  TrainedModel trained;
  Evaluation evaluation;
};

inline RunOutcome run_once(const ExperimentConfig& c, const Splits& splits, Variant v, std::uint64_t seed,
                           std::size_t layer) {
  ModelConfig mc = c.model;
  mc.variant = v;
  mc.seed = seed;
  mc.fusion_layer_index = layer;
  TrainedModel trained = train_model(splits.train, mc, c.train);
  Evaluation ev = evaluate(trained.model, trained.vocab, splits.test, c.decode_max_len);
  MetricRow row;
  row.variant = variant_name(v);
  row.fusion_layer = layer;
  row.seed = std::to_string(seed);
  row.config_hash = config_hash(run_config(c, v, seed, layer));
  row.version = kArtifactVersion;
  row.values = ev.metrics;
  return {std::move(row), std::move(trained), std::move(ev)};
}

// Runs jobs on up to `threads` workers; results keep job order.
template <typename T>
std::vector<T> run_parallel(std::size_t count, std::size_t threads, const std::function<T(std::size_t)>& job) {
  std::vector<std::optional<T>> slots(count);
  std::vector<std::exception_ptr> errors(count);
  auto work = [&](std::size_t worker) {
    for (std::size_t i = worker; i < count; i += threads) {
      try {
        slots[i].emplace(job(i));
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<T> out;
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

// Mean and sample standard deviation per (variant, fusion layer) over the
// run rows given, in first-seen order.
inline std::vector<MetricRow> aggregate_rows(const std::vector<MetricRow>& runs,
                                             const std::function<std::string(const MetricRow&)>& hash_of = {}) {
  std::vector<std::pair<std::string, std::size_t>> keys;
  std::map<std::pair<std::string, std::size_t>, std::vector<const MetricRow*>> groups;
  for (const auto& r : runs) {
    auto key = std::make_pair(r.variant, r.fusion_layer);
    if (!groups.count(key)) keys.push_back(key);
    groups[key].push_back(&r);
  }
  std::vector<MetricRow> out;
  for (const auto& key : keys) {
    const auto& g = groups[key];
    const double n = static_cast<double>(g.size());
    auto stat = [&](auto get) {
      std::optional<double> m, sd;
      double s = 0.0;
      for (const MetricRow* r : g) {
        auto v = get(r->values);
        if (!v) return std::make_pair(m, sd);
        s += *v;
      }
      m = s / n;
      double ss = 0.0;
      for (const MetricRow* r : g) ss += (*get(r->values) - *m) * (*get(r->values) - *m);
      sd = g.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
      return std::make_pair(m, sd);
    };
    MetricRow row;
    row.variant = key.first;
    row.fusion_layer = key.second;
    row.seed = "mean";
    row.runs = g.size();
    row.version = g.front()->version;
    row.config_hash = hash_of ? hash_of(*g.front()) : g.front()->config_hash;
    MetricValues m, sd;
    auto fill = [&](double MetricValues::*field) {
      auto [a, b] = stat([field](const MetricValues& v) -> std::optional<double> { return v.*field; });
      m.*field = a.value_or(0);
      sd.*field = b.value_or(0);
    };
    for (auto f : {&MetricValues::r1, &MetricValues::r2, &MetricValues::rl, &MetricValues::b1, &MetricValues::b2,
                   &MetricValues::b3, &MetricValues::b4, &MetricValues::source_acc, &MetricValues::target_acc}) {
      fill(f);
    }
    for (auto f : {&MetricValues::action_acc, &MetricValues::exact_match}) {
      auto [a, b] = stat([f](const MetricValues& v) { return v.*f; });
      m.*f = a;
      sd.*f = b;
    }
    row.values = m;
    row.stddev = sd;
    out.push_back(std::move(row));
  }
  return out;
}

namespace experiments_detail {

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string format_loss(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace experiments_detail

// ---------------------------------------------------------------------------
// Commands.

struct TrainCommandResult {
  TrainedModel trained;
  std::filesystem::path checkpoint;
  std::filesystem::path loss_log;
};

// Trains the first configured variant with the first seed. Writes
// checkpoint.json and loss.tsv (step, batch loss) under `out`.
inline TrainCommandResult cmd_train(const ExperimentConfig& c) {
  c.validate();
  const Splits splits = load_splits(c);
  ModelConfig mc = c.model;
  mc.variant = c.variants.front();
  mc.seed = c.seeds.front();
  TrainedModel trained = train_model(splits.train, mc, c.train);
  const std::filesystem::path dir(c.out);
  std::filesystem::create_directories(dir);
  std::string log = "step\tloss\n";
  for (std::size_t i = 0; i < trained.history.step_losses.size(); ++i) {
    log += std::to_string(i) + "\t" + experiments_detail::format_loss(trained.history.step_losses[i]) + "\n";
  }
  experiments_detail::write_file(dir / "loss.tsv", log);
  save_checkpoint(dir / "checkpoint.json", trained.model, trained.vocab);
  return {std::move(trained), dir / "checkpoint.json", dir / "loss.tsv"};
}

// Scores a checkpoint on the configured test split; writes
// evaluate.metrics.csv and evaluate.txt under `out`.
inline MetricReport cmd_evaluate(const ExperimentConfig& c, const std::filesystem::path& checkpoint) {
  c.validate();
  const Splits splits = load_splits(c);
  auto loaded = load_checkpoint(checkpoint);
  const ModelConfig& mc = loaded.model.config();
  Evaluation ev = evaluate(loaded.model, loaded.vocab, splits.test, c.decode_max_len);
  ExperimentConfig resolved = c;
  resolved.model = mc;
  resolved.model.vocab_size = c.model.vocab_size;
  MetricRow row;
  row.variant = variant_name(mc.variant);
  row.fusion_layer = mc.fusion_layer_index;
  row.seed = std::to_string(mc.seed);
  row.config_hash = config_hash(run_config(resolved, mc.variant, mc.seed, mc.fusion_layer_index));
  row.version = kArtifactVersion;
  row.values = ev.metrics;
  MetricReport report{"Evaluation", {kFusionOnlyNote}, {row}};
  experiments_detail::write_file(std::filesystem::path(c.out) / "evaluate.metrics.csv", render_csv(report));
  experiments_detail::write_file(std::filesystem::path(c.out) / "evaluate.txt", render_text(report));
  return report;
}

namespace experiments_detail {

inline MetricReport run_grid(const ExperimentConfig& c, const std::vector<std::pair<Variant, std::size_t>>& cells,
                             const std::string& title) {
  const Splits splits = load_splits(c);
  std::vector<std::tuple<Variant, std::size_t, std::uint64_t>> jobs;
  for (const auto& [v, layer] : cells)
    for (std::uint64_t s : c.seeds) jobs.emplace_back(v, layer, s);
  std::function<MetricRow(std::size_t)> job = [&](std::size_t i) {
    const auto [v, layer, seed] = jobs[i];
    try {
      return run_once(c, splits, v, seed, layer).row;
    } catch (const std::exception& e) {
      throw std::runtime_error("variant " + variant_name(v) + " (seed " + std::to_string(seed) + ", layer " +
                               std::to_string(layer) + ") failed: " + e.what());
    }
  };
  auto runs = run_parallel(jobs.size(), c.threads, job);
  MetricReport report{title, {kFusionOnlyNote}, runs};
  auto means = aggregate_rows(runs, [&](const MetricRow& r) {
    nlohmann::json j = run_config(c, parse_variant(r.variant), 0, r.fusion_layer);
    j["model"].erase("seed");
    j["seeds"] = c.seeds;
    return config_hash(j);
  });
  report.rows.insert(report.rows.end(), means.begin(), means.end());
  return report;
}

}  // namespace experiments_detail

// Every configured variant x seed at the configured fusion layer, plus
// seed-mean rows. Writes ablation.metrics.csv and ablation.txt.
inline MetricReport cmd_ablate(const ExperimentConfig& c) {
  c.validate();
  std::vector<std::pair<Variant, std::size_t>> cells;
  for (Variant v : c.variants) cells.emplace_back(v, c.model.fusion_layer_index);
  MetricReport report = experiments_detail::run_grid(c, cells, "Ablation");
  const std::filesystem::path dir(c.out);
  experiments_detail::write_file(dir / "ablation.metrics.csv", render_csv(report));
  experiments_detail::write_file(dir / "ablation.txt", render_text(report));
  return report;
}

// MAF at every insertion point 1..encoder_layers. Writes
// sweep.metrics.csv and sweep.txt.
inline MetricReport cmd_sweep_fusion_layer(const ExperimentConfig& c) {
  c.validate();
  if (c.model.encoder_layers < 2) throw ConfigError("sweep-fusion-layer: needs at least 2 encoder layers");
  std::vector<std::pair<Variant, std::size_t>> cells;
  for (std::size_t k = 1; k <= c.model.encoder_layers; ++k) cells.emplace_back(Variant::kMaf, k);
  MetricReport report = experiments_detail::run_grid(c, cells, "Fusion layer sweep (adapter before layer k)");
  const std::filesystem::path dir(c.out);
  experiments_detail::write_file(dir / "sweep.metrics.csv", render_csv(report));
  experiments_detail::write_file(dir / "sweep.txt", render_text(report));
  return report;
}

struct RenderedReport {
  std::string text;
  std::string csv;
};

// Aggregates the per-run rows of every *.metrics.csv directly inside `dir`
// (sorted by file name) into mean ± sample-sd rows per variant and layer.
inline RenderedReport cmd_report(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw ConfigError("report: '" + dir.string() + "' is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (e.is_regular_file() && name.size() > 12 && name.ends_with(".metrics.csv")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<MetricRow> runs;
  for (const auto& f : files) {
    for (auto& r : parse_metric_csv(experiments_detail::read_file(f))) {
      if (r.seed != "mean") runs.push_back(std::move(r));
    }
  }
  if (runs.empty()) throw ConfigError("report: nothing to report in '" + dir.string() + "'");
  MetricReport report{"Report", {kFusionOnlyNote}, aggregate_rows(runs)};
  for (auto& r : report.rows) {
    // A group's hash is only meaningful when all of its runs agree.
    std::set<std::string> hashes;
    for (const auto& run : runs)
      if (run.variant == r.variant && run.fusion_layer == r.fusion_layer) hashes.insert(run.config_hash);
    r.config_hash = hashes.size() == 1 ? *hashes.begin() : "mixed";
  }
  return {render_text(report), render_csv(report)};
}

inline std::vector<DialogueInstance> cmd_gen_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out) {
  auto corpus = generate(spec);
  if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
  save_dataset(out, corpus);
  return corpus;
}

inline std::string cmd_stats(const std::filesystem::path& dataset) {
  return render_stats(corpus_stats(load_and_validate(dataset)));
}

}  // namespace maf
