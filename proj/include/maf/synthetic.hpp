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

// Synthetic multimodal explanation task.
//
// Each dialogue names its speakers in the text and nothing else of use: the
// action word is carried only by the audio frames (a class-specific unit
// basis row plus Gaussian noise) and the target only by the video windows.
// Gold explanations read "<source> <action> <target>", where the source is
// the speaker of the final utterance. Action and target are drawn first and
// independently of everything the text contains.

#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "maf/data.hpp"
#include "maf/errors.hpp"
#include "maf/evaluate.hpp"
#include "maf/model.hpp"
#include "maf/random.hpp"
#include "maf/train.hpp"

namespace maf {

struct SyntheticSpec {
  std::size_t num_instances = 600;
  std::size_t speakers = 6;
  std::size_t actions = 5;
  std::size_t targets = 6;
  std::size_t frames = 12;
  std::size_t windows = 8;
  double noise = 0.1;
  std::uint64_t seed = 1;
  std::size_t audio_dim = 16;
  std::size_t video_dim = 32;
  bool rich_templates = false;

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("synthetic spec: " + m); };
    if (speakers < 2 || actions < 2 || targets < 2) fail("speaker, action and target counts must be at least 2");
    if (!(noise >= 0.0)) fail("noise must be non-negative");
    if (frames == 0 || windows == 0) fail("frames and windows must be positive");
    if (actions > audio_dim) fail("audio_dim must be at least the number of actions");
    if (targets > video_dim) fail("video_dim must be at least the number of targets");
  }
};

inline nlohmann::json to_json(const SyntheticSpec& s) {
  return {{"num_instances", s.num_instances}, {"speakers", s.speakers}, {"actions", s.actions},
          {"targets", s.targets},             {"frames", s.frames},     {"windows", s.windows},
          {"noise", s.noise},                 {"seed", s.seed},         {"audio_dim", s.audio_dim},
          {"video_dim", s.video_dim},         {"rich_templates", s.rich_templates}};
}

inline void update_from_json(SyntheticSpec& s, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("synthetic spec must be an object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "num_instances") s.num_instances = value.get<std::size_t>();
      else if (key == "speakers") s.speakers = value.get<std::size_t>();
      else if (key == "actions") s.actions = value.get<std::size_t>();
      else if (key == "targets") s.targets = value.get<std::size_t>();
      else if (key == "frames") s.frames = value.get<std::size_t>();
      else if (key == "windows") s.windows = value.get<std::size_t>();
      else if (key == "noise") s.noise = value.get<double>();
      else if (key == "seed") s.seed = value.get<std::uint64_t>();
      else if (key == "audio_dim") s.audio_dim = value.get<std::size_t>();
      else if (key == "video_dim") s.video_dim = value.get<std::size_t>();
      else if (key == "rich_templates") s.rich_templates = value.get<bool>();
      else throw ConfigError("synthetic spec: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synthetic spec: ") + e.what());
  }
}

namespace synthetic_detail {

inline std::vector<std::string> names(const std::vector<std::string>& base, std::size_t count, const char* stem) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(i < base.size() ? base[i] : stem + std::to_string(i));
  return out;
}

inline constexpr std::uint64_t kBasisSeed = 0x5EED0BA515ULL;

}  // namespace synthetic_detail

// Word lists; the four groups are disjoint.
inline std::vector<std::string> synthetic_speakers(std::size_t s) {
  return synthetic_detail::names({"maya", "indravardhan", "monisha", "sahil", "rosesh", "madhusudan", "dushyant",
                                  "sweety", "kusum", "pintoo"},
                                 s, "speaker");
}
inline std::vector<std::string> synthetic_actions(std::size_t a) {
  return synthetic_detail::names({"taunts", "mocks", "teases", "ridicules", "scolds", "flatters", "insults",
                                  "praises"},
                                 a, "action");
}
inline std::vector<std::string> synthetic_targets(std::size_t t) {
  return synthetic_detail::names({"cooking", "poetry", "clothes", "job", "manners", "house", "singing", "hairstyle",
                                  "friends", "car"},
                                 t, "target");
}
inline const std::vector<std::string>& synthetic_fillers() {
  static const std::vector<std::string> w = {"arre", "yaar", "kya",   "bahut", "accha", "tum",   "main",
                                             "hai",  "nahi", "ghar",  "khana", "beta",  "abhi",  "bilkul",
                                             "sach", "matlab", "chalo", "haan", "theek", "bas"};
  return w;
}
inline const std::vector<std::string>& synthetic_clauses() {
  static const std::vector<std::string> c = {"in front of everyone", "without saying it directly",
                                             "while pretending to help", "during dinner"};
  return c;
}

// `count` orthonormal rows of width `dim` (Gram-Schmidt on Gaussian draws
// from a fixed seed, so every corpus shares the same class patterns).
inline std::vector<std::vector<double>> class_basis(std::size_t count, std::size_t dim, std::uint64_t stream) {
  Rng rng(derive_seed(synthetic_detail::kBasisSeed, stream));
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<std::vector<double>> rows;
  while (rows.size() < count) {
    std::vector<double> v(dim);
    for (double& x : v) x = g(rng);
    for (const auto& r : rows) {
      double dot = 0.0;
      for (std::size_t i = 0; i < dim; ++i) dot += v[i] * r[i];
      for (std::size_t i = 0; i < dim; ++i) v[i] -= dot * r[i];
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm < 1e-6) continue;
    for (double& x : v) x /= norm;
    rows.push_back(std::move(v));
  }
  return rows;
}

struct SyntheticLabels {
  std::size_t action = 0;
  std::size_t target = 0;
};

namespace synthetic_detail {

inline FeatureMatrix pattern_matrix(std::size_t rows, const std::vector<double>& basis, double noise, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  FeatureMatrix m;
  m.rows = rows;
  m.cols = basis.size();
  m.values.resize(rows * m.cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) m.values[r * m.cols + c] = basis[c] + noise * g(rng);
  return m;
}

}  // namespace synthetic_detail

// One instance from its own sub-seed, so instances can be generated in any
// order or in parallel.
inline DialogueInstance generate_instance(const SyntheticSpec& spec, std::size_t index,
                                          SyntheticLabels* labels = nullptr) {
  Rng rng(derive_seed(spec.seed, index));
  auto pick = [&rng](std::size_t n) { return static_cast<std::size_t>(rng() % n); };
  const std::size_t action = pick(spec.actions);
  const std::size_t target = pick(spec.targets);
  if (labels) *labels = {action, target};

  const auto speakers = synthetic_speakers(spec.speakers);
  const auto actions = synthetic_actions(spec.actions);
  const auto targets = synthetic_targets(spec.targets);
  const auto& fillers = synthetic_fillers();

  DialogueInstance d;
  d.id = "syn-" + std::to_string(spec.seed) + "-" + std::to_string(index);
  const std::size_t n_utts = 2 + pick(2);
  for (std::size_t u = 0; u < n_utts; ++u) {
    Utterance utt;
    utt.speaker = speakers[pick(speakers.size())];
    const std::size_t words = 2 + pick(2);
    for (std::size_t w = 0; w < words; ++w) {
      if (w) utt.text.push_back(' ');
      utt.text += fillers[pick(fillers.size())];
    }
    d.utterances.push_back(std::move(utt));
  }
  d.sarcasm_source = d.utterances.back().speaker;
  d.action_word = actions[action];
  d.sarcasm_target = targets[target];
  d.explanation = d.sarcasm_source + " " + d.action_word + " " + d.sarcasm_target;
  if (spec.rich_templates) {
    const auto& clauses = synthetic_clauses();
    d.description = clauses[(action * spec.targets + target) % clauses.size()];
    d.explanation += " " + *d.description;
  }
  static thread_local std::map<std::pair<std::size_t, std::size_t>, std::vector<std::vector<double>>> cache;
  auto basis = [&](std::size_t count, std::size_t dim, std::uint64_t stream) -> const auto& {
    auto& b = cache[{dim, stream}];
    if (b.size() < count) b = class_basis(std::max(count, dim), dim, stream);
    return b;
  };
  const auto& audio_basis = basis(spec.actions, spec.audio_dim, 1);
  d.audio_features = synthetic_detail::pattern_matrix(spec.frames, audio_basis[action], spec.noise, rng);
  const auto& video_basis = basis(spec.targets, spec.video_dim, 2);
  d.video_features = synthetic_detail::pattern_matrix(spec.windows, video_basis[target], spec.noise, rng);
  return d;
}

inline std::vector<DialogueInstance> generate(const SyntheticSpec& spec,
                                              std::vector<SyntheticLabels>* labels = nullptr) {
  spec.validate();
  std::vector<DialogueInstance> out;
  out.reserve(spec.num_instances);
  if (labels) labels->assign(spec.num_instances, {});
  for (std::size_t i = 0; i < spec.num_instances; ++i) {
    out.push_back(generate_instance(spec, i, labels ? &(*labels)[i] : nullptr));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Text-versus-fusion gap.

inline const std::vector<Variant>& gap_variants() {
  static const std::vector<Variant> v = {Variant::kTextOnly, Variant::kMaf, Variant::kConcat2, Variant::kDpa,
                                         Variant::kNoGif};
  return v;
}

struct GapEntry {
  Variant variant = Variant::kMaf;
  std::vector<double> action_acc;  // per seed, percent
  std::vector<double> target_acc;
  std::vector<double> exact_match;
  double mean_action = 0, mean_target = 0, mean_exact = 0;
};

struct GapReport {
  std::vector<GapEntry> entries;  // in gap_variants() order
  std::vector<Variant> ordering;  // by mean action accuracy, best first
  const GapEntry& at(Variant v) const {
    for (const auto& e : entries)
      if (e.variant == v) return e;
    throw ContractError("gap report has no variant " + variant_name(v));
  }
  // Mean action-accuracy margin over TextOnly, in points.
  double action_margin(Variant v) const { return at(v).mean_action - at(Variant::kTextOnly).mean_action; }
  double exact_margin(Variant a, Variant b) const { return at(a).mean_exact - at(b).mean_exact; }
};

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// `trained` maps each variant to its models, one per seed. Every variant in
// gap_variants() must be present with the same number of seeds.
inline GapReport evaluate_gap(const std::map<Variant, std::vector<const TrainedModel*>>& trained,
                              const std::vector<DialogueInstance>& test, std::size_t max_len = 8) {
  GapReport r;
  std::size_t seeds = 0;
  for (Variant v : gap_variants()) {
    auto it = trained.find(v);
    if (it == trained.end() || it->second.empty()) {
      throw ContractError("evaluate_gap: missing variant " + variant_name(v));
    }
    if (seeds == 0) seeds = it->second.size();
    if (it->second.size() != seeds) throw ContractError("evaluate_gap: variants trained on different seed sets");
    GapEntry e;
    e.variant = v;
    for (const TrainedModel* m : it->second) {
      const auto ev = evaluate(m->model, m->vocab, test, max_len);
      e.action_acc.push_back(ev.metrics.action_acc.value_or(0));
      e.target_acc.push_back(ev.metrics.target_acc);
      e.exact_match.push_back(ev.metrics.exact_match.value_or(0));
    }
    e.mean_action = mean_of(e.action_acc);
    e.mean_target = mean_of(e.target_acc);
    e.mean_exact = mean_of(e.exact_match);
    r.entries.push_back(std::move(e));
  }
  for (const auto& e : r.entries) r.ordering.push_back(e.variant);
  std::stable_sort(r.ordering.begin(), r.ordering.end(),
                   [&](Variant a, Variant b) { return r.at(a).mean_action > r.at(b).mean_action; });
  return r;
}

inline std::string render_gap(const GapReport& r) {
  std::ostringstream os;
  char buf[128];
  std::snprintf(buf, sizeof buf, "%-10s%12s%12s%13s%16s\n", "variant", "action_acc", "target_acc", "exact_match",
                "margin_vs_text");
  os << buf;
  for (const auto& e : r.entries) {
    std::snprintf(buf, sizeof buf, "%-10s%12.2f%12.2f%13.2f%16.2f\n", variant_name(e.variant).c_str(), e.mean_action,
                  e.mean_target, e.mean_exact, r.action_margin(e.variant));
    os << buf;
  }
  os << "ordering:";
  for (Variant v : r.ordering) os << ' ' << variant_name(v);
  os << '\n';
  return os.str();
}

}  // namespace maf
