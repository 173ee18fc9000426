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

// Dialogue corpus model: record schema, line-oriented JSON I/O, validation,
// seeded splits, annotation adjudication and corpus statistics.
//
// File layout: one JSON object per line with exactly the fields
//   id, utterances [{speaker, text}], audio_features, video_features,
//   explanation, sarcasm_source, sarcasm_target, action_word, description
// where description may be null and each feature field is either a list of
// float rows or a path (relative to the dataset file) to a binary matrix:
// uint64 rows, uint64 cols, then rows*cols float64, all little-endian.

#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "maf/errors.hpp"
#include "maf/random.hpp"
#include "maf/tensor.hpp"
#include "maf/tokenizer.hpp"

namespace maf {

struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  Tensor to_tensor() const { return Tensor::from({rows, cols}, values); }
  bool operator==(const FeatureMatrix&) const = default;
};

struct Utterance {
  std::string speaker;
  std::string text;
  bool operator==(const Utterance&) const = default;
};

struct DialogueInstance {
  std::string id;
  std::vector<Utterance> utterances;  // the last one is the sarcastic one
  FeatureMatrix audio_features;
  FeatureMatrix video_features;
  std::string explanation;
  std::string sarcasm_source;
  std::string sarcasm_target;
  std::string action_word;
  std::optional<std::string> description;
  bool operator==(const DialogueInstance&) const = default;
};

// ---------------------------------------------------------------------------
// Binary matrix sidecars.

inline void write_matrix_binary(const std::filesystem::path& path, const FeatureMatrix& m) {
  static_assert(std::endian::native == std::endian::little, "binary matrices assume a little-endian host");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const std::uint64_t header[2] = {m.rows, m.cols};
  out.write(reinterpret_cast<const char*>(header), sizeof header);
  out.write(reinterpret_cast<const char*>(m.values.data()),
            static_cast<std::streamsize>(m.values.size() * sizeof(double)));
}

inline std::optional<FeatureMatrix> read_matrix_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::uint64_t header[2];
  if (!in.read(reinterpret_cast<char*>(header), sizeof header)) return std::nullopt;
  if (header[1] != 0 && header[0] > (std::uint64_t{1} << 40) / header[1]) return std::nullopt;
  FeatureMatrix m;
  m.rows = header[0];
  m.cols = header[1];
  m.values.resize(m.rows * m.cols);
  if (!in.read(reinterpret_cast<char*>(m.values.data()),
               static_cast<std::streamsize>(m.values.size() * sizeof(double)))) {
    return std::nullopt;
  }
  return m;
}

// ---------------------------------------------------------------------------
// JSON mapping.

inline nlohmann::json matrix_to_json(const FeatureMatrix& m) {
  auto rows = nlohmann::json::array();
  for (std::size_t r = 0; r < m.rows; ++r) {
    auto row = nlohmann::json::array();
    for (std::size_t c = 0; c < m.cols; ++c) row.push_back(m.at(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline nlohmann::json to_json(const DialogueInstance& d) {
  nlohmann::json j;
  j["id"] = d.id;
  auto utts = nlohmann::json::array();
  for (const auto& u : d.utterances) utts.push_back({{"speaker", u.speaker}, {"text", u.text}});
  j["utterances"] = std::move(utts);
  j["audio_features"] = matrix_to_json(d.audio_features);
  j["video_features"] = matrix_to_json(d.video_features);
  j["explanation"] = d.explanation;
  j["sarcasm_source"] = d.sarcasm_source;
  j["sarcasm_target"] = d.sarcasm_target;
  j["action_word"] = d.action_word;
  j["description"] = d.description ? nlohmann::json(*d.description) : nlohmann::json(nullptr);
  return j;
}

namespace data_detail {

inline const std::set<std::string>& known_fields() {
  static const std::set<std::string> fields = {"id",          "utterances",     "audio_features",
                                               "video_features", "explanation", "sarcasm_source",
                                               "sarcasm_target", "action_word", "description"};
  return fields;
}

inline std::string require_string(const nlohmann::json& j, const char* field, std::size_t line) {
  if (!j.contains(field)) throw ParseError(line, std::string("missing field '") + field + "'");
  if (!j[field].is_string()) throw ParseError(line, std::string("field '") + field + "' must be a string");
  return j[field].get<std::string>();
}

inline FeatureMatrix parse_matrix(const nlohmann::json& j, const char* field, std::size_t line,
                                  const std::filesystem::path& base_dir) {
  if (!j.contains(field)) throw ParseError(line, std::string("missing field '") + field + "'");
  const auto& v = j[field];
  if (v.is_string()) {
    const auto path = base_dir / v.get<std::string>();
    auto m = read_matrix_binary(path);
    if (!m) throw ParseError(line, std::string("field '") + field + "': cannot read matrix file " + path.string());
    return *m;
  }
  if (!v.is_array()) throw ParseError(line, std::string("field '") + field + "' must be a list of rows or a path");
  FeatureMatrix m;
  m.rows = v.size();
  for (std::size_t r = 0; r < v.size(); ++r) {
    const auto& row = v[r];
    if (!row.is_array()) {
      throw ParseError(line, std::string("field '") + field + "' row " + std::to_string(r) + " is not a list");
    }
    if (r == 0) m.cols = row.size();
    if (row.size() != m.cols) throw ValidationError(line, field, "rows must all have the same length");
    for (const auto& x : row) {
      if (!x.is_number()) throw ParseError(line, std::string("field '") + field + "' holds a non-numeric value");
      m.values.push_back(x.get<double>());
    }
  }
  return m;
}

}  // namespace data_detail

// Parses one record. Structural problems raise ParseError; rule breaches
// found while parsing (ragged rows) raise ValidationError.
inline DialogueInstance parse_instance(const nlohmann::json& j, std::size_t line,
                                       const std::filesystem::path& base_dir = {}) {
  if (!j.is_object()) throw ParseError(line, "record is not an object");
  for (const auto& [key, _] : j.items()) {
    if (!data_detail::known_fields().count(key)) throw ParseError(line, "unknown field '" + key + "'");
  }
  DialogueInstance d;
  d.id = data_detail::require_string(j, "id", line);
  if (!j.contains("utterances")) throw ParseError(line, "missing field 'utterances'");
  if (!j["utterances"].is_array()) throw ParseError(line, "field 'utterances' must be a list");
  for (const auto& u : j["utterances"]) {
    if (!u.is_object() || !u.contains("speaker") || !u.contains("text") || !u["speaker"].is_string() ||
        !u["text"].is_string()) {
      throw ParseError(line, "each utterance needs string fields 'speaker' and 'text'");
    }
    d.utterances.push_back({u["speaker"].get<std::string>(), u["text"].get<std::string>()});
  }
  d.audio_features = data_detail::parse_matrix(j, "audio_features", line, base_dir);
  d.video_features = data_detail::parse_matrix(j, "video_features", line, base_dir);
  d.explanation = data_detail::require_string(j, "explanation", line);
  d.sarcasm_source = data_detail::require_string(j, "sarcasm_source", line);
  d.sarcasm_target = data_detail::require_string(j, "sarcasm_target", line);
  d.action_word = data_detail::require_string(j, "action_word", line);
  if (j.contains("description") && !j["description"].is_null()) {
    if (!j["description"].is_string()) throw ParseError(line, "field 'description' must be a string or null");
    d.description = j["description"].get<std::string>();
  }
  return d;
}

// Checks every schema rule; the first breach is reported.
inline void validate_instance(const DialogueInstance& d, std::size_t line) {
  if (d.id.empty()) throw ValidationError(line, "id", "must be non-empty");
  if (d.utterances.size() < 2) {
    throw ValidationError(line, "utterances", "a dialogue needs at least 2 utterances, got " +
                                                  std::to_string(d.utterances.size()));
  }
  for (std::size_t i = 0; i < d.utterances.size(); ++i) {
    if (d.utterances[i].speaker.empty()) {
      throw ValidationError(line, "utterances[" + std::to_string(i) + "].speaker", "must be non-empty");
    }
  }
  if (d.utterances.back().text.empty()) {
    throw ValidationError(line, "utterances", "the final (sarcastic) utterance must have text");
  }
  for (auto [name, m] : {std::pair{"audio_features", &d.audio_features},
                         std::pair{"video_features", &d.video_features}}) {
    if (m->rows == 0 || m->cols == 0) throw ValidationError(line, name, "feature matrix must be non-empty");
    if (m->values.size() != m->rows * m->cols) throw ValidationError(line, name, "value count does not match shape");
    for (double v : m->values) {
      if (!std::isfinite(v)) throw ValidationError(line, name, "values must be finite");
    }
  }
  if (d.explanation.empty()) throw ValidationError(line, "explanation", "must be non-empty");
  if (d.sarcasm_target.empty()) throw ValidationError(line, "sarcasm_target", "must be non-empty");
  if (d.action_word.empty()) throw ValidationError(line, "action_word", "must be non-empty");
  bool found = false;
  for (const auto& u : d.utterances) found = found || u.speaker == d.sarcasm_source;
  if (!found) {
    throw ValidationError(line, "sarcasm_source",
                          "'" + d.sarcasm_source + "' must appear among the utterance speakers");
  }
}

// Parses and validates a whole stream. Blank lines are skipped; ids must be
// unique.
inline std::vector<DialogueInstance> load_and_validate(std::istream& in,
                                                       const std::filesystem::path& base_dir = {}) {
  std::vector<DialogueInstance> out;
  std::unordered_set<std::string> ids;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(line, std::string("malformed record: ") + e.what());
    } catch (const nlohmann::json::out_of_range&) {
      throw ValidationError(line, "record", "all numbers must be finite");
    }
    DialogueInstance d = parse_instance(j, line, base_dir);
    validate_instance(d, line);
    if (!ids.insert(d.id).second) throw ValidationError(line, "id", "duplicate id '" + d.id + "'");
    out.push_back(std::move(d));
  }
  return out;
}

inline std::vector<DialogueInstance> load_and_validate(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(0, "cannot open dataset file " + path.string());
  return load_and_validate(in, path.parent_path());
}

inline std::string serialize(const std::vector<DialogueInstance>& corpus) {
  std::string out;
  for (const auto& d : corpus) {
    out += to_json(d).dump();
    out.push_back('\n');
  }
  return out;
}

inline void save_dataset(const std::filesystem::path& path, const std::vector<DialogueInstance>& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << serialize(corpus);
}

// ---------------------------------------------------------------------------
// Splits.

struct DatasetSplit {
  std::vector<std::string> train;
  std::vector<std::string> validation;
  std::vector<std::string> test;
};

// Fisher-Yates over the corpus order with a seeded mt19937_64; sizes are
// floor(0.8 N), floor(0.1 N) and the remainder.
inline DatasetSplit split(const std::vector<DialogueInstance>& corpus, std::uint64_t seed) {
  const std::size_t n = corpus.size();
  if (n < 10) throw ContractError("split: corpus of " + std::to_string(n) + " is smaller than 10");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) {
    // Rejection sampling keeps the draw uniform and library-independent.
    const std::uint64_t bound = i + 1;
    const std::uint64_t limit = Rng::max() - Rng::max() % bound;
    std::uint64_t r;
    do r = rng(); while (r >= limit);
    std::swap(order[i], order[r % bound]);
  }
  const std::size_t n_train = n * 8 / 10;
  const std::size_t n_val = n / 10;
  DatasetSplit s;
  for (std::size_t i = 0; i < n; ++i) {
    auto& bucket = i < n_train ? s.train : i < n_train + n_val ? s.validation : s.test;
    bucket.push_back(corpus[order[i]].id);
  }
  return s;
}

inline std::vector<DialogueInstance> select(const std::vector<DialogueInstance>& corpus,
                                            const std::vector<std::string>& ids) {
  std::unordered_map<std::string, const DialogueInstance*> by_id;
  for (const auto& d : corpus) by_id[d.id] = &d;
  std::vector<DialogueInstance> out;
  for (const auto& id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw ContractError("select: unknown id '" + id + "'");
    out.push_back(*it->second);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Annotation adjudication.

inline double token_cosine(std::string_view a, std::string_view b) {
  std::map<std::string, double> ca, cb;
  for (const auto& t : tokenize(a)) ca[t] += 1.0;
  for (const auto& t : tokenize(b)) cb[t] += 1.0;
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [t, c] : ca) {
    na += c * c;
    auto it = cb.find(t);
    if (it != cb.end()) dot += c * it->second;
  }
  for (const auto& [t, c] : cb) nb += c * c;
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / std::sqrt(na * nb);
}

struct MergeDecision {
  double similarity = 0.0;
  std::optional<std::string> chosen;
  std::optional<std::pair<std::string, std::string>> conflict;
  bool is_conflict() const noexcept { return conflict.has_value(); }
};

inline constexpr double kMergeThreshold = 0.9;

// Similar pairs (cosine > 0.9 over token counts) resolve to the shorter
// explanation: fewer tokens, then fewer characters, then the first argument.
// Anything else is returned as a conflict for a third annotator.
inline MergeDecision merge_annotations(const std::string& a, const std::string& b) {
  if (a.empty() || b.empty()) throw ContractError("merge_annotations: explanations must be non-empty");
  MergeDecision m;
  m.similarity = token_cosine(a, b);
  if (m.similarity > kMergeThreshold) {
    const auto ta = tokenize(a).size(), tb = tokenize(b).size();
    const bool pick_b = tb < ta || (tb == ta && b.size() < a.size());
    m.chosen = pick_b ? b : a;
  } else {
    m.conflict = std::make_pair(a, b);
  }
  return m;
}

inline std::string resolve_conflict(const MergeDecision& decision, const std::string& resolution) {
  if (!decision.is_conflict()) return *decision.chosen;
  if (resolution.empty()) throw ContractError("resolve_conflict: resolution must be non-empty");
  return resolution;
}

// ---------------------------------------------------------------------------
// Statistics.

struct CorpusStats {
  std::size_t dialogues = 0;
  std::size_t utterances = 0;
  double avg_utterances_per_dialogue = 0.0;
  double avg_words_per_utterance = 0.0;
  double avg_speakers_per_dialogue = 0.0;
  std::size_t vocabulary_size = 0;
  std::map<std::size_t, std::size_t> utterance_count_histogram;    // utterances per dialogue -> dialogues
  std::map<std::size_t, std::size_t> explanation_length_histogram;  // tokens -> explanations
  std::map<std::string, std::size_t> source_counts;
  std::map<std::string, std::size_t> target_counts;
};

inline CorpusStats corpus_stats(const std::vector<DialogueInstance>& corpus) {
  if (corpus.empty()) throw ContractError("corpus_stats: empty corpus");
  CorpusStats s;
  std::set<std::string> vocab;
  std::size_t words = 0, speakers = 0;
  for (const auto& d : corpus) {
    ++s.dialogues;
    s.utterances += d.utterances.size();
    ++s.utterance_count_histogram[d.utterances.size()];
    std::set<std::string> names;
    for (const auto& u : d.utterances) {
      names.insert(u.speaker);
      const auto toks = tokenize(u.text);
      words += toks.size();
      vocab.insert(toks.begin(), toks.end());
    }
    speakers += names.size();
    ++s.explanation_length_histogram[tokenize(d.explanation).size()];
    ++s.source_counts[d.sarcasm_source];
    ++s.target_counts[d.sarcasm_target];
  }
  s.avg_utterances_per_dialogue = static_cast<double>(s.utterances) / static_cast<double>(s.dialogues);
  s.avg_words_per_utterance = static_cast<double>(words) / static_cast<double>(s.utterances);
  s.avg_speakers_per_dialogue = static_cast<double>(speakers) / static_cast<double>(s.dialogues);
  s.vocabulary_size = vocab.size();
  return s;
}

inline std::string render_stats(const CorpusStats& s) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << "dialogues                 " << s.dialogues << '\n'
     << "utterances                " << s.utterances << '\n'
     << "avg utterances/dialogue   " << s.avg_utterances_per_dialogue << '\n'
     << "avg words/utterance       " << s.avg_words_per_utterance << '\n'
     << "avg speakers/dialogue     " << s.avg_speakers_per_dialogue << '\n'
     << "vocabulary size           " << s.vocabulary_size << '\n';
  os << "\nutterances per dialogue\n";
  for (const auto& [k, v] : s.utterance_count_histogram) os << "  " << k << '\t' << v << '\n';
  os << "\nexplanation length (tokens)\n";
  for (const auto& [k, v] : s.explanation_length_histogram) os << "  " << k << '\t' << v << '\n';
  os << "\nsarcasm source counts\n";
  for (const auto& [k, v] : s.source_counts) os << "  " << k << '\t' << v << '\n';
  os << "\nsarcasm target counts\n";
  for (const auto& [k, v] : s.target_counts) os << "  " << k << '\t' << v << '\n';
  return os.str();
}

}  // namespace maf
