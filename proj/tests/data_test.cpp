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

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "maf/data.hpp"
#include "maf/synthetic.hpp"

namespace maf {
namespace {

const std::filesystem::path kData = MAF_TEST_DATA_DIR;

DialogueInstance Minimal(const std::string& id) {
  DialogueInstance d;
  d.id = id;
  d.utterances = {{"Maya", "hello there"}, {"Sahil", "oh really"}};
  d.audio_features = {1, 2, {0.5, -0.5}};
  d.video_features = {2, 1, {1.0, 2.0}};
  d.explanation = "sahil mocks maya";
  d.sarcasm_source = "Sahil";
  d.sarcasm_target = "Maya";
  d.action_word = "mocks";
  return d;
}

std::vector<DialogueInstance> Corpus(std::size_t n) {
  std::vector<DialogueInstance> c;
  for (std::size_t i = 0; i < n; ++i) c.push_back(Minimal("id" + std::to_string(i)));
  return c;
}

TEST(LoadTest, EmptyFileGivesEmptyCorpus) {
  std::istringstream in("");
  EXPECT_TRUE(load_and_validate(in).empty());
  std::istringstream blanks("\n  \n");
  EXPECT_TRUE(load_and_validate(blanks).empty());
}

TEST(LoadTest, GoldenFileRoundTrips) {
  auto corpus = load_and_validate(kData / "golden.jsonl");
  ASSERT_EQ(corpus.size(), 3u);
  EXPECT_EQ(corpus[0].utterances.size(), 3u);
  EXPECT_EQ(corpus[0].description, "dinner table");
  EXPECT_FALSE(corpus[1].description.has_value());
  EXPECT_EQ(corpus[2].audio_features.at(1, 0), 1e-3);
  std::istringstream again(serialize(corpus));
  EXPECT_EQ(load_and_validate(again), corpus);
}

TEST(LoadTest, BinarySidecarMatrices) {
  const auto dir = std::filesystem::temp_directory_path() / "maf_sidecar_test";
  std::filesystem::create_directories(dir);
  DialogueInstance d = Minimal("s1");
  d.audio_features = {2, 3, {1, 2, 3, 4, 5, 6.25}};
  write_matrix_binary(dir / "a.bin", d.audio_features);
  auto j = to_json(d);
  j["audio_features"] = "a.bin";
  std::ofstream(dir / "set.jsonl") << j.dump() << "\n";
  auto corpus = load_and_validate(dir / "set.jsonl");
  ASSERT_EQ(corpus.size(), 1u);
  EXPECT_EQ(corpus[0], d);
  std::ofstream(dir / "short.bin", std::ios::binary) << "abc";
  EXPECT_FALSE(read_matrix_binary(dir / "short.bin").has_value());
  std::filesystem::remove_all(dir);
}

struct Fixture {
  const char* file;
  bool parse_error;  // otherwise a validation error
  const char* field;
  const char* needle;
};

TEST(LoadTest, MalformedFixturesAreRejectedWithDiagnostics) {
  const Fixture fixtures[] = {
      {"bad_one_utterance.jsonl", false, "utterances", "at least 2 utterances"},
      {"bad_source_absent.jsonl", false, "sarcasm_source", "among the utterance speakers"},
      {"bad_empty_audio.jsonl", false, "audio_features", "non-empty"},
      {"bad_ragged_video.jsonl", false, "video_features", "same length"},
      {"bad_empty_explanation.jsonl", false, "explanation", "non-empty"},
      {"bad_duplicate_id.jsonl", false, "id", "duplicate"},
      {"bad_non_finite.jsonl", false, "record", "finite"},
      {"bad_missing_field.jsonl", true, nullptr, "missing field 'explanation'"},
      {"bad_unknown_field.jsonl", true, nullptr, "unknown field 'emotion'"},
      {"bad_not_json.jsonl", true, nullptr, "malformed record"},
      {"bad_wrong_type.jsonl", true, nullptr, "'id' must be a string"},
      {"bad_missing_sidecar.jsonl", true, nullptr, "cannot read matrix file"},
  };
  for (const auto& f : fixtures) {
    SCOPED_TRACE(f.file);
    try {
      load_and_validate(kData / f.file);
      ADD_FAILURE() << "accepted";
    } catch (const ValidationError& e) {
      EXPECT_FALSE(f.parse_error) << e.what();
      EXPECT_EQ(e.line(), 2u);
      EXPECT_EQ(e.field(), f.field);
      EXPECT_NE(e.rule().find(f.needle), std::string::npos) << e.rule();
    } catch (const ParseError& e) {
      EXPECT_TRUE(f.parse_error) << e.what();
      EXPECT_EQ(e.line(), 2u);
      EXPECT_NE(std::string(e.what()).find(f.needle), std::string::npos) << e.what();
    }
  }
}

TEST(LoadTest, ValidationIsTotal) {
  // Arbitrary truncations of a valid record never crash.
  std::string good;
  std::getline(std::ifstream(kData / "golden.jsonl"), good);
  for (std::size_t cut = 0; cut < good.size(); cut += 7) {
    std::istringstream in(good.substr(0, cut));
    try {
      load_and_validate(in);
    } catch (const ParseError&) {
    } catch (const ValidationError&) {
    }
  }
}

TEST(SplitTest, FullCorpusSize) {
  auto s = split(Corpus(2240), 1);
  EXPECT_EQ(s.train.size(), 1792u);
  EXPECT_EQ(s.validation.size(), 224u);
  EXPECT_EQ(s.test.size(), 224u);
}

TEST(SplitTest, SmallestCorpus) {
  auto s = split(Corpus(10), 1);
  EXPECT_EQ(s.train.size(), 8u);
  EXPECT_EQ(s.validation.size(), 1u);
  EXPECT_EQ(s.test.size(), 1u);
  EXPECT_THROW(split(Corpus(9), 1), ContractError);
}

TEST(SplitTest, DeterministicPartition) {
  for (std::size_t n : {10, 11, 37, 100, 2240}) {
    auto corpus = Corpus(n);
    auto a = split(corpus, 3), b = split(corpus, 3), c = split(corpus, 4);
    EXPECT_EQ(a.train, b.train);
    EXPECT_EQ(a.test, b.test);
    EXPECT_NE(a.train, c.train);
    EXPECT_EQ(a.train.size(), c.train.size());
    std::multiset<std::string> all(a.train.begin(), a.train.end());
    all.insert(a.validation.begin(), a.validation.end());
    all.insert(a.test.begin(), a.test.end());
    std::multiset<std::string> expect;
    for (const auto& d : corpus) expect.insert(d.id);
    EXPECT_EQ(all, expect);
    EXPECT_EQ(a.train.size(), n * 8 / 10);
    EXPECT_EQ(a.validation.size(), n / 10);
  }
}

TEST(MergeTest, IdenticalStringsAreChosen) {
  auto m = merge_annotations("maya taunts monisha", "maya taunts monisha");
  EXPECT_EQ(m.similarity, 1.0);
  ASSERT_TRUE(m.chosen);
  EXPECT_EQ(*m.chosen, "maya taunts monisha");
}

TEST(MergeTest, DisjointStringsConflict) {
  auto m = merge_annotations("maya taunts monisha", "rosesh recites poetry");
  EXPECT_EQ(m.similarity, 0.0);
  EXPECT_TRUE(m.is_conflict());
  EXPECT_EQ(resolve_conflict(m, "third view"), "third view");
}

TEST(MergeTest, HandCosineDecidesBranch) {
  // Five shared tokens, norms sqrt(5) and sqrt(7).
  const double expected = 5.0 / (std::sqrt(5.0) * std::sqrt(7.0));
  auto m = merge_annotations("maya taunts monisha for cooking", "maya taunts monisha for her cooking skills");
  EXPECT_NEAR(m.similarity, expected, 1e-15);
  EXPECT_NEAR(m.similarity, 0.845, 1e-3);
  EXPECT_TRUE(m.is_conflict());
}

TEST(MergeTest, SimilarPairPicksFewerTokensThenCharacters) {
  // 10 vs 11 tokens, cosine 10/sqrt(110) > 0.9
  const std::string a = "a b c d e f g h i j", b = "a b c d e f g h i j k";
  EXPECT_EQ(*merge_annotations(b, a).chosen, a);
  EXPECT_EQ(*merge_annotations(a, b).chosen, a);
  EXPECT_EQ(*merge_annotations("Maya, taunts!", "maya taunts").chosen, "maya taunts");
  EXPECT_EQ(*merge_annotations("maya taunts", "Maya Taunts").chosen, "maya taunts");
  EXPECT_THROW(merge_annotations("", "x"), ContractError);
}

TEST(MergeTest, SymmetricSimilarity) {
  const char* texts[] = {"a b c", "a a b", "c b a d", "x", "a b c d e f g h i j"};
  for (const char* x : texts)
    for (const char* y : texts) {
      auto m1 = merge_annotations(x, y), m2 = merge_annotations(y, x);
      EXPECT_EQ(m1.similarity, m2.similarity);
      EXPECT_EQ(m1.is_conflict(), m2.is_conflict());
    }
}

TEST(StatsTest, SingleInstance) {
  DialogueInstance d = Minimal("one");
  d.utterances = {{"Maya", "hi"}, {"Sahil", "yo"}};
  auto s = corpus_stats({d});
  EXPECT_EQ(s.avg_utterances_per_dialogue, 2.0);
  EXPECT_EQ(s.avg_words_per_utterance, 1.0);
  EXPECT_EQ(s.avg_speakers_per_dialogue, 2.0);
  EXPECT_THROW(corpus_stats({}), ContractError);
}

TEST(StatsTest, SyntheticCorpusMatchesRecount) {
  SyntheticSpec spec;
  spec.num_instances = 50;
  auto corpus = generate(spec);
  auto s = corpus_stats(corpus);
  std::size_t utts = 0, words = 0, speakers = 0;
  std::set<std::string> vocab;
  std::map<std::string, std::size_t> sources;
  for (const auto& d : corpus) {
    utts += d.utterances.size();
    std::set<std::string> names;
    for (const auto& u : d.utterances) {
      names.insert(u.speaker);
      std::istringstream ws(u.text);
      for (std::string w; ws >> w;) {
        ++words;
        vocab.insert(w);
      }
    }
    speakers += names.size();
    ++sources[d.sarcasm_source];
  }
  EXPECT_EQ(s.dialogues, 50u);
  EXPECT_EQ(s.utterances, utts);
  EXPECT_DOUBLE_EQ(s.avg_words_per_utterance, static_cast<double>(words) / static_cast<double>(utts));
  EXPECT_DOUBLE_EQ(s.avg_speakers_per_dialogue, static_cast<double>(speakers) / 50.0);
  EXPECT_EQ(s.vocabulary_size, vocab.size());
  EXPECT_EQ(s.source_counts, sources);
  EXPECT_NE(render_stats(s).find("dialogues                 50"), std::string::npos);
}

}  // namespace
}  // namespace maf
