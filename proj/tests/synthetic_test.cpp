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

#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <Eigen/Dense>
#include <boost/math/distributions/binomial.hpp>
#include <boost/math/distributions/chi_squared.hpp>
#include <gtest/gtest.h>

#include "maf/synthetic.hpp"

namespace maf {
namespace {

TEST(SyntheticTest, Deterministic) {
  SyntheticSpec spec;
  spec.num_instances = 30;
  EXPECT_EQ(generate(spec), generate(spec));
  EXPECT_EQ(generate_instance(spec, 17), generate(spec)[17]);
  spec.seed = 2;
  auto other = generate(spec);
  spec.seed = 1;
  EXPECT_NE(other, generate(spec));
}

TEST(SyntheticTest, PassesDataValidators) {
  for (bool rich : {false, true}) {
    SyntheticSpec spec;
    spec.num_instances = 200;
    spec.rich_templates = rich;
    std::vector<SyntheticLabels> labels;
    auto corpus = generate(spec, &labels);
    std::istringstream in(serialize(corpus));
    EXPECT_EQ(load_and_validate(in), corpus);
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      const auto& d = corpus[i];
      EXPECT_EQ(d.sarcasm_source, d.utterances.back().speaker);
      EXPECT_EQ(d.action_word, synthetic_actions(spec.actions)[labels[i].action]);
      EXPECT_EQ(d.explanation.rfind(d.sarcasm_source + " " + d.action_word + " " + d.sarcasm_target, 0), 0u);
      EXPECT_EQ(d.audio_features.rows, spec.frames);
      EXPECT_EQ(d.video_features.cols, spec.video_dim);
    }
  }
}

TEST(SyntheticTest, TextNeverMentionsActionOrTarget) {
  SyntheticSpec spec;
  spec.num_instances = 300;
  std::set<std::string> banned;
  for (const auto& a : synthetic_actions(spec.actions))
    for (const auto& t : tokenize(a)) banned.insert(t);
  for (const auto& a : synthetic_targets(spec.targets))
    for (const auto& t : tokenize(a)) banned.insert(t);
  for (const auto& d : generate(spec))
    for (const auto& u : d.utterances) {
      for (const auto& t : tokenize(u.text)) EXPECT_FALSE(banned.count(t)) << t;
      for (const auto& t : tokenize(u.speaker)) EXPECT_FALSE(banned.count(t)) << t;
    }
}

TEST(SyntheticTest, SpecValidation) {
  SyntheticSpec spec;
  spec.actions = 1;
  EXPECT_THROW(generate(spec), ConfigError);
  spec = {};
  spec.noise = -0.1;
  EXPECT_THROW(generate(spec), ConfigError);
}

// Token-by-action contingency table over every word of every utterance,
// speaker names included. `leak` appends the action word to the last
// utterance.
double IndependencePValue(const SyntheticSpec& spec, bool leak = false) {
  std::vector<SyntheticLabels> labels;
  auto corpus = generate(spec, &labels);
  if (leak)
    for (auto& d : corpus) d.utterances.back().text += " " + d.action_word;
  std::map<std::string, std::vector<double>> table;
  for (std::size_t i = 0; i < corpus.size(); ++i)
    for (const auto& u : corpus[i].utterances) {
      auto toks = tokenize(u.text);
      for (const auto& t : tokenize(u.speaker)) toks.push_back("@" + t);
      for (const auto& t : toks) {
        auto& row = table[t];
        row.resize(spec.actions);
        row[labels[i].action] += 1;
      }
    }
  std::vector<double> col(spec.actions, 0.0);
  double total = 0;
  for (const auto& [t, row] : table)
    for (std::size_t a = 0; a < spec.actions; ++a) {
      col[a] += row[a];
      total += row[a];
    }
  double stat = 0;
  for (const auto& [t, row] : table) {
    double r = 0;
    for (double x : row) r += x;
    for (std::size_t a = 0; a < spec.actions; ++a) {
      const double e = r * col[a] / total;
      stat += (row[a] - e) * (row[a] - e) / e;
    }
  }
  const double df = static_cast<double>((table.size() - 1) * (spec.actions - 1));
  return boost::math::cdf(boost::math::complement(boost::math::chi_squared(df), stat));
}

TEST(SyntheticTest, TextIndependentOfAction) {
  // Each seed is a 5% test on its own, so one rejection among eight seeds is
  // expected; at least five must not reject.
  std::size_t accepted = 0;
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    SyntheticSpec spec;
    spec.seed = seed;
    const double p = IndependencePValue(spec);
    accepted += p > 0.05;
    std::cout << "seed " << seed << " p=" << p << "\n";
  }
  EXPECT_GE(accepted, 5u);
}

TEST(SyntheticTest, IndependenceTestDetectsLeak) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SyntheticSpec spec;
    spec.seed = seed;
    EXPECT_LT(IndependencePValue(spec, true), 1e-6);
  }
}

Eigen::VectorXd PooledAudio(const DialogueInstance& d) {
  const auto& m = d.audio_features;
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.cols) + 1);
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) v(static_cast<Eigen::Index>(c)) += m.at(r, c) / static_cast<double>(m.rows);
  v(static_cast<Eigen::Index>(m.cols)) = 1.0;
  return v;
}

TEST(SyntheticTest, LinearProbeRecoversAction) {
  SyntheticSpec spec;  // S=6 A=5 T=6 f=12 w=8 noise 0.1, 600 instances
  std::vector<SyntheticLabels> labels;
  const auto corpus = generate(spec, &labels);
  const std::size_t n_train = 500, dim = spec.audio_dim + 1;
  Eigen::MatrixXd x(n_train, dim), y = Eigen::MatrixXd::Zero(n_train, spec.actions);
  for (std::size_t i = 0; i < n_train; ++i) {
    x.row(static_cast<Eigen::Index>(i)) = PooledAudio(corpus[i]).transpose();
    y(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(labels[i].action)) = 1.0;
  }
  // Least-squares one-vs-rest readout.
  const Eigen::MatrixXd w = x.colPivHouseholderQr().solve(y);
  std::size_t hits = 0;
  for (std::size_t i = n_train; i < corpus.size(); ++i) {
    Eigen::Index best;
    (PooledAudio(corpus[i]).transpose() * w).maxCoeff(&best);
    hits += static_cast<std::size_t>(best) == labels[i].action;
  }
  const double acc = static_cast<double>(hits) / static_cast<double>(corpus.size() - n_train);
  EXPECT_GT(acc, 0.95);
}

TEST(SyntheticTest, NoiselessPatternsAreOrthonormal) {
  SyntheticSpec spec;
  spec.actions = 2;
  spec.noise = 0.0;
  spec.num_instances = 40;
  std::vector<SyntheticLabels> labels;
  const auto corpus = generate(spec, &labels);
  std::map<std::size_t, std::vector<double>> pattern;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& m = corpus[i].audio_features;
    std::vector<double> row(m.values.begin(), m.values.begin() + static_cast<std::ptrdiff_t>(m.cols));
    for (std::size_t r = 1; r < m.rows; ++r)
      for (std::size_t c = 0; c < m.cols; ++c) ASSERT_EQ(m.at(r, c), row[c]);
    auto [it, fresh] = pattern.emplace(labels[i].action, row);
    if (!fresh) EXPECT_EQ(it->second, row);
  }
  ASSERT_EQ(pattern.size(), 2u);
  double dot = 0, n0 = 0, n1 = 0;
  for (std::size_t c = 0; c < spec.audio_dim; ++c) {
    dot += pattern[0][c] * pattern[1][c];
    n0 += pattern[0][c] * pattern[0][c];
    n1 += pattern[1][c] * pattern[1][c];
  }
  EXPECT_NEAR(dot, 0.0, 1e-12);
  EXPECT_NEAR(n0, 1.0, 1e-12);
  EXPECT_NEAR(n1, 1.0, 1e-12);
  // Bayes-optimal rule (largest inner product) is exact.
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& m = corpus[i].audio_features;
    double s0 = 0, s1 = 0;
    for (std::size_t c = 0; c < m.cols; ++c) {
      s0 += m.at(0, c) * pattern[0][c];
      s1 += m.at(0, c) * pattern[1][c];
    }
    EXPECT_EQ(s1 > s0 ? 1u : 0u, labels[i].action);
  }
}

ModelConfig TinyConfig(const SyntheticSpec& spec) {
  ModelConfig cfg;
  cfg.d = 16;
  cfg.ffn = 32;
  cfg.encoder_layers = 2;
  cfg.decoder_layers = 1;
  cfg.fusion_layer_index = 2;
  cfg.audio_input_dim = spec.audio_dim;
  cfg.video_input_dim = spec.video_dim;
  cfg.d_c_audio = 8;
  cfg.d_c_video = 8;
  return cfg;
}

TEST(GapTest, MissingVariantIsAContractError) {
  SyntheticSpec spec;
  spec.num_instances = 12;
  const auto corpus = generate(spec);
  TrainHyper h;
  h.epochs = 0;
  auto m = train_model(corpus, TinyConfig(spec), h);
  std::map<Variant, std::vector<const TrainedModel*>> trained;
  for (Variant v : gap_variants()) trained[v] = {&m};
  trained.erase(Variant::kDpa);
  try {
    evaluate_gap(trained, corpus);
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("DPA"), std::string::npos) << e.what();
  }
  trained[Variant::kDpa] = {&m, &m};
  EXPECT_THROW(evaluate_gap(trained, corpus), ContractError);
}

TEST(GapTest, UntrainedModelsAreNotAboveChance) {
  SyntheticSpec spec;
  spec.num_instances = 160;
  const auto corpus = generate(spec);
  const std::vector<DialogueInstance> train(corpus.begin(), corpus.begin() + 60);
  const std::vector<DialogueInstance> test(corpus.begin() + 60, corpus.end());
  std::vector<TrainedModel> models;
  std::map<Variant, std::vector<const TrainedModel*>> trained;
  TrainHyper h;
  h.epochs = 0;
  models.reserve(gap_variants().size() * 5);
  for (Variant v : gap_variants())
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      auto cfg = TinyConfig(spec);
      cfg.variant = v;
      cfg.seed = seed;
      models.push_back(train_model(train, cfg, h));
      trained[v].push_back(&models.back());
    }
  const auto gap = evaluate_gap(trained, test);
  ASSERT_EQ(gap.entries.size(), 5u);
  const double chance = 1.0 / static_cast<double>(spec.actions);
  for (const auto& e : gap.entries) {
    SCOPED_TRACE(variant_name(e.variant));
    ASSERT_EQ(e.action_acc.size(), 5u);
    // One-sided binomial test against 1/A over all seeds.
    const double trials = 5.0 * static_cast<double>(test.size());
    const double hits = std::round(e.mean_action / 100.0 * trials);
    const double p = hits == 0 ? 1.0
                               : boost::math::cdf(boost::math::complement(
                                     boost::math::binomial(trials, chance), hits - 1));
    EXPECT_GT(p, 0.05) << "hits " << hits << " of " << trials;
  }
  EXPECT_NE(render_gap(gap).find("ordering:"), std::string::npos);
}

}  // namespace
}  // namespace maf
