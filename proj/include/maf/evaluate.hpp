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

#pragma once

#include <algorithm>
#include <set>
#include <string>
#include <vector>

#include "maf/data.hpp"
#include "maf/metrics.hpp"
#include "maf/model.hpp"
#include "maf/tokenizer.hpp"

namespace maf {

struct Evaluation {
  std::vector<std::string> hypotheses;
  MetricValues metrics;
};

// The gold action word appears as a token and no other action word of the
// corpus does.
inline bool action_correct(const std::string& hyp, const std::string& gold_action,
                           const std::set<std::string>& action_words) {
  const auto toks = tokenize(hyp);
  const std::set<std::string> present(toks.begin(), toks.end());
  const auto gold = tokenize(gold_action);
  if (gold.size() != 1) {
    return std::search(toks.begin(), toks.end(), gold.begin(), gold.end()) != toks.end();
  }
  if (!present.count(gold[0])) return false;
  for (const auto& a : action_words) {
    if (a != gold[0] && present.count(a)) return false;
  }
  return true;
}

// Greedy-decodes every instance and scores it against its gold explanation.
// Action accuracy uses the set of action words seen in `test`.
inline Evaluation evaluate(const Model& model, const Vocabulary& vocab, const std::vector<DialogueInstance>& test,
                           std::size_t max_len) {
  Evaluation e;
  std::vector<std::string> refs;
  std::vector<SourceTarget> golds;
  std::set<std::string> actions;
  for (const auto& d : test) {
    for (const auto& t : tokenize(d.action_word)) actions.insert(t);
  }
  std::size_t action_hits = 0, exact = 0;
  for (const auto& d : test) {
    const Example ex = prepare_example(d, vocab, model.config());
    const std::string hyp = vocab.decode(model.generate(ex, max_len));
    action_hits += action_correct(hyp, d.action_word, actions);
    exact += tokenize(hyp) == tokenize(d.explanation);
    e.hypotheses.push_back(hyp);
    refs.push_back(d.explanation);
    golds.push_back({d.sarcasm_source, d.sarcasm_target});
  }
  e.metrics = score_corpus(e.hypotheses, refs, golds);
  if (!test.empty()) {
    e.metrics.action_acc = 100.0 * static_cast<double>(action_hits) / static_cast<double>(test.size());
    e.metrics.exact_match = 100.0 * static_cast<double>(exact) / static_cast<double>(test.size());
  }
  return e;
}

}  // namespace maf
