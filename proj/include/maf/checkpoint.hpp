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

// Checkpoints are a single JSON document:
//   {"format": "maf-checkpoint", "version": 1, "config": {...},
//    "vocab": [...], "tensors": [{"name", "shape", "data"}, ...]}
// Doubles are written with round-trip precision.

#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>

#include <nlohmann/json.hpp>

#include "maf/model.hpp"
#include "maf/tokenizer.hpp"

namespace maf {

inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json checkpoint_json(const Model& model, const Vocabulary& vocab) {
  nlohmann::json j;
  j["format"] = "maf-checkpoint";
  j["version"] = kCheckpointVersion;
  j["config"] = to_json(model.config());
  j["vocab"] = vocab.words();
  auto tensors = nlohmann::json::array();
  model.for_each_parameter([&](const std::string& name, const Tensor& t) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"data", t.values()}});
  });
  j["tensors"] = std::move(tensors);
  return j;
}

inline void save_checkpoint(const std::filesystem::path& path, const Model& model, const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << checkpoint_json(model, vocab).dump() << '\n';
}

struct LoadedCheckpoint {
  Model model;
  Vocabulary vocab;
};

inline LoadedCheckpoint checkpoint_from_json(const nlohmann::json& j) {
  if (!j.is_object() || j.value("format", "") != "maf-checkpoint") throw ParseError(1, "not a maf checkpoint");
  if (j.value("version", 0) != kCheckpointVersion) {
    throw ParseError(1, "unsupported checkpoint version " + j.value("version", nlohmann::json()).dump());
  }
  ModelConfig cfg;
  update_from_json(cfg, j.at("config"));
  Vocabulary vocab = Vocabulary::from_words(j.at("vocab").get<std::vector<std::string>>());
  if (vocab.size() != cfg.vocab_size) throw ParseError(1, "vocabulary size disagrees with config");
  std::map<std::string, const nlohmann::json*> stored;
  for (const auto& t : j.at("tensors")) stored[t.at("name").get<std::string>()] = &t;
  Model model(cfg);
  std::size_t matched = 0;
  model.for_each_parameter([&](const std::string& name, const Tensor& t) {
    auto it = stored.find(name);
    if (it == stored.end()) throw ParseError(1, "checkpoint lacks tensor '" + name + "'");
    const auto shape = it->second->at("shape").get<Shape>();
    const auto data = it->second->at("data").get<std::vector<double>>();
    if (shape != t.shape() || data.size() != t.numel()) {
      throw ParseError(1, "tensor '" + name + "' has shape " + shape_string(shape) + ", expected " +
                              shape_string(t.shape()));
    }
    Tensor handle = t;
    std::copy(data.begin(), data.end(), handle.mutable_data().begin());
    ++matched;
  });
  if (matched != stored.size()) throw ParseError(1, "checkpoint holds tensors the model does not use");
  return {std::move(model), std::move(vocab)};
}

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(0, "cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(1, std::string("malformed checkpoint: ") + e.what());
  }
  return checkpoint_from_json(j);
}

}  // namespace maf
