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

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "maf/data.hpp"
#include "maf/errors.hpp"
#include "maf/model.hpp"
#include "maf/random.hpp"
#include "maf/tensor.hpp"
#include "maf/tokenizer.hpp"

namespace maf {

struct TrainHyper {
  double lr = 1e-3;
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  double grad_clip = 1.0;  // global L2 norm; <= 0 disables
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainResult {
  std::vector<double> step_losses;   // batch mean loss per optimizer step
  std::vector<double> epoch_losses;  // mean of per-example losses per epoch
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, const TrainHyper& h) : params_(std::move(params)), h_(h) {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  // Global gradient norm before clipping.
  double grad_norm() const {
    double total = 0.0;
    for (const auto& p : params_)
      for (double g : p.grad()) total += g * g;
    return std::sqrt(total);
  }

  void step() {
    ++t_;
    const double norm = grad_norm();
    const double clip = h_.grad_clip > 0 && norm > h_.grad_clip ? h_.grad_clip / norm : 1.0;
    const double c1 = 1.0 - std::pow(h_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(h_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (!p.has_grad()) continue;
      auto data = p.mutable_data();
      const auto g = p.grad();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < data.size(); ++j) {
        const double gj = g[j] * clip;
        m[j] = h_.beta1 * m[j] + (1.0 - h_.beta1) * gj;
        v[j] = h_.beta2 * v[j] + (1.0 - h_.beta2) * gj * gj;
        data[j] -= h_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + h_.eps);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::vector<Tensor> params_;
  TrainHyper h_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

// Mini-batch Adam on teacher-forced cross-entropy. Example order is
// reshuffled each epoch from `seed`.
using EpochCallback = std::function<void(std::size_t epoch, double mean_loss)>;

inline TrainResult train(Model& model, const std::vector<Example>& examples, const TrainHyper& hyper,
                         std::uint64_t seed, const EpochCallback& on_epoch = {}) {
  if (examples.empty()) throw ContractError("train: empty training set");
  if (hyper.batch_size == 0) throw ConfigError("train: batch_size must be positive");
  Adam opt(model.parameters(), hyper);
  opt.zero_grad();
  Rng rng(derive_seed(seed, 100));
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  TrainResult result;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      const std::uint64_t bound = i + 1;
      const std::uint64_t limit = Rng::max() - Rng::max() % bound;
      std::uint64_t r;
      do r = rng(); while (r >= limit);
      std::swap(order[i], order[r % bound]);
    }
    double epoch_total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
      const std::size_t end = std::min(order.size(), start + hyper.batch_size);
      const double inv = 1.0 / static_cast<double>(end - start);
      double batch_total = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        Tensor loss = model.loss(examples[order[k]]);
        const double value = loss.item();
        if (!std::isfinite(value)) {
          throw DivergenceError(step, "non-finite loss on example " + std::to_string(order[k]));
        }
        backward(scale(loss, inv));
        batch_total += value;
      }
      if (!std::isfinite(opt.grad_norm())) throw DivergenceError(step, "non-finite gradient norm");
      opt.step();
      opt.zero_grad();
      result.step_losses.push_back(batch_total * inv);
      epoch_total += batch_total;
      ++step;
    }
    result.epoch_losses.push_back(epoch_total / static_cast<double>(order.size()));
    if (on_epoch) on_epoch(epoch, result.epoch_losses.back());
  }
  return result;
}

struct TrainedModel {
  Model model;
  Vocabulary vocab;
  TrainResult history;
};

inline std::vector<Example> prepare_examples(const std::vector<DialogueInstance>& corpus, const Vocabulary& vocab,
                                             const ModelConfig& cfg) {
  std::vector<Example> out;
  out.reserve(corpus.size());
  for (const auto& d : corpus) out.push_back(prepare_example(d, vocab, cfg));
  return out;
}

// Builds the vocabulary from `train_split`, sizes the model to it and
// trains. cfg.seed drives initialisation and shuffling.
using ModelCallback = std::function<void(std::size_t epoch, const Model&, const Vocabulary&)>;

inline TrainedModel train_model(const std::vector<DialogueInstance>& train_split, ModelConfig cfg,
                                const TrainHyper& hyper, const ModelCallback& on_epoch = {}) {
  if (train_split.empty()) throw ContractError("train: empty training split");
  cfg.validate();
  Vocabulary vocab = build_vocabulary(train_split);
  cfg.vocab_size = vocab.size();
  Model model(cfg);
  auto examples = prepare_examples(train_split, vocab, cfg);
  EpochCallback cb;
  if (on_epoch) cb = [&](std::size_t epoch, double) { on_epoch(epoch, model, vocab); };
  TrainResult history = train(model, examples, hyper, cfg.seed, cb);
  return {std::move(model), std::move(vocab), std::move(history)};
}

}  // namespace maf
