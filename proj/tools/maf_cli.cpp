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

// maf: train, evaluate, ablate, sweep-fusion-layer, gen-synthetic, stats, report.
// Exit codes: 0 ok, 2 config error, 3 runtime or divergence error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "maf/experiments.hpp"

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> variant;
  std::optional<std::string> dataset;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "experiment config (JSON)");
  cmd->add_option("--seed", o.seed, "run a single seed");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--variant", o.variant, "run a single variant");
  cmd->add_option("--dataset", o.dataset, "dataset file (JSONL); synthetic task otherwise");
}

maf::ExperimentConfig resolve(const Overrides& o) {
  maf::ExperimentConfig c = o.config.empty() ? maf::ExperimentConfig{} : maf::load_experiment_config(o.config);
  if (o.seed) c.seeds = {*o.seed};
  if (o.out) c.out = *o.out;
  if (o.variant) c.variants = {maf::parse_variant(*o.variant)};
  if (o.dataset) c.dataset = *o.dataset;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal context-aware adapter experiments"};
  app.require_subcommand(1);

  Overrides train_o, eval_o, ablate_o, sweep_o;
  auto* train = app.add_subcommand("train", "train one variant and write checkpoint.json + loss.tsv");
  add_common(train, train_o);

  auto* evaluate = app.add_subcommand("evaluate", "score a checkpoint on the test split");
  add_common(evaluate, eval_o);
  std::string checkpoint;
  evaluate->add_option("--checkpoint", checkpoint, "checkpoint file")->required();

  auto* ablate = app.add_subcommand("ablate", "every variant x seed, plus seed means");
  add_common(ablate, ablate_o);

  auto* sweep = app.add_subcommand("sweep-fusion-layer", "MAF at every encoder insertion point");
  add_common(sweep, sweep_o);

  auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic corpus as JSONL");
  std::string gen_config, gen_out;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--config", gen_config, "synthetic spec (JSON object)");
  gen->add_option("--seed", gen_seed, "generator seed");
  gen->add_option("--out", gen_out, "output file")->required();

  auto* stats = app.add_subcommand("stats", "corpus statistics");
  std::string stats_dataset;
  stats->add_option("--dataset", stats_dataset, "dataset file (JSONL)")->required();

  auto* report = app.add_subcommand("report", "aggregate *.metrics.csv in a run directory");
  std::string report_dir;
  std::optional<std::string> report_out;
  report->add_option("dir", report_dir, "run directory")->required();
  report->add_option("--out", report_out, "write report.txt and report.csv here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*train) {
      auto c = resolve(train_o);
      auto r = maf::cmd_train(c);
      std::printf("%s variant=%s seed=%llu steps=%zu final_loss=%.6f\n", r.checkpoint.string().c_str(),
                  maf::variant_name(c.variants.front()).c_str(), static_cast<unsigned long long>(c.seeds.front()),
                  r.trained.history.step_losses.size(),
                  r.trained.history.epoch_losses.empty() ? 0.0 : r.trained.history.epoch_losses.back());
    } else if (*evaluate) {
      std::cout << maf::render_text(maf::cmd_evaluate(resolve(eval_o), checkpoint));
    } else if (*ablate) {
      std::cout << maf::render_text(maf::cmd_ablate(resolve(ablate_o)));
    } else if (*sweep) {
      std::cout << maf::render_text(maf::cmd_sweep_fusion_layer(resolve(sweep_o)));
    } else if (*gen) {
      maf::SyntheticSpec spec;
      if (!gen_config.empty()) {
        std::ifstream in(gen_config);
        if (!in) throw maf::ConfigError("gen-synthetic: cannot open " + gen_config);
        try {
          maf::update_from_json(spec, nlohmann::json::parse(in));
        } catch (const nlohmann::json::exception& e) {
          throw maf::ConfigError(std::string("gen-synthetic: ") + e.what());
        }
      }
      if (gen_seed) spec.seed = *gen_seed;
      spec.validate();
      auto corpus = maf::cmd_gen_synthetic(spec, gen_out);
      std::printf("wrote %zu instances to %s\n", corpus.size(), gen_out.c_str());
    } else if (*stats) {
      std::cout << maf::cmd_stats(stats_dataset);
    } else if (*report) {
      auto r = maf::cmd_report(report_dir);
      if (report_out) {
        std::filesystem::create_directories(*report_out);
        std::ofstream(std::filesystem::path(*report_out) / "report.txt", std::ios::binary) << r.text;
        std::ofstream(std::filesystem::path(*report_out) / "report.csv", std::ios::binary) << r.csv;
      }
      std::cout << r.text;
    }
  } catch (const maf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const maf::DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
