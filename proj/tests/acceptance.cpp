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

// Acceptance run: one PASS/FAIL line per criterion, exit status 1 when any
// criterion fails. Takes several minutes (the synthetic grid dominates).

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "maf/experiments.hpp"
#include "maf/gif.hpp"
#include "maf/mca2.hpp"
#include "reference.hpp"

namespace maf {
namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;
using testing::max_abs_diff;
using testing::random_tensor;
using testing::to_matrix;

double Seconds(Clock::time_point since) { return std::chrono::duration<double>(Clock::now() - since).count(); }

struct Verdict {
  bool pass = true;
  std::ostringstream detail;
  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

int failures = 0;

void Report(const std::string& name, const std::function<void(Verdict&)>& body) {
  Verdict v;
  try {
    body(v);
  } catch (const std::exception& e) {
    v.pass = false;
    v.detail << " [exception: " << e.what() << "]";
  }
  failures += !v.pass;
  std::cout << (v.pass ? "PASS " : "FAIL ") << name << ":" << v.detail.str() << std::endl;
}

bool BitEqual(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (std::size_t i = 0; i < a.numel(); ++i)
    if (a.data()[i] != b.data()[i]) return false;
  return true;
}

void RandomizeModel(Model& m, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> dist(0, scale);
  m.for_each_parameter([&](const std::string&, const Tensor& t) {
    Tensor p = t;
    for (double& x : p.mutable_data()) x += dist(rng);
  });
}

Example RandomExample(std::mt19937_64& rng, const ModelConfig& cfg, std::size_t text_len, std::size_t frames,
                      std::size_t windows) {
  std::uniform_int_distribution<int> tok(4, static_cast<int>(cfg.vocab_size) - 1);
  Example ex;
  for (std::size_t i = 0; i < text_len; ++i) ex.text_ids.push_back(tok(rng));
  ex.audio = random_tensor({frames, cfg.audio_input_dim}, rng);
  ex.video = random_tensor({windows, cfg.video_input_dim}, rng);
  ex.target_ids = {Vocabulary::kBos, tok(rng), tok(rng), tok(rng), Vocabulary::kEos};
  return ex;
}

// ---------------------------------------------------------------------------

void GradientSuite(Verdict& v) {
  const auto start = Clock::now();
  ModelConfig cfg;
  cfg.vocab_size = 10;
  cfg.d = 8;
  cfg.ffn = 16;
  cfg.heads = 2;
  cfg.encoder_layers = 2;
  cfg.decoder_layers = 2;
  cfg.fusion_layer_index = 2;
  cfg.audio_input_dim = 3;
  cfg.video_input_dim = 4;
  cfg.d_c_audio = 5;
  cfg.d_c_video = 6;
  cfg.max_text_len = 4;
  cfg.max_frames = 4;
  cfg.max_windows = 4;
  cfg.variant = Variant::kMaf;
  Model m(cfg);
  std::mt19937_64 rng(2024);
  RandomizeModel(m, rng, 0.3);
  const Example ex = RandomExample(rng, cfg, 4, 4, 3);
  std::vector<std::pair<std::string, Tensor>> leaves;
  m.for_each_parameter([&](const std::string& n, const Tensor& t) { leaves.emplace_back(n, t); });
  std::size_t mca2 = 0, gif = 0;
  for (const auto& [n, t] : leaves) {
    mca2 += n.starts_with("adapter.audio.") || n.starts_with("adapter.video.");
    gif += n.starts_with("adapter.gif.");
  }
  const auto reports = testing::check_grads([&] { return m.loss(ex); }, leaves);
  double worst = 0;
  std::string worst_name;
  for (const auto& r : reports)
    if (r.error >= worst) {
      worst = r.error;
      worst_name = r.name;
    }
  const double secs = Seconds(start);
  v.detail << " " << reports.size() << " tensors (MCA2 " << mca2 << ", GIF " << gif << "), worst relative error "
           << worst << " (" << worst_name << "), " << secs << " s";
  v.check(mca2 == 18, "expected 9 MCA2 matrices per modality");
  v.check(gif == 4, "expected 4 GIF tensors");
  v.check(worst < 1e-4, "relative error < 1e-4");
  v.check(secs < 60, "runtime < 60 s");
}

Mca2Params RandomMca2(std::size_t d, std::size_t dc, std::mt19937_64& rng) {
  Mca2Params p = Mca2Params::zeros(d, dc);
  p.for_each([&](const char*, Tensor& t) { t = random_tensor(t.shape(), rng, 0.5); });
  return p;
}

GifParams RandomGif(std::size_t d, std::mt19937_64& rng) {
  GifParams p = GifParams::zeros(d);
  p.for_each([&](const char*, Tensor& t) { t = random_tensor(t.shape(), rng, 0.5); });
  return p;
}

void EquationOracles(Verdict& v) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> dim(1, 8);
  double worst_mca2 = 0, worst_gif = 0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = dim(rng), d = dim(rng), dc = dim(rng);
    const Mca2Params p = RandomMca2(d, dc, rng);
    const Tensor h = random_tensor({n, d}, rng), c = random_tensor({n, dc}, rng);
    const auto r = testing::mca2_reference(to_matrix(h), to_matrix(c), to_matrix(p.w_q), to_matrix(p.w_k),
                                           to_matrix(p.w_v), to_matrix(p.u_k), to_matrix(p.u_v), to_matrix(p.w_k1),
                                           to_matrix(p.w_k2), to_matrix(p.w_v1), to_matrix(p.w_v2));
    const auto t = mca2_trace(h, c, p);
    for (double e : {max_abs_diff(t.lambda_k, r.lambda_k), max_abs_diff(t.lambda_v, r.lambda_v),
                     max_abs_diff(t.k_hat, r.k_hat), max_abs_diff(t.v_hat, r.v_hat),
                     max_abs_diff(mca2_forward(h, c, p), r.output)})
      worst_mca2 = std::max(worst_mca2, e);
  }
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = dim(rng), d = dim(rng);
    const GifParams p = RandomGif(d, rng);
    const Tensor h = random_tensor({n, d}, rng), ha = random_tensor({n, d}, rng), hv = random_tensor({n, d}, rng);
    const auto r = testing::gif_reference(to_matrix(h), to_matrix(ha), to_matrix(hv), to_matrix(p.w_a),
                                          to_matrix(p.b_a), to_matrix(p.w_v), to_matrix(p.b_v));
    worst_gif = std::max(worst_gif, max_abs_diff(gif_fuse(h, ha, hv, p), r));
  }
  v.detail << " 100 MCA2 instances max diff " << worst_mca2 << "; 100 GIF instances max diff " << worst_gif;
  v.check(worst_mca2 <= 1e-12, "MCA2 within 1e-12");
  v.check(worst_gif <= 1e-12, "GIF within 1e-12");
}

void ReductionInvariants(Verdict& v) {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> dim(1, 6);
  double worst_lambda = 0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = dim(rng), d = dim(rng), dc = dim(rng);
    const Mca2Params p = RandomMca2(d, dc, rng);
    const Tensor h = random_tensor({n, d}, rng), c = random_tensor({n, dc}, rng);
    const Tensor out = mca2_forward(h, c, p, {.heads = 1, .pinned_lambda = 0.0});
    const auto plain = testing::product(
        [&] {
          // softmax(Q K^T / sqrt d) by loops
          const auto q = testing::product(to_matrix(h), to_matrix(p.w_q));
          const auto k = testing::product(to_matrix(h), to_matrix(p.w_k));
          testing::Matrix w(n, std::vector<double>(n));
          for (std::size_t a = 0; a < n; ++a) {
            double mx = -1e300;
            for (std::size_t b = 0; b < n; ++b) {
              double s = 0;
              for (std::size_t x = 0; x < d; ++x) s += q[a][x] * k[b][x];
              w[a][b] = s / std::sqrt(static_cast<double>(d));
              mx = std::max(mx, w[a][b]);
            }
            double z = 0;
            for (double& x : w[a]) z += (x = std::exp(x - mx));
            for (double& x : w[a]) x /= z;
          }
          return w;
        }(),
        testing::product(to_matrix(h), to_matrix(p.w_v)));
    worst_lambda = std::max(worst_lambda, max_abs_diff(out, plain));
  }
  bool gif_identity = true;
  for (int i = 0; i < 100; ++i) {
    const std::size_t n = dim(rng), d = dim(rng);
    const Tensor h = random_tensor({n, d}, rng, 3.0);
    gif_identity &= BitEqual(gif_fuse(h, random_tensor({n, d}, rng, 3.0), random_tensor({n, d}, rng, 3.0),
                                      GifParams::zeros(d)),
                             h);
  }
  ModelConfig cfg;
  cfg.vocab_size = 20;
  cfg.d = 16;
  cfg.ffn = 32;
  cfg.audio_input_dim = 5;
  cfg.video_input_dim = 7;
  cfg.max_text_len = 8;
  bool step0 = true;
  for (Variant var : {Variant::kMaf, Variant::kDpa, Variant::kConcat1, Variant::kTA, Variant::kTV}) {
    ModelConfig fc = cfg, tc = cfg;
    fc.variant = var;
    tc.variant = Variant::kTextOnly;
    const Model fused(fc), text(tc);
    for (int i = 0; i < 10; ++i) {
      const Example ex = RandomExample(rng, cfg, 1 + static_cast<std::size_t>(i) % 8, 6, 4);
      step0 &= BitEqual(fused.encode(ex.text_ids, ex.audio, ex.video), text.encode(ex.text_ids, ex.audio, ex.video));
      step0 &= fused.loss(ex).item() == text.loss(ex).item();
      step0 &= fused.generate(ex, 6) == text.generate(ex, 6);
    }
  }
  v.detail << " lambda=0 vs plain attention max diff " << worst_lambda << "; zero GIF identity "
           << (gif_identity ? "bit-exact" : "broken") << "; zero-init adapters vs TextOnly at step 0 "
           << (step0 ? "bit-identical" : "differ");
  v.check(worst_lambda <= 1e-12, "lambda collapse within 1e-12");
  v.check(gif_identity, "zero GIF bit-exact");
  v.check(step0, "zero-init adapter equals TextOnly");
}

// The synthetic grid backs two criteria.
struct GapRun {
  GapReport gap;
  double seconds = 0;
};

ExperimentConfig GapConfig() {
  ExperimentConfig c;
  c.synthetic = {};  // S=6 A=5 T=6 f=12 w=8 noise 0.1
  c.synthetic.num_instances = 600;
  c.synthetic_test = 100;
  c.model.d = 32;
  c.model.ffn = 64;
  c.model.heads = 2;
  c.model.max_text_len = 16;
  c.model.fusion_layer_index = 2;
  c.train.epochs = 8;
  c.train.batch_size = 16;
  c.train.lr = 1e-3;
  c.seeds = {1, 2, 3};
  c.variants = gap_variants();
  c.decode_max_len = 8;
  return c;
}

GapRun RunGap() {
  const auto start = Clock::now();
  const ExperimentConfig c = GapConfig();
  c.validate();
  const Splits splits = load_splits(c);
  std::vector<RunOutcome> outcomes;
  std::map<Variant, std::vector<const TrainedModel*>> trained;
  outcomes.reserve(c.variants.size() * c.seeds.size());
  for (Variant var : c.variants)
    for (std::uint64_t s : c.seeds) {
      outcomes.push_back(run_once(c, splits, var, s, c.model.fusion_layer_index));
      const auto& o = outcomes.back();
      std::cout << "  " << o.row.variant << " seed " << s << ": action " << *o.row.values.action_acc << " target "
                << o.row.values.target_acc << " exact " << *o.row.values.exact_match << " ("
                << static_cast<int>(Seconds(start)) << " s)" << std::endl;
      trained[var].push_back(&o.trained);
    }
  GapRun r;
  r.gap = evaluate_gap(trained, splits.test, c.decode_max_len);
  r.seconds = Seconds(start);
  std::cout << render_gap(r.gap);
  return r;
}

void SyntheticGap(Verdict& v, const GapRun& run) {
  const double text = run.gap.at(Variant::kTextOnly).mean_action;
  const double margin = run.gap.action_margin(Variant::kMaf);
  v.detail << " TextOnly action " << text << "% (floor 20%), MAF " << run.gap.at(Variant::kMaf).mean_action
           << "%, margin " << margin << " points, grid " << run.seconds << " s";
  v.check(std::abs(text - 20.0) <= 10.0, "TextOnly within 10 points of 1/A");
  v.check(margin >= 30.0, "MAF exceeds TextOnly by >= 30 points");
  v.check(run.seconds <= 15 * 60, "runtime <= 15 min");
}

void Concat2Ordering(Verdict& v, const GapRun& run) {
  const double gap = run.gap.exact_margin(Variant::kMaf, Variant::kConcat2);
  v.detail << " MAF exact-match " << run.gap.at(Variant::kMaf).mean_exact << "%, Concat2 "
           << run.gap.at(Variant::kConcat2).mean_exact << "%, gap " << gap << " points";
  v.check(gap >= 10.0, "Concat2 >= 10 points below MAF");
}

void MetricsOracle(Verdict& v) {
  struct Case {
    double got, want;
    const char* what;
  };
  const Case cases[] = {
      {rouge_n("a b c", "a b d", 1), 2.0 / 3.0, "R1 hand count"},
      {rouge_l("a c b", "a b c"), 2.0 / 3.0, "RL hand LCS"},
      {bleu_k("a b", "a b c", 1), std::exp(1.0 - 3.0 / 2.0), "B1 brevity penalty"},
      {bleu_k("a b c d", "a b c e", 4), 0.0, "B4 without smoothing"},
      {rouge_n("x y", "a b", 1), 0.0, "disjoint R1"},
  };
  std::size_t ok = 0;
  for (const auto& c : cases) {
    const bool hit = std::abs(c.got - c.want) <= 1e-9;
    ok += hit;
    v.check(hit, c.what);
  }
  const std::string s = "maya taunts monisha about her cooking";
  bool identity = rouge_n(s, s, 1) == 1.0 && rouge_n(s, s, 2) == 1.0 && rouge_l(s, s) == 1.0;
  for (std::size_t k = 1; k <= 4; ++k) identity &= std::abs(bleu_k(s, s, k) - 1.0) <= 1e-15;
  v.check(identity, "identity pairs score 1");

  MetricRow row;
  row.variant = "MAF";
  row.seed = "1";
  MetricReport rep{"", {}, {row}};
  const std::string text = render_text(rep);
  std::istringstream lines(text);
  std::string header, rule, body;
  std::getline(lines, header);
  std::getline(lines, rule);
  std::getline(lines, body);
  auto cell = [](const std::string& line, std::size_t col) {
    std::istringstream ws(line);
    std::string w;
    for (std::size_t i = 0; i <= col && ws >> w;) ++i;
    return w;
  };
  const auto names = metric_column_names();
  const bool layout = names.size() >= 9 && names[0] == "R1" && names[1] == "R2" && names[2] == "RL" &&
                      names[3] == "B1" && names[6] == "B4" && names[7] == "METEOR" && names[8] == "BERTScore" &&
                      cell(header, 10) == "METEOR" && cell(body, 10) == "-" && cell(body, 11) == "-" &&
                      render_csv(rep).find(",-,,-,") != std::string::npos;
  v.check(layout, "layout with dashes for METEOR/BERTScore");
  v.detail << " " << ok << "/" << std::size(cases) << " hand examples within 1e-9; identity "
           << (identity ? "1.0" : "wrong") << "; layout R1 R2 RL B1-B4 METEOR(-) BERTScore(-) "
           << (layout ? "ok" : "wrong");
}

void DataPipeline(Verdict& v) {
  std::vector<DialogueInstance> corpus(2240);
  for (std::size_t i = 0; i < corpus.size(); ++i) corpus[i].id = "d" + std::to_string(i);
  const auto s = split(corpus, 0);
  v.detail << " split " << s.train.size() << "/" << s.validation.size() << "/" << s.test.size();
  v.check(s.train.size() == 1792 && s.validation.size() == 224 && s.test.size() == 224, "1792/224/224");

  const auto same = merge_annotations("maya taunts monisha", "maya taunts monisha");
  const auto disjoint = merge_annotations("maya taunts monisha", "rosesh recites poetry");
  const auto hand = merge_annotations("maya taunts monisha for cooking", "maya taunts monisha for her cooking skills");
  const double cosine = 5.0 / std::sqrt(5.0 * 7.0);
  const bool merges = same.similarity == 1.0 && same.chosen && *same.chosen == "maya taunts monisha" &&
                      disjoint.similarity == 0.0 && disjoint.is_conflict() &&
                      std::abs(hand.similarity - cosine) <= 1e-15 && hand.is_conflict();
  v.check(merges, "merge_annotations branch examples");
  v.detail << "; merge branches " << (merges ? "3/3" : "wrong") << " (hand cosine " << hand.similarity << ")";

  struct Fixture {
    const char* file;
    const char* needle;
  };
  const Fixture fixtures[] = {
      {"bad_one_utterance.jsonl", "at least 2 utterances"},
      {"bad_source_absent.jsonl", "among the utterance speakers"},
      {"bad_empty_audio.jsonl", "non-empty"},
      {"bad_ragged_video.jsonl", "same length"},
      {"bad_empty_explanation.jsonl", "non-empty"},
      {"bad_duplicate_id.jsonl", "duplicate"},
      {"bad_non_finite.jsonl", "finite"},
      {"bad_missing_field.jsonl", "missing field 'explanation'"},
      {"bad_unknown_field.jsonl", "unknown field 'emotion'"},
      {"bad_not_json.jsonl", "malformed record"},
      {"bad_wrong_type.jsonl", "'id' must be a string"},
      {"bad_missing_sidecar.jsonl", "cannot read matrix file"},
  };
  std::size_t rejected = 0;
  for (const auto& f : fixtures) {
    try {
      load_and_validate(fs::path(MAF_TEST_DATA_DIR) / f.file);
    } catch (const ValidationError& e) {
      rejected += e.line() == 2 && std::string(e.what()).find(f.needle) != std::string::npos;
    } catch (const ParseError& e) {
      rejected += e.line() == 2 && std::string(e.what()).find(f.needle) != std::string::npos;
    }
  }
  v.check(rejected == std::size(fixtures), "every fixture rejected with its diagnostic");
  v.detail << "; fixtures rejected with diagnostics " << rejected << "/" << std::size(fixtures);
}

std::map<std::string, std::string> ReadTree(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    files[fs::relative(e.path(), dir).string()] = ss.str();
  }
  return files;
}

void Determinism(Verdict& v) {
  const fs::path root = fs::temp_directory_path() / "maf_acceptance_determinism";
  fs::remove_all(root);
  auto everything = [&](const std::string& tag) {
    ExperimentConfig c;
    c.synthetic.num_instances = 40;
    c.synthetic_test = 20;
    c.model.d = 16;
    c.model.ffn = 32;
    c.train.epochs = 2;
    c.variants = {Variant::kMaf, Variant::kConcat2, Variant::kTextOnly};
    c.seeds = {1, 2};
    c.out = (root / tag).string();
    const auto trained = cmd_train(c);
    cmd_evaluate(c, trained.checkpoint);
    cmd_ablate(c);
    cmd_sweep_fusion_layer(c);
    const auto rep = cmd_report(c.out);
    std::ofstream(fs::path(c.out) / "report.txt", std::ios::binary) << rep.text;
    SyntheticSpec spec;
    spec.num_instances = 20;
    cmd_gen_synthetic(spec, fs::path(c.out) / "syn.jsonl");
    return ReadTree(c.out);
  };
  const auto a = everything("a"), b = everything("b");
  std::size_t metric_files = 0;
  for (const auto& [name, body] : a) metric_files += name.ends_with(".metrics.csv");
  v.detail << " " << a.size() << " files (" << metric_files
           << " metric files) from train/evaluate/ablate/sweep/report/gen-synthetic; repeat "
           << (a == b ? "byte-identical" : "differs");
  v.check(a == b, "byte-identical outputs");
  v.check(metric_files == 3, "three metric files written");
  fs::remove_all(root);
}

}  // namespace
}  // namespace maf

int main() {
  using namespace maf;
  std::cout.setf(std::ios::fmtflags(0), std::ios::floatfield);
  std::cout.precision(4);
  Report("gradient suite", GradientSuite);
  Report("equation oracles", EquationOracles);
  Report("reduction invariants", ReductionInvariants);
  Report("metrics oracle", MetricsOracle);
  Report("data pipeline", DataPipeline);
  Report("determinism", Determinism);
  std::cout << "synthetic grid (5 variants x 3 seeds):" << std::endl;
  GapRun gap;
  bool grid_ok = true;
  try {
    gap = RunGap();
  } catch (const std::exception& e) {
    grid_ok = false;
    std::cout << "  grid failed: " << e.what() << std::endl;
  }
  Report("synthetic fusion gap", [&](Verdict& v) {
    v.check(grid_ok, "grid ran");
    if (grid_ok) SyntheticGap(v, gap);
  });
  Report("Concat2 ablation ordering", [&](Verdict& v) {
    v.check(grid_ok, "grid ran");
    if (grid_ok) Concat2Ordering(v, gap);
  });
  std::cout << (failures ? std::to_string(failures) + " criteria failed" : "all criteria passed") << std::endl;
  return failures ? 1 : 0;
}
