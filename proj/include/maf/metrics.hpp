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

// Generation metrics: ROUGE-1/2/L F1, BLEU-1..4 and source/target
// identification accuracy. Every score is computed per instance (single
// reference) and averaged arithmetically over the corpus.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "maf/errors.hpp"
#include "maf/tokenizer.hpp"

namespace maf {

namespace metrics_detail {

using Counts = std::map<std::vector<std::string>, std::size_t>;

inline Counts ngram_counts(const std::vector<std::string>& toks, std::size_t n) {
  Counts c;
  if (toks.size() < n || n == 0) return c;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) ++c[{toks.begin() + i, toks.begin() + i + n}];
  return c;
}

// Clipped overlap and the two totals.
struct Overlap {
  std::size_t matched = 0, hyp_total = 0, ref_total = 0;
};

inline Overlap overlap(const std::vector<std::string>& hyp, const std::vector<std::string>& ref, std::size_t n) {
  Overlap o;
  const auto h = ngram_counts(hyp, n);
  const auto r = ngram_counts(ref, n);
  for (const auto& [g, c] : h) {
    o.hyp_total += c;
    auto it = r.find(g);
    if (it != r.end()) o.matched += std::min(c, it->second);
  }
  for (const auto& [g, c] : r) o.ref_total += c;
  return o;
}

inline double f1(double p, double r) { return p + r > 0 ? 2 * p * r / (p + r) : 0.0; }

inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace metrics_detail

inline double rouge_n(const std::string& hyp, const std::string& ref, std::size_t n) {
  const auto o = metrics_detail::overlap(tokenize(hyp), tokenize(ref), n);
  if (o.matched == 0) return 0.0;
  return metrics_detail::f1(static_cast<double>(o.matched) / static_cast<double>(o.hyp_total),
                            static_cast<double>(o.matched) / static_cast<double>(o.ref_total));
}

inline double rouge_l(const std::string& hyp, const std::string& ref) {
  const auto h = tokenize(hyp), r = tokenize(ref);
  const std::size_t lcs = metrics_detail::lcs_length(h, r);
  if (lcs == 0) return 0.0;
  return metrics_detail::f1(static_cast<double>(lcs) / static_cast<double>(h.size()),
                            static_cast<double>(lcs) / static_cast<double>(r.size()));
}

inline constexpr double kBleuEpsilon = 1e-9;

// Geometric mean of clipped n-gram precisions for orders 1..k times the
// brevity penalty exp(1 - |ref| / |hyp|) when the hypothesis is shorter.
// A zero precision makes the score 0 unless `smooth` replaces it by 1e-9.
inline double bleu_k(const std::string& hyp, const std::string& ref, std::size_t k, bool smooth = false) {
  if (k < 1 || k > 4) throw ContractError("bleu_k: order must be in 1..4");
  const auto h = tokenize(hyp), r = tokenize(ref);
  if (h.empty()) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 1; n <= k; ++n) {
    const auto o = metrics_detail::overlap(h, r, n);
    double p = o.hyp_total ? static_cast<double>(o.matched) / static_cast<double>(o.hyp_total) : 0.0;
    if (p == 0.0) {
      if (!smooth) return 0.0;
      p = kBleuEpsilon;
    }
    log_sum += std::log(p);
  }
  const double ratio = static_cast<double>(r.size()) / static_cast<double>(h.size());
  const double bp = h.size() >= r.size() ? 1.0 : std::exp(1.0 - ratio);
  return bp * std::exp(log_sum / static_cast<double>(k));
}

struct SourceTarget {
  std::string sarcasm_source;
  std::string sarcasm_target;
};

// Percent of hypotheses containing the gold source (target) as a token,
// case-insensitively. Multi-token names must appear as a contiguous run.
inline std::pair<double, double> source_target_accuracy(const std::vector<std::string>& hyps,
                                                        const std::vector<SourceTarget>& golds) {
  if (hyps.size() != golds.size()) {
    throw ContractError("source_target_accuracy: " + std::to_string(hyps.size()) + " hypotheses for " +
                        std::to_string(golds.size()) + " references");
  }
  if (hyps.empty()) return {0.0, 0.0};
  auto contains = [](const std::vector<std::string>& toks, const std::string& name) {
    const auto needle = tokenize(name);
    if (needle.empty()) return false;
    return std::search(toks.begin(), toks.end(), needle.begin(), needle.end()) != toks.end();
  };
  std::size_t src = 0, tgt = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto toks = tokenize(hyps[i]);
    src += contains(toks, golds[i].sarcasm_source);
    tgt += contains(toks, golds[i].sarcasm_target);
  }
  const double n = static_cast<double>(hyps.size());
  return {100.0 * static_cast<double>(src) / n, 100.0 * static_cast<double>(tgt) / n};
}

// ---------------------------------------------------------------------------
// Reports.

// All values in percent. The last two only exist for tasks that define an
// action vocabulary (the synthetic task).
struct MetricValues {
  double r1 = 0, r2 = 0, rl = 0, b1 = 0, b2 = 0, b3 = 0, b4 = 0;
  double source_acc = 0, target_acc = 0;
  std::optional<double> action_acc;
  std::optional<double> exact_match;
};

inline MetricValues score_corpus(const std::vector<std::string>& hyps, const std::vector<std::string>& refs,
                                 const std::vector<SourceTarget>& golds) {
  if (hyps.size() != refs.size()) throw ContractError("score_corpus: hypothesis/reference count mismatch");
  MetricValues v;
  if (hyps.empty()) return v;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    v.r1 += rouge_n(hyps[i], refs[i], 1);
    v.r2 += rouge_n(hyps[i], refs[i], 2);
    v.rl += rouge_l(hyps[i], refs[i]);
    v.b1 += bleu_k(hyps[i], refs[i], 1);
    v.b2 += bleu_k(hyps[i], refs[i], 2);
    v.b3 += bleu_k(hyps[i], refs[i], 3);
    v.b4 += bleu_k(hyps[i], refs[i], 4);
  }
  const double scale = 100.0 / static_cast<double>(hyps.size());
  for (double* x : {&v.r1, &v.r2, &v.rl, &v.b1, &v.b2, &v.b3, &v.b4}) *x *= scale;
  std::tie(v.source_acc, v.target_acc) = source_target_accuracy(hyps, golds);
  return v;
}

struct MetricRow {
  std::string variant;
  std::size_t fusion_layer = 0;
  std::string seed;  // a number, or "mean" for aggregate rows
  std::string config_hash;
  std::string version;
  std::size_t runs = 1;
  MetricValues values;
  std::optional<MetricValues> stddev;  // aggregate rows only
};

struct MetricReport {
  std::string title;
  std::vector<std::string> notes;
  std::vector<MetricRow> rows;
};

namespace metrics_detail {

inline std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}
inline std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : "-"; }

struct Column {
  const char* name;
  std::optional<double> (*get)(const MetricValues&);
};

// ROUGE, BLEU, METEOR and BERTScore (never computed), identification
// accuracies, then the synthetic-task columns.
inline const std::vector<Column>& columns() {
  static const std::vector<Column> cols = {
      {"R1", [](const MetricValues& v) -> std::optional<double> { return v.r1; }},
      {"R2", [](const MetricValues& v) -> std::optional<double> { return v.r2; }},
      {"RL", [](const MetricValues& v) -> std::optional<double> { return v.rl; }},
      {"B1", [](const MetricValues& v) -> std::optional<double> { return v.b1; }},
      {"B2", [](const MetricValues& v) -> std::optional<double> { return v.b2; }},
      {"B3", [](const MetricValues& v) -> std::optional<double> { return v.b3; }},
      {"B4", [](const MetricValues& v) -> std::optional<double> { return v.b4; }},
      {"METEOR", [](const MetricValues&) -> std::optional<double> { return std::nullopt; }},
      {"BERTScore", [](const MetricValues&) -> std::optional<double> { return std::nullopt; }},
      {"source_acc", [](const MetricValues& v) -> std::optional<double> { return v.source_acc; }},
      {"target_acc", [](const MetricValues& v) -> std::optional<double> { return v.target_acc; }},
      {"action_acc", [](const MetricValues& v) { return v.action_acc; }},
      {"exact_match", [](const MetricValues& v) { return v.exact_match; }},
  };
  return cols;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace metrics_detail

inline std::vector<std::string> metric_column_names() {
  std::vector<std::string> names;
  for (const auto& c : metrics_detail::columns()) names.emplace_back(c.name);
  return names;
}

// One header line, then one line per row. Aggregate rows carry a *_sd
// column after each value; run rows leave them empty.
inline std::string render_csv(const MetricReport& report) {
  std::ostringstream os;
  os << "variant,fusion_layer,seed,runs,config_hash,version";
  for (const auto& c : metrics_detail::columns()) os << ',' << c.name << ',' << c.name << "_sd";
  os << '\n';
  for (const auto& r : report.rows) {
    os << r.variant << ',' << r.fusion_layer << ',' << r.seed << ',' << r.runs << ',' << r.config_hash << ','
       << r.version;
    for (const auto& c : metrics_detail::columns()) {
      os << ',' << metrics_detail::fmt(c.get(r.values)) << ',';
      if (r.stddev) os << metrics_detail::fmt(c.get(*r.stddev));
    }
    os << '\n';
  }
  return os.str();
}

// Aligned plain-text table with the same column order as the CSV.
inline std::string render_text(const MetricReport& report) {
  std::vector<std::string> header = {"variant", "layer", "seed"};
  for (const auto& c : metrics_detail::columns()) header.emplace_back(c.name);
  std::vector<std::vector<std::string>> cells;
  for (const auto& r : report.rows) {
    std::vector<std::string> row = {r.variant, std::to_string(r.fusion_layer), r.seed};
    for (const auto& c : metrics_detail::columns()) {
      std::string cell = metrics_detail::fmt(c.get(r.values));
      if (r.stddev && c.get(*r.stddev)) cell += "±" + metrics_detail::fmt(c.get(*r.stddev));
      row.push_back(cell);
    }
    cells.push_back(std::move(row));
  }
  // Display width: count UTF-8 lead bytes only.
  auto width = [](const std::string& s) {
    std::size_t w = 0;
    for (unsigned char ch : s) w += (ch & 0xC0) != 0x80;
    return w;
  };
  std::vector<std::size_t> widths(header.size());
  for (std::size_t i = 0; i < header.size(); ++i) {
    widths[i] = width(header[i]);
    for (const auto& row : cells) widths[i] = std::max(widths[i], width(row[i]));
  }
  std::ostringstream os;
  if (!report.title.empty()) os << report.title << '\n';
  for (const auto& n : report.notes) os << "# " << n << '\n';
  auto line = [&](const std::vector<std::string>& row) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) os << "  ";
      os << row[i];
      if (i + 1 < row.size()) os << std::string(widths[i] - width(row[i]), ' ');
    }
    os << '\n';
  };
  line(header);
  std::size_t total = 0;
  for (auto w : widths) total += w + 2;
  os << std::string(total - 2, '-') << '\n';
  for (const auto& row : cells) line(row);
  return os.str();
}

// Reads rows written by render_csv. Blank cells become empty optionals.
inline std::vector<MetricRow> parse_metric_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<MetricRow> rows;
  if (!std::getline(in, line)) return rows;
  const auto header = metrics_detail::split_csv_line(line);
  const auto& cols = metrics_detail::columns();
  if (header.size() != 6 + 2 * cols.size() || header[0] != "variant") {
    throw ParseError(1, "not a metric table header");
  }
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = metrics_detail::split_csv_line(line);
    if (f.size() != header.size()) throw ParseError(lineno, "wrong number of metric columns");
    MetricRow r;
    try {
      r.variant = f[0];
      r.fusion_layer = std::stoul(f[1]);
      r.seed = f[2];
      r.runs = std::stoul(f[3]);
      r.config_hash = f[4];
      r.version = f[5];
      auto read = [&](std::size_t offset, bool& any) {
        std::array<std::optional<double>, 13> vals{};
        for (std::size_t i = 0; i < cols.size(); ++i) {
          const auto& cell = f[6 + 2 * i + offset];
          if (!cell.empty()) any = true;
          if (!cell.empty() && cell != "-") vals[i] = std::stod(cell);
        }
        return MetricValues{vals[0].value_or(0), vals[1].value_or(0), vals[2].value_or(0), vals[3].value_or(0),
                            vals[4].value_or(0), vals[5].value_or(0), vals[6].value_or(0), vals[9].value_or(0),
                            vals[10].value_or(0), vals[11], vals[12]};
      };
      bool unused = false, has_sd = false;
      r.values = read(0, unused);
      const MetricValues sd = read(1, has_sd);
      if (has_sd) r.stddev = sd;
    } catch (const std::exception&) {
      throw ParseError(lineno, "unreadable metric value");
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace maf
