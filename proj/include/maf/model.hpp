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

// Desk-scale pre-norm transformer encoder-decoder with a fusion adapter
// inserted before a chosen encoder layer.
//
//   tokens -> embedding * sqrt(d) + sinusoid
//          -> encoder layers 1 .. k-1
//          -> adapter(H, C_audio, C_video)     (k = fusion_layer_index)
//          -> encoder layers k .. L -> final norm
//
// Audio and video matrices pass through their own modality encoder (input
// projection, one single-head encoder layer over frames) and are pooled to
// exactly n rows so they line up with the padded text.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "maf/attention.hpp"
#include "maf/data.hpp"
#include "maf/gif.hpp"
#include "maf/mca2.hpp"
#include "maf/random.hpp"
#include "maf/tensor.hpp"
#include "maf/tokenizer.hpp"

namespace maf {

enum class Variant { kMaf, kConcat1, kConcat2, kDpa, kNoGif, kTextOnly, kTA, kTV };

inline constexpr std::array<Variant, 8> kAllVariants = {Variant::kMaf,   Variant::kConcat1,  Variant::kConcat2,
                                                        Variant::kDpa,   Variant::kNoGif,    Variant::kTextOnly,
                                                        Variant::kTA,    Variant::kTV};

inline std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kMaf: return "MAF";
    case Variant::kConcat1: return "Concat1";
    case Variant::kConcat2: return "Concat2";
    case Variant::kDpa: return "DPA";
    case Variant::kNoGif: return "NoGIF";
    case Variant::kTextOnly: return "TextOnly";
    case Variant::kTA: return "TA";
    case Variant::kTV: return "TV";
  }
  return "?";
}

inline Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants) {
    if (variant_name(v) == name) return v;
  }
  throw ConfigError("unknown variant '" + std::string(name) +
                    "' (expected MAF, Concat1, Concat2, DPA, NoGIF, TextOnly, TA or TV)");
}

struct ModelConfig {
  std::size_t vocab_size = 0;  // filled in from the training vocabulary
  std::size_t d = 64;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t ffn = 128;
  std::size_t heads = 2;
  std::size_t fusion_layer_index = 2;  // 1-based; adapter runs before this layer
  std::size_t audio_input_dim = 16;    // raw feature widths
  std::size_t video_input_dim = 32;
  std::size_t d_c_audio = 16;
  std::size_t d_c_video = 32;
  std::size_t max_text_len = 32;
  std::size_t max_frames = 64;   // longer audio is pooled down to this many frames
  std::size_t max_windows = 64;  // same for video
  Variant variant = Variant::kMaf;
  std::uint64_t seed = 1;
  std::size_t adapter_heads = 1;
  bool sigmoid_gates = false;
  bool post_fusion_layer_norm = false;

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
    if (d == 0 || ffn == 0 || heads == 0 || adapter_heads == 0) fail("widths and head counts must be positive");
    if (d % heads != 0) fail("d=" + std::to_string(d) + " is not divisible by heads=" + std::to_string(heads));
    if (d % adapter_heads != 0) fail("d is not divisible by adapter_heads");
    if (encoder_layers == 0 || decoder_layers == 0) fail("layer counts must be positive");
    if (fusion_layer_index < 1 || fusion_layer_index > encoder_layers) {
      fail("fusion_layer_index=" + std::to_string(fusion_layer_index) + " outside 1.." +
           std::to_string(encoder_layers));
    }
    if (audio_input_dim == 0 || video_input_dim == 0 || d_c_audio == 0 || d_c_video == 0) {
      fail("modality widths must be positive");
    }
    if (max_text_len == 0 || max_frames == 0 || max_windows == 0) fail("length limits must be positive");
  }
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size},
          {"d", c.d},
          {"encoder_layers", c.encoder_layers},
          {"decoder_layers", c.decoder_layers},
          {"ffn", c.ffn},
          {"heads", c.heads},
          {"fusion_layer_index", c.fusion_layer_index},
          {"audio_input_dim", c.audio_input_dim},
          {"video_input_dim", c.video_input_dim},
          {"d_c_audio", c.d_c_audio},
          {"d_c_video", c.d_c_video},
          {"max_text_len", c.max_text_len},
          {"max_frames", c.max_frames},
          {"max_windows", c.max_windows},
          {"variant", variant_name(c.variant)},
          {"seed", c.seed},
          {"adapter_heads", c.adapter_heads},
          {"sigmoid_gates", c.sigmoid_gates},
          {"post_fusion_layer_norm", c.post_fusion_layer_norm}};
}

// Fields absent from `j` keep the values already in `c`.
inline void update_from_json(ModelConfig& c, const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model config must be an object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "vocab_size") c.vocab_size = value.get<std::size_t>();
      else if (key == "d") c.d = value.get<std::size_t>();
      else if (key == "encoder_layers") c.encoder_layers = value.get<std::size_t>();
      else if (key == "decoder_layers") c.decoder_layers = value.get<std::size_t>();
      else if (key == "ffn") c.ffn = value.get<std::size_t>();
      else if (key == "heads") c.heads = value.get<std::size_t>();
      else if (key == "fusion_layer_index") c.fusion_layer_index = value.get<std::size_t>();
      else if (key == "audio_input_dim") c.audio_input_dim = value.get<std::size_t>();
      else if (key == "video_input_dim") c.video_input_dim = value.get<std::size_t>();
      else if (key == "d_c_audio") c.d_c_audio = value.get<std::size_t>();
      else if (key == "d_c_video") c.d_c_video = value.get<std::size_t>();
      else if (key == "max_text_len") c.max_text_len = value.get<std::size_t>();
      else if (key == "max_frames") c.max_frames = value.get<std::size_t>();
      else if (key == "max_windows") c.max_windows = value.get<std::size_t>();
      else if (key == "variant") c.variant = parse_variant(value.get<std::string>());
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "adapter_heads") c.adapter_heads = value.get<std::size_t>();
      else if (key == "sigmoid_gates") c.sigmoid_gates = value.get<bool>();
      else if (key == "post_fusion_layer_norm") c.post_fusion_layer_norm = value.get<bool>();
      else throw ConfigError("model config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Parameters.

struct Linear {
  Tensor w;  // in x out
  Tensor b;  // 1 x out

  static Linear init(std::size_t in, std::size_t out, Rng& rng) {
    return {xavier_uniform(in, out, rng), Tensor::zeros({1, out}, true)};
  }
  Tensor operator()(const Tensor& x) const { return add(matmul(x, w), b); }
};

struct Norm {
  Tensor gain, bias;
  static Norm init(std::size_t d) { return {Tensor::ones({1, d}, true), Tensor::zeros({1, d}, true)}; }
  Tensor operator()(const Tensor& x) const { return layer_norm_rows(x, &gain, &bias); }
};

struct AttentionWeights {
  Tensor wq, wk, wv, wo;
  static AttentionWeights init(std::size_t d, Rng& rng) {
    return {xavier_uniform(d, d, rng), xavier_uniform(d, d, rng), xavier_uniform(d, d, rng),
            xavier_uniform(d, d, rng)};
  }
};

struct EncoderLayerParams {
  Norm ln1;
  AttentionWeights attn;
  Norm ln2;
  Linear ff1, ff2;

  static EncoderLayerParams init(std::size_t d, std::size_t ffn, Rng& rng) {
    EncoderLayerParams p;
    p.ln1 = Norm::init(d);
    p.attn = AttentionWeights::init(d, rng);
    p.ln2 = Norm::init(d);
    p.ff1 = Linear::init(d, ffn, rng);
    p.ff2 = Linear::init(ffn, d, rng);
    return p;
  }
};

struct DecoderLayerParams {
  Norm ln1;
  AttentionWeights self_attn;
  Norm ln2;
  AttentionWeights cross_attn;
  Norm ln3;
  Linear ff1, ff2;

  static DecoderLayerParams init(std::size_t d, std::size_t ffn, Rng& rng) {
    DecoderLayerParams p;
    p.ln1 = Norm::init(d);
    p.self_attn = AttentionWeights::init(d, rng);
    p.ln2 = Norm::init(d);
    p.cross_attn = AttentionWeights::init(d, rng);
    p.ln3 = Norm::init(d);
    p.ff1 = Linear::init(d, ffn, rng);
    p.ff2 = Linear::init(ffn, d, rng);
    return p;
  }
};

struct ModalityEncoderParams {
  Linear input;
  EncoderLayerParams layer;

  static ModalityEncoderParams init(std::size_t raw, std::size_t d_c, Rng& rng) {
    return {Linear::init(raw, d_c, rng), EncoderLayerParams::init(d_c, 2 * d_c, rng)};
  }
};

// Which pieces exist depends on the variant; see init_adapter().
struct AdapterParams {
  std::optional<Mca2Params> audio;
  std::optional<Mca2Params> video;
  std::optional<GifParams> gif;
  std::optional<Linear> concat_audio;  // Concat1: [H ; C_a] -> d
  std::optional<Linear> concat_video;  // Concat1: [H ; C_v] -> d
  std::optional<Linear> concat_all;    // Concat2: [H ; C_a ; C_v] -> d
};

struct ModelParams {
  Tensor embedding;  // vocab x d
  std::vector<EncoderLayerParams> encoder;
  Norm encoder_norm;
  std::vector<DecoderLayerParams> decoder;
  Norm decoder_norm;
  Linear output;  // d x vocab
  std::optional<ModalityEncoderParams> audio_encoder;
  std::optional<ModalityEncoderParams> video_encoder;
  AdapterParams adapter;
};

inline bool uses_audio(Variant v) { return v != Variant::kTextOnly && v != Variant::kTV; }
inline bool uses_video(Variant v) { return v != Variant::kTextOnly && v != Variant::kTA; }

namespace model_detail {

template <typename F>
void visit_norm(const std::string& prefix, const Norm& n, F& f) {
  f(prefix + ".gain", n.gain);
  f(prefix + ".bias", n.bias);
}
template <typename F>
void visit_linear(const std::string& prefix, const Linear& l, F& f) {
  f(prefix + ".w", l.w);
  f(prefix + ".b", l.b);
}
template <typename F>
void visit_attention(const std::string& prefix, const AttentionWeights& a, F& f) {
  f(prefix + ".wq", a.wq);
  f(prefix + ".wk", a.wk);
  f(prefix + ".wv", a.wv);
  f(prefix + ".wo", a.wo);
}
template <typename F>
void visit_encoder_layer(const std::string& prefix, const EncoderLayerParams& p, F& f) {
  visit_norm(prefix + ".ln1", p.ln1, f);
  visit_attention(prefix + ".attn", p.attn, f);
  visit_norm(prefix + ".ln2", p.ln2, f);
  visit_linear(prefix + ".ff1", p.ff1, f);
  visit_linear(prefix + ".ff2", p.ff2, f);
}

}  // namespace model_detail

// Calls f(name, tensor) for every trainable tensor the variant actually
// uses, in a fixed order. Tensor handles share storage, so f may mutate
// values through them.
template <typename F>
void for_each_parameter(const ModelParams& p, Variant variant, F&& f) {
  using namespace model_detail;
  f(std::string("embedding"), p.embedding);
  for (std::size_t i = 0; i < p.encoder.size(); ++i) {
    visit_encoder_layer("encoder." + std::to_string(i), p.encoder[i], f);
  }
  visit_norm("encoder_norm", p.encoder_norm, f);
  for (std::size_t i = 0; i < p.decoder.size(); ++i) {
    const std::string prefix = "decoder." + std::to_string(i);
    const auto& l = p.decoder[i];
    visit_norm(prefix + ".ln1", l.ln1, f);
    visit_attention(prefix + ".self_attn", l.self_attn, f);
    visit_norm(prefix + ".ln2", l.ln2, f);
    visit_attention(prefix + ".cross_attn", l.cross_attn, f);
    visit_norm(prefix + ".ln3", l.ln3, f);
    visit_linear(prefix + ".ff1", l.ff1, f);
    visit_linear(prefix + ".ff2", l.ff2, f);
  }
  visit_norm("decoder_norm", p.decoder_norm, f);
  visit_linear("output", p.output, f);
  if (p.audio_encoder) {
    visit_linear("audio_encoder.input", p.audio_encoder->input, f);
    visit_encoder_layer("audio_encoder.layer", p.audio_encoder->layer, f);
  }
  if (p.video_encoder) {
    visit_linear("video_encoder.input", p.video_encoder->input, f);
    visit_encoder_layer("video_encoder.layer", p.video_encoder->layer, f);
  }
  const auto& a = p.adapter;
  auto visit_mca2 = [&](const std::string& prefix, const Mca2Params& m) {
    if (variant == Variant::kDpa) {
      // Plain cross-attention only touches the query and context projections.
      f(prefix + ".w_q", m.w_q);
      f(prefix + ".u_k", m.u_k);
      f(prefix + ".u_v", m.u_v);
      return;
    }
    auto copy = m;
    copy.for_each([&](const char* name, Tensor& t) { f(prefix + "." + name, static_cast<const Tensor&>(t)); });
  };
  if (a.audio) visit_mca2("adapter.audio", *a.audio);
  if (a.video) visit_mca2("adapter.video", *a.video);
  if (a.gif) {
    if (variant != Variant::kTV) {
      f(std::string("adapter.gif.w_a"), a.gif->w_a);
      f(std::string("adapter.gif.b_a"), a.gif->b_a);
    }
    if (variant != Variant::kTA) {
      f(std::string("adapter.gif.w_v"), a.gif->w_v);
      f(std::string("adapter.gif.b_v"), a.gif->b_v);
    }
  }
  if (a.concat_audio) visit_linear("adapter.concat_audio", *a.concat_audio, f);
  if (a.concat_video) visit_linear("adapter.concat_video", *a.concat_video, f);
  if (a.concat_all) visit_linear("adapter.concat_all", *a.concat_all, f);
}

// Each component draws from its own seeded stream, so the host weights are
// identical across variants that share a seed.
inline ModelParams init_params(const ModelConfig& cfg) {
  cfg.validate();
  if (cfg.vocab_size < 4) throw ConfigError("model config: vocab_size must cover the reserved symbols");
  ModelParams p;
  Rng host(derive_seed(cfg.seed, 0));
  p.embedding = normal({cfg.vocab_size, cfg.d}, 1.0 / std::sqrt(static_cast<double>(cfg.d)), host, true);
  for (std::size_t i = 0; i < cfg.encoder_layers; ++i) {
    p.encoder.push_back(EncoderLayerParams::init(cfg.d, cfg.ffn, host));
  }
  p.encoder_norm = Norm::init(cfg.d);
  for (std::size_t i = 0; i < cfg.decoder_layers; ++i) {
    p.decoder.push_back(DecoderLayerParams::init(cfg.d, cfg.ffn, host));
  }
  p.decoder_norm = Norm::init(cfg.d);
  p.output = Linear::init(cfg.d, cfg.vocab_size, host);

  const Variant v = cfg.variant;
  if (uses_audio(v)) {
    Rng r(derive_seed(cfg.seed, 1));
    p.audio_encoder = ModalityEncoderParams::init(cfg.audio_input_dim, cfg.d_c_audio, r);
  }
  if (uses_video(v)) {
    Rng r(derive_seed(cfg.seed, 2));
    p.video_encoder = ModalityEncoderParams::init(cfg.video_input_dim, cfg.d_c_video, r);
  }
  auto& a = p.adapter;
  const bool attention_based = v == Variant::kMaf || v == Variant::kDpa || v == Variant::kNoGif ||
                               v == Variant::kTA || v == Variant::kTV;
  if (attention_based && uses_audio(v)) {
    Rng r(derive_seed(cfg.seed, 3));
    a.audio = Mca2Params::init(cfg.d, cfg.d_c_audio, r);
  }
  if (attention_based && uses_video(v)) {
    Rng r(derive_seed(cfg.seed, 4));
    a.video = Mca2Params::init(cfg.d, cfg.d_c_video, r);
  }
  if (v == Variant::kMaf || v == Variant::kDpa || v == Variant::kConcat1 || v == Variant::kTA || v == Variant::kTV) {
    a.gif = GifParams::zeros(cfg.d);
  }
  if (v == Variant::kConcat1) {
    Rng r(derive_seed(cfg.seed, 5));
    a.concat_audio = Linear::init(cfg.d + cfg.d_c_audio, cfg.d, r);
    a.concat_video = Linear::init(cfg.d + cfg.d_c_video, cfg.d, r);
  }
  if (v == Variant::kConcat2) {
    Rng r(derive_seed(cfg.seed, 6));
    a.concat_all = Linear::init(cfg.d + cfg.d_c_audio + cfg.d_c_video, cfg.d, r);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Building blocks.

inline constexpr double kMaskedScore = -1e9;

inline Tensor sinusoidal_positions(std::size_t n, std::size_t d) {
  std::vector<double> pe(n * d);
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (std::size_t i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      const double angle = static_cast<double>(pos) * freq;
      pe[pos * d + i] = i % 2 == 0 ? std::sin(angle) : std::cos(angle);
    }
  }
  return Tensor::from({n, d}, std::move(pe));
}

// Contiguous [begin, end) frame ranges for each of n output rows. With
// f >= n the frames split into n runs whose sizes differ by at most one,
// larger runs first. With f < n row i takes frame floor(i * f / n).
inline std::vector<std::pair<std::size_t, std::size_t>> temporal_buckets(std::size_t f, std::size_t n) {
  if (f == 0) throw ContractError("align_temporal: at least one frame is required");
  std::vector<std::pair<std::size_t, std::size_t>> b(n);
  if (f >= n) {
    const std::size_t base = f / n, extra = f % n;
    std::size_t start = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t len = base + (i < extra ? 1 : 0);
      b[i] = {start, start + len};
      start += len;
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t j = i * f / n;
      b[i] = {j, j + 1};
    }
  }
  return b;
}

// Mean-pools frames into exactly n rows. Differentiable (a fixed pooling
// matrix times the features).
inline Tensor align_temporal(const Tensor& features, std::size_t n) {
  detail::require_rank2(features, "align_temporal");
  const std::size_t f = features.rows();
  const auto buckets = temporal_buckets(f, n);
  if (f == n) return features;
  std::vector<double> pool(n * f, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto [s, e] = buckets[i];
    for (std::size_t j = s; j < e; ++j) pool[i * f + j] = 1.0 / static_cast<double>(e - s);
  }
  return matmul(Tensor::from({n, f}, std::move(pool)), features);
}

inline Tensor attention_block(const Tensor& x_q, const Tensor& x_kv, const AttentionWeights& w, std::size_t heads,
                              const Tensor* mask) {
  return matmul(multi_head_attention(matmul(x_q, w.wq), matmul(x_kv, w.wk), matmul(x_kv, w.wv), heads, mask), w.wo);
}

inline Tensor feed_forward(const Tensor& x, const Linear& ff1, const Linear& ff2) { return ff2(gelu(ff1(x))); }

inline Tensor encoder_layer(const Tensor& x, const EncoderLayerParams& p, std::size_t heads, const Tensor* mask) {
  Tensor h = p.ln1(x);
  Tensor y = add(x, attention_block(h, h, p.attn, heads, mask));
  return add(y, feed_forward(p.ln2(y), p.ff1, p.ff2));
}

inline Tensor decoder_layer(const Tensor& y, const Tensor& memory, const DecoderLayerParams& p, std::size_t heads,
                            const Tensor& self_mask, const Tensor& cross_mask) {
  Tensor h = p.ln1(y);
  Tensor z = add(y, attention_block(h, h, p.self_attn, heads, &self_mask));
  z = add(z, attention_block(p.ln2(z), memory, p.cross_attn, heads, &cross_mask));
  return add(z, feed_forward(p.ln3(z), p.ff1, p.ff2));
}

// Modality features (frames x raw width) -> n x d_c context.
inline Tensor encode_modality(const Tensor& features, const ModalityEncoderParams& p, std::size_t n,
                              std::size_t max_frames) {
  if (features.rank() != 2 || features.rows() == 0) {
    throw ContractError("modality input must have at least one frame; represent silence as one all-zero frame");
  }
  if (features.cols() != p.input.w.rows()) {
    throw ShapeError("modality input width " + std::to_string(features.cols()) + " does not match encoder width " +
                     std::to_string(p.input.w.rows()));
  }
  Tensor x = features.rows() > max_frames ? align_temporal(features, max_frames) : features;
  const std::size_t d_c = p.input.w.cols();
  x = add(p.input(x), sinusoidal_positions(x.rows(), d_c));
  x = encoder_layer(x, p.layer, 1, nullptr);
  return align_temporal(x, n);
}

// Test hooks that pin internal quantities to constants.
struct ForwardOverrides {
  std::optional<double> pinned_lambda;
  std::optional<double> pinned_gate;
};

// The fusion block for every variant. `c_audio` / `c_video` may be empty
// tensors for variants that ignore them.
inline Tensor adapter_forward(const Tensor& h, const Tensor& c_audio, const Tensor& c_video, const AdapterParams& a,
                              const ModelConfig& cfg, const ForwardOverrides& o = {}) {
  Mca2Options mo{cfg.adapter_heads, o.pinned_lambda};
  GifOptions go{cfg.sigmoid_gates, cfg.post_fusion_layer_norm, o.pinned_gate};
  auto cross = [&](const Tensor& c, const Mca2Params& m) {
    return multi_head_attention(matmul(h, m.w_q), matmul(c, m.u_k), matmul(c, m.u_v), cfg.adapter_heads);
  };
  switch (cfg.variant) {
    case Variant::kTextOnly:
      return h;
    case Variant::kMaf:
      return gif_fuse(h, mca2_forward(h, c_audio, *a.audio, mo), mca2_forward(h, c_video, *a.video, mo), *a.gif, go);
    case Variant::kDpa:
      return gif_fuse(h, cross(c_audio, *a.audio), cross(c_video, *a.video), *a.gif, go);
    case Variant::kConcat1:
      return gif_fuse(h, (*a.concat_audio)(concat_last(h, c_audio)), (*a.concat_video)(concat_last(h, c_video)),
                      *a.gif, go);
    case Variant::kConcat2:
      return (*a.concat_all)(concat_last(concat_last(h, c_audio), c_video));
    case Variant::kNoGif: {
      Tensor out = add(add(h, mca2_forward(h, c_audio, *a.audio, mo)), mca2_forward(h, c_video, *a.video, mo));
      return cfg.post_fusion_layer_norm ? layer_norm_rows(out) : out;
    }
    case Variant::kTA:
      return gif_fuse_single(h, mca2_forward(h, c_audio, *a.audio, mo), a.gif->w_a, a.gif->b_a, go);
    case Variant::kTV:
      return gif_fuse_single(h, mca2_forward(h, c_video, *a.video, mo), a.gif->w_v, a.gif->b_v, go);
  }
  return h;
}

// Additive mask hiding padded key columns from every query row.
inline Tensor key_padding_mask(std::span<const int> key_ids, std::size_t query_rows) {
  std::vector<double> m(query_rows * key_ids.size(), 0.0);
  for (std::size_t i = 0; i < query_rows; ++i)
    for (std::size_t j = 0; j < key_ids.size(); ++j)
      if (key_ids[j] == Vocabulary::kPad) m[i * key_ids.size() + j] = kMaskedScore;
  return Tensor::from({query_rows, key_ids.size()}, std::move(m));
}

inline Tensor causal_mask(std::size_t n) {
  std::vector<double> m(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) m[i * n + j] = kMaskedScore;
  return Tensor::from({n, n}, std::move(m));
}

// ---------------------------------------------------------------------------
// Prepared training pairs.

struct Example {
  std::vector<int> text_ids;    // unpadded, length <= n
  Tensor audio;                 // frames x audio_input_dim
  Tensor video;                 // windows x video_input_dim
  std::vector<int> target_ids;  // <bos> explanation <eos>, optionally followed by <pad>
};

// Tokens of every "speaker text" pair in order, keeping the last n so the
// final (sarcastic) utterance survives truncation.
inline std::vector<int> dialogue_ids(const DialogueInstance& d, const Vocabulary& vocab, std::size_t n) {
  std::vector<int> ids;
  for (const auto& u : d.utterances) {
    for (int id : vocab.encode(u.speaker)) ids.push_back(id);
    for (int id : vocab.encode(u.text)) ids.push_back(id);
  }
  if (ids.size() > n) ids.erase(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(n));
  return ids;
}

inline Example prepare_example(const DialogueInstance& d, const Vocabulary& vocab, const ModelConfig& cfg) {
  Example ex;
  ex.text_ids = dialogue_ids(d, vocab, cfg.max_text_len);
  ex.audio = d.audio_features.to_tensor();
  ex.video = d.video_features.to_tensor();
  ex.target_ids.push_back(Vocabulary::kBos);
  for (int id : vocab.encode(d.explanation)) ex.target_ids.push_back(id);
  ex.target_ids.push_back(Vocabulary::kEos);
  return ex;
}

// Closed vocabulary from training instances only, in first-seen order.
inline Vocabulary build_vocabulary(const std::vector<DialogueInstance>& train) {
  Vocabulary v;
  for (const auto& d : train) {
    for (const auto& u : d.utterances) {
      for (const auto& t : tokenize(u.speaker)) v.add(t);
      for (const auto& t : tokenize(u.text)) v.add(t);
    }
    for (const auto& t : tokenize(d.explanation)) v.add(t);
  }
  return v;
}

// ---------------------------------------------------------------------------

class Model {
 public:
  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)), params_(init_params(cfg_)) {}
  Model(ModelConfig cfg, ModelParams params) : cfg_(std::move(cfg)), params_(std::move(params)) { cfg_.validate(); }

  const ModelConfig& config() const noexcept { return cfg_; }
  ModelParams& params() noexcept { return params_; }
  const ModelParams& params() const noexcept { return params_; }

  template <typename F>
  void for_each_parameter(F&& f) const {
    maf::for_each_parameter(params_, cfg_.variant, std::forward<F>(f));
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for_each_parameter([&](const std::string&, const Tensor& t) { out.push_back(t); });
    return out;
  }

  // Text ids padded to n.
  std::vector<int> padded_ids(std::span<const int> text_ids) const {
    if (text_ids.empty()) throw ContractError("encode: empty text");
    if (text_ids.size() > cfg_.max_text_len) {
      throw ContractError("encode: " + std::to_string(text_ids.size()) + " tokens exceed max_text_len " +
                          std::to_string(cfg_.max_text_len));
    }
    std::vector<int> ids(text_ids.begin(), text_ids.end());
    ids.resize(cfg_.max_text_len, Vocabulary::kPad);
    return ids;
  }

  Tensor embed(std::span<const int> padded) const {
    return add(scale(embedding(params_.embedding, padded), std::sqrt(static_cast<double>(cfg_.d))),
               sinusoidal_positions(padded.size(), cfg_.d));
  }

  // n x d encoder memory.
  Tensor encode(std::span<const int> text_ids, const Tensor& audio, const Tensor& video,
                const ForwardOverrides& overrides = {}) const {
    for (const Tensor* m : {&audio, &video}) {
      if (m->rank() != 2 || m->rows() == 0) {
        throw ContractError("encode: modality input must have at least one frame; "
                            "represent silence as one all-zero frame");
      }
    }
    const auto ids = padded_ids(text_ids);
    const std::size_t n = cfg_.max_text_len;
    const Tensor mask = key_padding_mask(ids, n);
    Tensor x = embed(ids);
    for (std::size_t layer = 0; layer < cfg_.encoder_layers; ++layer) {
      if (layer + 1 == cfg_.fusion_layer_index && cfg_.variant != Variant::kTextOnly) {
        Tensor c_audio, c_video;
        if (params_.audio_encoder) c_audio = encode_modality(audio, *params_.audio_encoder, n, cfg_.max_frames);
        if (params_.video_encoder) c_video = encode_modality(video, *params_.video_encoder, n, cfg_.max_windows);
        x = adapter_forward(x, c_audio, c_video, params_.adapter, cfg_, overrides);
      }
      x = encoder_layer(x, params_.encoder[layer], cfg_.heads, &mask);
    }
    return params_.encoder_norm(x);
  }

  // Next-token logits for every decoder input position (L x vocab).
  Tensor decoder_logits(const Tensor& memory, std::span<const int> padded_text, std::span<const int> decoder_in) const {
    const std::size_t len = decoder_in.size();
    const Tensor self_mask = causal_mask(len);
    const Tensor cross_mask = key_padding_mask(padded_text, len);
    Tensor y = embed(decoder_in);
    for (const auto& layer : params_.decoder) y = decoder_layer(y, memory, layer, cfg_.heads, self_mask, cross_mask);
    return params_.output(params_.decoder_norm(y));
  }

  // Teacher-forced mean cross-entropy over non-padding target tokens.
  Tensor loss(const Example& ex, const ForwardOverrides& overrides = {}) const {
    if (ex.target_ids.size() < 2) throw ContractError("loss: target needs at least <bos> and one token");
    Tensor memory = encode(ex.text_ids, ex.audio, ex.video, overrides);
    const auto padded = padded_ids(ex.text_ids);
    std::span<const int> t(ex.target_ids);
    Tensor logits = decoder_logits(memory, padded, t.first(t.size() - 1));
    return cross_entropy_rows(logits, t.subspan(1), Vocabulary::kPad);
  }

  // Greedy argmax decoding (ties go to the lowest id). Returns the tokens
  // after <bos>, stopping before <eos> or after max_len tokens.
  std::vector<int> decode_greedy(const Tensor& memory, std::span<const int> text_ids, std::size_t max_len) const {
    if (max_len == 0) throw ContractError("decode_greedy: max_len must be at least 1");
    NoGradGuard no_grad;
    const auto padded = padded_ids(text_ids);
    std::vector<int> seq{Vocabulary::kBos};
    while (seq.size() - 1 < max_len) {
      Tensor logits = decoder_logits(memory, padded, seq);
      const auto row = logits.data().subspan((logits.rows() - 1) * logits.cols(), logits.cols());
      const int best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
      if (best == Vocabulary::kEos) break;
      seq.push_back(best);
    }
    return {seq.begin() + 1, seq.end()};
  }

  std::vector<int> generate(const Example& ex, std::size_t max_len) const {
    NoGradGuard no_grad;
    return decode_greedy(encode(ex.text_ids, ex.audio, ex.video), ex.text_ids, max_len);
  }

 private:
  ModelConfig cfg_;
  ModelParams params_;
};

}  // namespace maf
