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

// Global information fusion.
//
//   g_a   = [H ; H_a] W_a + b_a
//   g_v   = [H ; H_v] W_v + b_v
//   H_hat = H + g_a * H_a + g_v * H_v
//
// The gates are linear by default. With every parameter at zero the block
// is an exact identity on H.

#pragma once

#include <optional>
#include <string>

#include "maf/tensor.hpp"

namespace maf {

struct GifParams {
  Tensor w_a, w_v;  // 2d x d
  Tensor b_a, b_v;  // 1 x d, added to every position
  std::size_t d = 0;

  static GifParams zeros(std::size_t d) {
    GifParams p;
    p.d = d;
    p.w_a = Tensor::zeros({2 * d, d}, true);
    p.w_v = Tensor::zeros({2 * d, d}, true);
    p.b_a = Tensor::zeros({1, d}, true);
    p.b_v = Tensor::zeros({1, d}, true);
    return p;
  }

  template <typename F>
  void for_each(F&& f) {
    f("w_a", w_a);
    f("w_v", w_v);
    f("b_a", b_a);
    f("b_v", b_v);
  }
};

struct GifOptions {
  bool sigmoid_gates = false;
  // Parameter-free layer norm on H_hat.
  bool post_layer_norm = false;
  // Replaces both gates with a constant matrix of this value.
  std::optional<double> pinned_gate;
};

namespace gif_detail {

inline Tensor gate(const Tensor& h, const Tensor& h_m, const Tensor& w, const Tensor& b, const GifOptions& opt) {
  if (opt.pinned_gate) return Tensor::full(h.shape(), *opt.pinned_gate);
  if (w.shape() != Shape{2 * h.cols(), h.cols()} || b.shape() != Shape{1, h.cols()}) {
    throw ShapeError("gif: gate parameters " + shape_string(w.shape()) + "/" + shape_string(b.shape()) +
                     " do not fit width " + std::to_string(h.cols()));
  }
  Tensor g = add(matmul(concat_last(h, h_m), w), b);
  return opt.sigmoid_gates ? sigmoid(g) : g;
}

inline void require_same(const Tensor& h, const Tensor& other, const char* what) {
  if (h.rank() != 2 || other.shape() != h.shape()) {
    throw ShapeError(std::string("gif: ") + what + " has shape " + shape_string(other.shape()) +
                     ", H has shape " + shape_string(h.shape()));
  }
}

inline Tensor finish(Tensor out, const GifOptions& opt) {
  return opt.post_layer_norm ? layer_norm_rows(out) : out;
}

}  // namespace gif_detail

inline Tensor gif_fuse(const Tensor& h, const Tensor& h_a, const Tensor& h_v, const GifParams& params,
                       const GifOptions& options = {}) {
  gif_detail::require_same(h, h_a, "H_a");
  gif_detail::require_same(h, h_v, "H_v");
  Tensor g_a = gif_detail::gate(h, h_a, params.w_a, params.b_a, options);
  Tensor g_v = gif_detail::gate(h, h_v, params.w_v, params.b_v, options);
  return gif_detail::finish(add(add(h, mul(g_a, h_a)), mul(g_v, h_v)), options);
}

// One-modality form: the absent modality's term is dropped rather than fed
// zeros. Uses the (w, b) pair given.
inline Tensor gif_fuse_single(const Tensor& h, const Tensor& h_m, const Tensor& w, const Tensor& b,
                              const GifOptions& options = {}) {
  gif_detail::require_same(h, h_m, "H_m");
  Tensor g = gif_detail::gate(h, h_m, w, b, options);
  return gif_detail::finish(add(h, mul(g, h_m)), options);
}

}  // namespace maf
