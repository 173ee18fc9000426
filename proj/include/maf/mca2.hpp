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

// Multimodal context-aware attention.
//
// Text states H (n x d) are projected to Q, K, V. An audio or video context
// C (n x d_c) is projected into the key/value space by U_k, U_v, and a
// per-position gate lambda in (0, 1) mixes it into the keys and values:
//
//   lambda_k = sigmoid(K W_k1 + (C U_k) W_k2)
//   K_hat    = (1 - lambda_k) * K + lambda_k * (C U_k)
//
// (and likewise for V). The result is ordinary scaled dot-product attention
// of Q over K_hat, V_hat. The n x 1 gate multiplies every column of its row.

#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "maf/attention.hpp"
#include "maf/random.hpp"
#include "maf/tensor.hpp"

namespace maf {

struct Mca2Params {
  Tensor w_q, w_k, w_v;  // d x d
  Tensor u_k, u_v;       // d_c x d
  Tensor w_k1, w_v1;     // d x 1, gate weights on K / V
  Tensor w_k2, w_v2;     // d x 1, gate weights on the projected context
  std::size_t d = 0;
  std::size_t d_c = 0;

  // Projections Xavier-uniform; gate weights zero so every lambda starts at
  // 0.5.
  static Mca2Params init(std::size_t d, std::size_t d_c, Rng& rng) {
    Mca2Params p;
    p.d = d;
    p.d_c = d_c;
    p.w_q = xavier_uniform(d, d, rng);
    p.w_k = xavier_uniform(d, d, rng);
    p.w_v = xavier_uniform(d, d, rng);
    p.u_k = xavier_uniform(d_c, d, rng);
    p.u_v = xavier_uniform(d_c, d, rng);
    p.w_k1 = Tensor::zeros({d, 1}, true);
    p.w_v1 = Tensor::zeros({d, 1}, true);
    p.w_k2 = Tensor::zeros({d, 1}, true);
    p.w_v2 = Tensor::zeros({d, 1}, true);
    return p;
  }

  static Mca2Params zeros(std::size_t d, std::size_t d_c) {
    Mca2Params p;
    p.d = d;
    p.d_c = d_c;
    p.w_q = Tensor::zeros({d, d}, true);
    p.w_k = Tensor::zeros({d, d}, true);
    p.w_v = Tensor::zeros({d, d}, true);
    p.u_k = Tensor::zeros({d_c, d}, true);
    p.u_v = Tensor::zeros({d_c, d}, true);
    p.w_k1 = Tensor::zeros({d, 1}, true);
    p.w_v1 = Tensor::zeros({d, 1}, true);
    p.w_k2 = Tensor::zeros({d, 1}, true);
    p.w_v2 = Tensor::zeros({d, 1}, true);
    return p;
  }

  template <typename F>
  void for_each(F&& f) {
    f("w_q", w_q);
    f("w_k", w_k);
    f("w_v", w_v);
    f("u_k", u_k);
    f("u_v", u_v);
    f("w_k1", w_k1);
    f("w_k2", w_k2);
    f("w_v1", w_v1);
    f("w_v2", w_v2);
  }

  void validate() const {
    auto check = [](const Tensor& t, Shape want, const char* name) {
      if (t.shape() != want) {
        throw ShapeError(std::string("Mca2Params.") + name + ": expected " + shape_string(want) + ", got " +
                         shape_string(t.shape()));
      }
      for (double x : t.data())
        if (!std::isfinite(x)) throw ShapeError(std::string("Mca2Params.") + name + ": non-finite entry");
    };
    check(w_q, {d, d}, "w_q");
    check(w_k, {d, d}, "w_k");
    check(w_v, {d, d}, "w_v");
    check(u_k, {d_c, d}, "u_k");
    check(u_v, {d_c, d}, "u_v");
    check(w_k1, {d, 1}, "w_k1");
    check(w_v1, {d, 1}, "w_v1");
    check(w_k2, {d, 1}, "w_k2");
    check(w_v2, {d, 1}, "w_v2");
  }
};

struct Mca2Options {
  // Heads must divide d; each head attends with d_k = d / heads. The gate is
  // shared by all heads.
  std::size_t heads = 1;
  // Replaces both gates with a constant. Used to probe the text-only
  // (0) and context-only (1) limits.
  std::optional<double> pinned_lambda;
};

struct Projections {
  Tensor q, k, v;
};

struct Gates {
  Tensor lambda_k, lambda_v;
};

struct ConditionedKV {
  Tensor k_hat, v_hat;
};

struct AttentionTrace {
  Tensor q, k, v;
  Tensor lambda_k, lambda_v;
  Tensor k_hat, v_hat;
  std::vector<Tensor> weights;  // one n x n matrix per head
  Tensor output;
};

namespace mca2_detail {

inline void require_rows(const Tensor& t, std::size_t n, const char* what) {
  if (t.rank() != 2 || t.rows() != n) {
    throw ShapeError(std::string("mca2: ") + what + " has shape " + shape_string(t.shape()) + ", expected " +
                     std::to_string(n) + " rows");
  }
}

}  // namespace mca2_detail

inline Projections project_qkv(const Tensor& h, const Mca2Params& params) {
  if (h.rank() != 2 || h.cols() != params.d) {
    throw ShapeError("project_qkv: H has shape " + shape_string(h.shape()) + " but params expect width " +
                     std::to_string(params.d));
  }
  return {matmul(h, params.w_q), matmul(h, params.w_k), matmul(h, params.w_v)};
}

inline Gates gate_lambda(const Tensor& k, const Tensor& v, const Tensor& c, const Mca2Params& params) {
  const std::size_t n = k.rank() == 2 ? k.rows() : 0;
  mca2_detail::require_rows(k, n, "K");
  mca2_detail::require_rows(v, n, "V");
  mca2_detail::require_rows(c, n, "C");
  Tensor lk = sigmoid(add(matmul(k, params.w_k1), matmul(matmul(c, params.u_k), params.w_k2)));
  Tensor lv = sigmoid(add(matmul(v, params.w_v1), matmul(matmul(c, params.u_v), params.w_v2)));
  return {lk, lv};
}

inline ConditionedKV condition_kv(const Tensor& k, const Tensor& v, const Tensor& c, const Tensor& lambda_k,
                                  const Tensor& lambda_v, const Mca2Params& params) {
  const std::size_t n = k.rank() == 2 ? k.rows() : 0;
  mca2_detail::require_rows(k, n, "K");
  mca2_detail::require_rows(v, n, "V");
  mca2_detail::require_rows(c, n, "C");
  for (const Tensor* l : {&lambda_k, &lambda_v}) {
    if (l->shape() != Shape{n, 1}) {
      throw ShapeError("condition_kv: lambda has shape " + shape_string(l->shape()) + ", expected [" +
                       std::to_string(n) + "x1]");
    }
  }
  Tensor ck = matmul(c, params.u_k);
  Tensor cv = matmul(c, params.u_v);
  Tensor k_hat = add(mul(one_minus(lambda_k), k), mul(lambda_k, ck));
  Tensor v_hat = add(mul(one_minus(lambda_v), v), mul(lambda_v, cv));
  return {k_hat, v_hat};
}

inline Tensor attend(const Tensor& q, const Tensor& k_hat, const Tensor& v_hat, std::size_t d_k) {
  if (q.shape() != k_hat.shape() || q.rank() != 2 || v_hat.rank() != 2 || v_hat.rows() != k_hat.rows()) {
    throw ShapeError("attend: incompatible shapes Q" + shape_string(q.shape()) + " K" +
                     shape_string(k_hat.shape()) + " V" + shape_string(v_hat.shape()));
  }
  return scaled_dot_product_attention(q, k_hat, v_hat, d_k);
}

inline AttentionTrace mca2_trace(const Tensor& h, const Tensor& c, const Mca2Params& params,
                                 const Mca2Options& options = {}) {
  if (c.rank() != 2 || c.cols() != params.d_c) {
    throw ShapeError("mca2: C has shape " + shape_string(c.shape()) + " but params expect width " +
                     std::to_string(params.d_c));
  }
  AttentionTrace t;
  auto [q, k, v] = project_qkv(h, params);
  t.q = q;
  t.k = k;
  t.v = v;
  if (options.pinned_lambda) {
    mca2_detail::require_rows(c, h.rows(), "C");
    t.lambda_k = Tensor::full({h.rows(), 1}, *options.pinned_lambda);
    t.lambda_v = t.lambda_k;
  } else {
    auto g = gate_lambda(k, v, c, params);
    t.lambda_k = g.lambda_k;
    t.lambda_v = g.lambda_v;
  }
  auto kv = condition_kv(k, v, c, t.lambda_k, t.lambda_v, params);
  t.k_hat = kv.k_hat;
  t.v_hat = kv.v_hat;
  t.output = multi_head_attention(q, t.k_hat, t.v_hat, options.heads, nullptr, &t.weights);
  return t;
}

// Context-infused text states (H_a or H_v), same shape as H.
inline Tensor mca2_forward(const Tensor& h, const Tensor& c, const Mca2Params& params,
                           const Mca2Options& options = {}) {
  return mca2_trace(h, c, params, options).output;
}

}  // namespace maf
