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
#include <vector>

#include "maf/tensor.hpp"

namespace maf {

// softmax(Q K^T / sqrt(d_k) + mask) V. `mask`, when given, is an additive
// rows(Q) x rows(K) matrix (0 to keep, a large negative value to drop).
// When `weights_out` is non-null it receives the softmax matrix.
inline Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                           std::size_t d_k, const Tensor* mask = nullptr,
                                           Tensor* weights_out = nullptr) {
  if (d_k == 0) throw ContractError("attention: d_k must be positive");
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.cols() != k.cols() || k.rows() != v.rows()) {
    throw ShapeError("attention: incompatible shapes Q" + shape_string(q.shape()) + " K" +
                     shape_string(k.shape()) + " V" + shape_string(v.shape()));
  }
  Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(d_k)));
  if (mask) scores = add(scores, *mask);
  Tensor weights = softmax_rows(scores);
  if (weights_out) *weights_out = weights;
  return matmul(weights, v);
}

// Splits the columns of Q, K, V into `heads` equal groups, attends within
// each group with d_k = width / heads, and concatenates the results.
inline Tensor multi_head_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads,
                                   const Tensor* mask = nullptr, std::vector<Tensor>* weights_out = nullptr) {
  if (heads == 0 || q.cols() % heads != 0 || v.cols() % heads != 0) {
    throw ShapeError("attention: width " + std::to_string(q.cols()) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  if (heads == 1) {
    Tensor w;
    Tensor out = scaled_dot_product_attention(q, k, v, q.cols(), mask, weights_out ? &w : nullptr);
    if (weights_out) weights_out->push_back(w);
    return out;
  }
  const std::size_t dq = q.cols() / heads, dv = v.cols() / heads;
  Tensor out;
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor w;
    Tensor head = scaled_dot_product_attention(slice_cols(q, h * dq, (h + 1) * dq),
                                               slice_cols(k, h * dq, (h + 1) * dq),
                                               slice_cols(v, h * dv, (h + 1) * dv), dq, mask,
                                               weights_out ? &w : nullptr);
    if (weights_out) weights_out->push_back(w);
    out = h == 0 ? head : concat_last(out, head);
  }
  return out;
}

}  // namespace maf
