#pragma once

#include <optional>

#include "coroi/tensor.hpp"

namespace coroi {
namespace ops {

// Elementwise / broadcast
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// y[r,c] = x[r,c] + b[c] for 2-D x
Tensor add_rowvec(const Tensor& x, const Tensor& b);
// y = x * s where s is a single-element tensor participating in the tape
Tensor scale_by(const Tensor& x, const Tensor& s);
Tensor gelu(const Tensor& x);

// Shape
Tensor reshape(const Tensor& x, std::vector<int64_t> shape);
Tensor transpose(const Tensor& x);  // 2-D
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, int64_t begin, int64_t count);
Tensor slice_cols(const Tensor& x, int64_t begin, int64_t count);
// First-axis gather for rank-1 or rank-2 tensors (embedding lookup).
Tensor gather_rows(const Tensor& x, const std::vector<int64_t>& idx);
// out = base; out[idx[i], :] += delta[i, :]. Adding an exact zero keeps the
// base bit pattern so a zero residual is a bit-exact no-op.
Tensor add_at_rows(const Tensor& base, const std::vector<int64_t>& idx,
                   const Tensor& delta);

// Reductions
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

// Core numerics
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax(const Tensor& x, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);
// Scaled dot-product attention. `blocked`, when present, is an Lq x Lk 0/1
// mask where 1 marks a key a query must not see.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v,
                 const Tensor* blocked = nullptr);
// Mean over every win x win window of a 2-D map, stride 1, no padding.
Tensor window_mean_pool(const Tensor& s, int64_t win);
// Mean of -log softmax(logits)[t, targets[t]] over positions where
// ignore_mask[t] is false.
Tensor cross_entropy(const Tensor& logits, const std::vector<int64_t>& targets,
                     const std::vector<uint8_t>& ignore_mask);

// Convenience: add_rowvec(matmul(x, w), b)
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Value helpers (no tape participation)
int64_t argmax_index(const Tensor& x);
double max_abs_diff(const Tensor& a, const Tensor& b);
bool bit_equal(const Tensor& a, const Tensor& b);

}  // namespace ops
}  // namespace coroi
