#pragma once

#include <cstdint>
#include <vector>

#include "clipfit/tensor.hpp"

namespace clipfit::ops {

// Differentiable primitives. Every op validates shapes (DimensionError on
// mismatch), computes the forward value, and — when `tape` is non-null and
// any input requires gradients — records exactly one backward node. With a
// null tape the result is a plain value (requires_grad = false).
//
// Gradients accumulate (+=) into inputs with requires_grad; constants are
// skipped. All math is double precision, row-major.

// y = a + b (same shape)
Tensor add(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
// y = a - b (same shape)
Tensor sub(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
// y = a * b elementwise (same shape)
Tensor mul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
// y = alpha * x + beta with scalar constants
Tensor scale_add(const Tensor& x, double alpha, double beta,
                 Tape* tape = nullptr);
// y = x * s where s is a [1] tensor (broadcast scalar, differentiable in both)
Tensor mul_scalar(const Tensor& x, const Tensor& s, Tape* tape = nullptr);
// y = exp(x) elementwise
Tensor exp(const Tensor& x, Tape* tape = nullptr);

// c[m x n] = a[m x k] * b[k x n]; strictly 2-D
Tensor matmul(const Tensor& a, const Tensor& b, Tape* tape = nullptr);
// y = x^T for 2-D x
Tensor transpose(const Tensor& x, Tape* tape = nullptr);
// identity on values, new shape with identical element count
Tensor reshape(const Tensor& x, Shape shape, Tape* tape = nullptr);

// columns [start, start+count) of a 2-D tensor
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count,
                  Tape* tape = nullptr);
// horizontal concat of 2-D tensors with equal row counts
Tensor concat_cols(const std::vector<Tensor>& xs, Tape* tape = nullptr);
// vertical concat of 2-D tensors with equal column counts
Tensor concat_rows(const std::vector<Tensor>& xs, Tape* tape = nullptr);
// row r of a 2-D tensor as a 1-D tensor
Tensor select_row(const Tensor& x, std::size_t r, Tape* tape = nullptr);

// y[i][j] = x[i][j] + b[j] for x[m x n], b[n]
Tensor bias_add(const Tensor& x, const Tensor& b, Tape* tape = nullptr);

// rows of `table` [V x w] gathered by token id; VocabularyError on id >= V
Tensor embedding_lookup(const Tensor& table,
                        const std::vector<std::uint16_t>& ids,
                        Tape* tape = nullptr);

// row-wise layer norm over the last dimension of x[m x d]; gain/bias are [d]
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps, Tape* tape = nullptr);

// tanh-approximation GELU, elementwise
Tensor gelu(const Tensor& x, Tape* tape = nullptr);

// row-wise softmax of x[m x d]
Tensor softmax_rows(const Tensor& x, Tape* tape = nullptr);

// mean negative log-softmax of the true class; logits[b x K], labels in [0,K)
// (IndexError otherwise). Returns a [1] tensor.
Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<int>& labels,
                             Tape* tape = nullptr);

// rows scaled to unit L2 norm; DegenerateInputError on a zero row
Tensor l2_normalize_rows(const Tensor& x, Tape* tape = nullptr);

// cos(u, v) for 1-D u, v of equal length, as a [1] tensor. The denominator is
// sqrt(dot(u,u) * dot(v,v)), which makes cos(u, u) exactly 1.0 for identical
// inputs. DegenerateInputError on a zero vector.
Tensor cosine_similarity(const Tensor& u, const Tensor& v,
                         Tape* tape = nullptr);

// sum / mean of all elements, as a [1] tensor
Tensor sum(const Tensor& x, Tape* tape = nullptr);
Tensor mean(const Tensor& x, Tape* tape = nullptr);

// Composite multi-head attention over one sequence x[T x w]:
//   qkv = x*qkv_w + qkv_b, split into `heads` heads of width w/heads,
//   per-head softmax(q k^T / sqrt(w/heads)) v, concat, out projection.
// Built from the primitives above, so it inherits their gradients.
Tensor multi_head_attention(const Tensor& x, const Tensor& qkv_w,
                            const Tensor& qkv_b, const Tensor& out_w,
                            const Tensor& out_b, std::size_t heads,
                            Tape* tape = nullptr);

}  // namespace clipfit::ops
