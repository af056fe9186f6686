#pragma once

#include <span>
#include <vector>

#include "ckan/tensor.h"

namespace ckan {

// Elementwise. Binary ops require equal shapes, or `b` holding one element
// (scalar operand). No other broadcasting exists.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor square(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor sigmoid(const Tensor& a);
// x * sigmoid(x)
Tensor silu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double negative_slope);
// log(1 + exp(x)), evaluated without overflow.
Tensor softplus(const Tensor& a);

// Reductions to a rank-0 tensor.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// [m x k] * [k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// x[n x d_in] * w[d_out x d_in]^T -> [n x d_out]
Tensor linear(const Tensor& x, const Tensor& w);
// x[n x d] + v[d] added to every row.
Tensor add_row_vector(const Tensor& x, const Tensor& v);
Tensor transpose(const Tensor& a);

Tensor reshape(const Tensor& a, Shape shape);
// Output axis i is input axis axes[i].
Tensor permute(const Tensor& a, std::span<const std::size_t> axes);
Tensor permute(const Tensor& a, std::initializer_list<std::size_t> axes);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

// Per-row normalization of x[n x d]: (x - mean) / sqrt(var + eps) * gain + bias
// with the biased row variance.
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

}  // namespace ckan
