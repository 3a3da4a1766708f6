#pragma once

#include <cstddef>

#include "lmvae/autodiff/tensor.hpp"

// Differentiable primitives. Matrices are row-major [rows, cols]; a batch is
// one sample per row. Binary elementwise ops accept operands of equal shape,
// or one operand holding a single element that is broadcast.

namespace lmvae::ad {

Tensor matmul(const Tensor& a, const Tensor& b);
/// x·W + b with x [B, n], W [n, m], b [m].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor add_row(const Tensor& x, const Tensor& row);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);
Tensor neg(const Tensor& a);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor square(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor clamp_min(const Tensor& a, double floor);

Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope = 0.01);
Tensor softmax_rows(const Tensor& a);
Tensor log_softmax_rows(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// [B, n] -> [B]
Tensor row_sum(const Tensor& a);

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor concat_cols(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }

}  // namespace lmvae::ad
