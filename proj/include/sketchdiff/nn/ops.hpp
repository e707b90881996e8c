#pragma once

#include <cstddef>
#include <vector>

#include "sketchdiff/nn/tensor.hpp"

namespace sketchdiff::nn {

// Elementwise with numpy-style (right-aligned) broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);

Tensor relu(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor sum(const Tensor& x, std::size_t axis, bool keepdim = true);
Tensor mean(const Tensor& x, std::size_t axis, bool keepdim = true);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
// mean((a - b)^2) over every element.
Tensor mse(const Tensor& a, const Tensor& b);

Tensor softmax(const Tensor& x, std::size_t axis);
// v * |v| / (1 + |v|^2) along `axis`; zero vectors map to zero.
Tensor squash(const Tensor& x, std::size_t axis);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

// [m,k] x [k,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// x[..., in] * w[in, out] + bias[out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
// [B,m,k] x [B,k,n], or [B,m,k] x [B,n,k]^T when trans_b.
Tensor bmm(const Tensor& a, const Tensor& b, bool trans_b = false);
// x[G*P, n] + z[G, n] where row r of x receives z[r / P].
Tensor add_grouped(const Tensor& x, const Tensor& z);

// x[B,C,H,W], w[Co,C,k,k], bias[Co]; replicate (edge) padding.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride, std::size_t pad);
// Non-overlapping window max pooling; H and W must be divisible by `window`.
Tensor maxpool2d(const Tensor& x, std::size_t window);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
  double momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch
  double eps = 1e-5;
};
// Per-channel normalization of x[B,C,H,W]. Training mode uses batch statistics
// and updates the running buffers; otherwise running statistics are used.
Tensor batchnorm2d(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchNormState& state,
                   bool training);

// Normalizes each row over the last axis.
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Rows of table[V, d] gathered by ids -> [ids.size(), d].
Tensor embedding(const Tensor& table, const std::vector<std::size_t>& ids);

}  // namespace sketchdiff::nn
