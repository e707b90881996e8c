#pragma once

#include <cstddef>
#include <string>

#include "sketchdiff/nn/module.hpp"

namespace sketchdiff::nn {

struct AttentionOutput {
  Tensor out;      // [B, Lq, out_dim]
  Tensor weights;  // [B * heads, Lq, Lk], softmax over the last axis
};

// Scaled dot-product attention over `heads` subspaces of width `head_dim`.
// Query/key/value projections carry no bias; the output projection does.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t q_dim, std::size_t kv_dim, std::size_t heads, std::size_t head_dim,
                     std::size_t out_dim, Rng& rng);

  // q [B, Lq, q_dim], k and v [B, Lk, kv_dim].
  AttentionOutput operator()(const Tensor& q, const Tensor& k, const Tensor& v) const;
  void collect(const std::string& prefix, TensorList& out) const;

  std::size_t heads() const { return heads_; }
  std::size_t head_dim() const { return head_dim_; }

  Linear wq, wk, wv, wo;

 private:
  std::size_t heads_ = 1;
  std::size_t head_dim_ = 1;
};

}  // namespace sketchdiff::nn
