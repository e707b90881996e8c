#include "sketchdiff/nn/attention.hpp"

#include <cmath>

#include "sketchdiff/error.hpp"

namespace sketchdiff::nn {

MultiHeadAttention::MultiHeadAttention(std::size_t q_dim, std::size_t kv_dim, std::size_t heads,
                                       std::size_t head_dim, std::size_t out_dim, Rng& rng)
    : wq(q_dim, heads * head_dim, rng, false),
      wk(kv_dim, heads * head_dim, rng, false),
      wv(kv_dim, heads * head_dim, rng, false),
      wo(heads * head_dim, out_dim, rng, true),
      heads_(heads),
      head_dim_(head_dim) {
  if (heads == 0 || head_dim == 0) throw ConfigError("attention: heads and head width must be positive");
}

namespace {

// [B, L, H*dh] -> [B*H, L, dh]
Tensor split_heads(const Tensor& x, std::size_t heads, std::size_t head_dim) {
  const std::size_t b = x.dim(0), l = x.dim(1);
  auto t = permute(reshape(x, {b, l, heads, head_dim}), {0, 2, 1, 3});
  return reshape(t, {b * heads, l, head_dim});
}

}  // namespace

AttentionOutput MultiHeadAttention::operator()(const Tensor& q, const Tensor& k, const Tensor& v) const {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3 || q.dim(0) != k.dim(0) || k.dim(0) != v.dim(0) ||
      k.dim(1) != v.dim(1)) {
    throw ConfigError("attention: q " + shape_str(q.shape()) + " k " + shape_str(k.shape()) + " v " +
                      shape_str(v.shape()));
  }
  if (q.dim(2) != wq.in_features() || k.dim(2) != wk.in_features() || v.dim(2) != wv.in_features()) {
    throw ConfigError("attention: input width does not match the projections");
  }
  const std::size_t b = q.dim(0), lq = q.dim(1);
  const Tensor qh = split_heads(wq(q), heads_, head_dim_);
  const Tensor kh = split_heads(wk(k), heads_, head_dim_);
  const Tensor vh = split_heads(wv(v), heads_, head_dim_);
  const Tensor scores = scale(bmm(qh, kh, true), 1.0 / std::sqrt(static_cast<double>(head_dim_)));
  AttentionOutput result;
  result.weights = softmax(scores, 2);
  Tensor ctx = reshape(bmm(result.weights, vh), {b, heads_, lq, head_dim_});
  ctx = reshape(permute(ctx, {0, 2, 1, 3}), {b, lq, heads_ * head_dim_});
  result.out = wo(ctx);
  return result;
}

void MultiHeadAttention::collect(const std::string& prefix, TensorList& out) const {
  wq.collect(prefix + ".wq", out);
  wk.collect(prefix + ".wk", out);
  wv.collect(prefix + ".wv", out);
  wo.collect(prefix + ".wo", out);
}

}  // namespace sketchdiff::nn
