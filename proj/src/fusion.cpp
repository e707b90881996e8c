#include "sketchdiff/fusion.hpp"

#include "sketchdiff/error.hpp"

namespace sketchdiff {

using nn::Tensor;

std::string_view condition_kind_name(ConditionKind k) {
  return k == ConditionKind::Geometry ? "geometry" : "appearance";
}

nn::AttentionOutput mh_attention(const nn::MultiHeadAttention& attn, const Tensor& q, const Tensor& k, const Tensor& v) {
  return attn(q, k, v);
}

Fusion::Fusion(FusionConfig config, ConditionKind kind, Rng& rng)
    : atten1(config.width, config.width, config.heads, config.head_dim, config.width, rng),
      atten2(config.width, config.width, config.heads, config.head_dim, config.width, rng),
      config_(config),
      kind_(kind) {}

FusionOutput Fusion::operator()(const Tensor& s, const Tensor& t, const std::vector<unsigned char>& text_present) const {
  const std::size_t d = config_.dim();
  if (s.rank() != 2 || s.dim(1) != d) throw ConfigError("fusion: S must be [B," + std::to_string(d) + "], got " + nn::shape_str(s.shape()));
  const std::size_t b = s.dim(0);
  if (text_present.size() != b) throw ConfigError("fusion: text_present needs one flag per row");
  const Tensor s_tok = nn::reshape(s, {b, config_.tokens, config_.width});
  FusionOutput out;
  bool any = false;
  for (auto p : text_present) any = any || p;
  Tensor query = s_tok;
  if (any) {
    if (!t.defined() || t.rank() != 2 || t.dim(0) != b || t.dim(1) != d) {
      throw ConfigError("fusion: T must match S's shape when text is present");
    }
    auto a1 = mh_attention(atten1, s_tok, nn::reshape(t, {b, config_.tokens, config_.width}),
                           nn::reshape(t, {b, config_.tokens, config_.width}));
    out.weights1 = a1.weights;
    Tensor inter = a1.out;
    bool all = true;
    for (auto p : text_present) all = all && p;
    if (!all) {
      std::vector<double> mask(b);
      for (std::size_t i = 0; i < b; ++i) mask[i] = text_present[i] ? 1.0 : 0.0;
      inter = nn::mul(inter, Tensor::from({b, 1, 1}, std::move(mask)));
    }
    query = nn::add(inter, s_tok);
    out.intermediate = nn::reshape(inter, {b, d});
  } else {
    out.intermediate = Tensor::zeros({b, d});
  }
  auto a2 = mh_attention(atten2, query, query, s_tok);
  out.weights2 = a2.weights;
  out.condition = nn::reshape(a2.out, {b, d});
  return out;
}

FusionOutput Fusion::operator()(const Tensor& s, const Tensor& t) const {
  if (s.rank() != 2) throw ConfigError("fusion: S must be rank 2");
  return (*this)(s, t, std::vector<unsigned char>(s.dim(0), t.defined() ? 1 : 0));
}

void Fusion::collect(const std::string& prefix, nn::TensorList& out) const {
  atten1.collect(prefix + ".atten1", out);
  atten2.collect(prefix + ".atten2", out);
}

}  // namespace sketchdiff
