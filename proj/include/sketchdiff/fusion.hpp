#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "sketchdiff/nn/attention.hpp"

namespace sketchdiff {

enum class ConditionKind { Geometry, Appearance };
std::string_view condition_kind_name(ConditionKind k);

// S and T are D_f = tokens * width vectors read as `tokens` tokens; the
// default treats each as a single token split across heads.
struct FusionConfig {
  std::size_t tokens = 1;  // S and T as single tokens of width D_f
  std::size_t width = 128;
  std::size_t heads = 4;
  std::size_t head_dim = 32;

  std::size_t dim() const { return tokens * width; }
};

struct FusionOutput {
  nn::Tensor condition;     // [B, D_f], C_g or C_a
  nn::Tensor intermediate;  // [B, D_f], I (zero rows where text is absent)
  nn::Tensor weights1;      // [B*heads, tokens, tokens] of Atten1, undefined if no text
  nn::Tensor weights2;      // [B*heads, tokens, tokens] of Atten2
};

// mh_attention on [B, L, width] inputs; thin alias kept for the op name.
nn::AttentionOutput mh_attention(const nn::MultiHeadAttention& attn, const nn::Tensor& q, const nn::Tensor& k,
                                 const nn::Tensor& v);

// I = Atten1(Q=S, K=V=T), C = Atten2(Q=K=I+S, V=S). Where text is absent
// the switch sets I = 0, so C = Atten2(Q=K=S, V=S).
class Fusion {
 public:
  Fusion() = default;
  Fusion(FusionConfig config, ConditionKind kind, Rng& rng);

  // s, t: [B, D_f]. `text_present[b]` selects the switch per row; an
  // undefined `t` means no row has text.
  FusionOutput operator()(const nn::Tensor& s, const nn::Tensor& t, const std::vector<unsigned char>& text_present) const;
  // Every row with text when `t` is defined, none otherwise.
  FusionOutput operator()(const nn::Tensor& s, const nn::Tensor& t) const;

  void collect(const std::string& prefix, nn::TensorList& out) const;
  ConditionKind kind() const { return kind_; }
  const FusionConfig& config() const { return config_; }

  nn::MultiHeadAttention atten1, atten2;

 private:
  FusionConfig config_;
  ConditionKind kind_ = ConditionKind::Geometry;
};

}  // namespace sketchdiff
