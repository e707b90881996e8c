#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "sketchdiff/nn/attention.hpp"
#include "sketchdiff/nn/module.hpp"

namespace sketchdiff {

class Vocabulary {
 public:
  explicit Vocabulary(std::vector<std::string> words);
  // The template grammar's closed word list.
  static const Vocabulary& builtin();

  std::size_t size() const { return words_.size(); }
  const std::string& word(std::size_t id) const { return words_.at(id); }
  // Throws ConfigError naming the word when it is out of vocabulary.
  std::size_t id(std::string_view word) const;

  // One token per line; the index is the zero-based line number.
  void write(const std::filesystem::path& path) const;
  static Vocabulary read(const std::filesystem::path& path);

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline constexpr std::size_t kMaxTokens = 16;

// Token ids padded to `ids.size()`; mask[k] is 1 for real tokens.
struct TokenSeq {
  std::vector<std::size_t> ids;
  std::vector<unsigned char> mask;

  std::size_t length() const;  // number of real tokens
};

// Lowercases, splits on whitespace and looks every word up. Pads with id 0
// to `pad_to` (at least the token count). More than max_len words is an error.
TokenSeq tokenize(std::string_view text, const Vocabulary& vocab = Vocabulary::builtin(),
                  std::size_t pad_to = kMaxTokens, std::size_t max_len = kMaxTokens);

struct TextEncoderConfig {
  std::size_t vocab_size = 0;  // 0 = builtin vocabulary size
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t ffn_dim = 128;
  std::size_t blocks = 2;
  std::size_t max_len = kMaxTokens;
  std::size_t out_dim = 128;  // D_f
};

// Token embedding + sinusoidal positions, pre-norm self-attention blocks,
// final layer norm, masked mean-pool and a linear projection to D_f.
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(TextEncoderConfig config, Rng& rng);

  // [1, out_dim]. Padded positions are dropped before the first block, so
  // the result does not depend on padding length. An empty sequence pools
  // to zero and returns the projection bias.
  nn::Tensor encode(const TokenSeq& tokens) const;
  // Last block's attention weights, [heads, L, L], for the real tokens.
  nn::Tensor attention_weights(const TokenSeq& tokens) const;
  // [B, out_dim]
  nn::Tensor encode_batch(const std::vector<TokenSeq>& batch) const;

  void collect(const std::string& prefix, nn::TensorList& out) const;
  const TextEncoderConfig& config() const { return config_; }

 private:
  struct Block {
    nn::LayerNorm ln1, ln2;
    nn::MultiHeadAttention attn;
    nn::Linear ff1, ff2;
  };
  nn::Tensor hidden(const TokenSeq& tokens, nn::Tensor* last_weights) const;

  TextEncoderConfig config_;
  nn::Tensor token_table_;  // [V, d_model]
  nn::Tensor positions_;    // [max_len, d_model], fixed
  std::vector<Block> blocks_;
  nn::LayerNorm final_ln_;
  nn::Linear proj_;
};

// Sinusoidal table: pe[p][2k] = sin(p / 10000^(2k/d)), pe[p][2k+1] = cos(...).
std::vector<double> sinusoidal_table(std::size_t length, std::size_t dim);

}  // namespace sketchdiff
