#include "sketchdiff/text_encoder.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "sketchdiff/error.hpp"
#include "sketchdiff/synthdata/text.hpp"

namespace sketchdiff {

using nn::Tensor;

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (words_[i].empty()) throw ConfigError("vocabulary: empty token at index " + std::to_string(i));
    if (!index_.emplace(words_[i], i).second) throw ConfigError("vocabulary: duplicate token '" + words_[i] + "'");
  }
}

const Vocabulary& Vocabulary::builtin() {
  static const Vocabulary vocab(synth::vocabulary_words());
  return vocab;
}

std::size_t Vocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  if (it == index_.end()) throw ConfigError("out-of-vocabulary word '" + std::string(word) + "'");
  return it->second;
}

void Vocabulary::write(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write vocabulary '" + path.string() + "'");
  for (const auto& w : words_) out << w << "\n";
}

Vocabulary Vocabulary::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary '" + path.string() + "'");
  std::vector<std::string> words;
  std::size_t line = 0;
  for (std::string s; std::getline(in, s);) {
    ++line;
    if (!s.empty() && s.back() == '\r') s.pop_back();
    if (s.empty() || s.find_first_of(" \t") != std::string::npos) {
      throw ParseError(path.string(), line, "token", "expected a single token per line");
    }
    words.push_back(s);
  }
  return Vocabulary(std::move(words));
}

std::size_t TokenSeq::length() const {
  std::size_t n = 0;
  for (auto m : mask) n += m ? 1 : 0;
  return n;
}

TokenSeq tokenize(std::string_view text, const Vocabulary& vocab, std::size_t pad_to, std::size_t max_len) {
  std::string lower(text);
  for (auto& ch : lower) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  std::istringstream in(lower);
  TokenSeq seq;
  for (std::string w; in >> w;) {
    seq.ids.push_back(vocab.id(w));
    seq.mask.push_back(1);
  }
  if (seq.ids.size() > max_len) {
    throw ConfigError("prompt has " + std::to_string(seq.ids.size()) + " words, limit is " + std::to_string(max_len));
  }
  while (seq.ids.size() < pad_to) {
    seq.ids.push_back(0);
    seq.mask.push_back(0);
  }
  return seq;
}

std::vector<double> sinusoidal_table(std::size_t length, std::size_t dim) {
  std::vector<double> pe(length * dim);
  for (std::size_t p = 0; p < length; ++p)
    for (std::size_t k = 0; k < dim; ++k) {
      const double freq = std::pow(10000.0, -static_cast<double>(k - k % 2) / static_cast<double>(dim));
      pe[p * dim + k] = k % 2 == 0 ? std::sin(static_cast<double>(p) * freq) : std::cos(static_cast<double>(p) * freq);
    }
  return pe;
}

TextEncoder::TextEncoder(TextEncoderConfig config, Rng& rng) : config_(config) {
  if (config_.vocab_size == 0) config_.vocab_size = Vocabulary::builtin().size();
  if (config_.d_model % config_.heads) throw ConfigError("text encoder: d_model must be divisible by heads");
  std::vector<double> table(config_.vocab_size * config_.d_model);
  for (auto& v : table) v = rng.normal() * 0.5;
  token_table_ = Tensor::from({config_.vocab_size, config_.d_model}, std::move(table), true);
  positions_ = Tensor::from({config_.max_len, config_.d_model}, sinusoidal_table(config_.max_len, config_.d_model));
  const std::size_t dh = config_.d_model / config_.heads;
  for (std::size_t b = 0; b < config_.blocks; ++b) {
    Block blk;
    blk.ln1 = nn::LayerNorm(config_.d_model);
    blk.ln2 = nn::LayerNorm(config_.d_model);
    blk.attn = nn::MultiHeadAttention(config_.d_model, config_.d_model, config_.heads, dh, config_.d_model, rng);
    blk.ff1 = nn::Linear(config_.d_model, config_.ffn_dim, rng);
    blk.ff2 = nn::Linear(config_.ffn_dim, config_.d_model, rng);
    blocks_.push_back(std::move(blk));
  }
  final_ln_ = nn::LayerNorm(config_.d_model);
  proj_ = nn::Linear(config_.d_model, config_.out_dim, rng);
}

Tensor TextEncoder::hidden(const TokenSeq& tokens, Tensor* last_weights) const {
  std::vector<std::size_t> ids;
  for (std::size_t k = 0; k < tokens.ids.size(); ++k) {
    if (!tokens.mask[k]) continue;
    if (tokens.ids[k] >= config_.vocab_size) throw ConfigError("token id out of range");
    ids.push_back(tokens.ids[k]);
  }
  if (ids.size() > config_.max_len) throw ConfigError("token sequence longer than the encoder's max length");
  const std::size_t l = ids.size(), d = config_.d_model;
  if (l == 0) return Tensor();
  Tensor x = nn::add(nn::embedding(token_table_, ids), nn::slice(positions_, 0, 0, l));
  x = nn::reshape(x, {1, l, d});
  for (const auto& blk : blocks_) {
    const Tensor h = blk.ln1(x);
    auto att = blk.attn(h, h, h);
    x = nn::add(x, att.out);
    x = nn::add(x, blk.ff2(nn::relu(blk.ff1(blk.ln2(x)))));
    if (last_weights) *last_weights = att.weights;
  }
  return final_ln_(x);
}

Tensor TextEncoder::encode(const TokenSeq& tokens) const {
  const Tensor h = hidden(tokens, nullptr);
  const Tensor pooled = h.defined() ? nn::reshape(nn::mean(h, 1, false), {1, config_.d_model})
                                    : Tensor::zeros({1, config_.d_model});
  return proj_(pooled);
}

Tensor TextEncoder::attention_weights(const TokenSeq& tokens) const {
  Tensor w;
  hidden(tokens, &w);
  return w;
}

Tensor TextEncoder::encode_batch(const std::vector<TokenSeq>& batch) const {
  if (batch.empty()) throw ConfigError("encode_batch: empty batch");
  std::vector<Tensor> rows;
  rows.reserve(batch.size());
  for (const auto& t : batch) rows.push_back(encode(t));
  return rows.size() == 1 ? rows[0] : nn::concat(rows, 0);
}

void TextEncoder::collect(const std::string& prefix, nn::TensorList& out) const {
  out.push_back({prefix + ".tokens", token_table_, true});
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const std::string p = prefix + ".block" + std::to_string(b);
    blocks_[b].ln1.collect(p + ".ln1", out);
    blocks_[b].attn.collect(p + ".attn", out);
    blocks_[b].ln2.collect(p + ".ln2", out);
    blocks_[b].ff1.collect(p + ".ff1", out);
    blocks_[b].ff2.collect(p + ".ff2", out);
  }
  final_ln_.collect(prefix + ".ln", out);
  proj_.collect(prefix + ".proj", out);
}

}  // namespace sketchdiff
