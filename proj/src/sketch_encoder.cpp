#include "sketchdiff/sketch_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "sketchdiff/error.hpp"
#include "sketchdiff/synthdata/dataset_io.hpp"

namespace sketchdiff {

using nn::Tensor;

std::size_t SketchEncoderConfig::grid_size() const { return input_size >> (channels.size() + 1); }

void SketchEncoderConfig::validate() const {
  if (channels.empty()) throw ConfigError("sketch encoder: at least one conv stage is required");
  if (capsules == 0 || caps_dim == 0 || input_dim == 0) throw ConfigError("sketch encoder: zero capsule size");
  if (channels.back() != capsules * input_dim) {
    throw ConfigError("sketch encoder: last conv stage must have capsules * input_dim channels");
  }
  if (routing_iterations == 0) throw ConfigError("sketch encoder: routing needs at least one iteration");
  const std::size_t div = std::size_t{1} << (channels.size() + 1);
  if (input_size < 16 || input_size % div) {
    throw ConfigError("sketch encoder: input size " + std::to_string(input_size) + " must be >= 16 and divisible by " +
                      std::to_string(div));
  }
}

SketchEncoder::SketchEncoder(SketchEncoderConfig config, Rng& rng) : config_(std::move(config)) {
  config_.validate();
  std::size_t cin = 1;
  for (std::size_t cout : config_.channels) {
    conv_w_.push_back(nn::init_uniform({cout, cin, 3, 3}, cin * 9, rng));
    conv_b_.push_back(nn::init_uniform({cout}, cin * 9, rng));
    cin = cout;
  }
  const std::size_t n = config_.capsules, d = config_.caps_dim;
  caps_transform = nn::Linear(config_.input_dim, d, rng);
  bn_gamma = Tensor::full({n * d}, 1.0, true);
  bn_beta = Tensor::zeros({n * d}, true);
  bn.running_mean = Tensor::zeros({n * d});
  bn.running_var = Tensor::full({n * d}, 1.0);
  attention_ = nn::Linear(n * d, n * n * d, rng);
}

Tensor SketchEncoder::cnn_embed(const Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != config_.input_size ||
      images.dim(3) != config_.input_size) {
    throw ConfigError("cnn_embed: expected [B,1," + std::to_string(config_.input_size) + "," +
                      std::to_string(config_.input_size) + "], got " + nn::shape_str(images.shape()));
  }
  Tensor x = images;
  for (std::size_t s = 0; s < conv_w_.size(); ++s) x = nn::relu(nn::conv2d(x, conv_w_[s], conv_b_[s], 2, 1));
  return x;
}

Tensor SketchEncoder::primary_caps(const Tensor& fmap, bool training) {
  const std::size_t n = config_.capsules, din = config_.input_dim, d = config_.caps_dim;
  if (fmap.rank() != 4 || fmap.dim(1) != n * din) throw ConfigError("primary_caps: bad feature map " + nn::shape_str(fmap.shape()));
  const std::size_t b = fmap.dim(0), h = fmap.dim(2), w = fmap.dim(3);
  Tensor x = nn::permute(nn::reshape(fmap, {b, n, din, h * w}), {0, 1, 3, 2});
  x = nn::permute(caps_transform(x), {0, 1, 3, 2});
  x = nn::reshape(x, {b, n * d, h, w});
  x = nn::maxpool2d(nn::relu(nn::batchnorm2d(x, bn_gamma, bn_beta, bn, training)), 2);
  return nn::reshape(x, {b, n, d, (h / 2) * (w / 2)});
}

Tensor SketchEncoder::attention_weights(const Tensor& u) const {
  const std::size_t b = u.dim(0), n = config_.capsules, d = config_.caps_dim;
  const Tensor pooled = nn::reshape(nn::mean(u, 3, false), {b, n * d});
  return nn::reshape(nn::sigmoid(attention_(pooled)), {b, n, n, d});
}

CapsuleStack attention_routing(const Tensor& u, const Tensor& a, std::size_t iterations) {
  if (iterations == 0) throw ConfigError("attention_routing: iterations must be >= 1");
  if (u.rank() != 4 || a.rank() != 4 || a.dim(0) != u.dim(0) || a.dim(1) != u.dim(1) || a.dim(3) != u.dim(2)) {
    throw ConfigError("attention_routing: u " + nn::shape_str(u.shape()) + " a " + nn::shape_str(a.shape()));
  }
  const std::size_t b = u.dim(0), ni = u.dim(1), d = u.dim(2), p = u.dim(3), nj = a.dim(2);
  CapsuleStack st;
  st.u = u;
  st.attention = a;
  // u_hat^{ij} = a^{ij} * u^i : [B, Ni, Nj, D, P]
  const Tensor u_hat = nn::mul(nn::reshape(a, {b, ni, nj, d, 1}), nn::reshape(u, {b, ni, 1, d, p}));
  Tensor logits = Tensor::zeros({b, ni, nj, p});
  for (std::size_t r = 0; r < iterations; ++r) {
    const Tensor c = nn::softmax(logits, 2);
    st.routing.push_back(c);
    const Tensor weighted = nn::mul(nn::reshape(c, {b, ni, nj, 1, p}), u_hat);
    st.s = nn::reshape(nn::sum(weighted, 1, false), {b, nj, d, p});
    st.v = nn::squash(st.s, 2);
    if (r + 1 < iterations) {
      const Tensor agree = nn::sum(nn::mul(nn::reshape(st.v, {b, 1, nj, d, p}), u_hat), 3, false);
      logits = nn::add(logits, agree);
    }
  }
  st.logits = logits;
  return st;
}

Tensor sketch_batch(const std::vector<const synth::SketchImage*>& sketches, std::size_t expected_size) {
  if (sketches.empty()) throw ConfigError("sketch_batch: empty batch");
  std::vector<double> values;
  values.reserve(sketches.size() * expected_size * expected_size);
  for (const auto* s : sketches) {
    if (s->width != expected_size || s->height != expected_size) {
      throw ConfigError("sketch is " + std::to_string(s->width) + "x" + std::to_string(s->height) + ", encoder expects " +
                        std::to_string(expected_size) + "x" + std::to_string(expected_size));
    }
    values.insert(values.end(), s->pixels.begin(), s->pixels.end());
  }
  return Tensor::from({sketches.size(), 1, expected_size, expected_size}, std::move(values));
}

SketchForward SketchEncoder::forward(const Tensor& images, bool training) {
  SketchForward out;
  const Tensor u = primary_caps(cnn_embed(images), training);
  out.stack = attention_routing(u, attention_weights(u), config_.routing_iterations);
  out.stack.grid_h = out.stack.grid_w = config_.grid_size();
  const std::size_t b = u.dim(0);
  out.embedding = nn::reshape(nn::mean(out.stack.v, 3, false), {b, config_.embedding_dim()});
  return out;
}

SketchForward SketchEncoder::infer(const Tensor& images) const {
  // eval mode only reads the running buffers
  return const_cast<SketchEncoder*>(this)->forward(images, false);
}

SketchForward SketchEncoder::encode(const synth::SketchImage& sketch) const {
  return infer(sketch_batch({&sketch}, config_.input_size));
}

void SketchEncoder::collect(const std::string& prefix, nn::TensorList& out) const {
  for (std::size_t s = 0; s < conv_w_.size(); ++s) {
    out.push_back({prefix + ".conv" + std::to_string(s) + ".weight", conv_w_[s], true});
    out.push_back({prefix + ".conv" + std::to_string(s) + ".bias", conv_b_[s], true});
  }
  caps_transform.collect(prefix + ".caps", out);
  out.push_back({prefix + ".bn.gamma", bn_gamma, true});
  out.push_back({prefix + ".bn.beta", bn_beta, true});
  out.push_back({prefix + ".bn.running_mean", bn.running_mean, false});
  out.push_back({prefix + ".bn.running_var", bn.running_var, false});
  attention_.collect(prefix + ".attention", out);
}

std::vector<double> capsule_attention_map(const CapsuleStack& stack, std::size_t b) {
  if (stack.routing.empty()) throw ContractError("capsule_attention_map: stack has no routing rounds");
  const Tensor& c = stack.routing.back();
  const Tensor& a = stack.attention;
  const std::size_t ni = a.dim(1), nj = a.dim(2), d = a.dim(3), p = c.dim(3);
  if (b >= a.dim(0)) throw ConfigError("capsule_attention_map: batch index out of range");
  std::vector<double> map(nj * d, 0.0);
  for (std::size_t i = 0; i < ni; ++i)
    for (std::size_t j = 0; j < nj; ++j) {
      double cbar = 0.0;
      for (std::size_t q = 0; q < p; ++q) cbar += c[((b * ni + i) * nj + j) * p + q];
      cbar /= static_cast<double>(p);
      for (std::size_t k = 0; k < d; ++k) map[j * d + k] += cbar * a[((b * ni + i) * nj + j) * d + k];
    }
  for (std::size_t k = 0; k < d; ++k) {
    double total = 0.0;
    for (std::size_t j = 0; j < nj; ++j) total += map[j * d + k];
    for (std::size_t j = 0; j < nj; ++j) map[j * d + k] = total > 0.0 ? map[j * d + k] / total : 1.0 / static_cast<double>(nj);
  }
  return map;
}

InstanceScores instance_scores(const synth::SketchImage& sketch, const CapsuleStack& stack, std::size_t b) {
  InstanceScores sc;
  sc.iss = 100.0 * sketch.ink_fraction();
  const auto map = capsule_attention_map(stack, b);
  const std::size_t nj = stack.attention.dim(2), d = stack.attention.dim(3);
  double total = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    double best = 0.0;
    for (std::size_t j = 0; j < nj; ++j) best = std::max(best, map[j * d + k]);
    total += best;
  }
  sc.isc = 100.0 * total / static_cast<double>(d);
  return sc;
}

void dump_attention(const std::filesystem::path& dir, const synth::SketchImage& sketch, const CapsuleStack& stack) {
  std::filesystem::create_directories(dir);
  const std::size_t nj = stack.s.dim(1), d = stack.s.dim(2), p = stack.s.dim(3);
  const std::size_t gh = stack.grid_h, gw = stack.grid_w;
  if (gh * gw != p) throw ContractError("dump_attention: grid size does not match the capsule stack");
  std::vector<double> norms(nj * p, 0.0);
  double peak = 0.0;
  for (std::size_t j = 0; j < nj; ++j)
    for (std::size_t q = 0; q < p; ++q) {
      double n2 = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        const double x = stack.s[(j * d + k) * p + q];
        n2 += x * x;
      }
      norms[j * p + q] = std::sqrt(n2);
      peak = std::max(peak, norms[j * p + q]);
    }
  for (std::size_t j = 0; j < nj; ++j) {
    synth::SketchImage heat(sketch.width, sketch.height);
    for (std::size_t r = 0; r < heat.height; ++r)
      for (std::size_t col = 0; col < heat.width; ++col) {
        const std::size_t q = (r * gh / heat.height) * gw + col * gw / heat.width;
        heat.at(r, col) = peak > 0.0 ? norms[j * p + q] / peak : 0.0;
      }
    synth::write_pgm(dir / ("capsule_" + std::to_string(j) + ".pgm"), heat);
  }
  std::ofstream out(dir / "scores.txt");
  if (!out) throw DataError("cannot write attention scores in '" + dir.string() + "'");
  const auto sc = instance_scores(sketch, stack);
  const auto map = capsule_attention_map(stack);
  char buf[64];
  std::snprintf(buf, sizeof buf, "iss = %.6f\nisc = %.6f\n", sc.iss, sc.isc);
  out << buf;
  out << "# normalized A[j][d], one capsule per line\n";
  for (std::size_t j = 0; j < nj; ++j) {
    out << "attention." << j << " =";
    for (std::size_t k = 0; k < d; ++k) {
      std::snprintf(buf, sizeof buf, " %.9g", map[j * d + k]);
      out << buf;
    }
    out << "\n";
  }
  out << "# |s^j| per grid site, row-major " << gh << "x" << gw << "\n";
  for (std::size_t j = 0; j < nj; ++j) {
    out << "norm." << j << " =";
    for (std::size_t q = 0; q < p; ++q) {
      std::snprintf(buf, sizeof buf, " %.9g", norms[j * p + q]);
      out << buf;
    }
    out << "\n";
  }
}

}  // namespace sketchdiff
