#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "sketchdiff/nn/module.hpp"
#include "sketchdiff/synthdata/sketch.hpp"

namespace sketchdiff {

struct SketchEncoderConfig {
  std::size_t input_size = synth::kSketchSize;  // square W = H
  std::size_t capsules = 8;                     // N_caps
  std::size_t caps_dim = 16;                    // D_caps
  std::size_t input_dim = 16;                   // D_input
  std::size_t routing_iterations = 3;
  std::vector<std::size_t> channels{32, 64, 128};  // stride-2 conv stages

  std::size_t embedding_dim() const { return capsules * caps_dim; }
  // Spatial side of the routed capsule grid.
  std::size_t grid_size() const;
  void validate() const;
};

// Capsule tensors for a batch of B sketches over P = w*h grid sites.
struct CapsuleStack {
  nn::Tensor u;          // [B, N, D, P] primary capsules u^{i,0}
  nn::Tensor attention;  // [B, N(i), N(j), D] a^{ij}, shared by every site
  nn::Tensor logits;     // [B, N(i), N(j), P] routing logits after the last update
  std::vector<nn::Tensor> routing;  // per round, [B, N(i), N(j), P] c^{ij}
  nn::Tensor s;          // [B, N(j), D, P] last-round s^j
  nn::Tensor v;          // squash(s) along D
  std::size_t grid_h = 0, grid_w = 0;
};

// l rounds of attention-weighted routing from lower capsules u [B,N,D,P]
// with attention a [B,N,N,D]:
//   c = softmax_j(b), s^j = sum_i c^{ij} a^{ij} u^i, v^j = squash(s^j),
//   b += <v^j, a^{ij} u^i> between rounds. Logits start at zero.
CapsuleStack attention_routing(const nn::Tensor& u, const nn::Tensor& a, std::size_t iterations);

// Stacks sketches into [B, 1, H, W].
nn::Tensor sketch_batch(const std::vector<const synth::SketchImage*>& sketches, std::size_t expected_size);

struct SketchForward {
  nn::Tensor embedding;  // [B, N*D] spatial mean of the last squashed s^j
  CapsuleStack stack;
};

class SketchEncoder {
 public:
  SketchEncoder() = default;
  SketchEncoder(SketchEncoderConfig config, Rng& rng);

  // [B,1,H,W] -> [B, N*D_input, H/8, W/8]
  nn::Tensor cnn_embed(const nn::Tensor& images) const;
  // 1x1 conv shared over capsule groups, batch norm, ReLU, 2x2 max-pool.
  // Returns u [B, N, D_caps, P]. Training mode uses batch statistics and
  // updates the running buffers.
  nn::Tensor primary_caps(const nn::Tensor& fmap, bool training);
  // sigmoid(1x1 conv of the site-averaged lower capsules) -> [B, N, N, D]
  nn::Tensor attention_weights(const nn::Tensor& u) const;

  SketchForward forward(const nn::Tensor& images, bool training);
  // Inference with running statistics; never writes the encoder.
  SketchForward infer(const nn::Tensor& images) const;
  // infer() on one sketch; embedding is [1, D_f].
  SketchForward encode(const synth::SketchImage& sketch) const;

  void collect(const std::string& prefix, nn::TensorList& out) const;
  const SketchEncoderConfig& config() const { return config_; }

  // The 1x1 capsule transform [D_input, D_caps] and its batch norm.
  nn::Linear caps_transform;
  nn::Tensor bn_gamma, bn_beta;
  nn::BatchNormState bn;

 private:
  SketchEncoderConfig config_;
  std::vector<nn::Tensor> conv_w_, conv_b_;
  nn::Linear attention_;
};

// Capsule-by-dimension attention response A[j][d] = sum_i mean_P(c^{ij}) a^{ij}_d
// of batch item `b`, each column normalized to sum 1 over j. Row-major N x D.
std::vector<double> capsule_attention_map(const CapsuleStack& stack, std::size_t b = 0);

struct InstanceScores {
  double iss = 0.0;  // percent of ink pixels
  double isc = 0.0;  // percent, mean over d of max_j A[j][d]
};
InstanceScores instance_scores(const synth::SketchImage& sketch, const CapsuleStack& stack, std::size_t b = 0);

// Writes capsule_<j>.pgm heatmaps of |s^j| over the grid (upsampled to the
// sketch size) and scores.txt with the raw and normalized attention maps.
void dump_attention(const std::filesystem::path& dir, const synth::SketchImage& sketch, const CapsuleStack& stack);

}  // namespace sketchdiff
