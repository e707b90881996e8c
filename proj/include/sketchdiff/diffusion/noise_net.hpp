#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "sketchdiff/diffusion/schedule.hpp"
#include "sketchdiff/nn/module.hpp"

namespace sketchdiff::diffusion {

struct NoiseNetConfig {
  std::size_t point_dim = 3;
  std::size_t extra_dim = 0;  // per-point side input (g0 for appearance)
  std::size_t extra_frequencies = 6;  // sin/cos octaves appended to the side input
  std::size_t cond_dim = 128;
  std::size_t time_dim = 64;
  std::size_t hidden = 256;
  std::size_t layers = 4;
};

// [v, sin(2^k pi v), cos(2^k pi v)] for k < frequencies, per column of x.
nn::Tensor fourier_features(const nn::Tensor& x, std::size_t frequencies);

// Sinusoidal embedding of integer steps -> [t.size(), dim].
nn::Tensor time_embedding(const std::vector<std::size_t>& t, std::size_t dim);

// Per-point MLP shared by every point. The condition is layer-normalized,
// then the [time embedding ; condition] vector of each shape is projected and added at every layer, which equals
// concatenating it to each layer's input.
class NoiseNet {
 public:
  NoiseNet() = default;
  NoiseNet(NoiseNetConfig config, Rng& rng);

  // x [G*P, point_dim] for G shapes of P points, t one step per shape,
  // cond [G, cond_dim], extra [G*P, extra_dim] when configured.
  nn::Tensor predict(const nn::Tensor& x, const std::vector<std::size_t>& t, const nn::Tensor& cond,
                     const nn::Tensor* extra = nullptr) const;

  void collect(const std::string& prefix, nn::TensorList& out) const;
  const NoiseNetConfig& config() const { return config_; }

 private:
  NoiseNetConfig config_;
  nn::LayerNorm cond_norm_;
  std::vector<nn::Linear> layers_;  // hidden layers then output
  std::vector<nn::Linear> cond_;    // per-layer condition projections
};

// eps_hat = f(x_t, t), one t per shape
using NoisePredictor = std::function<nn::Tensor(const nn::Tensor& xt, const std::vector<std::size_t>& t)>;

struct NoisedBatch {
  nn::Tensor xt;
  nn::Tensor eps;
  std::vector<std::size_t> t;
};
// Draws t uniform in 1..T per shape and eps ~ N(0, I) for x0 [G*P, d].
NoisedBatch noise_batch(const nn::Tensor& x0, std::size_t groups, const DiffusionSchedule& s, Rng& rng);

// mean over points and channels of (eps - eps_hat)^2
nn::Tensor denoise_loss(const NoisePredictor& predictor, const nn::Tensor& x0, std::size_t groups,
                        const DiffusionSchedule& s, Rng& rng);
nn::Tensor denoise_loss(const NoiseNet& net, const nn::Tensor& x0, const nn::Tensor& cond, const DiffusionSchedule& s,
                        Rng& rng, const nn::Tensor* extra = nullptr);

}  // namespace sketchdiff::diffusion
