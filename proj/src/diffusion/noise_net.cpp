#include "sketchdiff/diffusion/noise_net.hpp"

#include <cmath>
#include <numbers>

#include "sketchdiff/error.hpp"

namespace sketchdiff::diffusion {

using nn::Tensor;

Tensor time_embedding(const std::vector<std::size_t>& t, std::size_t dim) {
  std::vector<double> v(t.size() * dim);
  const std::size_t half = dim / 2;
  for (std::size_t r = 0; r < t.size(); ++r)
    for (std::size_t k = 0; k < half; ++k) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(half));
      v[r * dim + k] = std::sin(static_cast<double>(t[r]) * freq);
      v[r * dim + half + k] = std::cos(static_cast<double>(t[r]) * freq);
    }
  return Tensor::from({t.size(), dim}, std::move(v));
}

Tensor fourier_features(const Tensor& x, std::size_t frequencies) {
  const std::size_t rows = x.dim(0), d = x.dim(1), width = d * (1 + 2 * frequencies);
  std::vector<double> v(rows * width);
  for (std::size_t r = 0; r < rows; ++r) {
    double* out = v.data() + r * width;
    for (std::size_t c = 0; c < d; ++c) {
      const double u = x.data()[r * d + c];
      out[c] = u;
      for (std::size_t k = 0; k < frequencies; ++k) {
        const double w = std::ldexp(std::numbers::pi, static_cast<int>(k)) * u;
        out[d + (2 * k) * d + c] = std::sin(w);
        out[d + (2 * k + 1) * d + c] = std::cos(w);
      }
    }
  }
  return Tensor::from({rows, width}, std::move(v));
}

NoiseNet::NoiseNet(NoiseNetConfig config, Rng& rng) : config_(config) {
  if (config_.layers == 0 || config_.hidden == 0) throw ConfigError("noise net: need at least one hidden layer");
  if (config_.time_dim % 2) throw ConfigError("noise net: time embedding width must be even");
  const std::size_t z = config_.time_dim + config_.cond_dim;
  cond_norm_ = nn::LayerNorm(config_.cond_dim);
  std::size_t in = config_.point_dim + config_.extra_dim * (1 + 2 * config_.extra_frequencies);
  for (std::size_t l = 0; l <= config_.layers; ++l) {
    const std::size_t out = l == config_.layers ? config_.point_dim : config_.hidden;
    // initialized with the fan-in of the concatenated [h ; z] input
    nn::Linear layer, proj;
    layer.weight = nn::init_uniform({in, out}, in + z, rng);
    layer.bias = nn::init_uniform({out}, in + z, rng);
    proj.weight = nn::init_uniform({z, out}, in + z, rng);
    layers_.push_back(layer);
    cond_.push_back(proj);
    in = out;
  }
}

Tensor NoiseNet::predict(const Tensor& x, const std::vector<std::size_t>& t, const Tensor& cond, const Tensor* extra) const {
  const std::size_t g = t.size();
  if (g == 0 || cond.rank() != 2 || cond.dim(0) != g || cond.dim(1) != config_.cond_dim) {
    throw ConfigError("noise net: condition must be [" + std::to_string(g) + "," + std::to_string(config_.cond_dim) + "]");
  }
  if (x.rank() != 2 || x.dim(1) != config_.point_dim || x.dim(0) % g) {
    throw ConfigError("noise net: points must be [G*P," + std::to_string(config_.point_dim) + "], got " +
                      nn::shape_str(x.shape()));
  }
  Tensor h = x;
  if (config_.extra_dim > 0) {
    if (!extra || !extra->defined()) throw ContractError("noise net: appearance stage requires g0");
    if (extra->rank() != 2 || extra->dim(0) != x.dim(0) || extra->dim(1) != config_.extra_dim) {
      throw ConfigError("noise net: g0 must be [G*P," + std::to_string(config_.extra_dim) + "]");
    }
    h = nn::concat({x, fourier_features(*extra, config_.extra_frequencies)}, 1);
  }
  const Tensor z = nn::concat({time_embedding(t, config_.time_dim), cond_norm_(cond)}, 1);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    h = nn::add_grouped(layers_[l](h), cond_[l](z));
    if (l + 1 < layers_.size()) h = nn::silu(h);
  }
  return h;
}

void NoiseNet::collect(const std::string& prefix, nn::TensorList& out) const {
  cond_norm_.collect(prefix + ".cond_norm", out);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    layers_[l].collect(prefix + ".layer" + std::to_string(l), out);
    cond_[l].collect(prefix + ".cond" + std::to_string(l), out);
  }
}

NoisedBatch noise_batch(const Tensor& x0, std::size_t groups, const DiffusionSchedule& s, Rng& rng) {
  if (groups == 0 || x0.rank() != 2 || x0.dim(0) % groups) throw ConfigError("noise_batch: x0 must be [G*P, d]");
  NoisedBatch nb;
  const std::size_t rows = x0.dim(0) / groups, d = x0.dim(1);
  for (std::size_t gi = 0; gi < groups; ++gi) nb.t.push_back(static_cast<std::size_t>(rng.integer(1, static_cast<std::int64_t>(s.steps))));
  std::vector<double> eps(x0.size());
  rng.fill_normal(eps);
  std::vector<double> xt(x0.size());
  for (std::size_t gi = 0; gi < groups; ++gi) {
    const double a = std::sqrt(s.alpha_bar[nb.t[gi]]), b = std::sqrt(1.0 - s.alpha_bar[nb.t[gi]]);
    for (std::size_t i = gi * rows * d; i < (gi + 1) * rows * d; ++i) xt[i] = a * x0[i] + b * eps[i];
  }
  nb.xt = Tensor::from(x0.shape(), std::move(xt));
  nb.eps = Tensor::from(x0.shape(), std::move(eps));
  return nb;
}

Tensor denoise_loss(const NoisePredictor& predictor, const Tensor& x0, std::size_t groups, const DiffusionSchedule& s,
                    Rng& rng) {
  const NoisedBatch nb = noise_batch(x0, groups, s, rng);
  return nn::mse(predictor(nb.xt, nb.t), nb.eps);
}

Tensor denoise_loss(const NoiseNet& net, const Tensor& x0, const Tensor& cond, const DiffusionSchedule& s, Rng& rng,
                    const Tensor* extra) {
  return denoise_loss([&](const Tensor& xt, const std::vector<std::size_t>& t) { return net.predict(xt, t, cond, extra); },
                      x0, cond.dim(0), s, rng);
}

}  // namespace sketchdiff::diffusion
