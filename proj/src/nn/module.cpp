#include "sketchdiff/nn/module.hpp"

#include <cmath>
#include <cstring>
#include <map>

#include "sketchdiff/error.hpp"

namespace sketchdiff::nn {

Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(v), true);
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias) {
  weight = init_uniform({in, out}, in, rng);
  if (with_bias) bias = init_uniform({out}, in, rng);
}

void Linear::collect(const std::string& prefix, TensorList& out) const {
  out.push_back({prefix + ".weight", weight, true});
  if (bias.defined()) out.push_back({prefix + ".bias", bias, true});
}

LayerNorm::LayerNorm(std::size_t dim)
    : gamma(Tensor::full({dim}, 1.0, true)), beta(Tensor::zeros({dim}, true)) {}

void LayerNorm::collect(const std::string& prefix, TensorList& out) const {
  out.push_back({prefix + ".gamma", gamma, true});
  out.push_back({prefix + ".beta", beta, true});
}

void zero_grad(const TensorList& params) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

void set_trainable(const TensorList& params, bool on) {
  for (const auto& p : params) {
    if (!p.trainable) continue;
    Tensor t = p.tensor;
    t.set_requires_grad(on);
  }
}

std::uint64_t hash_tensors(const TensorList& tensors) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ull;
    }
  };
  for (const auto& nt : tensors) {
    feed(nt.name.data(), nt.name.size());
    for (auto d : nt.tensor.shape()) {
      const auto d64 = static_cast<std::uint64_t>(d);
      feed(&d64, sizeof d64);
    }
    feed(nt.tensor.data().data(), nt.tensor.size() * sizeof(double));
  }
  return h;
}

void copy_values(const TensorList& src, const TensorList& dst) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& s : src) by_name[s.name] = &s.tensor;
  for (const auto& d : dst) {
    auto it = by_name.find(d.name);
    if (it == by_name.end()) throw CheckpointError("missing tensor '" + d.name + "'");
    if (it->second->shape() != d.tensor.shape()) {
      throw CheckpointError("tensor '" + d.name + "' has shape " + shape_str(it->second->shape()) + ", expected " +
                            shape_str(d.tensor.shape()));
    }
    Tensor t = d.tensor;
    std::memcpy(t.data().data(), it->second->data().data(), t.size() * sizeof(double));
  }
}

Adam::Adam(TensorList params, Options options) : options_(options) {
  for (auto& p : params) {
    if (p.trainable) params_.push_back(p);
  }
  for (const auto& p : params_) {
    m_.emplace_back(p.tensor.size(), 0.0);
    v_.emplace_back(p.tensor.size(), 0.0);
  }
}

double Adam::step() {
  double sq = 0.0;
  for (const auto& p : params_) {
    for (double g : p.tensor.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  const double clip = (options_.clip_norm > 0.0 && norm > options_.clip_norm) ? options_.clip_norm / norm : 1.0;
  ++t_;
  const double bc1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor t = params_[k].tensor;
    auto grad = t.grad();
    auto value = t.data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double g = grad[i] * clip;
      m[i] = options_.beta1 * m[i] + (1.0 - options_.beta1) * g;
      v[i] = options_.beta2 * v[i] + (1.0 - options_.beta2) * g * g;
      value[i] -= options_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + options_.eps);
    }
    t.zero_grad();
  }
  return norm;
}

}  // namespace sketchdiff::nn
