#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sketchdiff/nn/ops.hpp"
#include "sketchdiff/nn/tensor.hpp"
#include "sketchdiff/rng.hpp"

namespace sketchdiff::nn {

struct NamedTensor {
  std::string name;
  Tensor tensor;
  bool trainable = true;  // false for buffers such as batch-norm running statistics
};
using TensorList = std::vector<NamedTensor>;

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) parameter.
Tensor init_uniform(Shape shape, std::size_t fan_in, Rng& rng);

// y = x W + b over the last axis.
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool bias = true);

  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
  void collect(const std::string& prefix, TensorList& out) const;

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }

  Tensor weight;  // [in, out]
  Tensor bias;    // [out] or undefined
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim);
  Tensor operator()(const Tensor& x) const { return layernorm(x, gamma, beta); }
  void collect(const std::string& prefix, TensorList& out) const;

  Tensor gamma, beta;
};

void zero_grad(const TensorList& params);
void set_trainable(const TensorList& params, bool on);

// 64-bit FNV-1a over names, shapes and value bytes, in list order.
std::uint64_t hash_tensors(const TensorList& tensors);

// Copies values (not graph state) from `src` into `dst`, matching by name.
void copy_values(const TensorList& src, const TensorList& dst);

class Adam {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 10.0;  // global gradient norm clip; <= 0 disables
  };

  Adam(TensorList params, Options options);

  // Clips, applies one update and zeroes the gradients. Returns the
  // pre-clip global gradient norm.
  double step();
  void set_lr(double lr) { options_.lr = lr; }

 private:
  TensorList params_;
  Options options_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

}  // namespace sketchdiff::nn
