#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sketchdiff/nn/module.hpp"
#include "sketchdiff/rng.hpp"

namespace sketchdiff::testing {

inline nn::Tensor random_tensor(nn::Shape shape, Rng& rng, double scale = 1.0, bool grad = false) {
  std::vector<double> v(nn::numel(shape));
  for (auto& x : v) x = scale * rng.normal();
  return nn::Tensor::from(std::move(shape), std::move(v), grad);
}

struct GradCheck {
  double max_rel = 0.0;
  std::size_t checked = 0;
  std::string worst;
};

// Central differences on up to `per_tensor` entries of every tensor. The
// error is |a - n| / max(|a|, |n|, floor), so entries whose gradients are
// both below `floor` are judged on an absolute scale.
inline GradCheck gradcheck(const std::function<nn::Tensor()>& loss_fn, const std::vector<nn::NamedTensor>& params,
                           std::size_t per_tensor = 12, double h = 1e-6, double floor = 1e-5, std::uint64_t seed = 1) {
  for (const auto& p : params) p.tensor.node()->grad.clear();
  nn::Tensor loss = loss_fn();
  loss.backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) {
    auto g = p.tensor.grad();
    analytic.emplace_back(g.begin(), g.end());
  }
  GradCheck r;
  Rng rng(seed);
  for (std::size_t k = 0; k < params.size(); ++k) {
    nn::Tensor t = params[k].tensor;
    std::vector<std::size_t> idx(t.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    rng.shuffle(idx);
    idx.resize(std::min(idx.size(), per_tensor));
    for (auto i : idx) {
      const double x = t.data()[i];
      t.data()[i] = x + h;
      const double up = loss_fn().item();
      t.data()[i] = x - h;
      const double down = loss_fn().item();
      t.data()[i] = x;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[k][i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++r.checked;
      if (err > r.max_rel) {
        r.max_rel = err;
        r.worst = params[k].name + "[" + std::to_string(i) + "] analytic " + std::to_string(a) + " numeric " +
                  std::to_string(numeric);
      }
    }
  }
  return r;
}

inline std::vector<nn::NamedTensor> leaves(const std::vector<nn::Tensor>& ts) {
  std::vector<nn::NamedTensor> out;
  for (std::size_t i = 0; i < ts.size(); ++i) out.push_back({"input" + std::to_string(i), ts[i], true});
  return out;
}

inline std::vector<nn::NamedTensor> trainable_only(const nn::TensorList& list) {
  std::vector<nn::NamedTensor> out;
  for (const auto& t : list) {
    if (t.trainable) out.push_back(t);
  }
  return out;
}

}  // namespace sketchdiff::testing
