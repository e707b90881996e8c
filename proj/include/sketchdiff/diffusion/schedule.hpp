#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace sketchdiff::diffusion {

// Arrays are indexed by t = 0..T; index 0 holds alpha_bar_0 = 1 and zero
// beta, beta_tilde and sigma.
struct DiffusionSchedule {
  std::size_t steps = 0;  // T
  double beta_start = 0.0, beta_end = 0.0;
  std::vector<double> beta, alpha, alpha_bar, beta_tilde, sigma;
};

// Linear betas from beta_start (t=1) to beta_end (t=T).
DiffusionSchedule make_schedule(std::size_t steps, double beta_start, double beta_end);

// sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps
std::vector<double> forward_sample(std::span<const double> x0, std::size_t t, std::span<const double> eps,
                                   const DiffusionSchedule& s);

// One transition of the forward chain: sqrt(alpha_t) x_{t-1} + sqrt(beta_t) eps.
std::vector<double> forward_step(std::span<const double> x_prev, std::size_t t, std::span<const double> eps,
                                 const DiffusionSchedule& s);

struct Posterior {
  std::vector<double> mean;
  double variance = 0.0;
};
// q(x_{t-1} | x_t, x0)
Posterior posterior_params(std::span<const double> x0, std::span<const double> xt, std::size_t t,
                           const DiffusionSchedule& s);

// (x_t - beta_t / sqrt(1 - alpha_bar_t) eps_hat) / sqrt(alpha_t) + sigma_t z
std::vector<double> reverse_step(std::span<const double> xt, std::span<const double> eps_hat, std::size_t t,
                                 const DiffusionSchedule& s, std::span<const double> z);

}  // namespace sketchdiff::diffusion
