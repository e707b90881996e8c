#include "sketchdiff/diffusion/schedule.hpp"

#include <cmath>
#include <string>

#include "sketchdiff/error.hpp"

namespace sketchdiff::diffusion {

namespace {

void check_t(std::size_t t, const DiffusionSchedule& s) {
  if (t < 1 || t > s.steps) throw ConfigError("diffusion step " + std::to_string(t) + " outside 1.." + std::to_string(s.steps));
}

void check_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ConfigError(std::string(what) + ": size mismatch");
}

}  // namespace

DiffusionSchedule make_schedule(std::size_t steps, double beta_start, double beta_end) {
  if (steps < 1) throw ConfigError("schedule: T must be >= 1");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0)) {
    throw ConfigError("schedule: need 0 < beta_start <= beta_end < 1");
  }
  DiffusionSchedule s;
  s.steps = steps;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.beta.assign(steps + 1, 0.0);
  s.alpha.assign(steps + 1, 1.0);
  s.alpha_bar.assign(steps + 1, 1.0);
  s.beta_tilde.assign(steps + 1, 0.0);
  s.sigma.assign(steps + 1, 0.0);
  for (std::size_t t = 1; t <= steps; ++t) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(steps - 1);
    s.beta[t] = beta_start + (beta_end - beta_start) * frac;
    s.alpha[t] = 1.0 - s.beta[t];
    s.alpha_bar[t] = s.alpha_bar[t - 1] * s.alpha[t];
    s.beta_tilde[t] = (1.0 - s.alpha_bar[t - 1]) / (1.0 - s.alpha_bar[t]) * s.beta[t];
    s.sigma[t] = std::sqrt(s.beta_tilde[t]);
  }
  return s;
}

std::vector<double> forward_sample(std::span<const double> x0, std::size_t t, std::span<const double> eps,
                                   const DiffusionSchedule& s) {
  check_t(t, s);
  check_size(x0.size(), eps.size(), "forward_sample");
  const double a = std::sqrt(s.alpha_bar[t]), b = std::sqrt(1.0 - s.alpha_bar[t]);
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

std::vector<double> forward_step(std::span<const double> x_prev, std::size_t t, std::span<const double> eps,
                                 const DiffusionSchedule& s) {
  check_t(t, s);
  check_size(x_prev.size(), eps.size(), "forward_step");
  const double a = std::sqrt(s.alpha[t]), b = std::sqrt(s.beta[t]);
  std::vector<double> out(x_prev.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x_prev[i] + b * eps[i];
  return out;
}

Posterior posterior_params(std::span<const double> x0, std::span<const double> xt, std::size_t t,
                           const DiffusionSchedule& s) {
  check_t(t, s);
  check_size(x0.size(), xt.size(), "posterior_params");
  const double denom = 1.0 - s.alpha_bar[t];
  const double cx = std::sqrt(s.alpha[t]) * (1.0 - s.alpha_bar[t - 1]) / denom;
  const double c0 = std::sqrt(s.alpha_bar[t - 1]) * s.beta[t] / denom;
  Posterior p;
  p.mean.resize(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) p.mean[i] = cx * xt[i] + c0 * x0[i];
  p.variance = s.beta_tilde[t];
  return p;
}

std::vector<double> reverse_step(std::span<const double> xt, std::span<const double> eps_hat, std::size_t t,
                                 const DiffusionSchedule& s, std::span<const double> z) {
  check_t(t, s);
  check_size(xt.size(), eps_hat.size(), "reverse_step");
  const bool noisy = t > 1;
  if (noisy) check_size(xt.size(), z.size(), "reverse_step");
  const double inv = 1.0 / std::sqrt(s.alpha[t]);
  const double k = (1.0 - s.alpha[t]) / std::sqrt(1.0 - s.alpha_bar[t]);
  std::vector<double> out(xt.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = inv * (xt[i] - k * eps_hat[i]);
    if (noisy) out[i] += s.sigma[t] * z[i];
  }
  return out;
}

}  // namespace sketchdiff::diffusion
