#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <torch/torch.h>

// Central-difference gradient oracle. Samples coordinates from every parameter
// tensor, perturbs them by +-h, and compares the analytic gradient against
// (L(p+h) - L(p-h)) / 2h as a norm-relative error over all sampled pairs.
//
// Piecewise-smooth activations (ReLU, |.|) make finite differences invalid at
// kink points, so every coordinate is probed at two step sizes; coordinates
// where the two estimates disagree sit on a kink and are resampled. The filter
// never looks at the analytic gradient. The loss closure must be deterministic
// across calls.

namespace ganmut::testing {

struct GradCheckOptions {
  int samples_per_param = 2;
  double step = 1e-6;
  int kink_retries = 8;
};

inline double finite_difference_error(const std::vector<torch::Tensor>& params,
                                      const std::function<torch::Tensor()>& loss_fn,
                                      std::mt19937_64& rng,
                                      GradCheckOptions options = {}) {
  for (const auto& p : params) {
    if (p.grad().defined()) p.mutable_grad().zero_();
  }
  auto loss = loss_fn();
  loss.backward();

  std::vector<double> analytic;
  std::vector<double> numeric;
  for (const auto& p : params) {
    auto grad = p.grad().defined() ? p.grad().detach().clone().flatten()
                                   : torch::zeros({p.numel()}, p.options());
    auto flat = p.detach().view({-1});
    const auto n = flat.numel();

    auto eval_at = [&](std::int64_t idx, double value) {
      double original = flat[idx].item<double>();
      {
        torch::NoGradGuard no_grad;
        flat[idx] = value;
      }
      const double out = loss_fn().item<double>();
      {
        torch::NoGradGuard no_grad;
        flat[idx] = original;
      }
      return out;
    };
    auto central = [&](std::int64_t idx, double h) {
      const double center = flat[idx].item<double>();
      return (eval_at(idx, center + h) - eval_at(idx, center - h)) / (2.0 * h);
    };

    for (int s = 0; s < options.samples_per_param; ++s) {
      for (int attempt = 0; attempt <= options.kink_retries; ++attempt) {
        const auto idx =
            static_cast<std::int64_t>((rng() >> 11) % static_cast<std::uint64_t>(n));
        const double fd_coarse = central(idx, options.step);
        const double fd_fine = central(idx, options.step / 4.0);
        const double disagreement = std::fabs(fd_coarse - fd_fine);
        const bool smooth =
            disagreement <= std::max(1e-9, 1e-3 * std::fabs(fd_fine)) ||
            attempt == options.kink_retries;
        if (!smooth) continue;
        analytic.push_back(grad[idx].item<double>());
        numeric.push_back(fd_fine);
        break;
      }
    }
  }

  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double d = analytic[i] - numeric[i];
    diff2 += d * d;
    a2 += analytic[i] * analytic[i];
    n2 += numeric[i] * numeric[i];
  }
  const double scale = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
  return std::sqrt(diff2) / scale;
}

}  // namespace ganmut::testing
