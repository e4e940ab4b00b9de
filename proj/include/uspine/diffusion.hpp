#pragma once

#include "uspine/image.hpp"
#include "uspine/schedule.hpp"

namespace uspine {

/// x_t = sqrt(alpha_bar[t]) * x0 + sqrt(1 - alpha_bar[t]) * eps.
/// Values are left unclamped; only the final sampling output is clamped.
Image forward_diffuse(const Image& x0, int t, const Tensor& eps, const NoiseSchedule& sched);

/// x0_hat = (x_t - sqrt(1 - alpha_bar[t]) * eps_hat) / sqrt(alpha_bar[t]).
/// Rejects t = 0 (the input already is x0).
Image predict_x0(const Image& x_t, const Tensor& eps_hat, int t, const NoiseSchedule& sched);

/// Deterministic reverse update (no stochastic term):
///   x_prev = sqrt(ab_prev/ab_t) * x_t
///          - (sqrt((1-ab_t) * ab_prev/ab_t) - sqrt(1-ab_prev)) * eps_hat
/// Requires T >= t > t_prev >= 0.
Image ddim_step(const Image& x_t, const Tensor& eps_hat, int t, int t_prev, const NoiseSchedule& sched);

}  // namespace uspine
