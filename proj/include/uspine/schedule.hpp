#pragma once

#include <vector>

namespace uspine {

/// Cumulative signal coefficients of the forward diffusion process.
/// alpha_bar[t] is the squared signal fraction after t noising steps,
/// indexed t = 0..T with alpha_bar[0] = 1.
struct NoiseSchedule {
    int T = 0;
    double s = 0.0;
    std::vector<double> alpha_bar;  // length T+1

    double at(int t) const;
};

/// Cosine schedule: alpha_bar[t] = f(t)/f(0), f(t) = cos^2(((t/T + s)/(1+s)) * pi/2),
/// with per-step ratios alpha_bar[t]/alpha_bar[t-1] clamped to >= 1e-3 so the
/// terminal steps never collapse to zero signal.
NoiseSchedule make_cosine_schedule(int T, double s);

/// Validates the schedule invariants (endpoint values, strict decrease,
/// clamped ratios); throws std::invalid_argument on violation.
void validate_schedule(const NoiseSchedule& sched);

/// Strictly decreasing timesteps from T down to 0 inclusive, uniformly
/// strided: steps[i] = floor(T * (n_steps - i) / n_steps). Length n_steps+1.
struct TimestepSubsequence {
    std::vector<int> steps;
    int n_steps() const { return static_cast<int>(steps.size()) - 1; }
};

TimestepSubsequence make_timestep_subsequence(int T, int n_steps);

}  // namespace uspine
