#include "uspine/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace uspine {

namespace {
constexpr double kMinStepRatio = 1e-3;  // beta clip: ratio >= 0.001
}

double NoiseSchedule::at(int t) const {
    if (t < 0 || t > T)
        throw std::out_of_range("timestep " + std::to_string(t) + " outside [0," + std::to_string(T) + "]");
    return alpha_bar[static_cast<size_t>(t)];
}

NoiseSchedule make_cosine_schedule(int T, double s) {
    if (T < 1) throw std::invalid_argument("schedule needs T >= 1, got " + std::to_string(T));
    if (!(s > 0.0 && s < 0.1))
        throw std::invalid_argument("schedule offset s must lie in (0, 0.1), got " + std::to_string(s));

    auto f = [&](int t) {
        double g = (static_cast<double>(t) / T + s) / (1.0 + s);
        double c = std::cos(g * M_PI / 2.0);
        return c * c;
    };

    NoiseSchedule sched;
    sched.T = T;
    sched.s = s;
    sched.alpha_bar.resize(static_cast<size_t>(T) + 1);
    sched.alpha_bar[0] = 1.0;
    double f0 = f(0);
    double prev_f = f0;
    for (int t = 1; t <= T; ++t) {
        double ft = f(t);
        double ratio = std::max(ft / prev_f, kMinStepRatio);
        sched.alpha_bar[static_cast<size_t>(t)] = sched.alpha_bar[static_cast<size_t>(t - 1)] * ratio;
        prev_f = ft;
    }
    validate_schedule(sched);
    return sched;
}

void validate_schedule(const NoiseSchedule& sched) {
    if (sched.T < 1 || sched.alpha_bar.size() != static_cast<size_t>(sched.T) + 1)
        throw std::invalid_argument("schedule has inconsistent length");
    if (sched.alpha_bar[0] != 1.0)
        throw std::invalid_argument("schedule must start at alpha_bar[0] = 1");
    for (int t = 1; t <= sched.T; ++t) {
        double cur = sched.alpha_bar[static_cast<size_t>(t)];
        double prev = sched.alpha_bar[static_cast<size_t>(t - 1)];
        if (!(cur > 0.0 && cur <= 1.0))
            throw std::invalid_argument("alpha_bar[" + std::to_string(t) + "] outside (0,1]");
        if (!(cur < prev))
            throw std::invalid_argument("alpha_bar must strictly decrease at t=" + std::to_string(t));
        if (cur / prev < kMinStepRatio * (1.0 - 1e-12))
            throw std::invalid_argument("step ratio below clip at t=" + std::to_string(t));
    }
    if (!(sched.alpha_bar.back() < 0.01))
        throw std::invalid_argument("alpha_bar[T] must be < 0.01 (near-pure noise)");
}

TimestepSubsequence make_timestep_subsequence(int T, int n_steps) {
    if (n_steps < 1 || n_steps > T)
        throw std::invalid_argument("n_steps must lie in [1, T], got " + std::to_string(n_steps) +
                                    " with T=" + std::to_string(T));
    TimestepSubsequence seq;
    seq.steps.resize(static_cast<size_t>(n_steps) + 1);
    for (int i = 0; i <= n_steps; ++i) {
        long long k = n_steps - i;
        seq.steps[static_cast<size_t>(i)] = static_cast<int>((static_cast<long long>(T) * k) / n_steps);
    }
    return seq;
}

}  // namespace uspine
