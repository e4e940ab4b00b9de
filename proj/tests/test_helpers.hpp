#pragma once

#include <cmath>
#include <functional>

#include "uspine/backbone.hpp"
#include "uspine/rng.hpp"

namespace uspine::testing {

/// Re-randomizes every parameter (the production init zeroes several convs,
/// which would make most finite-difference probes trivially 0 = 0).
inline void randomize_params(ParamStore& store, std::uint64_t seed, double scale = 0.1) {
    Rng rng(seed);
    for (auto& e : store.entries())
        for (std::int64_t i = 0; i < e.tensor.size(); ++i) e.tensor[i] = rng.normal() * scale;
}

/// Central finite difference of a scalar function w.r.t. one parameter
/// element.
inline double central_diff(Tensor& param, std::int64_t index, double step,
                           const std::function<double()>& eval) {
    double saved = param[index];
    param[index] = saved + step;
    double up = eval();
    param[index] = saved - step;
    double down = eval();
    param[index] = saved;
    return (up - down) / (2.0 * step);
}

inline double rel_error(double a, double b) {
    double denom = std::max({std::fabs(a), std::fabs(b), 1e-8});
    return std::fabs(a - b) / denom;
}

}  // namespace uspine::testing
