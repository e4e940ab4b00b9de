#pragma once

#include <cstdint>
#include <string_view>

#include "uspine/tensor.hpp"

namespace uspine {

/// Deterministic RNG with a fully specified output sequence (splitmix64
/// stream, Box-Muller normals). The same seed gives the same stream on
/// every platform, which the reproducibility contracts rely on.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64();
    /// Uniform in [0,1).
    double uniform();
    double uniform(double lo, double hi);
    /// Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi);
    /// Standard normal.
    double normal();
    /// Tensor of iid standard normals.
    Tensor normal_tensor(std::vector<int> shape);

    /// Stable seed derivation: mixes a base seed with a tag (e.g. a case id)
    /// so per-case streams do not depend on processing order.
    static std::uint64_t derive(std::uint64_t seed, std::string_view tag);

private:
    std::uint64_t state_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace uspine
