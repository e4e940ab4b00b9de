#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "uspine/graph.hpp"
#include "uspine/params.hpp"
#include "uspine/rng.hpp"

namespace uspine {

/// Shared U-Net configuration for the noise predictor and the feature
/// extractor. `levels` is the number of down/up-samplings (M = 3); the
/// multipliers list has one entry per level plus the bottleneck.
struct BackboneConfig {
    int image_size = 64;
    int in_channels = 1;
    int base_channels = 16;
    std::vector<int> channel_multipliers = {1, 2, 2, 4};
    int levels = 3;
    int out_channels = 1;
    bool use_timestep_embedding = true;
    int embedding_dim = 64;

    /// Channels at skip level i (1-based), i = levels+1 gives the bottleneck.
    int level_channels(int level) const;
    void validate() const;

    std::string to_json() const;
    static BackboneConfig from_json(const std::string& js);
    bool operator==(const BackboneConfig&) const = default;
};

/// Per-level features of one forward pass. encoder[i-1] is F_i (output of
/// encoder level i before down-sampling); decoder[i-1] is F*_i (output of
/// decoder level i after its blocks). Both have level_channels(i) channels
/// at spatial size H/2^(i-1).
struct FeaturePyramid {
    std::vector<Tensor> encoder;
    std::vector<Tensor> decoder;
};

struct PyramidVars {
    std::vector<Var> encoder;
    std::vector<Var> decoder;
};

struct ModelParams {
    ModelRole role = ModelRole::kDiffusion;
    BackboneConfig config;
    ParamStore store;
};

/// Sinusoidal position embedding: first half sines, second half cosines,
/// frequencies 10000^(-2k/dim).
Tensor timestep_embedding(int t, int dim);

/// Fresh backbone parameters. The second conv of every residual block, the
/// attention projection and the head conv start at zero (identity-leaning
/// init); everything else is fan-in scaled.
ModelParams init_backbone(const BackboneConfig& cfg, ModelRole role, std::uint64_t seed);

/// Custom skip wiring: receives (level, encoder feature f_i, arriving
/// decoder tensor) and returns the tensor the level's blocks consume.
/// The default wiring is Concat([f_i, arriving]).
using SkipFn = std::function<Var(int level, Var f_i, Var arriving)>;

struct UnetOut {
    Var out;
    PyramidVars pyramid;
};

/// Full forward pass on a tape. `t` must be present iff the config uses the
/// timestep embedding. When `trainable` is true the backbone parameters are
/// registered as trainable leaves on the tape.
UnetOut unet_forward(Tape& tape, const ModelParams& model, Var x, std::optional<int> t,
                     const SkipFn* skip = nullptr, bool trainable = false);

/// Tensor-level convenience wrapper (fresh tape, no gradients).
struct ForwardPass {
    Tensor out;
    FeaturePyramid pyramid;
};
ForwardPass run_unet(const ModelParams& model, const Tensor& x, std::optional<int> t,
                     const SkipFn* skip = nullptr);

FeaturePyramid detach_pyramid(const PyramidVars& vars);

}  // namespace uspine
