#pragma once

#include <string>
#include <vector>

#include "uspine/backbone.hpp"
#include "uspine/image.hpp"

namespace uspine {

/// Convex weights over the D depth images, posterior to anterior. Values
/// are renormalized on construction (the published vector sums to 0.999).
struct DepthWeights {
    std::vector<double> w;

    static DepthWeights normalized(std::vector<double> raw);
    /// Depth-index statistics from the source study.
    static DepthWeights reference();
    /// Selects a single depth.
    static DepthWeights one_hot(int depth);
};

/// How conditions enter the skip connection.
///  kPaper:    Concat([T(f_i, Fhat_i) + Fhat*_i, arriving])
///  kResidual: Concat([f_i + T(f_i, Fhat_i) + Fhat*_i, arriving])
enum class SkipMode { kPaper, kResidual };
std::string skip_mode_name(SkipMode m);
SkipMode skip_mode_from_name(const std::string& name);

/// Bottleneck adapter per skip level: W_up * phi(W_down * (f + cond)), both
/// projections realized as 1x1 convs, phi = GELU, W_up zero-initialized so a
/// fresh tuner is a no-op.
struct TunerConfig {
    int levels = 3;
    std::vector<int> channels;  // per level, from BackboneConfig
    int reduction = 4;
    std::string activation = "gelu";

    static TunerConfig for_backbone(const BackboneConfig& cfg, int reduction = 4);
    int hidden(int level) const;
    std::string to_json() const;
    static TunerConfig from_json(const std::string& js);
};

struct TunerModel {
    TunerConfig config;
    ParamStore store;
};

TunerModel init_tuner(const TunerConfig& cfg, std::uint64_t seed);

/// Fused conditions, aligned with the diffusion pyramid level-by-level.
struct FusedConditions {
    std::vector<Tensor> encoder;  // Fhat_i, index level-1
    std::vector<Tensor> decoder;  // Fhat*_i, index level-1
};

/// Extractor pass: segmentation logits plus the feature pyramid used for
/// fusion. Input is one depth image in [0,1].
ForwardPass extractor_forward(const ModelParams& extractor, const Image& x);

/// Depth-weighted fusion: Fhat_i = sum_d w_d * F_i^d for encoder and decoder
/// levels alike.
FusedConditions fuse_depth_features(const std::vector<FeaturePyramid>& pyramids,
                                    const DepthWeights& weights);

/// Graph version of the tuner: W_up * phi(W_down * (f + cond)).
Var tuner_apply(Tape& tape, const TunerModel& tuner, int level, Var f_i, Var cond_enc,
                bool trainable);
/// Tensor convenience wrapper.
Tensor tuner_apply(const TunerModel& tuner, int level, const Tensor& f_i, const Tensor& cond_enc);

/// Conditioned skip connection (graph form).
Var conditioned_skip(Tape& tape, const TunerModel& tuner, int level, Var f_i, Var arriving,
                     Var cond_enc, Var cond_dec, SkipMode mode, bool trainable);
/// Tensor convenience wrapper; `arriving` is the decoder tensor entering the
/// level.
Tensor conditioned_skip(const TunerModel& tuner, int level, const Tensor& f_i, const Tensor& arriving,
                        const Tensor& cond_enc, const Tensor& cond_dec, SkipMode mode);

/// SkipFn for unet_forward that injects the fused conditions through the
/// tuner. `train_tuner` registers tuner parameters as trainable.
SkipFn make_conditioned_skip(Tape& tape, const TunerModel& tuner, const FusedConditions& conds,
                             SkipMode mode, bool train_tuner);

/// Tuner/backbone parameter ratio; must stay under 0.10.
double tuner_parameter_ratio(const TunerModel& tuner, const ModelParams& backbone);

}  // namespace uspine
