#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>

#include "uspine/conditioning.hpp"
#include "uspine/dataset.hpp"
#include "uspine/optimizer.hpp"
#include "uspine/schedule.hpp"

namespace uspine {

struct TrainConfig {
    int stage = 1;
    int epochs = -1;       // -1: stage default
    double lr = -1.0;      // -1: stage default
    int batch_size = -1;   // -1: preset default
    double ema_decay = 0.999;
    double grad_clip_norm = 1.0;
    std::optional<std::uint64_t> seed = 0;
    int T = 1000;
    double s = 0.008;
    std::vector<double> depth_weights;  // empty: reference weights
    SkipMode skip_mode = SkipMode::kPaper;
    int base_channels = 16;
    int image_size = 64;
    int tuner_reduction = 4;
    int n_threads = 0;  // 0: hardware concurrency
    std::string resume;
    // stage-III prerequisites
    std::string diffusion_ckpt;
    std::string extractor_ckpt;

    /// Paper-scale defaults per stage (epochs 2000/200/1000, lr 1e-3/1e-4/1e-3).
    void apply_stage_defaults();
    /// Small fast preset used by the acceptance suite (32 px, 8 channels).
    static TrainConfig desk(int stage);

    DepthWeights weights() const;
    BackboneConfig backbone_config(ModelRole role) const;
};

struct TrainResult {
    std::vector<double> epoch_losses;
    std::map<std::string, std::string> checkpoint_paths;  // tag -> path
    std::string log_path;
};

/// Runs one training stage end-to-end and writes checkpoints plus a
/// tab-separated per-epoch log under out_dir. Deterministic bit-for-bit for
/// a fixed seed (the log's wall-time column is zeroed in seeded runs so log
/// files are byte-reproducible; real timing goes to the manifest).
TrainResult train_stage(const TrainConfig& cfg, const DatasetSplit& split, const std::string& out_dir);

/// One optimizer step of stage III on a batch of (stack, optimal image)
/// items. Conditions are supplied per item (frozen extractor output).
/// Returns the mean batch loss; only tuner parameters change.
struct Stage3Item {
    const DepthStack* stack;
    const Image* optimal;
    const FusedConditions* conditions;
};
double stage3_step(const std::vector<Stage3Item>& batch, const ModelParams& diffusion,
                   TunerModel& tuner, Adam& opt, const NoiseSchedule& sched, SkipMode mode,
                   double grad_clip, Rng& rng, int n_threads = 1);

/// Extractor passes over all depths plus fusion, as used in stage III and
/// at inference.
FusedConditions conditions_for_stack(const ModelParams& extractor, const DepthStack& stack,
                                     const DepthWeights& weights);

}  // namespace uspine
