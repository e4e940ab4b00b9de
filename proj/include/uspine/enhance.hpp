#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "uspine/conditioning.hpp"
#include "uspine/metrics.hpp"
#include "uspine/schedule.hpp"

namespace uspine {

/// Condition source for sampling; the ablation runner sweeps these.
enum class ConditionMode { kNone, kOptimalDepth, kMultiDepth };
std::string condition_mode_name(ConditionMode m);

struct EnhanceConfig {
    int n_steps = 50;
    std::uint64_t seed = 0;
    DepthWeights depth_weights = DepthWeights::reference();
    SkipMode skip_mode = SkipMode::kPaper;
    ConditionMode condition_mode = ConditionMode::kMultiDepth;
    int optimal_index = 0;  // used by kOptimalDepth
    int n_threads = 1;      // batch-level parallelism
};

struct EnhanceStats {
    int extractor_passes = 0;
    int unet_passes = 0;
};

/// Deterministic conditioned sampling: D extractor passes, one fusion,
/// then n_steps DDIM updates from seeded gaussian noise; the final image is
/// clamped to [0,1]. Identical inputs and seed give bit-identical output.
Image enhance(const DepthStack& stack, const ModelParams& diffusion, const ModelParams& extractor,
              const TunerModel& tuner, const NoiseSchedule& sched, const EnhanceConfig& cfg,
              EnhanceStats* stats = nullptr);

/// Unconditioned sampling from the prior (ablation baseline).
Image sample_prior(const ModelParams& diffusion, const NoiseSchedule& sched, int n_steps,
                   std::uint64_t seed, int image_size);

struct BatchCase {
    std::string id;
    DepthStack stack;
    std::optional<SegMask> mask;     // enables SNR/CNR in the sidecar
    std::optional<Image> reference;  // enables PSNR/MS-SSIM
    int optimal_index = 0;
};

struct BatchCaseResult {
    std::string id;
    bool ok = false;
    std::string error;
    Image image;
    std::uint64_t seed = 0;
};

struct BatchOutput {
    std::vector<BatchCaseResult> cases;
    metrics::QualityReport report;
};

/// Maps enhance over cases (per-case seed derived from cfg.seed and the
/// case id), writes <id>.png plus a json sidecar per case and a
/// QualityReport; one failing case is recorded, not fatal.
BatchOutput enhance_batch(const std::vector<BatchCase>& cases, const ModelParams& diffusion,
                          const ModelParams& extractor, const TunerModel& tuner,
                          const NoiseSchedule& sched, const EnhanceConfig& cfg,
                          const std::string& out_dir,
                          const std::map<std::string, std::string>& checkpoint_hashes = {});

}  // namespace uspine
