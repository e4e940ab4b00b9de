#include "uspine/enhance.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"
#include "uspine/diffusion.hpp"
#include "uspine/rng.hpp"
#include "uspine/trainer.hpp"

namespace uspine {

namespace fs = std::filesystem;
using nlohmann::json;

std::string condition_mode_name(ConditionMode m) {
    switch (m) {
        case ConditionMode::kNone: return "none";
        case ConditionMode::kOptimalDepth: return "optimal_depth";
        case ConditionMode::kMultiDepth: return "multi_depth";
    }
    return "?";
}

namespace {

Image run_reverse_chain(const ModelParams& diffusion, const NoiseSchedule& sched, int n_steps,
                        std::uint64_t seed, const FusedConditions* conds, const TunerModel* tuner,
                        SkipMode mode, EnhanceStats* stats) {
    const int hw = diffusion.config.image_size;
    Rng rng(Rng::derive(seed, "x_T"));
    Image x = rng.normal_tensor({hw, hw});
    TimestepSubsequence seq = make_timestep_subsequence(sched.T, n_steps);

    for (size_t i = 0; i + 1 < seq.steps.size(); ++i) {
        int t = seq.steps[i];
        int t_prev = seq.steps[i + 1];
        Tape tape;
        SkipFn skip;
        const SkipFn* skip_ptr = nullptr;
        if (conds && tuner) {
            skip = make_conditioned_skip(tape, *tuner, *conds, mode, /*train_tuner=*/false);
            skip_ptr = &skip;
        }
        Var x_in = tape.input(x.reshaped({1, hw, hw}));
        UnetOut out = unet_forward(tape, diffusion, x_in, t, skip_ptr, /*trainable=*/false);
        Tensor eps_hat = out.out->value.reshaped({hw, hw});
        if (stats) stats->unet_passes++;
        if (!eps_hat.all_finite())
            throw std::runtime_error("non-finite noise prediction at timestep " + std::to_string(t));
        x = ddim_step(x, eps_hat, t, t_prev, sched);
        if (!x.all_finite())
            throw std::runtime_error("non-finite sample after ddim step at timestep " + std::to_string(t));
    }
    return clamp01(x);
}

}  // namespace

Image enhance(const DepthStack& stack, const ModelParams& diffusion, const ModelParams& extractor,
              const TunerModel& tuner, const NoiseSchedule& sched, const EnhanceConfig& cfg,
              EnhanceStats* stats) {
    if (static_cast<int>(stack.size()) != kDepthCount)
        throw std::invalid_argument("enhance needs exactly " + std::to_string(kDepthCount) +
                                    " depth images, got " + std::to_string(stack.size()));
    if (cfg.n_steps < 1 || cfg.n_steps > sched.T)
        throw std::invalid_argument("n_steps must lie in [1, T]");
    if (extractor.config.image_size != diffusion.config.image_size)
        throw std::invalid_argument("extractor/diffusion checkpoints disagree on image size");

    if (cfg.condition_mode == ConditionMode::kNone)
        return sample_prior(diffusion, sched, cfg.n_steps, cfg.seed, diffusion.config.image_size);

    DepthWeights weights = cfg.condition_mode == ConditionMode::kOptimalDepth
                               ? DepthWeights::one_hot(cfg.optimal_index)
                               : cfg.depth_weights;
    // conditions are computed once per case and reused at every timestep
    FusedConditions conds = conditions_for_stack(extractor, stack, weights);
    if (stats) stats->extractor_passes += kDepthCount;
    return run_reverse_chain(diffusion, sched, cfg.n_steps, cfg.seed, &conds, &tuner, cfg.skip_mode,
                             stats);
}

Image sample_prior(const ModelParams& diffusion, const NoiseSchedule& sched, int n_steps,
                   std::uint64_t seed, int image_size) {
    if (image_size != diffusion.config.image_size)
        throw std::invalid_argument("image size does not match the diffusion checkpoint");
    return run_reverse_chain(diffusion, sched, n_steps, seed, nullptr, nullptr, SkipMode::kPaper, nullptr);
}

BatchOutput enhance_batch(const std::vector<BatchCase>& cases, const ModelParams& diffusion,
                          const ModelParams& extractor, const TunerModel& tuner,
                          const NoiseSchedule& sched, const EnhanceConfig& cfg,
                          const std::string& out_dir,
                          const std::map<std::string, std::string>& checkpoint_hashes) {
    fs::create_directories(out_dir);
    BatchOutput out;
    out.cases.resize(cases.size());

    int n_threads = std::max(1, cfg.n_threads);
    auto worker = [&](size_t first) {
        for (size_t i = first; i < cases.size(); i += static_cast<size_t>(n_threads)) {
            const BatchCase& c = cases[i];
            BatchCaseResult& r = out.cases[i];
            r.id = c.id;
            r.seed = Rng::derive(cfg.seed, c.id);
            try {
                EnhanceConfig case_cfg = cfg;
                case_cfg.seed = r.seed;
                case_cfg.optimal_index = c.optimal_index;
                r.image = enhance(c.stack, diffusion, extractor, tuner, sched, case_cfg);
                r.ok = true;
            } catch (const std::exception& ex) {
                r.error = ex.what();
            }
        }
    };
    if (n_threads <= 1 || cases.size() <= 1) {
        worker(0);
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker, static_cast<size_t>(t));
        for (auto& th : pool) th.join();
    }

    for (size_t i = 0; i < cases.size(); ++i) {
        const BatchCase& c = cases[i];
        BatchCaseResult& r = out.cases[i];
        metrics::CaseMetrics cm;
        cm.id = c.id;
        if (!r.ok) {
            cm.error = r.error;
            out.report.cases.push_back(cm);
            continue;
        }
        write_png_gray((fs::path(out_dir) / (c.id + ".png")).string(), r.image);
        if (c.mask) {
            cm.snr = metrics::snr_db(r.image, *c.mask);
            cm.cnr = metrics::cnr_db(r.image, *c.mask);
        }
        if (c.reference) {
            cm.psnr = metrics::psnr_db(r.image, *c.reference);
            auto ms = metrics::ms_ssim(r.image, *c.reference);
            cm.ms_ssim = ms.value;
            cm.ms_ssim_scales = ms.scales_used;
        }
        json sidecar;
        sidecar["case_id"] = c.id;
        sidecar["seed"] = r.seed;
        sidecar["n_steps"] = cfg.n_steps;
        sidecar["condition_mode"] = condition_mode_name(cfg.condition_mode);
        sidecar["skip_mode"] = skip_mode_name(cfg.skip_mode);
        sidecar["checkpoint_hashes"] = checkpoint_hashes;
        if (cm.snr) sidecar["metrics"]["snr_db"] = *cm.snr;
        if (cm.cnr) sidecar["metrics"]["cnr_db"] = *cm.cnr;
        if (cm.psnr) sidecar["metrics"]["psnr_db"] = *cm.psnr;
        if (cm.ms_ssim) sidecar["metrics"]["ms_ssim"] = *cm.ms_ssim;
        std::ofstream side(fs::path(out_dir) / (c.id + ".json"));
        side << sidecar.dump(2) << "\n";
        out.report.cases.push_back(cm);
    }
    return out;
}

}  // namespace uspine
