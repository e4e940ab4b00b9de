#include "uspine/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <thread>
#include <unordered_map>

#include "uspine/diffusion.hpp"
#include "uspine/losses.hpp"
#include "uspine/ops.hpp"

namespace uspine {

namespace fs = std::filesystem;

void TrainConfig::apply_stage_defaults() {
    if (stage < 1 || stage > 3) throw std::invalid_argument("stage must be 1, 2 or 3");
    if (epochs < 0) epochs = stage == 1 ? 2000 : (stage == 2 ? 200 : 1000);
    if (lr < 0) lr = stage == 2 ? 1e-4 : 1e-3;
    if (batch_size < 0) batch_size = 8;
}

TrainConfig TrainConfig::desk(int stage) {
    TrainConfig cfg;
    cfg.stage = stage;
    cfg.image_size = 32;
    cfg.base_channels = 8;
    cfg.batch_size = 4;
    cfg.epochs = stage == 1 ? 120 : (stage == 2 ? 60 : 90);
    cfg.lr = stage == 2 ? 3e-4 : 1e-3;
    return cfg;
}

DepthWeights TrainConfig::weights() const {
    return depth_weights.empty() ? DepthWeights::reference() : DepthWeights::normalized(depth_weights);
}

BackboneConfig TrainConfig::backbone_config(ModelRole role) const {
    BackboneConfig bc;
    bc.image_size = image_size;
    bc.in_channels = 1;
    bc.base_channels = base_channels;
    bc.channel_multipliers = {1, 2, 2, 4};
    bc.levels = 3;
    bc.out_channels = role == ModelRole::kDiffusion ? 1 : 4;
    bc.use_timestep_embedding = role == ModelRole::kDiffusion;
    bc.embedding_dim = 4 * base_channels;
    return bc;
}

namespace {

int resolve_threads(int requested) {
    if (requested > 0) return requested;
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

/// Builds per-item graphs in parallel, reduces gradients in item order so
/// results do not depend on the thread count.
double batch_gradients(const ParamStore& trainable, int n_items, int n_threads,
                       const std::function<Var(Tape&, int)>& item_loss, NamedGrads& grads_out) {
    std::vector<NamedGrads> item_grads(static_cast<size_t>(n_items));
    std::vector<double> losses(static_cast<size_t>(n_items), 0.0);
    std::vector<std::string> errors(static_cast<size_t>(n_items));

    auto worker = [&](int first) {
        for (int i = first; i < n_items; i += n_threads) {
            try {
                Tape tape;
                Var loss = item_loss(tape, i);
                tape.backward(loss);
                losses[static_cast<size_t>(i)] = loss->value[0];
                NamedGrads g;
                g.reserve(trainable.count());
                for (const auto& e : trainable.entries()) {
                    const Tensor* gi = tape.grad_of(e.tensor);
                    g.push_back(gi ? gi->clone() : Tensor::zeros(e.tensor.shape()));
                }
                item_grads[static_cast<size_t>(i)] = std::move(g);
            } catch (const std::exception& ex) {
                errors[static_cast<size_t>(i)] = ex.what();
            }
        }
    };
    if (n_threads <= 1 || n_items <= 1) {
        worker(0);
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < std::min(n_threads, n_items); ++t) pool.emplace_back(worker, t);
        for (auto& th : pool) th.join();
    }
    for (const auto& e : errors)
        if (!e.empty()) throw std::runtime_error("training item failed: " + e);

    grads_out = zero_grads_like(trainable);
    double loss_sum = 0.0;
    for (int i = 0; i < n_items; ++i) {
        accumulate_grads(grads_out, item_grads[static_cast<size_t>(i)]);
        loss_sum += losses[static_cast<size_t>(i)];
    }
    scale_grads(grads_out, 1.0 / n_items);
    return loss_sum / n_items;
}

struct EpochLogger {
    std::ofstream out;
    int stage;
    bool deterministic_time;

    EpochLogger(const std::string& path, int stage_, bool det_time)
        : out(path, std::ios::trunc), stage(stage_), deterministic_time(det_time) {
        if (!out) throw std::runtime_error("cannot write training log: " + path);
    }
    void line(int epoch, double loss, double wall_s) {
        char buf[128];
        // wall time is zeroed in seeded runs to keep logs byte-reproducible
        std::snprintf(buf, sizeof(buf), "%d\t%d\t%.12g\t%.3f\n", epoch, stage, loss,
                      deterministic_time ? 0.0 : wall_s);
        out << buf;
    }
};

std::vector<size_t> shuffled_indices(size_t n, Rng& rng) {
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    for (size_t i = n; i > 1; --i) {
        size_t j = static_cast<size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
        std::swap(idx[i - 1], idx[j]);
    }
    return idx;
}

Checkpoint make_backbone_checkpoint(const ModelParams& model, int stage, bool ema,
                                    const TrainConfig& cfg) {
    Checkpoint ck;
    ck.role = role_name(model.role);
    ck.config_json = model.config.to_json();
    ck.params = model.store.clone();
    ck.notes["stage"] = std::to_string(stage);
    ck.notes["ema"] = ema ? "true" : "false";
    ck.notes["schedule_T"] = std::to_string(cfg.T);
    ck.notes["schedule_s"] = std::to_string(cfg.s);
    return ck;
}

ModelParams load_backbone_checkpoint(const std::string& path, ModelRole expected_role) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.role != role_name(expected_role))
        throw std::runtime_error("checkpoint " + path + " holds role '" + ck.role + "', expected '" +
                                 role_name(expected_role) + "'");
    ModelParams m;
    m.role = expected_role;
    m.config = BackboneConfig::from_json(ck.config_json);
    m.store = std::move(ck.params);
    return m;
}

}  // namespace

FusedConditions conditions_for_stack(const ModelParams& extractor, const DepthStack& stack,
                                     const DepthWeights& weights) {
    if (static_cast<int>(stack.size()) != kDepthCount)
        throw std::invalid_argument("depth stack must hold exactly " + std::to_string(kDepthCount) +
                                    " images, got " + std::to_string(stack.size()));
    std::vector<FeaturePyramid> pyramids;
    pyramids.reserve(stack.size());
    for (const auto& img : stack) pyramids.push_back(extractor_forward(extractor, img).pyramid);
    return fuse_depth_features(pyramids, weights);
}

double stage3_step(const std::vector<Stage3Item>& batch, const ModelParams& diffusion,
                   TunerModel& tuner, Adam& opt, const NoiseSchedule& sched, SkipMode mode,
                   double grad_clip, Rng& rng, int n_threads) {
    if (batch.empty()) throw std::invalid_argument("stage3_step needs a non-empty batch");
    const int hw = diffusion.config.image_size;

    struct Draw {
        int t;
        Tensor eps;
        Image x_t;
    };
    std::vector<Draw> draws;
    draws.reserve(batch.size());
    for (const auto& item : batch) {
        Draw d;
        d.t = rng.uniform_int(1, sched.T);
        d.eps = rng.normal_tensor({hw, hw});
        d.x_t = forward_diffuse(*item.optimal, d.t, d.eps, sched);
        draws.push_back(std::move(d));
    }

    auto item_loss = [&](Tape& tape, int i) {
        const Stage3Item& item = batch[static_cast<size_t>(i)];
        const Draw& d = draws[static_cast<size_t>(i)];
        SkipFn skip = make_conditioned_skip(tape, tuner, *item.conditions, mode, /*train_tuner=*/true);
        Var x_in = tape.input(d.x_t.reshaped({1, hw, hw}));
        UnetOut out = unet_forward(tape, diffusion, x_in, d.t, &skip, /*trainable=*/false);
        Var eps_hat = ops::reshape(out.out, {hw, hw});
        return ops::mse(eps_hat, constant(d.eps));
    };

    NamedGrads grads;
    double loss = batch_gradients(tuner.store, static_cast<int>(batch.size()), n_threads, item_loss, grads);
    clip_grad_norm(grads, grad_clip);
    opt.step(tuner.store, grads);
    return loss;
}

TrainResult train_stage(const TrainConfig& cfg_in, const DatasetSplit& split, const std::string& out_dir) {
    TrainConfig cfg = cfg_in;
    cfg.apply_stage_defaults();
    fs::create_directories(out_dir);
    const std::uint64_t seed = cfg.seed.value_or(
        static_cast<std::uint64_t>(std::chrono::steady_clock::now().time_since_epoch().count()));
    const bool seeded = cfg.seed.has_value();
    const int n_threads = resolve_threads(cfg.n_threads);
    NoiseSchedule sched = make_cosine_schedule(cfg.T, cfg.s);
    const int hw = cfg.image_size;

    TrainResult result;
    std::string stage_tag = "stage" + std::to_string(cfg.stage);
    result.log_path = (fs::path(out_dir) / (stage_tag + "_train_log.tsv")).string();
    EpochLogger logger(result.log_path, cfg.stage, seeded);

    auto check_images = [&](const Image& img, const std::string& id) {
        if (img.dim(0) != hw || img.dim(1) != hw)
            throw std::runtime_error("dataset image '" + id + "' is " + shape_str(img.shape()) +
                                     " but the configured image size is " + std::to_string(hw));
    };

    if (cfg.stage == 1 || cfg.stage == 2) {
        const auto& data = split.artifact_free;
        if (data.empty()) throw std::runtime_error("no artifact-free training images in the dataset");
        for (const auto& item : data) check_images(item.image, item.id);

        ModelRole role = cfg.stage == 1 ? ModelRole::kDiffusion : ModelRole::kExtractor;
        ModelParams model;
        if (!cfg.resume.empty()) {
            model = load_backbone_checkpoint(cfg.resume, role);
        } else {
            model = init_backbone(cfg.backbone_config(role), role, Rng::derive(seed, stage_tag + ".init"));
        }
        ParamStore ema = model.store.clone();
        Adam opt(cfg.lr);

        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            auto t0 = std::chrono::steady_clock::now();
            Rng erng(Rng::derive(seed, stage_tag + ".epoch" + std::to_string(epoch)));
            auto order = shuffled_indices(data.size(), erng);
            double epoch_loss = 0.0;
            size_t pos = 0;
            while (pos < order.size()) {
                size_t n = std::min(static_cast<size_t>(cfg.batch_size), order.size() - pos);
                std::vector<size_t> items(order.begin() + static_cast<std::ptrdiff_t>(pos),
                                          order.begin() + static_cast<std::ptrdiff_t>(pos + n));
                pos += n;

                double batch_loss = 0.0;
                NamedGrads grads;
                if (cfg.stage == 1) {
                    struct Draw {
                        int t;
                        Tensor eps;
                        Image x_t;
                        const Image* x0;
                    };
                    std::vector<Draw> draws;
                    for (size_t k : items) {
                        Draw d;
                        d.x0 = &data[k].image;
                        d.t = erng.uniform_int(1, cfg.T);
                        d.eps = erng.normal_tensor({hw, hw});
                        d.x_t = forward_diffuse(*d.x0, d.t, d.eps, sched);
                        draws.push_back(std::move(d));
                    }
                    auto item_loss = [&](Tape& tape, int i) {
                        const Draw& d = draws[static_cast<size_t>(i)];
                        Var x_in = tape.input(d.x_t.reshaped({1, hw, hw}));
                        UnetOut out = unet_forward(tape, model, x_in, d.t, nullptr, /*trainable=*/true);
                        Var eps_hat = ops::reshape(out.out, {hw, hw});
                        return stage1_loss_graph(eps_hat, *d.x0, d.eps, d.x_t, d.t, sched);
                    };
                    batch_loss = batch_gradients(model.store, static_cast<int>(n), n_threads, item_loss, grads);
                } else {
                    auto item_loss = [&](Tape& tape, int i) {
                        const auto& item = data[items[static_cast<size_t>(i)]];
                        Var x_in = tape.input(item.image.reshaped({1, hw, hw}));
                        UnetOut out = unet_forward(tape, model, x_in, std::nullopt, nullptr, /*trainable=*/true);
                        return ops::cross_entropy_mean(out.out, item.mask);
                    };
                    batch_loss = batch_gradients(model.store, static_cast<int>(n), n_threads, item_loss, grads);
                }
                clip_grad_norm(grads, cfg.grad_clip_norm);
                opt.step(model.store, grads);
                if (cfg.stage == 1) ema_update(ema, model.store, cfg.ema_decay);
                epoch_loss += batch_loss * static_cast<double>(n);
            }
            epoch_loss /= static_cast<double>(data.size());
            result.epoch_losses.push_back(epoch_loss);
            double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            logger.line(epoch, epoch_loss, wall);
        }

        if (cfg.stage == 1) {
            std::string p = (fs::path(out_dir) / "diffusion.ckpt").string();
            save_checkpoint(p, make_backbone_checkpoint(model, 1, false, cfg));
            result.checkpoint_paths["diffusion"] = p;
            ModelParams ema_model{model.role, model.config, std::move(ema)};
            std::string pe = (fs::path(out_dir) / "diffusion_ema.ckpt").string();
            save_checkpoint(pe, make_backbone_checkpoint(ema_model, 1, true, cfg));
            result.checkpoint_paths["diffusion_ema"] = pe;
        } else {
            std::string p = (fs::path(out_dir) / "extractor.ckpt").string();
            save_checkpoint(p, make_backbone_checkpoint(model, 2, false, cfg));
            result.checkpoint_paths["extractor"] = p;
        }
        return result;
    }

    // ---- stage III: tuner-only fine-tuning with frozen backbone/extractor
    if (cfg.diffusion_ckpt.empty() || cfg.extractor_ckpt.empty())
        throw std::runtime_error("stage 3 needs --ckpt-diffusion and --ckpt-extractor from stages 1 and 2");
    const auto& groups = split.high_quality_groups;
    if (groups.empty()) throw std::runtime_error("no training groups in the dataset");

    ModelParams diffusion = load_backbone_checkpoint(cfg.diffusion_ckpt, ModelRole::kDiffusion);
    ModelParams extractor = load_backbone_checkpoint(cfg.extractor_ckpt, ModelRole::kExtractor);
    for (const auto& g : groups) check_images(g.stack.at(0), g.id);
    if (diffusion.config.image_size != hw || extractor.config.image_size != hw)
        throw std::runtime_error("checkpoint image size does not match the configured image size");

    const std::string diffusion_hash_before = diffusion.store.content_hash();
    const std::string extractor_hash_before = extractor.store.content_hash();

    TunerModel tuner;
    if (!cfg.resume.empty()) {
        Checkpoint ck = load_checkpoint(cfg.resume);
        if (ck.role != "tuner") throw std::runtime_error("resume checkpoint is not a tuner checkpoint");
        tuner.config = TunerConfig::from_json(ck.config_json);
        tuner.store = std::move(ck.params);
    } else {
        tuner = init_tuner(TunerConfig::for_backbone(diffusion.config, cfg.tuner_reduction),
                           Rng::derive(seed, "stage3.init"));
    }
    ParamStore ema = tuner.store.clone();
    Adam opt(cfg.lr);
    DepthWeights weights = cfg.weights();

    // conditions depend only on the frozen extractor, so compute them once
    std::unordered_map<std::string, FusedConditions> cond_cache;
    auto conditions_of = [&](const GroupItem& g) -> const FusedConditions& {
        auto it = cond_cache.find(g.id);
        if (it != cond_cache.end()) return it->second;
        auto [pos, _] = cond_cache.emplace(g.id, conditions_for_stack(extractor, g.stack, weights));
        return pos->second;
    };

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        Rng erng(Rng::derive(seed, "stage3.epoch" + std::to_string(epoch)));
        auto order = shuffled_indices(groups.size(), erng);
        double epoch_loss = 0.0;
        size_t pos = 0;
        while (pos < order.size()) {
            size_t n = std::min(static_cast<size_t>(cfg.batch_size), order.size() - pos);
            std::vector<Stage3Item> batch;
            for (size_t b = 0; b < n; ++b) {
                const GroupItem& g = groups[order[pos + b]];
                batch.push_back({&g.stack, &g.stack[static_cast<size_t>(g.optimal_index)], &conditions_of(g)});
            }
            pos += n;
            double batch_loss = stage3_step(batch, diffusion, tuner, opt, sched, cfg.skip_mode,
                                            cfg.grad_clip_norm, erng, n_threads);
            ema_update(ema, tuner.store, cfg.ema_decay);
            epoch_loss += batch_loss * static_cast<double>(n);
        }
        epoch_loss /= static_cast<double>(groups.size());
        result.epoch_losses.push_back(epoch_loss);
        double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        logger.line(epoch, epoch_loss, wall);
    }

    if (diffusion.store.content_hash() != diffusion_hash_before ||
        extractor.store.content_hash() != extractor_hash_before)
        throw std::logic_error("freeze contract violated: backbone or extractor parameters changed in stage 3");

    auto make_tuner_ckpt = [&](const ParamStore& store, bool is_ema) {
        Checkpoint ck;
        ck.role = "tuner";
        ck.config_json = tuner.config.to_json();
        ck.params = store.clone();
        ck.notes["stage"] = "3";
        ck.notes["ema"] = is_ema ? "true" : "false";
        ck.notes["skip_mode"] = skip_mode_name(cfg.skip_mode);
        ck.notes["diffusion_ckpt_hash"] = diffusion_hash_before;
        ck.notes["extractor_ckpt_hash"] = extractor_hash_before;
        return ck;
    };
    std::string p = (fs::path(out_dir) / "tuner.ckpt").string();
    save_checkpoint(p, make_tuner_ckpt(tuner.store, false));
    result.checkpoint_paths["tuner"] = p;
    std::string pe = (fs::path(out_dir) / "tuner_ema.ckpt").string();
    save_checkpoint(pe, make_tuner_ckpt(ema, true));
    result.checkpoint_paths["tuner_ema"] = pe;
    return result;
}

}  // namespace uspine
