#include "uspine/conditioning.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "json.hpp"
#include "uspine/ops.hpp"

namespace uspine {

using nlohmann::json;

DepthWeights DepthWeights::normalized(std::vector<double> raw) {
    if (static_cast<int>(raw.size()) != kDepthCount)
        throw std::invalid_argument("depth weights need exactly " + std::to_string(kDepthCount) + " entries");
    double sum = 0.0;
    for (double v : raw) {
        if (v < 0.0) throw std::invalid_argument("depth weights must be non-negative");
        sum += v;
    }
    if (sum <= 0.0) throw std::invalid_argument("depth weights must not all be zero");
    for (double& v : raw) v /= sum;
    return DepthWeights{std::move(raw)};
}

DepthWeights DepthWeights::reference() {
    return normalized({0.109, 0.205, 0.252, 0.259, 0.174});
}

DepthWeights DepthWeights::one_hot(int depth) {
    if (depth < 0 || depth >= kDepthCount) throw std::out_of_range("depth index outside 0..4");
    std::vector<double> w(kDepthCount, 0.0);
    w[static_cast<size_t>(depth)] = 1.0;
    return DepthWeights{std::move(w)};
}

std::string skip_mode_name(SkipMode m) { return m == SkipMode::kPaper ? "paper" : "residual"; }

SkipMode skip_mode_from_name(const std::string& name) {
    if (name == "paper") return SkipMode::kPaper;
    if (name == "residual") return SkipMode::kResidual;
    throw std::invalid_argument("unknown skip mode: " + name);
}

TunerConfig TunerConfig::for_backbone(const BackboneConfig& cfg, int reduction) {
    TunerConfig t;
    t.levels = cfg.levels;
    for (int i = 1; i <= cfg.levels; ++i) t.channels.push_back(cfg.level_channels(i));
    t.reduction = reduction;
    return t;
}

int TunerConfig::hidden(int level) const {
    return std::max(1, channels.at(static_cast<size_t>(level - 1)) / reduction);
}

std::string TunerConfig::to_json() const {
    json j;
    j["levels"] = levels;
    j["channels"] = channels;
    j["reduction"] = reduction;
    j["activation"] = activation;
    return j.dump();
}

TunerConfig TunerConfig::from_json(const std::string& js) {
    json j = json::parse(js);
    TunerConfig t;
    t.levels = j.at("levels").get<int>();
    t.channels = j.at("channels").get<std::vector<int>>();
    t.reduction = j.at("reduction").get<int>();
    t.activation = j.at("activation").get<std::string>();
    return t;
}

TunerModel init_tuner(const TunerConfig& cfg, std::uint64_t seed) {
    if (cfg.activation != "gelu")
        throw std::invalid_argument("tuner activation must be gelu, got " + cfg.activation);
    TunerModel model;
    model.config = cfg;
    Rng rng(seed);
    for (int i = 1; i <= cfg.levels; ++i) {
        int c = cfg.channels.at(static_cast<size_t>(i - 1));
        int hid = cfg.hidden(i);
        std::string pre = "level" + std::to_string(i);
        Tensor wd({hid, c, 1, 1});
        double std = std::sqrt(2.0 / c);
        for (std::int64_t k = 0; k < wd.size(); ++k) wd[k] = rng.normal() * std;
        model.store.add(pre + ".down.w", std::move(wd));
        model.store.add(pre + ".down.b", Tensor({hid}));
        // zero-init up projection: a fresh tuner leaves the model untouched
        model.store.add(pre + ".up.w", Tensor({c, hid, 1, 1}));
        model.store.add(pre + ".up.b", Tensor({c}));
    }
    return model;
}

ForwardPass extractor_forward(const ModelParams& extractor, const Image& x) {
    if (extractor.role != ModelRole::kExtractor)
        throw std::invalid_argument("extractor_forward needs extractor-role parameters");
    if (x.rank() != 2)
        throw std::invalid_argument("extractor input must be a rank-2 image, got " + shape_str(x.shape()));
    Tensor chw = x.reshaped({1, x.dim(0), x.dim(1)});
    return run_unet(extractor, chw, std::nullopt);
}

FusedConditions fuse_depth_features(const std::vector<FeaturePyramid>& pyramids,
                                    const DepthWeights& weights) {
    if (pyramids.size() != weights.w.size())
        throw std::invalid_argument("fusion needs one weight per pyramid: " + std::to_string(pyramids.size()) +
                                    " pyramids vs " + std::to_string(weights.w.size()) + " weights");
    if (pyramids.empty()) throw std::invalid_argument("fusion needs at least one pyramid");
    const size_t levels = pyramids[0].encoder.size();
    for (const auto& p : pyramids) {
        if (p.encoder.size() != levels || p.decoder.size() != levels)
            throw std::invalid_argument("pyramids disagree on level count");
        for (size_t i = 0; i < levels; ++i) {
            check_same_shape(p.encoder[i], pyramids[0].encoder[i], "fuse encoder");
            check_same_shape(p.decoder[i], pyramids[0].decoder[i], "fuse decoder");
        }
    }
    FusedConditions out;
    auto fuse_level = [&](auto getter) {
        std::vector<Tensor> fused;
        for (size_t i = 0; i < levels; ++i) {
            Tensor acc(getter(pyramids[0], i).shape());
            for (size_t d = 0; d < pyramids.size(); ++d) {
                const Tensor& src = getter(pyramids[d], i);
                double wd = weights.w[d];
                for (std::int64_t k = 0; k < acc.size(); ++k) acc[k] += wd * src[k];
            }
            fused.push_back(std::move(acc));
        }
        return fused;
    };
    out.encoder = fuse_level([](const FeaturePyramid& p, size_t i) -> const Tensor& { return p.encoder[i]; });
    out.decoder = fuse_level([](const FeaturePyramid& p, size_t i) -> const Tensor& { return p.decoder[i]; });
    return out;
}

Var tuner_apply(Tape& tape, const TunerModel& tuner, int level, Var f_i, Var cond_enc, bool trainable) {
    if (level < 1 || level > tuner.config.levels)
        throw std::out_of_range("tuner level " + std::to_string(level) + " outside 1.." +
                                std::to_string(tuner.config.levels));
    check_same_shape(f_i->value, cond_enc->value, "tuner_apply");
    std::string pre = "level" + std::to_string(level);
    auto P = [&](const std::string& n) { return tape.leaf(tuner.store.get(pre + "." + n), trainable); };
    Var h = ops::add(f_i, cond_enc);
    h = ops::conv2d(h, P("down.w"), P("down.b"), 1, 0);
    h = ops::gelu(h);
    return ops::conv2d(h, P("up.w"), P("up.b"), 1, 0);
}

Tensor tuner_apply(const TunerModel& tuner, int level, const Tensor& f_i, const Tensor& cond_enc) {
    Tape tape;
    return tuner_apply(tape, tuner, level, tape.input(f_i), tape.input(cond_enc), false)->value;
}

Var conditioned_skip(Tape& tape, const TunerModel& tuner, int level, Var f_i, Var arriving,
                     Var cond_enc, Var cond_dec, SkipMode mode, bool trainable) {
    check_same_shape(f_i->value, cond_dec->value, "conditioned_skip decoder condition");
    Var tuned = tuner_apply(tape, tuner, level, f_i, cond_enc, trainable);
    Var first = ops::add(tuned, cond_dec);
    if (mode == SkipMode::kResidual) first = ops::add(first, f_i);
    return ops::concat_channels(first, arriving);
}

Tensor conditioned_skip(const TunerModel& tuner, int level, const Tensor& f_i, const Tensor& arriving,
                        const Tensor& cond_enc, const Tensor& cond_dec, SkipMode mode) {
    Tape tape;
    return conditioned_skip(tape, tuner, level, tape.input(f_i), tape.input(arriving),
                            tape.input(cond_enc), tape.input(cond_dec), mode, false)
        ->value;
}

SkipFn make_conditioned_skip(Tape& tape, const TunerModel& tuner, const FusedConditions& conds,
                             SkipMode mode, bool train_tuner) {
    if (static_cast<int>(conds.encoder.size()) != tuner.config.levels ||
        static_cast<int>(conds.decoder.size()) != tuner.config.levels)
        throw std::invalid_argument("condition level count does not match tuner");
    return [&tape, &tuner, &conds, mode, train_tuner](int level, Var f_i, Var arriving) {
        Var ce = constant(conds.encoder[static_cast<size_t>(level - 1)]);
        Var cd = constant(conds.decoder[static_cast<size_t>(level - 1)]);
        return conditioned_skip(tape, tuner, level, f_i, arriving, ce, cd, mode, train_tuner);
    };
}

double tuner_parameter_ratio(const TunerModel& tuner, const ModelParams& backbone) {
    return static_cast<double>(tuner.store.total_elements()) /
           static_cast<double>(backbone.store.total_elements());
}

}  // namespace uspine
