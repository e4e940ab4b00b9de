#include "uspine/backbone.hpp"

#include <cmath>
#include <stdexcept>

#include "json.hpp"
#include "uspine/ops.hpp"

namespace uspine {

using nlohmann::json;

int BackboneConfig::level_channels(int level) const {
    if (level < 1 || level > levels + 1)
        throw std::out_of_range("level " + std::to_string(level) + " outside 1.." + std::to_string(levels + 1));
    return base_channels * channel_multipliers[static_cast<size_t>(level - 1)];
}

void BackboneConfig::validate() const {
    if (levels != 3) throw std::invalid_argument("backbone uses exactly 3 skip levels");
    if (static_cast<int>(channel_multipliers.size()) != levels + 1)
        throw std::invalid_argument("channel_multipliers needs levels+1 entries");
    if (image_size % (1 << levels) != 0)
        throw std::invalid_argument("image_size must be divisible by 2^levels");
    if (out_channels != 1 && out_channels != 4)
        throw std::invalid_argument("out_channels must be 1 (noise) or 4 (segmentation logits)");
    if (embedding_dim % 2 != 0) throw std::invalid_argument("embedding_dim must be even");
    if (base_channels < 4) throw std::invalid_argument("base_channels must be >= 4");
}

std::string BackboneConfig::to_json() const {
    json j;
    j["image_size"] = image_size;
    j["in_channels"] = in_channels;
    j["base_channels"] = base_channels;
    j["channel_multipliers"] = channel_multipliers;
    j["levels"] = levels;
    j["out_channels"] = out_channels;
    j["use_timestep_embedding"] = use_timestep_embedding;
    j["embedding_dim"] = embedding_dim;
    return j.dump();
}

BackboneConfig BackboneConfig::from_json(const std::string& js) {
    json j = json::parse(js);
    BackboneConfig c;
    c.image_size = j.at("image_size").get<int>();
    c.in_channels = j.at("in_channels").get<int>();
    c.base_channels = j.at("base_channels").get<int>();
    c.channel_multipliers = j.at("channel_multipliers").get<std::vector<int>>();
    c.levels = j.at("levels").get<int>();
    c.out_channels = j.at("out_channels").get<int>();
    c.use_timestep_embedding = j.at("use_timestep_embedding").get<bool>();
    c.embedding_dim = j.at("embedding_dim").get<int>();
    return c;
}

Tensor timestep_embedding(int t, int dim) {
    if (t < 0) throw std::invalid_argument("timestep must be >= 0");
    if (dim < 2 || dim % 2 != 0) throw std::invalid_argument("embedding dim must be even and >= 2");
    Tensor out({dim});
    int half = dim / 2;
    for (int k = 0; k < half; ++k) {
        double freq = std::pow(10000.0, -2.0 * k / dim);
        out[k] = std::sin(t * freq);
        out[half + k] = std::cos(t * freq);
    }
    return out;
}

namespace {

int norm_groups(int channels) {
    // Largest group count <= 8 that divides the channel count.
    for (int g = std::min(8, channels); g > 1; --g)
        if (channels % g == 0) return g;
    return 1;
}

void add_conv(ParamStore& st, Rng& rng, const std::string& name, int cout, int cin, int k, bool zero) {
    Tensor w({cout, cin, k, k});
    if (!zero) {
        double std = std::sqrt(2.0 / (cin * k * k));
        for (std::int64_t i = 0; i < w.size(); ++i) w[i] = rng.normal() * std;
    }
    st.add(name + ".w", std::move(w));
    st.add(name + ".b", Tensor({cout}));
}

void add_linear(ParamStore& st, Rng& rng, const std::string& name, int out, int in) {
    Tensor w({out, in});
    double std = std::sqrt(1.0 / in);
    for (std::int64_t i = 0; i < w.size(); ++i) w[i] = rng.normal() * std;
    st.add(name + ".w", std::move(w));
    st.add(name + ".b", Tensor({out}));
}

void add_norm(ParamStore& st, const std::string& name, int c) {
    st.add(name + ".g", Tensor({c}, 1.0));
    st.add(name + ".b", Tensor({c}));
}

void add_res_block(ParamStore& st, Rng& rng, const std::string& name, int cin, int cout, bool temb,
                   int embedding_dim) {
    add_norm(st, name + ".gn1", cin);
    add_conv(st, rng, name + ".conv1", cout, cin, 3, false);
    if (temb) add_linear(st, rng, name + ".temb", cout, embedding_dim);
    add_norm(st, name + ".gn2", cout);
    add_conv(st, rng, name + ".conv2", cout, cout, 3, true);
    if (cin != cout) add_conv(st, rng, name + ".skip", cout, cin, 1, false);
}

// Mirrors add_res_block's structure during the forward pass.
Var res_block(Tape& tape, const ParamStore& st, const std::string& name, Var x, Var temb,
              bool trainable) {
    auto P = [&](const std::string& n) { return tape.leaf(st.get(name + "." + n), trainable); };
    int cin = x->value.dim(0);
    int cout = st.get(name + ".conv1.w").dim(0);

    Var h = ops::group_norm(x, P("gn1.g"), P("gn1.b"), norm_groups(cin));
    h = ops::silu(h);
    h = ops::conv2d(h, P("conv1.w"), P("conv1.b"), 1, 1);
    if (temb) {
        Var tproj = ops::linear(ops::silu(temb), P("temb.w"), P("temb.b"));
        h = ops::add_channel_bias(h, tproj);
    }
    h = ops::group_norm(h, P("gn2.g"), P("gn2.b"), norm_groups(cout));
    h = ops::silu(h);
    h = ops::conv2d(h, P("conv2.w"), P("conv2.b"), 1, 1);

    Var sk = x;
    if (cin != cout) sk = ops::conv2d(x, P("skip.w"), P("skip.b"), 1, 0);
    return ops::add(h, sk);
}

Var attn_block(Tape& tape, const ParamStore& st, const std::string& name, Var x, bool trainable) {
    auto P = [&](const std::string& n) { return tape.leaf(st.get(name + "." + n), trainable); };
    int c = x->value.dim(0), h = x->value.dim(1), w = x->value.dim(2);
    Var hn = ops::group_norm(x, P("gn.g"), P("gn.b"), norm_groups(c));
    Var q = ops::reshape(ops::conv2d(hn, P("q.w"), P("q.b"), 1, 0), {c, h * w});
    Var k = ops::reshape(ops::conv2d(hn, P("k.w"), P("k.b"), 1, 0), {c, h * w});
    Var v = ops::reshape(ops::conv2d(hn, P("v.w"), P("v.b"), 1, 0), {c, h * w});
    Var scores = ops::scale(ops::matmul(ops::transpose2d(q), k), 1.0 / std::sqrt(static_cast<double>(c)));
    Var attn = ops::softmax_rows(scores);
    Var out = ops::matmul(v, ops::transpose2d(attn));
    out = ops::reshape(out, {c, h, w});
    out = ops::conv2d(out, P("proj.w"), P("proj.b"), 1, 0);
    return ops::add(x, out);
}

}  // namespace

ModelParams init_backbone(const BackboneConfig& cfg, ModelRole role, std::uint64_t seed) {
    cfg.validate();
    bool temb = cfg.use_timestep_embedding;
    if (role == ModelRole::kExtractor && temb)
        throw std::invalid_argument("extractor role excludes the timestep embedding");

    ModelParams model;
    model.role = role;
    model.config = cfg;
    Rng rng(seed);
    ParamStore& st = model.store;
    const int M = cfg.levels;

    if (temb) {
        add_linear(st, rng, "time.mlp1", cfg.embedding_dim, cfg.embedding_dim);
        add_linear(st, rng, "time.mlp2", cfg.embedding_dim, cfg.embedding_dim);
    }
    add_conv(st, rng, "stem", cfg.level_channels(1), cfg.in_channels, 3, false);

    for (int i = 1; i <= M; ++i) {
        // the stem maps to C1 and downsampling preserves channels,
        // so level i starts from the previous level's width
        int cin = cfg.level_channels(std::max(1, i - 1));
        int cout = cfg.level_channels(i);
        add_res_block(st, rng, "enc" + std::to_string(i) + ".block1", cin, cout, temb, cfg.embedding_dim);
        add_res_block(st, rng, "enc" + std::to_string(i) + ".block2", cout, cout, temb, cfg.embedding_dim);
        add_conv(st, rng, "enc" + std::to_string(i) + ".down", cout, cout, 3, false);
    }

    int cb = cfg.level_channels(M + 1);
    int cm = cfg.level_channels(M);
    add_res_block(st, rng, "mid.block1", cm, cb, temb, cfg.embedding_dim);
    add_norm(st, "mid.attn.gn", cb);
    add_conv(st, rng, "mid.attn.q", cb, cb, 1, false);
    add_conv(st, rng, "mid.attn.k", cb, cb, 1, false);
    add_conv(st, rng, "mid.attn.v", cb, cb, 1, false);
    add_conv(st, rng, "mid.attn.proj", cb, cb, 1, true);
    add_res_block(st, rng, "mid.block2", cb, cb, temb, cfg.embedding_dim);

    for (int i = M; i >= 1; --i) {
        int c_above = cfg.level_channels(i + 1);
        int ci = cfg.level_channels(i);
        add_conv(st, rng, "dec" + std::to_string(i) + ".up", c_above, c_above, 3, false);
        add_res_block(st, rng, "dec" + std::to_string(i) + ".block1", ci + c_above, ci, temb, cfg.embedding_dim);
        add_res_block(st, rng, "dec" + std::to_string(i) + ".block2", ci, ci, temb, cfg.embedding_dim);
    }

    add_norm(st, "head.gn", cfg.level_channels(1));
    add_conv(st, rng, "head.conv", cfg.out_channels, cfg.level_channels(1), 3, true);
    return model;
}

UnetOut unet_forward(Tape& tape, const ModelParams& model, Var x, std::optional<int> t,
                     const SkipFn* skip, bool trainable) {
    const BackboneConfig& cfg = model.config;
    const ParamStore& st = model.store;
    const int M = cfg.levels;
    if (x->value.rank() != 3 || x->value.dim(0) != cfg.in_channels ||
        x->value.dim(1) != cfg.image_size || x->value.dim(2) != cfg.image_size)
        throw std::invalid_argument("unet input shape " + shape_str(x->value.shape()) +
                                    " does not match config (expected (" + std::to_string(cfg.in_channels) +
                                    "," + std::to_string(cfg.image_size) + "," + std::to_string(cfg.image_size) + "))");
    if (cfg.use_timestep_embedding != t.has_value())
        throw std::invalid_argument(cfg.use_timestep_embedding
                                        ? "diffusion backbone needs a timestep"
                                        : "extractor backbone takes no timestep");

    auto P = [&](const std::string& n) { return tape.leaf(st.get(n), trainable); };

    Var temb;
    if (t.has_value()) {
        Var sinus = constant(timestep_embedding(*t, cfg.embedding_dim));
        temb = ops::linear(sinus, P("time.mlp1.w"), P("time.mlp1.b"));
        temb = ops::silu(temb);
        temb = ops::linear(temb, P("time.mlp2.w"), P("time.mlp2.b"));
    }

    UnetOut res;
    res.pyramid.encoder.resize(static_cast<size_t>(M));
    res.pyramid.decoder.resize(static_cast<size_t>(M));

    Var h = ops::conv2d(x, P("stem.w"), P("stem.b"), 1, 1);
    for (int i = 1; i <= M; ++i) {
        std::string pre = "enc" + std::to_string(i);
        h = res_block(tape, st, pre + ".block1", h, temb, trainable);
        h = res_block(tape, st, pre + ".block2", h, temb, trainable);
        res.pyramid.encoder[static_cast<size_t>(i - 1)] = h;  // F_i, pre-downsample
        h = ops::conv2d(h, P(pre + ".down.w"), P(pre + ".down.b"), 2, 1);
    }

    h = res_block(tape, st, "mid.block1", h, temb, trainable);
    h = attn_block(tape, st, "mid.attn", h, trainable);
    h = res_block(tape, st, "mid.block2", h, temb, trainable);

    for (int i = M; i >= 1; --i) {
        std::string pre = "dec" + std::to_string(i);
        h = ops::upsample_nearest2x(h);
        h = ops::conv2d(h, P(pre + ".up.w"), P(pre + ".up.b"), 1, 1);
        Var f_i = res.pyramid.encoder[static_cast<size_t>(i - 1)];
        Var merged = skip ? (*skip)(i, f_i, h) : ops::concat_channels(f_i, h);
        h = res_block(tape, st, pre + ".block1", merged, temb, trainable);
        h = res_block(tape, st, pre + ".block2", h, temb, trainable);
        res.pyramid.decoder[static_cast<size_t>(i - 1)] = h;  // F*_i
    }

    Var out = ops::group_norm(h, P("head.gn.g"), P("head.gn.b"), norm_groups(cfg.level_channels(1)));
    out = ops::silu(out);
    res.out = ops::conv2d(out, P("head.conv.w"), P("head.conv.b"), 1, 1);
    return res;
}

ForwardPass run_unet(const ModelParams& model, const Tensor& x, std::optional<int> t, const SkipFn* skip) {
    Tape tape;
    Var xin = tape.input(x);
    UnetOut r = unet_forward(tape, model, xin, t, skip, false);
    ForwardPass fp;
    fp.out = r.out->value;
    fp.pyramid = detach_pyramid(r.pyramid);
    return fp;
}

FeaturePyramid detach_pyramid(const PyramidVars& vars) {
    FeaturePyramid p;
    for (const auto& v : vars.encoder) p.encoder.push_back(v->value);
    for (const auto& v : vars.decoder) p.decoder.push_back(v->value);
    return p;
}

}  // namespace uspine
