#include <functional>

#include "doctest.h"
#include "test_helpers.hpp"
#include "uspine/conditioning.hpp"
#include "uspine/losses.hpp"
#include "uspine/ops.hpp"

using namespace uspine;
namespace ut = uspine::testing;

namespace {

/// Compares the analytic gradient of a rebuilt scalar graph against central
/// finite differences on up to `max_checks` elements of `param`. The builder
/// must re-read the tensor's current values (leaves share storage).
void check_grad(const char* name, Tensor& param, const std::function<Var(Tape&)>& build,
                double step = 1e-5, double tol = 1e-6, int max_checks = 48) {
    Tape tape;
    Var loss = build(tape);
    tape.backward(loss);
    const Tensor* g = tape.grad_of(param);
    REQUIRE_MESSAGE(g != nullptr, name);
    std::int64_t stride = std::max<std::int64_t>(1, param.size() / max_checks);
    for (std::int64_t i = 0; i < param.size(); i += stride) {
        double fd = ut::central_diff(param, i, step, [&]() {
            Tape t2;
            return build(t2)->value[0];
        });
        CHECK_MESSAGE(ut::rel_error((*g)[i], fd) < tol,
                      name << " element " << i << ": analytic " << (*g)[i] << " vs fd " << fd);
    }
}

}  // namespace

TEST_CASE("conv2d gradients (weight, bias, input)") {
    Rng rng(101);
    Tensor x = rng.normal_tensor({3, 6, 6});
    Tensor w = rng.normal_tensor({4, 3, 3, 3});
    Tensor b = rng.normal_tensor({4});
    Tensor target = rng.normal_tensor({4, 3, 3});

    auto build = [&](Tape& t) {
        Var out = ops::conv2d(t.input(x, true), t.leaf(w, true), t.leaf(b, true), 2, 1);
        return ops::mse(out, constant(target));
    };
    check_grad("conv2d.w", w, build);
    check_grad("conv2d.b", b, build);
    check_grad("conv2d.x", x, build);
}

TEST_CASE("group_norm gradients") {
    Rng rng(103);
    Tensor x = rng.normal_tensor({4, 5, 5});
    Tensor gamma = rng.normal_tensor({4});
    Tensor beta = rng.normal_tensor({4});
    Tensor target = rng.normal_tensor({4, 5, 5});
    auto build = [&](Tape& t) {
        Var out = ops::group_norm(t.input(x, true), t.leaf(gamma, true), t.leaf(beta, true), 2);
        return ops::mse(out, constant(target));
    };
    check_grad("gn.gamma", gamma, build);
    check_grad("gn.beta", beta, build);
    check_grad("gn.x", x, build, 1e-5, 1e-5);
}

TEST_CASE("activation gradients") {
    Rng rng(105);
    Tensor x = rng.normal_tensor({2, 4, 4});
    Tensor target = rng.normal_tensor({2, 4, 4});
    auto build_silu = [&](Tape& t) { return ops::mse(ops::silu(t.input(x, true)), constant(target)); };
    auto build_gelu = [&](Tape& t) { return ops::mse(ops::gelu(t.input(x, true)), constant(target)); };
    check_grad("silu.x", x, build_silu);
    check_grad("gelu.x", x, build_gelu);
}

TEST_CASE("linear, matmul, softmax and attention-style gradients") {
    Rng rng(107);
    SUBCASE("linear") {
        Tensor x = rng.normal_tensor({6});
        Tensor w = rng.normal_tensor({3, 6});
        Tensor b = rng.normal_tensor({3});
        Tensor target = rng.normal_tensor({3});
        auto build = [&](Tape& t) {
            return ops::mse(ops::linear(t.input(x, true), t.leaf(w, true), t.leaf(b, true)),
                            constant(target));
        };
        check_grad("linear.w", w, build);
        check_grad("linear.b", b, build);
        check_grad("linear.x", x, build);
    }
    SUBCASE("matmul + softmax_rows + transpose") {
        Tensor q = rng.normal_tensor({3, 5});
        Tensor k = rng.normal_tensor({3, 5});
        Tensor v = rng.normal_tensor({3, 5});
        Tensor target = rng.normal_tensor({3, 5});
        auto build = [&](Tape& t) {
            Var qv = t.leaf(q, true), kv = t.leaf(k, true), vv = t.leaf(v, true);
            Var scores = ops::scale(ops::matmul(ops::transpose2d(qv), kv), 0.5);
            Var attn = ops::softmax_rows(scores);
            Var out = ops::matmul(vv, ops::transpose2d(attn));
            return ops::mse(out, constant(target));
        };
        check_grad("attn.q", q, build);
        check_grad("attn.k", k, build);
        check_grad("attn.v", v, build);
    }
}

TEST_CASE("structural op gradients (concat, upsample, channel bias)") {
    Rng rng(109);
    Tensor a = rng.normal_tensor({2, 4, 4});
    Tensor b = rng.normal_tensor({3, 4, 4});
    Tensor bias = rng.normal_tensor({5});
    Tensor target = rng.normal_tensor({5, 8, 8});
    auto build = [&](Tape& t) {
        Var cat = ops::concat_channels(t.leaf(a, true), t.leaf(b, true));
        Var up = ops::upsample_nearest2x(ops::add_channel_bias(cat, t.leaf(bias, true)));
        return ops::mse(up, constant(target));
    };
    check_grad("concat.a", a, build);
    check_grad("concat.b", b, build);
    check_grad("bias", bias, build);
}

TEST_CASE("cross entropy gradient") {
    Rng rng(111);
    Tensor logits = rng.normal_tensor({4, 3, 3});
    SegMask y(3, 3);
    for (int i = 0; i < 9; ++i) y.labels[static_cast<size_t>(i)] = static_cast<std::uint8_t>(i % 4);
    auto build = [&](Tape& t) { return ops::cross_entropy_mean(t.input(logits, true), y); };
    check_grad("ce.logits", logits, build);
}

TEST_CASE("tuner gradients") {
    Rng rng(113);
    TunerConfig tc;
    tc.levels = 3;
    tc.channels = {4, 8, 8};
    tc.reduction = 4;
    TunerModel tuner = init_tuner(tc, 5);
    ut::randomize_params(tuner.store, 6);

    Tensor f = rng.normal_tensor({8, 5, 5});
    Tensor cond = rng.normal_tensor({8, 5, 5});
    Tensor target = rng.normal_tensor({8, 5, 5});
    auto build = [&](Tape& t) {
        Var out = tuner_apply(t, tuner, 2, t.input(f, true), t.input(cond), true);
        return ops::mse(out, constant(target));
    };
    check_grad("tuner.down.w", tuner.store.get("level2.down.w"), build);
    check_grad("tuner.up.w", tuner.store.get("level2.up.w"), build);
    check_grad("tuner.up.b", tuner.store.get("level2.up.b"), build);
    check_grad("tuner.f", f, build);
}

TEST_CASE("micro U-Net end-to-end gradients vs finite differences") {
    BackboneConfig cfg;
    cfg.image_size = 16;
    cfg.base_channels = 4;
    cfg.out_channels = 1;
    cfg.use_timestep_embedding = true;
    cfg.embedding_dim = 8;
    auto model = init_backbone(cfg, ModelRole::kDiffusion, 21);
    ut::randomize_params(model.store, 22);

    NoiseSchedule sched = make_cosine_schedule(40, 0.008);
    Rng rng(23);
    Image x0 = rng.normal_tensor({16, 16});
    Tensor eps = rng.normal_tensor({16, 16});
    const int t_step = 17;
    Image x_t = forward_diffuse(x0, t_step, eps, sched);

    auto build = [&](Tape& tape) {
        Var x_in = tape.input(x_t.reshaped({1, 16, 16}));
        UnetOut out = unet_forward(tape, model, x_in, t_step, nullptr, /*trainable=*/true);
        Var eps_hat = ops::reshape(out.out, {16, 16});
        return stage1_loss_graph(eps_hat, x0, eps, x_t, t_step, sched);
    };

    // a spread of parameters across the network
    for (const char* name : {"stem.w", "enc1.block1.conv1.w", "enc2.block1.skip.w", "enc3.down.w",
                             "mid.attn.q.w", "mid.block2.conv2.w", "dec3.block1.conv1.w",
                             "dec1.block2.gn2.g", "head.conv.w", "time.mlp1.w",
                             "enc1.block1.temb.w"}) {
        check_grad(name, model.store.get(name), build, 1e-4, 1e-4, 12);
    }
}

TEST_CASE("stage2 loss gradients through the extractor head") {
    BackboneConfig cfg;
    cfg.image_size = 16;
    cfg.base_channels = 4;
    cfg.out_channels = 4;
    cfg.use_timestep_embedding = false;
    cfg.embedding_dim = 8;
    auto model = init_backbone(cfg, ModelRole::kExtractor, 31);
    ut::randomize_params(model.store, 32);

    Rng rng(33);
    Image img = rng.normal_tensor({16, 16});
    SegMask y(16, 16);
    for (size_t i = 0; i < y.labels.size(); ++i) y.labels[i] = static_cast<std::uint8_t>(rng.uniform_int(0, 3));

    auto build = [&](Tape& tape) {
        Var x_in = tape.input(img.reshaped({1, 16, 16}));
        UnetOut out = unet_forward(tape, model, x_in, std::nullopt, nullptr, /*trainable=*/true);
        return ops::cross_entropy_mean(out.out, y);
    };
    for (const char* name : {"head.conv.w", "dec1.block2.conv1.w", "enc1.block1.conv1.b"})
        check_grad(name, model.store.get(name), build, 1e-4, 1e-4, 12);
}
