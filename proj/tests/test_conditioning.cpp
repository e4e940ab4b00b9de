#include <cmath>

#include "doctest.h"
#include "test_helpers.hpp"
#include "uspine/conditioning.hpp"
#include "uspine/ops.hpp"

using namespace uspine;
namespace ut = uspine::testing;

namespace {

FeaturePyramid constant_pyramid(double v, const std::vector<int>& channels, int hw) {
    FeaturePyramid p;
    for (size_t i = 0; i < channels.size(); ++i) {
        int res = hw >> i;
        p.encoder.push_back(Tensor({channels[i], res, res}, v));
        p.decoder.push_back(Tensor({channels[i], res, res}, v));
    }
    return p;
}

FeaturePyramid random_pyramid(Rng& rng, const std::vector<int>& channels, int hw) {
    FeaturePyramid p;
    for (size_t i = 0; i < channels.size(); ++i) {
        int res = hw >> i;
        p.encoder.push_back(rng.normal_tensor({channels[i], res, res}));
        p.decoder.push_back(rng.normal_tensor({channels[i], res, res}));
    }
    return p;
}

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

}  // namespace

TEST_CASE("depth weights normalize and validate") {
    DepthWeights w = DepthWeights::reference();
    double sum = 0.0;
    for (double v : w.w) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(DepthWeights::normalized({0.2, 0.2, 0.2, 0.2}), std::invalid_argument);
    CHECK_THROWS_AS(DepthWeights::normalized({-0.1, 0.3, 0.3, 0.3, 0.2}), std::invalid_argument);
    CHECK_THROWS_AS(DepthWeights::normalized({0, 0, 0, 0, 0}), std::invalid_argument);
    DepthWeights oh = DepthWeights::one_hot(2);
    CHECK(oh.w[2] == 1.0);
    CHECK(oh.w[0] == 0.0);
}

TEST_CASE("fusion oracles") {
    std::vector<int> channels{4, 8, 8};
    SUBCASE("identical pyramids pass through") {
        std::vector<FeaturePyramid> ps(5, constant_pyramid(2.5, channels, 16));
        auto fused = fuse_depth_features(ps, DepthWeights::reference());
        for (const auto& t : fused.encoder)
            for (std::int64_t i = 0; i < t.size(); ++i) CHECK(t[i] == doctest::Approx(2.5).epsilon(1e-12));
    }
    SUBCASE("one-hot weights select a pyramid") {
        Rng rng(4);
        std::vector<FeaturePyramid> ps;
        for (int d = 0; d < 5; ++d) ps.push_back(random_pyramid(rng, channels, 16));
        auto fused = fuse_depth_features(ps, DepthWeights::one_hot(3));
        for (size_t l = 0; l < channels.size(); ++l) {
            CHECK(max_abs_diff(fused.encoder[l], ps[3].encoder[l]) == 0.0);
            CHECK(max_abs_diff(fused.decoder[l], ps[3].decoder[l]) == 0.0);
        }
    }
    SUBCASE("reference weights on constant pyramids 1..5 (dot-product oracle)") {
        std::vector<FeaturePyramid> ps;
        for (int d = 0; d < 5; ++d) ps.push_back(constant_pyramid(d + 1.0, channels, 16));
        auto fused = fuse_depth_features(ps, DepthWeights::reference());
        // sum_d w_d * d with the published vector renormalized from 0.999
        const double expect = 3.1841841841841837;
        for (const auto& t : fused.encoder)
            for (std::int64_t i = 0; i < t.size(); ++i) CHECK(t[i] == doctest::Approx(expect).epsilon(1e-12));
        for (const auto& t : fused.decoder)
            for (std::int64_t i = 0; i < t.size(); ++i) CHECK(t[i] == doctest::Approx(expect).epsilon(1e-12));
    }
    SUBCASE("shape mismatches are rejected") {
        Rng rng(5);
        std::vector<FeaturePyramid> ps;
        for (int d = 0; d < 5; ++d) ps.push_back(random_pyramid(rng, channels, 16));
        ps[2].encoder[1] = Tensor({channels[1], 4, 4});
        CHECK_THROWS_AS(fuse_depth_features(ps, DepthWeights::reference()), std::invalid_argument);
        ps.pop_back();
        CHECK_THROWS_AS(fuse_depth_features(ps, DepthWeights::reference()), std::invalid_argument);
    }
}

TEST_CASE("fusion is linear and convex") {
    std::vector<int> channels{4, 8, 8};
    Rng rng(6);
    DepthWeights w = DepthWeights::reference();

    SUBCASE("linearity") {
        std::vector<FeaturePyramid> P, Q, mix;
        const double a = 1.7, b = -0.4;
        for (int d = 0; d < 5; ++d) {
            P.push_back(random_pyramid(rng, channels, 16));
            Q.push_back(random_pyramid(rng, channels, 16));
            FeaturePyramid m;
            for (size_t l = 0; l < channels.size(); ++l) {
                m.encoder.push_back(add(scale(P[d].encoder[l], a), scale(Q[d].encoder[l], b)));
                m.decoder.push_back(add(scale(P[d].decoder[l], a), scale(Q[d].decoder[l], b)));
            }
            mix.push_back(std::move(m));
        }
        auto fp = fuse_depth_features(P, w);
        auto fq = fuse_depth_features(Q, w);
        auto fm = fuse_depth_features(mix, w);
        for (size_t l = 0; l < channels.size(); ++l) {
            Tensor want = add(scale(fp.encoder[l], a), scale(fq.encoder[l], b));
            CHECK(max_abs_diff(fm.encoder[l], want) < 1e-12);
        }
    }
    SUBCASE("convex combination bounds") {
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<FeaturePyramid> ps;
            for (int d = 0; d < 5; ++d) ps.push_back(random_pyramid(rng, channels, 8));
            auto fused = fuse_depth_features(ps, w);
            for (size_t l = 0; l < channels.size(); ++l) {
                for (std::int64_t i = 0; i < fused.encoder[l].size(); ++i) {
                    double lo = 1e300, hi = -1e300;
                    for (int d = 0; d < 5; ++d) {
                        lo = std::min(lo, ps[d].encoder[l][i]);
                        hi = std::max(hi, ps[d].encoder[l][i]);
                    }
                    CHECK(fused.encoder[l][i] >= lo - 1e-12);
                    CHECK(fused.encoder[l][i] <= hi + 1e-12);
                }
            }
        }
    }
}

TEST_CASE("tuner zero-init and hand oracle") {
    SUBCASE("fresh tuner is a no-op") {
        TunerConfig tc;
        tc.channels = {4, 8, 8};
        TunerModel tuner = init_tuner(tc, 9);
        Rng rng(10);
        Tensor f = rng.normal_tensor({8, 6, 6});
        Tensor cond = rng.normal_tensor({8, 6, 6});
        Tensor out = tuner_apply(tuner, 2, f, cond);
        CHECK(out.max() == 0.0);
        CHECK(out.min() == 0.0);
    }
    SUBCASE("additive cancellation: f = -cond gives zero through gelu(0)") {
        TunerConfig tc;
        tc.channels = {4, 8, 8};
        TunerModel tuner = init_tuner(tc, 11);
        ut::randomize_params(tuner.store, 12);
        // zero bias so the hidden input is exactly zero
        tuner.store.get("level1.down.b").fill(0.0);
        Rng rng(13);
        Tensor f = rng.normal_tensor({4, 4, 4});
        Tensor cond = scale(f, -1.0);
        Tensor out = tuner_apply(tuner, 1, f, cond);
        // gelu(0) = 0, so only the up bias remains; zero it too
        Tensor up_b = tuner.store.get("level1.up.b");
        for (std::int64_t i = 0; i < out.size(); ++i) {
            int c = static_cast<int>(i / 16);
            CHECK(out[i] == doctest::Approx(up_b[c]).epsilon(1e-15));
        }
    }
    SUBCASE("hand-set 2x2 projections match an explicit matrix oracle") {
        TunerConfig tc;
        tc.levels = 1;
        tc.channels = {2};
        tc.reduction = 1;  // hidden = 2
        TunerModel tuner = init_tuner(tc, 0);
        auto& wd = tuner.store.get("level1.down.w");  // (2,2,1,1)
        auto& bd = tuner.store.get("level1.down.b");
        auto& wu = tuner.store.get("level1.up.w");
        auto& bu = tuner.store.get("level1.up.b");
        wd[0] = 0.5; wd[1] = -1.0; wd[2] = 2.0; wd[3] = 0.25;
        bd[0] = 0.1; bd[1] = -0.2;
        wu[0] = 1.5; wu[1] = -0.5; wu[2] = 0.75; wu[3] = 1.0;
        bu[0] = 0.05; bu[1] = -0.1;

        Tensor f({2, 1, 1}, {0.3, -0.7});
        Tensor cond({2, 1, 1}, {0.2, 0.4});
        Tensor out = tuner_apply(tuner, 1, f, cond);

        double s0 = 0.3 + 0.2, s1 = -0.7 + 0.4;
        double h0 = gelu_scalar(0.5 * s0 + (-1.0) * s1 + 0.1);
        double h1 = gelu_scalar(2.0 * s0 + 0.25 * s1 + (-0.2));
        CHECK(out[0] == doctest::Approx(1.5 * h0 + (-0.5) * h1 + 0.05).epsilon(1e-14));
        CHECK(out[1] == doctest::Approx(0.75 * h0 + 1.0 * h1 + (-0.1)).epsilon(1e-14));
    }
    SUBCASE("level bounds and shape mismatches") {
        TunerConfig tc;
        tc.channels = {4, 8, 8};
        TunerModel tuner = init_tuner(tc, 1);
        Tensor f({8, 4, 4}), cond({8, 4, 4});
        CHECK_THROWS_AS(tuner_apply(tuner, 0, f, cond), std::out_of_range);
        CHECK_THROWS_AS(tuner_apply(tuner, 4, f, cond), std::out_of_range);
        CHECK_THROWS_AS(tuner_apply(tuner, 2, f, Tensor({8, 2, 2})), std::invalid_argument);
    }
}

TEST_CASE("conditioned skip connection") {
    TunerConfig tc;
    tc.channels = {4, 8, 8};
    TunerModel tuner = init_tuner(tc, 21);  // zero-init up projection
    Rng rng(22);
    Tensor f = rng.normal_tensor({8, 6, 6});
    Tensor arriving = rng.normal_tensor({16, 6, 6});
    Tensor ce = rng.normal_tensor({8, 6, 6});
    Tensor cd = rng.normal_tensor({8, 6, 6});

    SUBCASE("zero tuner: first operand equals the decoder condition") {
        Tensor out = conditioned_skip(tuner, 2, f, arriving, ce, cd, SkipMode::kPaper);
        REQUIRE(out.shape() == std::vector<int>{24, 6, 6});
        Tensor first = Tensor({8, 6, 6});
        std::copy(out.data(), out.data() + first.size(), first.data());
        CHECK(max_abs_diff(first, cd) == 0.0);
    }
    SUBCASE("residual mode with zero conditions reduces to Concat([f, arriving])") {
        Tensor z({8, 6, 6});
        Tensor out = conditioned_skip(tuner, 2, f, arriving, z, z, SkipMode::kResidual);
        Tape tape;
        Tensor want = ops::concat_channels(tape.input(f), tape.input(arriving))->value;
        CHECK(max_abs_diff(out, want) == 0.0);
    }
    SUBCASE("channel arithmetic") {
        Tensor out = conditioned_skip(tuner, 2, f, arriving, ce, cd, SkipMode::kPaper);
        CHECK(out.dim(0) == f.dim(0) + arriving.dim(0));
    }
}

TEST_CASE("tuner parameter budget stays under 10%") {
    for (int base : {8, 16}) {
        BackboneConfig cfg;
        cfg.image_size = 64;
        cfg.base_channels = base;
        cfg.use_timestep_embedding = true;
        cfg.embedding_dim = 4 * base;
        auto model = init_backbone(cfg, ModelRole::kDiffusion, 3);
        TunerModel tuner = init_tuner(TunerConfig::for_backbone(cfg), 4);
        CHECK(tuner_parameter_ratio(tuner, model) < 0.10);
    }
}

TEST_CASE("zero-init neutrality of the conditioned model") {
    BackboneConfig cfg;
    cfg.image_size = 16;
    cfg.base_channels = 4;
    cfg.use_timestep_embedding = true;
    cfg.embedding_dim = 8;
    auto model = init_backbone(cfg, ModelRole::kDiffusion, 31);
    ut::randomize_params(model.store, 32);
    TunerModel tuner = init_tuner(TunerConfig::for_backbone(cfg), 33);  // W_up = 0

    Rng rng(34);
    Tensor x = rng.normal_tensor({1, 16, 16});
    auto plain = run_unet(model, x, 7);

    FusedConditions conds;
    for (int i = 1; i <= 3; ++i) {
        int hw = 16 >> (i - 1);
        int c = cfg.level_channels(i);
        conds.encoder.push_back(rng.normal_tensor({c, hw, hw}));
        conds.decoder.push_back(Tensor({c, hw, hw}));  // forced to zero
    }

    SUBCASE("residual mode is bit-identical to the unconditioned pass") {
        Tape tape;
        SkipFn skip = make_conditioned_skip(tape, tuner, conds, SkipMode::kResidual, false);
        Var x_in = tape.input(x);
        UnetOut out = unet_forward(tape, model, x_in, 7, &skip, false);
        CHECK(max_abs_diff(out.out->value, plain.out) == 0.0);
    }
    SUBCASE("paper mode substitutes the decoder condition for the encoder feature") {
        // with zero tuner and zero decoder conditions the skip operand is the
        // zero tensor; verified at the operation level
        Tensor f = rng.normal_tensor({4, 16, 16});
        Tensor arriving = rng.normal_tensor({8, 16, 16});
        Tensor out = conditioned_skip(tuner, 1, f, arriving, conds.encoder[0], conds.decoder[0],
                                      SkipMode::kPaper);
        Tensor first({4, 16, 16});
        std::copy(out.data(), out.data() + first.size(), first.data());
        CHECK(first.max() == 0.0);
        CHECK(first.min() == 0.0);
    }
}

TEST_CASE("extractor_forward contract") {
    BackboneConfig cfg;
    cfg.image_size = 16;
    cfg.base_channels = 4;
    cfg.out_channels = 4;
    cfg.use_timestep_embedding = false;
    cfg.embedding_dim = 8;
    auto model = init_backbone(cfg, ModelRole::kExtractor, 41);
    ut::randomize_params(model.store, 42);
    Rng rng(43);
    Image img({16, 16});
    for (std::int64_t i = 0; i < img.size(); ++i) img[i] = rng.uniform();

    auto a = extractor_forward(model, img);
    auto b = extractor_forward(model, img);
    CHECK(a.out.shape() == std::vector<int>{4, 16, 16});
    for (size_t l = 0; l < a.pyramid.encoder.size(); ++l) {
        CHECK(max_abs_diff(a.pyramid.encoder[l], b.pyramid.encoder[l]) == 0.0);
        CHECK(max_abs_diff(a.pyramid.decoder[l], b.pyramid.decoder[l]) == 0.0);
    }
    CHECK_THROWS_AS(extractor_forward(model, Tensor({1, 16, 16})), std::invalid_argument);
}
