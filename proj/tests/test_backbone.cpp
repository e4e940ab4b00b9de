#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "test_helpers.hpp"
#include "uspine/backbone.hpp"
#include "uspine/sha256.hpp"

using namespace uspine;

namespace {

BackboneConfig micro_config(ModelRole role) {
    BackboneConfig cfg;
    cfg.image_size = 16;
    cfg.base_channels = 4;
    cfg.channel_multipliers = {1, 2, 2, 4};
    cfg.out_channels = role == ModelRole::kDiffusion ? 1 : 4;
    cfg.use_timestep_embedding = role == ModelRole::kDiffusion;
    cfg.embedding_dim = 8;
    return cfg;
}

}  // namespace

TEST_CASE("timestep embedding closed form") {
    SUBCASE("t=0 gives [0,0,1,1]") {
        Tensor e = timestep_embedding(0, 4);
        CHECK(e[0] == 0.0);
        CHECK(e[1] == 0.0);
        CHECK(e[2] == 1.0);
        CHECK(e[3] == 1.0);
    }
    SUBCASE("components bounded by [-1,1]") {
        for (int t : {1, 10, 999}) {
            Tensor e = timestep_embedding(t, 16);
            for (int i = 0; i < 16; ++i) {
                CHECK(e[i] <= 1.0);
                CHECK(e[i] >= -1.0);
            }
        }
    }
    SUBCASE("t=100 dim=8 matches sin/cos of t*10000^(-2k/dim)") {
        Tensor e = timestep_embedding(100, 8);
        for (int k = 0; k < 4; ++k) {
            double freq = std::pow(10000.0, -2.0 * k / 8.0);
            CHECK(e[k] == doctest::Approx(std::sin(100.0 * freq)).epsilon(1e-15));
            CHECK(e[4 + k] == doctest::Approx(std::cos(100.0 * freq)).epsilon(1e-15));
        }
    }
    SUBCASE("odd dim rejected") { CHECK_THROWS_AS(timestep_embedding(3, 5), std::invalid_argument); }
}

TEST_CASE("unet forward shapes and feature taps") {
    auto model = init_backbone(micro_config(ModelRole::kDiffusion), ModelRole::kDiffusion, 42);
    testing::randomize_params(model.store, 7);
    Rng rng(3);
    Tensor x = rng.normal_tensor({1, 16, 16});
    auto fp = run_unet(model, x, 40);

    CHECK(fp.out.shape() == std::vector<int>{1, 16, 16});
    REQUIRE(fp.pyramid.encoder.size() == 3);
    REQUIRE(fp.pyramid.decoder.size() == 3);
    for (int i = 1; i <= 3; ++i) {
        int hw = 16 >> (i - 1);
        int c = model.config.level_channels(i);
        CHECK(fp.pyramid.encoder[i - 1].shape() == std::vector<int>{c, hw, hw});
        CHECK(fp.pyramid.decoder[i - 1].shape() == std::vector<int>{c, hw, hw});
    }
}

TEST_CASE("extractor role yields 4-channel logits at full resolution") {
    auto model = init_backbone(micro_config(ModelRole::kExtractor), ModelRole::kExtractor, 42);
    Rng rng(5);
    Tensor x = rng.normal_tensor({1, 16, 16});
    auto fp = run_unet(model, x, std::nullopt);
    CHECK(fp.out.shape() == std::vector<int>{4, 16, 16});
}

TEST_CASE("forward pass is deterministic") {
    auto model = init_backbone(micro_config(ModelRole::kDiffusion), ModelRole::kDiffusion, 9);
    testing::randomize_params(model.store, 1);
    Rng rng(2);
    Tensor x = rng.normal_tensor({1, 16, 16});
    auto a = run_unet(model, x, 11);
    auto b = run_unet(model, x, 11);
    CHECK(max_abs_diff(a.out, b.out) == 0.0);
}

TEST_CASE("timestep presence must match the role") {
    auto dm = init_backbone(micro_config(ModelRole::kDiffusion), ModelRole::kDiffusion, 1);
    auto em = init_backbone(micro_config(ModelRole::kExtractor), ModelRole::kExtractor, 1);
    Tensor x({1, 16, 16});
    CHECK_THROWS_AS(run_unet(dm, x, std::nullopt), std::invalid_argument);
    CHECK_THROWS_AS(run_unet(em, x, 5), std::invalid_argument);
}

TEST_CASE("extractor and diffusion backbones share encoder/decoder shapes") {
    auto dm = init_backbone(micro_config(ModelRole::kDiffusion), ModelRole::kDiffusion, 10);
    auto em = init_backbone(micro_config(ModelRole::kExtractor), ModelRole::kExtractor, 20);
    // every non-time, non-head parameter must exist in both with equal shape
    for (const auto& e : dm.store.entries()) {
        if (e.name.rfind("time.", 0) == 0) continue;
        if (e.name.find(".temb.") != std::string::npos) continue;
        if (e.name.rfind("head.conv", 0) == 0) continue;  // out_channels differ
        REQUIRE_MESSAGE(em.store.has(e.name), e.name);
        CHECK(em.store.get(e.name).shape() == e.tensor.shape());
    }
    for (const auto& e : em.store.entries()) CHECK(dm.store.has(e.name));
}

TEST_CASE("checkpoint round trip is byte-exact") {
    auto model = init_backbone(micro_config(ModelRole::kDiffusion), ModelRole::kDiffusion, 77);
    testing::randomize_params(model.store, 8);
    Checkpoint ck;
    ck.role = role_name(model.role);
    ck.config_json = model.config.to_json();
    ck.params = model.store.clone();
    ck.notes["ema"] = "false";

    auto path = std::filesystem::temp_directory_path() / "uspine_test_ckpt.bin";
    save_checkpoint(path.string(), ck);
    Checkpoint back = load_checkpoint(path.string());

    CHECK(back.role == ck.role);
    CHECK(back.notes.at("ema") == "false");
    CHECK(BackboneConfig::from_json(back.config_json) == model.config);
    REQUIRE(back.params.count() == ck.params.count());
    CHECK(back.params.raw_bytes() == ck.params.raw_bytes());
    CHECK(back.params.content_hash() == ck.params.content_hash());

    // save -> load -> save must reproduce the file bit-for-bit
    auto path2 = std::filesystem::temp_directory_path() / "uspine_test_ckpt2.bin";
    save_checkpoint(path2.string(), back);
    CHECK(sha256_file_hex(path.string()) == sha256_file_hex(path2.string()));
    std::filesystem::remove(path);
    std::filesystem::remove(path2);
}

TEST_CASE("corrupt checkpoints are rejected") {
    auto path = std::filesystem::temp_directory_path() / "uspine_bad_ckpt.bin";
    {
        std::ofstream out(path, std::ios::binary);
        out << "not a checkpoint at all";
    }
    CHECK_THROWS(load_checkpoint(path.string()));
    std::filesystem::remove(path);
}
