#include <cmath>

#include "doctest.h"
#include "uspine/diffusion.hpp"
#include "uspine/rng.hpp"

using namespace uspine;

namespace {

// hand-built schedule for the algebraic examples
NoiseSchedule toy_schedule() {
    NoiseSchedule s;
    s.T = 2;
    s.s = 0.008;
    s.alpha_bar = {1.0, 0.25, 0.25e-3};
    return s;
}

Image const_image(int n, double v) { return Image({n, n}, v); }

}  // namespace

TEST_CASE("forward_diffuse basics") {
    NoiseSchedule sched = make_cosine_schedule(100, 0.008);
    Rng rng(7);
    Image x0 = rng.normal_tensor({8, 8});
    Tensor eps = rng.normal_tensor({8, 8});

    SUBCASE("t=0 is the identity") {
        Image x = forward_diffuse(x0, 0, eps, sched);
        CHECK(max_abs_diff(x, x0) == 0.0);
    }
    SUBCASE("zero noise stays on the signal ray") {
        Tensor z({8, 8});
        Image x = forward_diffuse(x0, 42, z, sched);
        double c = std::sqrt(sched.at(42));
        for (int i = 0; i < 64; ++i) CHECK(x[i] == doctest::Approx(c * x0[i]).epsilon(1e-15));
    }
    SUBCASE("constant-image arithmetic oracle") {
        NoiseSchedule toy = toy_schedule();
        Image ones = const_image(4, 1.0);
        Image x = forward_diffuse(ones, 1, ones, toy);
        for (int i = 0; i < 16; ++i) CHECK(x[i] == doctest::Approx(1.3660254037844386).epsilon(1e-15));
    }
    SUBCASE("shape and range checks") {
        CHECK_THROWS_AS(forward_diffuse(x0, 101, eps, sched), std::out_of_range);
        CHECK_THROWS_AS(forward_diffuse(x0, -1, eps, sched), std::out_of_range);
        CHECK_THROWS_AS(forward_diffuse(x0, 5, Tensor({4, 4}), sched), std::invalid_argument);
    }
}

TEST_CASE("predict_x0 inverts forward_diffuse") {
    NoiseSchedule sched = make_cosine_schedule(200, 0.008);
    Rng rng(11);
    SUBCASE("round trip over random triples") {
        for (int trial = 0; trial < 100; ++trial) {
            Image x0 = rng.normal_tensor({6, 6});
            Tensor eps = rng.normal_tensor({6, 6});
            int t = rng.uniform_int(1, sched.T);
            Image x_t = forward_diffuse(x0, t, eps, sched);
            Image rec = predict_x0(x_t, eps, t, sched);
            CHECK(max_abs_diff(rec, x0) < 1e-6);
        }
    }
    SUBCASE("zero predicted noise rescales") {
        NoiseSchedule toy = toy_schedule();
        Image x0 = rng.normal_tensor({5, 5});
        Image x_t = scale(x0, std::sqrt(0.25));
        Image rec = predict_x0(x_t, Tensor({5, 5}), 1, toy);
        CHECK(max_abs_diff(rec, x0) < 1e-12);
    }
    SUBCASE("t=0 is rejected") {
        Image x0 = rng.normal_tensor({5, 5});
        CHECK_THROWS_AS(predict_x0(x0, Tensor({5, 5}), 0, sched), std::invalid_argument);
    }
}

TEST_CASE("ddim_step algebra") {
    NoiseSchedule toy = toy_schedule();
    Rng rng(13);
    SUBCASE("oracle noise recovers x0 in one step (2*sqrt(0.75) = sqrt(3))") {
        CHECK(2.0 * std::sqrt(0.75) - std::sqrt(3.0) == doctest::Approx(0.0).epsilon(1e-16));
        Image x0 = rng.normal_tensor({7, 7});
        Tensor eps = rng.normal_tensor({7, 7});
        Image x_t = forward_diffuse(x0, 1, eps, toy);  // alpha_bar = 0.25
        Image rec = ddim_step(x_t, eps, 1, 0, toy);    // alpha_bar_prev = 1
        CHECK(max_abs_diff(rec, x0) < 1e-12);
    }
    SUBCASE("noiseless trajectory stays on the signal ray") {
        NoiseSchedule sched = make_cosine_schedule(100, 0.008);
        Image x0 = rng.normal_tensor({6, 6});
        Image x_t = scale(x0, std::sqrt(sched.at(60)));
        Image x_p = ddim_step(x_t, Tensor({6, 6}), 60, 20, sched);
        Image want = scale(x0, std::sqrt(sched.at(20)));
        CHECK(max_abs_diff(x_p, want) < 1e-12);
    }
    SUBCASE("ordering precondition") {
        Image x = rng.normal_tensor({4, 4});
        CHECK_THROWS_AS(ddim_step(x, x, 3, 3, toy_schedule()), std::invalid_argument);
        CHECK_THROWS_AS(ddim_step(x, x, 1, 2, toy_schedule()), std::invalid_argument);
    }
    SUBCASE("determinism: identical inputs give bit-identical outputs") {
        NoiseSchedule sched = make_cosine_schedule(50, 0.008);
        Image x = rng.normal_tensor({8, 8});
        Tensor e = rng.normal_tensor({8, 8});
        Image a = ddim_step(x, e, 30, 10, sched);
        Image b = ddim_step(x, e, 30, 10, sched);
        CHECK(max_abs_diff(a, b) == 0.0);
    }
}

TEST_CASE("oracle-noise reverse chain recovers x0 along any subsequence") {
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        int T = rng.uniform_int(8, 300);
        NoiseSchedule sched = make_cosine_schedule(T, 0.008);
        int n_steps = rng.uniform_int(1, T);
        auto seq = make_timestep_subsequence(T, n_steps);
        Image x0 = rng.normal_tensor({8, 8});
        Tensor eps = rng.normal_tensor({8, 8});
        Image x = forward_diffuse(x0, T, eps, sched);
        for (size_t i = 0; i + 1 < seq.steps.size(); ++i)
            x = ddim_step(x, eps, seq.steps[i], seq.steps[i + 1], sched);
        CHECK(max_abs_diff(x, x0) < 1e-5);
    }
}

TEST_CASE("forward_diffuse matches the marginal moments") {
    NoiseSchedule sched = make_cosine_schedule(100, 0.008);
    const int t = 55;
    const int N = 10000;
    Rng rng(23);
    Image x0 = rng.normal_tensor({4, 4});
    Tensor mean({4, 4}), m2({4, 4});
    for (int k = 0; k < N; ++k) {
        Tensor eps = rng.normal_tensor({4, 4});
        Image x = forward_diffuse(x0, t, eps, sched);
        for (int i = 0; i < 16; ++i) {
            mean[i] += x[i];
            m2[i] += x[i] * x[i];
        }
    }
    double ab = sched.at(t);
    double tol_mean = 4.0 / std::sqrt(static_cast<double>(N));
    for (int i = 0; i < 16; ++i) {
        double m = mean[i] / N;
        double var = m2[i] / N - m * m;
        CHECK(std::fabs(m - std::sqrt(ab) * x0[i]) < tol_mean);
        CHECK(var == doctest::Approx(1.0 - ab).epsilon(0.10));
    }
}
