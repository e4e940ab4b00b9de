#include <cmath>

#include "doctest.h"
#include "uspine/schedule.hpp"

using namespace uspine;

namespace {

// Independent closed-form oracle: alpha_bar[t] = f(t)/f(0) wherever the
// ratio clip does not bind, and ratio-clipped continuation where it does.
double cosine_f(int t, int T, double s) {
    double g = (static_cast<double>(t) / T + s) / (1.0 + s);
    double c = std::cos(g * M_PI / 2.0);
    return c * c;
}

}  // namespace

TEST_CASE("cosine schedule endpoints and monotonicity") {
    NoiseSchedule sched = make_cosine_schedule(1000, 0.008);
    CHECK(sched.alpha_bar[0] == 1.0);
    for (int t = 1; t <= sched.T; ++t) {
        CHECK(sched.alpha_bar[t] < sched.alpha_bar[t - 1]);
        CHECK(sched.alpha_bar[t] > 0.0);
        CHECK(sched.alpha_bar[t] / sched.alpha_bar[t - 1] >= 1e-3 * (1.0 - 1e-12));
    }
    CHECK(sched.alpha_bar[1000] < 0.01);
}

TEST_CASE("cosine schedule matches the closed form at T=4") {
    NoiseSchedule sched = make_cosine_schedule(4, 0.008);
    // f(t)/f(0) for t=0..3; the final ratio falls below the clip and the
    // schedule continues at 1e-3 * alpha_bar[3].
    double f0 = cosine_f(0, 4, 0.008);
    for (int t = 0; t <= 3; ++t)
        CHECK(sched.alpha_bar[t] == doctest::Approx(cosine_f(t, 4, 0.008) / f0).epsilon(1e-12));
    CHECK(sched.alpha_bar[4] == doctest::Approx(1e-3 * sched.alpha_bar[3]).epsilon(1e-12));
    // frozen oracle values
    CHECK(sched.alpha_bar[1] == doctest::Approx(0.84701216132690471).epsilon(1e-12));
    CHECK(sched.alpha_bar[2] == doctest::Approx(0.49384359044063775).epsilon(1e-12));
    CHECK(sched.alpha_bar[3] == doctest::Approx(0.14427210238573579).epsilon(1e-12));
    CHECK(sched.alpha_bar[4] == doctest::Approx(1.4427210238573583e-4).epsilon(1e-12));
}

TEST_CASE("schedule parameter validation") {
    CHECK_THROWS_AS(make_cosine_schedule(0, 0.008), std::invalid_argument);
    CHECK_THROWS_AS(make_cosine_schedule(-5, 0.008), std::invalid_argument);
    CHECK_THROWS_AS(make_cosine_schedule(100, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(make_cosine_schedule(100, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(make_cosine_schedule(100, -0.01), std::invalid_argument);
}

TEST_CASE("schedules of assorted lengths satisfy the invariants") {
    for (int T : {1, 2, 4, 10, 50, 250}) {
        NoiseSchedule sched = make_cosine_schedule(T, 0.008);
        CHECK_NOTHROW(validate_schedule(sched));
    }
}

TEST_CASE("timestep subsequence striding") {
    SUBCASE("full sequence") {
        auto seq = make_timestep_subsequence(1000, 1000);
        REQUIRE(seq.steps.size() == 1001);
        CHECK(seq.steps.front() == 1000);
        CHECK(seq.steps.back() == 0);
        for (size_t i = 1; i < seq.steps.size(); ++i) CHECK(seq.steps[i] == seq.steps[i - 1] - 1);
    }
    SUBCASE("uniform stride oracle") {
        auto seq = make_timestep_subsequence(1000, 4);
        CHECK(seq.steps == std::vector<int>{1000, 750, 500, 250, 0});
        // floor(T*k/n) oracle on assorted (T, n)
        for (auto [T, n] : {std::pair{1000, 7}, {997, 13}, {50, 50}, {64, 3}}) {
            auto s = make_timestep_subsequence(T, n);
            REQUIRE(static_cast<int>(s.steps.size()) == n + 1);
            for (int i = 0; i <= n; ++i)
                CHECK(s.steps[static_cast<size_t>(i)] ==
                      static_cast<int>((static_cast<long long>(T) * (n - i)) / n));
            for (size_t i = 1; i < s.steps.size(); ++i) CHECK(s.steps[i] < s.steps[i - 1]);
        }
    }
    SUBCASE("single jump") {
        auto seq = make_timestep_subsequence(10, 1);
        CHECK(seq.steps == std::vector<int>{10, 0});
    }
    SUBCASE("bounds") {
        CHECK_THROWS_AS(make_timestep_subsequence(10, 0), std::invalid_argument);
        CHECK_THROWS_AS(make_timestep_subsequence(10, 11), std::invalid_argument);
    }
}
