#include <doctest.h>

#include <cmath>

#include "resetedit/denoiser.hpp"
#include "resetedit/diffusion.hpp"
#include "support.hpp"

using namespace resetedit;

namespace {

Latent random_latent(Shape s, std::uint64_t seed, float stddev = 1.0f) {
    return Latent(testing::random_tensor(std::move(s), seed, stddev));
}

// Max abs difference over the larger of the two reference magnitudes.
double rel_inf(const Tensor& got, const Tensor& want, const Tensor& scale_ref) {
    return max_abs_diff(got, want) / std::max({max_abs(want), max_abs(scale_ref), 1e-30});
}

NoiseSchedule small_schedule(std::int64_t steps = 10) { return NoiseSchedule::linear(steps, 1000); }

}  // namespace

TEST_CASE("step coefficients: worked values") {
    auto c = step_coefficients(0.5, 0.5);
    CHECK(c.gamma == 1.0);
    CHECK(c.phi == 0.0);

    c = step_coefficients(1.0, 0.25);
    CHECK(c.gamma == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(c.phi == doctest::Approx(-std::sqrt(3.0)).epsilon(1e-12));
    CHECK(c.phi == doctest::Approx(-1.7320508).epsilon(1e-7));

    c = step_coefficients(0.9, 0.8);
    CHECK(c.gamma == doctest::Approx(1.0606602).epsilon(1e-7));
    CHECK(c.phi == doctest::Approx(-std::sqrt(0.225) + std::sqrt(0.1)).epsilon(1e-12));
    CHECK(c.phi == doctest::Approx(-0.1581139).epsilon(1e-6));
}

TEST_CASE("schedule invariants and range errors") {
    const auto s = NoiseSchedule::linear(50, 1000);
    CHECK(s.num_steps() == 50);
    CHECK(s.alpha(0) == 1.0);
    for (std::int64_t t = 1; t <= 50; ++t) {
        CHECK(s.alpha(t) < s.alpha(t - 1));
        CHECK(s.alpha(t) > 0.0);
        const auto c = s.coefficients(t);
        CHECK(c.gamma > 1.0);
        CHECK(std::isfinite(c.phi));
    }
    CHECK(s.timestep(50).train_step == 1000);
    CHECK_THROWS_AS(s.coefficients(0), RangeError);
    CHECK_THROWS_AS(s.coefficients(51), RangeError);
    CHECK_THROWS_AS(s.alpha(-1), RangeError);
    CHECK_THROWS_AS(NoiseSchedule({1.0, 0.5, 0.6}, {0, 1, 2}), ConfigError);
    CHECK_THROWS_AS(NoiseSchedule({0.9, 0.5}, {0, 1}), ConfigError);
}

TEST_CASE("schedule table lists every step") {
    const auto text = small_schedule(4).table();
    CHECK(text.rfind("t\ttrain_step\talpha\tgamma\tphi\n", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 6);
}

TEST_CASE("ddim_step: zero denoiser scales by gamma") {
    const auto s = small_schedule();
    const ZeroPredictor zero;
    const auto x = random_latent({2, 3, 3}, 1);
    const auto y = ddim_step(x, 7, zero, Condition(1), GuidanceConfig(3.0f), s);
    const double g = s.coefficients(7).gamma;
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == static_cast<float>(g * x[i]));
}

TEST_CASE("ddim_step: w = 0 ignores the condition") {
    const auto s = small_schedule();
    ToyDenoiser net(DenoiserArch{2, 8, 8, 8, 3}, 5);
    const auto x = random_latent({2, 8, 8}, 2);
    const auto a = ddim_step(x, 4, net, Condition(0), GuidanceConfig(0.0f), s);
    const auto b = ddim_step(x, 4, net, Condition(2), GuidanceConfig(0.0f), s);
    const auto c = ddim_step(x, 4, net, Condition::null(), GuidanceConfig(0.0f), s);
    CHECK(a == b);
    CHECK(a == c);
}

TEST_CASE("ddim_step: constant predictions with w = 2 from the origin give 2 phi") {
    const auto s = small_schedule();
    const ConstantPredictor constant(Latent(1, 2, 2, 0.0f), {{0, Latent(1, 2, 2, 1.0f)}});
    const auto y = ddim_step(Latent(1, 2, 2, 0.0f), 3, constant, Condition(0), GuidanceConfig(2.0f), s);
    const double phi = s.coefficients(3).phi;
    for (float v : y.values()) CHECK(v == doctest::Approx(2.0 * phi).epsilon(1e-6));
}

TEST_CASE("ddim_step rejects predictions of the wrong shape") {
    const auto s = small_schedule();
    const ConstantPredictor constant(Latent(1, 2, 2, 0.0f));
    CHECK_THROWS_AS(ddim_step(Latent(1, 3, 3), 1, constant, Condition::null(), GuidanceConfig(), s), ContractError);
}

TEST_CASE("invert_step: zero denoiser divides by gamma and undoes the step") {
    const auto s = small_schedule();
    const ZeroPredictor zero;
    const auto x = random_latent({2, 4, 4}, 3);
    const auto inv = invert_step(x, 5, zero, s);
    const double g = s.coefficients(5).gamma;
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(inv[i] == static_cast<float>(x[i] / g));
    const auto round = invert_step(ddim_step(x, 5, zero, Condition(), GuidanceConfig(), s), 5, zero, s);
    CHECK(rel_inf(round, x, x) < 1e-6);
}

TEST_CASE("invert_step: constant denoiser round trip with w = 0 and closed-form drift with w = 2") {
    const auto s = small_schedule();
    const auto e0 = random_latent({2, 3, 3}, 4), e1 = random_latent({2, 3, 3}, 5);
    const ConstantPredictor constant(e0, {{1, e1}});
    const auto x = random_latent({2, 3, 3}, 6);
    for (std::int64_t t = 1; t <= s.num_steps(); ++t) {
        const auto back = invert_step(ddim_step(x, t, constant, Condition(1), GuidanceConfig(0.0f), s), t, constant, s);
        CHECK(rel_inf(back, x, x) < 1e-6);
    }
    Latent x0(1, 2, 2, 0.0f);
    const ConstantPredictor unit(Latent(1, 2, 2, 0.0f), {{0, Latent(1, 2, 2, 1.0f)}});
    const auto back = invert_step(ddim_step(x0, 3, unit, Condition(0), GuidanceConfig(2.0f), s), 3, unit, s);
    const auto c = s.coefficients(3);
    for (float v : back.values()) CHECK(v == doctest::Approx(c.phi / c.gamma * 2.0).epsilon(1e-6));
}

TEST_CASE("sample_trajectory: empty schedule is the identity") {
    const NoiseSchedule empty = NoiseSchedule::linear(0, 1000);
    const auto z = random_latent({2, 2, 2}, 7);
    const auto traj = sample_trajectory(z, ZeroPredictor(), Condition(0), GuidanceConfig(7.5f), empty);
    CHECK(traj.final == z);
    REQUIRE(traj.states.size() == 1);
    CHECK(traj.states[0] == z);
    CHECK(invert_trajectory(z, ZeroPredictor(), empty).final == z);
}

TEST_CASE("sample_trajectory: zero denoiser telescopes to sqrt(alpha_0 / alpha_T)") {
    const auto s = NoiseSchedule::linear(50, 1000);
    const auto z = random_latent({4, 4, 4}, 8);
    const auto traj = sample_trajectory(z, ZeroPredictor(), Condition(), GuidanceConfig(), s);
    CHECK(traj.states.size() == 51);
    CHECK(traj.states.front() == z);
    CHECK(traj.states.back() == traj.final);
    const double k = std::sqrt(s.alpha(0) / s.alpha(50));
    for (std::int64_t i = 0; i < z.numel(); ++i) CHECK(traj.final[i] == doctest::Approx(k * z[i]).epsilon(1e-5));
    const auto back = invert_trajectory(traj.final, ZeroPredictor(), s);
    CHECK(rel_inf(back.final, z, z) < 1e-5);
}

TEST_CASE("sample_trajectory: oracle rollout matches a hand rollout on a 1x2x2 latent") {
    const auto s = small_schedule(8);
    const Latent mean(Tensor({1, 2, 2}, std::vector<float>{0.5f, -0.25f, 1.0f, 0.0f}));
    const Latent var(Tensor({1, 2, 2}, std::vector<float>{0.3f, 1.0f, 0.05f, 2.0f}));
    const LinearGaussianOracle oracle(mean, var);
    const auto z = random_latent({1, 2, 2}, 9);
    const auto traj = sample_trajectory(z, oracle, Condition(), GuidanceConfig(0.0f), s);

    std::vector<double> x(z.values().begin(), z.values().end());
    for (std::int64_t t = s.num_steps(); t >= 1; --t) {
        const double a_prev = s.alpha(t - 1), a = s.timestep(t).alpha_bar;
        const double at = s.alpha(t);
        const double gamma = std::sqrt(a_prev / at);
        const double phi = -std::sqrt(a_prev * (1 - at) / at) + std::sqrt(1 - a_prev);
        for (std::size_t i = 0; i < 4; ++i) {
            const double eps = std::sqrt(1 - a) * (x[i] - std::sqrt(a) * mean[i]) / (a * var[i] + 1 - a);
            x[i] = gamma * x[i] + phi * eps;
        }
    }
    for (std::size_t i = 0; i < 4; ++i) CHECK(traj.final[i] == doctest::Approx(x[i]).epsilon(1e-5));
}

TEST_CASE("invert_trajectory: constant denoiser is exact with w = 0") {
    const auto s = NoiseSchedule::linear(50, 1000);
    const ConstantPredictor constant(random_latent({2, 4, 4}, 10), {{0, random_latent({2, 4, 4}, 11)}});
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto z = random_latent({2, 4, 4}, 100 + seed);
        const auto z0 = sample_trajectory(z, constant, Condition(0), GuidanceConfig(0.0f), s).final;
        CHECK(rel_inf(invert_trajectory(z0, constant, s).final, z, z) < 1e-5);
    }
}

TEST_CASE("invert_trajectory: constant denoiser with w = 2 accumulates the closed-form drift") {
    const auto s = small_schedule(6);
    const auto e0 = random_latent({1, 2, 2}, 12), e1 = random_latent({1, 2, 2}, 13);
    const ConstantPredictor constant(e0, {{0, e1}});
    const auto z = random_latent({1, 2, 2}, 14);
    const auto z0 = sample_trajectory(z, constant, Condition(0), GuidanceConfig(2.0f), s).final;
    const auto zhat = invert_trajectory(z0, constant, s).final;

    // Hand composition: generation applies gamma x + phi (e0 + 2 (e1 - e0)); inversion removes
    // only phi e0, so each step leaves (phi/gamma) 2 (e1 - e0), which later inversion steps rescale.
    std::vector<double> x(z.values().begin(), z.values().end());
    for (std::int64_t t = s.num_steps(); t >= 1; --t) {
        const auto c = s.coefficients(t);
        for (std::size_t i = 0; i < 4; ++i) x[i] = c.gamma * x[i] + c.phi * (e0[i] + 2.0 * (e1[i] - e0[i]));
    }
    std::vector<double> drift(4, 0.0);
    for (std::int64_t t = 1; t <= s.num_steps(); ++t) {
        const auto c = s.coefficients(t);
        for (std::size_t i = 0; i < 4; ++i) {
            x[i] = x[i] / c.gamma - c.phi / c.gamma * e0[i];
            drift[i] = drift[i] / c.gamma + c.phi / c.gamma * 2.0 * (e1[i] - e0[i]);
        }
    }
    // drift[] is the recursion of the per-step inversion error through later inversion steps.
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(zhat[i] == doctest::Approx(x[i]).epsilon(1e-5));
        CHECK(zhat[i] - z[i] == doctest::Approx(drift[i]).epsilon(1e-4));
    }
}

TEST_CASE("decompose_step_error: w = 0 has no drift; constant denoiser has no estimation error") {
    const auto s = small_schedule();
    ToyDenoiser net(DenoiserArch{2, 8, 8, 8, 3}, 6);
    const auto x = random_latent({2, 8, 8}, 15);
    const auto r = decompose_step_error(x, 6, net, Condition(1), GuidanceConfig(0.0f), s);
    CHECK(max_abs(r.condition_drift) == 0.0);
    CHECK(r.t == 6);

    const ConstantPredictor constant(random_latent({2, 8, 8}, 16), {{1, random_latent({2, 8, 8}, 17)}});
    const auto rc = decompose_step_error(x, 6, constant, Condition(1), GuidanceConfig(7.5f), s);
    CHECK(max_abs(rc.estimation_error) == 0.0);
    CHECK(max_abs(rc.condition_drift) > 0.0);
}

TEST_CASE("decompose_step_error: terms match an independent recomputation for a random network") {
    const auto s = NoiseSchedule::linear(50, 1000);
    ToyDenoiser net(DenoiserArch{4, 8, 16, 16, 4}, 7);
    for (std::uint64_t k = 0; k < 5; ++k) {
        const auto x = random_latent({4, 8, 8}, 200 + k);
        const std::int64_t t = 1 + static_cast<std::int64_t>(k * 11);
        const float w = 7.5f;
        const auto r = decompose_step_error(x, t, net, Condition(2), GuidanceConfig(w), s);

        const auto ts = s.timestep(t);
        const auto c = s.coefficients(t);
        const auto e_null = net.predict(x, ts, Condition::null());
        const auto e_cond = net.predict(x, ts, Condition(2));
        Latent x_prev(4, 8, 8);
        for (std::int64_t i = 0; i < x.numel(); ++i)
            x_prev[i] = static_cast<float>(c.gamma * x[i] + c.phi * (e_null[i] + double(w) * (e_cond[i] - e_null[i])));
        const auto e_prev = net.predict(x_prev, ts, Condition::null());
        Latent drift(4, 8, 8), est(4, 8, 8), total(4, 8, 8);
        for (std::int64_t i = 0; i < x.numel(); ++i) {
            const double inv = x_prev[i] / c.gamma - c.phi / c.gamma * e_prev[i];
            total[i] = static_cast<float>(inv - x[i]);
            drift[i] = static_cast<float>(c.phi / c.gamma * w * (double(e_cond[i]) - e_null[i]));
            est[i] = static_cast<float>(c.phi / c.gamma * (double(e_null[i]) - e_prev[i]));
        }
        CHECK(rel_inf(r.condition_drift, drift, drift) < 1e-5);
        CHECK(rel_inf(r.estimation_error, est, est) < 1e-5);
        CHECK(rel_inf(r.total, total, x) < 1e-5);
        CHECK(rel_inf(r.condition_drift + r.estimation_error, r.total, x) < 1e-5);
    }
}

TEST_CASE("trajectories are bit-identical across repeated calls") {
    const auto s = small_schedule();
    ToyDenoiser net(DenoiserArch{2, 8, 8, 8, 3}, 8);
    const auto z = random_latent({2, 8, 8}, 18);
    const auto a = sample_trajectory(z, net, Condition(1), GuidanceConfig(7.5f), s);
    const auto b = sample_trajectory(z, net, Condition(1), GuidanceConfig(7.5f), s);
    CHECK(a.final == b.final);
    CHECK(invert_trajectory(z, net, s).final == invert_trajectory(z, net, s).final);
}

TEST_CASE("negative guidance is a config error") { CHECK_THROWS_AS(GuidanceConfig(-0.5f), ConfigError); }
