#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "resetedit/denoiser.hpp"
#include "support.hpp"

using namespace resetedit;

namespace {

Latent random_latent(Shape s, std::uint64_t seed, float stddev = 1.0f) {
    return Latent(testing::random_tensor(std::move(s), seed, stddev));
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

}  // namespace

TEST_CASE("predictor kinds round-trip through their names") {
    for (auto k : {PredictorKind::toy_network, PredictorKind::linear_gaussian_oracle, PredictorKind::constant,
                   PredictorKind::zero})
        CHECK(predictor_kind_from_string(to_string(k)) == k);
    CHECK_THROWS_AS(predictor_kind_from_string("unet"), ConfigError);
}

TEST_CASE("zero predictor returns zeros") {
    const auto x = random_latent({3, 4, 4}, 1);
    const auto e = ZeroPredictor().predict(x, Timestep{500, 0.3f}, Condition(2));
    CHECK(e.shape() == x.shape());
    CHECK(max_abs(e) == 0.0);
}

TEST_CASE("oracle with vanishing variance is the point-mass posterior") {
    const auto m = random_latent({2, 3, 3}, 2);
    const LinearGaussianOracle oracle(m, Latent(2, 3, 3, 0.0f));
    const auto x = random_latent({2, 3, 3}, 3);
    const float a = 0.37f;
    const auto e = oracle.predict(x, Timestep{400, a}, Condition::null());
    for (std::int64_t i = 0; i < x.numel(); ++i)
        CHECK(e[i] == doctest::Approx((x[i] - std::sqrt(double(a)) * m[i]) / std::sqrt(1.0 - a)).epsilon(1e-6));
}

TEST_CASE("oracle matches a Monte-Carlo regression of eps on x_t") {
    // Per-coordinate least squares of eps against x_t estimates E[eps | x_t].
    const double a = 0.6;
    const double means[2] = {0.8, -0.3}, vars[2] = {0.5, 1e-6};
    const LinearGaussianOracle oracle(Latent(Tensor({1, 1, 2}, std::vector<float>{0.8f, -0.3f})),
                                      Latent(Tensor({1, 1, 2}, std::vector<float>{0.5f, 1e-6f})));
    std::mt19937_64 rng(4);
    std::normal_distribution<double> n01;
    for (int i = 0; i < 2; ++i) {
        const int samples = 200000;
        double sx = 0, se = 0, sxx = 0, sxe = 0;
        for (int k = 0; k < samples; ++k) {
            const double x0 = means[i] + std::sqrt(vars[i]) * n01(rng);
            const double eps = n01(rng);
            const double xt = std::sqrt(a) * x0 + std::sqrt(1 - a) * eps;
            sx += xt, se += eps, sxx += xt * xt, sxe += xt * eps;
        }
        const double mx = sx / samples, me = se / samples;
        const double slope = (sxe / samples - mx * me) / (sxx / samples - mx * mx);
        const double icpt = me - slope * mx;
        for (double probe : {-1.0, 0.0, 1.5}) {
            Latent x(1, 1, 2, 0.0f);
            x[i] = static_cast<float>(probe);
            const auto e = oracle.predict(x, Timestep{300, static_cast<float>(a)}, Condition::null());
            CHECK(e[i] == doctest::Approx(icpt + slope * probe).epsilon(1e-2).scale(1.0));
        }
    }
}

TEST_CASE("oracle is affine in x_t") {
    std::mt19937_64 rng(6);
    const LinearGaussianOracle oracle(random_latent({2, 4, 4}, 5), Latent(Tensor::uniform({2, 4, 4}, rng, 0.1f, 2.0f)));
    const auto x = random_latent({2, 4, 4}, 7), y = random_latent({2, 4, 4}, 8);
    const Timestep ts{250, 0.7f};
    const double a = 0.3, b = -1.2;
    Latent mix(2, 4, 4);
    for (std::int64_t i = 0; i < mix.numel(); ++i) mix[i] = static_cast<float>(a * x[i] + b * y[i]);
    const auto e_mix = oracle.predict(mix, ts, Condition::null());
    const auto e_x = oracle.predict(x, ts, Condition::null()), e_y = oracle.predict(y, ts, Condition::null());
    const auto e_0 = oracle.predict(Latent(2, 4, 4, 0.0f), ts, Condition::null());
    for (std::int64_t i = 0; i < mix.numel(); ++i) {
        // f(ax + by) = a f(x) + b f(y) + (1 - a - b) f(0) for an affine map.
        const double want = a * e_x[i] + b * e_y[i] + (1 - a - b) * e_0[i];
        CHECK(e_mix[i] == doctest::Approx(want).epsilon(1e-6).scale(std::max(1.0, std::abs(want))));
    }
}

TEST_CASE("oracle estimation error shrinks as the schedule is refined") {
    std::mt19937_64 rng(9);
    const auto m = random_latent({2, 4, 4}, 10);
    const LinearGaussianOracle oracle(m, Latent(Tensor::uniform({2, 4, 4}, rng, 0.1f, 1.0f)), {{0, m}});
    std::vector<double> coarse, fine;
    for (std::uint64_t k = 0; k < 21; ++k) {
        const auto z = random_latent({2, 4, 4}, 300 + k);
        for (std::int64_t steps : {10, 50}) {
            const auto s = NoiseSchedule::linear(steps, 1000);
            Latent x = z;
            double acc = 0.0;
            for (std::int64_t t = steps; t >= 1; --t) {
                const auto r = decompose_step_error(x, t, oracle, Condition(0), GuidanceConfig(1.0f), s);
                acc += std::sqrt(sum_squares(r.estimation_error) / r.estimation_error.numel());
                x = ddim_step(x, t, oracle, Condition(0), GuidanceConfig(1.0f), s);
            }
            (steps == 10 ? coarse : fine).push_back(acc / static_cast<double>(steps));
        }
    }
    CHECK(median(fine) < median(coarse));
}

TEST_CASE("toy network: finite and deterministic, and rejects unknown classes") {
    const ToyDenoiser net(DenoiserArch{4, 8, 16, 16, 3}, 11);
    const auto x = random_latent({4, 8, 8}, 12);
    const Timestep ts{700, 0.2f};
    const auto a = net.predict(x, ts, Condition(1));
    const auto b = net.predict(x, ts, Condition(1));
    CHECK(a.shape() == x.shape());
    CHECK(a.all_finite());
    CHECK(a == b);
    CHECK_THROWS_AS(net.predict(x, ts, Condition(3)), ContractError);
    CHECK_THROWS_AS(net.predict(random_latent({3, 8, 8}, 1), ts, Condition(1)), ContractError);
}

TEST_CASE("toy network stays under the parameter budget at default size") {
    const ToyDenoiser net(DenoiserArch{}, 0);
    CHECK(net.params().trainable_count() <= 1'000'000);
}

TEST_CASE("train_denoiser: zero steps leaves parameters unchanged; empty data is a contract error") {
    ToyDenoiser net(DenoiserArch{2, 8, 8, 8, 2}, 13);
    const auto before = net.params().clone();
    std::vector<LabeledLatent> data{{random_latent({2, 8, 8}, 14), Condition(0)}};
    DenoiserTrainingConfig cfg;
    cfg.steps = 0;
    train_denoiser(net, data, cfg);
    for (std::size_t i = 0; i < before.entries().size(); ++i)
        CHECK(before.entries()[i].var.value() == net.params().entries()[i].var.value());
    CHECK_THROWS_AS(train_denoiser(net, std::span<const LabeledLatent>{}, cfg), ContractError);
    cfg.condition_dropout = 1.5f;
    CHECK_THROWS_AS(train_denoiser(net, data, cfg), ConfigError);
}

TEST_CASE("train_denoiser: overfitting one sample halves the loss") {
    ToyDenoiser net(DenoiserArch{2, 8, 16, 16, 2}, 15);
    std::vector<LabeledLatent> data{{random_latent({2, 8, 8}, 16), Condition(1)}};
    DenoiserTrainingConfig cfg;
    cfg.steps = 500;
    cfg.batch_size = 8;
    cfg.learning_rate = 3e-3f;
    cfg.seed = 17;
    const auto rep = train_denoiser(net, data, cfg);
    CHECK(rep.loss_history.size() == 500);
    CHECK(rep.final_eval_loss <= 0.5 * rep.initial_eval_loss);
}

TEST_CASE("train_denoiser: full condition dropout makes the output ignore the class") {
    ToyDenoiser net(DenoiserArch{2, 8, 16, 16, 2}, 18);
    std::vector<LabeledLatent> data{{Latent(2, 8, 8, 1.0f), Condition(0)}, {Latent(2, 8, 8, -1.0f), Condition(1)}};
    DenoiserTrainingConfig cfg;
    cfg.steps = 300;
    cfg.batch_size = 8;
    cfg.condition_dropout = 1.0f;
    train_denoiser(net, data, cfg);
    const auto x = random_latent({2, 8, 8}, 19);
    const Timestep ts{500, 0.28f};
    CHECK(max_abs_diff(net.predict(x, ts, Condition(0)), net.predict(x, ts, Condition(1))) < 1e-3);
}
