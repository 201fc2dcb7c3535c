#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include "resetedit/denoiser.hpp"
#include "resetedit/pipeline.hpp"
#include "resetedit/tensor_io.hpp"
#include "support.hpp"

using namespace resetedit;

#ifndef RESETEDIT_GOLDEN_DIR
#define RESETEDIT_GOLDEN_DIR "tests/golden"
#endif

namespace {

/// Identity pixel codec, pass-through carrier, lossless coder and a random
/// toy denoiser on a 3x8x8 latent.
struct StubStack {
    IdentityPixelCodec pixel{Shape{3, 8, 8}};
    LosslessTableCoder coder{16, 4, 4};
    IdentityCarrier carrier;
    ToyDenoiser denoiser = conditioned_denoiser();

    // The class table starts at zero; random rows make conditions matter.
    static ToyDenoiser conditioned_denoiser() {
        ToyDenoiser net(DenoiserArch{3, 8, 8, 8, 4}, 7);
        net.params().assign("cond.table", testing::random_tensor({5, 8}, 8, 0.5f));
        return net;
    }

    Models models(std::int64_t steps = 10) const {
        return Models{&denoiser, &pixel, &coder, &carrier, NoiseSchedule::linear(steps)};
    }
};

double median_drift(const std::vector<StepNorm>& steps) {
    std::vector<double> v;
    for (const auto& s : steps) v.push_back(s.drift_rms);
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

std::string digest(const Tensor& t) { return io::sha256_hex(io::encode_tensor(t)); }

}  // namespace

TEST_CASE("metrics: worked examples") {
    CHECK(psnr_from_mse(8.47e-5) == doctest::Approx(40.72).epsilon(0.01 / 40.72));
    const auto zero = metrics(Tensor({2, 2}, 0.0f), Tensor({2, 2}, 0.5f));
    CHECK(zero.mse == 0.25);
    CHECK(zero.psnr == doctest::Approx(6.0206).epsilon(1e-5));
    const auto same = metrics(Tensor({3}, 0.3f), Tensor({3}, 0.3f));
    CHECK(same.mse == 0.0);
    CHECK(std::isinf(same.psnr));
}

TEST_CASE("snap_to_grid: idempotent, exact sums, range") {
    const Latent a = snap_to_grid(Latent(testing::random_tensor({4, 4, 4}, 1, 20.0f)));
    const Latent b = snap_to_grid(Latent(testing::random_tensor({4, 4, 4}, 2, 0.01f)));
    CHECK(snap_to_grid(a) == a);
    CHECK(max_abs(snap_to_grid(Latent(testing::random_tensor({4, 4, 4}, 1))) - Latent(testing::random_tensor({4, 4, 4}, 1))) <=
          std::ldexp(1.0f, -kLatentGridBits - 1));
    CHECK((a - b) + b == a);
    CHECK((a + b) - a == b);
    Latent big(1, 1, 1);
    big.values()[0] = 200.0f;
    CHECK_THROWS_AS(snap_to_grid(big), RangeError);
}

TEST_CASE("identity stubs: generation is a reshape of z_0 and deterministic") {
    StubStack s;
    const auto models = s.models();
    const auto r = generate_with_embedding(11, Condition(2), GuidanceConfig(2.0f), models);
    CHECK(r.z_0m == r.z_0);
    CHECK(static_cast<const Tensor&>(r.image) == static_cast<const Tensor&>(r.z_0));
    CHECK(r.z_r + r.z_0 == r.z_T);
    CHECK(r.message.size() == 64);
    CHECK(r.z_T == starting_latent(11, Shape{3, 8, 8}));

    StubStack again;
    const auto r2 = generate_with_embedding(11, Condition(2), GuidanceConfig(2.0f), again.models());
    CHECK(r2.z_0 == r.z_0);
    CHECK(r2.image == r.image);
    CHECK(r2.message == r.message);
    CHECK(r2.m_r == r.m_r);
}

TEST_CASE("identity stubs: generate -> recover -> edit is lossless") {
    StubStack s;
    const auto models = s.models();
    for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
        for (float w : {0.0f, 2.0f, 7.5f}) {
            const auto cond = Condition(static_cast<std::int64_t>(seed % 4));
            const auto r = generate_with_embedding(seed, cond, GuidanceConfig(w), models);
            const auto rec = recover_starting_latent(r.image, models, RecoveryOptions{}, &r);
            CHECK(rec.z_em == r.z_0);
            CHECK(rec.message == r.message);
            CHECK(rec.z_T_star == r.z_T);
            CHECK(rec.z_T_star - rec.z_em_opt == rec.z_er);
            CHECK(rec.diagnostics.at("bit_accuracy") == 1.0);
            CHECK(rec.diagnostics.at("mse_zT_star") == 0.0);
            const auto replay = edit(rec.z_T_star, cond, GuidanceConfig(w), models);
            CHECK(replay == s.pixel.decode(r.z_0));
        }
    }
}

TEST_CASE("compare_baseline: constant denoiser at w = 0 makes DDIM inversion exact") {
    const Shape shape{3, 8, 8};
    StubStack s;
    const ConstantPredictor constant(Latent(testing::random_tensor(shape, 21, 0.3f)));
    Models models{&constant, &s.pixel, &s.coder, &s.carrier, NoiseSchedule::linear(20)};
    const auto r = generate_with_embedding(22, Condition(1), GuidanceConfig(0.0f), models);
    const auto rep = compare_baseline(r, models, RecoveryOptions{}, GuidanceConfig(0.0f));
    REQUIRE(rep.rows.size() == 2);
    CHECK(rep.rows[0].method == "resetedit");
    CHECK(rep.rows[0].latent_mse == 0.0);
    CHECK(rep.rows[0].replay_mse == 0.0);
    CHECK(rep.rows[1].method == "ddim_inversion");
    CHECK(rep.rows[1].latent_mse < 1e-10);
    for (const auto& step : rep.steps) CHECK(step.drift_rms == 0.0);
    CHECK(rep.to_tsv().starts_with("method\tlatent_mse\treplay_mse\treplay_psnr\n"));
}

TEST_CASE("per-step drift grows with the guidance scale") {
    StubStack s;
    const auto models = s.models(20);
    std::vector<double> medians;
    for (float w : {0.0f, 2.0f, 7.5f})
        medians.push_back(median_drift(step_error_norms(starting_latent(31, Shape{3, 8, 8}), Condition(1),
                                                               GuidanceConfig(w), models)));
    CHECK(medians[0] == 0.0);
    CHECK(medians[0] < medians[1]);
    CHECK(medians[1] < medians[2]);
}

TEST_CASE("pipeline errors") {
    StubStack s;
    Models incomplete = s.models();
    incomplete.coder = nullptr;
    CHECK_THROWS_AS(generate_with_embedding(1, Condition(0), GuidanceConfig(), incomplete), ContractError);

    // A coder whose grid disagrees with the carried message length.
    LosslessTableCoder wide(16, 4, 5);
    Models mismatched = s.models();
    const auto r = generate_with_embedding(1, Condition(0), GuidanceConfig(), mismatched);
    mismatched.coder = &wide;
    CHECK_THROWS_AS(recover_starting_latent(r.image, mismatched, RecoveryOptions{}), ContractError);

    LosslessTableCoder tiny(2, 1, 1);
    tiny.compress(Latent(1, 1, 1));
    tiny.compress(Latent(1, 1, 1));
    CHECK_THROWS_AS(tiny.compress(Latent(1, 1, 1)), RangeError);
}

TEST_CASE("identity-stub pipeline matches the golden record") {
    StubStack s;
    const auto models = s.models();
    // Occupy some table entries so the carried message is not all zeros.
    for (int i = 0; i < 1234; ++i) s.coder.compress(Latent(3, 8, 8));
    const auto r = generate_with_embedding(42, Condition(3), GuidanceConfig(7.5f), models);
    const auto rec = recover_starting_latent(r.image, models, RecoveryOptions{}, &r);
    const auto replay = edit(rec.z_T_star, Condition(3), GuidanceConfig(7.5f), models);
    const auto swapped = edit(rec.z_T_star, Condition(0), GuidanceConfig(7.5f), models);

    std::ostringstream os;
    os << "message\t" << r.message.to_string() << '\n'
       << "z_T\t" << digest(r.z_T) << '\n'
       << "z_0\t" << digest(r.z_0) << '\n'
       << "image\t" << digest(r.image) << '\n'
       << "z_T_star\t" << digest(rec.z_T_star) << '\n'
       << "replay\t" << digest(replay) << '\n'
       << "swapped\t" << digest(swapped) << '\n';
    const std::filesystem::path golden = std::filesystem::path(RESETEDIT_GOLDEN_DIR) / "identity_stub_pipeline.tsv";
    if (std::getenv("RESETEDIT_UPDATE_GOLDEN")) {
        io::write_text_atomic(golden, os.str());
        MESSAGE("rewrote " << golden.string());
    }
    REQUIRE(std::filesystem::exists(golden));
    CHECK(io::read_text(golden) == os.str());
}
