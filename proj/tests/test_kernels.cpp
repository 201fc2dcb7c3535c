#include <doctest.h>

#include "resetedit/kernels.hpp"
#include "support.hpp"

using namespace resetedit;
namespace kp = resetedit::kernels::parallel;
namespace kr = resetedit::kernels::reference;

namespace {

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
    auto t = testing::random_tensor({static_cast<std::int64_t>(n)}, seed);
    return std::vector<float>(t.values().begin(), t.values().end());
}

double max_rel(const std::vector<float>& a, const std::vector<float>& b) {
    double worst = 0.0, scale = 1e-6;
    for (std::size_t i = 0; i < a.size(); ++i) scale = std::max(scale, static_cast<double>(std::abs(b[i])));
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(double(a[i]) - double(b[i])) / scale);
    return worst;
}

}  // namespace

TEST_CASE("gemm: parallel matches reference for every transpose combination") {
    for (bool ta : {false, true})
        for (bool tb : {false, true})
            for (bool acc : {false, true}) {
                const std::int64_t m = 13, n = 29, k = 37;
                const auto a = random_vec(m * k, 1), b = random_vec(k * n, 2);
                auto c1 = random_vec(m * n, 3), c2 = c1;
                kp::gemm(ta, tb, m, n, k, a.data(), b.data(), c1.data(), acc);
                kr::gemm(ta, tb, m, n, k, a.data(), b.data(), c2.data(), acc);
                CAPTURE(ta);
                CAPTURE(tb);
                CAPTURE(acc);
                CHECK(max_rel(c1, c2) < 1e-5);
            }
}

TEST_CASE("conv2d: parallel forward and backward match the direct loops") {
    const kernels::ConvGeometry shapes[] = {
        {3, 5, 9, 7, 6, 3, 1, 1},
        {2, 4, 16, 16, 8, 4, 2, 1},
        {2, 12, 8, 8, 4, 1, 1, 0},
        {1, 3, 6, 6, 2, 5, 1, 2},
    };
    for (const auto& g : shapes) {
        CAPTURE(g.kernel);
        CAPTURE(g.stride);
        const auto x = random_vec(g.batch * g.in_channels * g.in_h * g.in_w, 10);
        const auto w = random_vec(g.out_channels * g.patch(), 11);
        const auto bias = random_vec(g.out_channels, 12);
        const auto out_n = g.batch * g.out_channels * g.out_h() * g.out_w();
        std::vector<float> y1(out_n), y2(out_n);
        kp::conv2d_forward(g, x.data(), w.data(), bias.data(), y1.data());
        kr::conv2d_forward(g, x.data(), w.data(), bias.data(), y2.data());
        CHECK(max_rel(y1, y2) < 1e-5);

        const auto dy = random_vec(out_n, 13);
        std::vector<float> dx1(x.size(), 0.5f), dx2 = dx1, dw1(w.size(), 0.25f), dw2 = dw1, db1(bias.size()), db2(bias.size());
        kp::conv2d_backward(g, x.data(), w.data(), dy.data(), dx1.data(), dw1.data(), db1.data());
        kr::conv2d_backward(g, x.data(), w.data(), dy.data(), dx2.data(), dw2.data(), db2.data());
        CHECK(max_rel(dx1, dx2) < 1e-5);
        CHECK(max_rel(dw1, dw2) < 1e-5);
        CHECK(max_rel(db1, db2) < 1e-5);
    }
}

TEST_CASE("conv2d backward accepts missing outputs") {
    const kernels::ConvGeometry g{2, 3, 5, 5, 4, 3, 1, 1};
    const auto x = random_vec(g.batch * g.in_channels * 25, 1);
    const auto w = random_vec(g.out_channels * g.patch(), 2);
    const auto dy = random_vec(g.batch * g.out_channels * 25, 3);
    std::vector<float> dw1(w.size()), dw2(w.size());
    kp::conv2d_backward(g, x.data(), w.data(), dy.data(), nullptr, dw1.data(), nullptr);
    kr::conv2d_backward(g, x.data(), w.data(), dy.data(), nullptr, dw2.data(), nullptr);
    CHECK(max_rel(dw1, dw2) < 1e-5);
}

TEST_CASE("parallel conv backward is bit-identical across repeated runs") {
    const kernels::ConvGeometry g{8, 6, 12, 12, 6, 3, 1, 1};
    const auto x = random_vec(g.batch * g.in_channels * 144, 4);
    const auto w = random_vec(g.out_channels * g.patch(), 5);
    const auto dy = random_vec(g.batch * g.out_channels * 144, 6);
    std::vector<float> first(w.size());
    kp::conv2d_backward(g, x.data(), w.data(), dy.data(), nullptr, first.data(), nullptr);
    for (int rep = 0; rep < 3; ++rep) {
        std::vector<float> again(w.size());
        kp::conv2d_backward(g, x.data(), w.data(), dy.data(), nullptr, again.data(), nullptr);
        CHECK(again == first);
    }
}
