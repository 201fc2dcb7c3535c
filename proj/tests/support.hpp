#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "resetedit/autograd.hpp"
#include "resetedit/tensor.hpp"

namespace testing {

using resetedit::Tensor;

struct FdResult {
    double analytic = 0.0;
    double numeric = 0.0;
    double rel = 0.0;
};

// Relative error with a small denominator floor so coordinates whose true
// gradient is ~0 are judged on an absolute scale.
inline double rel_error(double a, double b, double floor = 1e-4) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Denominator floor for a gradient tensor: a tenth of its RMS. Float32
// forward passes leave ~1e-7 relative noise in every activation, which swamps
// the difference quotient of components far below the tensor's typical size.
inline double gradient_floor(const Tensor& grad) {
    double sq = 0.0;
    for (float v : grad.values()) sq += double(v) * v;
    const double rms = grad.numel() ? std::sqrt(sq / static_cast<double>(grad.numel())) : 0.0;
    return std::max(1e-4, 0.1 * rms);
}

// Central difference of `loss` with respect to element `idx` of `value`,
// Richardson-extrapolated over h and h/2 to cancel the h^2 term.
inline FdResult central_difference(Tensor& value, std::int64_t idx, double analytic,
                                   const std::function<double()>& loss, double h = 1e-2, double floor = 1e-4) {
    const float saved = value[idx];
    auto diff = [&](double step) {
        const float up_x = saved + static_cast<float>(step), down_x = saved - static_cast<float>(step);
        value[idx] = up_x;
        const double up = loss();
        value[idx] = down_x;
        const double down = loss();
        value[idx] = saved;
        return (up - down) / (static_cast<double>(up_x) - static_cast<double>(down_x));
    };
    const double coarse = diff(h), fine = diff(h / 2);
    FdResult r;
    r.analytic = analytic;
    r.numeric = (4.0 * fine - coarse) / 3.0;
    r.rel = rel_error(r.analytic, r.numeric, floor);
    return r;
}

// Derivative from a least-squares fit of the odd polynomial g*s + c3*s^3 +
// c5*s^5 to half central differences at `points` step sizes up to h. Wider
// steps and more samples average out float32 forward noise that a two-point
// Richardson estimate cannot.
inline FdResult fitted_difference(Tensor& value, std::int64_t idx, double analytic,
                                  const std::function<double()>& loss, double h, double floor = 1e-4,
                                  int points = 32) {
    const float saved = value[idx];
    double ata[3][3] = {}, aty[3] = {};
    for (int k = 1; k <= points; ++k) {
        const double step = h * k / points;
        const float up_x = saved + static_cast<float>(step), down_x = saved - static_cast<float>(step);
        value[idx] = up_x;
        const double up = loss();
        value[idx] = down_x;
        const double down = loss();
        value[idx] = saved;
        const double u = (static_cast<double>(up_x) - static_cast<double>(down_x)) / (2.0 * h);
        const double basis[3] = {u, u * u * u, u * u * u * u * u};
        const double y = 0.5 * (up - down);
        for (int i = 0; i < 3; ++i) {
            aty[i] += basis[i] * y;
            for (int j = 0; j < 3; ++j) ata[i][j] += basis[i] * basis[j];
        }
    }
    // Gaussian elimination on the 3x3 normal equations.
    for (int c = 0; c < 3; ++c)
        for (int r = c + 1; r < 3; ++r) {
            const double f = ata[r][c] / ata[c][c];
            for (int j = c; j < 3; ++j) ata[r][j] -= f * ata[c][j];
            aty[r] -= f * aty[c];
        }
    double coef[3];
    for (int r = 2; r >= 0; --r) {
        double acc = aty[r];
        for (int j = r + 1; j < 3; ++j) acc -= ata[r][j] * coef[j];
        coef[r] = acc / ata[r][r];
    }
    FdResult r;
    r.analytic = analytic;
    r.numeric = coef[0] / h;
    r.rel = rel_error(r.analytic, r.numeric, floor);
    return r;
}

inline std::vector<std::int64_t> random_coordinates(std::int64_t numel, std::size_t count, std::mt19937_64& rng) {
    std::uniform_int_distribution<std::int64_t> pick(0, numel - 1);
    std::vector<std::int64_t> out;
    for (std::size_t i = 0; i < count; ++i) out.push_back(pick(rng));
    return out;
}

inline Tensor random_tensor(resetedit::Shape shape, std::uint64_t seed, float stddev = 1.0f) {
    std::mt19937_64 rng(seed);
    return Tensor::randn(std::move(shape), rng, stddev);
}

}  // namespace testing
