#pragma once

#include <cstdint>

// Dense compute kernels behind the autograd ops. `parallel` is the OpenMP
// implementation used everywhere; `reference` is a direct serial version kept
// for cross-checking in tests and for the benchmark baseline.
namespace resetedit::kernels {

struct ConvGeometry {
    std::int64_t batch = 1;
    std::int64_t in_channels = 1;
    std::int64_t in_h = 1;
    std::int64_t in_w = 1;
    std::int64_t out_channels = 1;
    std::int64_t kernel = 1;
    std::int64_t stride = 1;
    std::int64_t pad = 0;

    std::int64_t out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
    std::int64_t out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
    std::int64_t patch() const { return in_channels * kernel * kernel; }
};

// Row-major C[M,N] (=|+=) op(A) * op(B); op(A) is [M,K], op(B) is [K,N].
// A is stored [K,M] when trans_a, B is stored [N,K] when trans_b.
namespace parallel {
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, const float* a, const float* b,
          float* c, bool accumulate);
void conv2d_forward(const ConvGeometry& g, const float* x, const float* w, const float* bias, float* y);
// Accumulates into dx, dw and dbias; any of them may be null.
void conv2d_backward(const ConvGeometry& g, const float* x, const float* w, const float* dy, float* dx, float* dw,
                     float* dbias);
}  // namespace parallel

namespace reference {
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, const float* a, const float* b,
          float* c, bool accumulate);
void conv2d_forward(const ConvGeometry& g, const float* x, const float* w, const float* bias, float* y);
void conv2d_backward(const ConvGeometry& g, const float* x, const float* w, const float* dy, float* dx, float* dw,
                     float* dbias);
}  // namespace reference

int max_threads();

}  // namespace resetedit::kernels
