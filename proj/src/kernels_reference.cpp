#include "resetedit/kernels.hpp"

#include <vector>

namespace resetedit::kernels::reference {

void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, const float* a, const float* b,
          float* c, bool accumulate) {
    for (std::int64_t i = 0; i < m; ++i) {
        for (std::int64_t j = 0; j < n; ++j) {
            double acc = accumulate ? c[i * n + j] : 0.0;
            for (std::int64_t p = 0; p < k; ++p) {
                const float av = trans_a ? a[p * m + i] : a[i * k + p];
                const float bv = trans_b ? b[j * k + p] : b[p * n + j];
                acc += static_cast<double>(av) * bv;
            }
            c[i * n + j] = static_cast<float>(acc);
        }
    }
}

void conv2d_forward(const ConvGeometry& g, const float* x, const float* w, const float* bias, float* y) {
    const auto oh = g.out_h(), ow = g.out_w();
    for (std::int64_t n = 0; n < g.batch; ++n)
        for (std::int64_t co = 0; co < g.out_channels; ++co)
            for (std::int64_t oy = 0; oy < oh; ++oy)
                for (std::int64_t ox = 0; ox < ow; ++ox) {
                    double acc = bias ? bias[co] : 0.0;
                    for (std::int64_t ci = 0; ci < g.in_channels; ++ci)
                        for (std::int64_t ky = 0; ky < g.kernel; ++ky)
                            for (std::int64_t kx = 0; kx < g.kernel; ++kx) {
                                const auto iy = oy * g.stride - g.pad + ky;
                                const auto ix = ox * g.stride - g.pad + kx;
                                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                                const float xv = x[((n * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix];
                                const float wv = w[((co * g.in_channels + ci) * g.kernel + ky) * g.kernel + kx];
                                acc += static_cast<double>(xv) * wv;
                            }
                    y[((n * g.out_channels + co) * oh + oy) * ow + ox] = static_cast<float>(acc);
                }
}

void conv2d_backward(const ConvGeometry& g, const float* x, const float* w, const float* dy, float* dx, float* dw,
                     float* dbias) {
    const auto oh = g.out_h(), ow = g.out_w();
    for (std::int64_t n = 0; n < g.batch; ++n)
        for (std::int64_t co = 0; co < g.out_channels; ++co)
            for (std::int64_t oy = 0; oy < oh; ++oy)
                for (std::int64_t ox = 0; ox < ow; ++ox) {
                    const float g_out = dy[((n * g.out_channels + co) * oh + oy) * ow + ox];
                    if (dbias) dbias[co] += g_out;
                    for (std::int64_t ci = 0; ci < g.in_channels; ++ci)
                        for (std::int64_t ky = 0; ky < g.kernel; ++ky)
                            for (std::int64_t kx = 0; kx < g.kernel; ++kx) {
                                const auto iy = oy * g.stride - g.pad + ky;
                                const auto ix = ox * g.stride - g.pad + kx;
                                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                                const auto xi = ((n * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix;
                                const auto wi = ((co * g.in_channels + ci) * g.kernel + ky) * g.kernel + kx;
                                if (dx) dx[xi] += w[wi] * g_out;
                                if (dw) dw[wi] += x[xi] * g_out;
                            }
                }
}

}  // namespace resetedit::kernels::reference
