#include "resetedit/kernels.hpp"

#include <algorithm>
#include <vector>

#include <omp.h>

namespace resetedit::kernels {

int max_threads() { return omp_get_max_threads(); }

namespace {

// Serial row-major GEMM used inside already-parallel regions.
void gemm_rows(bool trans_a, bool trans_b, std::int64_t row_begin, std::int64_t row_end, std::int64_t m,
               std::int64_t n, std::int64_t k, const float* a, const float* b, float* c, bool accumulate) {
    for (std::int64_t i = row_begin; i < row_end; ++i) {
        float* crow = c + i * n;
        if (!accumulate) std::fill(crow, crow + n, 0.0f);
        if (trans_b) {
            const float* arow = trans_a ? nullptr : a + i * k;
            for (std::int64_t j = 0; j < n; ++j) {
                const float* brow = b + j * k;
                float acc = 0.0f;
                if (arow) {
#pragma omp simd reduction(+ : acc)
                    for (std::int64_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
                } else {
                    for (std::int64_t p = 0; p < k; ++p) acc += a[p * m + i] * brow[p];
                }
                crow[j] += acc;
            }
        } else {
            for (std::int64_t p = 0; p < k; ++p) {
                const float av = trans_a ? a[p * m + i] : a[i * k + p];
                if (av == 0.0f) continue;
                const float* brow = b + p * n;
#pragma omp simd
                for (std::int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
        }
    }
}

void im2col(const ConvGeometry& g, const float* x, float* cols) {
    const auto oh = g.out_h(), ow = g.out_w(), plane = oh * ow;
    for (std::int64_t ci = 0; ci < g.in_channels; ++ci)
        for (std::int64_t ky = 0; ky < g.kernel; ++ky)
            for (std::int64_t kx = 0; kx < g.kernel; ++kx) {
                float* dst = cols + ((ci * g.kernel + ky) * g.kernel + kx) * plane;
                const float* src = x + ci * g.in_h * g.in_w;
                for (std::int64_t oy = 0; oy < oh; ++oy) {
                    const auto iy = oy * g.stride - g.pad + ky;
                    float* drow = dst + oy * ow;
                    if (iy < 0 || iy >= g.in_h) {
                        std::fill(drow, drow + ow, 0.0f);
                        continue;
                    }
                    for (std::int64_t ox = 0; ox < ow; ++ox) {
                        const auto ix = ox * g.stride - g.pad + kx;
                        drow[ox] = (ix < 0 || ix >= g.in_w) ? 0.0f : src[iy * g.in_w + ix];
                    }
                }
            }
}

void col2im_add(const ConvGeometry& g, const float* cols, float* dx) {
    const auto oh = g.out_h(), ow = g.out_w(), plane = oh * ow;
    for (std::int64_t ci = 0; ci < g.in_channels; ++ci)
        for (std::int64_t ky = 0; ky < g.kernel; ++ky)
            for (std::int64_t kx = 0; kx < g.kernel; ++kx) {
                const float* src = cols + ((ci * g.kernel + ky) * g.kernel + kx) * plane;
                float* dst = dx + ci * g.in_h * g.in_w;
                for (std::int64_t oy = 0; oy < oh; ++oy) {
                    const auto iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.in_h) continue;
                    for (std::int64_t ox = 0; ox < ow; ++ox) {
                        const auto ix = ox * g.stride - g.pad + kx;
                        if (ix >= 0 && ix < g.in_w) dst[iy * g.in_w + ix] += src[oy * ow + ox];
                    }
                }
            }
}

bool is_pointwise(const ConvGeometry& g) { return g.kernel == 1 && g.stride == 1 && g.pad == 0; }

}  // namespace

namespace parallel {

void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, const float* a, const float* b,
          float* c, bool accumulate) {
#pragma omp parallel
    {
        const auto nt = omp_get_num_threads(), tid = omp_get_thread_num();
        const auto chunk = (m + nt - 1) / nt;
        const auto begin = std::min<std::int64_t>(m, tid * chunk), end = std::min<std::int64_t>(m, begin + chunk);
        gemm_rows(trans_a, trans_b, begin, end, m, n, k, a, b, c, accumulate);
    }
}

void conv2d_forward(const ConvGeometry& g, const float* x, const float* w, const float* bias, float* y) {
    const auto plane = g.out_h() * g.out_w();
    const auto in_size = g.in_channels * g.in_h * g.in_w;
    const auto out_size = g.out_channels * plane;
    const bool pointwise = is_pointwise(g);
#pragma omp parallel
    {
        std::vector<float> cols(pointwise ? 0 : static_cast<std::size_t>(g.patch() * plane));
#pragma omp for schedule(static)
        for (std::int64_t n = 0; n < g.batch; ++n) {
            const float* src = x + n * in_size;
            if (!pointwise) {
                im2col(g, src, cols.data());
                src = cols.data();
            }
            float* dst = y + n * out_size;
            gemm_rows(false, false, 0, g.out_channels, g.out_channels, plane, g.patch(), w, src, dst, false);
            if (bias)
                for (std::int64_t co = 0; co < g.out_channels; ++co) {
                    float* row = dst + co * plane;
                    for (std::int64_t p = 0; p < plane; ++p) row[p] += bias[co];
                }
        }
    }
}

void conv2d_backward(const ConvGeometry& g, const float* x, const float* w, const float* dy, float* dx, float* dw,
                     float* dbias) {
    const auto plane = g.out_h() * g.out_w();
    const auto in_size = g.in_channels * g.in_h * g.in_w;
    const auto out_size = g.out_channels * plane;
    const auto wsize = g.out_channels * g.patch();
    const bool pointwise = is_pointwise(g);
    // Per-thread partial sums, reduced in thread order so results do not
    // depend on scheduling.
    const int threads = omp_get_max_threads();
    std::vector<std::vector<float>> part_dw(static_cast<std::size_t>(threads));
    std::vector<std::vector<float>> part_db(static_cast<std::size_t>(threads));
#pragma omp parallel num_threads(threads)
    {
        const auto tid = static_cast<std::size_t>(omp_get_thread_num());
        std::vector<float> cols(static_cast<std::size_t>(g.patch() * plane));
        auto& local_dw = part_dw[tid];
        auto& local_db = part_db[tid];
        local_dw.assign(dw ? static_cast<std::size_t>(wsize) : 0, 0.0f);
        local_db.assign(dbias ? static_cast<std::size_t>(g.out_channels) : 0, 0.0f);
#pragma omp for schedule(static)
        for (std::int64_t n = 0; n < g.batch; ++n) {
            const float* gout = dy + n * out_size;
            if (dbias)
                for (std::int64_t co = 0; co < g.out_channels; ++co) {
                    float s = 0.0f;
                    for (std::int64_t p = 0; p < plane; ++p) s += gout[co * plane + p];
                    local_db[co] += s;
                }
            if (dw) {
                const float* src = x + n * in_size;
                if (!pointwise) {
                    im2col(g, src, cols.data());
                    src = cols.data();
                }
                gemm_rows(false, true, 0, g.out_channels, g.out_channels, g.patch(), plane, gout, src,
                          local_dw.data(), true);
            }
            if (dx) {
                if (pointwise) {
                    gemm_rows(true, false, 0, g.patch(), g.patch(), plane, g.out_channels, w, gout, dx + n * in_size,
                              true);
                } else {
                    gemm_rows(true, false, 0, g.patch(), g.patch(), plane, g.out_channels, w, gout, cols.data(),
                              false);
                    col2im_add(g, cols.data(), dx + n * in_size);
                }
            }
        }
    }
    for (const auto& part : part_dw)
        for (std::size_t i = 0; i < part.size(); ++i) dw[i] += part[i];
    for (const auto& part : part_db)
        for (std::size_t i = 0; i < part.size(); ++i) dbias[i] += part[i];
}

}  // namespace parallel
}  // namespace resetedit::kernels
