// SPDX-License-Identifier: Apache-2.0
#include <immintrin.h>

#include <cmath>
#include <vector>

#include "albedo/simd.hpp"

namespace albedo::simd::avx2 {

namespace {

double hsum(__m256d v) {
    const __m128d lo = _mm256_castpd256_pd128(v);
    const __m128d hi = _mm256_extractf128_pd(v, 1);
    const __m128d s = _mm_add_pd(lo, hi);
    return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

}  // namespace

double dot(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
        acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4), acc1);
    }
    for (; i + 4 <= n; i += 4) {
        acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    }
    double s = hsum(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) {
        s += a[i] * b[i];
    }
    return s;
}

void convolve_same(const double* in, const double* kernel, double* out, std::size_t m) {
    // Reverse the kernel once so every output is a forward dot product.
    std::vector<double> rev(2 * m - 1);
    for (std::size_t t = 0; t < rev.size(); ++t) {
        rev[t] = kernel[rev.size() - 1 - t];
    }
    for (std::size_t j = 0; j < m; ++j) {
        // kernel[j + m - 1 - k] == rev[(m - 1 - j) + k]
        out[j] = dot(rev.data() + (m - 1 - j), in, m);
    }
}

void backproject_row(const BackprojectRow& g, const double* proj, std::size_t m, double* row,
                     std::size_t width) {
    // Zero padding on both sides makes every gather index valid.
    std::vector<double> padded(m + 2, 0.0);
    for (std::size_t j = 0; j < m; ++j) {
        padded[j + 1] = proj[j];
    }
    const double inv_dq = 1.0 / g.dq;
    const __m256d vinv = _mm256_set1_pd(inv_dq);
    const __m256d vq0 = _mm256_set1_pd(g.q0);
    const __m256d vsin = _mm256_set1_pd(-g.sin_theta);
    const __m256d vycos = _mm256_set1_pd(g.y * g.cos_theta);
    const __m256d vscale = _mm256_set1_pd(g.scale);
    const __m256d vlo = _mm256_set1_pd(-1.0);
    const __m256d vhi = _mm256_set1_pd(static_cast<double>(m));
    const __m256d vone = _mm256_set1_pd(1.0);
    const __m256d lane = _mm256_set_pd(3.0, 2.0, 1.0, 0.0);
    std::size_t i = 0;
    for (; i + 4 <= width; i += 4) {
        const __m256d idx = _mm256_add_pd(_mm256_set1_pd(static_cast<double>(i)), lane);
        const __m256d x = _mm256_fmadd_pd(idx, _mm256_set1_pd(g.dx), _mm256_set1_pd(g.x0));
        const __m256d s = _mm256_fmadd_pd(x, vsin, vycos);
        const __m256d p = _mm256_mul_pd(_mm256_sub_pd(s, vq0), vinv);
        const __m256d inside =
            _mm256_and_pd(_mm256_cmp_pd(p, vlo, _CMP_GT_OQ), _mm256_cmp_pd(p, vhi, _CMP_LT_OQ));
        if (_mm256_movemask_pd(inside) == 0) {
            continue;
        }
        const __m256d pc = _mm256_blendv_pd(vlo, p, inside);
        const __m256d fl = _mm256_floor_pd(pc);
        const __m256d f = _mm256_sub_pd(pc, fl);
        const __m128i j = _mm256_cvtpd_epi32(_mm256_add_pd(fl, vone));
        const __m256d a = _mm256_i32gather_pd(padded.data(), j, 8);
        const __m256d b = _mm256_i32gather_pd(padded.data() + 1, j, 8);
        __m256d v = _mm256_fmadd_pd(f, _mm256_sub_pd(b, a), a);
        v = _mm256_and_pd(_mm256_mul_pd(v, vscale), inside);
        _mm256_storeu_pd(row + i, _mm256_add_pd(_mm256_loadu_pd(row + i), v));
    }
    if (i < width) {
        BackprojectRow tail = g;
        tail.x0 = g.x0 + static_cast<double>(i) * g.dx;
        scalar::backproject_row(tail, proj, m, row + i, width - i);
    }
}

}  // namespace albedo::simd::avx2
