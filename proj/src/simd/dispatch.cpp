// SPDX-License-Identifier: Apache-2.0
#include <atomic>
#include <cmath>

#include "albedo/simd.hpp"

namespace albedo::simd {

namespace {

bool cpu_has_avx2() {
#if defined(ALBEDO_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

std::atomic<int>& selection() {
    static std::atomic<int> isa{static_cast<int>(detected_isa())};
    return isa;
}

}  // namespace

const char* to_string(Isa isa) { return isa == Isa::Avx2 ? "avx2" : "scalar"; }

Isa detected_isa() {
    static const Isa isa = cpu_has_avx2() ? Isa::Avx2 : Isa::Scalar;
    return isa;
}

Isa active_isa() { return static_cast<Isa>(selection().load()); }

void select_isa(Isa isa) {
    if (isa == Isa::Avx2 && detected_isa() != Isa::Avx2) {
        isa = Isa::Scalar;
    }
    selection().store(static_cast<int>(isa));
}

double dot(const double* a, const double* b, std::size_t n) {
#if defined(ALBEDO_HAVE_AVX2)
    if (active_isa() == Isa::Avx2) {
        return avx2::dot(a, b, n);
    }
#endif
    return scalar::dot(a, b, n);
}

void convolve_same(const double* in, const double* kernel, double* out, std::size_t m) {
#if defined(ALBEDO_HAVE_AVX2)
    if (active_isa() == Isa::Avx2) {
        avx2::convolve_same(in, kernel, out, m);
        return;
    }
#endif
    scalar::convolve_same(in, kernel, out, m);
}

void backproject_row(const BackprojectRow& geom, const double* proj, std::size_t m, double* row,
                     std::size_t width) {
#if defined(ALBEDO_HAVE_AVX2)
    if (active_isa() == Isa::Avx2) {
        avx2::backproject_row(geom, proj, m, row, width);
        return;
    }
#endif
    scalar::backproject_row(geom, proj, m, row, width);
}

namespace scalar {

double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        s += a[i] * b[i];
    }
    return s;
}

void convolve_same(const double* in, const double* kernel, double* out, std::size_t m) {
    // The taps for output j are kernel[j + m - 1 - k], k = 0..m-1, read backwards.
    for (std::size_t j = 0; j < m; ++j) {
        double s = 0.0;
        const double* kj = kernel + j + m - 1;
        for (std::size_t k = 0; k < m; ++k) {
            s += *(kj - k) * in[k];
        }
        out[j] = s;
    }
}

void backproject_row(const BackprojectRow& g, const double* proj, std::size_t m, double* row,
                     std::size_t width) {
    const double inv_dq = 1.0 / g.dq;
    const double last = static_cast<double>(m - 1);
    for (std::size_t i = 0; i < width; ++i) {
        const double x = g.x0 + static_cast<double>(i) * g.dx;
        const double s = -x * g.sin_theta + g.y * g.cos_theta;
        const double p = (s - g.q0) * inv_dq;
        if (!(p > -1.0 && p < last + 1.0)) {
            continue;
        }
        const double fl = std::floor(p);
        const long j = static_cast<long>(fl);
        const double f = p - fl;
        const double a = j >= 0 ? proj[j] : 0.0;
        const double b = j + 1 <= static_cast<long>(m - 1) ? proj[j + 1] : 0.0;
        row[i] += g.scale * (a + f * (b - a));
    }
}

}  // namespace scalar

}  // namespace albedo::simd
