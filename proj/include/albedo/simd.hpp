// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>

namespace albedo::simd {

enum class Isa { Scalar, Avx2 };

const char* to_string(Isa isa);

/// Best instruction set supported by both the build and the running CPU.
Isa detected_isa();
/// Currently selected variant (detected unless overridden).
Isa active_isa();
/// Override the selection; requesting Avx2 on an unsupported machine falls back to Scalar.
void select_isa(Isa isa);

/// Sum of a[i] * b[i].
double dot(const double* a, const double* b, std::size_t n);

/// out[j] = sum_{k} kernel[j - k + (m - 1)] * in[k], j, k in [0, m); `kernel` has 2m - 1 taps.
void convolve_same(const double* in, const double* kernel, double* out, std::size_t m);

/// Accumulates one projection into one image row. Pixel i sits at abscissa x0 + i * dx;
/// its detector coordinate s = x * (-sin) + y * cos maps to the fractional index
/// (s - q0) / dq into `proj` (m samples, linear interpolation, zero outside).
struct BackprojectRow {
    double x0;
    double dx;
    double y;
    double cos_theta;
    double sin_theta;
    double q0;
    double dq;
    double scale;
};
void backproject_row(const BackprojectRow& geom, const double* proj, std::size_t m, double* row,
                     std::size_t width);

namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
void convolve_same(const double* in, const double* kernel, double* out, std::size_t m);
void backproject_row(const BackprojectRow& geom, const double* proj, std::size_t m, double* row,
                     std::size_t width);
}  // namespace scalar

#if defined(ALBEDO_HAVE_AVX2)
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
void convolve_same(const double* in, const double* kernel, double* out, std::size_t m);
void backproject_row(const BackprojectRow& geom, const double* proj, std::size_t m, double* row,
                     std::size_t width);
}  // namespace avx2
#endif

}  // namespace albedo::simd
