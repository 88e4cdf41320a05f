// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "albedo/simd.hpp"
#include "albedo/xray.hpp"

using namespace albedo;

namespace {

std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(n);
    for (double& x : v) {
        x = u(rng);
    }
    return v;
}

}  // namespace

TEST_CASE("selected kernel variant") {
    MESSAGE("detected isa: " << simd::to_string(simd::detected_isa()));
    simd::select_isa(simd::Isa::Scalar);
    CHECK(simd::active_isa() == simd::Isa::Scalar);
    simd::select_isa(simd::detected_isa());
    CHECK(simd::active_isa() == simd::detected_isa());
}

#if defined(ALBEDO_HAVE_AVX2)
TEST_CASE("avx2 kernels match the scalar reference") {
    if (simd::detected_isa() != simd::Isa::Avx2) {
        MESSAGE("AVX2 not available on this CPU; skipping");
        return;
    }
    std::mt19937_64 rng(17);
    for (std::size_t n : {1u, 3u, 4u, 7u, 8u, 31u, 256u, 1001u}) {
        const auto a = random_vector(rng, n), b = random_vector(rng, n);
        const double s = simd::scalar::dot(a.data(), b.data(), n);
        const double v = simd::avx2::dot(a.data(), b.data(), n);
        CHECK(std::abs(s - v) <= 1e-13 * (1.0 + std::sqrt(double(n))));
    }
    for (std::size_t m : {1u, 5u, 64u, 257u}) {
        const auto in = random_vector(rng, m), kernel = random_vector(rng, 2 * m - 1);
        std::vector<double> o1(m), o2(m);
        simd::scalar::convolve_same(in.data(), kernel.data(), o1.data(), m);
        simd::avx2::convolve_same(in.data(), kernel.data(), o2.data(), m);
        for (std::size_t j = 0; j < m; ++j) {
            CHECK(std::abs(o1[j] - o2[j]) <= 1e-12 * (1.0 + std::abs(o1[j])));
        }
    }
    for (std::size_t width : {1u, 5u, 64u, 131u}) {
        const std::size_t m = 97;
        const auto proj = random_vector(rng, m);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        for (int trial = 0; trial < 20; ++trial) {
            simd::BackprojectRow g{-1.0 + 1.0 / width, 2.0 / width, u(rng), 0.0, 0.0, -1.0 + 1.0 / m,
                                   2.0 / m, 0.7};
            const double a = 3.2 * u(rng);
            g.cos_theta = std::cos(a);
            g.sin_theta = std::sin(a);
            std::vector<double> r1(width, 0.5), r2(width, 0.5);
            simd::scalar::backproject_row(g, proj.data(), m, r1.data(), width);
            simd::avx2::backproject_row(g, proj.data(), m, r2.data(), width);
            for (std::size_t i = 0; i < width; ++i) {
                CHECK(std::abs(r1[i] - r2[i]) <= 1e-12);
            }
        }
    }
}

TEST_CASE("FBP agrees across kernel variants") {
    if (simd::detected_isa() != simd::Isa::Avx2) {
        return;
    }
    SmoothBump f(Vec3{0.1, 0.2, 0.0}, 0.5, 1.0);
    const Sinogram s = sample_sinogram(f, 60, 96);
    simd::select_isa(simd::Isa::Scalar);
    const Image a = fbp_invert(s, 64);
    simd::select_isa(simd::Isa::Avx2);
    const Image b = fbp_invert(s, 64);
    for (std::size_t k = 0; k < a.values.size(); ++k) {
        CHECK(std::abs(a.values[k] - b.values[k]) <= 1e-11);
    }
}
#endif
