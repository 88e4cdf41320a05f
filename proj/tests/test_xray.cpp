// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "albedo/xray.hpp"

using namespace albedo;
using std::numbers::pi;

TEST_CASE("xray transform of simple fields") {
    ConstantField one(1.0);
    CHECK(xray_transform(one, 0.3, 0.0) == doctest::Approx(2.0));
    CHECK(xray_transform(one, 1.1, 0.6) == doctest::Approx(1.6));
    CHECK(xray_transform(one, 0.0, 1.0) == 0.0);
    GaussianBlob g(Vec3{}, 0.1, 1.0);
    // integral_{-1}^{1} exp(-t^2 / 0.1) dt = sqrt(0.1 pi) erf(1 / sqrt(0.1))
    CHECK(xray_transform(g, 0.0, 0.0) ==
          doctest::Approx(std::sqrt(0.1 * pi) * std::erf(1.0 / std::sqrt(0.1))).epsilon(1e-12));
}

TEST_CASE("rho weight") {
    CHECK(rho_weight(Vec3{}, 2) == 1.0);
    CHECK(rho_weight(Vec3{std::sqrt(3.0) / 2.0, 0.0, 0.0}, 2) == doctest::Approx(2.0));
    CHECK(rho_weight(Vec3{0.0, 0.0, std::sqrt(3.0) / 2.0}, 3) == doctest::Approx(4.0));
    CHECK_THROWS(rho_weight(Vec3{1.0, 0.0, 0.0}, 2));
}

TEST_CASE("weighted transform of a constant is pi in the plane") {
    ConstantField one(1.0);
    for (double q : {0.0, 0.3, -0.7, 0.95}) {
        CHECK(weighted_xray(one, 2, line_from_angle(0.4, q)).value == doctest::Approx(pi).epsilon(1e-12));
    }
    CHECK(weighted_xray(ConstantField(0.0), 2, line_from_angle(0.4, 0.1)).value == 0.0);
    CHECK(weighted_xray(one, 3, line_from_angle(0.4, 0.1)).divergent);
}

TEST_CASE("weighted transform equals the transform of rho f") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int dim : {2, 3}) {
        for (int field = 0; field < 4; ++field) {
            const Vec3 c{0.3 * u(rng), 0.3 * u(rng), dim == 3 ? 0.3 * u(rng) : 0.0};
            auto f = std::make_shared<SmoothBump>(c, 0.45, 1.0 + 0.5 * u(rng), 3);
            RhoWeightedField rf(f, dim);
            for (int k = 0; k < 10; ++k) {
                Line line = line_from_angle(pi * (u(rng) + 1.0), 0.9 * u(rng));
                if (dim == 3) {
                    const Vec3 d = normalized(Vec3{u(rng), u(rng), u(rng)});
                    const Vec3 p = any_orthogonal(d) * (0.8 * std::abs(u(rng)));
                    line.direction = d;
                    line.midpoint = p;
                    line.half_length = std::sqrt(1.0 - norm2(p));
                }
                const auto w = weighted_xray(*f, dim, line);
                REQUIRE_FALSE(w.divergent);
                const double direct = xray_transform(rf, line);
                CHECK(std::abs(w.value - direct) <= 1e-8 * (1.0 + std::abs(w.value)));
            }
        }
    }
}

TEST_CASE("sinogram evenness and FBP of analytic phantoms") {
    BallIndicator disc(Vec3{}, 0.5, 1.0);
    CHECK(xray_transform(disc, 0.2, 0.3) ==
          doctest::Approx(xray_transform(disc, 0.2 + pi, -0.3)).epsilon(1e-12));

    ConstantField one(1.0);
    const Sinogram s1 = sample_sinogram(one, 180, 256);
    const Image r1 = fbp_invert(s1, 128);
    const Image t1 = sample_image(one, 128);
    CHECK(relative_l2_error(r1, t1, 0.8) <= 0.05);

    const Sinogram s2 = sample_sinogram(disc, 180, 256);
    const Image r2 = fbp_invert(s2, 128);
    CHECK(relative_l2_error(r2, sample_image(disc, 128), 0.9) <= 0.10);

    Sinogram zero(16, 32);
    const Image rz = fbp_invert(zero, 32);
    for (double v : rz.values) {
        CHECK(v == 0.0);
    }
    CHECK_THROWS(fbp_invert(Sinogram(7, 32), 32));
}

TEST_CASE("FBP is linear") {
    SmoothBump a(Vec3{0.2, 0.1, 0.0}, 0.4, 1.0);
    GaussianBlob b(Vec3{-0.3, 0.0, 0.0}, 0.05, 1.0);
    const Sinogram sa = sample_sinogram(a, 32, 64);
    const Sinogram sb = sample_sinogram(b, 32, 64);
    Sinogram mix(32, 64);
    for (std::size_t k = 0; k < mix.values.size(); ++k) {
        mix.values[k] = 2.0 * sa.values[k] - 0.5 * sb.values[k];
    }
    const Image ra = fbp_invert(sa, 48), rb = fbp_invert(sb, 48), rm = fbp_invert(mix, 48);
    for (std::size_t k = 0; k < rm.values.size(); ++k) {
        CHECK(std::abs(rm.values[k] - (2.0 * ra.values[k] - 0.5 * rb.values[k])) <= 1e-10);
    }
}

TEST_CASE("FBP error decreases under refinement") {
    SmoothBump f(Vec3{0.1, -0.2, 0.0}, 0.5, 1.0);
    double previous = 1e9;
    for (int level = 0; level < 3; ++level) {
        const int na = 45 << level, nq = 64 << level;
        const Image r = fbp_invert(sample_sinogram(f, na, nq), 96);
        const double err = relative_l2_error(r, sample_image(f, 96), 0.9);
        CHECK(err < previous);
        previous = err;
    }
}

TEST_CASE("rebinning from boundary pairs") {
    const int n = 360;
    Domain d2(2);
    const auto nodes = boundary_grid(d2, n);
    PairData constant(n);
    PairData sampled(n);
    SmoothBump f(Vec3{0.1, 0.2, 0.0}, 0.6, 1.0);
    for (int s = 0; s < n; ++s) {
        for (int d = 0; d < n; ++d) {
            if (s == d) {
                continue;
            }
            constant.at(s, d) = 3.0;
            const Chord c = chord_from_endpoints(d2, nodes[s], nodes[d]);
            sampled.at(s, d) = xray_transform(f, line_from_chord(c));
        }
    }
    const auto rc = boundary_pairs_to_sinogram(constant, 90, 128, 3.0);
    CHECK(rc.gaps == 0);
    for (double v : rc.sinogram.values) {
        CHECK(v == doctest::Approx(3.0));
    }
    const auto rs = boundary_pairs_to_sinogram(sampled, 90, 128);
    const Sinogram direct = sample_sinogram(f, 90, 128);
    double max_err = 0.0, max_val = 0.0;
    for (std::size_t k = 0; k < direct.values.size(); ++k) {
        max_err = std::max(max_err, std::abs(rs.sinogram.values[k] - direct.values[k]));
        max_val = std::max(max_val, std::abs(direct.values[k]));
    }
    CHECK(max_err <= 0.02 * max_val);

    // A diameter pair lands on q = 0.
    const Chord diam = chord_from_endpoints(d2, nodes[0], nodes[n / 2]);
    CHECK(std::abs(diam.offset) < 1e-12);

    PairData holes = constant;
    for (int s = 0; s < n; ++s) {
        for (int d = 0; d < n; ++d) {
            if ((s + d) % 7 == 0) {
                holes.at(s, d) = std::nan("");
            }
        }
    }
    const auto rh = boundary_pairs_to_sinogram(holes, 90, 128, 3.0);
    CHECK(rh.partial_bins > 0);
    for (double v : rh.sinogram.values) {
        CHECK(v == doctest::Approx(3.0));
    }
}
