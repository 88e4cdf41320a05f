// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <boost/math/quadrature/tanh_sinh.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "albedo/kernels.hpp"
#include "albedo/pulse.hpp"
#include "albedo/quadrature.hpp"

using namespace albedo;
using std::numbers::pi;

namespace {

OpticalField constant_field(int dim, double sigma, double k0, double phase_value) {
    OpticalField f = make_vacuum_field(dim);
    f.sigma = std::make_shared<ConstantField>(sigma);
    f.k0 = std::make_shared<ConstantField>(k0);
    f.phase = std::make_shared<IsotropicPhase>(phase_value);
    return f;
}

OpticalField textured_field(int dim) {
    OpticalField f = make_vacuum_field(dim);
    f.sigma = std::make_shared<SumField>(std::vector<FieldPtr>{
        std::make_shared<ConstantField>(0.2),
        std::make_shared<SmoothBump>(Vec3{0.2, -0.1, 0.0}, 0.5, 0.8)});
    f.k0 = std::make_shared<SumField>(std::vector<FieldPtr>{
        std::make_shared<ConstantField>(0.3),
        std::make_shared<SmoothBump>(Vec3{-0.2, 0.2, dim == 3 ? 0.1 : 0.0}, 0.6, 0.7)});
    f.phase = std::make_shared<HenyeyGreensteinPhase>(0.4, 0.9, dim);
    f.source = {0.5, 1.0};
    f.detector = {1.0, 0.5};
    return f;
}

BoundaryPoint on_circle(double a) { return {Vec3{std::cos(a), std::sin(a), 0.0}}; }

BoundaryPoint on_sphere(double theta, double phi) {
    return {Vec3{std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta)}};
}

// Integrand of the volume form: the kernel contribution of a scattering point z.
double volume_integrand(const OpticalField& f, const Vec3& xp, const Vec3& x, const Vec3& z) {
    if (norm2(z) >= 1.0) {
        return 0.0;
    }
    const Vec3 v = normalized(x - z);
    const Vec3 vp = normalized(z - xp);
    const double nv = dot(x, v);
    if (nv <= 0.0) {
        return 0.0;
    }
    return nv * f.detector.value(x, v) * attenuation_E(xp, z, f) * attenuation_E(z, x, f) *
           f.k(z, vp, v) * f.source.value(xp, vp) * std::abs(dot(xp, vp));
}

// Integral of a 1-D function over [lo, hi] split where `indicator` changes value.
template <class F, class I>
double split_integral(F&& f, I&& indicator, double lo, double hi, double rel_tol) {
    std::vector<double> cuts = {lo};
    const int scan = 2000;
    for (int i = 0; i < scan; ++i) {
        double a = lo + (hi - lo) * i / scan, b = lo + (hi - lo) * (i + 1) / scan;
        const bool ia = indicator(a);
        if (ia == indicator(b)) {
            continue;
        }
        for (int k = 0; k < 80; ++k) {
            const double m = 0.5 * (a + b);
            (indicator(m) == ia ? a : b) = m;
        }
        cuts.push_back(0.5 * (a + b));
    }
    cuts.push_back(hi);
    quad::AdaptiveOptions opt{rel_tol, 1e-16, 25};
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        s += quad::adaptive(f, cuts[i], cuts[i + 1], opt).value;
    }
    return s;
}

// gamma1 as an integral over the ellipse {|z - x'| + |x - z| = tau} in elliptic coordinates.
double oracle_n2(const OpticalField& f, const Vec3& xp, const Vec3& x, double u) {
    const double t0 = distance(x, xp);
    const double tau = t0 + u;
    const Vec3 axis = normalized(x - xp);
    const Vec3 perp{-axis.y, axis.x, 0.0};
    const Vec3 mid = (x + xp) * 0.5;
    const double a = 0.5 * t0;
    const double ch = tau / t0;
    const double sh = std::sqrt(u * (2.0 * t0 + u)) / t0;
    auto point = [&](double nu) { return mid + axis * (a * ch * std::cos(nu)) + perp * (a * sh * std::sin(nu)); };
    auto g = [&](double nu) { return volume_integrand(f, xp, x, point(nu)); };
    auto inside = [&](double nu) { return norm2(point(nu)) < 1.0; };
    return split_integral(g, inside, 0.0, 2.0 * pi, 1e-11) / (2.0 * a * sh);
}

// gamma1 as an integral over the prolate spheroid in spheroidal coordinates.
double oracle_n3(const OpticalField& f, const Vec3& xp, const Vec3& x, double u) {
    const double t0 = distance(x, xp);
    const double tau = t0 + u;
    const Vec3 axis = normalized(x - xp);
    const Vec3 e1 = any_orthogonal(axis);
    const Vec3 e2 = cross(axis, e1);
    const Vec3 mid = (x + xp) * 0.5;
    const double a = 0.5 * t0;
    const double s = tau / t0;
    const double radial = std::sqrt(u * (2.0 * t0 + u)) / t0;
    auto outer = [&](double phi) {
        const Vec3 ring = e1 * std::cos(phi) + e2 * std::sin(phi);
        auto point = [&](double c) {
            return mid + axis * (a * s * c) + ring * (a * radial * std::sqrt(std::max(0.0, 1.0 - c * c)));
        };
        auto g = [&](double c) { return 2.0 * volume_integrand(f, xp, x, point(c)) / (t0 * t0 * (s * s - c * c)); };
        auto inside = [&](double c) { return norm2(point(c)) < 1.0; };
        return split_integral(g, inside, -1.0, 1.0, 1e-10);
    };
    quad::AdaptiveOptions opt{1e-9, 1e-16, 20};
    return quad::adaptive_panels(outer, 0.0, 2.0 * pi, 4, opt).value;
}

}  // namespace

TEST_CASE("ballistic pulse") {
    OpticalField vac = constant_field(2, 0.0, 0.0, 1.0);
    const auto p = gamma0(on_circle(pi), on_circle(0.0), vac);
    CHECK(p.arrival_time == doctest::Approx(2.0));
    CHECK(p.amplitude == doctest::Approx(0.5));
    OpticalField absorbing = constant_field(2, 1.0, 0.0, 1.0);
    CHECK(gamma0(on_circle(pi), on_circle(0.0), absorbing).amplitude == doctest::Approx(std::exp(-2.0) / 2.0));
    const auto near_tangent = gamma0(on_circle(0.0), on_circle(1e-4), vac);
    CHECK(near_tangent.amplitude < 1e-4);
    CHECK_THROWS(gamma0(on_circle(0.3), on_circle(0.3), vac));
}

TEST_CASE("single scattering matches the volume-form oracle in the plane") {
    const OpticalField f = textured_field(2);
    const std::vector<std::pair<double, double>> chords = {{pi, 0.0}, {0.3, 2.5}, {1.0, 1.9}, {-2.0, 2.2}};
    for (const auto& [as, ad] : chords) {
        for (double u : {0.3, 1e-2, 1e-4}) {
            const BoundaryPoint src = on_circle(as), det = on_circle(ad);
            const double ours = gamma1_excess(u, src, det, f, {1e-11, 1e-16, 20, 8}).value;
            const double ref = oracle_n2(f, src.position, det.position, u);
            INFO("chord " << as << " -> " << ad << ", excess " << u);
            CHECK(ours == doctest::Approx(ref).epsilon(1e-7));
        }
    }
}

TEST_CASE("single scattering matches the volume-form oracle in space") {
    const OpticalField f = textured_field(3);
    const std::vector<std::pair<BoundaryPoint, BoundaryPoint>> chords = {
        {on_sphere(pi, 0.0), on_sphere(0.0, 0.0)}, {on_sphere(2.0, 0.4), on_sphere(0.7, 2.9)}};
    for (const auto& [src, det] : chords) {
        for (double u : {0.2, 1e-3}) {
            const double ours = gamma1_excess(u, src, det, f, {1e-10, 1e-16, 18, 4}).value;
            const double ref = oracle_n3(f, src.position, det.position, u);
            INFO("excess " << u);
            CHECK(ours == doctest::Approx(ref).epsilon(1e-6));
        }
    }
}

TEST_CASE("single scattering on a direction grid away from the singularity") {
    for (int dim : {2, 3}) {
        const OpticalField f = textured_field(dim);
        const BoundaryPoint src = dim == 2 ? on_circle(0.2) : on_sphere(2.0, 0.4);
        const BoundaryPoint det = dim == 2 ? on_circle(2.4) : on_sphere(0.7, 2.9);
        const double t0 = distance(src.position, det.position);
        const double tau = t0 + 0.5;
        const auto dirs = direction_quadrature(f.domain, dim == 2 ? 20000 : 400);
        const double grid = gamma1_direct(tau, src, det, f, dirs);
        const double ours = gamma1(tau, src, det, f).value;
        CHECK(grid == doctest::Approx(ours).epsilon(dim == 2 ? 1e-4 : 2e-3));
    }
}

TEST_CASE("single scattering support and homogeneity") {
    const OpticalField f = textured_field(2);
    const BoundaryPoint src = on_circle(0.4), det = on_circle(2.9);
    const double t0 = distance(src.position, det.position);
    CHECK(gamma1(t0, src, det, f).value == 0.0);
    CHECK(gamma1(t0 - 0.1, src, det, f).value == 0.0);
    CHECK(gamma1(t0 + 0.1, src, det, constant_field(2, 0.3, 0.0, 1.0)).value == 0.0);

    OpticalField scaled = f;
    scaled.k0 = std::make_shared<SumField>(std::vector<FieldPtr>{f.k0, f.k0, f.k0});
    const double a = gamma1_excess(0.05, src, det, f, {1e-12, 1e-16, 20, 8}).value;
    const double b = gamma1_excess(0.05, src, det, scaled, {1e-12, 1e-16, 20, 8}).value;
    CHECK(b == doctest::Approx(3.0 * a).epsilon(1e-10));
    CHECK(a > 0.0);
}

TEST_CASE("n=2 diameter asymptote is pi c") {
    const double c = 0.7;
    const OpticalField f = constant_field(2, 0.0, c, 1.0);
    const BoundaryPoint src = on_circle(pi), det = on_circle(0.0);
    // Fit C u^{-1/2} + b0 + b1 u^{1/2} over a window close to t0.
    const int n = 16;
    Eigen::MatrixXd A(n, 3);
    Eigen::VectorXd y(n);
    for (int i = 0; i < n; ++i) {
        const double u = 1e-6 * std::pow(1e4, double(i) / (n - 1));
        const double g = gamma1_excess(u, src, det, f).value;
        const double w = std::sqrt(u);
        A(i, 0) = 1.0;
        A(i, 1) = w;
        A(i, 2) = u;
        y(i) = w * g;
    }
    const Eigen::VectorXd coef = A.colPivHouseholderQr().solve(y);
    CHECK(coef(0) == doctest::Approx(pi * c).epsilon(1e-3));
    const auto pred = gamma1_limit_prediction(src, det, f);
    CHECK(pred.exponent == -0.5);
    CHECK(pred.coefficient == doctest::Approx(pi * c).epsilon(1e-10));
}

TEST_CASE("n=3 limit predictions under both conventions") {
    const double c = 0.4;
    OpticalField f = constant_field(3, 0.0, c, 1.0);
    const BoundaryPoint src = on_sphere(pi, 0.0), det = on_sphere(0.0, 0.0);
    const auto kc = gamma1_limit_prediction(src, det, f, LimitConvention::KernelConsistent);
    const auto pub = gamma1_limit_prediction(src, det, f, LimitConvention::Published);
    CHECK(kc.type == SingularityType::Logarithmic);
    CHECK(pub.coefficient == doctest::Approx(pi * c / 2.0));
    CHECK(kc.coefficient == doctest::Approx(pi * c));

    // The slope of gamma1 against ln(1/u) close to t0 follows the kernel.
    const double u1 = 1e-5, u2 = 1e-6;
    const double g1 = gamma1_excess(u1, src, det, f).value;
    const double g2 = gamma1_excess(u2, src, det, f).value;
    const double slope = (g2 - g1) / std::log(u1 / u2);
    CHECK(slope == doctest::Approx(kc.coefficient).epsilon(0.02));

    f.mode = SupportMode::H2;
    f.delta = 0.3;
    f.k0 = std::make_shared<ConstantField>(0.0);
    const auto zero = gamma1_limit_prediction(src, det, f);
    CHECK(zero.exponent == 0.0);
    CHECK(zero.coefficient == 0.0);
}

TEST_CASE("closed forms of the N kernel") {
    CHECK(n_kernel(2.0, 1.0, 2, NKernelMode::ClosedForm) == doctest::Approx(2.0 * pi / std::sqrt(3.0)));
    CHECK(n_kernel(2.0, 1.0, 3, NKernelMode::ClosedForm) == doctest::Approx(pi * std::log(3.0)));
    CHECK(n_kernel(1.0, 1.0, 2, NKernelMode::ClosedForm) == 0.0);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int dim : {2, 3}) {
        CHECK(n_kernel(1.5, 1.0, dim, NKernelMode::Quadrature) ==
              doctest::Approx(n_kernel(1.5, 1.0, dim, NKernelMode::ClosedForm)).epsilon(1e-6));
        for (int i = 0; i < 100; ++i) {
            const double t0 = 0.05 + 1.95 * u(rng);
            const double tau = t0 + 0.05 + (4.0 - t0 - 0.05) * u(rng);
            const double q = n_kernel(tau, t0, dim, NKernelMode::Quadrature);
            const double cf = n_kernel(tau, t0, dim, NKernelMode::ClosedForm);
            CHECK(std::abs(q - cf) <= 1e-6 * cf);
        }
    }
}

TEST_CASE("ellipsoid volume bound") {
    for (int dim : {2, 3}) {
        for (double t0 : {0.3, 1.0, 1.9}) {
            for (double extra : {1e-3, 0.1, 1.0}) {
                EllipsoidDomain e{t0 + extra, Vec3{t0, 0.0, 0.0}};
                const double mc = e.monte_carlo_volume(dim, 200000, 9);
                CHECK(mc <= e.volume_bound(dim));
                CHECK(mc == doctest::Approx(e.exact_volume(dim)).epsilon(0.02));
            }
        }
        EllipsoidDomain none{0.5, Vec3{0.6, 0.0, 0.0}};
        CHECK(none.empty());
        CHECK(none.monte_carlo_volume(dim, 1000, 1) == 0.0);
    }
}

TEST_CASE("double scattering basics") {
    const BoundaryPoint src = on_circle(pi), det = on_circle(0.0);
    OpticalField f = constant_field(2, 0.0, 0.4, 1.0 / (2.0 * pi));
    const double a = gamma2_excess(0.5, src, det, f).value;
    OpticalField half = constant_field(2, 0.0, 0.2, 1.0 / (2.0 * pi));
    const double b = gamma2_excess(0.5, src, det, half).value;
    CHECK(a > 0.0);
    CHECK(b == doctest::Approx(a / 4.0).epsilon(1e-10));
    CHECK(gamma2_excess(0.5, src, det, constant_field(2, 0.0, 0.0, 1.0)).value == 0.0);
    CHECK(gamma2_excess(-0.1, src, det, f).value == 0.0);
    // Quadrature refinement converges.
    const double coarse = gamma2_excess(0.2, src, det, f, {12, 8, 12}).value;
    const double fine = gamma2_excess(0.2, src, det, f, {48, 32, 48}).value;
    const double finer = gamma2_excess(0.2, src, det, f, {96, 64, 96}).value;
    CHECK(fine == doctest::Approx(finer).epsilon(2e-3));
    CHECK(coarse == doctest::Approx(finer).epsilon(5e-2));
    CHECK_THROWS(gamma2_excess(0.1, on_sphere(pi, 0.0), on_sphere(0.0, 0.0), constant_field(3, 0.0, 1.0, 1.0)));
}

TEST_CASE("weighted bound scan of a scattering-free field is zero") {
    OpticalField f = constant_field(2, 0.5, 0.0, 1.0);
    BoundScanOptions opt;
    opt.levels = {{8, 4, 1e-3}, {12, 4, 1e-4}};
    const auto rep = weighted_bound_scan(f, opt);
    CHECK(rep.passed);
    for (const auto& e : rep.entries) {
        for (double s : e.sups) {
            CHECK(s == 0.0);
        }
    }
}

TEST_CASE("kernel sweep csv") {
    Domain d(2);
    KernelSample s{2.5, chord_from_endpoints(d, on_circle(pi), on_circle(0.0)), "gamma1", 0.25};
    std::ostringstream os;
    write_kernel_sweep(os, {s});
    CHECK(os.str().rfind("tau,t0,q,angle_src,angle_det,term,value\n", 0) == 0);
    CHECK(os.str().find("gamma1,0.25") != std::string::npos);
}

TEST_CASE("pulse convolutions") {
    TriangularPulse p(0.1);
    CHECK(p.cdf(0.1) == 1.0);
    CHECK(p.cdf(0.05) == doctest::Approx(0.5));
    CHECK(p.quantile(p.cdf(0.03)) == doctest::Approx(0.03));
    CHECK(p.quantile(p.cdf(0.08)) == doctest::Approx(0.08));
    CHECK(p.value(0.05) == doctest::Approx(20.0));
    // Delta basis: the average of phi over a bin.
    CHECK(p.bin_average(Basis::delta(), 0.0, 0.0, 0.1) == doctest::Approx(10.0));
    CHECK(p.bin_average(Basis::delta(), 2.0, 2.02, 2.03) ==
          doctest::Approx((p.cdf(0.03) - p.cdf(0.02)) / 0.01));
    // Power and log bases against direct numerical convolution.
    for (const Basis& b : {Basis::power(-0.5), Basis::power(0.0), Basis::power(0.5), Basis::log()}) {
        for (double t : {0.02, 0.07, 0.3}) {
            auto integrand = [&](double s) {
                const double w = t - s;
                if (w <= 0.0) {
                    return 0.0;
                }
                const double basis = b.kind == BasisKind::Log ? std::log(1.0 / w) : std::pow(w, b.alpha);
                return p.value(s) * basis;
            };
            const double hi = std::min(t, 0.1);
            double ref = 0.0;
            for (auto [lo2, hi2] : {std::pair{0.0, std::min(hi, 0.05)}, std::pair{std::min(hi, 0.05), hi}}) {
                if (hi2 > lo2) {
                    boost::math::quadrature::tanh_sinh<double> ts;
                    ref += ts.integrate(integrand, lo2, hi2);
                }
            }
            CHECK(p.convolve(b, t) == doctest::Approx(ref).epsilon(1e-7));
        }
        const double avg = p.bin_average(b, 0.0, 0.03, 0.05);
        const double ref = quad::adaptive([&](double t) { return p.convolve(b, t); }, 0.03, 0.05).value / 0.02;
        CHECK(avg == doctest::Approx(ref).epsilon(1e-8));
    }
}
