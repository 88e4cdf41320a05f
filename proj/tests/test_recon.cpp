// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <numbers>

#include "albedo/errors.hpp"
#include "albedo/pulse.hpp"
#include "albedo/recon.hpp"

using namespace albedo;
using std::numbers::pi;

namespace {

OpticalField field2(double sigma, FieldPtr k0, double g = 1.0 / (2.0 * pi)) {
    OpticalField f = make_vacuum_field(2);
    f.sigma = std::make_shared<ConstantField>(sigma);
    f.k0 = std::move(k0);
    f.phase = std::make_shared<IsotropicPhase>(g);
    return f;
}

SynthesisOptions fine_synthesis(int order, double window) {
    SynthesisOptions o;
    o.order = order;
    o.window = window;
    o.panel_width = 0.02;
    return o;
}

}  // namespace

TEST_CASE("default fit window") {
    const SourcePulse p = SourcePulse::triangle(0.01, 2.5);
    const TimeGrid g = TimeGrid::covering(2.5, 0.002);
    const FitWindow w = default_fit_window(1.5, p, g, {});
    CHECK(w.lo == 0.0);
    CHECK(w.hi == doctest::Approx(0.028));
    FitOptions o;
    o.eps1 = 0.001;
    o.eps2 = 0.05;
    const FitWindow v = default_fit_window(1.5, p, g, o);
    CHECK(v.lo == 0.001);
    CHECK(v.hi == 0.05);
}

TEST_CASE("ballistic amplitude from the symbolic channel") {
    OpticalField f = field2(0.5, std::make_shared<ConstantField>(0.0));
    AcquisitionGeometry geo = AcquisitionGeometry::all_pairs(2, 8);
    geo.pairs = {{0, 4}, {1, 3}};
    const SourcePulse p = SourcePulse::triangle(0.02, 2.5);
    const TimeGrid g = TimeGrid::covering(2.5, 0.01);
    const MeasurementSet m = albedo_truncated(f, p, geo, g, fine_synthesis(0, 0.05));
    for (const auto& tr : m.traces) {
        const Chord c = chord_from_endpoints(f.domain, geo.nodes[tr.source], geo.nodes[tr.detector]);
        const BallisticEstimate e = extract_ballistic(tr, p, g, c);
        CHECK(e.symbolic);
        CHECK_FALSE(e.flagged);
        CHECK(e.t0 == doctest::Approx(c.length));
        const Vec3 v0 = c.direction;
        const double geom = dot(geo.nodes[tr.detector].position, v0) *
                            std::abs(dot(geo.nodes[tr.source].position, v0)) / c.length;
        CHECK(e.amplitude == doctest::Approx(geom * std::exp(-0.5 * c.length)).epsilon(1e-10));
    }
}

TEST_CASE("matched filter recovers binned ballistic data") {
    const SourcePulse p = SourcePulse::triangle(0.02, 2.5);
    const TimeGrid g = TimeGrid::covering(2.5, 0.005);
    AcquisitionGeometry geo = AcquisitionGeometry::all_pairs(2, 8);
    const Chord c = chord_from_endpoints(Domain(2), geo.nodes[0], geo.nodes[3]);
    const double t0 = c.length, amp = 0.37;
    PairTrace tr;
    tr.first_bin = static_cast<int>((t0 - 0.05) / g.dt);
    tr.channels.assign(1, std::vector<double>(40, 0.0));
    tr.errors.assign(1, std::vector<double>(40, 1e-4));
    for (int k = 0; k < 40; ++k) {
        const double a = g.start(tr.first_bin + k), b = a + g.dt;
        tr.channels[0][k] = amp * (p.cdf(b - t0) - p.cdf(a - t0)) / g.dt;
    }
    const BallisticEstimate e = extract_ballistic(tr, p, g, c);
    CHECK_FALSE(e.symbolic);
    CHECK_FALSE(e.flagged);
    CHECK(e.amplitude == doctest::Approx(amp).epsilon(1e-6));
    CHECK(e.t0 == doctest::Approx(t0).epsilon(1e-6));

    for (double& y : tr.channels[0]) {
        y = 0.0;
    }
    CHECK(extract_ballistic(tr, p, g, c).flagged);
}

TEST_CASE("singular fit on a synthetic model trace") {
    const SourcePulse p = SourcePulse::triangle(0.004, 2.5);
    const TimeGrid g = TimeGrid::covering(2.5, 0.001);
    const TriangularPulse tri(p.width);
    const double t0 = 1.7;
    const int first = static_cast<int>(t0 / g.dt) - 2;
    std::vector<double> y(30);
    for (int k = 0; k < 30; ++k) {
        const double a = g.start(first + k), b = a + g.dt;
        y[k] = 0.8 * tri.bin_average(Basis::power(-0.5), t0, a, b) +
               0.3 * tri.bin_average(Basis::power(0.0), t0, a, b) -
               0.2 * tri.bin_average(Basis::power(0.5), t0, a, b);
    }
    const SingularFit fit = fit_singular(y, {}, first, t0, p, g, 2, SupportMode::H2, {});
    CHECK(fit.accepted);
    CHECK(fit.coefficient == doctest::Approx(0.8).epsilon(1e-8));
    CHECK(fit.residual < 1e-10);

    const std::vector<double> zero(30, 0.0);
    const SingularFit z = fit_singular(zero, {}, first, t0, p, g, 2, SupportMode::H2, {});
    CHECK(z.accepted);
    CHECK(z.coefficient == 0.0);

    CHECK_THROWS_AS(fit_singular(y, {}, first, t0, SourcePulse::box(0.004, 2.5), g, 2,
                                 SupportMode::H2, {}),
                    ConfigError);
}

TEST_CASE("weighted transform from kernel data, n=2") {
    OpticalField f = field2(0.0, std::make_shared<ConstantField>(0.5), 1.0);
    AcquisitionGeometry geo = AcquisitionGeometry::all_pairs(2, 16);
    geo.pairs = {{0, 8}, {0, 5}};
    const SourcePulse p = SourcePulse::triangle(0.004, 2.5);
    const TimeGrid g = TimeGrid::covering(2.5, 0.001);
    const MeasurementSet m = albedo_truncated(f, p, geo, g, fine_synthesis(1, 0.03));
    FitOptions o;
    o.eps2 = 0.01;
    for (const auto& tr : m.traces) {
        SingularFit fit = extract_single_scatter_coeff(tr, m, 2, SupportMode::H2, o);
        fit.ballistic = tr.ballistic_amplitude();
        REQUIRE(fit.accepted);
        const double v = weighted_transform_from_fit(fit, 2, SupportMode::H2, 1.0);
        const LimitPrediction pred = gamma1_limit_prediction(geo.nodes[tr.source], geo.nodes[tr.detector], f);
        CHECK(v == doctest::Approx(pred.weighted_transform).epsilon(0.02));
    }
    // Diameter: P(rho 1) = pi.
    SingularFit d = extract_single_scatter_coeff(m.traces[0], m, 2, SupportMode::H2, o);
    d.ballistic = m.traces[0].ballistic_amplitude();
    CHECK(weighted_transform_from_fit(d, 2, SupportMode::H2, 1.0) == doctest::Approx(0.5 * pi).epsilon(0.02));
}

TEST_CASE("attenuation pipeline, n=2") {
    const SourcePulse p = SourcePulse::triangle(0.02, 2.5);
    const TimeGrid g = TimeGrid::covering(2.5, 0.01);
    const AcquisitionGeometry geo = AcquisitionGeometry::line_pairs(2, 64);
    ReconOptions ro;
    ro.sinogram_angles = 90;
    ro.sinogram_offsets = 128;
    ro.image_size = 64;
    ro.reconstruct_k0 = false;

    OpticalField vac = field2(0.0, std::make_shared<ConstantField>(0.0));
    const ReconReport r0 = reconstruct({albedo_truncated(vac, p, geo, g, fine_synthesis(0, 0.05))}, vac, nullptr, ro);
    REQUIRE(r0.slices.size() == 1);
    CHECK(l2_norm(r0.slices[0].sigma, 1.0) == 0.0);
    CHECK(r0.slices[0].excluded_sigma == 0);

    OpticalField f = vac;
    f.sigma = std::make_shared<SmoothBump>(Vec3{0.1, -0.1, 0.0}, 0.5, 1.0);
    const ReconReport r = reconstruct({albedo_truncated(f, p, geo, g, fine_synthesis(0, 0.05))}, vac, &f, ro);
    const SliceReconstruction& s = r.slices[0];
    CHECK(s.chords == 64 * 63 / 2);
    CHECK(s.excluded_sigma == 0);
    CHECK(s.gaps_sigma == 0);
    CHECK_FALSE(s.has_k0);
    CHECK(s.sigma_error < 0.1);
    const nlohmann::json j = r.summary();
    CHECK(j.contains("slices"));
}

TEST_CASE("great-circle slices, n=3") {
    OpticalField f = make_vacuum_field(3);
    f.sigma = std::make_shared<ConstantField>(0.5);
    f.phase = std::make_shared<IsotropicPhase>(1.0 / (4.0 * pi));
    const SourcePulse p = SourcePulse::triangle(0.02, 2.5);
    const TimeGrid g = TimeGrid::covering(2.5, 0.01);
    const Vec3 e1{1.0, 0.0, 0.0}, e2{0.0, 0.0, 1.0};
    const AcquisitionGeometry geo = AcquisitionGeometry::great_circle(48, e1, e2);
    ReconOptions ro;
    ro.sinogram_angles = 60;
    ro.sinogram_offsets = 64;
    ro.image_size = 48;
    ro.reconstruct_k0 = false;
    MeasurementSet m = albedo_truncated(f, p, geo, g, fine_synthesis(0, 0.05));
    const ReconReport r = reconstruct({m}, f, &f, ro);
    const SliceReconstruction& s = r.slices[0];
    CHECK(std::abs(dot(s.e1, Vec3{0.0, 1.0, 0.0})) < 1e-12);
    CHECK(std::abs(dot(s.e2, Vec3{0.0, 1.0, 0.0})) < 1e-12);
    CHECK(s.sigma_error < 0.1);

    m.geometry.nodes[2].position = normalized(m.geometry.nodes[2].position + Vec3{0.0, 0.2, 0.0});
    CHECK_THROWS_AS(reconstruct({m}, f, nullptr, ro), DataMismatch);
}

TEST_CASE("boundary sums, n=3 H1") {
    OpticalField f = make_vacuum_field(3);
    f.k0 = std::make_shared<ConstantField>(0.5);
    f.mode = SupportMode::H1;
    f.phase = std::make_shared<IsotropicPhase>(1.0);
    AcquisitionGeometry geo = AcquisitionGeometry::great_circle(8, {1.0, 0.0, 0.0}, {0.0, 1.0, 0.0});
    geo.pairs = {{0, 4}, {1, 5}};
    const SourcePulse p = SourcePulse::triangle(0.004, 2.5);
    const TimeGrid g = TimeGrid::covering(2.5, 0.001);
    const MeasurementSet m = albedo_truncated(f, p, geo, g, fine_synthesis(1, 0.03));
    ReconOptions ro;
    ro.fit.eps2 = 0.01;
    ro.sinogram_angles = 16;
    ro.sinogram_offsets = 16;
    ro.image_size = 16;
    const ReconReport r = reconstruct({m}, f, &f, ro);
    CHECK_FALSE(r.slices[0].has_k0);
    REQUIRE(r.boundary_sums.size() == 2);
    for (const auto& b : r.boundary_sums) {
        CHECK(b.truth == doctest::Approx(1.0));
        CHECK(b.value == doctest::Approx(1.0).epsilon(0.05));
    }
}

TEST_CASE("ballistic stability integrand") {
    OpticalField a = field2(0.0, std::make_shared<ConstantField>(0.0));
    const BoundaryPoint x0{{std::cos(0.3), std::sin(0.3), 0.0}};
    CHECK(ballistic_stability_lhs(a, a, x0) == 0.0);
    OpticalField b = a, c = a;
    b.sigma = std::make_shared<ConstantField>(1e-4);
    c.sigma = std::make_shared<ConstantField>(2e-4);
    const double l1 = ballistic_stability_lhs(a, b, x0), l2 = ballistic_stability_lhs(a, c, x0);
    CHECK(l1 > 0.0);
    CHECK(l2 / l1 == doctest::Approx(2.0).epsilon(1e-3));
}

TEST_CASE("stability report") {
    OpticalField a = field2(0.2, std::make_shared<ConstantField>(0.1));
    StabilityOptions o;
    o.boundary_nodes = 12;
    o.dt = 0.1;
    o.eta = 0.1;
    o.points = {0, 3};
    o.detector_subsamples = 2;
    o.single_scatter = false;
    const StabilityReport same = stability_report(a, a, o);
    CHECK(same.operator_norm == 0.0);
    for (const auto& pt : same.points) {
        CHECK(pt.lhs == 0.0);
        CHECK(pt.column_norm == 0.0);
    }
    OpticalField b = a;
    b.sigma = std::make_shared<ConstantField>(0.3);
    const StabilityReport r = stability_report(a, b, o);
    REQUIRE(r.points.size() == 2);
    CHECK(r.inequality_holds);
    for (const auto& pt : r.points) {
        CHECK(pt.lhs > 0.0);
        CHECK(pt.lhs <= pt.column_norm);
        CHECK(pt.column_norm <= r.operator_norm);
    }
    CHECK(r.to_json().contains("operator_norm"));
}
