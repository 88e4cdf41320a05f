// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <boost/math/quadrature/tanh_sinh.hpp>

#include <cmath>
#include <numbers>
#include <sstream>

#include "albedo/errors.hpp"
#include "albedo/parallel.hpp"
#include "albedo/quadrature.hpp"
#include "albedo/transport.hpp"

using namespace albedo;
using std::numbers::pi;

namespace {

OpticalField constant_field(double sigma, double k0) {
    OpticalField f = make_vacuum_field(2);
    f.sigma = std::make_shared<ConstantField>(sigma);
    f.k0 = std::make_shared<ConstantField>(k0);
    f.phase = std::make_shared<IsotropicPhase>(1.0 / (2.0 * pi));
    return f;
}

// Triangle of unit area on [0, eta], written out independently of the library.
double triangle(double t, double eta) {
    if (t <= 0.0 || t >= eta) {
        return 0.0;
    }
    return t < 0.5 * eta ? 4.0 * t / (eta * eta) : 4.0 * (eta - t) / (eta * eta);
}

double bin_average_oracle(double a, double b, double shift, double eta) {
    auto f = [&](double t) { return triangle(t - shift, eta); };
    double s = 0.0;
    const double k[] = {a, std::clamp(shift, a, b), std::clamp(shift + 0.5 * eta, a, b),
                        std::clamp(shift + eta, a, b), b};
    for (int i = 0; i < 4; ++i) {
        if (k[i + 1] > k[i]) {
            s += quad::composite_gauss(f, k[i], k[i + 1], 1, 4);
        }
    }
    return s / (b - a);
}

}  // namespace

TEST_CASE("source pulse and time grid") {
    const SourcePulse p = SourcePulse::triangle(0.1, 2.5);
    CHECK(p.cdf(0.05) == doctest::Approx(0.5));
    CHECK(p.cdf(0.2) == 1.0);
    CHECK(p.quantile(p.cdf(0.07)) == doctest::Approx(0.07));
    const SourcePulse b = SourcePulse::box(0.01, 2.5);
    CHECK(b.cdf(0.005) == doctest::Approx(0.5));
    CHECK(b.kinks().size() == 2);
    CHECK_THROWS_AS(SourcePulse::triangle(0.1, 1.5).validate(), ConfigError);
    CHECK_THROWS_AS(SourcePulse::triangle(0.0, 2.5).validate(), ConfigError);
    const TimeGrid g = TimeGrid::covering(2.5, 0.01);
    CHECK(g.bins == 250);
    CHECK(g.horizon() == doctest::Approx(2.5));
}

TEST_CASE("ballistic trace of the diameter is half a triangle arriving at t = 2") {
    const OpticalField f = constant_field(0.0, 0.0);
    const SourcePulse p = SourcePulse::triangle(0.1, 2.5);
    const TimeGrid g = TimeGrid::covering(2.5, 0.01);
    AcquisitionGeometry geo = AcquisitionGeometry::all_pairs(2, 16);
    geo.pairs = {{0, 8}};
    SynthesisOptions opt;
    opt.order = 0;
    const MeasurementSet m = albedo_truncated(f, p, geo, g, opt);
    const PairTrace& tr = m.traces[0];
    REQUIRE(tr.ballistic.size() == 1);
    CHECK(tr.ballistic[0].amplitude == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(tr.ballistic[0].arrival_time == doctest::Approx(2.0).epsilon(1e-12));
    for (int j = 0; j < g.bins; ++j) {
        const double expect = 0.5 * bin_average_oracle(g.start(j), g.start(j) + g.dt, 2.0, 0.1);
        CHECK(tr.channels[0][j] == doctest::Approx(expect).epsilon(1e-10).scale(1e-12));
    }
}

TEST_CASE("scattering-free synthesis has only the ballistic channel") {
    OpticalField f = constant_field(0.4, 0.0);
    const SourcePulse p = SourcePulse::triangle(0.05, 2.5);
    const TimeGrid g = TimeGrid::covering(2.5, 0.02);
    AcquisitionGeometry geo = AcquisitionGeometry::from_sources(2, 12, {0});
    SynthesisOptions opt;
    opt.order = 2;
    const MeasurementSet m = albedo_truncated(f, p, geo, g, opt);
    for (const auto& tr : m.traces) {
        double ballistic = 0.0;
        for (int k = 0; k < tr.size(); ++k) {
            CHECK(tr.channels[1][k] == 0.0);
            CHECK(tr.channels[2][k] == 0.0);
            ballistic += tr.channels[0][k] * g.dt;
        }
        CHECK(ballistic == doctest::Approx(tr.ballistic_amplitude()).epsilon(1e-12));
    }
}

TEST_CASE("single-scattering channel matches direct time integration") {
    OpticalField f = constant_field(0.2, 0.6);
    f.sigma = std::make_shared<SmoothBump>(Vec3{0.1, 0.2, 0.0}, 0.6, 0.8);
    const SourcePulse p = SourcePulse::triangle(0.05, 2.3);
    const TimeGrid g = TimeGrid::covering(2.3, 0.02);
    AcquisitionGeometry geo = AcquisitionGeometry::all_pairs(2, 10);
    geo.pairs = {{0, 5}, {1, 4}};
    SynthesisOptions opt;
    opt.order = 1;
    const MeasurementSet m = albedo_truncated(f, p, geo, g, opt);
    for (const auto& tr : m.traces) {
        const BoundaryPoint src = geo.nodes[tr.source], det = geo.nodes[tr.detector];
        const double t0 = distance(src.position, det.position);
        for (int j : {static_cast<int>(t0 / g.dt), static_cast<int>(t0 / g.dt) + 2,
                      static_cast<int>(t0 / g.dt) + 7, g.bins - 3}) {
            const double a = g.start(j), b = a + g.dt;
            // tau = t0 + r^2, integrated between the kinks of the bin weight.
            auto weight = [&](double tau) {
                return (p.cdf(b - tau) - p.cdf(a - tau)) / g.dt;
            };
            auto integrand = [&](double r) {
                const double tau = t0 + r * r;
                return 2.0 * r * gamma1_excess(r * r, src, det, f).value * weight(tau);
            };
            std::vector<double> cuts{0.0};
            for (double k : {a - 0.05, a - 0.025, a, b - 0.05, b - 0.025, b}) {
                if (k > t0) {
                    cuts.push_back(std::sqrt(k - t0));
                }
            }
            std::sort(cuts.begin(), cuts.end());
            double ref = 0.0;
            boost::math::quadrature::tanh_sinh<double> ts;
            for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
                if (cuts[i + 1] > cuts[i]) {
                    ref += ts.integrate(integrand, cuts[i], cuts[i + 1]);
                }
            }
            CAPTURE(j);
            CHECK(tr.channels[1][j] == doctest::Approx(ref).epsilon(1e-6).scale(1e-9));
        }
    }
}

TEST_CASE("windowed synthesis reproduces the full trace on its bins") {
    const OpticalField f = constant_field(0.3, 0.5);
    const SourcePulse p = SourcePulse::triangle(0.05, 2.5);
    const TimeGrid g = TimeGrid::covering(2.5, 0.01);
    AcquisitionGeometry geo = AcquisitionGeometry::all_pairs(2, 12);
    geo.pairs = {{0, 4}};
    SynthesisOptions full;
    full.order = 2;
    full.gamma2_quad = {10, 8, 10};
    SynthesisOptions win = full;
    win.window = 0.15;
    const auto a = albedo_truncated(f, p, geo, g, full).traces[0];
    const auto b = albedo_truncated(f, p, geo, g, win).traces[0];
    CHECK(b.first_bin > 0);
    CHECK(b.size() < a.size());
    for (int k = 0; k < b.size(); ++k) {
        for (int c = 0; c < 2; ++c) {
            CHECK(b.channels[c][k] == doctest::Approx(a.channels[c][b.first_bin + k]).epsilon(1e-6).scale(1e-9));
        }
    }
}

TEST_CASE("causality and monotonicity in the order") {
    const OpticalField f = constant_field(0.2, 0.5);
    const SourcePulse p = SourcePulse::triangle(0.05, 2.5);
    const TimeGrid g = TimeGrid::covering(2.5, 0.02);
    AcquisitionGeometry geo = AcquisitionGeometry::from_sources(2, 8, {3});
    SynthesisOptions o1, o2;
    o1.order = 1;
    o2.order = 2;
    o2.gamma2_quad = {10, 8, 10};
    const auto m1 = albedo_truncated(f, p, geo, g, o1);
    const auto m2 = albedo_truncated(f, p, geo, g, o2);
    for (std::size_t i = 0; i < m1.traces.size(); ++i) {
        const auto& a = m1.traces[i];
        const auto& b = m2.traces[i];
        const double t0 = distance(geo.nodes[a.source].position, geo.nodes[a.detector].position);
        for (int k = 0; k < a.size(); ++k) {
            CHECK(a.channels[1][k] >= 0.0);
            CHECK(a.total(k) >= a.channels[0][k]);
            CHECK(b.total(k) >= a.total(k) - 1e-12);
            if (g.start(k) + g.dt <= t0) {
                CHECK(a.total(k) == 0.0);
            }
        }
    }
}

TEST_CASE("ballistic flux is conserved over the boundary") {
    // With sigma = 0 and unit profiles, the amplitudes integrate over the detector circle to
    // the emitted flux integral of |nu.v| over the inward half circle, which is 2.
    const OpticalField f = constant_field(0.0, 0.0);
    const BoundaryPoint src{{1.0, 0.0, 0.0}};
    auto amp = [&](double beta) {
        return gamma0(src, {{std::cos(beta), std::sin(beta), 0.0}}, f).amplitude;
    };
    boost::math::quadrature::tanh_sinh<double> ts;
    const double total = ts.integrate(amp, 1e-6, 2.0 * pi - 1e-6);
    CHECK(total == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("Monte Carlo conserves weight and reproduces the ballistic channel") {
    const OpticalField f = constant_field(0.0, 0.0);
    const SourcePulse p = SourcePulse::triangle(0.05, 2.5);
    const TimeGrid g = TimeGrid::covering(2.5, 0.02);
    const int n = 16;
    AcquisitionGeometry geo = AcquisitionGeometry::from_sources(2, n, {0});
    McConfig mc;
    mc.particles = 200000;
    mc.seed = 7;
    const MeasurementSet m = simulate_albedo_mc(f, p, mc, geo, g);
    double exited = 0.0;
    for (const auto& tr : m.traces) {
        for (int k = 0; k < tr.size(); ++k) {
            exited += tr.total(k) * g.dt * geo.cell_measure;
        }
    }
    // Particles leaving through the source's own arc of half-width h/2 are not in any pair:
    // a cosine-law emission reaches it with probability 1 - cos(h/4).
    const double h = 2.0 * pi / n;
    const double own = 1.0 - std::cos(h / 4.0);
    const double spread = 2.0 * std::sqrt(own * (1.0 - own) / static_cast<double>(mc.particles));
    CHECK(std::abs(exited - 2.0 * (1.0 - own)) <= 4.0 * spread);

    AcquisitionGeometry kgeo = geo;
    kgeo.detector_subsamples = 16;
    SynthesisOptions o0;
    o0.order = 0;
    const MeasurementSet k = albedo_truncated(f, p, kgeo, g, o0);
    int within = 0, compared = 0;
    for (std::size_t i = 0; i < m.traces.size(); ++i) {
        for (int j = 0; j < g.bins; ++j) {
            const double kv = k.traces[i].channels[0][j];
            const double mv = m.traces[i].channels[0][j];
            const double e = m.traces[i].errors[0][j];
            if (kv == 0.0 && mv == 0.0) {
                continue;
            }
            ++compared;
            if (std::abs(mv - kv) <= 3.0 * e + 1e-12) {
                ++within;
            }
        }
    }
    CHECK(compared > 50);
    CHECK(within >= 0.95 * compared);
}

TEST_CASE("Monte Carlo single and double scattering agree with the kernels") {
    const OpticalField f = constant_field(0.3, 0.5);
    const SourcePulse p = SourcePulse::triangle(0.05, 2.5);
    const TimeGrid g = TimeGrid::covering(2.5, 0.025);
    AcquisitionGeometry geo = AcquisitionGeometry::from_sources(2, 12, {0});
    geo.pairs = {{0, 6}, {0, 3}};
    McConfig mc;
    mc.particles = 400000;
    const MeasurementSet m = simulate_albedo_mc(f, p, mc, geo, g);
    AcquisitionGeometry kgeo = geo;
    kgeo.detector_subsamples = 16;
    SynthesisOptions opt;
    opt.order = 2;
    opt.gamma2_quad = {12, 10, 12};
    const MeasurementSet k = albedo_truncated(f, p, kgeo, g, opt);
    for (int ch : {1, 2}) {
        int within = 0, compared = 0;
        for (std::size_t i = 0; i < m.traces.size(); ++i) {
            for (int j = 0; j < g.bins; ++j) {
                const double kv = k.traces[i].channels[ch][j];
                const double mv = m.traces[i].channels[ch][j];
                if (kv == 0.0 && mv == 0.0) {
                    continue;
                }
                ++compared;
                if (std::abs(mv - kv) <= 3.0 * m.traces[i].errors[ch][j]) {
                    ++within;
                }
            }
        }
        CAPTURE(ch);
        CHECK(compared > 40);
        CHECK(within >= 0.95 * compared);
    }
}

TEST_CASE("Monte Carlo standard errors scale as one over root N") {
    const OpticalField f = constant_field(0.2, 0.5);
    const SourcePulse p = SourcePulse::triangle(0.05, 2.5);
    const TimeGrid g = TimeGrid::covering(2.5, 0.05);
    AcquisitionGeometry geo = AcquisitionGeometry::from_sources(2, 8, {0});
    auto mean_error = [&](std::uint64_t n) {
        McConfig mc;
        mc.particles = n;
        mc.seed = 11;
        const auto m = simulate_albedo_mc(f, p, mc, geo, g);
        double s = 0.0;
        int c = 0;
        for (const auto& tr : m.traces) {
            for (int k = 0; k < tr.size(); ++k) {
                if (tr.errors[1][k] > 0.0) {
                    s += tr.errors[1][k];
                    ++c;
                }
            }
        }
        return s / c;
    };
    const double e1 = mean_error(50000);
    const double e2 = mean_error(100000);
    const double e4 = mean_error(200000);
    CHECK(e2 / e1 == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(0.2));
    CHECK(e4 / e1 == doctest::Approx(0.5).epsilon(0.2));
}

TEST_CASE("Monte Carlo is bitwise reproducible across thread counts") {
    OpticalField f = constant_field(0.3, 0.6);
    f.phase = std::make_shared<HenyeyGreensteinPhase>(0.5, 1.0, 2);
    const SourcePulse p = SourcePulse::triangle(0.05, 2.5);
    const TimeGrid g = TimeGrid::covering(2.5, 0.05);
    AcquisitionGeometry geo = AcquisitionGeometry::from_sources(2, 8, {0, 5});
    McConfig mc;
    mc.particles = 30000;
    mc.block_size = 1000;
    auto run = [&](int threads) {
        set_thread_count(threads);
        std::ostringstream os;
        write_measurements_csv(os, simulate_albedo_mc(f, p, mc, geo, g));
        return os.str();
    };
    const std::string a = run(1), b = run(3), c = run(8);
    set_thread_count(0);
    CHECK(a == b);
    CHECK(a == c);
    mc.seed = 2;
    CHECK(run(1) != a);
    set_thread_count(0);
}

TEST_CASE("Monte Carlo in the ball") {
    OpticalField f = make_vacuum_field(3);
    f.sigma = std::make_shared<ConstantField>(0.0);
    f.k0 = std::make_shared<ConstantField>(0.0);
    const SourcePulse p = SourcePulse::triangle(0.05, 2.5);
    const TimeGrid g = TimeGrid::covering(2.5, 0.05);
    AcquisitionGeometry geo = AcquisitionGeometry::from_sources(3, 40, {0});
    McConfig mc;
    mc.particles = 20000;
    const auto m = simulate_albedo_mc(f, p, mc, geo, g);
    double exited = 0.0;
    for (const auto& tr : m.traces) {
        for (int k = 0; k < tr.size(); ++k) {
            exited += tr.total(k) * g.dt * geo.cell_measure;
        }
    }
    // Emitted flux is pi; the source's own cell takes a small share.
    CHECK(exited <= pi * (1.0 + 1e-12));
    CHECK(exited >= 0.9 * pi);
}

TEST_CASE("Monte Carlo rejects bad configurations") {
    const OpticalField f = constant_field(0.0, 0.0);
    const SourcePulse p = SourcePulse::triangle(0.05, 2.5);
    const TimeGrid g = TimeGrid::covering(2.5, 0.05);
    AcquisitionGeometry geo = AcquisitionGeometry::from_sources(2, 8, {0});
    McConfig mc;
    mc.particles = 0;
    CHECK_THROWS_AS(simulate_albedo_mc(f, p, mc, geo, g), ConfigError);
    OpticalField bad = constant_field(-1.0, 0.0);
    mc.particles = 10;
    CHECK_THROWS_AS(simulate_albedo_mc(bad, p, mc, geo, g), ConfigError);
}

TEST_CASE("albedo matrix norms") {
    const TimeGrid g = TimeGrid::covering(2.2, 0.05);
    AcquisitionGeometry geo = AcquisitionGeometry::from_sources(2, 12, {0, 3});
    SynthesisOptions opt;
    opt.order = 1;
    opt.panel_width = 0.2;
    const OpticalField base = constant_field(0.2, 0.3);
    auto perturbed = [&](double amp) {
        OpticalField f = base;
        f.sigma = std::make_shared<SumField>(std::vector<FieldPtr>{
            std::make_shared<ConstantField>(0.2), std::make_shared<SmoothBump>(Vec3{0.2, 0.1, 0.0}, 0.5, amp)});
        return f;
    };
    const AlbedoMatrix a = albedo_matrix(base, geo, g, 0.05, opt);
    const AlbedoMatrix b = albedo_matrix(perturbed(0.1), geo, g, 0.05, opt);
    const AlbedoMatrix c = albedo_matrix(perturbed(0.05), geo, g, 0.05, opt);
    CHECK(l1_difference_norm(a, a) == 0.0);
    CHECK(l1_difference_norm(a, b) == l1_difference_norm(b, a));
    CHECK(l1_operator_norm(a) > 0.0);
    CHECK(l1_difference_norm(a, c) / l1_difference_norm(a, b) == doctest::Approx(0.5).epsilon(0.1));
    CHECK(a.entry(3, 5, 0, 0) == a.lag(0, 5, 3));
    CHECK(a.entry(3, 5, 1, 0) == a.lag(0, 5, 2));
    CHECK(a.entry(3, 5, 4, 0) == 0.0);
    CHECK(a.dense_bytes() == static_cast<std::size_t>(g.bins) * 12 * 1 * 2 * sizeof(double));
    CHECK_THROWS_AS(albedo_matrix(base, geo, g, 0.05, opt, 1000), BudgetExceeded);
}

TEST_CASE("measurement csv round trip") {
    const OpticalField f = constant_field(0.2, 0.4);
    const SourcePulse p = SourcePulse::triangle(0.05, 2.5);
    const TimeGrid g = TimeGrid::covering(2.5, 0.02);
    AcquisitionGeometry geo = AcquisitionGeometry::line_pairs(2, 6);
    SynthesisOptions opt;
    opt.order = 1;
    opt.window = 0.2;
    MeasurementSet m = albedo_truncated(f, p, geo, g, opt);
    m.config_hash = "abc";
    std::ostringstream os;
    write_measurements_csv(os, m);
    std::istringstream is(os.str());
    const MeasurementSet r = read_measurements(is, measurement_metadata(m));
    REQUIRE(r.traces.size() == m.traces.size());
    CHECK(r.config_hash == "abc");
    std::ostringstream os2;
    write_measurements_csv(os2, r);
    CHECK(os2.str() == os.str());
    std::istringstream bad("nonsense\n");
    CHECK_THROWS_AS(read_measurements(bad, measurement_metadata(m)), DataMismatch);
}
