// SPDX-License-Identifier: Apache-2.0
#include "albedo/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "albedo/quadrature.hpp"
#include "albedo/recon.hpp"
#include "albedo/xray.hpp"

namespace albedo {

namespace {

using std::numbers::pi;

class Stopwatch {
  public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

  private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(double x) {
    std::ostringstream s;
    s.precision(4);
    s << x;
    return s.str();
}

CheckResult finish(CheckResult r, const Stopwatch& w) {
    r.seconds = w.seconds();
    return r;
}

// Fine single-scattering trace of one chord and its singular fit.
SingularFit fitted_chord(const OpticalField& f, const AcquisitionGeometry& geo,
                         const AsymptoteOptions& o) {
    const SourcePulse p = SourcePulse::triangle(o.eta, 2.5);
    const TimeGrid g = TimeGrid::covering(2.5, o.dt);
    SynthesisOptions s;
    s.order = 1;
    s.window = o.eps2 + 2.0 * o.eta + 4.0 * o.dt;
    s.panel_width = 0.02;
    const MeasurementSet m = albedo_truncated(f, p, geo, g, s);
    FitOptions fo;
    fo.eps2 = o.eps2;
    return extract_single_scatter_coeff(m.traces.at(0), m, f.domain.dim(), f.mode, fo);
}

}  // namespace

nlohmann::json CheckResult::to_json() const {
    return {{"name", name},         {"passed", passed}, {"measured", measured},
            {"threshold", threshold}, {"detail", detail}, {"seconds", seconds}};
}

CheckResult check_n_kernel_closed_forms(int samples, std::uint64_t seed, double tamper) {
    Stopwatch w;
    CheckResult r;
    r.name = "n_kernel_closed_forms";
    r.threshold = 1e-6;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    for (int dim : {2, 3}) {
        for (int i = 0; i < samples; ++i) {
            const double t0 = 0.05 + 1.95 * u(rng);
            const double tau = t0 + 0.05 + (4.0 - t0 - 0.05) * u(rng);
            const double q = n_kernel(tau, t0, dim, NKernelMode::Quadrature);
            const double cf = n_kernel(tau, t0, dim, NKernelMode::ClosedForm) * (1.0 + tamper);
            worst = std::max(worst, std::abs(q - cf) / std::abs(cf));
        }
    }
    r.measured = worst;
    r.passed = worst <= r.threshold;
    r.detail = std::to_string(samples) + " (tau, t0) pairs per dimension";
    return finish(r, w);
}

CheckResult check_weighted_transform_identity(int fields, int chords, std::uint64_t seed) {
    Stopwatch w;
    CheckResult r;
    r.name = "weighted_transform_identity";
    r.threshold = 1e-8;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double worst = 0.0;
    int divergent = 0;
    for (int dim : {2, 3}) {
        for (int k = 0; k < fields; ++k) {
            const Vec3 c{0.3 * u(rng), 0.3 * u(rng), dim == 3 ? 0.3 * u(rng) : 0.0};
            auto f = std::make_shared<SmoothBump>(c, 0.45, 1.0 + 0.5 * u(rng), 3);
            const RhoWeightedField rf(f, dim);
            for (int i = 0; i < chords; ++i) {
                Line line = line_from_angle(pi * (u(rng) + 1.0), 0.9 * u(rng));
                if (dim == 3) {
                    const Vec3 d = normalized(Vec3{u(rng), u(rng), u(rng)});
                    const Vec3 p = any_orthogonal(d) * (0.8 * std::abs(u(rng)));
                    line.direction = d;
                    line.midpoint = p;
                    line.half_length = std::sqrt(1.0 - norm2(p));
                }
                const WeightedTransform t = weighted_xray(*f, dim, line);
                if (t.divergent) {
                    ++divergent;
                    continue;
                }
                const double direct = xray_transform(rf, line);
                worst = std::max(worst, std::abs(t.value - direct) / (1.0 + std::abs(t.value)));
            }
        }
    }
    r.measured = worst;
    r.passed = worst <= r.threshold && divergent == 0;
    r.detail = std::to_string(fields) + " fields x " + std::to_string(chords) + " chords per dimension";
    return finish(r, w);
}

CheckResult check_boundary_chord_identity(int dim) {
    Stopwatch w;
    CheckResult r;
    r.name = "boundary_chord_identity_n" + std::to_string(dim);
    r.threshold = 1e-3;
    const Domain domain(dim);
    const Vec3 a = normalized(Vec3{0.6, -0.3, dim == 3 ? 0.5 : 0.0});
    const Vec3 b = normalized(Vec3{-0.2, 0.9, dim == 3 ? 0.3 : 0.0});
    auto f = [&](const Vec3& x, const Vec3& v) {
        const double av = dot(a, v);
        return std::exp(0.4 * dot(x, a)) * (1.0 + 0.3 * dot(v, b) + 0.2 * av * av);
    };
    const quad::GaussRule radial = quad::gauss_legendre(dim == 2 ? 48 : 24);
    const DirectionQuadrature sph = direction_quadrature(domain, dim == 2 ? 96 : 16);
    const DirectionQuadrature vel = direction_quadrature(domain, dim == 2 ? 96 : 16);
    double volume = 0.0;
    for (std::size_t i = 0; i < radial.nodes.size(); ++i) {
        const double rr = 0.5 * (radial.nodes[i] + 1.0);
        const double wr = 0.5 * radial.weights[i] * (dim == 2 ? rr : rr * rr);
        for (std::size_t j = 0; j < sph.nodes.size(); ++j) {
            const Vec3 x = sph.nodes[j] * rr;
            double inner = 0.0;
            for (std::size_t k = 0; k < vel.nodes.size(); ++k) {
                inner += vel.weights[k] * f(x, vel.nodes[k]);
            }
            volume += wr * sph.weights[j] * inner;
        }
    }
    const DirectionQuadrature bnd = direction_quadrature(domain, dim == 2 ? 256 : 32);
    const DirectionQuadrature dirs = direction_quadrature(domain, dim == 2 ? 256 : 32);
    const quad::GaussRule along = quad::gauss_legendre(16);
    double boundary = 0.0;
    for (std::size_t i = 0; i < bnd.nodes.size(); ++i) {
        const Vec3& x = bnd.nodes[i];
        for (std::size_t k = 0; k < dirs.nodes.size(); ++k) {
            const Vec3& v = dirs.nodes[k];
            const double nv = dot(x, v);
            if (nv >= 0.0) {
                continue;
            }
            const double length = -2.0 * nv;
            double s = 0.0;
            for (std::size_t q = 0; q < along.nodes.size(); ++q) {
                const double t = 0.5 * length * (along.nodes[q] + 1.0);
                s += 0.5 * length * along.weights[q] * f(x + v * t, v);
            }
            boundary += bnd.weights[i] * dirs.weights[k] * -nv * s;
        }
    }
    r.measured = std::abs(volume - boundary) / std::abs(volume);
    r.passed = r.measured <= r.threshold;
    r.detail = "volume " + fmt(volume) + ", boundary chords " + fmt(boundary);
    return finish(r, w);
}

CheckResult check_volume_bound(int samples, std::uint64_t seed) {
    Stopwatch w;
    CheckResult r;
    r.name = "ellipsoid_volume_bound";
    r.threshold = 1.0;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    double worst = 0.0;
    for (int dim : {2, 3}) {
        for (int i = 0; i < samples; ++i) {
            const double t0 = 0.02 + 1.98 * u(rng);
            const double extra = std::pow(10.0, -3.0 + 3.0 * u(rng));
            const EllipsoidDomain e{t0 + extra, Vec3{t0, 0.0, 0.0}};
            const double mc = e.monte_carlo_volume(dim, 100000, seed + i);
            worst = std::max(worst, mc / e.volume_bound(dim));
        }
    }
    r.measured = worst;
    r.passed = worst <= r.threshold;
    r.detail = "largest Monte Carlo volume / bound";
    return finish(r, w);
}

CheckResult check_n2_asymptote(double c, const AsymptoteOptions& o) {
    Stopwatch w;
    CheckResult r;
    r.name = "n2_asymptote_pi_c";
    r.threshold = o.tolerance;
    OpticalField f = make_vacuum_field(2);
    f.k0 = std::make_shared<ConstantField>(c);
    f.phase = std::make_shared<IsotropicPhase>(1.0);
    AcquisitionGeometry geo = AcquisitionGeometry::all_pairs(2, 16);
    geo.pairs = {{0, 8}};
    const SingularFit fit = fitted_chord(f, geo, o);
    r.measured = std::abs(fit.coefficient / (pi * c) - 1.0);
    r.passed = fit.accepted && r.measured <= r.threshold;
    r.detail = "C-hat " + fmt(fit.coefficient) + " vs pi c = " + fmt(pi * c);
    return finish(r, w);
}

CheckResult check_n3_h2_limit(int chords, const AsymptoteOptions& o) {
    Stopwatch w;
    CheckResult r;
    r.name = std::string("n3_h2_limit_") + to_string(o.convention);
    r.threshold = o.tolerance;
    OpticalField f = make_vacuum_field(3);
    f.k0 = std::make_shared<ConstantField>(0.5);
    f.mode = SupportMode::H2;
    f.delta = 0.2;
    f.phase = std::make_shared<IsotropicPhase>(1.0);
    const AcquisitionGeometry circle = AcquisitionGeometry::great_circle(16, {1.0, 0.0, 0.0}, {0.0, 1.0, 0.0});
    const std::vector<std::pair<int, int>> pool = {{0, 8}, {0, 6}, {1, 7}, {2, 11}, {3, 9}, {4, 13}, {5, 10}};
    double worst = 0.0;
    bool accepted = true;
    std::ostringstream d;
    for (int i = 0; i < std::min<int>(chords, static_cast<int>(pool.size())); ++i) {
        AcquisitionGeometry geo = circle;
        geo.pairs = {pool[i]};
        const SingularFit fit = fitted_chord(f, geo, o);
        const LimitPrediction pred =
            gamma1_limit_prediction(geo.nodes[pool[i].first], geo.nodes[pool[i].second], f, o.convention);
        const double ratio = fit.coefficient / pred.coefficient;
        worst = std::max(worst, std::abs(ratio - 1.0));
        accepted = accepted && fit.accepted;
        d << (i ? ", " : "fitted/predicted: ") << fmt(ratio);
    }
    r.measured = worst;
    r.passed = accepted && worst <= r.threshold;
    r.detail = d.str();
    return finish(r, w);
}

CheckResult check_n3_h1_limit(const AsymptoteOptions& o) {
    Stopwatch w;
    CheckResult r;
    r.name = std::string("n3_h1_log_limit_") + to_string(o.convention);
    r.threshold = o.tolerance;
    OpticalField f = make_vacuum_field(3);
    f.k0 = std::make_shared<ConstantField>(0.5);
    f.mode = SupportMode::H1;
    f.phase = std::make_shared<IsotropicPhase>(1.0);
    AcquisitionGeometry geo = AcquisitionGeometry::great_circle(16, {1.0, 0.0, 0.0}, {0.0, 1.0, 0.0});
    geo.pairs = {{0, 8}};
    const SingularFit fit = fitted_chord(f, geo, o);
    const LimitPrediction pred = gamma1_limit_prediction(geo.nodes[0], geo.nodes[8], f, o.convention);
    r.measured = std::abs(fit.coefficient / pred.coefficient - 1.0);
    r.passed = fit.accepted && r.measured <= r.threshold;
    r.detail = "log coefficient " + fmt(fit.coefficient) + " vs " + fmt(pred.coefficient);
    return finish(r, w);
}

CheckResult check_weighted_sups(const BoundScanOptions& options) {
    Stopwatch w;
    CheckResult r;
    r.name = "weighted_sups_refinement";
    r.threshold = options.stability_tolerance;
    OpticalField h1 = make_vacuum_field(2);
    h1.sigma = std::make_shared<ConstantField>(0.2);
    h1.k0 = std::make_shared<ConstantField>(0.5);
    h1.phase = std::make_shared<IsotropicPhase>(1.0 / (2.0 * pi));
    h1.mode = SupportMode::H1;
    OpticalField h2 = h1;
    h2.mode = SupportMode::H2;
    h2.delta = 0.2;
    double worst = 0.0;
    bool ok = true;
    std::ostringstream d;
    for (const OpticalField* f : {&h1, &h2}) {
        const BoundScanReport rep = weighted_bound_scan(*f, options);
        ok = ok && rep.passed;
        for (const auto& e : rep.entries) {
            worst = std::max(worst, e.relative_change);
            d << to_string(f->mode) << " " << e.name << " " << fmt(e.relative_change) << "; ";
        }
    }
    r.measured = worst;
    r.passed = ok && worst <= r.threshold;
    r.detail = d.str();
    return finish(r, w);
}

nlohmann::json VerifyReport::to_json() const {
    nlohmann::json j;
    j["level"] = level;
    j["passed"] = passed;
    j["checks"] = nlohmann::json::array();
    for (const auto& c : checks) {
        j["checks"].push_back(c.to_json());
    }
    return j;
}

VerifyReport run_verification(const VerifyOptions& o) {
    VerifyReport rep;
    rep.level = o.full ? "full" : "quick";
    rep.checks.push_back(check_n_kernel_closed_forms(100, o.seed, o.tamper));
    rep.checks.push_back(check_weighted_transform_identity(o.full ? 20 : 5, o.full ? 50 : 10, o.seed));
    rep.checks.push_back(check_boundary_chord_identity(2));
    rep.checks.push_back(check_volume_bound(o.full ? 20 : 5, o.seed));
    if (o.full) {
        rep.checks.push_back(check_boundary_chord_identity(3));
        AsymptoteOptions a;
        a.convention = o.convention;
        rep.checks.push_back(check_n2_asymptote(0.5, a));
        a.tolerance = 0.03;
        rep.checks.push_back(check_n3_h2_limit(5, a));
        a.tolerance = 0.05;
        rep.checks.push_back(check_n3_h1_limit(a));
        rep.checks.push_back(check_weighted_sups({}));
    }
    for (const auto& c : rep.checks) {
        rep.passed = rep.passed && c.passed;
    }
    return rep;
}

}  // namespace albedo
