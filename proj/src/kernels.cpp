// SPDX-License-Identifier: Apache-2.0
#include "albedo/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "albedo/errors.hpp"
#include "albedo/parallel.hpp"
#include "albedo/quadrature.hpp"
#include "albedo/random.hpp"
#include "albedo/xray.hpp"

namespace albedo {

using std::numbers::pi;

namespace {

struct ChordFrame {
    Vec3 x;        // detector
    Vec3 xp;       // source
    Vec3 d;        // x - xp
    double t0;
    Vec3 axis;     // d / t0
    Vec3 e1;       // completes the frame (n=2: axis rotated by +pi/2)
    Vec3 e2;       // n=3 only
};

ChordFrame make_frame(const Vec3& xp, const Vec3& x, int dim) {
    ChordFrame f;
    f.x = x;
    f.xp = xp;
    f.d = x - xp;
    f.t0 = norm(f.d);
    if (f.t0 < 1e-14) {
        throw std::invalid_argument("kernel evaluation needs distinct boundary points");
    }
    f.axis = f.d * (1.0 / f.t0);
    if (dim == 2) {
        f.e1 = {-f.axis.y, f.axis.x, 0.0};
    } else {
        f.e1 = any_orthogonal(f.axis);
        f.e2 = cross(f.axis, f.e1);
    }
    return f;
}

// Tangent map theta = 2 atan(kappa tan phi): returns cos, sin, 1 - cos and d theta / d phi.
struct AngleMap {
    double cos_theta;
    double sin_theta;
    double one_minus_cos;
    double jacobian;
};

AngleMap tangent_map(double phi, double kappa) {
    const double c = std::cos(phi), s = std::sin(phi);
    const double den = c * c + kappa * kappa * s * s;
    const double root = std::sqrt(den);
    const double half_sin = kappa * s / root;
    const double half_cos = c / root;
    AngleMap m;
    m.one_minus_cos = 2.0 * half_sin * half_sin;
    m.cos_theta = 1.0 - m.one_minus_cos;
    m.sin_theta = 2.0 * half_sin * half_cos;
    m.jacobian = 2.0 * kappa / den;
    return m;
}

double attenuation_exponent(const OpticalField& field, const Vec3& a, const Vec3& b) {
    return field.sigma_line_integral(a, b);
}

// Last-flight contribution: the particle leaves `origin` with an angular weight given by
// `emission(v1)`, scatters at z = x - s v and exits at x in direction v.
// `excess` is tau - |x - origin|, `one_minus_cos` is 1 - v.(x - origin)/|x - origin|.
template <class Emission>
double last_flight(const OpticalField& field, const Vec3& x, const Vec3& origin, double t_origin,
                   double excess, const Vec3& v, double one_minus_cos, Emission&& emission) {
    const double nv = dot(x, v);
    if (nv <= 0.0) {
        return 0.0;
    }
    const double s = excess * (2.0 * t_origin + excess) /
                     (2.0 * (excess + t_origin * one_minus_cos));
    if (s >= 2.0 * nv) {
        return 0.0;
    }
    const Vec3 z = x - v * s;
    const double k0z = field.k0_at(z);
    if (k0z == 0.0) {
        return 0.0;
    }
    Vec3 v1 = z - origin;
    const double r = norm(v1);
    if (r == 0.0) {
        return 0.0;
    }
    v1 *= 1.0 / r;
    const double em = emission(v1);
    if (em == 0.0) {
        return 0.0;
    }
    const double g = field.phase->value(v1, v);
    const double w = field.detector.value(x, v) * nv;
    const double e = std::exp(-(attenuation_exponent(field, origin, z) + attenuation_exponent(field, z, x)));
    return w * em * g * k0z * e;
}

std::vector<double> uniform_points(double lo, double hi, int panels) {
    std::vector<double> pts;
    for (int p = 0; p <= panels; ++p) {
        pts.push_back(lo + (hi - lo) * p / panels);
    }
    return pts;
}

// Sorted `base` refined by every parameter at which the scatter point crosses the unit sphere
// or a discontinuity sphere of k0. Each base interval is scanned at `scan` points.
template <class Point>
std::vector<double> crossing_breakpoints(Point&& point, std::vector<double> base, int scan,
                                         const std::vector<SupportSphere>& spheres) {
    std::vector<double> pts = base;
    auto level = [&](double t, const SupportSphere& sph) {
        const Vec3 z = point(t);
        return norm2(z - sph.centre) - sph.radius * sph.radius;
    };
    std::vector<double> grid;
    for (std::size_t k = 0; k + 1 < base.size(); ++k) {
        for (int i = 0; i < scan; ++i) {
            grid.push_back(base[k] + (base[k + 1] - base[k]) * i / scan);
        }
    }
    grid.push_back(base.back());
    const int n_grid = static_cast<int>(grid.size()) - 1;
    for (const auto& sph : spheres) {
        double prev = level(grid[0], sph);
        for (int i = 1; i <= n_grid; ++i) {
            const double cur = level(grid[i], sph);
            if ((prev < 0.0) != (cur < 0.0)) {
                double a = grid[i - 1], b = grid[i];
                const bool a_neg = prev < 0.0;
                for (int it = 0; it < 60; ++it) {
                    const double m = 0.5 * (a + b);
                    if ((level(m, sph) < 0.0) == a_neg) {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                pts.push_back(0.5 * (a + b));
            }
            prev = cur;
        }
    }
    std::sort(pts.begin(), pts.end());
    return pts;
}

std::vector<SupportSphere> integrand_spheres(const OpticalField& field) {
    std::vector<SupportSphere> s = field.scattering_discontinuities();
    s.push_back({Vec3{}, 1.0});
    return s;
}

KernelValue gamma1_n2(const ChordFrame& f, double u, const OpticalField& field,
                      const KernelQuadrature& q) {
    const double t0 = f.t0;
    const double kappa = std::sqrt(u / (2.0 * t0 + u));
    auto emission = [&](const Vec3& v1) {
        return field.source.value(f.xp, v1) * std::abs(dot(f.xp, v1));
    };
    auto integrand = [&](double phi) {
        const AngleMap m = tangent_map(phi, kappa);
        const Vec3 v = f.axis * m.cos_theta + f.e1 * m.sin_theta;
        return last_flight(field, f.x, f.xp, t0, u, v, m.one_minus_cos, emission);
    };
    auto point = [&](double phi) {
        const AngleMap m = tangent_map(phi, kappa);
        const Vec3 v = f.axis * m.cos_theta + f.e1 * m.sin_theta;
        const double s = u * (2.0 * t0 + u) / (2.0 * (u + t0 * m.one_minus_cos));
        return f.x - v * s;
    };
    quad::AdaptiveOptions opt{q.rel_tol, q.abs_tol, q.max_depth};
    // Layers of width ~kappa: phi = 0 (scatter point near the source) and phi = +-pi/2
    // (backscatter near the detector).
    std::vector<double> base = uniform_points(-0.5 * pi, 0.5 * pi, 2 * q.panels);
    for (double m = 1.0 / 64.0; m <= 64.0; m *= 4.0) {
        const double far = std::atan(m / kappa);
        const double near = std::atan(m * kappa);
        if (0.5 * pi - far < 0.2) {
            base.push_back(far);
            base.push_back(-far);
        }
        if (near < 0.2) {
            base.push_back(near);
            base.push_back(-near);
        }
    }
    std::sort(base.begin(), base.end());
    const auto pts = crossing_breakpoints(point, base, 12, integrand_spheres(field));
    const auto r = quad::adaptive_breakpoints(integrand, pts, opt);
    const double scale = 2.0 / std::sqrt(u * (2.0 * t0 + u));
    return {scale * r.value, scale * r.error, r.converged};
}

KernelValue gamma1_n3(const ChordFrame& f, double u, const OpticalField& field,
                      const KernelQuadrature& q) {
    const double t0 = f.t0;
    const double tau = t0 + u;
    const double lo = 2.0 * std::log(u);
    const double hi = 2.0 * std::log(2.0 * t0 + u);
    auto emission = [&](const Vec3& v1) {
        return field.source.value(f.xp, v1) * std::abs(dot(f.xp, v1));
    };
    quad::AdaptiveOptions inner_opt{q.rel_tol, q.abs_tol, q.max_depth};
    quad::AdaptiveOptions outer_opt{q.rel_tol * 10.0, q.abs_tol, q.max_depth};
    const auto spheres = integrand_spheres(field);
    double inner_error = 0.0;
    bool inner_converged = true;
    auto outer = [&](double psi) {
        const Vec3 ring = f.e1 * std::cos(psi) + f.e2 * std::sin(psi);
        // xi = ln |d - tau v|^2 = ln(tau^2 + t0^2 - 2 tau t0 cos theta)
        auto direction = [&](double xi, double& omc) {
            omc = std::clamp((std::exp(xi) - u * u) / (2.0 * tau * t0), 0.0, 2.0);
            const double c = 1.0 - omc;
            const double s = std::sqrt(std::max(0.0, omc * (2.0 - omc)));
            return f.axis * c + ring * s;
        };
        auto inner = [&](double xi) {
            double omc;
            const Vec3 v = direction(xi, omc);
            return last_flight(field, f.x, f.xp, t0, u, v, omc, emission);
        };
        auto point = [&](double xi) {
            double omc;
            const Vec3 v = direction(xi, omc);
            const double s = u * (2.0 * t0 + u) / (2.0 * (u + t0 * omc));
            return f.x - v * s;
        };
        const auto pts = crossing_breakpoints(point, uniform_points(lo, hi, q.panels), 96 / q.panels + 1, spheres);
        const auto r = quad::adaptive_breakpoints(inner, pts, inner_opt);
        inner_error = std::max(inner_error, r.error);
        inner_converged = inner_converged && r.converged;
        return r.value;
    };
    const auto r = quad::adaptive_panels(outer, 0.0, 2.0 * pi, q.panels, outer_opt);
    const double scale = 1.0 / (tau * t0);
    return {scale * r.value, scale * (r.error + 2.0 * pi * inner_error),
            r.converged && inner_converged};
}

}  // namespace

BallisticPulse gamma0(const BoundaryPoint& source, const BoundaryPoint& detector,
                      const OpticalField& field) {
    const Vec3& x = detector.position;
    const Vec3& xp = source.position;
    const Vec3 d = x - xp;
    const double t0 = norm(d);
    if (t0 < 1e-14) {
        throw std::invalid_argument("gamma0: coincident boundary points");
    }
    const Vec3 v0 = d * (1.0 / t0);
    const double nv = std::max(0.0, dot(x, v0));
    const double npv = std::abs(dot(xp, v0));
    const double geom = field.detector.value(x, v0) * field.source.value(xp, v0) * nv * npv;
    const double spread = field.domain.dim() == 2 ? t0 : t0 * t0;
    BallisticPulse p;
    p.arrival_time = t0;
    p.amplitude = geom == 0.0 ? 0.0 : attenuation_E(x, xp, field) * geom / spread;
    return p;
}

KernelValue gamma1_excess(double excess, const BoundaryPoint& source,
                          const BoundaryPoint& detector, const OpticalField& field,
                          const KernelQuadrature& quad) {
    if (!(excess > 0.0)) {
        return {};
    }
    const int dim = field.domain.dim();
    const ChordFrame f = make_frame(source.position, detector.position, dim);
    if (field.scattering_free()) {
        return {};
    }
    return dim == 2 ? gamma1_n2(f, excess, field, quad) : gamma1_n3(f, excess, field, quad);
}

KernelValue gamma1(double tau, const BoundaryPoint& source, const BoundaryPoint& detector,
                   const OpticalField& field, const KernelQuadrature& quad) {
    const double t0 = distance(source.position, detector.position);
    return gamma1_excess(tau - t0, source, detector, field, quad);
}

double gamma1_direct(double tau, const BoundaryPoint& source, const BoundaryPoint& detector,
                     const OpticalField& field, const DirectionQuadrature& directions) {
    const int dim = field.domain.dim();
    const ChordFrame f = make_frame(source.position, detector.position, dim);
    const double u = tau - f.t0;
    if (!(u > 0.0)) {
        return 0.0;
    }
    auto emission = [&](const Vec3& v1) {
        return field.source.value(f.xp, v1) * std::abs(dot(f.xp, v1));
    };
    double sum = 0.0;
    for (std::size_t i = 0; i < directions.nodes.size(); ++i) {
        const Vec3& v = directions.nodes[i];
        const double omc = 1.0 - dot(f.axis, v);
        const double integrand = last_flight(field, f.x, f.xp, f.t0, u, v, omc, emission);
        if (integrand == 0.0) {
            continue;
        }
        const double lever = tau - dot(f.d, v);
        const double factor = dim == 2 ? 1.0 / lever : 2.0 / norm2(f.d - v * tau);
        sum += directions.weights[i] * integrand * factor;
    }
    return sum;
}

KernelValue gamma2_excess(double excess, const BoundaryPoint& source,
                          const BoundaryPoint& detector, const OpticalField& field,
                          const Gamma2Quadrature& quad) {
    if (field.domain.dim() != 2) {
        throw std::invalid_argument("gamma2 is available for n=2 only");
    }
    if (!(excess > 0.0)) {
        return {};
    }
    const ChordFrame f = make_frame(source.position, detector.position, 2);
    if (field.scattering_free()) {
        return {};
    }
    const double u = excess;
    const double t0 = f.t0;
    const double tau = t0 + u;
    const double kappa = std::sqrt(u / (2.0 * t0 + u));
    const quad::GaussRule rd = quad::gauss_legendre(quad.direction_nodes);
    const quad::GaussRule rr = quad::gauss_legendre(quad.radial_nodes);
    const quad::GaussRule ri = quad::gauss_legendre(quad.inner_nodes);
    double total = 0.0;
    for (std::size_t a = 0; a < rd.nodes.size(); ++a) {
        const double phi = 0.5 * pi * rd.nodes[a];
        const AngleMap m = tangent_map(phi, kappa);
        const Vec3 omega = f.axis * m.cos_theta + f.e1 * m.sin_theta;
        const double inward = -dot(f.xp, omega);
        if (inward <= 0.0) {
            continue;
        }
        const double source_weight = field.source.value(f.xp, omega) * inward;
        if (source_weight == 0.0) {
            continue;
        }
        const double r_ellipse = u * (2.0 * t0 + u) / (2.0 * (u + t0 * m.one_minus_cos));
        const double reach = std::min(r_ellipse, 2.0 * inward);
        const double w_dir = 0.5 * pi * rd.weights[a] * m.jacobian;
        double radial_sum = 0.0;
        for (std::size_t b = 0; b < rr.nodes.size(); ++b) {
            const double w = 0.5 * (rr.nodes[b] + 1.0);
            const double r = reach * (1.0 - w * w);
            const double jr = 2.0 * reach * w * 0.5 * rr.weights[b];
            const Vec3 z1 = f.xp + omega * r;
            const double k0z1 = field.k0_at(z1);
            if (k0z1 == 0.0) {
                continue;
            }
            const Vec3 d1 = f.x - z1;
            const double t1 = norm(d1);
            const double u1 = tau - r - t1;
            if (!(u1 > 0.0) || t1 < 1e-14) {
                continue;
            }
            const Vec3 axis1 = d1 * (1.0 / t1);
            const Vec3 perp1{-axis1.y, axis1.x, 0.0};
            const double kappa1 = std::sqrt(u1 / (2.0 * t1 + u1));
            auto emission = [&](const Vec3& v1) { return field.phase->value(omega, v1); };
            double inner = 0.0;
            for (std::size_t c = 0; c < ri.nodes.size(); ++c) {
                const AngleMap mi = tangent_map(0.5 * pi * ri.nodes[c], kappa1);
                const Vec3 v = axis1 * mi.cos_theta + perp1 * mi.sin_theta;
                inner += 0.5 * pi * ri.weights[c] *
                         last_flight(field, f.x, z1, t1, u1, v, mi.one_minus_cos, emission);
            }
            if (inner == 0.0) {
                continue;
            }
            inner *= 2.0 / std::sqrt(u1 * (2.0 * t1 + u1));
            const double e1 = std::exp(-attenuation_exponent(field, f.xp, z1));
            radial_sum += jr * e1 * k0z1 * inner;
        }
        total += w_dir * source_weight * radial_sum;
    }
    KernelValue out;
    out.value = total;
    return out;
}

KernelValue gamma2(double tau, const BoundaryPoint& source, const BoundaryPoint& detector,
                   const OpticalField& field, const Gamma2Quadrature& quad) {
    const double t0 = distance(source.position, detector.position);
    return gamma2_excess(tau - t0, source, detector, field, quad);
}

double n_kernel(double tau, double t0, int dim, NKernelMode mode) {
    if (dim != 2 && dim != 3) {
        throw std::invalid_argument("n_kernel: dimension must be 2 or 3");
    }
    if (!(tau > t0) || !(t0 > 0.0)) {
        return 0.0;
    }
    if (mode == NKernelMode::ClosedForm) {
        if (dim == 2) {
            return 2.0 * pi / std::sqrt((tau - t0) * (tau + t0));
        }
        return 2.0 * pi / (tau * t0) * std::log((tau + t0) / (tau - t0));
    }
    quad::AdaptiveOptions opt;
    opt.rel_tol = 1e-11;
    opt.abs_tol = 0.0;
    opt.max_depth = 25;
    if (dim == 2) {
        // Raw polar angle of v against d, over the full circle.
        auto f = [&](double theta) { return 1.0 / (tau - t0 * std::cos(theta)); };
        return quad::adaptive_panels(f, 0.0, 2.0 * pi, 8, opt).value;
    }
    // Raw spherical angles: theta in [0, pi] (polar, from d), phi in [0, 2 pi].
    auto outer = [&](double phi) {
        (void)phi;
        auto inner = [&](double theta) {
            const double st = std::sin(theta);
            return st / (tau * tau + t0 * t0 - 2.0 * tau * t0 * std::cos(theta));
        };
        return quad::adaptive_panels(inner, 0.0, pi, 8, opt).value;
    };
    return quad::adaptive_panels(outer, 0.0, 2.0 * pi, 2, opt).value;
}

double n_kernel(double tau, const Vec3& x, const Vec3& x_prime, int dim, NKernelMode mode) {
    return n_kernel(tau, distance(x, x_prime), dim, mode);
}

const char* to_string(LimitConvention c) {
    return c == LimitConvention::Published ? "published" : "kernel_consistent";
}

LimitConvention limit_convention_from_string(const std::string& s) {
    if (s == "published") {
        return LimitConvention::Published;
    }
    if (s == "kernel_consistent") {
        return LimitConvention::KernelConsistent;
    }
    throw ConfigError("unknown limit convention '" + s + "'");
}

LimitPrediction gamma1_limit_prediction(const BoundaryPoint& source, const BoundaryPoint& detector,
                                        const OpticalField& field, LimitConvention convention) {
    const int dim = field.domain.dim();
    const Chord chord = chord_from_endpoints(field.domain, source, detector);
    const Vec3& x = detector.position;
    const Vec3& xp = source.position;
    const Vec3 v0 = chord.direction;
    const double t0 = chord.length;
    LimitPrediction p;
    p.prefactor = field.detector.value(x, v0) * field.source.value(xp, v0) *
                  std::max(0.0, dot(x, v0)) * std::abs(dot(xp, v0)) * attenuation_E(x, xp, field);
    const double g00 = field.phase->value(v0, v0);
    // n=3 constants: 2 pi from the kernel, pi as stated in the published limits.
    const double factor3 = convention == LimitConvention::Published ? pi : 2.0 * pi;
    if (dim == 3 && field.mode == SupportMode::H1) {
        const double kx = field.k0_at(x), kxp = field.k0_at(xp);
        if (!std::isfinite(kx) || !std::isfinite(kxp)) {
            throw std::domain_error("gamma1_limit_prediction: k undefined at a chord endpoint");
        }
        p.type = SingularityType::Logarithmic;
        p.exponent = 0.0;
        p.boundary_sum = g00 * (kx + kxp);
        p.coefficient = factor3 / (t0 * t0) * p.prefactor * p.boundary_sum;
        return p;
    }
    const Line line = line_from_chord(chord);
    const WeightedTransform wt =
        weighted_xray([&](const Vec3& y) { return field.k0_at(y); }, dim, line);
    if (wt.divergent) {
        throw std::domain_error("gamma1_limit_prediction: weighted transform diverges on this chord");
    }
    p.weighted_transform = g00 * wt.value;
    p.type = SingularityType::Power;
    if (dim == 2) {
        p.exponent = -0.5;
        p.coefficient = std::sqrt(2.0 / t0) * p.prefactor * p.weighted_transform;
    } else {
        p.exponent = 0.0;
        p.coefficient = factor3 / t0 * p.prefactor * p.weighted_transform;
    }
    return p;
}

double EllipsoidDomain::exact_volume(int dim) const {
    if (empty()) {
        return 0.0;
    }
    const double t0 = norm(focus);
    const double a = 0.5 * mu;
    const double b = 0.5 * std::sqrt((mu - t0) * (mu + t0));
    return dim == 2 ? pi * a * b : 4.0 / 3.0 * pi * a * b * b;
}

double EllipsoidDomain::volume_bound(int dim) const {
    if (empty()) {
        return 0.0;
    }
    const double t0 = norm(focus);
    const double sphere = dim == 2 ? 2.0 : 2.0 * pi;
    const double half = 0.5 * std::sqrt((mu - t0) * (mu + t0));
    return sphere * pi * (mu + t0) / 4.0 * std::pow(half, dim - 1);
}

double EllipsoidDomain::monte_carlo_volume(int dim, std::uint64_t samples, std::uint64_t seed) const {
    if (empty() || samples == 0) {
        return 0.0;
    }
    const Vec3 centre = focus * 0.5;
    const double t0 = norm(focus);
    const double a = 0.5 * mu;
    const double b = 0.5 * std::sqrt((mu - t0) * (mu + t0));
    const Vec3 axis = t0 > 0.0 ? focus * (1.0 / t0) : Vec3{1.0, 0.0, 0.0};
    const Vec3 e1 = dim == 2 ? Vec3{-axis.y, axis.x, 0.0} : any_orthogonal(axis);
    const Vec3 e2 = cross(axis, e1);
    StreamRng rng(hash_combine(seed, 0x656c6c6970736fULL));
    std::uint64_t hits = 0;
    for (std::uint64_t i = 0; i < samples; ++i) {
        Vec3 y = centre + axis * (a * (2.0 * rng.uniform() - 1.0)) + e1 * (b * (2.0 * rng.uniform() - 1.0));
        if (dim == 3) {
            y += e2 * (b * (2.0 * rng.uniform() - 1.0));
        }
        if (contains(y)) {
            ++hits;
        }
    }
    const double box = 2.0 * a * std::pow(2.0 * b, dim - 1);
    return box * static_cast<double>(hits) / static_cast<double>(samples);
}

void write_kernel_sweep(std::ostream& out, const std::vector<KernelSample>& samples) {
    out << "tau,t0,q,angle_src,angle_det,term,value\n";
    out << std::setprecision(17);
    for (const auto& s : samples) {
        const double as = std::atan2(s.chord.source.y, s.chord.source.x);
        const double ad = std::atan2(s.chord.detector.y, s.chord.detector.x);
        out << s.tau << ',' << s.chord.length << ',' << s.chord.offset << ',' << as << ',' << ad << ','
            << s.term << ',' << s.value << '\n';
    }
}

BoundScanReport weighted_bound_scan(const OpticalField& field, const BoundScanOptions& options) {
    const int dim = field.domain.dim();
    const bool h2 = field.mode == SupportMode::H2;
    const bool with_g2 = options.include_gamma2 && dim == 2;
    std::vector<std::string> names;
    if (dim == 2) {
        names.emplace_back("sqrt(tau^2-t0^2)*gamma1");
        if (h2) {
            names.emplace_back("(tau-t0)^(1/2)*gamma1");
        }
        if (with_g2) {
            names.emplace_back("gamma2");
        }
    } else {
        names.emplace_back("tau*t0/ln((tau+t0)/(tau-t0))*gamma1");
        if (h2) {
            names.emplace_back("gamma1");
        }
    }
    BoundScanReport report;
    report.entries.resize(names.size());
    for (std::size_t e = 0; e < names.size(); ++e) {
        report.entries[e].name = names[e];
    }
    for (const auto& level : options.levels) {
        const auto nodes = boundary_grid(field.domain, level.boundary_nodes);
        std::vector<std::pair<int, int>> pairs;
        for (int i = 0; i < level.boundary_nodes; ++i) {
            for (int j = i + 1; j < level.boundary_nodes; ++j) {
                pairs.emplace_back(i, j);
            }
        }
        std::vector<std::vector<double>> local(pairs.size(), std::vector<double>(names.size(), 0.0));
        parallel_for(pairs.size(), [&](std::size_t p) {
            const BoundaryPoint& src = nodes[pairs[p].first];
            const BoundaryPoint& det = nodes[pairs[p].second];
            const double t0 = distance(src.position, det.position);
            const double top = options.horizon - t0;
            if (top <= level.min_excess) {
                return;
            }
            for (int k = 0; k < level.excess_samples; ++k) {
                const double frac = level.excess_samples == 1 ? 0.0 : double(k) / (level.excess_samples - 1);
                const double u = level.min_excess * std::pow(top / level.min_excess, frac);
                const double tau = t0 + u;
                const double g1 = gamma1_excess(u, src, det, field, options.gamma1_quad).value;
                std::size_t e = 0;
                auto put = [&](double v) {
                    local[p][e] = std::max(local[p][e], std::isfinite(v) ? v : std::numeric_limits<double>::infinity());
                    ++e;
                };
                if (dim == 2) {
                    put(std::sqrt(u * (2.0 * t0 + u)) * g1);
                    if (h2) {
                        put(std::sqrt(u) * g1);
                    }
                    if (with_g2) {
                        put(gamma2_excess(u, src, det, field, options.gamma2_quad).value);
                    }
                } else {
                    put(tau * t0 / std::log((tau + t0) / u) * g1);
                    if (h2) {
                        put(g1);
                    }
                }
            }
        });
        for (std::size_t e = 0; e < names.size(); ++e) {
            double sup = 0.0;
            for (const auto& row : local) {
                sup = std::max(sup, row[e]);
            }
            report.entries[e].sups.push_back(sup);
        }
    }
    for (auto& entry : report.entries) {
        entry.finite = std::all_of(entry.sups.begin(), entry.sups.end(),
                                   [](double v) { return std::isfinite(v); });
        const std::size_t n = entry.sups.size();
        if (n >= 2) {
            const double a = entry.sups[n - 2], b = entry.sups[n - 1];
            const double scale = std::max(std::abs(a), std::abs(b));
            entry.relative_change = scale > 0.0 ? std::abs(b - a) / scale : 0.0;
            entry.stable = entry.relative_change <= options.stability_tolerance;
        }
        report.passed = report.passed && entry.finite && entry.stable;
    }
    return report;
}

}  // namespace albedo
