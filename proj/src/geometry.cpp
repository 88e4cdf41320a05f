// SPDX-License-Identifier: Apache-2.0
#include "albedo/geometry.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "albedo/quadrature.hpp"

namespace albedo {

using std::numbers::pi;

Domain::Domain(int dim) : dim_(dim) {
    if (dim != 2 && dim != 3) {
        throw std::invalid_argument("Domain: dimension must be 2 or 3, got " + std::to_string(dim));
    }
}

double Domain::sphere_measure() const { return dim_ == 2 ? 2.0 * pi : 4.0 * pi; }

double Domain::cosine_hemisphere_measure() const { return dim_ == 2 ? 2.0 : pi; }

bool Domain::contains(const Vec3& x, double tol) const { return norm(x) <= 1.0 + tol; }

std::pair<double, double> tau_pm(const Domain& domain, const Vec3& x, const Vec3& v) {
    if (!domain.contains(x)) {
        throw std::invalid_argument("tau_pm: point lies outside the closed unit ball");
    }
    // x = t v + q v_perp with t = x.v and q^2 = |x|^2 - t^2; tau_pm = sqrt(1 - q^2) -/+ t.
    const double t = dot(x, v);
    const double disc = std::max(0.0, 1.0 - norm2(x) + t * t);
    const double half_chord = std::sqrt(disc);
    return {std::max(0.0, half_chord + t), std::max(0.0, half_chord - t)};
}

std::vector<BoundaryPoint> boundary_grid(const Domain& domain, int n_points) {
    if (n_points < 4) {
        throw std::invalid_argument("boundary_grid: need at least 4 points");
    }
    std::vector<BoundaryPoint> points(n_points);
    if (domain.dim() == 2) {
        for (int i = 0; i < n_points; ++i) {
            const double a = 2.0 * pi * i / n_points;
            points[i].position = {std::cos(a), std::sin(a), 0.0};
        }
        return points;
    }
    const double golden = pi * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < n_points; ++i) {
        const double z = 1.0 - (2.0 * i + 1.0) / n_points;
        const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = golden * i;
        points[i].position = normalized(Vec3{r * std::cos(phi), r * std::sin(phi), z});
    }
    return points;
}

double boundary_cell_measure(const Domain& domain, int n_points) {
    return domain.sphere_measure() / n_points;
}

Chord chord_from_endpoints(const Domain& domain, const BoundaryPoint& source,
                           const BoundaryPoint& detector) {
    const Vec3 d = detector.position - source.position;
    const double t0 = norm(d);
    if (t0 < 1e-14) {
        throw std::invalid_argument("chord_from_endpoints: coincident endpoints");
    }
    Chord c;
    c.source = source.position;
    c.detector = detector.position;
    c.direction = d * (1.0 / t0);
    c.length = t0;
    if (domain.dim() == 2) {
        c.normal_dir = {-c.direction.y, c.direction.x, 0.0};
        c.offset = dot(c.detector, c.normal_dir);
        c.angle = std::atan2(c.direction.y, c.direction.x);
    } else {
        const Vec3 foot = c.detector - dot(c.detector, c.direction) * c.direction;
        const double q = norm(foot);
        c.normal_dir = q > 1e-14 ? foot * (1.0 / q) : any_orthogonal(c.direction);
        c.offset = q;
        c.angle = 0.0;
    }
    return c;
}

LineCoordinates line_coordinates(const Chord& chord) {
    double angle = chord.angle;
    double offset = chord.offset;
    // Reversing the direction flips v_perp and hence the sign of q.
    if (angle < 0.0) {
        angle += pi;
        offset = -offset;
    }
    if (angle >= pi) {
        angle -= pi;
        offset = -offset;
    }
    return {angle, offset};
}

DirectionQuadrature direction_quadrature(const Domain& domain, int resolution) {
    if (resolution < 1) {
        throw std::invalid_argument("direction_quadrature: resolution must be positive");
    }
    DirectionQuadrature q;
    if (domain.dim() == 2) {
        q.nodes.reserve(resolution);
        for (int i = 0; i < resolution; ++i) {
            const double a = 2.0 * pi * (i + 0.5) / resolution;
            q.nodes.push_back({std::cos(a), std::sin(a), 0.0});
            q.weights.push_back(2.0 * pi / resolution);
        }
        return q;
    }
    const quad::GaussRule rule = quad::gauss_legendre(resolution);
    const int n_phi = 2 * resolution;
    for (int i = 0; i < resolution; ++i) {
        const double ct = rule.nodes[i];
        const double st = std::sqrt(std::max(0.0, 1.0 - ct * ct));
        for (int j = 0; j < n_phi; ++j) {
            const double phi = 2.0 * pi * (j + 0.5) / n_phi;
            q.nodes.push_back({st * std::cos(phi), st * std::sin(phi), ct});
            q.weights.push_back(rule.weights[i] * 2.0 * pi / n_phi);
        }
    }
    return q;
}

}  // namespace albedo
