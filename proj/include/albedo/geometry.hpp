// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <utility>
#include <vector>

#include "albedo/vec.hpp"

namespace albedo {

/// Unit ball B_n(0,1), n in {2,3}. The outward normal at a boundary point x is x itself.
class Domain {
  public:
    explicit Domain(int dim);

    int dim() const { return dim_; }

    /// Surface measure of S^{n-1}: 2*pi (n=2) or 4*pi (n=3).
    double sphere_measure() const;

    /// Measure of the inward hemisphere weighted by |nu.v|: 2 (n=2) or pi (n=3).
    double cosine_hemisphere_measure() const;

    bool contains(const Vec3& x, double tol = 1e-12) const;

  private:
    int dim_;
};

struct BoundaryPoint {
    Vec3 position;
    Vec3 normal() const { return position; }
};

/// Line segment between two boundary points. `source` is x', `detector` is x.
struct Chord {
    Vec3 source;
    Vec3 detector;
    Vec3 direction;    ///< v0 = (x - x') / |x - x'|
    double length;     ///< t0 = |x - x'|
    Vec3 normal_dir;   ///< unit vector orthogonal to v0 (v0 rotated +pi/2 for n=2)
    double offset;     ///< q = x . normal_dir, so |q| is the distance of the line to 0
    double angle;      ///< polar angle of v0 (n=2 only; 0 for n=3)
};

/// Distances (tau_minus, tau_plus) from x to the boundary along -v and +v.
std::pair<double, double> tau_pm(const Domain& domain, const Vec3& x, const Vec3& v);

/// Deterministic boundary sampling: uniform angles on the circle, Fibonacci lattice on the sphere.
std::vector<BoundaryPoint> boundary_grid(const Domain& domain, int n_points);

/// Surface measure attached to each node of `boundary_grid(domain, n_points)`.
double boundary_cell_measure(const Domain& domain, int n_points);

Chord chord_from_endpoints(const Domain& domain, const BoundaryPoint& source,
                           const BoundaryPoint& detector);

/// Parallel-beam coordinates of the line through a chord, folded to angle in [0, pi).
struct LineCoordinates {
    double angle;
    double offset;
};
LineCoordinates line_coordinates(const Chord& chord);

struct DirectionQuadrature {
    std::vector<Vec3> nodes;
    std::vector<double> weights;
};

/// Positive-weight quadrature on S^{n-1}. For n=2, `resolution` equally spaced angles;
/// for n=3, a Gauss-Legendre(cos theta) x uniform(phi) product with `resolution` polar
/// nodes and 2*resolution azimuthal nodes.
DirectionQuadrature direction_quadrature(const Domain& domain, int resolution);

}  // namespace albedo
