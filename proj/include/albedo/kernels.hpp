// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "albedo/geometry.hpp"
#include "albedo/optics.hpp"

namespace albedo {

/// Ballistic term: a Dirac mass at arrival_time with weight amplitude.
struct BallisticPulse {
    double arrival_time = 0.0;
    double amplitude = 0.0;
};

BallisticPulse gamma0(const BoundaryPoint& source, const BoundaryPoint& detector,
                      const OpticalField& field);

struct KernelQuadrature {
    double rel_tol = 1e-9;
    double abs_tol = 1e-13;
    unsigned max_depth = 16;
    int panels = 4;
};

struct KernelValue {
    double value = 0.0;
    double residual = 0.0;
    bool converged = true;
};

/// Single-scattering kernel at tau (0 for tau <= t0).
KernelValue gamma1(double tau, const BoundaryPoint& source, const BoundaryPoint& detector,
                   const OpticalField& field, const KernelQuadrature& quad = {});

/// Single-scattering kernel at tau = t0 + excess. Avoids the cancellation in tau^2 - t0^2.
KernelValue gamma1_excess(double excess, const BoundaryPoint& source,
                          const BoundaryPoint& detector, const OpticalField& field,
                          const KernelQuadrature& quad = {});

/// The same kernel summed directly over a direction grid without the regularizing map.
/// Only accurate away from tau = t0; used to cross-check.
double gamma1_direct(double tau, const BoundaryPoint& source, const BoundaryPoint& detector,
                     const OpticalField& field, const DirectionQuadrature& directions);

/// Fixed Gauss-Legendre orders of the double-scattering quadrature.
struct Gamma2Quadrature {
    int direction_nodes = 24;  ///< first-flight direction at the source
    int radial_nodes = 16;     ///< first-flight length
    int inner_nodes = 24;      ///< last-flight direction at the detector
};

/// Double-scattering kernel (n=2 only; throws std::invalid_argument for n=3).
KernelValue gamma2(double tau, const BoundaryPoint& source, const BoundaryPoint& detector,
                   const OpticalField& field, const Gamma2Quadrature& quad = {});
KernelValue gamma2_excess(double excess, const BoundaryPoint& source,
                          const BoundaryPoint& detector, const OpticalField& field,
                          const Gamma2Quadrature& quad = {});

enum class NKernelMode { ClosedForm, Quadrature };

/// integral over S^{n-1} of (tau - d.v)^{n-3} / |d - tau v|^{2n-4}, |d| = t0; 0 for tau <= t0.
double n_kernel(double tau, double t0, int dim, NKernelMode mode);
double n_kernel(double tau, const Vec3& x, const Vec3& x_prime, int dim, NKernelMode mode);

enum class SingularityType { Power, Logarithmic };

/// Which constant to use in front of the n=3 limits. KernelConsistent is the value implied by
/// the single-scattering kernel itself; Published reproduces the stated formulas, which are
/// smaller by a factor 2 for n=3 (identical for n=2).
enum class LimitConvention { KernelConsistent, Published };

const char* to_string(LimitConvention c);
LimitConvention limit_convention_from_string(const std::string& s);

/// gamma1 ~ coefficient * excess^exponent (Power) or coefficient * ln(1/excess) (Logarithmic).
struct LimitPrediction {
    SingularityType type = SingularityType::Power;
    double exponent = 0.0;
    double coefficient = 0.0;
    double weighted_transform = 0.0;  ///< g(v0,v0) times the weighted X-ray transform of k0
    double boundary_sum = 0.0;        ///< k(x,v0,v0) + k(x',v0,v0) (n=3, H1)
    double prefactor = 0.0;           ///< W S (nu.v0)|nu'.v0| E(x,x')
};

LimitPrediction gamma1_limit_prediction(const BoundaryPoint& source, const BoundaryPoint& detector,
                                        const OpticalField& field,
                                        LimitConvention convention = LimitConvention::KernelConsistent);

/// {y : |y| + |focus - y| < mu}: the points reachable from the origin and then `focus`
/// within path length mu.
struct EllipsoidDomain {
    double mu = 0.0;
    Vec3 focus;

    bool empty() const { return mu <= norm(focus); }
    bool contains(const Vec3& y) const { return norm(y) + norm(focus - y) < mu; }
    /// Exact volume of the spheroid (n=2 area, n=3 volume).
    double exact_volume(int dim) const;
    /// Vol_{n-2}(S^{n-2}) pi (mu + t0) / 4 (sqrt(mu^2 - t0^2) / 2)^{n-1}.
    double volume_bound(int dim) const;
    /// Hit-or-miss estimate over the bounding box.
    double monte_carlo_volume(int dim, std::uint64_t samples, std::uint64_t seed) const;
};

struct KernelSample {
    double tau = 0.0;
    Chord chord;
    std::string term;
    double value = 0.0;
};

/// CSV with header tau,t0,q,angle_src,angle_det,term,value.
void write_kernel_sweep(std::ostream& out, const std::vector<KernelSample>& samples);

struct BoundScanLevel {
    int boundary_nodes = 0;
    int excess_samples = 0;
    double min_excess = 0.0;
};

struct BoundScanOptions {
    std::vector<BoundScanLevel> levels = {{8, 8, 1e-3}, {16, 12, 1e-4}, {32, 16, 1e-5}};
    double horizon = 2.5;
    bool include_gamma2 = true;
    KernelQuadrature gamma1_quad{1e-7, 1e-13, 14, 4};
    Gamma2Quadrature gamma2_quad{12, 8, 12};
    double stability_tolerance = 0.05;
};

struct WeightedSup {
    std::string name;     ///< e.g. "sqrt(tau^2-t0^2)*gamma1"
    std::vector<double> sups;  ///< one per level
    bool finite = true;
    bool stable = true;   ///< last two levels within the tolerance
    double relative_change = 0.0;
};

struct BoundScanReport {
    std::vector<WeightedSup> entries;
    bool passed = true;
};

/// Sups of the singular weights times gamma1 (and gamma2 for n=2) over nested grids of
/// (excess, chord). The chord set uses all unordered pairs of the level's boundary grid.
BoundScanReport weighted_bound_scan(const OpticalField& field, const BoundScanOptions& options = {});

}  // namespace albedo
