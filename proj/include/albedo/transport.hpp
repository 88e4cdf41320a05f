// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "albedo/geometry.hpp"
#include "albedo/kernels.hpp"
#include "albedo/optics.hpp"

namespace albedo {

/// Unit-area temporal source profile supported on [0, width].
struct SourcePulse {
    enum class Shape { Triangle, Box };

    Shape shape = Shape::Triangle;
    double width = 0.05;    ///< eta
    double horizon = 2.5;   ///< T

    static SourcePulse triangle(double eta, double horizon);
    static SourcePulse box(double width, double horizon);

    void validate() const;
    double cdf(double t) const;
    double quantile(double p) const;
    /// Points where the density has a kink or a jump.
    std::vector<double> kinks() const;
};

/// Uniform bins [j dt, (j+1) dt), j = 0 .. bins-1.
struct TimeGrid {
    double dt = 0.01;
    int bins = 0;

    static TimeGrid covering(double horizon, double dt);
    double start(int j) const { return j * dt; }
    double centre(int j) const { return (j + 0.5) * dt; }
    double horizon() const { return bins * dt; }
};

/// Boundary nodes and the (source, detector) pairs to synthesize.
struct AcquisitionGeometry {
    int dim = 2;
    std::vector<BoundaryPoint> nodes;
    double cell_measure = 0.0;              ///< surface measure attached to each node
    std::vector<std::pair<int, int>> pairs;  ///< (source index, detector index)
    /// n=2: Gauss-Legendre points averaged across each detector arc (1 = point detector).
    int detector_subsamples = 1;

    /// All ordered pairs of distinct nodes of boundary_grid(n_nodes).
    static AcquisitionGeometry all_pairs(int dim, int n_nodes);
    /// Pairs with source < detector (one orientation per line).
    static AcquisitionGeometry line_pairs(int dim, int n_nodes);
    /// Given sources, every other node as detector.
    static AcquisitionGeometry from_sources(int dim, int n_nodes, const std::vector<int>& sources);
    /// n=3: n_nodes equally spaced on the great circle spanned by orthonormal e1, e2,
    /// pairs with source < detector.
    static AcquisitionGeometry great_circle(int n_nodes, const Vec3& e1, const Vec3& e2);

    std::vector<int> sources() const;
    void validate() const;
};

/// Time-resolved detector signal of one (source, detector) pair. Only bins
/// [first_bin, first_bin + size) were computed.
struct PairTrace {
    int source = 0;
    int detector = 0;
    /// Symbolic ballistic channel: Dirac masses (one per detector subsample, amplitudes already
    /// carrying the subsample weights). Empty for Monte Carlo data.
    std::vector<BallisticPulse> ballistic;
    int first_bin = 0;
    /// Per-channel bin averages; channel c is scattering order c (Monte Carlo: 3 means >= 3).
    std::vector<std::vector<double>> channels;
    /// Standard errors, same shape as channels (Monte Carlo only).
    std::vector<std::vector<double>> errors;

    int size() const { return channels.empty() ? 0 : static_cast<int>(channels[0].size()); }
    double total(int k) const;
    double total_error(int k) const;
    double ballistic_amplitude() const;
};

struct MeasurementSet {
    std::string method;  ///< "kernel" or "mc"
    int order = 0;       ///< highest order of kernel synthesis
    AcquisitionGeometry geometry;
    SourcePulse pulse;
    TimeGrid time;
    std::uint64_t seed = 0;
    std::uint64_t particles = 0;
    std::string config_hash;
    std::vector<PairTrace> traces;
    long unconverged = 0;  ///< kernel evaluations that missed the quadrature tolerance

    const PairTrace* find(int source, int detector) const;
    std::vector<std::string> channel_names() const;
};

/// Controls of the deterministic synthesis.
struct SynthesisOptions {
    int order = 1;
    /// When > 0, only bins overlapping [t0, t0 + window] are synthesized.
    double window = 0.0;
    /// Piecewise Chebyshev interpolation of r gamma(t0 + r^2) in r = sqrt(tau - t0).
    double panel_width = 0.05;
    int panel_nodes = 6;
    int gamma2_panel_nodes = 4;
    KernelQuadrature gamma1_quad{1e-8, 1e-14, 16, 4};
    Gamma2Quadrature gamma2_quad{16, 12, 16};
};

/// Sum of gamma_j * phi for j <= order, bin-averaged. order 2 requires n = 2.
MeasurementSet albedo_truncated(const OpticalField& field, const SourcePulse& pulse,
                                const AcquisitionGeometry& geometry, const TimeGrid& time,
                                const SynthesisOptions& options);

struct McConfig {
    std::uint64_t particles = 100000;  ///< per source node
    std::uint64_t seed = 1;
    double roulette_weight = 1e-6;
    int max_order = 50;
    std::uint64_t block_size = 8192;
};

/// Collision-expansion Monte Carlo estimate of the averaged albedo, tallied by scattering order.
MeasurementSet simulate_albedo_mc(const OpticalField& field, const SourcePulse& pulse,
                                  const McConfig& mc, const AcquisitionGeometry& geometry,
                                  const TimeGrid& time);

/// Discretized albedo operator from L1((0, eta) x dX) to L1((0, T) x dX). Input cells are
/// (time bin j < source_bins, source node), output cells (time bin i, detector node); the
/// operator is time invariant, so it is stored by lag i - j.
struct AlbedoMatrix {
    TimeGrid time;
    int source_bins = 0;
    int n_nodes = 0;
    double cell_measure = 0.0;
    std::vector<int> sources;
    std::vector<double> lags;  ///< [source slot][detector][lag]

    double lag(int slot, int detector, int l) const {
        return lags[(static_cast<std::size_t>(slot) * n_nodes + detector) * time.bins + l];
    }
    /// K[(i, detector), (j, source slot)].
    double entry(int i, int detector, int j, int slot) const;
    std::size_t dense_bytes() const;
};

/// Kernel-based operator (orders <= options.order); throws BudgetExceeded past budget_bytes.
AlbedoMatrix albedo_matrix(const OpticalField& field, const AcquisitionGeometry& geometry,
                           const TimeGrid& time, double eta, const SynthesisOptions& options,
                           std::size_t budget_bytes = std::size_t{1} << 30);
/// Monte Carlo operator estimate.
AlbedoMatrix albedo_matrix(const OpticalField& field, const AcquisitionGeometry& geometry,
                           const TimeGrid& time, double eta, const McConfig& mc,
                           std::size_t budget_bytes = std::size_t{1} << 30);

/// Discrete L1 -> L1 norm: max over input cells of sum |K| dt dmu.
double l1_operator_norm(const AlbedoMatrix& a);
double l1_difference_norm(const AlbedoMatrix& a, const AlbedoMatrix& b);
/// The same maximum restricted to the input cells of one source slot.
double l1_column_difference_norm(const AlbedoMatrix& a, const AlbedoMatrix& b, int slot);

/// Long-form CSV: t,det_index,src_index,value,stderr,order. Ballistic Dirac masses are rows
/// with order "delta", t the arrival time and value the amplitude. A leading "#" line carries the
/// tool version and config hash.
void write_measurements_csv(std::ostream& out, const MeasurementSet& m);
nlohmann::json measurement_metadata(const MeasurementSet& m);
/// Inverse of write_measurements_csv + measurement_metadata.
MeasurementSet read_measurements(std::istream& csv, const nlohmann::json& meta);

}  // namespace albedo
