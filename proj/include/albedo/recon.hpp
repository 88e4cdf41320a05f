// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "albedo/kernels.hpp"
#include "albedo/transport.hpp"
#include "albedo/xray.hpp"

namespace albedo {

/// Ballistic amplitude and arrival time recovered from one trace.
struct BallisticEstimate {
    double amplitude = 0.0;  ///< A-hat
    double t0 = 0.0;
    bool symbolic = false;   ///< read from the symbolic channel
    bool flagged = false;    ///< no peak above the noise floor
};

/// Symbolic channel when present; otherwise a matched filter of the binned ballistic signal
/// against the shifted pulse over [t0 - eta, t0 + eta].
BallisticEstimate extract_ballistic(const PairTrace& trace, const SourcePulse& pulse,
                                    const TimeGrid& time, const Chord& chord);

/// Excess range (eps1, eps2) of tau - t0 used by the singular fit.
struct FitWindow {
    double lo = 0.0;
    double hi = 0.0;
};

struct FitOptions {
    /// Negative values select the defaults: eps1 = 0, eps2 = 2 eta + 4 dt.
    double eps1 = -1.0;
    double eps2 = -1.0;
    /// Fits whose relative residual exceeds this are rejected.
    double max_residual = 0.05;
    /// Same for weighted (Monte Carlo) fits, on sqrt(chi^2 / dof).
    double max_reduced_chi = 3.0;
    int min_bins = 4;
    /// A rejected fit is retried with eps2 halved, at most this many times.
    int max_halvings = 4;
};

FitWindow default_fit_window(double t0, const SourcePulse& pulse, const TimeGrid& time,
                             const FitOptions& options);

struct SingularFit {
    int source = 0;
    int detector = 0;
    double t0 = 0.0;
    double ballistic = 0.0;          ///< A-hat
    SingularityType type = SingularityType::Power;
    double exponent = 0.0;           ///< -1/2 (n=2) or 0 (n=3, H2); unused for the log model
    double coefficient = 0.0;        ///< C-hat
    double coefficient_error = 0.0;  ///< one standard deviation from the fit
    FitWindow window;
    double residual = 0.0;           ///< |y - model| / |y| over the window
    int bins = 0;
    bool accepted = false;
    std::string reason;
};

/// Weighted least squares of the pulse-integrated singular model over the window. `scattered`
/// holds the bin averages with the ballistic part removed; `errors` (may be empty) are their
/// standard errors. Nuisance terms: n=2 {1, u^1/2}; n=3 H2 {u^1/2, u}; n=3 H1 {1, u^1/2, u}.
SingularFit fit_singular(const std::vector<double>& scattered, const std::vector<double>& errors,
                         int first_bin, double t0, const SourcePulse& pulse, const TimeGrid& time,
                         int dim, SupportMode mode, const FitOptions& options);

/// fit_singular on channels >= 1 of a trace (Monte Carlo data: channels >= 1 with their errors).
SingularFit extract_single_scatter_coeff(const PairTrace& trace, const MeasurementSet& m,
                                         int dim, SupportMode mode, const FitOptions& options);

/// Quantities recovered per chord from C-hat and A-hat (no dependence on E):
/// n=2 and n=3 H2: P_theta0 k0 (equal to P(rho k0) on the ball); n=3 H1: k(x) + k(x').
double weighted_transform_from_fit(const SingularFit& fit, int dim, SupportMode mode, double g00,
                                   LimitConvention convention = LimitConvention::KernelConsistent);

struct ReconOptions {
    int sinogram_angles = 180;
    int sinogram_offsets = 256;
    int image_size = 128;
    FitOptions fit;
    double rho_mask_radius = 0.95;
    double e_tolerance = 1e-3;   ///< E-hat outside (0, 1 + tol] excludes the chord
    double e_floor = 1e-6;       ///< E-hat below this excludes the chord from the k0 stage
    bool reconstruct_k0 = true;
    LimitConvention convention = LimitConvention::KernelConsistent;
};

/// One reconstructed slice. n=2: the disc itself (e1 = x axis, e2 = y axis); n=3: the
/// great-circle plane spanned by e1, e2.
struct SliceReconstruction {
    Vec3 e1{1.0, 0.0, 0.0};
    Vec3 e2{0.0, 1.0, 0.0};
    Sinogram attenuation;          ///< -ln E-hat
    Sinogram weighted_k0;          ///< P(rho k0)
    Image sigma;
    Image k0;
    bool has_k0 = false;
    int chords = 0;
    int excluded_sigma = 0;
    int excluded_k0 = 0;
    int rejected_fits = 0;
    int gaps_sigma = 0;
    int gaps_k0 = 0;
    int masked_pixels = 0;
    double sigma_error = -1.0;     ///< relative L2 over the disc of radius 0.9 (when truth given)
    double k0_error = -1.0;        ///< relative L2 over Z
};

struct BoundarySum {
    int source = 0;
    int detector = 0;
    double value = 0.0;   ///< k(x, v0, v0) + k(x', v0, v0)
    double truth = -1.0;
};

struct ReconReport {
    int dim = 2;
    SupportMode mode = SupportMode::H2;
    std::vector<SingularFit> fits;
    std::vector<SliceReconstruction> slices;
    std::vector<BoundarySum> boundary_sums;  ///< n=3 H1
    nlohmann::json stability;                ///< filled by the caller when computed
    std::string config_hash;

    nlohmann::json summary() const;
};

/// The reconstruction pipeline. `known` supplies S, W, g, the support mode and delta; its
/// sigma and k0 are ignored. `truth` (may be null) enables the error norms. n=2 data must come
/// from boundary_grid nodes; n=3 data from AcquisitionGeometry::great_circle, one measurement
/// set per plane.
ReconReport reconstruct(const std::vector<MeasurementSet>& data, const OpticalField& known,
                        const OpticalField* truth, const ReconOptions& options);

/// Ground-truth slice images for comparison.
Image sample_slice(const ScalarField& f, const Vec3& e1, const Vec3& e2, int size);

/// Left side of the ballistic stability estimate at x0': integral over the boundary of
/// |E - E~|(x, x0') W S (nu.v0)|nu'.v0| / t0^{n-1} dmu(x), by the change of variables to v0.
double ballistic_stability_lhs(const OpticalField& a, const OpticalField& b,
                               const BoundaryPoint& x0);

struct StabilityOptions {
    int boundary_nodes = 24;
    double dt = 0.05;
    double eta = 0.05;
    double horizon = 2.2;
    std::vector<int> points;        ///< boundary node indices used as x0' (empty: all)
    int detector_subsamples = 8;    ///< n=2 detector arc averaging of the albedo matrices
    SynthesisOptions synthesis;
    /// Single-scattering estimate (H2 only): fine traces on at most max_chords chords through Z.
    bool single_scatter = true;
    int max_chords = 40;
    double fit_eta = 0.004;
    double fit_dt = 0.002;
    FitOptions fit;
    /// Excess grid for the weighted sup of Gamma1 - Gamma1~.
    std::vector<double> excess_grid = {1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2, 0.1};
};

struct StabilityPoint {
    int node = 0;
    double lhs = 0.0;          ///< ballistic_stability_lhs
    double column_norm = 0.0;  ///< sum |K - K~| dt dmu over the column of x0'
};

struct StabilityReport {
    std::vector<StabilityPoint> points;
    double operator_norm = 0.0;    ///< discrete ||A - A~||_{eta,T}
    bool inequality_holds = true;  ///< lhs <= column_norm <= operator_norm at every point
    /// Single-scattering estimate: per chord through Z, |E P k - E~ P k~| and the weighted sup of Gamma1 - Gamma1~.
    std::vector<double> chord_lhs;
    double weighted_sup = 0.0;
    double max_ratio = 0.0;

    nlohmann::json to_json() const;
};

/// Stability diagnostics for a pair of admissible fields in the same mode.
StabilityReport stability_report(const OpticalField& a, const OpticalField& b,
                                 const StabilityOptions& options);

}  // namespace albedo
