// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "albedo/kernels.hpp"

namespace albedo {

struct CheckResult {
    std::string name;
    bool passed = false;
    double measured = 0.0;
    double threshold = 0.0;
    std::string detail;
    double seconds = 0.0;

    nlohmann::json to_json() const;
};

/// Closed forms of the N kernel against quadrature on random (tau, t0), n=2 and n=3; the
/// measured value is the largest relative deviation. `tamper` scales the closed forms.
CheckResult check_n_kernel_closed_forms(int samples, std::uint64_t seed, double tamper = 0.0);

/// |P_theta0 f - P(rho f)| / (1 + |P_theta0 f|) over smooth bumps and random chords, n=2 and n=3.
CheckResult check_weighted_transform_identity(int fields, int chords, std::uint64_t seed);

/// Volume integral of a smooth f(x, v) over X x S^{n-1} against the same integral written over
/// incoming boundary points and chord lengths, weighted by |nu.v|.
CheckResult check_boundary_chord_identity(int dim);

/// Monte Carlo volume of the ellipsoid domain never exceeds its bound.
CheckResult check_volume_bound(int samples, std::uint64_t seed);

struct AsymptoteOptions {
    double eta = 0.004;
    double dt = 0.001;
    double eps2 = 0.01;
    double tolerance = 0.02;
    LimitConvention convention = LimitConvention::KernelConsistent;
};

/// n=2 diameter, sigma = 0, S = W = g = 1, k0 = c: fitted C-hat against pi c.
CheckResult check_n2_asymptote(double c, const AsymptoteOptions& options = {});
/// n=3 H2 (delta 0.2) on `chords` chords through Z: fitted constant against the prediction.
CheckResult check_n3_h2_limit(int chords, const AsymptoteOptions& options);
/// n=3 H1 diameter: fitted ln(1/(tau - t0)) coefficient against the prediction.
CheckResult check_n3_h1_limit(const AsymptoteOptions& options);

/// Weighted sups of gamma1 and gamma2 stable under grid refinement, n=2, H1 and H2.
CheckResult check_weighted_sups(const BoundScanOptions& options);

struct VerifyOptions {
    bool full = false;
    double tamper = 0.0;
    std::uint64_t seed = 1;
    LimitConvention convention = LimitConvention::KernelConsistent;
};

struct VerifyReport {
    std::string level;
    std::vector<CheckResult> checks;
    bool passed = true;

    nlohmann::json to_json() const;
};

VerifyReport run_verification(const VerifyOptions& options);

}  // namespace albedo
