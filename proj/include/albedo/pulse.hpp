// SPDX-License-Identifier: Apache-2.0
#pragma once

namespace albedo {

/// Time profiles convolved with the source pulse. Power means (t)_+^alpha, Log means
/// ln(1/t) for t > 0 (0 otherwise), Delta means the Dirac mass at 0.
enum class BasisKind { Delta, Power, Log };

struct Basis {
    BasisKind kind = BasisKind::Delta;
    double alpha = 0.0;

    static Basis delta() { return {BasisKind::Delta, 0.0}; }
    static Basis power(double a) { return {BasisKind::Power, a}; }
    static Basis log() { return {BasisKind::Log, 0.0}; }
};

/// Triangular pulse of unit area supported on [0, eta], peak 2/eta at eta/2.
class TriangularPulse {
  public:
    explicit TriangularPulse(double eta);

    double eta() const { return eta_; }
    double value(double t) const;
    double cdf(double t) const;
    /// Inverse CDF, for sampling birth times.
    double quantile(double p) const;

    /// (phi * basis)(t).
    double convolve(const Basis& basis, double t) const;
    /// Average over t in [a, b] of (phi * basis)(t - shift).
    double bin_average(const Basis& basis, double shift, double a, double b) const;

  private:
    double eta_;
};

}  // namespace albedo
