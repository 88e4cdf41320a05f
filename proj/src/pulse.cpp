// SPDX-License-Identifier: Apache-2.0
#include "albedo/pulse.hpp"

#include <cmath>
#include <stdexcept>

namespace albedo {

namespace {

// Antiderivatives of order 2 and 3 of the basis, vanishing for u <= 0.
double antiderivative(const Basis& b, double u, int order) {
    if (u <= 0.0) {
        return 0.0;
    }
    switch (b.kind) {
        case BasisKind::Delta:
            return order == 2 ? u : 0.5 * u * u;
        case BasisKind::Power: {
            const double a = b.alpha;
            if (order == 2) {
                return std::pow(u, a + 2.0) / ((a + 1.0) * (a + 2.0));
            }
            return std::pow(u, a + 3.0) / ((a + 1.0) * (a + 2.0) * (a + 3.0));
        }
        case BasisKind::Log: {
            const double lu = std::log(u);
            if (order == 2) {
                return u * u * (0.75 - 0.5 * lu);
            }
            return u * u * u * (11.0 / 36.0 - lu / 6.0);
        }
    }
    return 0.0;
}

}  // namespace

TriangularPulse::TriangularPulse(double eta) : eta_(eta) {
    if (!(eta > 0.0)) {
        throw std::invalid_argument("pulse width must be positive");
    }
}

double TriangularPulse::value(double t) const {
    if (t <= 0.0 || t >= eta_) {
        return 0.0;
    }
    const double h = 0.5 * eta_;
    return t <= h ? 4.0 * t / (eta_ * eta_) : 4.0 * (eta_ - t) / (eta_ * eta_);
}

double TriangularPulse::cdf(double t) const {
    if (t <= 0.0) {
        return 0.0;
    }
    if (t >= eta_) {
        return 1.0;
    }
    const double h = 0.5 * eta_;
    if (t <= h) {
        return 2.0 * t * t / (eta_ * eta_);
    }
    const double r = eta_ - t;
    return 1.0 - 2.0 * r * r / (eta_ * eta_);
}

double TriangularPulse::quantile(double p) const {
    if (p <= 0.0) {
        return 0.0;
    }
    if (p >= 1.0) {
        return eta_;
    }
    if (p <= 0.5) {
        return eta_ * std::sqrt(0.5 * p);
    }
    return eta_ - eta_ * std::sqrt(0.5 * (1.0 - p));
}

// phi = (4 / eta^2) [ (t)_+ - 2 (t - eta/2)_+ + (t - eta)_+ ] as a second derivative, so
// phi * B = (4 / eta^2) sum_k c_k B2(t - s_k), with B2 the second antiderivative of B.
double TriangularPulse::convolve(const Basis& basis, double t) const {
    const double c = 4.0 / (eta_ * eta_);
    return c * (antiderivative(basis, t, 2) - 2.0 * antiderivative(basis, t - 0.5 * eta_, 2) +
                antiderivative(basis, t - eta_, 2));
}

double TriangularPulse::bin_average(const Basis& basis, double shift, double a, double b) const {
    if (!(b > a)) {
        throw std::invalid_argument("bin_average: empty bin");
    }
    const double c = 4.0 / (eta_ * eta_);
    auto f3 = [&](double t) {
        return antiderivative(basis, t, 3) - 2.0 * antiderivative(basis, t - 0.5 * eta_, 3) +
               antiderivative(basis, t - eta_, 3);
    };
    return c * (f3(b - shift) - f3(a - shift)) / (b - a);
}

}  // namespace albedo
