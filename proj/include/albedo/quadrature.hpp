// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <vector>
#include <span>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

namespace albedo::quad {

/// Gauss-Legendre rule on [-1, 1]. Nodes ascending; cached per order.
struct GaussRule {
    std::span<const double> nodes;
    std::span<const double> weights;
};
GaussRule gauss_legendre(int order);

/// Composite Gauss-Legendre over [a, b] with `panels` equal panels.
template <class F>
double composite_gauss(F&& f, double a, double b, int panels, int order) {
    const GaussRule rule = gauss_legendre(order);
    const double h = (b - a) / panels;
    double sum = 0.0;
    for (int p = 0; p < panels; ++p) {
        const double mid = a + (p + 0.5) * h;
        double panel = 0.0;
        for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
            panel += rule.weights[i] * f(mid + 0.5 * h * rule.nodes[i]);
        }
        sum += 0.5 * h * panel;
    }
    return sum;
}

struct AdaptiveResult {
    double value = 0.0;
    double error = 0.0;
    bool converged = true;
};

struct AdaptiveOptions {
    double rel_tol = 1e-10;
    double abs_tol = 1e-14;
    unsigned max_depth = 18;
};

struct KronrodPair {
    double value = 0.0;
    double error = 0.0;
};

/// One Gauss-Kronrod (7/15) pass over [a, b]; error = |K15 - G7| on [a, b].
template <class F>
KronrodPair kronrod15(F&& f, double a, double b) {
    using GK = boost::math::quadrature::gauss_kronrod<double, 15>;
    using G = boost::math::quadrature::gauss<double, 7>;
    const auto& x = GK::abscissa();
    const auto& wk = GK::weights();
    const auto& wg = G::weights();
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    const double f0 = f(mid);
    double k = f0 * wk[0];
    double g = f0 * wg[0];
    for (std::size_t i = 1; i < x.size(); ++i) {
        const double s = f(mid + half * x[i]) + f(mid - half * x[i]);
        k += s * wk[i];
        if (i % 2 == 0) {
            g += s * wg[i / 2];
        }
    }
    KronrodPair r;
    r.value = half * k;
    r.error = std::max(half * std::abs(k - g), 2.0 * std::numeric_limits<double>::epsilon() * std::abs(r.value));
    return r;
}

/// Globally adaptive Gauss-Kronrod (7/15) over the sorted breakpoints: the interval with the
/// largest error estimate is bisected until the summed error is below
/// max(abs_tol, rel_tol * |value|) or max_intervals is reached.
template <class F>
AdaptiveResult adaptive_breakpoints(F&& f, const std::vector<double>& points,
                                    const AdaptiveOptions& opt = {}) {
    struct Piece {
        double a, b, value, error;
        bool operator<(const Piece& o) const { return error < o.error; }
    };
    auto eval = [&](double a, double b) {
        const KronrodPair k = kronrod15(f, a, b);
        return Piece{a, b, k.value, k.error};
    };
    std::priority_queue<Piece> heap;
    double value = 0.0, error = 0.0;
    for (std::size_t i = 0; i + 1 < points.size(); ++i) {
        if (points[i + 1] > points[i]) {
            const Piece p = eval(points[i], points[i + 1]);
            value += p.value;
            error += p.error;
            heap.push(p);
        }
    }
    const std::size_t max_intervals =
        heap.size() + (std::size_t{1} << std::min(opt.max_depth, 12u));
    AdaptiveResult r;
    while (!heap.empty()) {
        if (error <= std::max(opt.abs_tol, opt.rel_tol * std::abs(value))) {
            break;
        }
        if (heap.size() >= max_intervals) {
            r.converged = false;
            break;
        }
        const Piece worst = heap.top();
        const double mid = 0.5 * (worst.a + worst.b);
        if (!(mid > worst.a && mid < worst.b)) {
            r.converged = false;
            break;
        }
        heap.pop();
        const Piece left = eval(worst.a, mid);
        const Piece right = eval(mid, worst.b);
        value += left.value + right.value - worst.value;
        error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
    }
    // Re-sum to shed the drift of the running updates.
    value = 0.0;
    error = 0.0;
    while (!heap.empty()) {
        value += heap.top().value;
        error += heap.top().error;
        heap.pop();
    }
    r.value = value;
    r.error = error;
    if (error <= std::max(opt.abs_tol, opt.rel_tol * std::abs(value)) * 10.0) {
        r.converged = true;
    }
    return r;
}

/// `adaptive_breakpoints` on [a, b].
template <class F>
AdaptiveResult adaptive(F&& f, double a, double b, const AdaptiveOptions& opt = {}) {
    if (a == b) {
        return {};
    }
    return adaptive_breakpoints(f, std::vector<double>{a, b}, opt);
}

/// `adaptive_breakpoints` started from `panels` equal sub-intervals, so that narrow features
/// cannot be missed by the first Kronrod pass.
template <class F>
AdaptiveResult adaptive_panels(F&& f, double a, double b, int panels,
                               const AdaptiveOptions& opt = {}) {
    std::vector<double> points(panels + 1);
    for (int p = 0; p <= panels; ++p) {
        points[p] = p == panels ? b : a + (b - a) * p / panels;
    }
    return adaptive_breakpoints(f, points, opt);
}

}  // namespace albedo::quad
