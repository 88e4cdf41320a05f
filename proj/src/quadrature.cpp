// SPDX-License-Identifier: Apache-2.0
#include "albedo/quadrature.hpp"

#include <map>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace albedo::quad {

namespace {

struct StoredRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};

StoredRule compute_rule(int n) {
    StoredRule rule;
    rule.nodes.resize(n);
    rule.weights.resize(n);
    for (int i = 0; i < (n + 1) / 2; ++i) {
        // Tricomi initial guess, then Newton on P_n.
        double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0;
            double p1 = x;
            for (int k = 2; k <= n; ++k) {
                const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            if (n == 1) {
                p0 = 1.0;
            }
            dp = n * (x * p1 - p0) / (x * x - 1.0);
            const double dx = p1 / dp;
            x -= dx;
            if (std::abs(dx) < 1e-16) {
                break;
            }
        }
        double p0 = 1.0;
        double p1 = x;
        for (int k = 2; k <= n; ++k) {
            const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
            p0 = p1;
            p1 = p2;
        }
        dp = n * (x * p1 - p0) / (x * x - 1.0);
        const double w = 2.0 / ((1.0 - x * x) * dp * dp);
        rule.nodes[i] = -x;
        rule.nodes[n - 1 - i] = x;
        rule.weights[i] = w;
        rule.weights[n - 1 - i] = w;
    }
    if (n % 2 == 1) {
        rule.nodes[n / 2] = 0.0;
    }
    return rule;
}

}  // namespace

GaussRule gauss_legendre(int order) {
    if (order < 1 || order > 512) {
        throw std::invalid_argument("gauss_legendre: order must be in [1, 512]");
    }
    static std::mutex mutex;
    static std::map<int, StoredRule> cache;
    std::lock_guard lock(mutex);
    auto it = cache.find(order);
    if (it == cache.end()) {
        it = cache.emplace(order, order == 1 ? StoredRule{{0.0}, {2.0}} : compute_rule(order)).first;
    }
    return {it->second.nodes, it->second.weights};
}

}  // namespace albedo::quad
