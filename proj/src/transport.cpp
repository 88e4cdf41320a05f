// SPDX-License-Identifier: Apache-2.0
#include "albedo/transport.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "albedo/errors.hpp"
#include "albedo/io.hpp"
#include "albedo/parallel.hpp"
#include "albedo/quadrature.hpp"
#include "albedo/random.hpp"

namespace albedo {

using std::numbers::pi;

// ---------------------------------------------------------------------------------------------
// Pulse and grids

SourcePulse SourcePulse::triangle(double eta, double horizon) {
    SourcePulse p;
    p.shape = Shape::Triangle;
    p.width = eta;
    p.horizon = horizon;
    return p;
}

SourcePulse SourcePulse::box(double width, double horizon) {
    SourcePulse p;
    p.shape = Shape::Box;
    p.width = width;
    p.horizon = horizon;
    return p;
}

void SourcePulse::validate() const {
    if (!(width > 0.0)) {
        throw ConfigError("pulse width must be positive");
    }
    if (!(horizon > 2.0)) {
        throw ConfigError("measurement horizon T must exceed the diameter 2");
    }
    if (!(width < horizon)) {
        throw ConfigError("pulse width must be smaller than the horizon");
    }
}

double SourcePulse::cdf(double t) const {
    if (t <= 0.0) {
        return 0.0;
    }
    if (t >= width) {
        return 1.0;
    }
    if (shape == Shape::Box) {
        return t / width;
    }
    const double h = 0.5 * width;
    if (t <= h) {
        return 2.0 * t * t / (width * width);
    }
    const double r = width - t;
    return 1.0 - 2.0 * r * r / (width * width);
}

double SourcePulse::quantile(double p) const {
    p = std::clamp(p, 0.0, 1.0);
    if (shape == Shape::Box) {
        return p * width;
    }
    if (p <= 0.5) {
        return width * std::sqrt(0.5 * p);
    }
    return width - width * std::sqrt(0.5 * (1.0 - p));
}

std::vector<double> SourcePulse::kinks() const {
    if (shape == Shape::Box) {
        return {0.0, width};
    }
    return {0.0, 0.5 * width, width};
}

TimeGrid TimeGrid::covering(double horizon, double dt) {
    if (!(dt > 0.0) || !(horizon > 0.0)) {
        throw ConfigError("time grid needs dt > 0 and a positive horizon");
    }
    TimeGrid g;
    g.dt = dt;
    g.bins = static_cast<int>(std::ceil(horizon / dt - 1e-9));
    return g;
}

AcquisitionGeometry AcquisitionGeometry::all_pairs(int dim, int n_nodes) {
    AcquisitionGeometry g;
    const Domain d(dim);
    g.dim = dim;
    g.nodes = boundary_grid(d, n_nodes);
    g.cell_measure = boundary_cell_measure(d, n_nodes);
    for (int s = 0; s < n_nodes; ++s) {
        for (int t = 0; t < n_nodes; ++t) {
            if (s != t) {
                g.pairs.emplace_back(s, t);
            }
        }
    }
    return g;
}

AcquisitionGeometry AcquisitionGeometry::line_pairs(int dim, int n_nodes) {
    AcquisitionGeometry g = all_pairs(dim, n_nodes);
    g.pairs.clear();
    for (int s = 0; s < n_nodes; ++s) {
        for (int t = s + 1; t < n_nodes; ++t) {
            g.pairs.emplace_back(s, t);
        }
    }
    return g;
}

AcquisitionGeometry AcquisitionGeometry::from_sources(int dim, int n_nodes,
                                                      const std::vector<int>& sources) {
    AcquisitionGeometry g = all_pairs(dim, n_nodes);
    g.pairs.clear();
    for (int s : sources) {
        if (s < 0 || s >= n_nodes) {
            throw ConfigError("source index out of range");
        }
        for (int t = 0; t < n_nodes; ++t) {
            if (t != s) {
                g.pairs.emplace_back(s, t);
            }
        }
    }
    return g;
}

AcquisitionGeometry AcquisitionGeometry::great_circle(int n_nodes, const Vec3& e1, const Vec3& e2) {
    if (n_nodes < 4) {
        throw ConfigError("great circle needs at least 4 nodes");
    }
    AcquisitionGeometry g;
    g.dim = 3;
    g.cell_measure = 2.0 * pi / n_nodes;
    for (int k = 0; k < n_nodes; ++k) {
        const double a = 2.0 * pi * k / n_nodes;
        g.nodes.push_back({normalized(e1 * std::cos(a) + e2 * std::sin(a))});
    }
    for (int s = 0; s < n_nodes; ++s) {
        for (int t = s + 1; t < n_nodes; ++t) {
            g.pairs.emplace_back(s, t);
        }
    }
    return g;
}

std::vector<int> AcquisitionGeometry::sources() const {
    std::set<int> s;
    for (const auto& p : pairs) {
        s.insert(p.first);
    }
    return {s.begin(), s.end()};
}

void AcquisitionGeometry::validate() const {
    if (dim != 2 && dim != 3) {
        throw ConfigError("dimension must be 2 or 3");
    }
    if (nodes.size() < 4) {
        throw ConfigError("need at least 4 boundary nodes");
    }
    const int n = static_cast<int>(nodes.size());
    for (const auto& [s, d] : pairs) {
        if (s < 0 || s >= n || d < 0 || d >= n || s == d) {
            throw ConfigError("invalid (source, detector) pair");
        }
    }
    if (detector_subsamples < 1) {
        throw ConfigError("detector_subsamples must be >= 1");
    }
    if (detector_subsamples > 1 && dim != 2) {
        throw ConfigError("detector arc averaging is available for n=2 only");
    }
}

// ---------------------------------------------------------------------------------------------
// Traces

double PairTrace::total(int k) const {
    double s = 0.0;
    for (const auto& c : channels) {
        s += c[k];
    }
    return s;
}

double PairTrace::total_error(int k) const {
    double s = 0.0;
    for (const auto& e : errors) {
        s += e[k] * e[k];
    }
    return std::sqrt(s);
}

double PairTrace::ballistic_amplitude() const {
    double a = 0.0;
    for (const auto& b : ballistic) {
        a += b.amplitude;
    }
    return a;
}

const PairTrace* MeasurementSet::find(int source, int detector) const {
    for (const auto& t : traces) {
        if (t.source == source && t.detector == detector) {
            return &t;
        }
    }
    return nullptr;
}

std::vector<std::string> MeasurementSet::channel_names() const {
    if (method == "mc") {
        return {"0", "1", "2", "3+"};
    }
    std::vector<std::string> out;
    for (int k = 0; k <= order; ++k) {
        out.push_back(std::to_string(k));
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Deterministic synthesis

namespace {

// Piecewise Chebyshev interpolant on [0, r_max] with `nodes` first-kind points per panel.
class RadialInterpolant {
  public:
    template <class F>
    RadialInterpolant(F&& f, double r_max, double panel_width, int nodes) : p_(nodes) {
        panels_ = std::max(1, static_cast<int>(std::ceil(r_max / panel_width - 1e-12)));
        width_ = r_max / panels_;
        x_.resize(p_);
        w_.resize(p_);
        for (int i = 0; i < p_; ++i) {
            const double a = (2.0 * i + 1.0) * pi / (2.0 * p_);
            x_[i] = std::cos(a);
            w_[i] = (i % 2 == 0 ? 1.0 : -1.0) * std::sin(a);
        }
        values_.resize(static_cast<std::size_t>(panels_) * p_);
        for (int k = 0; k < panels_; ++k) {
            const double mid = (k + 0.5) * width_, half = 0.5 * width_;
            for (int i = 0; i < p_; ++i) {
                values_[static_cast<std::size_t>(k) * p_ + i] = f(mid + half * x_[i]);
            }
        }
    }

    double operator()(double r) const {
        const int k = std::clamp(static_cast<int>(r / width_), 0, panels_ - 1);
        const double mid = (k + 0.5) * width_, half = 0.5 * width_;
        const double x = (r - mid) / half;
        const double* f = &values_[static_cast<std::size_t>(k) * p_];
        double num = 0.0, den = 0.0;
        for (int i = 0; i < p_; ++i) {
            const double d = x - x_[i];
            if (d == 0.0) {
                return f[i];
            }
            const double c = w_[i] / d;
            num += c * f[i];
            den += c;
        }
        return num / den;
    }

    double panel_edge(int k) const { return k * width_; }
    int panels() const { return panels_; }

  private:
    int p_;
    int panels_ = 1;
    double width_ = 1.0;
    std::vector<double> x_, w_, values_;
};

struct DetectorSample {
    BoundaryPoint point;
    double weight;
};

std::vector<DetectorSample> detector_samples(const AcquisitionGeometry& g, int detector) {
    const BoundaryPoint& node = g.nodes[detector];
    if (g.detector_subsamples <= 1) {
        return {{node, 1.0}};
    }
    const double centre = std::atan2(node.position.y, node.position.x);
    const double half = 0.5 * g.cell_measure;
    const quad::GaussRule rule = quad::gauss_legendre(g.detector_subsamples);
    std::vector<DetectorSample> out;
    for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
        const double a = centre + half * rule.nodes[i];
        out.push_back({{{std::cos(a), std::sin(a), 0.0}}, 0.5 * rule.weights[i]});
    }
    return out;
}

// Adds weight * integral of gamma(tau) w_j(tau) d tau to channel[j - first], where
// w_j(tau) = (cdf(b_j - tau) - cdf(a_j - tau)) / dt and gamma = 2 h(r) dr / d tau with
// tau = t0 + r^2.
void integrate_channel(const RadialInterpolant& h, double t0, double tau_max, const SourcePulse& pulse,
                       const TimeGrid& time, int first, int end, double weight,
                       const quad::GaussRule& rule, std::vector<double>& channel) {
    if (!(tau_max > t0)) {
        return;
    }
    std::vector<double> cuts{t0, tau_max};
    for (int k = 1; k < h.panels(); ++k) {
        const double r = h.panel_edge(k);
        cuts.push_back(t0 + r * r);
    }
    const auto kinks = pulse.kinks();
    for (int j = first; j <= end; ++j) {
        for (double kink : kinks) {
            const double tau = time.start(j) - kink;
            if (tau > t0 && tau < tau_max) {
                cuts.push_back(tau);
            }
        }
    }
    std::sort(cuts.begin(), cuts.end());
    const double dt = time.dt;
    for (std::size_t c = 0; c + 1 < cuts.size(); ++c) {
        const double ta = cuts[c], tb = cuts[c + 1];
        if (!(tb > ta)) {
            continue;
        }
        const double ra = std::sqrt(ta - t0), rb = std::sqrt(tb - t0);
        const double mid = 0.5 * (ra + rb), half = 0.5 * (rb - ra);
        const int jlo = std::max(first, static_cast<int>(std::floor(ta / dt)));
        const int jhi = std::min(end - 1, static_cast<int>(std::ceil((tb + pulse.width) / dt)));
        for (std::size_t i = 0; i < rule.nodes.size(); ++i) {
            const double r = mid + half * rule.nodes[i];
            const double tau = t0 + r * r;
            const double g = 2.0 * h(r) * half * rule.weights[i] * weight;
            if (g == 0.0) {
                continue;
            }
            for (int j = jlo; j <= jhi; ++j) {
                const double a = time.start(j), b = a + dt;
                const double wj = (pulse.cdf(b - tau) - pulse.cdf(a - tau)) / dt;
                if (wj != 0.0) {
                    channel[j - first] += g * wj;
                }
            }
        }
    }
}

}  // namespace

MeasurementSet albedo_truncated(const OpticalField& field, const SourcePulse& pulse,
                                const AcquisitionGeometry& geometry, const TimeGrid& time,
                                const SynthesisOptions& options) {
    geometry.validate();
    pulse.validate();
    if (options.order < 0 || options.order > 2) {
        throw ConfigError("kernel synthesis order must be 0, 1 or 2");
    }
    if (options.order == 2 && geometry.dim != 2) {
        throw ConfigError("order 2 kernel synthesis is available for n=2 only");
    }
    if (field.domain.dim() != geometry.dim) {
        throw ConfigError("field and acquisition dimensions differ");
    }
    MeasurementSet m;
    m.method = "kernel";
    m.order = options.order;
    m.geometry = geometry;
    m.pulse = pulse;
    m.time = time;
    m.traces.resize(geometry.pairs.size());
    const quad::GaussRule rule = quad::gauss_legendre(6);
    const bool scattering = !field.scattering_free();
    std::atomic<long> unconverged{0};

    parallel_for(geometry.pairs.size(), [&](std::size_t idx) {
        const auto [s, d] = geometry.pairs[idx];
        const BoundaryPoint& src = geometry.nodes[s];
        const auto samples = detector_samples(geometry, d);
        PairTrace tr;
        tr.source = s;
        tr.detector = d;
        double t_min = 1e300, t_max = 0.0;
        for (const auto& smp : samples) {
            const double t0 = distance(src.position, smp.point.position);
            t_min = std::min(t_min, t0);
            t_max = std::max(t_max, t0);
        }
        int first = 0, end = time.bins;
        if (options.window > 0.0) {
            first = std::clamp(static_cast<int>(std::floor(t_min / time.dt)), 0, time.bins);
            end = std::clamp(static_cast<int>(std::ceil((t_max + options.window) / time.dt)), first,
                             time.bins);
        }
        tr.first_bin = first;
        const int n = end - first;
        tr.channels.assign(options.order + 1, std::vector<double>(n, 0.0));
        const double tau_end = time.start(end);
        long local_unconverged = 0;
        auto add_ballistic = [&](const BallisticPulse& b) {
            for (int j = first; j < end; ++j) {
                const double a = time.start(j);
                tr.channels[0][j - first] +=
                    b.amplitude * (pulse.cdf(a + time.dt - b.arrival_time) - pulse.cdf(a - b.arrival_time)) /
                    time.dt;
            }
        };
        if (geometry.detector_subsamples > 1) {
            // The ballistic channel is cheap and sharp in time: average it on a finer arc rule.
            const double half = 0.5 * geometry.cell_measure;
            const double centre = std::atan2(geometry.nodes[d].position.y, geometry.nodes[d].position.x);
            constexpr int panels = 64;
            const quad::GaussRule r8 = quad::gauss_legendre(8);
            for (int k = 0; k < panels; ++k) {
                const double lo = centre - half + 2.0 * half * k / panels;
                const double h = half / panels;
                for (std::size_t i = 0; i < r8.nodes.size(); ++i) {
                    const double a = lo + h * (1.0 + r8.nodes[i]);
                    BallisticPulse b = gamma0(src, {{std::cos(a), std::sin(a), 0.0}}, field);
                    b.amplitude *= r8.weights[i] * h / (2.0 * half);
                    add_ballistic(b);
                }
            }
        }
        for (const auto& smp : samples) {
            BallisticPulse b = gamma0(src, smp.point, field);
            b.amplitude *= smp.weight;
            tr.ballistic.push_back(b);
            if (geometry.detector_subsamples <= 1) {
                add_ballistic(b);
            }
            if (options.order == 0 || !scattering || !(tau_end > b.arrival_time)) {
                continue;
            }
            const double t0 = b.arrival_time;
            const double r_max = std::sqrt(tau_end - t0);
            RadialInterpolant h1(
                [&](double r) {
                    const KernelValue kv = gamma1_excess(r * r, src, smp.point, field, options.gamma1_quad);
                    if (!kv.converged) {
                        ++local_unconverged;
                    }
                    return r * kv.value;
                },
                r_max, options.panel_width, options.panel_nodes);
            integrate_channel(h1, t0, tau_end, pulse, time, first, end, smp.weight, rule, tr.channels[1]);
            if (options.order >= 2) {
                RadialInterpolant h2(
                    [&](double r) {
                        return r * gamma2_excess(r * r, src, smp.point, field, options.gamma2_quad).value;
                    },
                    r_max, options.panel_width, options.gamma2_panel_nodes);
                integrate_channel(h2, t0, tau_end, pulse, time, first, end, smp.weight, rule,
                                  tr.channels[2]);
            }
        }
        unconverged += local_unconverged;
        m.traces[idx] = std::move(tr);
    });
    m.unconverged = unconverged.load();
    return m;
}

// ---------------------------------------------------------------------------------------------
// Monte Carlo

namespace {

class NodeLocator {
  public:
    explicit NodeLocator(const AcquisitionGeometry& g) : dim_(g.dim), nodes_(g.nodes) {
        const auto standard = boundary_grid(Domain(g.dim), static_cast<int>(g.nodes.size()));
        for (std::size_t i = 0; i < standard.size(); ++i) {
            if (distance(standard[i].position, g.nodes[i].position) > 1e-12) {
                throw ConfigError("Monte Carlo tallies need the standard boundary grid");
            }
        }
    }

    int operator()(const Vec3& x) const {
        const int n = static_cast<int>(nodes_.size());
        if (dim_ == 2) {
            double a = std::atan2(x.y, x.x);
            if (a < 0.0) {
                a += 2.0 * pi;
            }
            const long k = std::lround(a / (2.0 * pi / n));
            return static_cast<int>(k % n);
        }
        int best = 0;
        double best_dot = -2.0;
        for (int i = 0; i < n; ++i) {
            const double c = dot(x, nodes_[i].position);
            if (c > best_dot) {
                best_dot = c;
                best = i;
            }
        }
        return best;
    }

  private:
    int dim_;
    std::vector<BoundaryPoint> nodes_;
};

struct Tally {
    std::vector<double> sum;
    std::vector<double> sumsq;
    explicit Tally(std::size_t n = 0) : sum(n, 0.0), sumsq(n, 0.0) {}
};

constexpr int kMcChannels = 4;

double exit_distance(const Vec3& p, const Vec3& v) {
    const double b = dot(p, v);
    const double c = norm2(p) - 1.0;
    const double disc = std::max(0.0, b * b - c);
    return -b + std::sqrt(disc);
}

struct McContext {
    const OpticalField& field;
    const SourcePulse& pulse;
    const McConfig& mc;
    const TimeGrid& time;
    const NodeLocator& locate;
    int dim;
    int n_nodes;
    double emitted;     // integral of S |nu.v| over the inward hemisphere
    double profile_max;
    double phase_total;
    double majorant;
};

Vec3 sample_emission(const McContext& c, const Vec3& x, StreamRng& rng) {
    const Vec3 inward = x * -1.0;
    for (;;) {
        Vec3 v;
        if (c.dim == 2) {
            const double s = 2.0 * rng.uniform() - 1.0;
            const double co = std::sqrt(std::max(0.0, 1.0 - s * s));
            const Vec3 t{-x.y, x.x, 0.0};
            v = inward * co + t * s;
        } else {
            const double co = std::sqrt(rng.uniform());
            const double si = std::sqrt(std::max(0.0, 1.0 - co * co));
            const double ph = 2.0 * pi * rng.uniform();
            const Vec3 e1 = any_orthogonal(inward);
            const Vec3 e2 = cross(inward, e1);
            v = inward * co + e1 * (si * std::cos(ph)) + e2 * (si * std::sin(ph));
        }
        v = normalized(v);
        if (rng.uniform() * c.profile_max <= c.field.source.value(x, v)) {
            return v;
        }
    }
}

void run_particle(const McContext& c, const Vec3& source, StreamRng& rng, Tally& tally) {
    const double horizon = c.time.horizon();
    double t = c.pulse.quantile(rng.uniform());
    Vec3 p = source;
    Vec3 v = sample_emission(c, source, rng);
    double w = 1.0;
    int order = 0;
    bool on_boundary = true;
    for (;;) {
        const double sb = on_boundary ? -2.0 * dot(p, v) : exit_distance(p, v);
        if (!(sb > 0.0)) {
            return;
        }
        double s_event = sb;
        bool scatter = false;
        if (c.majorant > 0.0) {
            double travelled = 0.0;
            for (;;) {
                travelled += -std::log(rng.uniform_open0()) / c.majorant;
                if (travelled >= sb) {
                    break;
                }
                if (t + travelled >= horizon) {
                    return;
                }
                const Vec3 y = p + v * travelled;
                if (rng.uniform() * c.majorant < c.field.sigma_p(y)) {
                    scatter = true;
                    s_event = travelled;
                    break;
                }
            }
        }
        if (t + s_event >= horizon) {
            return;
        }
        const Vec3 q = p + v * s_event;
        double exponent = c.field.sigma_line_integral(p, q);
        if (c.phase_total > 0.0) {
            exponent -= c.phase_total * c.field.k0_line_integral(p, q);
        }
        w *= std::exp(-exponent);
        t += s_event;
        if (!scatter) {
            const Vec3 x = normalized(q);
            const int det = c.locate(x);
            const int ch = std::min(order, kMcChannels - 1);
            const int bin = std::min(static_cast<int>(t / c.time.dt), c.time.bins - 1);
            const double contrib = c.emitted * w * c.field.detector.value(x, v);
            const std::size_t k =
                (static_cast<std::size_t>(det) * kMcChannels + ch) * c.time.bins + bin;
            tally.sum[k] += contrib;
            tally.sumsq[k] += contrib * contrib;
            return;
        }
        ++order;
        if (order > c.mc.max_order) {
            return;
        }
        const double u1 = rng.uniform(), u2 = rng.uniform();
        v = normalized(c.field.phase->sample(v, u1, u2, c.dim));
        p = q;
        on_boundary = false;
        while (w < c.mc.roulette_weight) {
            if (rng.uniform() < 0.5) {
                return;
            }
            w *= 2.0;
        }
    }
}

}  // namespace

MeasurementSet simulate_albedo_mc(const OpticalField& field, const SourcePulse& pulse,
                                  const McConfig& mc, const AcquisitionGeometry& geometry,
                                  const TimeGrid& time) {
    geometry.validate();
    pulse.validate();
    if (mc.particles == 0) {
        throw ConfigError("Monte Carlo needs at least one particle");
    }
    if (mc.block_size == 0 || mc.max_order < 0) {
        throw ConfigError("invalid Monte Carlo block size or order cap");
    }
    if (field.domain.dim() != geometry.dim) {
        throw ConfigError("field and acquisition dimensions differ");
    }
    const AdmissibilityReport adm = validate_admissible(field, geometry.dim == 2 ? 48 : 20);
    if (!adm.passed) {
        throw ConfigError("field is not admissible: " +
                          (adm.violations.empty() ? std::string("?") : adm.violations.front()));
    }
    const NodeLocator locate(geometry);
    const int dim = geometry.dim;
    const int n_nodes = static_cast<int>(geometry.nodes.size());
    const BoundaryProfile& S = field.source;
    const double i1 = dim == 2 ? 2.0 : pi;
    const double i2 = dim == 2 ? 0.5 * pi : 2.0 * pi / 3.0;
    const double phase_total = field.scattering_free() ? 0.0 : field.phase->total(dim);
    McContext ctx{field,
                  pulse,
                  mc,
                  time,
                  locate,
                  dim,
                  n_nodes,
                  S.base * i1 + S.cos_coeff * i2,
                  S.base + std::max(S.cos_coeff, 0.0),
                  phase_total,
                  phase_total * field.k0->upper_bound()};
    if (!(ctx.profile_max > 0.0)) {
        throw ConfigError("source profile must be positive somewhere");
    }

    MeasurementSet m;
    m.method = "mc";
    m.order = kMcChannels - 1;
    m.geometry = geometry;
    m.geometry.detector_subsamples = 1;
    m.pulse = pulse;
    m.time = time;
    m.seed = mc.seed;
    m.particles = mc.particles;
    m.traces.resize(geometry.pairs.size());

    const std::size_t cells = static_cast<std::size_t>(n_nodes) * kMcChannels * time.bins;
    const std::uint64_t n_blocks = (mc.particles + mc.block_size - 1) / mc.block_size;
    const std::uint64_t wave = std::max<std::uint64_t>(1, 2 * static_cast<std::uint64_t>(thread_count()));
    const double norm_n = static_cast<double>(mc.particles);
    const double scale = 1.0 / (time.dt * geometry.cell_measure);

    for (int src : geometry.sources()) {
        const Vec3 x_src = geometry.nodes[src].position;
        const std::uint64_t src_key = hash_combine(mc.seed, static_cast<std::uint64_t>(src));
        Tally total(cells);
        for (std::uint64_t w0 = 0; w0 < n_blocks; w0 += wave) {
            const std::uint64_t w1 = std::min(n_blocks, w0 + wave);
            std::vector<Tally> blocks(w1 - w0);
            parallel_for(w1 - w0, [&](std::size_t b) {
                Tally t(cells);
                const std::uint64_t begin = (w0 + b) * mc.block_size;
                const std::uint64_t end = std::min(mc.particles, begin + mc.block_size);
                for (std::uint64_t i = begin; i < end; ++i) {
                    StreamRng rng(hash_combine(src_key, i));
                    run_particle(ctx, x_src, rng, t);
                }
                blocks[b] = std::move(t);
            });
            for (const Tally& t : blocks) {
                for (std::size_t k = 0; k < cells; ++k) {
                    total.sum[k] += t.sum[k];
                    total.sumsq[k] += t.sumsq[k];
                }
            }
        }
        for (std::size_t idx = 0; idx < geometry.pairs.size(); ++idx) {
            const auto [s, d] = geometry.pairs[idx];
            if (s != src) {
                continue;
            }
            PairTrace tr;
            tr.source = s;
            tr.detector = d;
            tr.first_bin = 0;
            tr.channels.assign(kMcChannels, std::vector<double>(time.bins, 0.0));
            tr.errors.assign(kMcChannels, std::vector<double>(time.bins, 0.0));
            for (int ch = 0; ch < kMcChannels; ++ch) {
                for (int j = 0; j < time.bins; ++j) {
                    const std::size_t k = (static_cast<std::size_t>(d) * kMcChannels + ch) * time.bins + j;
                    const double mean = total.sum[k] / norm_n;
                    const double var =
                        mc.particles > 1
                            ? std::max(0.0, total.sumsq[k] / norm_n - mean * mean) / (norm_n - 1.0)
                            : 0.0;
                    tr.channels[ch][j] = mean * scale;
                    tr.errors[ch][j] = std::sqrt(var) * scale;
                }
            }
            m.traces[idx] = std::move(tr);
        }
    }
    return m;
}

// ---------------------------------------------------------------------------------------------
// Operator assembly

namespace {

AlbedoMatrix matrix_from_traces(const MeasurementSet& m, const AcquisitionGeometry& g, const TimeGrid& time,
                                double eta, const std::vector<int>& sources) {
    AlbedoMatrix a;
    a.time = time;
    a.source_bins = std::max(1, static_cast<int>(std::ceil(eta / time.dt - 1e-9)));
    a.n_nodes = static_cast<int>(g.nodes.size());
    a.cell_measure = g.cell_measure;
    a.sources = sources;
    a.lags.assign(sources.size() * static_cast<std::size_t>(a.n_nodes) * time.bins, 0.0);
    std::map<int, int> slot;
    for (std::size_t i = 0; i < sources.size(); ++i) {
        slot[sources[i]] = static_cast<int>(i);
    }
    for (const auto& tr : m.traces) {
        const int sl = slot.at(tr.source);
        double* dst = &a.lags[(static_cast<std::size_t>(sl) * a.n_nodes + tr.detector) * time.bins];
        for (int k = 0; k < tr.size(); ++k) {
            dst[tr.first_bin + k] = tr.total(k);
        }
    }
    return a;
}

void check_budget(const AcquisitionGeometry& g, const TimeGrid& time, std::size_t budget) {
    const std::size_t need = g.sources().size() * g.nodes.size() * static_cast<std::size_t>(time.bins) *
                             sizeof(double) * 2;
    if (need > budget) {
        throw BudgetExceeded("albedo matrix needs " + std::to_string(need) + " bytes (" +
                             std::to_string(g.sources().size()) + " sources x " +
                             std::to_string(g.nodes.size()) + " detectors x " + std::to_string(time.bins) +
                             " lags), budget is " + std::to_string(budget));
    }
}

}  // namespace

double AlbedoMatrix::entry(int i, int detector, int j, int slot) const {
    if (j < 0 || j >= source_bins || i < j || i >= time.bins) {
        return 0.0;
    }
    return lag(slot, detector, i - j);
}

std::size_t AlbedoMatrix::dense_bytes() const {
    return static_cast<std::size_t>(time.bins) * n_nodes * source_bins * sources.size() * sizeof(double);
}

AlbedoMatrix albedo_matrix(const OpticalField& field, const AcquisitionGeometry& geometry,
                           const TimeGrid& time, double eta, const SynthesisOptions& options,
                           std::size_t budget_bytes) {
    check_budget(geometry, time, budget_bytes);
    // The source node's own cell is left empty: the kernels are singular at x = x'.
    SynthesisOptions opt = options;
    opt.window = 0.0;
    const SourcePulse box = SourcePulse::box(time.dt, std::max(time.horizon(), 2.0 + 2.0 * time.dt));
    const MeasurementSet m = albedo_truncated(field, box, geometry, time, opt);
    return matrix_from_traces(m, geometry, time, eta, geometry.sources());
}

AlbedoMatrix albedo_matrix(const OpticalField& field, const AcquisitionGeometry& geometry,
                           const TimeGrid& time, double eta, const McConfig& mc,
                           std::size_t budget_bytes) {
    check_budget(geometry, time, budget_bytes);
    const SourcePulse box = SourcePulse::box(time.dt, std::max(time.horizon(), 2.0 + 2.0 * time.dt));
    AcquisitionGeometry g = geometry;
    g.pairs.clear();
    for (int s : geometry.sources()) {
        for (int d = 0; d < static_cast<int>(g.nodes.size()); ++d) {
            if (d != s) {
                g.pairs.emplace_back(s, d);
            }
        }
    }
    const MeasurementSet m = simulate_albedo_mc(field, box, mc, g, time);
    return matrix_from_traces(m, g, time, eta, g.sources());
}

namespace {

void check_same_grid(const AlbedoMatrix& a, const AlbedoMatrix* b) {
    if (b && (a.time.bins != b->time.bins || a.n_nodes != b->n_nodes || a.sources != b->sources ||
              a.source_bins != b->source_bins)) {
        throw DataMismatch("albedo matrices have different grids");
    }
}

double slot_norm(const AlbedoMatrix& a, const AlbedoMatrix* b, int slot) {
    const double cell = a.time.dt * a.cell_measure;
    // Column sums for input bin j drop the last j lags; the maximum is over j.
    std::vector<double> per_lag(a.time.bins, 0.0);
    for (int d = 0; d < a.n_nodes; ++d) {
        for (int l = 0; l < a.time.bins; ++l) {
            const double x = a.lag(slot, d, l) - (b ? b->lag(slot, d, l) : 0.0);
            per_lag[l] += std::abs(x);
        }
    }
    double best = 0.0;
    for (int j = 0; j < a.source_bins; ++j) {
        double s = 0.0;
        for (int l = 0; l + j < a.time.bins; ++l) {
            s += per_lag[l];
        }
        best = std::max(best, s * cell);
    }
    return best;
}

double column_norm_max(const AlbedoMatrix& a, const AlbedoMatrix* b) {
    check_same_grid(a, b);
    double best = 0.0;
    for (std::size_t sl = 0; sl < a.sources.size(); ++sl) {
        best = std::max(best, slot_norm(a, b, static_cast<int>(sl)));
    }
    return best;
}

}  // namespace

double l1_column_difference_norm(const AlbedoMatrix& a, const AlbedoMatrix& b, int slot) {
    check_same_grid(a, &b);
    if (slot < 0 || slot >= static_cast<int>(a.sources.size())) {
        throw std::out_of_range("albedo matrix slot");
    }
    return slot_norm(a, &b, slot);
}

double l1_operator_norm(const AlbedoMatrix& a) { return column_norm_max(a, nullptr); }

double l1_difference_norm(const AlbedoMatrix& a, const AlbedoMatrix& b) { return column_norm_max(a, &b); }

// ---------------------------------------------------------------------------------------------
// Serialization

void write_measurements_csv(std::ostream& out, const MeasurementSet& m) {
    out << "# " << kToolVersion << " config_hash=" << m.config_hash << '\n';
    out << "t,det_index,src_index,value,stderr,order\n";
    const auto names = m.channel_names();
    for (const auto& tr : m.traces) {
        const std::string ids = "," + std::to_string(tr.detector) + "," + std::to_string(tr.source) + ",";
        for (const auto& b : tr.ballistic) {
            out << format_double(b.arrival_time) << ids << format_double(b.amplitude) << ",0,delta\n";
        }
        for (std::size_t c = 0; c < tr.channels.size(); ++c) {
            for (int k = 0; k < tr.size(); ++k) {
                const double err = tr.errors.empty() ? 0.0 : tr.errors[c][k];
                out << format_double(m.time.centre(tr.first_bin + k)) << ids << format_double(tr.channels[c][k])
                    << ',' << format_double(err) << ',' << names[c] << '\n';
            }
        }
    }
}

nlohmann::json measurement_metadata(const MeasurementSet& m) {
    nlohmann::json j;
    j["tool_version"] = kToolVersion;
    j["method"] = m.method;
    j["order"] = m.order;
    j["dim"] = m.geometry.dim;
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : m.geometry.nodes) {
        nodes.push_back({n.position.x, n.position.y, n.position.z});
    }
    j["nodes"] = nodes;
    j["cell_measure"] = m.geometry.cell_measure;
    j["detector_subsamples"] = m.geometry.detector_subsamples;
    j["pulse"] = {{"shape", m.pulse.shape == SourcePulse::Shape::Box ? "box" : "triangle"},
                  {"eta", m.pulse.width},
                  {"horizon", m.pulse.horizon}};
    j["time"] = {{"dt", m.time.dt}, {"bins", m.time.bins}};
    j["seed"] = m.seed;
    j["particles"] = m.particles;
    j["config_hash"] = m.config_hash;
    j["pairs"] = m.traces.size();
    j["channels"] = m.channel_names();
    j["unconverged_kernel_evaluations"] = m.unconverged;
    return j;
}

MeasurementSet read_measurements(std::istream& csv, const nlohmann::json& meta) {
    MeasurementSet m;
    try {
        m.method = meta.at("method").get<std::string>();
        m.order = meta.at("order").get<int>();
        m.geometry.dim = meta.at("dim").get<int>();
        for (const auto& p : meta.at("nodes")) {
            m.geometry.nodes.push_back({{p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>()}});
        }
        m.geometry.cell_measure = meta.at("cell_measure").get<double>();
        m.geometry.detector_subsamples = meta.value("detector_subsamples", 1);
        const auto& pj = meta.at("pulse");
        m.pulse.shape = pj.at("shape").get<std::string>() == "box" ? SourcePulse::Shape::Box
                                                                   : SourcePulse::Shape::Triangle;
        m.pulse.width = pj.at("eta").get<double>();
        m.pulse.horizon = pj.at("horizon").get<double>();
        m.time.dt = meta.at("time").at("dt").get<double>();
        m.time.bins = meta.at("time").at("bins").get<int>();
        m.seed = meta.value("seed", std::uint64_t{0});
        m.particles = meta.value("particles", std::uint64_t{0});
        m.config_hash = meta.value("config_hash", std::string{});
        m.unconverged = meta.value("unconverged_kernel_evaluations", 0L);
    } catch (const nlohmann::json::exception& e) {
        throw DataMismatch(std::string("measurement metadata: ") + e.what());
    }
    const auto names = m.channel_names();
    std::map<std::pair<int, int>, std::size_t> index;
    struct Row {
        int bin;
        int channel;
        double value;
        double err;
    };
    std::vector<std::vector<Row>> rows;
    std::string line;
    while (std::getline(csv, line) && line.rfind('#', 0) == 0) {
    }
    if (!csv || line.rfind("t,det_index,src_index,value,stderr,order", 0) != 0) {
        throw DataMismatch("traces csv: missing header");
    }
    while (std::getline(csv, line)) {
        if (line.empty()) {
            continue;
        }
        const auto f = split_csv_line(line);
        if (f.size() != 6) {
            throw DataMismatch("traces csv: expected 6 fields: " + line);
        }
        const double t = std::stod(f[0]);
        const int det = std::stoi(f[1]);
        const int src = std::stoi(f[2]);
        const double value = std::stod(f[3]);
        const double err = std::stod(f[4]);
        auto [it, inserted] = index.try_emplace({src, det}, m.traces.size());
        if (inserted) {
            PairTrace tr;
            tr.source = src;
            tr.detector = det;
            m.traces.push_back(tr);
            rows.emplace_back();
        }
        PairTrace& tr = m.traces[it->second];
        if (f[5] == "delta") {
            tr.ballistic.push_back({t, value});
            continue;
        }
        const auto ch = std::find(names.begin(), names.end(), f[5]);
        if (ch == names.end()) {
            throw DataMismatch("traces csv: unknown order label " + f[5]);
        }
        const int bin = static_cast<int>(std::lround(t / m.time.dt - 0.5));
        rows[it->second].push_back({bin, static_cast<int>(ch - names.begin()), value, err});
    }
    for (std::size_t i = 0; i < m.traces.size(); ++i) {
        PairTrace& tr = m.traces[i];
        if (rows[i].empty()) {
            continue;
        }
        int lo = rows[i].front().bin, hi = lo;
        for (const auto& r : rows[i]) {
            lo = std::min(lo, r.bin);
            hi = std::max(hi, r.bin);
        }
        if (lo < 0 || hi >= m.time.bins) {
            throw DataMismatch("traces csv: time outside the grid");
        }
        tr.first_bin = lo;
        tr.channels.assign(names.size(), std::vector<double>(hi - lo + 1, 0.0));
        if (m.method == "mc") {
            tr.errors.assign(names.size(), std::vector<double>(hi - lo + 1, 0.0));
        }
        for (const auto& r : rows[i]) {
            tr.channels[r.channel][r.bin - lo] = r.value;
            if (!tr.errors.empty()) {
                tr.errors[r.channel][r.bin - lo] = r.err;
            }
        }
    }
    for (const auto& tr : m.traces) {
        m.geometry.pairs.emplace_back(tr.source, tr.detector);
    }
    return m;
}

}  // namespace albedo
