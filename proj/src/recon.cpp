// SPDX-License-Identifier: Apache-2.0
#include "albedo/recon.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Dense>

#include "albedo/errors.hpp"
#include "albedo/parallel.hpp"
#include "albedo/pulse.hpp"
#include "albedo/quadrature.hpp"

namespace albedo {

namespace {

using std::numbers::pi;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

TriangularPulse triangle_of(const SourcePulse& pulse) {
    if (pulse.shape != SourcePulse::Shape::Triangle) {
        throw ConfigError("reconstruction needs a triangular source pulse");
    }
    return TriangularPulse(pulse.width);
}

// Bin mass of a Dirac arrival at `shift`.
double dirac_bin(const SourcePulse& pulse, const TimeGrid& time, int j, double shift) {
    const double a = time.start(j), b = a + time.dt;
    return (pulse.cdf(b - shift) - pulse.cdf(a - shift)) / time.dt;
}

// W S (nu.v0)|nu'.v0| / t0^{n-1} for the chord source -> detector.
double ballistic_geometry(const OpticalField& known, const Vec3& xp, const Vec3& x, int dim) {
    const Vec3 d = x - xp;
    const double t0 = norm(d);
    const Vec3 v0 = d * (1.0 / t0);
    const double g = known.detector.value(x, v0) * known.source.value(xp, v0) *
                     std::max(0.0, dot(x, v0)) * std::abs(dot(xp, v0));
    return g / (dim == 2 ? t0 : t0 * t0);
}

struct ModelBases {
    std::vector<Basis> bases;  // first entry is the singular term
    SingularityType type;
    double exponent;
};

ModelBases model_for(int dim, SupportMode mode) {
    if (dim == 2) {
        return {{Basis::power(-0.5), Basis::power(0.0), Basis::power(0.5)}, SingularityType::Power, -0.5};
    }
    if (mode == SupportMode::H2) {
        return {{Basis::power(0.0), Basis::power(0.5), Basis::power(1.0)}, SingularityType::Power, 0.0};
    }
    return {{Basis::log(), Basis::power(0.0), Basis::power(0.5), Basis::power(1.0)},
            SingularityType::Logarithmic, 0.0};
}

double limit_factor(LimitConvention c) { return c == LimitConvention::Published ? pi : 2.0 * pi; }

Vec3 slice_point(const Vec3& e1, const Vec3& e2, double x, double y) { return e1 * x + e2 * y; }

// Plane of a great-circle node set (node k at angle 2 pi k / N).
void plane_of(const AcquisitionGeometry& g, Vec3& e1, Vec3& e2) {
    if (g.dim == 2) {
        e1 = {1.0, 0.0, 0.0};
        e2 = {0.0, 1.0, 0.0};
    } else {
        e1 = g.nodes.at(0).position;
        const Vec3 p = g.nodes.at(1).position;
        e2 = normalized(p - e1 * dot(p, e1));
    }
    const int n = static_cast<int>(g.nodes.size());
    for (int k = 0; k < n; ++k) {
        const double a = 2.0 * pi * k / n;
        const Vec3 expect = e1 * std::cos(a) + e2 * std::sin(a);
        if (norm(expect - g.nodes[k].position) > 1e-9) {
            throw DataMismatch("reconstruction needs equally spaced nodes on a circle");
        }
    }
}

}  // namespace

// ---------------------------------------------------------------------------------------------
// Per-chord extraction

BallisticEstimate extract_ballistic(const PairTrace& trace, const SourcePulse& pulse,
                                    const TimeGrid& time, const Chord& chord) {
    BallisticEstimate e;
    if (!trace.ballistic.empty()) {
        e.symbolic = true;
        double w = 0.0, wt = 0.0;
        for (const auto& b : trace.ballistic) {
            e.amplitude += b.amplitude;
            w += std::abs(b.amplitude);
            wt += std::abs(b.amplitude) * b.arrival_time;
        }
        e.t0 = w > 0.0 ? wt / w : chord.length;
        e.flagged = !(e.amplitude > 0.0);
        return e;
    }
    if (trace.channels.empty()) {
        e.flagged = true;
        e.t0 = chord.length;
        return e;
    }
    const auto& y = trace.channels[0];
    const bool has_err = !trace.errors.empty();
    const double eta = pulse.width;
    auto fit_at = [&](double shift, double& amp, double& amp_err) {
        double yp = 0.0, pp = 0.0, ep = 0.0;
        for (int k = 0; k < trace.size(); ++k) {
            const double p = dirac_bin(pulse, time, trace.first_bin + k, shift);
            if (p == 0.0) {
                continue;
            }
            yp += y[k] * p;
            pp += p * p;
            if (has_err) {
                ep += p * p * trace.errors[0][k] * trace.errors[0][k];
            }
        }
        if (pp == 0.0) {
            amp = 0.0;
            amp_err = 0.0;
            return 0.0;
        }
        amp = yp / pp;
        amp_err = std::sqrt(ep) / pp;
        return yp / std::sqrt(pp);
    };
    const double lo = chord.length - eta, hi = chord.length + eta;
    const int steps = std::max(32, static_cast<int>(std::ceil(16.0 * (hi - lo) / time.dt)));
    double best = -std::numeric_limits<double>::infinity(), best_s = chord.length;
    for (int i = 0; i <= steps; ++i) {
        const double s = lo + (hi - lo) * i / steps;
        double a, ae;
        const double score = fit_at(s, a, ae);
        if (score > best) {
            best = score;
            best_s = s;
        }
    }
    // Golden-section refinement around the best grid shift.
    double a = best_s - (hi - lo) / steps, b = best_s + (hi - lo) / steps;
    const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
    double c = b - gr * (b - a), d = a + gr * (b - a);
    double amp, amp_err;
    for (int it = 0; it < 60; ++it) {
        if (fit_at(c, amp, amp_err) > fit_at(d, amp, amp_err)) {
            b = d;
        } else {
            a = c;
        }
        c = b - gr * (b - a);
        d = a + gr * (b - a);
    }
    e.t0 = 0.5 * (a + b);
    fit_at(e.t0, amp, amp_err);
    e.amplitude = amp;
    e.flagged = !(amp > 3.0 * amp_err) || !(amp > 0.0);
    if (e.flagged) {
        e.amplitude = 0.0;
    }
    return e;
}

FitWindow default_fit_window(double /*t0*/, const SourcePulse& pulse, const TimeGrid& time,
                             const FitOptions& options) {
    FitWindow w;
    w.lo = options.eps1 >= 0.0 ? options.eps1 : 0.0;
    w.hi = options.eps2 > 0.0 ? options.eps2 : 2.0 * pulse.width + 4.0 * time.dt;
    return w;
}

namespace {

SingularFit fit_window(const std::vector<double>& scattered, const std::vector<double>& errors,
                       int first_bin, double t0, const TriangularPulse& tri, const TimeGrid& time,
                       const ModelBases& model, const FitWindow& window, const FitOptions& options) {
    SingularFit fit;
    fit.t0 = t0;
    fit.type = model.type;
    fit.exponent = model.exponent;
    fit.window = window;
    if (!(fit.window.hi > fit.window.lo)) {
        fit.reason = "empty fit window";
        return fit;
    }
    std::vector<int> rows;
    for (int k = 0; k < static_cast<int>(scattered.size()); ++k) {
        const int j = first_bin + k;
        const double a = time.start(j), b = a + time.dt;
        if (b > t0 + fit.window.lo && a < t0 + fit.window.hi) {
            rows.push_back(k);
        }
    }
    const int m = static_cast<int>(rows.size());
    const int p = static_cast<int>(model.bases.size());
    fit.bins = m;
    if (m < std::max(options.min_bins, p + 1)) {
        fit.reason = "too few bins in the fit window";
        return fit;
    }
    const bool weighted = !errors.empty();
    double floor = std::numeric_limits<double>::infinity();
    if (weighted) {
        for (int k : rows) {
            if (errors[k] > 0.0) {
                floor = std::min(floor, errors[k]);
            }
        }
        if (!std::isfinite(floor)) {
            floor = 1.0;
        }
    }
    Eigen::MatrixXd A(m, p);
    Eigen::VectorXd y(m), w(m);
    for (int r = 0; r < m; ++r) {
        const int k = rows[r];
        const int j = first_bin + k;
        const double a = time.start(j), b = a + time.dt;
        w(r) = weighted ? 1.0 / std::max(errors[k], floor) : 1.0;
        y(r) = scattered[k];
        for (int c = 0; c < p; ++c) {
            A(r, c) = tri.bin_average(model.bases[c], t0, a, b);
        }
    }
    Eigen::MatrixXd Aw = w.asDiagonal() * A;
    Eigen::VectorXd yw = w.asDiagonal() * y;
    Eigen::VectorXd scale(p);
    for (int c = 0; c < p; ++c) {
        scale(c) = Aw.col(c).norm();
        if (scale(c) == 0.0) {
            fit.reason = "degenerate basis in the fit window";
            return fit;
        }
        Aw.col(c) /= scale(c);
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(Aw, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::VectorXd z = svd.solve(yw);
    const Eigen::VectorXd coef = z.cwiseQuotient(scale);
    const Eigen::VectorXd res = y - A * coef;
    const double rss_w = (w.asDiagonal() * res).squaredNorm();
    const int dof = m - p;
    const Eigen::VectorXd sv = svd.singularValues();
    const Eigen::MatrixXd V = svd.matrixV();
    double var0 = 0.0;
    for (int i = 0; i < p; ++i) {
        if (sv(i) > 0.0) {
            var0 += V(0, i) * V(0, i) / (sv(i) * sv(i));
        }
    }
    const double s2 = weighted ? std::max(1.0, rss_w / dof) : rss_w / dof;
    fit.coefficient = coef(0);
    fit.coefficient_error = std::sqrt(var0 * s2) / scale(0);
    const double ynorm = y.norm();
    if (weighted) {
        fit.residual = std::sqrt(rss_w / dof);
        fit.accepted = fit.residual <= options.max_reduced_chi;
    } else {
        fit.residual = ynorm > 0.0 ? res.norm() / ynorm : 0.0;
        fit.accepted = fit.residual <= options.max_residual;
    }
    if (!fit.accepted) {
        fit.reason = "residual above threshold";
    }
    return fit;
}

}  // namespace

SingularFit fit_singular(const std::vector<double>& scattered, const std::vector<double>& errors,
                         int first_bin, double t0, const SourcePulse& pulse, const TimeGrid& time,
                         int dim, SupportMode mode, const FitOptions& options) {
    const TriangularPulse tri = triangle_of(pulse);
    const ModelBases model = model_for(dim, mode);
    FitWindow window = default_fit_window(t0, pulse, time, options);
    SingularFit fit = fit_window(scattered, errors, first_bin, t0, tri, time, model, window, options);
    // The expansion holds as tau -> t0+: shrink the window while the model does not fit.
    for (int k = 0; k < options.max_halvings && !fit.accepted && fit.bins > 0; ++k) {
        window.hi *= 0.5;
        SingularFit next = fit_window(scattered, errors, first_bin, t0, tri, time, model, window, options);
        if (next.reason == "too few bins in the fit window") {
            break;
        }
        fit = next;
    }
    return fit;
}

SingularFit extract_single_scatter_coeff(const PairTrace& trace, const MeasurementSet& m, int dim,
                                         SupportMode mode, const FitOptions& options) {
    const int n = trace.size();
    std::vector<double> y(n, 0.0), err;
    const bool mc = !trace.errors.empty();
    if (mc) {
        err.assign(n, 0.0);
    }
    for (std::size_t c = 1; c < trace.channels.size(); ++c) {
        for (int k = 0; k < n; ++k) {
            y[k] += trace.channels[c][k];
            if (mc) {
                err[k] += trace.errors[c][k] * trace.errors[c][k];
            }
        }
    }
    for (double& e : err) {
        e = std::sqrt(e);
    }
    const Vec3& xp = m.geometry.nodes.at(trace.source).position;
    const Vec3& x = m.geometry.nodes.at(trace.detector).position;
    SingularFit fit = fit_singular(y, err, trace.first_bin, norm(x - xp), m.pulse, m.time, dim, mode, options);
    fit.source = trace.source;
    fit.detector = trace.detector;
    return fit;
}

double weighted_transform_from_fit(const SingularFit& fit, int dim, SupportMode mode, double g00,
                                   LimitConvention convention) {
    if (!(fit.ballistic > 0.0) || !(g00 > 0.0) || !(fit.t0 > 0.0)) {
        return kNaN;
    }
    const double t0 = fit.t0;
    if (dim == 2) {
        return fit.coefficient / (std::sqrt(2.0 / t0) * fit.ballistic * t0 * g00);
    }
    const double f = limit_factor(convention);
    if (mode == SupportMode::H2) {
        return fit.coefficient / (f * fit.ballistic * t0 * g00);
    }
    return fit.coefficient / (f * fit.ballistic * g00);
}

// ---------------------------------------------------------------------------------------------
// Pipeline

Image sample_slice(const ScalarField& f, const Vec3& e1, const Vec3& e2, int size) {
    Image img(size);
    for (int j = 0; j < size; ++j) {
        for (int i = 0; i < size; ++i) {
            const double x = img.coord(i), y = img.coord(j);
            if (x * x + y * y < 1.0) {
                img.at(i, j) = f.value(slice_point(e1, e2, x, y));
            }
        }
    }
    return img;
}

namespace {

struct PairAccumulator {
    std::vector<double> sum;
    std::vector<int> count;
    int n;
    explicit PairAccumulator(int nodes)
        : sum(static_cast<std::size_t>(nodes) * nodes, 0.0), count(sum.size(), 0), n(nodes) {}
    void add(int s, int d, double v) {
        if (!std::isfinite(v)) {
            return;
        }
        for (auto [a, b] : {std::pair{s, d}, std::pair{d, s}}) {
            sum[static_cast<std::size_t>(a) * n + b] += v;
            ++count[static_cast<std::size_t>(a) * n + b];
        }
    }
    PairData data() const {
        PairData p(n);
        for (std::size_t k = 0; k < sum.size(); ++k) {
            if (count[k] > 0) {
                p.values[k] = sum[k] / count[k];
            }
        }
        return p;
    }
};

void clamp_nonnegative(Image& img) {
    for (double& v : img.values) {
        v = std::max(v, 0.0);
    }
}

}  // namespace

ReconReport reconstruct(const std::vector<MeasurementSet>& data, const OpticalField& known,
                        const OpticalField* truth, const ReconOptions& options) {
    if (data.empty()) {
        throw DataMismatch("no measurement sets");
    }
    ReconReport report;
    report.dim = known.domain.dim();
    report.mode = known.mode;
    report.config_hash = data.front().config_hash;
    const int dim = report.dim;
    const Vec3 ref{1.0, 0.0, 0.0};
    const double g00 = known.phase->value(ref, ref);
    const bool log_mode = dim == 3 && known.mode == SupportMode::H1;
    for (const auto& m : data) {
        if (m.geometry.dim != dim) {
            throw DataMismatch("measurement dimension differs from the configuration");
        }
        if (m.traces.empty()) {
            throw DataMismatch("measurement set has no traces");
        }
        SliceReconstruction slice;
        plane_of(m.geometry, slice.e1, slice.e2);
        const int n_nodes = static_cast<int>(m.geometry.nodes.size());
        std::vector<SingularFit> fits(m.traces.size());
        std::vector<double> e_hat(m.traces.size(), kNaN);
        parallel_for(m.traces.size(), [&](std::size_t i) {
            const PairTrace& tr = m.traces[i];
            const BoundaryPoint& src = m.geometry.nodes.at(tr.source);
            const BoundaryPoint& det = m.geometry.nodes.at(tr.detector);
            const Chord chord = chord_from_endpoints(known.domain, src, det);
            const BallisticEstimate be = extract_ballistic(tr, m.pulse, m.time, chord);
            const double geom = ballistic_geometry(known, src.position, det.position, dim);
            if (!be.flagged && geom > 0.0) {
                e_hat[i] = be.amplitude / geom;
            }
            SingularFit fit = options.reconstruct_k0 || log_mode
                                  ? extract_single_scatter_coeff(tr, m, dim, known.mode, options.fit)
                                  : SingularFit{};
            fit.source = tr.source;
            fit.detector = tr.detector;
            fit.t0 = chord.length;
            fit.ballistic = be.amplitude;
            fits[i] = fit;
        }, 16);
        PairAccumulator att(n_nodes), wk(n_nodes);
        for (std::size_t i = 0; i < fits.size(); ++i) {
            const auto& fit = fits[i];
            ++slice.chords;
            const double e = e_hat[i];
            if (std::isfinite(e) && e > 0.0 && e <= 1.0 + options.e_tolerance) {
                att.add(fit.source, fit.detector, -std::log(std::min(e, 1.0)));
            } else {
                ++slice.excluded_sigma;
            }
            if (!options.reconstruct_k0 && !log_mode) {
                continue;
            }
            if (!fit.accepted) {
                ++slice.rejected_fits;
            }
            if (!(std::isfinite(e) && e >= options.e_floor) || !fit.accepted) {
                ++slice.excluded_k0;
                continue;
            }
            const double v = weighted_transform_from_fit(fit, dim, known.mode, g00, options.convention);
            if (log_mode) {
                BoundarySum b;
                b.source = fit.source;
                b.detector = fit.detector;
                b.value = v;
                if (truth) {
                    b.truth = truth->k0_at(m.geometry.nodes[fit.source].position) +
                              truth->k0_at(m.geometry.nodes[fit.detector].position);
                }
                report.boundary_sums.push_back(b);
            } else {
                wk.add(fit.source, fit.detector, v);
            }
        }
        const RebinResult rs = boundary_pairs_to_sinogram(att.data(), options.sinogram_angles,
                                                          options.sinogram_offsets, 0.0);
        slice.attenuation = rs.sinogram;
        slice.gaps_sigma = rs.gaps;
        slice.sigma = fbp_invert(rs.sinogram, options.image_size);
        clamp_nonnegative(slice.sigma);
        slice.sigma.mask(1.0);
        if (options.reconstruct_k0 && !log_mode) {
            const RebinResult rk = boundary_pairs_to_sinogram(wk.data(), options.sinogram_angles,
                                                              options.sinogram_offsets, 0.0);
            slice.weighted_k0 = rk.sinogram;
            slice.weighted_k0.weighted = true;
            slice.gaps_k0 = rk.gaps;
            Image k = fbp_invert(rk.sinogram, options.image_size);
            for (int j = 0; j < k.size; ++j) {
                for (int i = 0; i < k.size; ++i) {
                    const double x = k.coord(i), y = k.coord(j);
                    const double r2 = x * x + y * y;
                    if (r2 >= 1.0) {
                        k.at(i, j) = 0.0;
                    } else if (r2 >= options.rho_mask_radius * options.rho_mask_radius) {
                        k.at(i, j) = 0.0;
                        ++slice.masked_pixels;
                    } else {
                        k.at(i, j) /= rho_weight(slice_point(slice.e1, slice.e2, x, y), dim);
                    }
                }
            }
            clamp_nonnegative(k);
            slice.k0 = std::move(k);
            slice.has_k0 = true;
        }
        if (truth) {
            const Image s_true = sample_slice(*truth->sigma, slice.e1, slice.e2, options.image_size);
            slice.sigma_error = relative_l2_error(slice.sigma, s_true, 0.9);
            if (slice.has_k0) {
                Image k_true(options.image_size);
                for (int j = 0; j < k_true.size; ++j) {
                    for (int i = 0; i < k_true.size; ++i) {
                        const double x = k_true.coord(i), y = k_true.coord(j);
                        if (x * x + y * y < 1.0) {
                            k_true.at(i, j) = truth->k0_at(slice_point(slice.e1, slice.e2, x, y));
                        }
                    }
                }
                const double rz = std::min(truth->support_radius(), options.rho_mask_radius);
                slice.k0_error = relative_l2_error(slice.k0, k_true, rz);
            }
        }
        report.fits.insert(report.fits.end(), fits.begin(), fits.end());
        report.slices.push_back(std::move(slice));
    }
    return report;
}

nlohmann::json ReconReport::summary() const {
    nlohmann::json j;
    j["dim"] = dim;
    j["mode"] = to_string(mode);
    j["config_hash"] = config_hash;
    int accepted = 0;
    double worst = 0.0;
    for (const auto& f : fits) {
        if (f.accepted) {
            ++accepted;
            worst = std::max(worst, f.residual);
        }
    }
    j["fits"] = {{"total", fits.size()}, {"accepted", accepted}, {"max_accepted_residual", worst}};
    j["slices"] = nlohmann::json::array();
    for (const auto& s : slices) {
        nlohmann::json o;
        o["e1"] = {s.e1.x, s.e1.y, s.e1.z};
        o["e2"] = {s.e2.x, s.e2.y, s.e2.z};
        o["chords"] = s.chords;
        o["excluded_sigma"] = s.excluded_sigma;
        o["excluded_k0"] = s.excluded_k0;
        o["rejected_fits"] = s.rejected_fits;
        o["coverage_gaps_sigma"] = s.gaps_sigma;
        o["coverage_gaps_k0"] = s.gaps_k0;
        o["rho_masked_pixels"] = s.masked_pixels;
        o["has_k0_image"] = s.has_k0;
        o["sigma_l2"] = l2_norm(s.sigma, 1.0);
        if (s.has_k0) {
            o["k0_l2"] = l2_norm(s.k0, 1.0);
        }
        if (s.sigma_error >= 0.0) {
            o["sigma_relative_l2_error"] = s.sigma_error;
        }
        if (s.k0_error >= 0.0) {
            o["k0_relative_l2_error"] = s.k0_error;
        }
        j["slices"].push_back(o);
    }
    if (!boundary_sums.empty()) {
        double max_err = 0.0;
        bool have_truth = false;
        for (const auto& b : boundary_sums) {
            if (b.truth >= 0.0) {
                have_truth = true;
                max_err = std::max(max_err, std::abs(b.value - b.truth));
            }
        }
        j["boundary_sums"] = {{"count", boundary_sums.size()}};
        if (have_truth) {
            j["boundary_sums"]["max_abs_error"] = max_err;
        }
    }
    if (!stability.is_null()) {
        j["stability"] = stability;
    }
    return j;
}

// ---------------------------------------------------------------------------------------------
// Stability diagnostics

double ballistic_stability_lhs(const OpticalField& a, const OpticalField& b, const BoundaryPoint& x0) {
    const int dim = a.domain.dim();
    const Vec3 inward = x0.position * -1.0;
    auto integrand = [&](const Vec3& v0) {
        const double c = dot(v0, inward);
        if (c <= 0.0) {
            return 0.0;
        }
        const Vec3 x = x0.position + v0 * (2.0 * c);
        const double diff = std::abs(attenuation_E(x, x0.position, a) - attenuation_E(x, x0.position, b));
        return diff * a.detector.value(x, v0) * a.source.value(x0.position, v0) * c;
    };
    if (dim == 2) {
        const Vec3 side{-inward.y, inward.x, 0.0};
        auto f = [&](double alpha) { return integrand(inward * std::cos(alpha) + side * std::sin(alpha)); };
        return quad::adaptive(f, -0.5 * pi, 0.5 * pi, {1e-10, 1e-14, 16}).value;
    }
    Vec3 e1 = std::abs(inward.x) < 0.9 ? Vec3{1.0, 0.0, 0.0} : Vec3{0.0, 1.0, 0.0};
    e1 = normalized(e1 - inward * dot(e1, inward));
    const Vec3 e2 = cross(inward, e1);
    auto polar = [&](double theta) {
        auto azimuth = [&](double phi) {
            const Vec3 v = inward * std::cos(theta) + (e1 * std::cos(phi) + e2 * std::sin(phi)) * std::sin(theta);
            return integrand(v);
        };
        return std::sin(theta) * quad::composite_gauss(azimuth, 0.0, 2.0 * pi, 8, 8);
    };
    return quad::composite_gauss(polar, 0.0, 0.5 * pi, 8, 8);
}

StabilityReport stability_report(const OpticalField& a, const OpticalField& b, const StabilityOptions& options) {
    const int dim = a.domain.dim();
    if (b.domain.dim() != dim || a.mode != b.mode) {
        throw ConfigError("stability_report: fields differ in dimension or mode");
    }
    StabilityReport rep;
    std::vector<int> points = options.points;
    if (points.empty()) {
        for (int i = 0; i < options.boundary_nodes; ++i) {
            points.push_back(i);
        }
    }
    AcquisitionGeometry geo = AcquisitionGeometry::from_sources(dim, options.boundary_nodes, points);
    geo.detector_subsamples = dim == 2 ? options.detector_subsamples : 1;
    const TimeGrid time = TimeGrid::covering(options.horizon, options.dt);
    SynthesisOptions syn = options.synthesis;
    if (dim == 3) {
        syn.order = std::min(syn.order, 1);
    }
    const AlbedoMatrix ka = albedo_matrix(a, geo, time, options.eta, syn);
    const AlbedoMatrix kb = albedo_matrix(b, geo, time, options.eta, syn);
    rep.operator_norm = l1_difference_norm(ka, kb);
    rep.points.resize(points.size());
    parallel_for(points.size(), [&](std::size_t i) {
        StabilityPoint& p = rep.points[i];
        p.node = points[i];
        p.lhs = ballistic_stability_lhs(a, b, geo.nodes.at(points[i]));
        const auto it = std::find(ka.sources.begin(), ka.sources.end(), points[i]);
        p.column_norm = l1_column_difference_norm(ka, kb, static_cast<int>(it - ka.sources.begin()));
    });
    for (const auto& p : rep.points) {
        rep.inequality_holds = rep.inequality_holds && p.lhs <= p.column_norm &&
                               p.column_norm <= rep.operator_norm;
    }
    if (!options.single_scatter || a.mode != SupportMode::H2) {
        return rep;
    }
    // Single-scattering estimate on chords through Z.
    std::vector<std::pair<int, int>> chords;
    for (int s : points) {
        for (int d = 0; d < options.boundary_nodes && static_cast<int>(chords.size()) < options.max_chords; ++d) {
            if (d == s) {
                continue;
            }
            const Chord c = chord_from_endpoints(a.domain, geo.nodes[s], geo.nodes[d]);
            const double dist = norm(c.source + c.direction * (-dot(c.source, c.direction)));
            if (dist < a.support_radius() - 1e-9) {
                chords.emplace_back(s, d);
            }
        }
    }
    if (chords.empty()) {
        return rep;
    }
    AcquisitionGeometry cg = geo;
    cg.pairs = chords;
    cg.detector_subsamples = 1;
    const SourcePulse fine = SourcePulse::triangle(options.fit_eta, options.horizon);
    const TimeGrid ft = TimeGrid::covering(options.horizon, options.fit_dt);
    SynthesisOptions fs = syn;
    fs.window = std::max(0.1, 2.0 * options.fit_eta + 4.0 * options.fit_dt) + options.fit_eta + 2.0 * options.fit_dt;
    if (options.fit.eps2 > 0.0) {
        fs.window = options.fit.eps2 + options.fit_eta + 2.0 * options.fit_dt;
    }
    const MeasurementSet ma = albedo_truncated(a, fine, cg, ft, fs);
    const MeasurementSet mb = albedo_truncated(b, fine, cg, ft, fs);
    const Vec3 ref{1.0, 0.0, 0.0};
    const double g00 = a.phase->value(ref, ref);
    const double factor = 2.0 * pi;
    rep.chord_lhs.assign(chords.size(), 0.0);
    std::vector<double> sups(chords.size(), 0.0);
    parallel_for(chords.size(), [&](std::size_t i) {
        const BoundaryPoint& src = geo.nodes[chords[i].first];
        const BoundaryPoint& det = geo.nodes[chords[i].second];
        const Vec3 d = det.position - src.position;
        const double t0 = norm(d);
        const Vec3 v0 = d * (1.0 / t0);
        const double wsnn = a.detector.value(det.position, v0) * a.source.value(src.position, v0) *
                            std::max(0.0, dot(det.position, v0)) * std::abs(dot(src.position, v0));
        const double c = dim == 2 ? std::sqrt(2.0 / t0) * wsnn * g00 : factor / t0 * wsnn * g00;
        const SingularFit fa = extract_single_scatter_coeff(ma.traces[i], ma, dim, a.mode, options.fit);
        const SingularFit fb = extract_single_scatter_coeff(mb.traces[i], mb, dim, a.mode, options.fit);
        rep.chord_lhs[i] = c > 0.0 ? std::abs(fa.coefficient - fb.coefficient) / c : 0.0;
        double sup = 0.0;
        for (double u : options.excess_grid) {
            double diff = gamma1_excess(u, src, det, a).value - gamma1_excess(u, src, det, b).value;
            if (dim == 2 && syn.order >= 2) {
                diff += gamma2_excess(u, src, det, a, syn.gamma2_quad).value -
                        gamma2_excess(u, src, det, b, syn.gamma2_quad).value;
            }
            sup = std::max(sup, std::pow(u, 0.5 * (3 - dim)) * std::abs(diff));
        }
        sups[i] = sup;
    });
    rep.weighted_sup = *std::max_element(sups.begin(), sups.end());
    const double lhs_max = *std::max_element(rep.chord_lhs.begin(), rep.chord_lhs.end());
    rep.max_ratio = rep.weighted_sup > 0.0 ? lhs_max / rep.weighted_sup : 0.0;
    return rep;
}

nlohmann::json StabilityReport::to_json() const {
    nlohmann::json j;
    j["operator_norm"] = operator_norm;
    j["inequality_holds"] = inequality_holds;
    j["points"] = nlohmann::json::array();
    for (const auto& p : points) {
        j["points"].push_back({{"node", p.node}, {"lhs", p.lhs}, {"column_norm", p.column_norm}});
    }
    if (!chord_lhs.empty()) {
        j["single_scatter"] = {{"chords", chord_lhs.size()},
                               {"max_lhs", *std::max_element(chord_lhs.begin(), chord_lhs.end())},
                               {"weighted_sup", weighted_sup},
                               {"ratio", max_ratio}};
    }
    return j;
}

}  // namespace albedo
