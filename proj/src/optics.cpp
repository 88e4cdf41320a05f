// SPDX-License-Identifier: Apache-2.0
#include "albedo/optics.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "albedo/errors.hpp"
#include "albedo/quadrature.hpp"

namespace albedo {

namespace {

using nlohmann::json;

Vec3 vec_from_json(const json& j, int dim) {
    if (!j.is_array() || static_cast<int>(j.size()) != dim) {
        throw ConfigError("field centre must be an array of length " + std::to_string(dim));
    }
    Vec3 v{j[0].get<double>(), j[1].get<double>(), 0.0};
    if (dim == 3) {
        v.z = j[2].get<double>();
    }
    return v;
}

// Parameters of the line a + s u (s in [0, L]) relative to a centre c:
// beta = u.(a - c), h2 = squared distance of the line to c.
struct LineFrame {
    double length;
    double beta;
    double h2;
};

LineFrame line_frame(const Vec3& a, const Vec3& b, const Vec3& c) {
    const Vec3 d = b - a;
    const double length = norm(d);
    const Vec3 w = a - c;
    if (length == 0.0) {
        return {0.0, 0.0, norm2(w)};
    }
    const Vec3 u = d * (1.0 / length);
    const double beta = dot(u, w);
    return {length, beta, std::max(norm2(w) - beta * beta, 0.0)};
}

double binomial(int n, int k) {
    double r = 1.0;
    for (int i = 1; i <= k; ++i) {
        r = r * (n - k + i) / i;
    }
    return r;
}

}  // namespace

double quadrature_line_integral(const ScalarField& field, const Vec3& a, const Vec3& b,
                                double abs_tol) {
    const Vec3 d = b - a;
    const double length = norm(d);
    if (length == 0.0) {
        return 0.0;
    }
    quad::AdaptiveOptions opt;
    opt.rel_tol = 1e-10;
    opt.abs_tol = abs_tol;
    opt.max_depth = 20;
    const auto r =
        quad::adaptive_panels([&](double s) { return field.value(a + d * s); }, 0.0, 1.0, 16, opt);
    return r.value * length;
}

double ScalarField::line_integral(const Vec3& a, const Vec3& b) const {
    return quadrature_line_integral(*this, a, b);
}

double ConstantField::line_integral(const Vec3& a, const Vec3& b) const {
    return c_ * distance(a, b);
}

json ConstantField::describe() const { return {{"type", "constant"}, {"value", c_}}; }

BallIndicator::BallIndicator(Vec3 center, double radius, double amplitude)
    : center_(center), radius_(radius), amplitude_(amplitude) {
    if (!(radius > 0.0)) {
        throw ConfigError("indicator radius must be positive");
    }
}

double BallIndicator::value(const Vec3& x) const {
    return norm2(x - center_) < radius_ * radius_ ? amplitude_ : 0.0;
}

double BallIndicator::line_integral(const Vec3& a, const Vec3& b) const {
    const LineFrame f = line_frame(a, b, center_);
    const double r2 = radius_ * radius_;
    if (f.length == 0.0 || f.h2 >= r2) {
        return 0.0;
    }
    const double half = std::sqrt(r2 - f.h2);
    const double lo = std::max(0.0, -f.beta - half);
    const double hi = std::min(f.length, -f.beta + half);
    return hi > lo ? amplitude_ * (hi - lo) : 0.0;
}

json BallIndicator::describe() const {
    return {{"type", "disc"},
            {"center", json::array({center_.x, center_.y, center_.z})},
            {"radius", radius_},
            {"amplitude", amplitude_}};
}

SmoothBump::SmoothBump(Vec3 center, double radius, double amplitude, int power)
    : center_(center), radius_(radius), amplitude_(amplitude), power_(power) {
    if (!(radius > 0.0) || power < 1 || power > 12) {
        throw ConfigError("bump needs radius > 0 and power in [1, 12]");
    }
}

double SmoothBump::value(const Vec3& x) const {
    const double t = 1.0 - norm2(x - center_) / (radius_ * radius_);
    return t > 0.0 ? amplitude_ * std::pow(t, power_) : 0.0;
}

double SmoothBump::line_integral(const Vec3& a, const Vec3& b) const {
    const LineFrame f = line_frame(a, b, center_);
    const double r2 = radius_ * radius_;
    if (f.length == 0.0 || f.h2 >= r2) {
        return 0.0;
    }
    const double big_h = r2 - f.h2;
    const double half = std::sqrt(big_h);
    const double lo = std::max(f.beta, -half);
    const double hi = std::min(f.beta + f.length, half);
    if (hi <= lo) {
        return 0.0;
    }
    // integral of (H - w^2)^p dw, expanded binomially.
    auto antiderivative = [&](double w) {
        double sum = 0.0;
        double w2k1 = w;
        for (int k = 0; k <= power_; ++k) {
            const double sign = (k % 2 == 0) ? 1.0 : -1.0;
            sum += sign * binomial(power_, k) * std::pow(big_h, power_ - k) * w2k1 / (2 * k + 1);
            w2k1 *= w * w;
        }
        return sum;
    };
    return amplitude_ * (antiderivative(hi) - antiderivative(lo)) / std::pow(r2, power_);
}

json SmoothBump::describe() const {
    return {{"type", "bump"},
            {"center", json::array({center_.x, center_.y, center_.z})},
            {"radius", radius_},
            {"amplitude", amplitude_},
            {"power", power_}};
}

GaussianBlob::GaussianBlob(Vec3 center, double width, double amplitude)
    : center_(center), width_(width), amplitude_(amplitude) {
    if (!(width > 0.0)) {
        throw ConfigError("gaussian width must be positive");
    }
}

double GaussianBlob::value(const Vec3& x) const {
    return amplitude_ * std::exp(-norm2(x - center_) / width_);
}

double GaussianBlob::line_integral(const Vec3& a, const Vec3& b) const {
    const LineFrame f = line_frame(a, b, center_);
    if (f.length == 0.0) {
        return 0.0;
    }
    const double s = std::sqrt(width_);
    return amplitude_ * std::exp(-f.h2 / width_) * 0.5 * std::sqrt(std::numbers::pi) * s *
           (std::erf((f.beta + f.length) / s) - std::erf(f.beta / s));
}

json GaussianBlob::describe() const {
    return {{"type", "gaussian"},
            {"center", json::array({center_.x, center_.y, center_.z})},
            {"width", width_},
            {"amplitude", amplitude_}};
}

SumField::SumField(std::vector<FieldPtr> parts) : parts_(std::move(parts)) {}

double SumField::value(const Vec3& x) const {
    double s = 0.0;
    for (const auto& p : parts_) {
        s += p->value(x);
    }
    return s;
}

double SumField::line_integral(const Vec3& a, const Vec3& b) const {
    double s = 0.0;
    for (const auto& p : parts_) {
        s += p->line_integral(a, b);
    }
    return s;
}

double SumField::upper_bound() const {
    double s = 0.0;
    for (const auto& p : parts_) {
        s += p->upper_bound();
    }
    return s;
}

bool SumField::has_closed_form_line_integral() const {
    for (const auto& p : parts_) {
        if (!p->has_closed_form_line_integral()) {
            return false;
        }
    }
    return true;
}

void SumField::append_discontinuities(std::vector<SupportSphere>& out) const {
    for (const auto& p : parts_) {
        p->append_discontinuities(out);
    }
}

json SumField::describe() const {
    json parts = json::array();
    for (const auto& p : parts_) {
        parts.push_back(p->describe());
    }
    return {{"type", "sum"}, {"parts", parts}};
}

GridField::GridField(std::vector<int> dims, std::vector<double> values)
    : dims_(std::move(dims)), values_(std::move(values)) {
    if (dims_.size() != 2 && dims_.size() != 3) {
        throw ConfigError("grid field needs 2 or 3 dimensions");
    }
    std::size_t count = 1;
    for (int d : dims_) {
        if (d < 2) {
            throw ConfigError("grid field dimensions must be >= 2");
        }
        count *= static_cast<std::size_t>(d);
    }
    if (values_.size() != count) {
        throw ConfigError("grid field value count does not match dims");
    }
    for (double& v : values_) {
        if (!std::isfinite(v)) {
            throw ConfigError("grid field contains non-finite values");
        }
        v = std::max(v, 0.0);
        max_ = std::max(max_, v);
    }
}

double GridField::value(const Vec3& x) const {
    const double coords[3] = {x.x, x.y, x.z};
    const std::size_t nd = dims_.size();
    int base[3] = {0, 0, 0};
    double frac[3] = {0.0, 0.0, 0.0};
    for (std::size_t k = 0; k < nd; ++k) {
        const double g = std::clamp((coords[k] + 1.0) * 0.5 * (dims_[k] - 1), 0.0,
                                    static_cast<double>(dims_[k] - 1));
        int i = std::min(static_cast<int>(g), dims_[k] - 2);
        base[k] = i;
        frac[k] = g - i;
    }
    double sum = 0.0;
    const int corners = 1 << nd;
    for (int c = 0; c < corners; ++c) {
        double w = 1.0;
        std::size_t index = 0;
        std::size_t stride = 1;
        for (std::size_t k = 0; k < nd; ++k) {
            const int bit = (c >> k) & 1;
            w *= bit ? frac[k] : 1.0 - frac[k];
            index += static_cast<std::size_t>(base[k] + bit) * stride;
            stride *= static_cast<std::size_t>(dims_[k]);
        }
        sum += w * values_[index];
    }
    return sum;
}

json GridField::describe() const {
    return {{"type", "grid"}, {"dims", dims_}, {"values", values_}};
}

FieldPtr field_from_json(const json& j, int dim) {
    if (j.is_number()) {
        return std::make_shared<ConstantField>(j.get<double>());
    }
    if (!j.is_object() || !j.contains("type")) {
        throw ConfigError("field descriptor must be a number or an object with 'type'");
    }
    const std::string type = j.at("type").get<std::string>();
    try {
        if (type == "constant") {
            return std::make_shared<ConstantField>(j.at("value").get<double>());
        }
        if (type == "disc" || type == "ball") {
            return std::make_shared<BallIndicator>(vec_from_json(j.at("center"), dim),
                                                   j.at("radius").get<double>(),
                                                   j.at("amplitude").get<double>());
        }
        if (type == "bump") {
            return std::make_shared<SmoothBump>(vec_from_json(j.at("center"), dim),
                                                j.at("radius").get<double>(),
                                                j.at("amplitude").get<double>(),
                                                j.value("power", 3));
        }
        if (type == "gaussian") {
            return std::make_shared<GaussianBlob>(vec_from_json(j.at("center"), dim),
                                                  j.at("width").get<double>(),
                                                  j.at("amplitude").get<double>());
        }
        if (type == "sum") {
            std::vector<FieldPtr> parts;
            for (const auto& p : j.at("parts")) {
                parts.push_back(field_from_json(p, dim));
            }
            return std::make_shared<SumField>(std::move(parts));
        }
        if (type == "grid") {
            auto dims = j.at("dims").get<std::vector<int>>();
            if (static_cast<int>(dims.size()) != dim) {
                throw ConfigError("grid field dims must match the domain dimension");
            }
            return std::make_shared<GridField>(std::move(dims),
                                               j.at("values").get<std::vector<double>>());
        }
    } catch (const json::exception& e) {
        throw ConfigError("field '" + type + "': " + e.what());
    }
    throw ConfigError("unknown field type '" + type + "'");
}

double IsotropicPhase::total(int dim) const {
    return value_ * (dim == 2 ? 2.0 * std::numbers::pi : 4.0 * std::numbers::pi);
}

namespace {

Vec3 uniform_direction(double u1, double u2, int dim) {
    if (dim == 2) {
        const double a = 2.0 * std::numbers::pi * u1;
        return {std::cos(a), std::sin(a), 0.0};
    }
    const double c = 1.0 - 2.0 * u1;
    const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
    const double a = 2.0 * std::numbers::pi * u2;
    return {s * std::cos(a), s * std::sin(a), c};
}

// Direction at polar angle acos(cos_theta) from `axis` and azimuth `phi` (n=3),
// or rotated by `angle` (n=2).
Vec3 rotate_from_2d(const Vec3& axis, double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    return {c * axis.x - s * axis.y, s * axis.x + c * axis.y, 0.0};
}

Vec3 tilt_3d(const Vec3& axis, double cos_theta, double phi) {
    const Vec3 e1 = any_orthogonal(axis);
    const Vec3 e2 = cross(axis, e1);
    const double s = std::sqrt(std::max(0.0, 1.0 - cos_theta * cos_theta));
    return axis * cos_theta + e1 * (s * std::cos(phi)) + e2 * (s * std::sin(phi));
}

}  // namespace

Vec3 IsotropicPhase::sample(const Vec3&, double u1, double u2, int dim) const {
    return uniform_direction(u1, u2, dim);
}

json IsotropicPhase::describe() const { return {{"type", "isotropic"}, {"value", value_}}; }

HenyeyGreensteinPhase::HenyeyGreensteinPhase(double anisotropy, double scale, int dim)
    : g_(anisotropy), scale_(scale), dim_(dim) {
    if (!(std::abs(anisotropy) < 1.0) || !(scale >= 0.0)) {
        throw ConfigError("Henyey-Greenstein needs |g| < 1 and scale >= 0");
    }
}

double HenyeyGreensteinPhase::value(const Vec3& incoming, const Vec3& outgoing) const {
    const double c = dot(incoming, outgoing);
    const double den = 1.0 + g_ * g_ - 2.0 * g_ * c;
    if (dim_ == 2) {
        return scale_ * (1.0 - g_ * g_) / (2.0 * std::numbers::pi * den);
    }
    return scale_ * (1.0 - g_ * g_) / (4.0 * std::numbers::pi * den * std::sqrt(den));
}

Vec3 HenyeyGreensteinPhase::sample(const Vec3& incoming, double u1, double u2, int dim) const {
    if (dim == 2) {
        const double angle =
            2.0 * std::atan((1.0 - g_) / (1.0 + g_) * std::tan(std::numbers::pi * (u1 - 0.5)));
        return rotate_from_2d(incoming, angle);
    }
    double cos_theta;
    if (std::abs(g_) < 1e-6) {
        cos_theta = 1.0 - 2.0 * u1;
    } else {
        const double t = (1.0 - g_ * g_) / (1.0 - g_ + 2.0 * g_ * u1);
        cos_theta = std::clamp((1.0 + g_ * g_ - t * t) / (2.0 * g_), -1.0, 1.0);
    }
    return tilt_3d(incoming, cos_theta, 2.0 * std::numbers::pi * u2);
}

json HenyeyGreensteinPhase::describe() const {
    return {{"type", "henyey_greenstein"}, {"g", g_}, {"scale", scale_}};
}

PhasePtr phase_from_json(const json& j, int dim) {
    const double measure = dim == 2 ? 2.0 * std::numbers::pi : 4.0 * std::numbers::pi;
    if (j.is_null()) {
        return std::make_shared<IsotropicPhase>(1.0 / measure);
    }
    const std::string type = j.value("type", std::string("isotropic"));
    if (type == "isotropic") {
        if (j.contains("value")) {
            return std::make_shared<IsotropicPhase>(j.at("value").get<double>());
        }
        return std::make_shared<IsotropicPhase>(j.value("scale", 1.0) / measure);
    }
    if (type == "henyey_greenstein") {
        return std::make_shared<HenyeyGreensteinPhase>(j.value("g", 0.0), j.value("scale", 1.0),
                                                       dim);
    }
    throw ConfigError("unknown phase function type '" + type + "'");
}

const char* to_string(SupportMode mode) { return mode == SupportMode::H2 ? "H2" : "H1"; }

double OpticalField::k0_at(const Vec3& x) const {
    if (mode == SupportMode::H2 && norm(x) > 1.0 - delta) {
        return 0.0;
    }
    return k0->value(x);
}

double OpticalField::k(const Vec3& x, const Vec3& incoming, const Vec3& outgoing) const {
    const double a = k0_at(x);
    return a == 0.0 ? 0.0 : a * phase->value(incoming, outgoing);
}

double OpticalField::sigma_line_integral(const Vec3& a, const Vec3& b) const {
    return sigma->line_integral(a, b);
}

double OpticalField::k0_line_integral(const Vec3& a, const Vec3& b) const {
    if (mode == SupportMode::H1) {
        return k0->line_integral(a, b);
    }
    const LineFrame f = line_frame(a, b, Vec3{});
    const double r = support_radius();
    if (f.length == 0.0 || f.h2 >= r * r) {
        return 0.0;
    }
    const double half = std::sqrt(r * r - f.h2);
    const double lo = std::max(0.0, -f.beta - half);
    const double hi = std::min(f.length, -f.beta + half);
    if (hi <= lo) {
        return 0.0;
    }
    const Vec3 u = (b - a) * (1.0 / f.length);
    return k0->line_integral(a + u * lo, a + u * hi);
}

bool OpticalField::scattering_free() const {
    return k0->upper_bound() == 0.0 || phase->total(domain.dim()) == 0.0;
}

std::vector<SupportSphere> OpticalField::scattering_discontinuities() const {
    std::vector<SupportSphere> out;
    if (mode == SupportMode::H2) {
        out.push_back({Vec3{}, support_radius()});
    }
    k0->append_discontinuities(out);
    return out;
}

OpticalField make_vacuum_field(int dim) {
    OpticalField f;
    f.domain = Domain(dim);
    f.sigma = std::make_shared<ConstantField>(0.0);
    f.k0 = std::make_shared<ConstantField>(0.0);
    f.phase = phase_from_json(nullptr, dim);
    return f;
}

double attenuation_E(const Vec3& x1, const Vec3& x2, const OpticalField& field) {
    if (norm2(x1 - x2) == 0.0) {
        throw std::invalid_argument("attenuation_E requires distinct points");
    }
    return std::exp(-field.sigma_line_integral(x1, x2));
}

double path_attenuation(std::span<const Vec3> points, const OpticalField& field) {
    if (points.size() < 2) {
        throw std::invalid_argument("path_attenuation needs at least two points");
    }
    double integral = 0.0;
    for (std::size_t i = 0; i + 1 < points.size(); ++i) {
        integral += field.sigma_line_integral(points[i], points[i + 1]);
    }
    return std::exp(-integral);
}

AdmissibilityReport validate_admissible(const OpticalField& field, int grid,
                                        bool require_positive_profiles) {
    AdmissibilityReport rep;
    const int dim = field.domain.dim();
    const double total = field.phase->total(dim);
    rep.min_sigma = std::numeric_limits<double>::infinity();
    rep.min_k0 = std::numeric_limits<double>::infinity();
    double sup_k0_near_boundary = 0.0;
    bool finite = true;
    const int nz = dim == 3 ? grid : 1;
    for (int iz = 0; iz < nz; ++iz) {
        for (int iy = 0; iy < grid; ++iy) {
            for (int ix = 0; ix < grid; ++ix) {
                Vec3 x{-1.0 + (ix + 0.5) * 2.0 / grid, -1.0 + (iy + 0.5) * 2.0 / grid,
                       dim == 3 ? -1.0 + (iz + 0.5) * 2.0 / grid : 0.0};
                const double r = norm(x);
                if (r > 1.0) {
                    continue;
                }
                const double s = field.sigma->value(x);
                const double k0raw = field.k0->value(x);
                finite = finite && std::isfinite(s) && std::isfinite(k0raw);
                rep.sup_sigma = std::max(rep.sup_sigma, s);
                rep.min_sigma = std::min(rep.min_sigma, s);
                rep.min_k0 = std::min(rep.min_k0, k0raw);
                rep.sup_sigma_p = std::max(rep.sup_sigma_p, field.k0_at(x) * total);
                if (field.mode == SupportMode::H2 && r > 1.0 - field.delta) {
                    sup_k0_near_boundary = std::max(sup_k0_near_boundary, std::abs(k0raw));
                }
            }
        }
    }
    if (!finite) {
        rep.violations.emplace_back("non-finite sigma or k0 sample");
    }
    if (rep.min_sigma < 0.0) {
        rep.violations.emplace_back("sigma takes negative values");
    }
    if (rep.min_k0 < 0.0) {
        rep.violations.emplace_back("k0 takes negative values");
    }
    if (field.mode == SupportMode::H2) {
        if (!(field.delta > 0.0 && field.delta < 1.0)) {
            rep.violations.emplace_back("H2 requires 0 < delta < 1");
        }
        if (sup_k0_near_boundary > 0.0) {
            std::ostringstream os;
            os << "k0 support reaches the boundary layer of width delta (sup " << sup_k0_near_boundary
               << "); it is masked to zero there";
            rep.violations.push_back(os.str());
        }
    }
    if (field.source.infimum() <= 0.0 || field.detector.infimum() <= 0.0) {
        const std::string msg = "source or detector profile is not bounded below by a positive constant";
        if (require_positive_profiles) {
            rep.violations.push_back(msg);
        } else {
            rep.notes.push_back(msg);
        }
    }
    if (!field.sigma->has_closed_form_line_integral()) {
        rep.notes.emplace_back("sigma line integrals use adaptive quadrature");
    }
    rep.passed = rep.violations.empty();
    return rep;
}

}  // namespace albedo
