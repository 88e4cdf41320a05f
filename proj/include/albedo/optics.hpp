// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "albedo/geometry.hpp"
#include "albedo/vec.hpp"

namespace albedo {

/// Sphere |x - centre| = radius across which a field may jump.
struct SupportSphere {
    Vec3 centre;
    double radius;
};

/// Immutable scalar field on the closed unit ball.
class ScalarField {
  public:
    virtual ~ScalarField() = default;

    virtual double value(const Vec3& x) const = 0;

    /// Integral of the field along the segment a -> b. The default integrates `value`
    /// with adaptive Gauss-Kronrod; analytic phantoms override it with closed forms.
    virtual double line_integral(const Vec3& a, const Vec3& b) const;

    /// An upper bound for the positive part of the field.
    virtual double upper_bound() const = 0;

    virtual bool has_closed_form_line_integral() const { return false; }

    /// Spheres on which the field is discontinuous (none for continuous fields).
    virtual void append_discontinuities(std::vector<SupportSphere>&) const {}

    virtual nlohmann::json describe() const = 0;
};

using FieldPtr = std::shared_ptr<const ScalarField>;

/// Segment integral by adaptive quadrature of `field.value`, independent of any override.
double quadrature_line_integral(const ScalarField& field, const Vec3& a, const Vec3& b,
                                double abs_tol = 1e-10);

class ConstantField final : public ScalarField {
  public:
    explicit ConstantField(double c) : c_(c) {}
    double value(const Vec3&) const override { return c_; }
    double line_integral(const Vec3& a, const Vec3& b) const override;
    double upper_bound() const override { return std::max(c_, 0.0); }
    bool has_closed_form_line_integral() const override { return true; }
    nlohmann::json describe() const override;

  private:
    double c_;
};

/// amplitude * indicator(|x - center| < radius).
class BallIndicator final : public ScalarField {
  public:
    BallIndicator(Vec3 center, double radius, double amplitude);
    double value(const Vec3& x) const override;
    double line_integral(const Vec3& a, const Vec3& b) const override;
    double upper_bound() const override { return std::max(amplitude_, 0.0); }
    bool has_closed_form_line_integral() const override { return true; }
    void append_discontinuities(std::vector<SupportSphere>& out) const override {
        out.push_back({center_, radius_});
    }
    nlohmann::json describe() const override;

  private:
    Vec3 center_;
    double radius_;
    double amplitude_;
};

/// amplitude * (1 - |x - center|^2 / radius^2)^power inside the ball, 0 outside.
class SmoothBump final : public ScalarField {
  public:
    SmoothBump(Vec3 center, double radius, double amplitude, int power = 3);
    double value(const Vec3& x) const override;
    double line_integral(const Vec3& a, const Vec3& b) const override;
    double upper_bound() const override { return std::max(amplitude_, 0.0); }
    bool has_closed_form_line_integral() const override { return true; }
    nlohmann::json describe() const override;

  private:
    Vec3 center_;
    double radius_;
    double amplitude_;
    int power_;
};

/// amplitude * exp(-|x - center|^2 / width).
class GaussianBlob final : public ScalarField {
  public:
    GaussianBlob(Vec3 center, double width, double amplitude);
    double value(const Vec3& x) const override;
    double line_integral(const Vec3& a, const Vec3& b) const override;
    double upper_bound() const override { return std::max(amplitude_, 0.0); }
    bool has_closed_form_line_integral() const override { return true; }
    nlohmann::json describe() const override;

  private:
    Vec3 center_;
    double width_;
    double amplitude_;
};

class SumField final : public ScalarField {
  public:
    explicit SumField(std::vector<FieldPtr> parts);
    double value(const Vec3& x) const override;
    double line_integral(const Vec3& a, const Vec3& b) const override;
    double upper_bound() const override;
    bool has_closed_form_line_integral() const override;
    void append_discontinuities(std::vector<SupportSphere>& out) const override;
    nlohmann::json describe() const override;

  private:
    std::vector<FieldPtr> parts_;
};

/// Node-centred grid on [-1,1]^n (n = dims.size()), row-major with x fastest,
/// bilinear/trilinear interpolation. Values are clamped at 0 on construction.
class GridField final : public ScalarField {
  public:
    GridField(std::vector<int> dims, std::vector<double> values);
    double value(const Vec3& x) const override;
    double upper_bound() const override { return max_; }
    nlohmann::json describe() const override;

  private:
    std::vector<int> dims_;
    std::vector<double> values_;
    double max_ = 0.0;
};

/// Build a field from {type, ...}; types: constant, disc (ball), bump, gaussian, sum, grid.
FieldPtr field_from_json(const nlohmann::json& j, int dim);

/// Phase function g(v', v) on S^{n-1} x S^{n-1}. Rotation invariant, so
/// integral_v g(v', v) dv does not depend on v'.
class PhaseFunction {
  public:
    virtual ~PhaseFunction() = default;
    virtual double value(const Vec3& incoming, const Vec3& outgoing) const = 0;
    virtual double total(int dim) const = 0;
    /// Draw an outgoing direction with density g(incoming, .) / total, from two uniforms.
    virtual Vec3 sample(const Vec3& incoming, double u1, double u2, int dim) const = 0;
    virtual nlohmann::json describe() const = 0;
};

using PhasePtr = std::shared_ptr<const PhaseFunction>;

class IsotropicPhase final : public PhaseFunction {
  public:
    explicit IsotropicPhase(double value) : value_(value) {}
    double value(const Vec3&, const Vec3&) const override { return value_; }
    double total(int dim) const override;
    Vec3 sample(const Vec3& incoming, double u1, double u2, int dim) const override;
    nlohmann::json describe() const override;

  private:
    double value_;
};

/// Henyey-Greenstein (wrapped Cauchy for n=2) with anisotropy `g`, scaled so that
/// integral_v g(v', v) dv = scale.
class HenyeyGreensteinPhase final : public PhaseFunction {
  public:
    HenyeyGreensteinPhase(double anisotropy, double scale, int dim);
    double value(const Vec3& incoming, const Vec3& outgoing) const override;
    double total(int) const override { return scale_; }
    Vec3 sample(const Vec3& incoming, double u1, double u2, int dim) const override;
    nlohmann::json describe() const override;

  private:
    double g_;
    double scale_;
    int dim_;
};

PhasePtr phase_from_json(const nlohmann::json& j, int dim);

/// Angular profile base + cos_coeff * |nu(x) . v| of a boundary source or detector.
struct BoundaryProfile {
    double base = 1.0;
    double cos_coeff = 0.0;

    double value(const Vec3& normal, const Vec3& v) const {
        return base + cos_coeff * std::abs(dot(normal, v));
    }
    double infimum() const { return base + std::min(cos_coeff, 0.0); }
};

enum class SupportMode { H1, H2 };

const char* to_string(SupportMode mode);

/// sigma(x), k(x, v', v) = k0(x) g(v', v), boundary profiles and the support regime.
struct OpticalField {
    Domain domain{2};
    FieldPtr sigma;
    FieldPtr k0;
    PhasePtr phase;
    SupportMode mode = SupportMode::H1;
    double delta = 0.0;  ///< H2 margin: k0 vanishes where dist(x, boundary) < delta.
    BoundaryProfile source;
    BoundaryProfile detector;

    /// Radius of the ball Z that carries the scattering support.
    double support_radius() const { return mode == SupportMode::H2 ? 1.0 - delta : 1.0; }

    double sigma_at(const Vec3& x) const { return sigma->value(x); }
    double k0_at(const Vec3& x) const;
    double k(const Vec3& x, const Vec3& incoming, const Vec3& outgoing) const;
    /// sigma_p(x) = integral_v k(x, v', v) dv.
    double sigma_p(const Vec3& x) const { return k0_at(x) * phase->total(domain.dim()); }

    double sigma_line_integral(const Vec3& a, const Vec3& b) const;
    /// Line integral of the (support-masked) k0.
    double k0_line_integral(const Vec3& a, const Vec3& b) const;

    bool scattering_free() const;

    /// Spheres across which k0_at may jump: the H2 mask and discontinuities of k0.
    std::vector<SupportSphere> scattering_discontinuities() const;
};

/// Optical field with sigma = 0, k0 = 0, isotropic g normalised to 1, unit profiles.
OpticalField make_vacuum_field(int dim);

/// exp(-integral of sigma along the segment x1 -> x2); requires x1 != x2.
double attenuation_E(const Vec3& x1, const Vec3& x2, const OpticalField& field);

/// Product of segment attenuations along a broken path of >= 2 points.
double path_attenuation(std::span<const Vec3> points, const OpticalField& field);

struct AdmissibilityReport {
    bool passed = true;
    double sup_sigma = 0.0;
    double min_sigma = 0.0;
    double sup_sigma_p = 0.0;
    double min_k0 = 0.0;
    std::vector<std::string> violations;
    std::vector<std::string> notes;
};

/// Samples sigma and sigma_p on a grid of the ball; report-only.
AdmissibilityReport validate_admissible(const OpticalField& field, int grid = 48,
                                        bool require_positive_profiles = false);

}  // namespace albedo
