// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "albedo/geometry.hpp"
#include "albedo/optics.hpp"

namespace albedo {

/// Chord of the unit ball: {midpoint + t * direction : |t| < half_length}.
struct Line {
    Vec3 direction;
    Vec3 midpoint;
    double half_length = 0.0;
};

/// n=2 parallel-beam line: direction (cos a, sin a), offset q along (-sin a, cos a).
Line line_from_angle(double angle, double q);
Line line_from_chord(const Chord& chord);

using PointFunction = std::function<double(const Vec3&)>;

/// Pf along the line (0 when the line misses the open ball).
double xray_transform(const ScalarField& f, const Line& line);
double xray_transform(const ScalarField& f, double angle, double q);

struct WeightedTransform {
    double value = 0.0;
    bool divergent = false;
};

/// integral of (1 - |y|^2)^{-(n-1)/2} f(y) along the line, through t = c sin(theta).
/// For n=3 the weight is not integrable unless f vanishes at the chord ends; `divergent`
/// reports f != 0 there.
WeightedTransform weighted_xray(const PointFunction& f, int dim, const Line& line);
WeightedTransform weighted_xray(const ScalarField& f, int dim, const Line& line);

/// (1 - |y|^2)^{-(n-1)/2}; throws for |y| >= 1.
double rho_weight(const Vec3& y, int dim);

/// rho * f as a field (line integrals by adaptive quadrature).
class RhoWeightedField final : public ScalarField {
  public:
    RhoWeightedField(FieldPtr base, int dim) : base_(std::move(base)), dim_(dim) {}
    double value(const Vec3& x) const override;
    double upper_bound() const override;
    nlohmann::json describe() const override;

  private:
    FieldPtr base_;
    int dim_;
};

/// Parallel-beam data: angles i * pi / n_angles, offsets -1 + (j + 1/2) * 2 / n_offsets.
struct Sinogram {
    int n_angles = 0;
    int n_offsets = 0;
    std::vector<double> values;  ///< row-major [angle][offset]
    bool weighted = false;

    Sinogram() = default;
    Sinogram(int angles, int offsets);
    double angle(int i) const;
    double offset(int j) const;
    double offset_step() const { return 2.0 / n_offsets; }
    double& at(int i, int j) { return values[static_cast<std::size_t>(i) * n_offsets + j]; }
    double at(int i, int j) const { return values[static_cast<std::size_t>(i) * n_offsets + j]; }
};

/// Square pixel grid on [-1,1]^2; pixel (i, j) has centre (-1 + (i+1/2) h, -1 + (j+1/2) h).
struct Image {
    int size = 0;
    std::vector<double> values;  ///< row-major [j][i]

    Image() = default;
    explicit Image(int n);
    double coord(int i) const { return -1.0 + (i + 0.5) * 2.0 / size; }
    double& at(int i, int j) { return values[static_cast<std::size_t>(j) * size + i]; }
    double at(int i, int j) const { return values[static_cast<std::size_t>(j) * size + i]; }
    /// Zero every pixel whose centre lies outside the disc of the given radius.
    void mask(double radius = 1.0);
};

/// Sinogram of a field sampled at the grid lines.
Sinogram sample_sinogram(const ScalarField& f, int n_angles, int n_offsets);

/// Image of a field sampled at pixel centres, masked to the disc.
Image sample_image(const ScalarField& f, int size);

/// Spatial Ram-Lak kernel with Hann apodization at the Nyquist cutoff; 2m - 1 taps centred at m - 1.
std::vector<double> ramp_kernel(int m, double dq);

/// Filtered backprojection (n=2). Throws std::invalid_argument for fewer than 8 angles.
Image fbp_invert(const Sinogram& sino, int image_size);

/// Relative L2 error of `approx` against `truth` over pixels with |y| < radius.
double relative_l2_error(const Image& approx, const Image& truth, double radius);
double l2_norm(const Image& image, double radius);

/// Data indexed by ordered boundary-node pairs (source, detector) of the n=2 grid of N nodes,
/// symmetric under swap. NaN marks missing chords.
struct PairData {
    int n_nodes = 0;
    std::vector<double> values;  ///< row-major [source][detector]

    PairData() = default;
    explicit PairData(int n);
    double& at(int s, int d) { return values[static_cast<std::size_t>(s) * n_nodes + d]; }
    double at(int s, int d) const { return values[static_cast<std::size_t>(s) * n_nodes + d]; }
};

struct RebinResult {
    Sinogram sinogram;
    int gaps = 0;           ///< bins with no usable neighbouring chord
    int partial_bins = 0;   ///< bins interpolated from fewer than 4 chords
};

/// Bilinear rebinning in the periodic (source angle, detector angle) grid. Diagonal entries
/// stand for tangent lines and are taken as `diagonal_value`.
RebinResult boundary_pairs_to_sinogram(const PairData& data, int n_angles, int n_offsets,
                                       double diagonal_value = 0.0);

}  // namespace albedo
