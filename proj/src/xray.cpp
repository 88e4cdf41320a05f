// SPDX-License-Identifier: Apache-2.0
#include "albedo/xray.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "albedo/parallel.hpp"
#include "albedo/quadrature.hpp"
#include "albedo/simd.hpp"

namespace albedo {

using std::numbers::pi;

Line line_from_angle(double angle, double q) {
    Line l;
    l.direction = {std::cos(angle), std::sin(angle), 0.0};
    l.midpoint = Vec3{-l.direction.y, l.direction.x, 0.0} * q;
    l.half_length = std::abs(q) < 1.0 ? std::sqrt(1.0 - q * q) : 0.0;
    return l;
}

Line line_from_chord(const Chord& chord) {
    Line l;
    l.direction = chord.direction;
    l.midpoint = (chord.source + chord.detector) * 0.5;
    l.half_length = 0.5 * chord.length;
    return l;
}

double xray_transform(const ScalarField& f, const Line& line) {
    if (line.half_length <= 0.0) {
        return 0.0;
    }
    const Vec3 a = line.midpoint - line.direction * line.half_length;
    const Vec3 b = line.midpoint + line.direction * line.half_length;
    return f.line_integral(a, b);
}

double xray_transform(const ScalarField& f, double angle, double q) {
    return xray_transform(f, line_from_angle(angle, q));
}

WeightedTransform weighted_xray(const PointFunction& f, int dim, const Line& line) {
    WeightedTransform r;
    const double c = line.half_length;
    if (c <= 0.0) {
        return r;
    }
    auto point = [&](double theta) { return line.midpoint + line.direction * (c * std::sin(theta)); };
    quad::AdaptiveOptions opt;
    opt.rel_tol = 1e-12;
    opt.abs_tol = 1e-15;
    opt.max_depth = 22;
    if (dim == 2) {
        r.value = quad::adaptive_panels([&](double th) { return f(point(th)); }, -0.5 * pi, 0.5 * pi, 16, opt)
                      .value;
        return r;
    }
    const double edge = 1e-7;
    if (f(point(0.5 * pi - edge)) != 0.0 || f(point(-0.5 * pi + edge)) != 0.0) {
        r.divergent = true;
        r.value = std::numeric_limits<double>::infinity();
        return r;
    }
    r.value = quad::adaptive_panels(
                  [&](double th) {
                      const double cs = std::cos(th);
                      if (cs <= 0.0) {
                          return 0.0;
                      }
                      const double v = f(point(th));
                      return v == 0.0 ? 0.0 : v / (c * cs);
                  },
                  -0.5 * pi, 0.5 * pi, 16, opt)
                  .value;
    return r;
}

WeightedTransform weighted_xray(const ScalarField& f, int dim, const Line& line) {
    return weighted_xray([&](const Vec3& y) { return f.value(y); }, dim, line);
}

double rho_weight(const Vec3& y, int dim) {
    const double s = 1.0 - norm2(y);
    if (!(s > 0.0)) {
        throw std::invalid_argument("rho_weight: point must lie in the open unit ball");
    }
    return dim == 2 ? 1.0 / std::sqrt(s) : 1.0 / s;
}

double RhoWeightedField::value(const Vec3& x) const {
    const double v = base_->value(x);
    if (v == 0.0) {
        return 0.0;
    }
    return v * rho_weight(x, dim_);
}

double RhoWeightedField::upper_bound() const { return std::numeric_limits<double>::infinity(); }

nlohmann::json RhoWeightedField::describe() const {
    return {{"type", "rho_weighted"}, {"dim", dim_}, {"base", base_->describe()}};
}

Sinogram::Sinogram(int angles, int offsets)
    : n_angles(angles), n_offsets(offsets),
      values(static_cast<std::size_t>(angles) * offsets, 0.0) {}

double Sinogram::angle(int i) const { return pi * i / n_angles; }

double Sinogram::offset(int j) const { return -1.0 + (j + 0.5) * 2.0 / n_offsets; }

Image::Image(int n) : size(n), values(static_cast<std::size_t>(n) * n, 0.0) {}

void Image::mask(double radius) {
    for (int j = 0; j < size; ++j) {
        for (int i = 0; i < size; ++i) {
            if (coord(i) * coord(i) + coord(j) * coord(j) >= radius * radius) {
                at(i, j) = 0.0;
            }
        }
    }
}

Sinogram sample_sinogram(const ScalarField& f, int n_angles, int n_offsets) {
    Sinogram s(n_angles, n_offsets);
    parallel_for(static_cast<std::size_t>(n_angles), [&](std::size_t i) {
        for (int j = 0; j < n_offsets; ++j) {
            s.at(static_cast<int>(i), j) = xray_transform(f, s.angle(static_cast<int>(i)), s.offset(j));
        }
    });
    return s;
}

Image sample_image(const ScalarField& f, int size) {
    Image img(size);
    for (int j = 0; j < size; ++j) {
        for (int i = 0; i < size; ++i) {
            const Vec3 y{img.coord(i), img.coord(j), 0.0};
            img.at(i, j) = norm2(y) < 1.0 ? f.value(y) : 0.0;
        }
    }
    return img;
}

std::vector<double> ramp_kernel(int m, double dq) {
    // Ram-Lak taps on a periodic buffer of length L = 2m, apodized in frequency by a Hann window.
    const int L = 2 * m;
    std::vector<double> h(L, 0.0);
    for (int k = 0; k < L; ++k) {
        const int d = k <= m ? k : k - L;
        if (d == 0) {
            h[k] = 1.0 / (4.0 * dq * dq);
        } else if (d % 2 != 0) {
            h[k] = -1.0 / (pi * pi * double(d) * double(d) * dq * dq);
        }
    }
    // Even real sequence: DFT and its inverse are cosine sums.
    std::vector<double> spectrum(L, 0.0);
    for (int f = 0; f < L; ++f) {
        double s = 0.0;
        for (int k = 0; k < L; ++k) {
            s += h[k] * std::cos(2.0 * pi * double(f) * k / L);
        }
        const int fd = f <= m ? f : L - f;
        const double window = 0.5 * (1.0 + std::cos(pi * fd / m));
        spectrum[f] = s * window;
    }
    std::vector<double> taps(2 * m - 1, 0.0);
    for (int d = -(m - 1); d <= m - 1; ++d) {
        const int k = (d + L) % L;
        double s = 0.0;
        for (int f = 0; f < L; ++f) {
            s += spectrum[f] * std::cos(2.0 * pi * double(f) * k / L);
        }
        taps[d + m - 1] = s / L;
    }
    return taps;
}

Image fbp_invert(const Sinogram& sino, int image_size) {
    if (sino.n_angles < 8) {
        throw std::invalid_argument("fbp_invert: need at least 8 angles");
    }
    if (image_size < 2) {
        throw std::invalid_argument("fbp_invert: image size must be >= 2");
    }
    const int m = sino.n_offsets;
    const double dq = sino.offset_step();
    const std::vector<double> taps = ramp_kernel(m, dq);
    std::vector<double> filtered(sino.values.size());
    parallel_for(static_cast<std::size_t>(sino.n_angles), [&](std::size_t i) {
        const double* row = sino.values.data() + i * m;
        double* out = filtered.data() + i * m;
        simd::convolve_same(row, taps.data(), out, static_cast<std::size_t>(m));
        for (int j = 0; j < m; ++j) {
            out[j] *= dq;
        }
    });
    Image img(image_size);
    const double h = 2.0 / image_size;
    const double scale = pi / sino.n_angles;
    parallel_for(static_cast<std::size_t>(image_size), [&](std::size_t jrow) {
        double* row = img.values.data() + jrow * image_size;
        simd::BackprojectRow g{};
        g.x0 = -1.0 + 0.5 * h;
        g.dx = h;
        g.y = -1.0 + (static_cast<double>(jrow) + 0.5) * h;
        g.q0 = sino.offset(0);
        g.dq = dq;
        g.scale = scale;
        for (int i = 0; i < sino.n_angles; ++i) {
            const double a = sino.angle(i);
            g.cos_theta = std::cos(a);
            g.sin_theta = std::sin(a);
            simd::backproject_row(g, filtered.data() + static_cast<std::size_t>(i) * m,
                                  static_cast<std::size_t>(m), row,
                                  static_cast<std::size_t>(image_size));
        }
    });
    img.mask(1.0);
    return img;
}

double l2_norm(const Image& image, double radius) {
    double s = 0.0;
    for (int j = 0; j < image.size; ++j) {
        for (int i = 0; i < image.size; ++i) {
            const double r2 = image.coord(i) * image.coord(i) + image.coord(j) * image.coord(j);
            if (r2 < radius * radius) {
                s += image.at(i, j) * image.at(i, j);
            }
        }
    }
    const double h = 2.0 / image.size;
    return std::sqrt(s * h * h);
}

double relative_l2_error(const Image& approx, const Image& truth, double radius) {
    if (approx.size != truth.size) {
        throw std::invalid_argument("relative_l2_error: image sizes differ");
    }
    Image diff(approx.size);
    for (std::size_t k = 0; k < diff.values.size(); ++k) {
        diff.values[k] = approx.values[k] - truth.values[k];
    }
    const double denom = l2_norm(truth, radius);
    const double num = l2_norm(diff, radius);
    return denom > 0.0 ? num / denom : num;
}

PairData::PairData(int n)
    : n_nodes(n), values(static_cast<std::size_t>(n) * n, std::numeric_limits<double>::quiet_NaN()) {}

RebinResult boundary_pairs_to_sinogram(const PairData& data, int n_angles, int n_offsets,
                                       double diagonal_value) {
    RebinResult r;
    r.sinogram = Sinogram(n_angles, n_offsets);
    const int n = data.n_nodes;
    const double step = 2.0 * pi / n;
    auto value = [&](int s, int d, bool& ok) {
        s = ((s % n) + n) % n;
        d = ((d % n) + n) % n;
        if (s == d) {
            ok = true;
            return diagonal_value;
        }
        const double v = data.at(s, d);
        ok = std::isfinite(v);
        return ok ? v : 0.0;
    };
    for (int i = 0; i < n_angles; ++i) {
        const double theta = r.sinogram.angle(i);
        for (int j = 0; j < n_offsets; ++j) {
            const double q = r.sinogram.offset(j);
            const double beta = std::acos(q);
            const double a_det = theta + 0.5 * pi - beta;
            const double a_src = theta + 0.5 * pi + beta;
            const double ps = a_src / step, pd = a_det / step;
            const double fs = std::floor(ps), fd = std::floor(pd);
            const int s0 = static_cast<int>(fs), d0 = static_cast<int>(fd);
            const double ws = ps - fs, wd = pd - fd;
            double sum = 0.0, wsum = 0.0;
            int used = 0;
            for (int cs = 0; cs < 2; ++cs) {
                for (int cd = 0; cd < 2; ++cd) {
                    const double w = (cs ? ws : 1.0 - ws) * (cd ? wd : 1.0 - wd);
                    bool ok = false;
                    const double v = value(s0 + cs, d0 + cd, ok);
                    if (ok) {
                        sum += w * v;
                        wsum += w;
                        ++used;
                    }
                }
            }
            if (wsum <= 1e-12) {
                ++r.gaps;
                r.sinogram.at(i, j) = 0.0;
                continue;
            }
            if (used < 4) {
                ++r.partial_bins;
            }
            r.sinogram.at(i, j) = sum / wsum;
        }
    }
    return r;
}

}  // namespace albedo
