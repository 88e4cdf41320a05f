// SPDX-License-Identifier: Apache-2.0
#include "albedo/config.hpp"

#include <cmath>
#include <set>

#include "albedo/errors.hpp"
#include "albedo/io.hpp"

namespace albedo {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
    if (!j.is_object()) {
        throw ConfigError(where + ": expected an object");
    }
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key)) {
            throw ConfigError(where + ": unknown key '" + key + "'");
        }
    }
}

template <class T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        out = j.at(key).get<T>();
    }
}

Vec3 vec3(const json& j) {
    if (!j.is_array() || j.size() < 2 || j.size() > 3) {
        throw ConfigError("expected a vector of 2 or 3 numbers");
    }
    return {j[0].get<double>(), j[1].get<double>(), j.size() == 3 ? j[2].get<double>() : 0.0};
}

json vec_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

BoundaryProfile profile(const json& j, const std::string& where) {
    check_keys(j, where, {"base", "cos_coeff"});
    BoundaryProfile p;
    read(j, "base", p.base);
    read(j, "cos_coeff", p.cos_coeff);
    return p;
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
    ExperimentConfig c;
    try {
        check_keys(j, "config", {"dim", "phantom", "pulse", "horizon", "dt", "acquisition", "method",
                                 "synthesis", "mc", "recon", "seed", "output", "threads"});
        read(j, "dim", c.dim);
        if (j.contains("phantom")) {
            const json& p = j.at("phantom");
            check_keys(p, "phantom", {"sigma", "k0", "phase", "source", "detector", "mode", "delta"});
            read(p, "sigma", c.sigma);
            read(p, "k0", c.k0);
            read(p, "phase", c.phase);
            if (p.contains("source")) {
                c.source = profile(p.at("source"), "phantom.source");
            }
            if (p.contains("detector")) {
                c.detector = profile(p.at("detector"), "phantom.detector");
            }
            if (p.contains("mode")) {
                const std::string m = p.at("mode").get<std::string>();
                if (m != "H1" && m != "H2") {
                    throw ConfigError("phantom.mode must be H1 or H2");
                }
                c.mode = m == "H1" ? SupportMode::H1 : SupportMode::H2;
            }
            read(p, "delta", c.delta);
        }
        if (j.contains("pulse")) {
            const json& p = j.at("pulse");
            check_keys(p, "pulse", {"shape", "eta"});
            read(p, "shape", c.pulse_shape);
            read(p, "eta", c.eta);
        }
        read(j, "horizon", c.horizon);
        read(j, "dt", c.dt);
        if (j.contains("acquisition")) {
            const json& a = j.at("acquisition");
            check_keys(a, "acquisition", {"boundary_nodes", "pairs", "detector_subsamples", "planes"});
            read(a, "boundary_nodes", c.boundary_nodes);
            read(a, "pairs", c.pairs);
            read(a, "detector_subsamples", c.detector_subsamples);
            if (a.contains("planes")) {
                c.planes.clear();
                for (const auto& pl : a.at("planes")) {
                    if (!pl.is_array() || pl.size() != 2) {
                        throw ConfigError("acquisition.planes: each plane is [e1, e2]");
                    }
                    c.planes.emplace_back(vec3(pl[0]), vec3(pl[1]));
                }
            }
        }
        read(j, "method", c.method);
        if (j.contains("synthesis")) {
            const json& s = j.at("synthesis");
            check_keys(s, "synthesis", {"order", "window", "panel_width", "panel_nodes",
                                        "gamma2_panel_nodes", "gamma1_quad", "gamma2_quad"});
            SynthesisOptions& o = c.synthesis;
            read(s, "order", o.order);
            read(s, "window", o.window);
            read(s, "panel_width", o.panel_width);
            read(s, "panel_nodes", o.panel_nodes);
            read(s, "gamma2_panel_nodes", o.gamma2_panel_nodes);
            if (s.contains("gamma1_quad")) {
                const json& q = s.at("gamma1_quad");
                check_keys(q, "synthesis.gamma1_quad", {"rel_tol", "abs_tol", "max_depth", "panels"});
                read(q, "rel_tol", o.gamma1_quad.rel_tol);
                read(q, "abs_tol", o.gamma1_quad.abs_tol);
                read(q, "max_depth", o.gamma1_quad.max_depth);
                read(q, "panels", o.gamma1_quad.panels);
            }
            if (s.contains("gamma2_quad")) {
                const json& q = s.at("gamma2_quad");
                check_keys(q, "synthesis.gamma2_quad", {"direction_nodes", "radial_nodes", "inner_nodes"});
                read(q, "direction_nodes", o.gamma2_quad.direction_nodes);
                read(q, "radial_nodes", o.gamma2_quad.radial_nodes);
                read(q, "inner_nodes", o.gamma2_quad.inner_nodes);
            }
        }
        if (j.contains("mc")) {
            const json& m = j.at("mc");
            check_keys(m, "mc", {"particles", "roulette_weight", "max_order", "block_size"});
            read(m, "particles", c.mc.particles);
            read(m, "roulette_weight", c.mc.roulette_weight);
            read(m, "max_order", c.mc.max_order);
            read(m, "block_size", c.mc.block_size);
        }
        if (j.contains("recon")) {
            const json& r = j.at("recon");
            check_keys(r, "recon", {"sinogram_angles", "sinogram_offsets", "image_size", "eps1", "eps2",
                                    "max_residual", "max_reduced_chi", "min_bins", "max_halvings",
                                    "rho_mask_radius", "e_tolerance", "e_floor", "reconstruct_k0",
                                    "convention", "compare_truth"});
            ReconOptions& o = c.recon;
            read(r, "sinogram_angles", o.sinogram_angles);
            read(r, "sinogram_offsets", o.sinogram_offsets);
            read(r, "image_size", o.image_size);
            read(r, "eps1", o.fit.eps1);
            read(r, "eps2", o.fit.eps2);
            read(r, "max_residual", o.fit.max_residual);
            read(r, "max_reduced_chi", o.fit.max_reduced_chi);
            read(r, "min_bins", o.fit.min_bins);
            read(r, "max_halvings", o.fit.max_halvings);
            read(r, "rho_mask_radius", o.rho_mask_radius);
            read(r, "e_tolerance", o.e_tolerance);
            read(r, "e_floor", o.e_floor);
            read(r, "reconstruct_k0", o.reconstruct_k0);
            if (r.contains("convention")) {
                o.convention = limit_convention_from_string(r.at("convention").get<std::string>());
            }
            read(r, "compare_truth", c.compare_truth);
        }
        read(j, "seed", c.seed);
        read(j, "output", c.output);
        read(j, "threads", c.threads);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.mc.seed = c.seed;
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::string text;
    try {
        text = read_text_file(path);
    } catch (const std::exception& e) {
        throw ConfigError(e.what());
    }
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return from_json(j);
}

json ExperimentConfig::to_json() const {
    json planes = json::array();
    if (dim == 3) {
        for (const auto& [e1, e2] : this->planes) {
            planes.push_back({vec_json(e1), vec_json(e2)});
        }
    }
    const SynthesisOptions& s = synthesis;
    const FitOptions& f = recon.fit;
    return {
        {"dim", dim},
        {"phantom",
         {{"sigma", sigma},
          {"k0", k0},
          {"phase", phase},
          {"source", {{"base", source.base}, {"cos_coeff", source.cos_coeff}}},
          {"detector", {{"base", detector.base}, {"cos_coeff", detector.cos_coeff}}},
          {"mode", albedo::to_string(mode)},
          {"delta", delta}}},
        {"pulse", {{"shape", pulse_shape}, {"eta", eta}}},
        {"horizon", horizon},
        {"dt", dt},
        {"acquisition",
         {{"boundary_nodes", boundary_nodes},
          {"pairs", pairs},
          {"detector_subsamples", detector_subsamples},
          {"planes", planes}}},
        {"method", method},
        {"synthesis",
         {{"order", s.order},
          {"window", s.window},
          {"panel_width", s.panel_width},
          {"panel_nodes", s.panel_nodes},
          {"gamma2_panel_nodes", s.gamma2_panel_nodes},
          {"gamma1_quad",
           {{"rel_tol", s.gamma1_quad.rel_tol},
            {"abs_tol", s.gamma1_quad.abs_tol},
            {"max_depth", s.gamma1_quad.max_depth},
            {"panels", s.gamma1_quad.panels}}},
          {"gamma2_quad",
           {{"direction_nodes", s.gamma2_quad.direction_nodes},
            {"radial_nodes", s.gamma2_quad.radial_nodes},
            {"inner_nodes", s.gamma2_quad.inner_nodes}}}}},
        {"mc",
         {{"particles", mc.particles},
          {"roulette_weight", mc.roulette_weight},
          {"max_order", mc.max_order},
          {"block_size", mc.block_size}}},
        {"recon",
         {{"sinogram_angles", recon.sinogram_angles},
          {"sinogram_offsets", recon.sinogram_offsets},
          {"image_size", recon.image_size},
          {"eps1", f.eps1},
          {"eps2", f.eps2},
          {"max_residual", f.max_residual},
          {"max_reduced_chi", f.max_reduced_chi},
          {"min_bins", f.min_bins},
          {"max_halvings", f.max_halvings},
          {"rho_mask_radius", recon.rho_mask_radius},
          {"e_tolerance", recon.e_tolerance},
          {"e_floor", recon.e_floor},
          {"reconstruct_k0", recon.reconstruct_k0},
          {"convention", albedo::to_string(recon.convention)},
          {"compare_truth", compare_truth}}},
        {"seed", seed},
        {"output", output},
        {"threads", threads},
    };
}

std::string ExperimentConfig::hash() const {
    json j = to_json();
    j.erase("output");
    j.erase("threads");
    j.erase("method");
    j["synthesis"].erase("order");
    return hex64(fnv1a64(j.dump()));
}

void ExperimentConfig::validate() const {
    if (dim != 2 && dim != 3) {
        throw ConfigError("dim must be 2 or 3");
    }
    if (!(horizon > 2.0)) {
        throw ConfigError("horizon T must exceed 2 (the diameter)");
    }
    if (!(eta > 0.0) || !(eta < horizon)) {
        throw ConfigError("pulse.eta must lie in (0, T)");
    }
    if (pulse_shape != "triangle" && pulse_shape != "box") {
        throw ConfigError("pulse.shape must be triangle or box");
    }
    if (!(dt > 0.0) || dt > horizon) {
        throw ConfigError("dt must lie in (0, T]");
    }
    if (boundary_nodes < 4) {
        throw ConfigError("acquisition.boundary_nodes must be at least 4");
    }
    if (pairs != "line" && pairs != "all") {
        throw ConfigError("acquisition.pairs must be line or all");
    }
    if (detector_subsamples < 1) {
        throw ConfigError("acquisition.detector_subsamples must be positive");
    }
    if (method != "kernel" && method != "mc") {
        throw ConfigError("method must be kernel or mc");
    }
    if (synthesis.order < 0 || synthesis.order > 2) {
        throw ConfigError("synthesis.order must be 0, 1 or 2");
    }
    if (synthesis.order == 2 && dim == 3 && method == "kernel") {
        throw ConfigError("order-2 kernel synthesis is available for n=2 only");
    }
    if (!(delta >= 0.0) || !(delta < 1.0)) {
        throw ConfigError("phantom.delta must lie in [0, 1)");
    }
    if (method == "mc" && mc.particles == 0) {
        throw ConfigError("mc.particles must be positive");
    }
    if (recon.sinogram_angles < 2 || recon.sinogram_offsets < 2 || recon.image_size < 2) {
        throw ConfigError("recon: sinogram and image sizes must be at least 2");
    }
    if (threads < 0) {
        throw ConfigError("threads must be non-negative");
    }
    if (dim == 3) {
        if (planes.empty()) {
            throw ConfigError("acquisition.planes: n=3 needs at least one plane");
        }
        for (const auto& [e1, e2] : planes) {
            if (std::abs(norm(e1) - 1.0) > 1e-9 || std::abs(norm(e2) - 1.0) > 1e-9 ||
                std::abs(dot(e1, e2)) > 1e-9) {
                throw ConfigError("acquisition.planes: e1, e2 must be orthonormal");
            }
        }
    }
    try {
        field();
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(std::string("phantom: ") + e.what());
    }
}

OpticalField ExperimentConfig::field() const {
    OpticalField f = make_vacuum_field(dim);
    f.sigma = field_from_json(sigma, dim);
    f.k0 = field_from_json(k0, dim);
    f.phase = phase_from_json(phase, dim);
    f.mode = mode;
    f.delta = mode == SupportMode::H2 ? delta : 0.0;
    f.source = source;
    f.detector = detector;
    return f;
}

SourcePulse ExperimentConfig::pulse() const {
    return pulse_shape == "box" ? SourcePulse::box(eta, horizon) : SourcePulse::triangle(eta, horizon);
}

TimeGrid ExperimentConfig::time() const { return TimeGrid::covering(horizon, dt); }

std::vector<AcquisitionGeometry> ExperimentConfig::geometries() const {
    std::vector<AcquisitionGeometry> out;
    if (dim == 2) {
        AcquisitionGeometry g = pairs == "all" ? AcquisitionGeometry::all_pairs(2, boundary_nodes)
                                               : AcquisitionGeometry::line_pairs(2, boundary_nodes);
        g.detector_subsamples = detector_subsamples;
        out.push_back(std::move(g));
        return out;
    }
    for (const auto& [e1, e2] : planes) {
        AcquisitionGeometry g = AcquisitionGeometry::great_circle(boundary_nodes, e1, e2);
        if (pairs == "all") {
            const std::size_t n = g.pairs.size();
            for (std::size_t i = 0; i < n; ++i) {
                g.pairs.emplace_back(g.pairs[i].second, g.pairs[i].first);
            }
        }
        out.push_back(std::move(g));
    }
    return out;
}

}  // namespace albedo
