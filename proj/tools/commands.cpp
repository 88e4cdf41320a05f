// SPDX-License-Identifier: Apache-2.0
#include "commands.hpp"

#include <cmath>
#include <filesystem>
#include <sstream>

#include "albedo/errors.hpp"
#include "albedo/io.hpp"
#include "albedo/parallel.hpp"

namespace albedo::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string suffix(std::size_t i) { return i == 0 ? "" : "_" + std::to_string(i); }

std::string provenance_line(const std::string& hash) {
    return std::string("# ") + kToolVersion + " config_hash=" + hash + "\n";
}

void write_json(const fs::path& path, const json& j) { write_text_file(path.string(), j.dump(2) + "\n"); }

void write_sinogram(const fs::path& path, const Sinogram& s, const std::string& hash) {
    std::ostringstream out;
    out << provenance_line(hash) << "angle,offset,value\n";
    for (int i = 0; i < s.n_angles; ++i) {
        for (int j = 0; j < s.n_offsets; ++j) {
            out << format_double(s.angle(i)) << ',' << format_double(s.offset(j)) << ','
                << format_double(s.at(i, j)) << '\n';
        }
    }
    write_text_file(path.string(), out.str());
}

void write_image(const fs::path& path, const Image& img, const std::string& hash) {
    std::ostringstream out;
    out << provenance_line(hash) << "x,y,value\n";
    for (int j = 0; j < img.size; ++j) {
        for (int i = 0; i < img.size; ++i) {
            out << format_double(img.coord(i)) << ',' << format_double(img.coord(j)) << ','
                << format_double(img.at(i, j)) << '\n';
        }
    }
    write_text_file(path.string(), out.str());
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());
    }
}

void check_grids(const ExperimentConfig& c, const MeasurementSet& m, const AcquisitionGeometry& g) {
    auto same = [](double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(b)); };
    if (m.geometry.dim != c.dim) {
        throw DataMismatch("grid mismatch: dimension");
    }
    if (!same(m.time.dt, c.dt) || m.time.bins != c.time().bins) {
        throw DataMismatch("grid mismatch: time grid");
    }
    if (!same(m.pulse.width, c.eta) || !same(m.pulse.horizon, c.horizon)) {
        throw DataMismatch("grid mismatch: source pulse");
    }
    if (m.geometry.nodes.size() != g.nodes.size()) {
        throw DataMismatch("grid mismatch: boundary nodes");
    }
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
        if (norm(m.geometry.nodes[i].position - g.nodes[i].position) > 1e-9) {
            throw DataMismatch("grid mismatch: boundary node " + std::to_string(i));
        }
    }
    for (const auto& tr : m.traces) {
        const int n = static_cast<int>(g.nodes.size());
        if (tr.source < 0 || tr.source >= n || tr.detector < 0 || tr.detector >= n) {
            throw DataMismatch("node index out of range");
        }
        if (m.method == "kernel" && tr.ballistic.empty()) {
            throw DataMismatch("missing ballistic channel for pair " + std::to_string(tr.source) + "-" +
                               std::to_string(tr.detector));
        }
        if (m.method == "mc" && tr.channels.empty()) {
            throw DataMismatch("missing ballistic channel for pair " + std::to_string(tr.source) + "-" +
                               std::to_string(tr.detector));
        }
    }
}

}  // namespace

ExperimentConfig apply_overrides(ExperimentConfig c, const Overrides& o) {
    if (o.seed) {
        c.seed = *o.seed;
        c.mc.seed = *o.seed;
    }
    if (o.threads) {
        c.threads = *o.threads;
    }
    if (o.out) {
        c.output = *o.out;
    }
    if (o.order) {
        if (*o.order == "mc") {
            c.method = "mc";
        } else if (*o.order == "0" || *o.order == "1" || *o.order == "2") {
            c.method = "kernel";
            c.synthesis.order = std::stoi(*o.order);
        } else {
            throw ConfigError("--order must be one of 0, 1, 2, mc");
        }
    }
    c.validate();
    return c;
}

void simulate(const ExperimentConfig& c, const std::string& out_dir) {
    set_thread_count(c.threads);
    const fs::path dir(out_dir);
    ensure_dir(dir);
    const OpticalField field = c.field();
    const std::string hash = c.hash();
    const auto geos = c.geometries();
    for (std::size_t i = 0; i < geos.size(); ++i) {
        MeasurementSet m = c.method == "mc" ? simulate_albedo_mc(field, c.pulse(), c.mc, geos[i], c.time())
                                            : albedo_truncated(field, c.pulse(), geos[i], c.time(), c.synthesis);
        m.config_hash = hash;
        std::ostringstream csv;
        write_measurements_csv(csv, m);
        write_text_file((dir / ("traces" + suffix(i) + ".csv")).string(), csv.str());
        json meta = measurement_metadata(m);
        meta["sets"] = geos.size();
        meta["set"] = i;
        meta["config"] = c.to_json();
        meta["config"].erase("output");
        meta["config"].erase("threads");
        write_json(dir / ("meta" + suffix(i) + ".json"), meta);
    }
}

void reconstruct(const ExperimentConfig& c, const std::string& data_dir, const std::string& out_dir,
                 bool allow_hash_mismatch) {
    set_thread_count(c.threads);
    const fs::path in(data_dir), dir(out_dir);
    const std::string hash = c.hash();
    const auto geos = c.geometries();
    std::vector<MeasurementSet> data;
    for (std::size_t i = 0; i < geos.size(); ++i) {
        const fs::path meta_path = in / ("meta" + suffix(i) + ".json");
        const fs::path csv_path = in / ("traces" + suffix(i) + ".csv");
        if (!fs::exists(meta_path) || !fs::exists(csv_path)) {
            throw DataMismatch("missing measurement files in " + in.string());
        }
        json meta;
        try {
            meta = json::parse(read_text_file(meta_path.string()));
        } catch (const json::exception& e) {
            throw DataMismatch(meta_path.string() + ": " + e.what());
        }
        std::istringstream csv(read_text_file(csv_path.string()));
        MeasurementSet m = read_measurements(csv, meta);
        if (m.config_hash != hash && !allow_hash_mismatch) {
            throw DataMismatch("config hash mismatch: data " + m.config_hash + ", config " + hash +
                               " (use --allow-hash-mismatch to override)");
        }
        check_grids(c, m, geos[i]);
        data.push_back(std::move(m));
    }
    const OpticalField field = c.field();
    ReconReport rep = reconstruct(data, field, c.compare_truth ? &field : nullptr, c.recon);
    rep.config_hash = hash;
    ensure_dir(dir);
    for (std::size_t i = 0; i < rep.slices.size(); ++i) {
        const auto& s = rep.slices[i];
        write_sinogram(dir / ("sinogram_attenuation" + suffix(i) + ".csv"), s.attenuation, hash);
        write_image(dir / ("image_sigma" + suffix(i) + ".csv"), s.sigma, hash);
        if (s.has_k0) {
            write_sinogram(dir / ("sinogram_k0" + suffix(i) + ".csv"), s.weighted_k0, hash);
            write_image(dir / ("image_k0" + suffix(i) + ".csv"), s.k0, hash);
        }
    }
    if (!rep.boundary_sums.empty()) {
        std::ostringstream out;
        out << provenance_line(hash) << "src_index,det_index,value,truth\n";
        for (const auto& b : rep.boundary_sums) {
            out << b.source << ',' << b.detector << ',' << format_double(b.value) << ','
                << format_double(b.truth) << '\n';
        }
        write_text_file((dir / "boundary_sums.csv").string(), out.str());
    }
    json report = rep.summary();
    report["tool_version"] = kToolVersion;
    report["config_hash"] = hash;
    report["data_config_hash"] = data.front().config_hash;
    report["method"] = data.front().method;
    report["order"] = data.front().order;
    report["config"] = c.to_json();
    report["config"].erase("output");
    report["config"].erase("threads");
    write_json(dir / "report.json", report);
}

VerifyReport verify(const VerifyOptions& options, const std::string& out_dir) {
    VerifyReport rep = run_verification(options);
    if (!out_dir.empty()) {
        ensure_dir(out_dir);
        json j = rep.to_json();
        j["tool_version"] = kToolVersion;
        j["tamper"] = options.tamper;
        write_json(fs::path(out_dir) / "verify.json", j);
    }
    return rep;
}

}  // namespace albedo::cli
