// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "albedo/recon.hpp"
#include "albedo/transport.hpp"

namespace albedo {

/// One experiment: phantom, acquisition, synthesis and reconstruction settings.
/// Parsed from a single JSON document; unknown keys are rejected.
struct ExperimentConfig {
    int dim = 2;
    nlohmann::json sigma = {{"type", "constant"}, {"value", 0.0}};
    nlohmann::json k0 = {{"type", "constant"}, {"value", 0.0}};
    nlohmann::json phase = {{"type", "isotropic"}};
    BoundaryProfile source;
    BoundaryProfile detector;
    SupportMode mode = SupportMode::H2;
    double delta = 0.1;

    std::string pulse_shape = "triangle";
    double eta = 0.02;
    double horizon = 2.5;
    double dt = 0.005;

    int boundary_nodes = 64;
    std::string pairs = "line";            ///< "line" (source < detector) or "all"
    int detector_subsamples = 1;
    /// n=3: planes of the great circles, each {e1, e2} orthonormal.
    std::vector<std::pair<Vec3, Vec3>> planes = {{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}}};

    std::string method = "kernel";          ///< "kernel" or "mc"
    SynthesisOptions synthesis;
    McConfig mc;
    ReconOptions recon;
    bool compare_truth = true;              ///< report errors against the phantom

    std::uint64_t seed = 1;
    std::string output = "out";
    int threads = 0;                        ///< 0: hardware concurrency

    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load(const std::string& path);
    nlohmann::json to_json() const;

    /// FNV-1a of the canonical JSON without output, threads, method and synthesis order, so
    /// kernel and Monte Carlo data of one experiment share it.
    std::string hash() const;

    void validate() const;
    OpticalField field() const;
    SourcePulse pulse() const;
    TimeGrid time() const;
    /// One geometry for n=2; one per plane for n=3.
    std::vector<AcquisitionGeometry> geometries() const;
};

}  // namespace albedo
