// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "albedo/config.hpp"
#include "albedo/verify.hpp"

namespace albedo::cli {

enum ExitCode { kSuccess = 0, kFailure = 1, kConfigError = 2, kVerifyFailed = 3, kDataMismatch = 4 };

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    std::optional<std::string> order;  ///< "0", "1", "2" or "mc"
    std::optional<std::string> out;
};

/// Config with the command-line overrides applied and re-validated.
ExperimentConfig apply_overrides(ExperimentConfig config, const Overrides& o);

/// traces.csv + meta.json (n=3: one pair per plane, traces_<i>.csv + meta_<i>.json for i >= 1).
void simulate(const ExperimentConfig& config, const std::string& out_dir);

/// Reads the files written by `simulate` from data_dir and writes sinogram_*.csv, image_*.csv,
/// boundary_sums.csv (n=3 H1) and report.json to out_dir.
void reconstruct(const ExperimentConfig& config, const std::string& data_dir,
                 const std::string& out_dir, bool allow_hash_mismatch);

/// Runs the check suite; writes verify.json to out_dir when not empty.
VerifyReport verify(const VerifyOptions& options, const std::string& out_dir);

}  // namespace albedo::cli
