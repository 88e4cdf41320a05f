// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "albedo/errors.hpp"
#include "albedo/io.hpp"
#include "albedo/parallel.hpp"
#include "commands.hpp"

using namespace albedo;

namespace {

struct Common {
    std::string config;
    std::string out;
    long long seed = -1;
    int threads = -1;
    std::string order;
};

void add_common(CLI::App* app, Common& c, bool with_order) {
    app->add_option("--config", c.config, "experiment configuration (JSON)")->required();
    app->add_option("--out", c.out, "output directory (default: config output)");
    app->add_option("--seed", c.seed, "seed, overrides the config")->check(CLI::NonNegativeNumber);
    app->add_option("--threads", c.threads, "worker threads (results do not depend on it)")
        ->check(CLI::NonNegativeNumber);
    if (with_order) {
        app->add_option("--order", c.order, "kernel order 0, 1, 2 or mc")
            ->check(CLI::IsMember({"0", "1", "2", "mc"}));
    }
}

ExperimentConfig resolve(const Common& c) {
    cli::Overrides o;
    if (c.seed >= 0) {
        o.seed = static_cast<std::uint64_t>(c.seed);
    }
    if (c.threads >= 0) {
        o.threads = c.threads;
    }
    if (!c.order.empty()) {
        o.order = c.order;
    }
    if (!c.out.empty()) {
        o.out = c.out;
    }
    return cli::apply_overrides(ExperimentConfig::load(c.config), o);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Time-resolved transport albedo: synthesis, reconstruction and checks"};
    app.set_version_flag("--version", std::string(kToolVersion));
    app.require_subcommand(1);

    Common sim;
    CLI::App* simulate = app.add_subcommand("simulate", "synthesize boundary measurements");
    add_common(simulate, sim, true);

    Common rec;
    std::string data_dir;
    bool allow_mismatch = false;
    CLI::App* reconstruct = app.add_subcommand("reconstruct", "recover sigma and k0 from measurements");
    add_common(reconstruct, rec, true);
    reconstruct->add_option("--data", data_dir, "directory with traces.csv and meta.json (default: --out)");
    reconstruct->add_flag("--allow-hash-mismatch", allow_mismatch, "accept data from a different config");

    std::string level = "quick", verify_out, convention = "kernel_consistent";
    double tamper = 0.0;
    long long verify_seed = 1;
    int verify_threads = 0;
    CLI::App* verify = app.add_subcommand("verify", "run the oracle checks");
    verify->add_option("--level", level, "quick or full")->check(CLI::IsMember({"quick", "full"}));
    verify->add_option("--out", verify_out, "directory for verify.json");
    verify->add_option("--seed", verify_seed, "seed of the random samples")->check(CLI::NonNegativeNumber);
    verify->add_option("--threads", verify_threads)->check(CLI::NonNegativeNumber);
    verify->add_option("--convention", convention, "n=3 limit constant: kernel_consistent or published")
        ->check(CLI::IsMember({"kernel_consistent", "published"}));
    verify->add_option("--tamper", tamper, "relative perturbation of the closed forms (suite sensitivity)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : cli::kConfigError;
    }

    try {
        if (*simulate) {
            const ExperimentConfig c = resolve(sim);
            cli::simulate(c, c.output);
            std::cout << "wrote " << c.output << " (config_hash " << c.hash() << ")\n";
        } else if (*reconstruct) {
            const ExperimentConfig c = resolve(rec);
            const std::string in = data_dir.empty() ? c.output : data_dir;
            cli::reconstruct(c, in, c.output, allow_mismatch);
            std::cout << "wrote " << c.output << "/report.json\n";
        } else if (*verify) {
            set_thread_count(verify_threads);
            VerifyOptions o;
            o.full = level == "full";
            o.tamper = tamper;
            o.seed = static_cast<std::uint64_t>(verify_seed);
            o.convention = limit_convention_from_string(convention);
            const VerifyReport r = cli::verify(o, verify_out);
            for (const auto& ch : r.checks) {
                std::printf("%-4s %-40s measured %.3e  threshold %.3e\n", ch.passed ? "PASS" : "FAIL",
                            ch.name.c_str(), ch.measured, ch.threshold);
            }
            return r.passed ? cli::kSuccess : cli::kVerifyFailed;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return cli::kConfigError;
    } catch (const BudgetExceeded& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return cli::kConfigError;
    } catch (const DataMismatch& e) {
        std::cerr << "data mismatch: " << e.what() << '\n';
        return cli::kDataMismatch;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return cli::kFailure;
    }
    return cli::kSuccess;
}
