#pragma once

// Subcommand implementations behind the command-line tool.

#include "doa/config.hpp"
#include "doa/eval.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

namespace doa {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;
inline constexpr int kExitNumerical = 2;
inline constexpr int kExitOracle = 3;

// Optimizer, architecture and seed recorded in every checkpoint manifest.
nlohmann::json training_metadata(const RunConfig& cfg);

struct TrainOutcome {
    std::uint64_t samples_seen = 0;
    std::vector<double> final_stage_losses;
    double final_br_loss = 0.0;
};

// Writes <out>/config.json, <out>/chain, optionally <out>/br, and
// <out>/train_loss.csv. With checkpoint_every > 0 a resumable snapshot is
// kept under <out>/state; `resume` continues from it. A nonzero `halt_after`
// stops right after the first snapshot at or past that many samples.
TrainOutcome cmd_train(const RunConfig& cfg, bool resume, std::ostream& log, std::uint64_t halt_after = 0);

// Fine-tunes the chain in `base` on the configured distribution with the
// adapt rho range, writing to `out` with the parent noted in the manifest.
void cmd_adapt(const RunConfig& cfg, const std::filesystem::path& base, const std::filesystem::path& out,
               std::ostream& log);

struct FixedScenario {
    std::vector<double> doas_deg;
    double snr_db = 20.0;
    int num_snapshots = 10;
};

// Monte Carlo evaluation over every (SNR, N) point, or a single fixed scene
// whose BR / MUSIC spectra are dumped.
std::vector<RunReport> cmd_evaluate(const RunConfig& cfg, const std::optional<FixedScenario>& fixed,
                                    std::ostream& log);

struct RefineRequest {
    std::vector<double> doas_deg;  // true DoAs of the simulated scene
    std::vector<double> init_deg;  // starting point; empty uses the chain estimate
    double snr_db = 20.0;
    int num_snapshots = 10;
};

RefineResult cmd_refine(const RunConfig& cfg, const RefineRequest& req, std::ostream& log);

struct OracleOptions {
    int num_sectors = 24;
    int num_sources = 2;
    int num_antennas = 4;
    int instances = 200;
    double snr_db = 10.0;
    bool exhaustive_sweep = true;
    int gradient_cases = 100;
    double gradient_tolerance = 1e-4;
    bool corrupt_gradient = false;  // test hook for the failure path
};

struct OracleSummary {
    int map_instances = 0;
    int map_mismatches = 0;
    int gradient_cases = 0;
    int gradient_failures = 0;
    double worst_gradient_error = 0.0;

    bool passed() const { return map_mismatches == 0 && gradient_failures == 0; }
};

OracleSummary cmd_oracle(const RunConfig& cfg, const OracleOptions& opts, std::ostream& log);

// Collects report.json from each run directory into <out>/summary.csv and
// prints a table.
void cmd_report(const std::vector<std::filesystem::path>& runs, const std::filesystem::path& out, std::ostream& log);

// Central differences of nll with step h over every parameter of `params`.
MlGradient nll_gradient_fd(const std::vector<CMatrix>& covs, const MlParams& params, const LikelihoodModel& model,
                           double h);
double gradient_relative_error(const MlGradient& analytic, const MlGradient& reference);

}  // namespace doa
