#pragma once

// Run configuration: a versioned JSON document plus named presets.

#include "doa/eval.hpp"
#include "doa/likelihood.hpp"
#include "doa/nn.hpp"
#include "doa/signal_sim.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace doa {

inline constexpr int kConfigSchemaVersion = 1;

enum class Profile { desk, paper };
std::string to_string(Profile p);
Profile profile_from_string(const std::string& s);

enum class ChainTraining { teacher_forcing, sequential };

struct TrainSettings {
    TrainConfig optimizer;
    Architecture architecture{3, 256};
    ChainTraining chain_training = ChainTraining::teacher_forcing;
    bool train_br = true;
    std::uint64_t checkpoint_every = 0;  // samples between resumable snapshots, 0 = never
};

struct AdaptSettings {
    std::uint64_t total_samples = 100000;
    double learning_rate = 1e-3;
    double rho_min = 0.0;
    double rho_max = 1.0;
};

struct EvaluationSettings {
    std::vector<double> snr_db{20.0};
    std::vector<int> num_snapshots{10};
    int num_sources = 2;
    double rho = 0.0;
    std::size_t realizations = 2000;
    bool refine = true;
    RefineOptions refine_options;
    double trim_quantile = 0.99;
    std::vector<std::string> estimators{"chainnet", "br", "genie_ml"};
    AngleMode angle_mode = AngleMode::quadratic;
    bool mask = true;
};

struct RunConfig {
    std::string preset = "custom";
    Profile profile = Profile::desk;
    bool override_table1 = false;  // lets a paper-profile config alter Table 1 constants

    ArrayGeometry geometry;
    SubarraySelection selection = SubarraySelection::table2_scheme();
    SectorGrid grid{72};
    int num_snapshots = 10;
    ScenarioDistribution train_distribution;  // grid is kept in sync with `grid`

    TrainSettings train;
    AdaptSettings adapt;
    EvaluationSettings evaluation;

    std::uint64_t train_seed = 1;
    std::uint64_t eval_seed = 2;
    std::filesystem::path out_dir = "run";
    std::filesystem::path chain_checkpoint;  // empty: <out_dir>/chain
    std::filesystem::path br_checkpoint;     // empty: <out_dir>/br

    // Throws ConfigError on any inconsistency, including altered Table 1
    // constants under the paper profile without override.
    void validate() const;

    SampleGenerator train_generator() const;
    EvalConfig eval_config(double snr_db, int num_snapshots) const;
    std::filesystem::path chain_dir() const;
    std::filesystem::path br_dir() const;
};

nlohmann::json to_json(const RunConfig& cfg);
// Missing keys keep their defaults; unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& file);
void save_run_config(const std::filesystem::path& file, const RunConfig& cfg);

// table1-paper, table2-subarrays, desk-small.
RunConfig preset(const std::string& name);
std::vector<std::string> preset_names();

// Applies the Table 1 optimizer, architecture and distribution values.
void apply_paper_profile(RunConfig& cfg);

}  // namespace doa
