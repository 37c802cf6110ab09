#pragma once

// Monte Carlo evaluation: periodic errors, permutation-matched RMSPE,
// trimmed statistics, empirical CDFs and report files.

#include "doa/baselines.hpp"
#include "doa/chainnet.hpp"
#include "doa/likelihood.hpp"
#include "doa/signal_sim.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace doa {

// |mod_{[-pi, pi)}(a - b)|, in [0, pi].
double periodic_error(double truth, double estimate);

struct Matching {
    std::vector<int> assignment;  // estimate index matched to each true source
    double rmspe = 0.0;
};

// Exhaustive search over permutations (L <= 8) minimising the mean squared
// periodic error.
Matching match_and_rmspe(const std::vector<double>& truth, const std::vector<double>& estimates);

// Right-continuous empirical CDF: distinct sorted values with P(X <= v).
std::vector<std::pair<double, double>> empirical_cdf(std::vector<double> values);

// sqrt(mean of the floor(q n) smallest per-realization squared errors).
double trimmed_rmspe(std::vector<double> squared_errors, double quantile);

struct Observation {
    std::vector<CMatrix> covariances;
    RVector features;
    DrawnScene truth;
};

class Estimator {
public:
    virtual ~Estimator() = default;
    virtual std::string name() const = 0;
    virtual std::vector<double> estimate(const Observation& obs) const = 0;
    // Genie estimators start refinement from the truth.
    virtual bool is_genie() const { return false; }
};

class ChainNetEstimator final : public Estimator {
public:
    ChainNetEstimator(const ChainModel& chain, AngleMode mode, bool mask = true, std::string name = "chainnet")
        : chain_(chain), mode_(mode), mask_(mask), name_(std::move(name)) {}
    std::string name() const override { return name_; }
    std::vector<double> estimate(const Observation& obs) const override;

private:
    const ChainModel& chain_;
    AngleMode mode_;
    bool mask_;
    std::string name_;
};

class BrEstimator final : public Estimator {
public:
    BrEstimator(const BrModel& model, int num_sources, std::string name = "br")
        : model_(model), num_sources_(num_sources), name_(std::move(name)) {}
    std::string name() const override { return name_; }
    std::vector<double> estimate(const Observation& obs) const override;
    RVector spectrum(const Observation& obs) const { return model_.spectrum(obs.features); }

private:
    const BrModel& model_;
    int num_sources_;
    std::string name_;
};

class MusicEstimator final : public Estimator {
public:
    MusicEstimator(ArrayGeometry geom, SectorGrid grid, int num_sources)
        : geom_(geom), grid_(grid), num_sources_(num_sources) {}
    std::string name() const override { return "music"; }
    std::vector<double> estimate(const Observation& obs) const override;

private:
    ArrayGeometry geom_;
    SectorGrid grid_;
    int num_sources_;
};

class GenieMlEstimator final : public Estimator {
public:
    std::string name() const override { return "genie_ml"; }
    std::vector<double> estimate(const Observation& obs) const override;
    bool is_genie() const override { return true; }
};

struct EvalConfig {
    ArrayGeometry geometry;
    SubarraySelection selection = SubarraySelection::table2_scheme();
    SectorGrid grid{72};
    int num_sources = 2;
    double snr_db = 20.0;
    int num_snapshots = 10;
    double rho = 0.0;
    bool refine = true;
    RefineOptions refine_options;
    double trim_quantile = 0.99;

    nlohmann::json to_json() const;
};

struct RealizationResult {
    std::vector<double> truth;
    std::vector<double> plain;
    std::vector<double> refined;
    std::vector<double> plain_errors;    // matched per-source periodic errors
    std::vector<double> refined_errors;
    double plain_sq_error = 0.0;         // mean over sources
    double refined_sq_error = 0.0;
    double refined_nll = 0.0;
    double wall_seconds = 0.0;           // not written to reports
};

struct EstimationResult {
    std::string estimator;
    std::vector<RealizationResult> realizations;

    std::vector<double> plain_sq_errors() const;
    std::vector<double> refined_sq_errors() const;
};

struct EstimatorSummary {
    std::string estimator;
    double rmspe = 0.0;
    double rmspe_trimmed = 0.0;
    double rmspe_refined = 0.0;
    double rmspe_refined_trimmed = 0.0;
};

struct RunReport {
    EvalConfig config;
    std::uint64_t seed = 0;
    std::size_t realizations = 0;
    std::vector<EstimationResult> results;
    std::vector<EstimatorSummary> summaries;

    const EstimatorSummary& summary(const std::string& name) const;
};

// Draws `n` scenes (equal powers, noise from the SNR), simulates N snapshots,
// runs every estimator plain and refined. Realization i only depends on
// (seed, i); aggregation is in realization order.
RunReport monte_carlo_run(const EvalConfig& cfg, const std::vector<const Estimator*>& estimators, std::size_t n,
                          std::uint64_t seed);

Observation make_observation(const DrawnScene& truth, const EvalConfig& cfg, Rng& rng);

// rmspe.csv rows: estimator, snr_db, n, rmspe, rmspe_trimmed_q
// [, rmspe_refined, rmspe_refined_trimmed_q]
void write_rmspe_csv(const std::filesystem::path& file, const std::vector<RunReport>& reports, bool with_refined);
// cdf_<estimator>_<snr>[ _n<N> ].csv with error_rad, error_deg, fraction.
void write_cdf_csvs(const std::filesystem::path& dir, const RunReport& report, bool with_n_suffix);
nlohmann::json report_to_json(const std::vector<RunReport>& reports);

std::string format_number(double v);

}  // namespace doa
