#pragma once

// Reference estimators: binary-relevance classifier with peak search,
// MUSIC for fully sampled arrays, and exact discrete MAP oracles.

#include "doa/likelihood.hpp"
#include "doa/nn.hpp"
#include "doa/signal_sim.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace doa {

struct BrModel {
    DenseNetwork<float> net;
    SectorGrid grid;

    // Sigmoid outputs z_g in (0, 1)^G.
    RVector spectrum(const RVector& features) const;
};

BrModel make_br(int feature_dim, const SectorGrid& grid, const Architecture& arch, Rng& rng);

// Batch with multi-hot targets v_g = 1 iff a source lies in sector g.
Batch make_br_batch(const std::vector<LabeledSample>& samples, const SectorGrid& grid);

TrainResult train_br(BrModel& model, SampleStream& stream, const TrainConfig& cfg);

// Picks the `count` strongest circular local maxima (z_g > z_{g-1}, z_g >= z_{g+1}),
// suppressing +-radius sectors around each pick; tops up from the highest
// remaining values. Ties go to the lower sector. Output ascending.
std::vector<int> br_peak_search(const RVector& values, int count, int suppression_radius = 1);

// 1 / ||E_n^H a(theta_g)||^2 at the sector midpoints, E_n the M-L weakest eigenvectors.
RVector music_spectrum(const CMatrix& covariance, int num_sources, const SectorGrid& grid, const ArrayGeometry& geom);

std::vector<int> music_estimate(const CMatrix& covariance, int num_sources, const SectorGrid& grid,
                                const ArrayGeometry& geom);

// Discrete MAP over sector tuples. Nuisance parameters are fixed at known
// values and each sector is represented by its midpoint.
struct MapOracleConfig {
    SectorGrid grid{24};
    int num_sources = 2;
    RVector powers;             // L known source powers
    double noise_power = 0.01;  // known noise power
    LikelihoodModel model;

    static constexpr std::uint64_t kMaxTuples = 1000000;
    std::uint64_t tuple_count() const;
    void validate() const;
};

// Log posterior of a sector tuple up to a constant: Gaussian log-likelihood
// at the representative scene plus the uniform log-prior over ascending tuples.
double map_log_posterior(const std::vector<CMatrix>& covs, const std::vector<int>& sectors,
                         const MapOracleConfig& cfg);

// Exhaustive argmax over all ascending tuples; ties broken lexicographically.
std::vector<int> map_joint_bruteforce(const std::vector<CMatrix>& covs, const MapOracleConfig& cfg);

// Successive form: pick theta_1 maximising the best completion, then each
// following source above the previous one given the earlier picks.
std::vector<int> map_successive(const std::vector<CMatrix>& covs, const MapOracleConfig& cfg);

void save_br(const std::filesystem::path& dir, const BrModel& model,
             const nlohmann::json& metadata = nlohmann::json::object());
BrModel load_br(const std::filesystem::path& dir);

}  // namespace doa
