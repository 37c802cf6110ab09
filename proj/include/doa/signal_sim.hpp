#pragma once

// Sector grid, scenario sampling, snapshot simulation, sample covariances
// and the real-valued feature layout fed to the classifiers.

#include "doa/array_model.hpp"
#include "doa/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace doa {

// G equal sectors over [0, 2*pi). Sector indices are 1-based throughout.
struct SectorGrid {
    int num_sectors = 288;

    double width() const { return kTwoPi / num_sectors; }
    static SectorGrid from_oversampling(int oversampling, int num_antennas) {
        return SectorGrid{oversampling * num_antennas};
    }
};

int sector_of(double theta, const SectorGrid& grid);
double sector_midpoint(int sector, const SectorGrid& grid);

// Distribution the training (and test) scenes are drawn from. Power and
// noise bounds are in dB; the strongest source is fixed to 0 dB.
struct ScenarioDistribution {
    int num_sources = 1;
    double min_source_power_db = -9.0;
    double noise_min_db = -10.0;
    double noise_max_db = 30.0;
    double rho_min = 0.0;
    double rho_max = 0.0;
    SectorGrid grid;

    void validate() const;

    // L equally strong sources at a fixed SNR, used for evaluation.
    static ScenarioDistribution equal_power_test(int num_sources, double snr_db, const SectorGrid& grid,
                                                 double rho = 0.0);
};

struct DrawnScene {
    SourceScene scene;
    std::vector<int> sectors;  // ascending, sector_of(doas[l]) == sectors[l]
    double rho = 0.0;
    RVector powers;
};

DrawnScene draw_scene(Rng& rng, const ScenarioDistribution& dist);

// Builds a scene with fixed DoAs (any order), equal unit powers and noise 1/SNR.
DrawnScene fixed_scene(const std::vector<double>& doas, double snr_db, const SectorGrid& grid,
                       double rho = 0.0);

// One W x N matrix per subarray, columns are snapshots.
struct SnapshotSet {
    std::vector<CMatrix> subarrays;

    int num_snapshots() const { return subarrays.empty() ? 0 : static_cast<int>(subarrays.front().cols()); }
};

SnapshotSet simulate_snapshots(Rng& rng, const SourceScene& scene, const ArrayGeometry& geom,
                               const SubarraySelection& sel, int num_snapshots);

std::vector<CMatrix> sample_covariance(const SnapshotSet& snapshots);

// Per subarray: W diagonal entries, then the strict upper triangle in
// row-major order (real parts, then imaginary parts); subarrays concatenated.
RVector stack_features(const std::vector<CMatrix>& covariances);
std::vector<CMatrix> unstack_features(const RVector& features, int num_subarrays, int subarray_size);

inline int feature_dim(const SubarraySelection& sel) {
    return sel.num_subarrays() * sel.subarray_size() * sel.subarray_size();
}

struct LabeledSample {
    RVector features;
    std::vector<int> sectors;
    std::vector<double> doas;
};

// Multi-hot vector v with v_g = 1 iff some source lies in sector g.
std::vector<float> multi_hot(const std::vector<int>& sectors, int num_sectors);

// Everything needed to turn a seed into labeled training samples.
struct SampleGenerator {
    ArrayGeometry geometry;
    SubarraySelection selection;
    ScenarioDistribution distribution;
    int num_snapshots = 10;

    LabeledSample generate(Rng& rng) const;
};

// Deterministic, index-addressable stream of fresh samples. Item i depends
// only on (master seed, stream tag, i), so batches can be filled in parallel.
class SampleStream {
public:
    SampleStream(SampleGenerator generator, std::uint64_t master_seed,
                 std::uint64_t stream_tag = streams::kTrain);

    // Next `count` samples; advances the cursor.
    std::vector<LabeledSample> next_batch(std::size_t count);
    // Samples [first, first+count) without touching the cursor.
    std::vector<LabeledSample> batch_at(std::uint64_t first, std::size_t count) const;

    std::uint64_t position() const { return position_; }
    void seek(std::uint64_t position) { position_ = position; }
    const SampleGenerator& generator() const { return generator_; }
    std::uint64_t master_seed() const { return master_seed_; }

private:
    SampleGenerator generator_;
    std::uint64_t master_seed_;
    std::uint64_t stream_tag_;
    std::uint64_t position_ = 0;
};

// Flat little-endian float32 dump: one row per sample holding
// features, then sectors, then DoAs. The JSON sidecar carries the layout.
void save_dataset(const std::filesystem::path& bin_path, const std::vector<LabeledSample>& samples);
std::vector<LabeledSample> load_dataset(const std::filesystem::path& bin_path);

}  // namespace doa
