#pragma once

// Successive multiclass classifier chain: stage l sees the stacked sample
// covariances plus one-hot codes of the l-1 sectors already decided, and
// picks the sector of the l-th source in ascending angle order.

#include "doa/nn.hpp"
#include "doa/signal_sim.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace doa {

struct ChainModel {
    std::vector<DenseNetwork<float>> stages;
    SectorGrid grid;
    int feature_dim = 0;
    std::string conditioning = "one-hot";

    int num_sources() const { return static_cast<int>(stages.size()); }
    // Input width of 1-based stage l: feature_dim + (l-1) G.
    int stage_input_dim(int stage) const { return feature_dim + (stage - 1) * grid.num_sectors; }
    void validate() const;
};

ChainModel make_chain(int feature_dim, const SectorGrid& grid, int num_sources, const Architecture& arch, Rng& rng);

// Features followed by one one-hot block of length G per previous sector.
Vec<float> encode_stage_input(const RVector& features, std::span<const int> previous, const SectorGrid& grid);

// Stage-l batch (1-based) conditioned on the given previous sectors per
// sample; targets are the true sectors g(l).
Batch make_stage_batch(const std::vector<LabeledSample>& samples, int stage, const SectorGrid& grid,
                       const std::vector<std::vector<int>>& conditioning);

// Same, conditioned on the true sectors (teacher forcing).
Batch make_teacher_batch(const std::vector<LabeledSample>& samples, int stage, const SectorGrid& grid);

struct ChainOutput {
    std::vector<int> sectors;                  // strictly increasing when masked
    std::vector<RVector> probabilities;        // one softmax vector per stage
};

// Admissible range for 1-based stage l given the previous pick.
struct SectorRange {
    int lo;
    int hi;
};
SectorRange admissible_range(int stage, int previous_sector, int num_sources, int num_sectors);

ChainOutput infer_chain(const ChainModel& chain, const RVector& features, bool mask = true);

// Batched inference through the first `num_stages` stages (all when -1).
std::vector<ChainOutput> infer_chain_batch(const ChainModel& chain, const std::vector<RVector>& features,
                                           bool mask = true, int num_stages = -1);

enum class AngleMode { midpoint, quadratic };
std::string to_string(AngleMode m);
AngleMode angle_mode_from_string(const std::string& s);

// Log-domain parabola through the sector and its circular neighbours.
// Returns the offset in units of sector width, clamped to [-1/2, 1/2]; 0 when
// the three points do not form a strict maximum.
double quadratic_offset(int sector, const RVector& probabilities);

std::vector<double> sectors_to_angles(const std::vector<int>& sectors, const std::vector<RVector>& probabilities,
                                      const SectorGrid& grid, AngleMode mode);

struct ChainTrainResult {
    std::vector<std::vector<double>> stage_loss_traces;
    std::uint64_t samples_seen = 0;
};

// One Adam optimizer per stage; every step feeds the same samples to all
// stages under teacher forcing.
class ChainTrainer {
public:
    ChainTrainer(ChainModel& chain, const TrainConfig& cfg);

    // Returns the smoothed loss of each stage after the step.
    std::vector<double> step(const std::vector<LabeledSample>& samples);
    Trainer& stage_trainer(int stage) { return trainers_[static_cast<std::size_t>(stage - 1)]; }
    LossSmoother& smoother(int stage) { return smoothers_[static_cast<std::size_t>(stage - 1)]; }

private:
    ChainModel& chain_;
    std::vector<Trainer> trainers_;
    std::vector<LossSmoother> smoothers_;
};

// All stages step together on the same batches; stage l is conditioned on
// the true sectors g(1..l-1).
ChainTrainResult train_teacher_forced(ChainModel& chain, SampleStream& stream, const TrainConfig& cfg);

// Stages are trained one after another over the same sample range; stage l is
// conditioned on the estimates of the already trained stages 1..l-1.
ChainTrainResult train_sequential(ChainModel& chain, SampleStream& stream, const TrainConfig& cfg);

// Continues teacher-forced training from the current weights on a new stream.
ChainTrainResult adapt(ChainModel& chain, SampleStream& stream, const TrainConfig& cfg);

// Mean teacher-forced cross-entropy of each stage on held-out samples.
std::vector<double> chain_validation_loss(const ChainModel& chain, const std::vector<LabeledSample>& samples);

void save_chain(const std::filesystem::path& dir, const ChainModel& chain,
                const nlohmann::json& metadata = nlohmann::json::object());
ChainModel load_chain(const std::filesystem::path& dir);

}  // namespace doa
