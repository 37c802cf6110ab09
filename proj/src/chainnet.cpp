#include "doa/chainnet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace doa {

void ChainModel::validate() const {
    if (stages.empty()) throw std::invalid_argument("chain has no stages");
    for (int l = 1; l <= num_sources(); ++l) {
        const auto& net = stages[static_cast<std::size_t>(l - 1)];
        net.validate();
        if (net.input_dim() != stage_input_dim(l)) throw std::invalid_argument("chain stage input width mismatch");
        if (net.output_dim() != grid.num_sectors) throw std::invalid_argument("chain stage output width mismatch");
        if (net.head != OutputHead::softmax) throw std::invalid_argument("chain stages need a softmax head");
    }
}

ChainModel make_chain(int feature_dim, const SectorGrid& grid, int num_sources, const Architecture& arch, Rng& rng) {
    if (num_sources < 1) throw std::invalid_argument("chain needs at least one stage");
    ChainModel chain;
    chain.grid = grid;
    chain.feature_dim = feature_dim;
    for (int l = 1; l <= num_sources; ++l)
        chain.stages.push_back(
            make_network<float>(chain.stage_input_dim(l), grid.num_sectors, arch, OutputHead::softmax, rng));
    return chain;
}

namespace {

void encode_into(const RVector& features, std::span<const int> previous, int num_sectors,
                 Eigen::Ref<Vec<float>> out) {
    const Eigen::Index f = features.size();
    out.head(f) = features.cast<float>();
    out.tail(out.size() - f).setZero();
    for (std::size_t i = 0; i < previous.size(); ++i) {
        const int g = previous[i];
        if (g < 1 || g > num_sectors) throw std::out_of_range("conditioning sector out of range");
        out[f + static_cast<Eigen::Index>(i) * num_sectors + (g - 1)] = 1.0f;
    }
}

void check_increasing(std::span<const int> sectors) {
    for (std::size_t i = 1; i < sectors.size(); ++i)
        if (sectors[i] <= sectors[i - 1]) throw std::invalid_argument("conditioning sectors must be strictly increasing");
}

}  // namespace

Vec<float> encode_stage_input(const RVector& features, std::span<const int> previous, const SectorGrid& grid) {
    check_increasing(previous);
    Vec<float> out(features.size() + static_cast<Eigen::Index>(previous.size()) * grid.num_sectors);
    encode_into(features, previous, grid.num_sectors, out);
    return out;
}

Batch make_stage_batch(const std::vector<LabeledSample>& samples, int stage, const SectorGrid& grid,
                       const std::vector<std::vector<int>>& conditioning) {
    Batch batch;
    if (samples.empty()) return batch;
    const Eigen::Index width = samples.front().features.size() + (stage - 1) * grid.num_sectors;
    batch.inputs.resize(width, static_cast<Eigen::Index>(samples.size()));
    batch.classes.resize(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& prev = conditioning[i];
        if (static_cast<int>(prev.size()) != stage - 1) throw std::invalid_argument("conditioning length mismatch");
        encode_into(samples[i].features, prev, grid.num_sectors, batch.inputs.col(static_cast<Eigen::Index>(i)));
        batch.classes[i] = samples[i].sectors.at(static_cast<std::size_t>(stage - 1));
    }
    return batch;
}

Batch make_teacher_batch(const std::vector<LabeledSample>& samples, int stage, const SectorGrid& grid) {
    std::vector<std::vector<int>> conditioning;
    conditioning.reserve(samples.size());
    for (const auto& s : samples)
        conditioning.emplace_back(s.sectors.begin(), s.sectors.begin() + (stage - 1));
    return make_stage_batch(samples, stage, grid, conditioning);
}

SectorRange admissible_range(int stage, int previous_sector, int num_sources, int num_sectors) {
    const int lo = stage == 1 ? 1 : previous_sector + 1;
    const int hi = num_sectors - (num_sources - stage);
    return {lo, std::max(lo, hi)};
}

std::vector<ChainOutput> infer_chain_batch(const ChainModel& chain, const std::vector<RVector>& features, bool mask,
                                           int num_stages) {
    const int l_total = chain.num_sources();
    const int stages = num_stages < 0 ? l_total : std::min(num_stages, l_total);
    const int g_count = chain.grid.num_sectors;
    const auto n = static_cast<Eigen::Index>(features.size());
    std::vector<ChainOutput> out(features.size());
    if (n == 0) return out;

    for (int l = 1; l <= stages; ++l) {
        Mat<float> inputs(chain.stage_input_dim(l), n);
        for (Eigen::Index i = 0; i < n; ++i) {
            const auto& f = features[static_cast<std::size_t>(i)];
            if (f.size() != chain.feature_dim) throw std::invalid_argument("infer_chain: feature length mismatch");
            encode_into(f, out[static_cast<std::size_t>(i)].sectors, g_count, inputs.col(i));
        }
        const Mat<float> probs = forward(chain.stages[static_cast<std::size_t>(l - 1)], inputs);
        for (Eigen::Index i = 0; i < n; ++i) {
            auto& o = out[static_cast<std::size_t>(i)];
            const int prev = o.sectors.empty() ? 0 : o.sectors.back();
            const SectorRange r = mask ? admissible_range(l, prev, l_total, g_count) : SectorRange{1, g_count};
            int best = r.lo;
            for (int g = r.lo + 1; g <= r.hi; ++g)
                if (probs(g - 1, i) > probs(best - 1, i)) best = g;
            o.sectors.push_back(best);
            o.probabilities.push_back(probs.col(i).cast<double>());
        }
    }
    return out;
}

ChainOutput infer_chain(const ChainModel& chain, const RVector& features, bool mask) {
    return infer_chain_batch(chain, {features}, mask).front();
}

std::string to_string(AngleMode m) { return m == AngleMode::midpoint ? "midpoint" : "quadratic"; }

AngleMode angle_mode_from_string(const std::string& s) {
    if (s == "midpoint") return AngleMode::midpoint;
    if (s == "quadratic") return AngleMode::quadratic;
    throw std::invalid_argument("unknown angle mode '" + s + "'");
}

double quadratic_offset(int sector, const RVector& probabilities) {
    const auto g_count = static_cast<int>(probabilities.size());
    const int g = sector - 1;
    const double left = std::log(probabilities[(g - 1 + g_count) % g_count]);
    const double mid = std::log(probabilities[g]);
    const double right = std::log(probabilities[(g + 1) % g_count]);
    const double curvature = left - 2.0 * mid + right;
    // a maximum needs strictly negative curvature
    if (!std::isfinite(curvature) || !(curvature < 0.0)) return 0.0;
    const double delta = 0.5 * (left - right) / curvature;
    if (!std::isfinite(delta)) return 0.0;
    return std::clamp(delta, -0.5, 0.5);
}

std::vector<double> sectors_to_angles(const std::vector<int>& sectors, const std::vector<RVector>& probabilities,
                                      const SectorGrid& grid, AngleMode mode) {
    std::vector<double> out;
    out.reserve(sectors.size());
    for (std::size_t l = 0; l < sectors.size(); ++l) {
        const double offset = mode == AngleMode::quadratic ? quadratic_offset(sectors[l], probabilities.at(l)) : 0.0;
        out.push_back(wrap_two_pi(sector_midpoint(sectors[l], grid) + offset * grid.width()));
    }
    return out;
}

namespace {

void check_labels(const std::vector<LabeledSample>& samples, int num_sources) {
    for (const auto& s : samples) {
        if (static_cast<int>(s.sectors.size()) != num_sources)
            throw std::invalid_argument("sample label count does not match chain length");
        check_increasing(s.sectors);
    }
}

}  // namespace

ChainTrainer::ChainTrainer(ChainModel& chain, const TrainConfig& cfg) : chain_(chain) {
    chain.validate();
    trainers_.reserve(chain.stages.size());
    for (auto& net : chain.stages) trainers_.emplace_back(net, cfg);
    smoothers_.assign(chain.stages.size(), LossSmoother(cfg.loss_smoothing));
}

std::vector<double> ChainTrainer::step(const std::vector<LabeledSample>& samples) {
    const int l_total = chain_.num_sources();
    check_labels(samples, l_total);
    std::vector<double> out;
    for (int l = 1; l <= l_total; ++l) {
        const auto idx = static_cast<std::size_t>(l - 1);
        out.push_back(smoothers_[idx].update(trainers_[idx].step(make_teacher_batch(samples, l, chain_.grid))));
    }
    return out;
}

ChainTrainResult train_teacher_forced(ChainModel& chain, SampleStream& stream, const TrainConfig& cfg) {
    ChainTrainer trainer(chain, cfg);
    ChainTrainResult result;
    result.stage_loss_traces.resize(chain.stages.size());
    while (result.samples_seen < cfg.total_samples) {
        const auto want = static_cast<std::size_t>(
            std::min<std::uint64_t>(cfg.batch_size, cfg.total_samples - result.samples_seen));
        const auto losses = trainer.step(stream.next_batch(want));
        for (std::size_t i = 0; i < losses.size(); ++i) result.stage_loss_traces[i].push_back(losses[i]);
        result.samples_seen += want;
    }
    return result;
}

ChainTrainResult train_sequential(ChainModel& chain, SampleStream& stream, const TrainConfig& cfg) {
    chain.validate();
    const int l_total = chain.num_sources();
    const std::uint64_t start = stream.position();
    ChainTrainResult result;
    result.stage_loss_traces.resize(static_cast<std::size_t>(l_total));
    for (int l = 1; l <= l_total; ++l) {
        const auto idx = static_cast<std::size_t>(l - 1);
        Trainer trainer(chain.stages[idx], cfg);
        LossSmoother smoother(cfg.loss_smoothing);
        std::uint64_t seen = 0;
        while (seen < cfg.total_samples) {
            const auto want =
                static_cast<std::size_t>(std::min<std::uint64_t>(cfg.batch_size, cfg.total_samples - seen));
            const auto samples = stream.batch_at(start + seen, want);
            check_labels(samples, l_total);
            std::vector<std::vector<int>> conditioning(samples.size());
            if (l > 1) {
                std::vector<RVector> feats;
                feats.reserve(samples.size());
                for (const auto& s : samples) feats.push_back(s.features);
                const auto est = infer_chain_batch(chain, feats, true, l - 1);
                for (std::size_t i = 0; i < samples.size(); ++i) conditioning[i] = est[i].sectors;
            }
            const double loss = trainer.step(make_stage_batch(samples, l, chain.grid, conditioning));
            result.stage_loss_traces[idx].push_back(smoother.update(loss));
            seen += want;
        }
    }
    result.samples_seen = cfg.total_samples;
    stream.seek(start + cfg.total_samples);
    return result;
}

ChainTrainResult adapt(ChainModel& chain, SampleStream& stream, const TrainConfig& cfg) {
    if (stream.generator().distribution.num_sources != chain.num_sources() ||
        feature_dim(stream.generator().selection) != chain.feature_dim ||
        stream.generator().distribution.grid.num_sectors != chain.grid.num_sectors)
        throw std::invalid_argument("adapt: stream is incompatible with the chain");
    return train_teacher_forced(chain, stream, cfg);
}

void save_chain(const std::filesystem::path& dir, const ChainModel& chain, const nlohmann::json& metadata) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["format_version"] = kCheckpointFormatVersion;
    manifest["kind"] = "chain";
    manifest["num_sources"] = chain.num_sources();
    manifest["num_sectors"] = chain.grid.num_sectors;
    manifest["feature_dim"] = chain.feature_dim;
    manifest["encoding"] = {{"conditioning", chain.conditioning}, {"source_order", "ascending"},
                            {"feature_layout", "diag,triu-real,triu-imag per subarray"}};
    manifest["stages"] = nlohmann::json::array();
    for (int l = 1; l <= chain.num_sources(); ++l) {
        const std::string name = "stage" + std::to_string(l);
        save_network(dir / name, chain.stages[static_cast<std::size_t>(l - 1)], {{"stage", l}});
        manifest["stages"].push_back(name);
    }
    manifest["training"] = metadata;
    std::ofstream out(dir / "manifest.json");
    out << manifest.dump(2) << '\n';
}

ChainModel load_chain(const std::filesystem::path& dir) {
    const auto manifest = load_manifest(dir);
    if (manifest.at("kind").get<std::string>() != "chain") throw std::runtime_error("checkpoint is not a chain");
    ChainModel chain;
    chain.grid.num_sectors = manifest.at("num_sectors").get<int>();
    chain.feature_dim = manifest.at("feature_dim").get<int>();
    chain.conditioning = manifest.at("encoding").at("conditioning").get<std::string>();
    for (const auto& name : manifest.at("stages")) chain.stages.push_back(load_network(dir / name.get<std::string>()));
    if (chain.num_sources() != manifest.at("num_sources").get<int>())
        throw std::runtime_error("chain manifest stage count mismatch");
    chain.validate();
    return chain;
}

std::vector<double> chain_validation_loss(const ChainModel& chain, const std::vector<LabeledSample>& samples) {
    check_labels(samples, chain.num_sources());
    std::vector<double> out;
    Mat<float> grad;
    for (int l = 1; l <= chain.num_sources(); ++l) {
        const Batch b = make_teacher_batch(samples, l, chain.grid);
        const Mat<float> logits = forward(chain.stages[static_cast<std::size_t>(l - 1)], b.inputs);
        out.push_back(batch_loss_and_grad(OutputHead::softmax, logits, b, grad));
    }
    return out;
}

}  // namespace doa
