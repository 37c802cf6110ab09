#include "doa/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace doa {

RVector BrModel::spectrum(const RVector& features) const {
    const Mat<float> in = features.cast<float>();
    return forward(net, in).col(0).cast<double>();
}

BrModel make_br(int feature_dim, const SectorGrid& grid, const Architecture& arch, Rng& rng) {
    return BrModel{make_network<float>(feature_dim, grid.num_sectors, arch, OutputHead::sigmoid, rng), grid};
}

Batch make_br_batch(const std::vector<LabeledSample>& samples, const SectorGrid& grid) {
    Batch b;
    if (samples.empty()) return b;
    const auto n = static_cast<Eigen::Index>(samples.size());
    b.inputs.resize(samples.front().features.size(), n);
    b.targets = Mat<float>::Zero(grid.num_sectors, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& s = samples[static_cast<std::size_t>(i)];
        b.inputs.col(i) = s.features.cast<float>();
        for (int g : s.sectors) b.targets(g - 1, i) = 1.0f;
    }
    return b;
}

TrainResult train_br(BrModel& model, SampleStream& stream, const TrainConfig& cfg) {
    const BatchSource source = [&](std::size_t count) { return make_br_batch(stream.next_batch(count), model.grid); };
    return train(model.net, source, cfg);
}

std::vector<int> br_peak_search(const RVector& values, int count, int suppression_radius) {
    const int g_count = static_cast<int>(values.size());
    count = std::min(count, g_count);
    auto at = [&](int g) { return values[((g % g_count) + g_count) % g_count]; };

    // descending value, ascending index on ties
    auto better = [&](int a, int b) { return values[a] > values[b] || (values[a] == values[b] && a < b); };

    std::vector<int> peaks;
    for (int g = 0; g < g_count; ++g)
        if (values[g] > at(g - 1) && values[g] >= at(g + 1)) peaks.push_back(g);
    std::sort(peaks.begin(), peaks.end(), better);

    std::vector<char> selected(static_cast<std::size_t>(g_count), 0);
    std::vector<char> suppressed(static_cast<std::size_t>(g_count), 0);
    std::vector<int> out;
    auto take = [&](int g) {
        out.push_back(g + 1);
        selected[static_cast<std::size_t>(g)] = 1;
        for (int d = -suppression_radius; d <= suppression_radius; ++d)
            suppressed[static_cast<std::size_t>(((g + d) % g_count + g_count) % g_count)] = 1;
    };
    for (int g : peaks) {
        if (static_cast<int>(out.size()) == count) break;
        if (!suppressed[static_cast<std::size_t>(g)]) take(g);
    }
    if (static_cast<int>(out.size()) < count) {
        std::vector<int> rest(static_cast<std::size_t>(g_count));
        std::iota(rest.begin(), rest.end(), 0);
        std::sort(rest.begin(), rest.end(), better);
        // unsuppressed sectors first, then anything not yet selected
        for (int pass = 0; pass < 2 && static_cast<int>(out.size()) < count; ++pass)
            for (int g : rest) {
                if (static_cast<int>(out.size()) == count) break;
                if (selected[static_cast<std::size_t>(g)]) continue;
                if (pass == 0 && suppressed[static_cast<std::size_t>(g)]) continue;
                take(g);
            }
    }
    std::sort(out.begin(), out.end());
    return out;
}

RVector music_spectrum(const CMatrix& covariance, int num_sources, const SectorGrid& grid, const ArrayGeometry& geom) {
    const int m = geom.num_antennas;
    if (covariance.rows() != m || covariance.cols() != m)
        throw std::invalid_argument("MUSIC needs the fully sampled M x M covariance");
    if (num_sources >= m) throw std::invalid_argument("MUSIC needs fewer sources than antennas");
    Eigen::SelfAdjointEigenSolver<CMatrix> es(covariance);
    const CMatrix noise_space = es.eigenvectors().leftCols(m - num_sources);
    RVector spec(grid.num_sectors);
    for (int g = 1; g <= grid.num_sectors; ++g) {
        const CVector a = steering_vector(sector_midpoint(g, grid), geom);
        const double denom = (noise_space.adjoint() * a).squaredNorm();
        spec[g - 1] = 1.0 / std::max(denom, 1e-300);
    }
    return spec;
}

std::vector<int> music_estimate(const CMatrix& covariance, int num_sources, const SectorGrid& grid,
                                const ArrayGeometry& geom) {
    return br_peak_search(music_spectrum(covariance, num_sources, grid, geom), num_sources);
}

std::uint64_t MapOracleConfig::tuple_count() const {
    // binomial(G, L) with early saturation
    double c = 1.0;
    for (int i = 0; i < num_sources; ++i) {
        c = c * (grid.num_sectors - i) / (i + 1);
        if (c > 1e18) return std::numeric_limits<std::uint64_t>::max();
    }
    return static_cast<std::uint64_t>(std::llround(c));
}

void MapOracleConfig::validate() const {
    if (num_sources < 1 || num_sources > grid.num_sectors) throw std::invalid_argument("MAP oracle: bad model order");
    if (powers.size() != num_sources) throw std::invalid_argument("MAP oracle: one power per source expected");
    if (tuple_count() > kMaxTuples) throw std::length_error("MAP oracle: tuple enumeration guard exceeded");
}

double map_log_posterior(const std::vector<CMatrix>& covs, const std::vector<int>& sectors,
                         const MapOracleConfig& cfg) {
    MlParams p;
    p.doas.resize(static_cast<Eigen::Index>(sectors.size()));
    for (std::size_t i = 0; i < sectors.size(); ++i)
        p.doas[static_cast<Eigen::Index>(i)] = sector_midpoint(sectors[i], cfg.grid);
    p.log_powers = cfg.powers.array().log();
    p.log_noise = std::log(cfg.noise_power);
    // nll drops the pi^W term and is N times the per-snapshot log-likelihood
    const double log_prior = -std::log(static_cast<double>(cfg.tuple_count()));
    return -nll(covs, p, cfg.model) + log_prior;
}

namespace {

// Advances an ascending tuple over {1..G} in lexicographic order.
bool next_tuple(std::vector<int>& t, int g_count) {
    const int l = static_cast<int>(t.size());
    for (int i = l - 1; i >= 0; --i) {
        if (t[static_cast<std::size_t>(i)] < g_count - (l - 1 - i)) {
            ++t[static_cast<std::size_t>(i)];
            for (int j = i + 1; j < l; ++j) t[static_cast<std::size_t>(j)] = t[static_cast<std::size_t>(j - 1)] + 1;
            return true;
        }
    }
    return false;
}

std::vector<std::vector<int>> ascending_tuples(std::vector<int> prefix, int length, int g_count) {
    // all ascending completions of `prefix` to `length` entries
    std::vector<std::vector<int>> out;
    const int fixed = static_cast<int>(prefix.size());
    const int free = length - fixed;
    const int lo = fixed == 0 ? 1 : prefix.back() + 1;
    if (free == 0) return {prefix};
    if (lo + free - 1 > g_count) return out;
    // shift the lexicographic enumeration of ascending tuples to start at lo
    std::vector<int> rel(static_cast<std::size_t>(free));
    std::iota(rel.begin(), rel.end(), 1);
    do {
        std::vector<int> t = prefix;
        for (int v : rel) t.push_back(v + lo - 1);
        out.push_back(std::move(t));
    } while (next_tuple(rel, g_count - lo + 1));
    return out;
}

// Evaluates all candidates in parallel; the argmax scan is serial and
// returns the first maximiser in the given order.
std::size_t first_argmax(const std::vector<CMatrix>& covs, const std::vector<std::vector<int>>& candidates,
                         const MapOracleConfig& cfg, double* best_value = nullptr) {
    std::vector<double> values(candidates.size());
    const auto n = static_cast<std::int64_t>(candidates.size());
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i)
        values[static_cast<std::size_t>(i)] = map_log_posterior(covs, candidates[static_cast<std::size_t>(i)], cfg);
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best]) best = i;
    if (best_value != nullptr) *best_value = values[best];
    return best;
}

}  // namespace

std::vector<int> map_joint_bruteforce(const std::vector<CMatrix>& covs, const MapOracleConfig& cfg) {
    cfg.validate();
    const auto tuples = ascending_tuples({}, cfg.num_sources, cfg.grid.num_sectors);
    return tuples[first_argmax(covs, tuples, cfg)];
}

std::vector<int> map_successive(const std::vector<CMatrix>& covs, const MapOracleConfig& cfg) {
    cfg.validate();
    const int l_total = cfg.num_sources;
    const int g_count = cfg.grid.num_sectors;
    std::vector<int> fixed;
    for (int l = 1; l <= l_total; ++l) {
        const int lo = fixed.empty() ? 1 : fixed.back() + 1;
        int best_sector = -1;
        double best_f = -std::numeric_limits<double>::infinity();
        for (int theta = lo; theta <= g_count - (l_total - l); ++theta) {
            // f_l(theta): best posterior over ascending completions above theta
            std::vector<int> prefix = fixed;
            prefix.push_back(theta);
            const auto completions = ascending_tuples(prefix, l_total, g_count);
            double f = 0.0;
            first_argmax(covs, completions, cfg, &f);
            if (best_sector < 0 || f > best_f) {
                best_f = f;
                best_sector = theta;
            }
        }
        fixed.push_back(best_sector);
    }
    return fixed;
}

void save_br(const std::filesystem::path& dir, const BrModel& model, const nlohmann::json& metadata) {
    nlohmann::json meta = metadata;
    meta["num_sectors"] = model.grid.num_sectors;
    meta["estimator"] = "binary_relevance";
    save_network(dir, model.net, meta);
}

BrModel load_br(const std::filesystem::path& dir) {
    BrModel m;
    m.net = load_network(dir);
    if (m.net.head != OutputHead::sigmoid) throw std::runtime_error("BR checkpoint must have a sigmoid head");
    m.grid.num_sectors = static_cast<int>(m.net.output_dim());
    return m;
}

}  // namespace doa
