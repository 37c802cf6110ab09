#include "doa/signal_sim.hpp"

#include "doa/kernels.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

namespace doa {

namespace {

double uniform(Rng& rng, double lo, double hi) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    return lo + (hi - lo) * u(rng);
}

double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }

}  // namespace

int sector_of(double theta, const SectorGrid& grid) {
    const double t = wrap_two_pi(theta);
    const int g = static_cast<int>(std::floor(t / grid.width())) + 1;
    return std::clamp(g, 1, grid.num_sectors);
}

double sector_midpoint(int sector, const SectorGrid& grid) {
    if (sector < 1 || sector > grid.num_sectors) throw std::out_of_range("sector index out of range");
    return (sector - 0.5) * grid.width();
}

void ScenarioDistribution::validate() const {
    if (num_sources < 1) throw std::invalid_argument("model order must be positive");
    if (grid.num_sectors < num_sources) throw std::invalid_argument("more sources than sectors");
    if (min_source_power_db > 0.0) throw std::invalid_argument("weakest-source floor must be <= 0 dB");
    if (noise_min_db > noise_max_db) throw std::invalid_argument("noise range is empty");
    if (!(rho_min >= 0.0 && rho_max <= 1.0 && rho_min <= rho_max))
        throw std::invalid_argument("rho range must be a subset of [0, 1]");
}

ScenarioDistribution ScenarioDistribution::equal_power_test(int num_sources, double snr_db,
                                                            const SectorGrid& grid, double rho) {
    ScenarioDistribution d;
    d.num_sources = num_sources;
    d.min_source_power_db = 0.0;
    d.noise_min_db = -snr_db;
    d.noise_max_db = -snr_db;
    d.rho_min = rho;
    d.rho_max = rho;
    d.grid = grid;
    return d;
}

DrawnScene draw_scene(Rng& rng, const ScenarioDistribution& dist) {
    dist.validate();
    const int l = dist.num_sources;
    const SectorGrid& grid = dist.grid;

    std::uniform_int_distribution<int> pick(1, grid.num_sectors);
    std::set<int> chosen;
    while (static_cast<int>(chosen.size()) < l) chosen.insert(pick(rng));

    DrawnScene out;
    out.sectors.assign(chosen.begin(), chosen.end());
    out.scene.doas.resize(l);
    for (int i = 0; i < l; ++i) {
        const int g = out.sectors[static_cast<std::size_t>(i)];
        double theta = (g - 1 + uniform(rng, 0.0, 1.0)) * grid.width();
        // rounding can push theta onto the right edge; step back inside
        while (sector_of(theta, grid) > g) theta = std::nextafter(theta, 0.0);
        while (sector_of(theta, grid) < g) theta = std::nextafter(theta, kTwoPi);
        out.scene.doas[i] = theta;
    }

    std::uniform_int_distribution<int> strongest_pick(0, l - 1);
    const int strongest = strongest_pick(rng);
    out.powers.resize(l);
    for (int i = 0; i < l; ++i) {
        out.powers[i] = (i == strongest) ? 1.0 : db_to_linear(uniform(rng, dist.min_source_power_db, 0.0));
    }
    out.scene.noise_power = db_to_linear(uniform(rng, dist.noise_min_db, dist.noise_max_db));
    out.rho = uniform(rng, dist.rho_min, dist.rho_max);
    out.scene.source_cov = source_covariance(CorrelationModel{out.rho, out.powers});
    return out;
}

DrawnScene fixed_scene(const std::vector<double>& doas, double snr_db, const SectorGrid& grid, double rho) {
    std::vector<double> sorted;
    for (double d : doas) sorted.push_back(wrap_two_pi(d));
    std::sort(sorted.begin(), sorted.end());
    const int l = static_cast<int>(sorted.size());
    DrawnScene out;
    out.scene.doas = Eigen::Map<const RVector>(sorted.data(), l);
    for (double d : sorted) out.sectors.push_back(sector_of(d, grid));
    for (std::size_t i = 1; i < out.sectors.size(); ++i)
        if (out.sectors[i] == out.sectors[i - 1]) throw std::invalid_argument("two sources share a sector");
    out.powers = RVector::Ones(l);
    out.rho = rho;
    out.scene.noise_power = db_to_linear(-snr_db);
    out.scene.source_cov = source_covariance(CorrelationModel{rho, out.powers});
    return out;
}

SnapshotSet simulate_snapshots(Rng& rng, const SourceScene& scene, const ArrayGeometry& geom,
                               const SubarraySelection& sel, int num_snapshots) {
    const int l = scene.num_sources();
    const int w = sel.subarray_size();
    const CMatrix manifold = array_manifold(scene.doas, geom);
    const CMatrix mix = l > 0 ? psd_sqrt(scene.source_cov) : CMatrix(0, 0);
    const double noise_std = std::sqrt(std::max(scene.noise_power, 0.0) / 2.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double unit_std = std::sqrt(0.5);

    SnapshotSet out;
    out.subarrays.reserve(static_cast<std::size_t>(sel.num_subarrays()));
    for (int k = 0; k < sel.num_subarrays(); ++k) {
        const CMatrix a = select_rows(manifold, sel, k);
        CMatrix u(l, num_snapshots);
        for (Eigen::Index i = 0; i < u.size(); ++i) {
            const double re = normal(rng) * unit_std;
            const double im = normal(rng) * unit_std;
            u.data()[i] = cdouble(re, im);
        }
        CMatrix y(w, num_snapshots);
        for (Eigen::Index i = 0; i < y.size(); ++i) {
            const double re = normal(rng) * noise_std;
            const double im = normal(rng) * noise_std;
            y.data()[i] = cdouble(re, im);
        }
        if (l > 0) y.noalias() += a * (mix * u);
        out.subarrays.push_back(std::move(y));
    }
    return out;
}

std::vector<CMatrix> sample_covariance(const SnapshotSet& snapshots) {
    if (snapshots.subarrays.empty() || snapshots.num_snapshots() < 1)
        throw std::invalid_argument("sample_covariance: empty snapshot set");
    std::vector<CMatrix> out;
    out.reserve(snapshots.subarrays.size());
    for (const auto& y : snapshots.subarrays) {
        CMatrix c = (y * y.adjoint()) / static_cast<double>(y.cols());
        out.push_back(0.5 * (c + c.adjoint()));
    }
    return out;
}

RVector stack_features(const std::vector<CMatrix>& covariances) {
    if (covariances.empty()) return RVector(0);
    const Eigen::Index w = covariances.front().rows();
    const Eigen::Index tri = w * (w - 1) / 2;
    RVector f(static_cast<Eigen::Index>(covariances.size()) * w * w);
    Eigen::Index pos = 0;
    for (const auto& c : covariances) {
        if (c.rows() != w || c.cols() != w) throw std::invalid_argument("stack_features: non-square or mismatched input");
        for (Eigen::Index i = 0; i < w; ++i) f[pos++] = c(i, i).real();
        Eigen::Index t = 0;
        for (Eigen::Index i = 0; i < w; ++i)
            for (Eigen::Index j = i + 1; j < w; ++j, ++t) {
                f[pos + t] = c(i, j).real();
                f[pos + tri + t] = c(i, j).imag();
            }
        pos += 2 * tri;
    }
    return f;
}

std::vector<CMatrix> unstack_features(const RVector& features, int num_subarrays, int subarray_size) {
    const Eigen::Index w = subarray_size;
    const Eigen::Index tri = w * (w - 1) / 2;
    if (features.size() != num_subarrays * w * w) throw std::invalid_argument("unstack_features: length mismatch");
    std::vector<CMatrix> out;
    Eigen::Index pos = 0;
    for (int k = 0; k < num_subarrays; ++k) {
        CMatrix c(w, w);
        for (Eigen::Index i = 0; i < w; ++i) c(i, i) = features[pos++];
        Eigen::Index t = 0;
        for (Eigen::Index i = 0; i < w; ++i)
            for (Eigen::Index j = i + 1; j < w; ++j, ++t) {
                c(i, j) = cdouble(features[pos + t], features[pos + tri + t]);
                c(j, i) = std::conj(c(i, j));
            }
        pos += 2 * tri;
        out.push_back(std::move(c));
    }
    return out;
}

std::vector<float> multi_hot(const std::vector<int>& sectors, int num_sectors) {
    std::vector<float> v(static_cast<std::size_t>(num_sectors), 0.0f);
    for (int g : sectors) v.at(static_cast<std::size_t>(g - 1)) = 1.0f;
    return v;
}

LabeledSample SampleGenerator::generate(Rng& rng) const {
    const DrawnScene drawn = draw_scene(rng, distribution);
    const SnapshotSet snaps = simulate_snapshots(rng, drawn.scene, geometry, selection, num_snapshots);
    LabeledSample s;
    s.features = stack_features(sample_covariance(snaps));
    s.sectors = drawn.sectors;
    s.doas.assign(drawn.scene.doas.data(), drawn.scene.doas.data() + drawn.scene.doas.size());
    return s;
}

SampleStream::SampleStream(SampleGenerator generator, std::uint64_t master_seed, std::uint64_t stream_tag)
    : generator_(std::move(generator)), master_seed_(master_seed), stream_tag_(stream_tag) {
    generator_.geometry.validate();
    generator_.selection.validate(generator_.geometry.num_antennas);
    generator_.distribution.validate();
}

std::vector<LabeledSample> SampleStream::next_batch(std::size_t count) {
    auto out = batch_at(position_, count);
    position_ += count;
    return out;
}

std::vector<LabeledSample> SampleStream::batch_at(std::uint64_t first, std::size_t count) const {
    return kernels::generate_samples(generator_, master_seed_, stream_tag_, first, count);
}

void save_dataset(const std::filesystem::path& bin_path, const std::vector<LabeledSample>& samples) {
    static_assert(std::endian::native == std::endian::little, "dataset format is little-endian");
    const std::size_t fdim = samples.empty() ? 0 : static_cast<std::size_t>(samples.front().features.size());
    const std::size_t l = samples.empty() ? 0 : samples.front().sectors.size();
    std::ofstream out(bin_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + bin_path.string());
    std::vector<float> row(fdim + 2 * l);
    for (const auto& s : samples) {
        if (static_cast<std::size_t>(s.features.size()) != fdim || s.sectors.size() != l)
            throw std::invalid_argument("save_dataset: ragged samples");
        for (std::size_t i = 0; i < fdim; ++i) row[i] = static_cast<float>(s.features[static_cast<Eigen::Index>(i)]);
        for (std::size_t i = 0; i < l; ++i) row[fdim + i] = static_cast<float>(s.sectors[i]);
        for (std::size_t i = 0; i < l; ++i) row[fdim + l + i] = static_cast<float>(s.doas[i]);
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
    nlohmann::json meta = {
        {"format_version", 1},
        {"dtype", "float32"},
        {"endianness", "little"},
        {"num_samples", samples.size()},
        {"feature_dim", fdim},
        {"num_sources", l},
        {"row_layout", {"features", "sectors", "doas"}},
        {"row_length", fdim + 2 * l},
    };
    std::ofstream side(bin_path.string() + ".json");
    side << meta.dump(2) << '\n';
}

std::vector<LabeledSample> load_dataset(const std::filesystem::path& bin_path) {
    std::ifstream side(bin_path.string() + ".json");
    if (!side) throw std::runtime_error("missing dataset sidecar for " + bin_path.string());
    const auto meta = nlohmann::json::parse(side);
    const auto n = meta.at("num_samples").get<std::size_t>();
    const auto fdim = meta.at("feature_dim").get<std::size_t>();
    const auto l = meta.at("num_sources").get<std::size_t>();
    if (std::filesystem::file_size(bin_path) != n * (fdim + 2 * l) * sizeof(float))
        throw std::runtime_error("dataset size does not match sidecar");
    std::ifstream in(bin_path, std::ios::binary);
    std::vector<float> row(fdim + 2 * l);
    std::vector<LabeledSample> out(n);
    for (auto& s : out) {
        in.read(reinterpret_cast<char*>(row.data()), static_cast<std::streamsize>(row.size() * sizeof(float)));
        s.features.resize(static_cast<Eigen::Index>(fdim));
        for (std::size_t i = 0; i < fdim; ++i) s.features[static_cast<Eigen::Index>(i)] = row[i];
        for (std::size_t i = 0; i < l; ++i) s.sectors.push_back(static_cast<int>(row[fdim + i]));
        for (std::size_t i = 0; i < l; ++i) s.doas.push_back(row[fdim + l + i]);
    }
    return out;
}

}  // namespace doa
