#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "doa/eval.hpp"

#include <omp.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

using namespace doa;

namespace {

double brute_force_rmspe(const std::vector<double>& truth, const std::vector<double>& est) {
    std::vector<int> perm(truth.size());
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double s = 0.0;
        for (std::size_t l = 0; l < truth.size(); ++l) {
            double d = std::fmod(truth[l] - est[static_cast<std::size_t>(perm[l])], kTwoPi);
            if (d >= kPi) d -= kTwoPi;
            if (d < -kPi) d += kTwoPi;
            s += d * d;
        }
        best = std::min(best, s);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return std::sqrt(best / static_cast<double>(truth.size()));
}

EvalConfig small_config() {
    EvalConfig cfg;
    cfg.selection = SubarraySelection::fully_sampled(9);
    cfg.num_sources = 2;
    cfg.snr_db = 10.0;
    return cfg;
}

bool same_reports(const RunReport& a, const RunReport& b) {
    if (a.results.size() != b.results.size()) return false;
    for (std::size_t e = 0; e < a.results.size(); ++e) {
        const auto& ra = a.results[e].realizations;
        const auto& rb = b.results[e].realizations;
        if (ra.size() != rb.size()) return false;
        for (std::size_t i = 0; i < ra.size(); ++i)
            if (ra[i].truth != rb[i].truth || ra[i].plain != rb[i].plain || ra[i].refined != rb[i].refined ||
                ra[i].refined_nll != rb[i].refined_nll)
                return false;
    }
    return report_to_json({a}).dump() == report_to_json({b}).dump();
}

}  // namespace

TEST_CASE("periodic error wrap cases") {
    CHECK(periodic_error(1.3, 1.3) == 0.0);
    CHECK(periodic_error(kPi - 0.1, -kPi + 0.1) == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(periodic_error(kPi, 0.0) == doctest::Approx(kPi));
    CHECK(periodic_error(0.0, kPi) == doctest::Approx(kPi));
    CHECK(periodic_error(0.05, kTwoPi - 0.05) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK(periodic_error(7 * kTwoPi + 0.2, 0.1) == doctest::Approx(0.1).epsilon(1e-9));
    Rng rng(1);
    std::uniform_real_distribution<double> u(-20.0, 20.0);
    for (int i = 0; i < 1000; ++i) {
        const double e = periodic_error(u(rng), u(rng));
        CHECK(e >= 0.0);
        CHECK(e <= kPi);
    }
}

TEST_CASE("permutation matching equals the exhaustive oracle") {
    CHECK(match_and_rmspe({0.5, 2.0}, {2.0, 0.5}).rmspe == 0.0);
    CHECK(match_and_rmspe({0.5, 2.0}, {2.0, 0.5}).assignment == std::vector<int>{1, 0});
    CHECK(match_and_rmspe({0.3}, {-0.2}).rmspe == doctest::Approx(periodic_error(0.3, -0.2)));
    CHECK_THROWS(match_and_rmspe({0.1, 0.2}, {0.1}));

    Rng rng(2);
    std::uniform_real_distribution<double> u(0.0, kTwoPi);
    for (int i = 0; i < 1000; ++i) {
        const std::size_t l = 1 + static_cast<std::size_t>(i % 4);
        std::vector<double> t(l), e(l);
        for (std::size_t k = 0; k < l; ++k) {
            t[k] = u(rng);
            e[k] = u(rng);
        }
        CHECK(match_and_rmspe(t, e).rmspe == doctest::Approx(brute_force_rmspe(t, e)).epsilon(1e-14));
    }
}

TEST_CASE("empirical CDF") {
    const auto one = empirical_cdf({0.7});
    REQUIRE(one.size() == 1);
    CHECK(one[0] == std::pair{0.7, 1.0});

    const auto dup = empirical_cdf({3.0, 1.0, 3.0, 2.0});
    REQUIRE(dup.size() == 3);
    CHECK(dup[0] == std::pair{1.0, 0.25});
    CHECK(dup[1] == std::pair{2.0, 0.5});
    CHECK(dup[2] == std::pair{3.0, 1.0});
    CHECK_THROWS(empirical_cdf({}));

    Rng rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const int n = 10000;
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    const auto cdf = empirical_cdf(v);
    double d = 0.0;
    double prev = 0.0;
    for (const auto& [x, f] : cdf) {
        d = std::max({d, std::abs(f - x), std::abs(prev - x)});
        CHECK(f > prev);
        prev = f;
    }
    CHECK(cdf.back().second == 1.0);
    // Kolmogorov 99% critical value
    CHECK(d < 1.628 / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("trimmed RMSPE equals the sort-and-slice oracle") {
    Rng rng(4);
    std::exponential_distribution<double> ex(3.0);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 1 + trial * 7;
        std::vector<double> sq(static_cast<std::size_t>(n));
        for (auto& x : sq) x = ex(rng);
        for (double q : {1.0, 0.99, 0.9, 0.5}) {
            std::vector<double> sorted = sq;
            std::sort(sorted.begin(), sorted.end());
            const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(q * n + 1e-9)));
            const double mean = std::accumulate(sorted.begin(), sorted.begin() + static_cast<long>(keep), 0.0) /
                                static_cast<double>(keep);
            CHECK(trimmed_rmspe(sq, q) == doctest::Approx(std::sqrt(mean)).epsilon(1e-14));
        }
    }
    std::vector<double> base(1000, 0.01);
    const double plain = trimmed_rmspe(base, 1.0);
    CHECK(plain == doctest::Approx(0.1));
    base[500] = 9.0;
    CHECK(trimmed_rmspe(base, 0.99) == doctest::Approx(0.1));
    CHECK(trimmed_rmspe(base, 1.0) > 0.1);
    CHECK_THROWS(trimmed_rmspe(base, 0.0));
    CHECK_THROWS(trimmed_rmspe(base, 1.5));
}

TEST_CASE("Monte Carlo run: empty run, determinism, thread independence") {
    const EvalConfig cfg = small_config();
    const MusicEstimator music(cfg.geometry, cfg.grid, cfg.num_sources);
    const GenieMlEstimator genie;
    const std::vector<const Estimator*> ests{&music, &genie};

    const RunReport empty = monte_carlo_run(cfg, ests, 0, 5);
    CHECK(empty.realizations == 0);
    CHECK(report_to_json({empty})["points"][0]["config"]["snr_db"] == 10.0);

    omp_set_num_threads(1);
    const RunReport a = monte_carlo_run(cfg, ests, 40, 5);
    const RunReport b = monte_carlo_run(cfg, ests, 40, 5);
    omp_set_num_threads(3);
    const RunReport c = monte_carlo_run(cfg, ests, 40, 5);
    omp_set_num_threads(1);
    CHECK(same_reports(a, b));
    CHECK(same_reports(a, c));
    const RunReport d = monte_carlo_run(cfg, ests, 40, 6);
    CHECK_FALSE(same_reports(a, d));

    for (const auto& r : a.results)
        for (const auto& real : r.realizations) {
            CHECK(real.plain.size() == 2);
            for (double e : real.refined_errors) CHECK(e <= kPi);
        }
    CHECK(a.summary("genie_ml").rmspe_refined <= a.summary("music").rmspe_refined);
    CHECK_THROWS_AS(a.summary("nope"), std::out_of_range);
}

TEST_CASE("report files") {
    EvalConfig cfg = small_config();
    cfg.refine = false;
    const MusicEstimator music(cfg.geometry, cfg.grid, cfg.num_sources);
    const RunReport r = monte_carlo_run(cfg, {&music}, 20, 1);
    const auto dir = std::filesystem::temp_directory_path() / "doa_eval_files";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    write_rmspe_csv(dir / "rmspe.csv", {r}, false);
    write_cdf_csvs(dir, r, false);
    std::ifstream in(dir / "rmspe.csv");
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    CHECK(header == "estimator,snr_db,n,rmspe,rmspe_trimmed_q");
    CHECK(row.rfind("music,10,10,", 0) == 0);
    CHECK(std::filesystem::exists(dir / "cdf_music_10.csv"));
    std::filesystem::remove_all(dir);
}
