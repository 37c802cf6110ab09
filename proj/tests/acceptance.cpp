// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance [--work <dir>] [--fresh] [criterion numbers...]
//
// Trained checkpoints under the work directory are reused when their saved
// config matches; --fresh clears it first.

#include "doa/baselines.hpp"
#include "doa/chainnet.hpp"
#include "doa/commands.hpp"
#include "doa/config.hpp"
#include "doa/eval.hpp"
#include "doa/likelihood.hpp"
#include "doa/nn.hpp"
#include "doa/signal_sim.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

using namespace doa;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

fs::path g_work = "acceptance_runs";
std::ofstream g_log;

std::string fmt(double v, int digits = 4) {
    std::ostringstream s;
    s.precision(digits);
    s << v;
    return s.str();
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool same_files(const fs::path& a, const fs::path& b, const std::string& ext) {
    int count = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (e.path().extension() != ext) continue;
        ++count;
        const fs::path other = b / fs::relative(e.path(), a);
        if (!fs::exists(other) || slurp(e.path()) != slurp(other)) return false;
    }
    return count > 0;
}

// 1. MAP successive form equals the joint brute force.
Outcome criterion1() {
    MapOracleConfig cfg;
    cfg.grid = SectorGrid{24};
    cfg.num_sources = 2;
    cfg.powers = RVector::Ones(2);
    const double snr_db = 10.0;
    cfg.noise_power = std::pow(10.0, -snr_db / 10.0);
    cfg.model = LikelihoodModel{ArrayGeometry{4, 1.0, 0.0}, SubarraySelection::fully_sampled(4), 10};

    int checked = 0, mismatches = 0;
    auto compare = [&](const std::vector<CMatrix>& covs) {
        ++checked;
        if (map_joint_bruteforce(covs, cfg) != map_successive(covs, cfg)) ++mismatches;
    };
    for (int i = 0; i < 200; ++i) {
        Rng rng = make_rng(101, streams::kOracle, static_cast<std::uint64_t>(i));
        const DrawnScene s = draw_scene(rng, ScenarioDistribution::equal_power_test(2, snr_db, cfg.grid));
        compare(sample_covariance(simulate_snapshots(rng, s.scene, cfg.model.geometry, cfg.model.selection, 10)));
    }
    std::uint64_t index = 1000;
    for (int g1 = 1; g1 <= 24; ++g1)
        for (int g2 = g1 + 1; g2 <= 24; ++g2) {
            Rng rng = make_rng(101, streams::kOracle, index++);
            const DrawnScene s =
                fixed_scene({sector_midpoint(g1, cfg.grid), sector_midpoint(g2, cfg.grid)}, snr_db, cfg.grid);
            compare(sample_covariance(simulate_snapshots(rng, s.scene, cfg.model.geometry, cfg.model.selection, 10)));
        }
    return {mismatches == 0, std::to_string(checked) + " instances (200 random + 276 sweep), " +
                                 std::to_string(mismatches) + " mismatches"};
}

// 2. Analytic likelihood gradient against central differences.
Outcome criterion2() {
    const LikelihoodModel model{ArrayGeometry{}, SubarraySelection::table2_scheme(), 10};
    double worst = 0.0;
    int failures = 0;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 100; ++i) {
        Rng rng = make_rng(202, streams::kOracle, static_cast<std::uint64_t>(i));
        ScenarioDistribution d;
        d.num_sources = 3;
        d.grid = SectorGrid{72};
        d.rho_max = 1.0;
        const DrawnScene s = draw_scene(rng, d);
        const auto covs = sample_covariance(simulate_snapshots(rng, s.scene, model.geometry, model.selection, 10));
        MlParams p;
        p.doas = RVector::NullaryExpr(3, [&]() { return kTwoPi * u(rng); });
        p.log_powers = RVector::NullaryExpr(3, [&]() { return -1.0 + 2.0 * u(rng); });
        p.log_noise = -2.0 + 2.0 * u(rng);
        if (i % 2 == 1) p.rho = 0.1 + 0.8 * u(rng);
        const double err = gradient_relative_error(nll_gradient(covs, p, model), nll_gradient_fd(covs, p, model, 1e-5));
        worst = std::max(worst, err);
        if (!(err < 1e-4)) ++failures;
    }
    return {failures == 0, "100 scenarios (Table 2 scheme, L=3), worst relative error " + fmt(worst, 3) +
                               " (tolerance 1e-4)"};
}

// 3. Network backprop against central differences.
Outcome criterion3() {
    Rng rng(303);
    DenseNetwork<double> net = make_network<double>(36, 24, Architecture{2, 32}, OutputHead::softmax, rng);
    std::normal_distribution<double> normal(0.0, 0.3);
    for (auto& l : net.layers) l.bias = l.bias.unaryExpr([&](double) { return normal(rng); });
    const Mat<double> x = Mat<double>::NullaryExpr(36, 8, [&]() { return normal(rng) * 3.0; });
    std::vector<int> labels(8);
    for (int c = 0; c < 8; ++c) labels[static_cast<std::size_t>(c)] = (5 * c + 3) % 24;

    auto loss = [&]() {
        ForwardCache<double> cache;
        forward(net, x, &cache);
        double sum = 0.0;
        for (Eigen::Index c = 0; c < x.cols(); ++c)
            sum += softmax_xent<double>(cache.logits.col(c), labels[static_cast<std::size_t>(c)]).loss;
        return sum;
    };
    ForwardCache<double> cache;
    forward(net, x, &cache);
    Mat<double> g(cache.logits.rows(), cache.logits.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c)
        g.col(c) = softmax_xent<double>(cache.logits.col(c), labels[static_cast<std::size_t>(c)]).grad;
    const Gradients<double> grads = backward(net, cache, g);

    const double h = 1e-5;
    double num = 0.0, den = 0.0;
    std::size_t count = 0;
    auto probe = [&](double& p, double analytic) {
        const double orig = p;
        p = orig + h;
        const double fp = loss();
        p = orig - h;
        const double fm = loss();
        p = orig;
        const double fd = (fp - fm) / (2 * h);
        num += (fd - analytic) * (fd - analytic);
        den += fd * fd;
        ++count;
    };
    for (std::size_t li = 0; li < net.layers.size(); ++li) {
        auto& layer = net.layers[li];
        for (Eigen::Index i = 0; i < layer.weights.size(); ++i)
            probe(layer.weights.data()[i], grads.weights[li].data()[i]);
        for (Eigen::Index i = 0; i < layer.bias.size(); ++i) probe(layer.bias[i], grads.bias[li][i]);
    }
    const double rel = std::sqrt(num / den);
    return {rel < 1e-5, std::to_string(count) + " parameters of a 2x32 softmax network, relative error " +
                            fmt(rel, 3) + " (tolerance 1e-5)"};
}

// 4. Empirical snapshot covariance against the model.
Outcome criterion4() {
    const ArrayGeometry geom;
    double worst = 0.0;
    int correlated = 0;
    for (int i = 0; i < 10; ++i) {
        Rng rng = make_rng(404, streams::kOracle, static_cast<std::uint64_t>(i));
        ScenarioDistribution d;
        d.num_sources = 1 + i % 3;
        d.grid = SectorGrid{72};
        d.noise_min_db = -10.0;
        d.noise_max_db = 10.0;
        if (i % 2 == 0) {
            d.rho_min = d.rho_max = 1.0;
            ++correlated;
        } else {
            d.rho_max = 1.0;
        }
        const auto sel = i < 5 ? SubarraySelection::table2_scheme() : SubarraySelection::fully_sampled(9);
        const DrawnScene s = draw_scene(rng, d);
        const auto est = sample_covariance(simulate_snapshots(rng, s.scene, geom, sel, 100000));
        const auto model = model_covariances(s.scene, geom, sel);
        for (std::size_t k = 0; k < est.size(); ++k)
            worst = std::max(worst, (est[k] - model[k]).norm() / model[k].norm());
    }
    return {worst < 0.02, "10 scenes (" + std::to_string(correlated) +
                              " with rho=1), worst relative Frobenius error " + fmt(worst, 3) + " (tolerance 0.02)"};
}

// 5. Monotone refinement traces and the Genie ML fixed point.
Outcome criterion5() {
    const LikelihoodModel model{ArrayGeometry{}, SubarraySelection::table2_scheme(), 10};
    const SectorGrid grid{72};
    const double snrs[] = {0.0, 10.0, 20.0, 30.0};
    int violations = 0;
    std::vector<int> bad_runs(1000, 0);
#pragma omp parallel for schedule(dynamic, 8) reduction(+ : violations)
    for (int i = 0; i < 1000; ++i) {
        Rng rng = make_rng(505, streams::kEvaluation, static_cast<std::uint64_t>(i));
        const DrawnScene s = draw_scene(rng, ScenarioDistribution::equal_power_test(2, snrs[i % 4], grid));
        const auto covs = sample_covariance(simulate_snapshots(rng, s.scene, model.geometry, model.selection, 10));
        RVector init(2);
        for (int l = 0; l < 2; ++l) init[l] = sector_midpoint(s.sectors[static_cast<std::size_t>(l)], grid);
        const RefineResult r = refine(init, covs, model);
        for (std::size_t t = 1; t < r.nll_trace.size(); ++t)
            if (r.nll_trace[t] > r.nll_trace[t - 1]) {
                ++violations;
                bad_runs[static_cast<std::size_t>(i)] = 1;
            }
    }
    const int bad = std::accumulate(bad_runs.begin(), bad_runs.end(), 0);

    double worst = 0.0;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 20; ++i) {
        Rng rng = make_rng(506, streams::kOracle, static_cast<std::uint64_t>(i));
        SourceScene scene;
        scene.doas = RVector::NullaryExpr(2, [&]() { return kTwoPi * u(rng); });
        const RVector powers = RVector::NullaryExpr(2, [&]() { return 0.3 + u(rng); });
        scene.source_cov = powers.cast<cdouble>().asDiagonal();
        scene.noise_power = 0.01 + 0.5 * u(rng);
        const auto pop = model_covariances(scene, model.geometry, model.selection);
        const RefineResult g = genie_ml(scene.doas, powers, scene.noise_power, pop, model);
        for (int l = 0; l < 2; ++l)
            worst = std::max(worst, periodic_error(scene.doas[l], g.doas()[l]));
    }
    const bool pass = violations == 0 && worst < 1e-6;
    return {pass, "1000 refinements, " + std::to_string(bad) + " with an increasing nll step; genie at population "
                      "covariance worst DoA error " + fmt(worst, 3) + " rad (tolerance 1e-6)"};
}

// 6. Single-source sector classification at desk scale.
Outcome criterion6() {
    SampleGenerator gen;
    gen.selection = SubarraySelection::fully_sampled(9);
    gen.distribution.num_sources = 1;
    gen.distribution.grid = SectorGrid{72};
    gen.distribution.noise_min_db = gen.distribution.noise_max_db = -20.0;
    gen.num_snapshots = 10;
    Rng init = make_rng(606, streams::kInit, 0);
    ChainModel chain = make_chain(feature_dim(gen.selection), gen.distribution.grid, 1, Architecture{2, 256}, init);
    SampleStream train_stream(gen, 606, streams::kTrain);
    TrainConfig cfg;
    cfg.total_samples = 500000;
    const auto res = train_teacher_forced(chain, train_stream, cfg);

    SampleStream held_out(gen, 606, streams::kValidation);
    const auto samples = held_out.next_batch(20000);
    std::vector<RVector> feats;
    for (const auto& s : samples) feats.push_back(s.features);
    const auto outs = infer_chain_batch(chain, feats);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) hits += outs[i].sectors.front() == samples[i].sectors.front();
    const double acc = static_cast<double>(hits) / static_cast<double>(samples.size());
    return {acc >= 0.85, "held-out sector accuracy " + fmt(100 * acc, 4) + "% on 20000 samples (threshold 85%), "
                             "final smoothed loss " + fmt(res.stage_loss_traces.front().back())};
}

RunConfig chain_config(std::uint64_t seed) {
    RunConfig c = preset("table2-subarrays");
    c.train_seed = seed;
    c.eval_seed = 7007;
    c.out_dir = g_work / ("chain_seed" + std::to_string(seed));
    return c;
}

void ensure_trained(const RunConfig& c) {
    if (fs::exists(c.out_dir / "chain" / "manifest.json") && fs::exists(c.out_dir / "br" / "manifest.json") &&
        fs::exists(c.out_dir / "config.json") &&
        to_json(load_run_config(c.out_dir / "config.json")) == to_json(c))
        return;
    cmd_train(c, false, g_log);
}

double median3(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

// 7. Refined ChainNet beats refined BR; Genie ML below both.
Outcome criterion7() {
    std::vector<double> chain_r, br_r, genie_r;
    std::string per_seed;
    for (std::uint64_t seed : {1, 2, 3}) {
        const RunConfig c = chain_config(seed);
        ensure_trained(c);
        const ChainModel chain = load_chain(c.chain_dir());
        const BrModel br = load_br(c.br_dir());
        const ChainNetEstimator ce(chain, AngleMode::quadratic);
        const BrEstimator be(br, 2);
        const GenieMlEstimator ge;
        const RunReport r = monte_carlo_run(c.eval_config(20.0, 10), {&ce, &be, &ge}, 2000, c.eval_seed);
        chain_r.push_back(r.summary("chainnet").rmspe_refined);
        br_r.push_back(r.summary("br").rmspe_refined);
        genie_r.push_back(r.summary("genie_ml").rmspe_refined);
        per_seed += " seed" + std::to_string(seed) + "[chain " + fmt(chain_r.back()) + ", br " + fmt(br_r.back()) +
                    ", genie " + fmt(genie_r.back()) + ", chain plain " + fmt(r.summary("chainnet").rmspe) +
                    ", br plain " + fmt(r.summary("br").rmspe) + "]";
    }
    const double mc = median3(chain_r), mb = median3(br_r), mg = median3(genie_r);
    const bool pass = mc < mb && mg <= mc && mg <= mb;
    return {pass, "median refined RMSPE at 20 dB over 2000 realizations: chainnet " + fmt(mc) + " rad, br " +
                      fmt(mb) + " rad, genie " + fmt(mg) + " rad;" + per_seed};
}

// 8. Adaptation to correlated sources.
Outcome criterion8() {
    const RunConfig base_cfg = chain_config(1);
    ensure_trained(base_cfg);
    RunConfig ad = base_cfg;
    ad.adapt.total_samples = base_cfg.train.optimizer.total_samples / 10;
    ad.adapt.rho_min = 0.0;
    ad.adapt.rho_max = 1.0;
    const fs::path adapted_dir = g_work / "adapted_seed1";
    cmd_adapt(ad, base_cfg.chain_dir(), adapted_dir, g_log);

    const ChainModel base = load_chain(base_cfg.chain_dir());
    const ChainModel adapted = load_chain(adapted_dir);
    const ChainNetEstimator be(base, AngleMode::quadratic, true, "base");
    const ChainNetEstimator ae(adapted, AngleMode::quadratic, true, "adapted");
    auto rmspe = [&](double rho) {
        EvalConfig e = base_cfg.eval_config(20.0, 10);
        e.rho = rho;
        e.refine = false;
        const RunReport r = monte_carlo_run(e, {&be, &ae}, 2000, 8008);
        return std::pair{r.summary("base").rmspe, r.summary("adapted").rmspe};
    };
    const auto [base_corr, adapted_corr] = rmspe(1.0);
    const auto [base_unc, adapted_unc] = rmspe(0.0);
    const double degradation = adapted_unc / base_unc - 1.0;
    const bool pass = adapted_corr < base_corr && degradation < 0.20;
    return {pass, "plain RMSPE at 20 dB, 2000 realizations: rho=1 base " + fmt(base_corr) + " -> adapted " +
                      fmt(adapted_corr) + "; rho=0 base " + fmt(base_unc) + " -> adapted " + fmt(adapted_unc) +
                      " (change " + fmt(100 * degradation, 3) + "%, limit +20%)"};
}

// 9. RMSPE machinery against brute-force oracles.
Outcome criterion9() {
    int failures = 0;
    std::uniform_real_distribution<double> u(0.0, kTwoPi);
    Rng rng(909);
    for (int i = 0; i < 1000; ++i) {
        const std::size_t l = 1 + static_cast<std::size_t>(i % 4);
        std::vector<double> t(l), e(l);
        for (std::size_t k = 0; k < l; ++k) {
            t[k] = u(rng);
            e[k] = u(rng);
        }
        std::vector<std::size_t> perm(l);
        std::iota(perm.begin(), perm.end(), 0);
        double best = std::numeric_limits<double>::infinity();
        do {
            double s = 0.0;
            for (std::size_t k = 0; k < l; ++k) {
                double d = std::remainder(t[k] - e[perm[k]], kTwoPi);
                if (d == kPi) d = -kPi;
                s += d * d;
            }
            best = std::min(best, s);
        } while (std::next_permutation(perm.begin(), perm.end()));
        const double oracle = std::sqrt(best / static_cast<double>(l));
        if (std::abs(match_and_rmspe(t, e).rmspe - oracle) > 1e-12 * std::max(1.0, oracle)) ++failures;
    }
    const int matcher_failures = failures;

    int wrap_failures = 0;
    wrap_failures += periodic_error(1.0, 1.0) != 0.0;
    wrap_failures += std::abs(periodic_error(kPi - 0.1, -kPi + 0.1) - 0.2) > 1e-15;
    wrap_failures += periodic_error(kPi, 0.0) != kPi;
    wrap_failures += periodic_error(0.0, kPi) != kPi;
    failures += wrap_failures;

    int trim_failures = 0;
    std::exponential_distribution<double> ex(2.0);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 1 + trial * 5;
        std::vector<double> sq(static_cast<std::size_t>(n));
        for (auto& x : sq) x = ex(rng);
        for (double q : {1.0, 0.99, 0.95, 0.5}) {
            std::vector<double> sorted = sq;
            std::sort(sorted.begin(), sorted.end());
            const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(q * n + 1e-9)));
            double sum = 0.0;
            for (std::size_t k = 0; k < keep; ++k) sum += sorted[k];
            trim_failures += trimmed_rmspe(sq, q) != std::sqrt(sum / static_cast<double>(keep));
        }
    }
    failures += trim_failures;
    return {failures == 0, "matcher vs L! search: " + std::to_string(matcher_failures) + "/1000 mismatches; wrap cases: " +
                               std::to_string(wrap_failures) + " failures; trimmed vs sort-slice: " +
                               std::to_string(trim_failures) + "/800 mismatches"};
}

// 10. Bit-identical checkpoints and reports for equal seed and config.
Outcome criterion10() {
    RunConfig c = preset("table2-subarrays");
    c.train.architecture = Architecture{2, 64};
    c.train.optimizer.total_samples = 30000;
    c.train_seed = 1010;
    c.eval_seed = 1011;
    c.evaluation.realizations = 100;
    c.evaluation.snr_db = {10.0, 20.0};

    omp_set_num_threads(1);
    RunConfig a = c, b = c;
    a.out_dir = g_work / "repro_a";
    b.out_dir = g_work / "repro_b";
    fs::remove_all(a.out_dir);
    fs::remove_all(b.out_dir);
    cmd_train(a, false, g_log);
    cmd_train(b, false, g_log);
    const bool tensors = same_files(a.chain_dir(), b.chain_dir(), ".f32") && same_files(a.br_dir(), b.br_dir(), ".f32");
    const bool manifests = same_files(a.chain_dir(), b.chain_dir(), ".json") && same_files(a.br_dir(), b.br_dir(), ".json");

    // reports at a fixed thread count of 2; the checkpoints of run a feed both
    omp_set_num_threads(2);
    RunConfig ea = a, eb = a;
    ea.out_dir = g_work / "repro_eval_a";
    eb.out_dir = g_work / "repro_eval_b";
    ea.chain_checkpoint = eb.chain_checkpoint = a.chain_dir();
    ea.br_checkpoint = eb.br_checkpoint = a.br_dir();
    cmd_evaluate(ea, std::nullopt, g_log);
    cmd_evaluate(eb, std::nullopt, g_log);
    omp_set_num_threads(1);
    auto report = [](const fs::path& dir) {
        auto j = nlohmann::json::parse(slurp(dir / "report.json"));
        j["run_config"].erase("out_dir");
        return j.dump();
    };
    const bool reports = slurp(ea.out_dir / "rmspe.csv") == slurp(eb.out_dir / "rmspe.csv") &&
                         report(ea.out_dir) == report(eb.out_dir) &&
                         same_files(ea.out_dir, eb.out_dir, ".csv");
    return {tensors && manifests && reports, std::string("checkpoint tensors ") + (tensors ? "identical" : "differ") +
                                                 ", manifests " + (manifests ? "identical" : "differ") +
                                                 ", reports at 2 threads " + (reports ? "identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> selected;
    bool fresh = false;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--work" && i + 1 < argc) {
            g_work = argv[++i];
        } else if (a == "--fresh") {
            fresh = true;
        } else {
            try {
                selected.insert(std::stoi(a));
            } catch (const std::exception&) {
                std::cerr << "usage: acceptance [--work <dir>] [--fresh] [criterion numbers...]\n";
                return 2;
            }
        }
    }
    if (fresh) fs::remove_all(g_work);
    fs::create_directories(g_work);
    g_log.open(g_work / "acceptance.log", std::ios::app);
    omp_set_num_threads(1);

    const std::map<int, std::function<Outcome()>> criteria{
        {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4}, {5, criterion5},
        {6, criterion6}, {7, criterion7}, {8, criterion8}, {9, criterion9}, {10, criterion10}};
    bool all = true;
    for (const auto& [id, fn] : criteria) {
        if (!selected.empty() && !selected.count(id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("criterion %2d: %s  %s [%.1f s]\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str(), secs);
        std::fflush(stdout);
        all = all && o.pass;
    }
    return all ? 0 : 1;
}
