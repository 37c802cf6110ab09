#include "doa/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace doa {

double periodic_error(double truth, double estimate) {
    double d = std::fmod(truth - estimate + kPi, kTwoPi);
    if (d < 0.0) d += kTwoPi;
    return std::abs(d - kPi);
}

Matching match_and_rmspe(const std::vector<double>& truth, const std::vector<double>& estimates) {
    if (truth.size() != estimates.size()) throw std::invalid_argument("match_and_rmspe: length mismatch");
    if (truth.size() > 8) throw std::invalid_argument("match_and_rmspe: exhaustive matching supports L <= 8");
    const std::size_t l = truth.size();
    Matching best;
    if (l == 0) return best;
    std::vector<int> perm(l);
    std::iota(perm.begin(), perm.end(), 0);
    double best_mse = std::numeric_limits<double>::infinity();
    do {
        double mse = 0.0;
        for (std::size_t i = 0; i < l; ++i) {
            const double e = periodic_error(truth[i], estimates[static_cast<std::size_t>(perm[i])]);
            mse += e * e;
        }
        mse /= static_cast<double>(l);
        if (mse < best_mse) {
            best_mse = mse;
            best.assignment = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    best.rmspe = std::sqrt(best_mse);
    return best;
}

std::vector<std::pair<double, double>> empirical_cdf(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("empirical_cdf: empty input");
    std::sort(values.begin(), values.end());
    const double n = static_cast<double>(values.size());
    std::vector<std::pair<double, double>> out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i + 1 < values.size() && values[i + 1] == values[i]) continue;
        out.emplace_back(values[i], static_cast<double>(i + 1) / n);
    }
    return out;
}

double trimmed_rmspe(std::vector<double> squared_errors, double quantile) {
    if (!(quantile > 0.0 && quantile <= 1.0)) throw std::invalid_argument("trimmed_rmspe: quantile must be in (0, 1]");
    if (squared_errors.empty()) throw std::invalid_argument("trimmed_rmspe: empty input");
    const auto n = squared_errors.size();
    auto keep = static_cast<std::size_t>(std::floor(quantile * static_cast<double>(n) + 1e-9));
    keep = std::clamp<std::size_t>(keep, 1, n);
    std::sort(squared_errors.begin(), squared_errors.end());
    double sum = 0.0;
    for (std::size_t i = 0; i < keep; ++i) sum += squared_errors[i];
    return std::sqrt(sum / static_cast<double>(keep));
}

std::vector<double> ChainNetEstimator::estimate(const Observation& obs) const {
    const ChainOutput out = infer_chain(chain_, obs.features, mask_);
    return sectors_to_angles(out.sectors, out.probabilities, chain_.grid, mode_);
}

std::vector<double> BrEstimator::estimate(const Observation& obs) const {
    const auto sectors = br_peak_search(model_.spectrum(obs.features), num_sources_);
    std::vector<double> out;
    for (int g : sectors) out.push_back(sector_midpoint(g, model_.grid));
    return out;
}

std::vector<double> MusicEstimator::estimate(const Observation& obs) const {
    if (obs.covariances.size() != 1) throw std::invalid_argument("MUSIC needs a fully sampled array");
    std::vector<double> out;
    for (int g : music_estimate(obs.covariances.front(), num_sources_, grid_, geom_))
        out.push_back(sector_midpoint(g, grid_));
    return out;
}

std::vector<double> GenieMlEstimator::estimate(const Observation& obs) const {
    const auto& d = obs.truth.scene.doas;
    return {d.data(), d.data() + d.size()};
}

nlohmann::json EvalConfig::to_json() const {
    return {{"num_antennas", geometry.num_antennas},
            {"radius_over_wavelength", geometry.radius_over_wavelength},
            {"elevation", geometry.elevation},
            {"subarrays", selection.antenna_indices},
            {"num_sectors", grid.num_sectors},
            {"num_sources", num_sources},
            {"snr_db", snr_db},
            {"num_snapshots", num_snapshots},
            {"rho", rho},
            {"refine", refine},
            {"refine_max_iterations", refine_options.max_iterations},
            {"refine_gradient_tolerance", refine_options.gradient_tolerance},
            {"refine_optimize_rho", refine_options.optimize_rho},
            {"trim_quantile", trim_quantile}};
}

std::vector<double> EstimationResult::plain_sq_errors() const {
    std::vector<double> out;
    for (const auto& r : realizations) out.push_back(r.plain_sq_error);
    return out;
}

std::vector<double> EstimationResult::refined_sq_errors() const {
    std::vector<double> out;
    for (const auto& r : realizations) out.push_back(r.refined_sq_error);
    return out;
}

const EstimatorSummary& RunReport::summary(const std::string& name) const {
    for (const auto& s : summaries)
        if (s.estimator == name) return s;
    throw std::out_of_range("no estimator named " + name);
}

Observation make_observation(const DrawnScene& truth, const EvalConfig& cfg, Rng& rng) {
    Observation obs;
    obs.truth = truth;
    obs.covariances =
        sample_covariance(simulate_snapshots(rng, truth.scene, cfg.geometry, cfg.selection, cfg.num_snapshots));
    obs.features = stack_features(obs.covariances);
    return obs;
}

namespace {

void score(RealizationResult& r, const std::vector<double>& truth) {
    const Matching mp = match_and_rmspe(truth, r.plain);
    r.plain_sq_error = mp.rmspe * mp.rmspe;
    for (std::size_t i = 0; i < truth.size(); ++i)
        r.plain_errors.push_back(periodic_error(truth[i], r.plain[static_cast<std::size_t>(mp.assignment[i])]));
    if (!r.refined.empty()) {
        const Matching mr = match_and_rmspe(truth, r.refined);
        r.refined_sq_error = mr.rmspe * mr.rmspe;
        for (std::size_t i = 0; i < truth.size(); ++i)
            r.refined_errors.push_back(
                periodic_error(truth[i], r.refined[static_cast<std::size_t>(mr.assignment[i])]));
    }
}

double mean_rmspe(const std::vector<double>& sq) {
    if (sq.empty()) return 0.0;
    return std::sqrt(std::accumulate(sq.begin(), sq.end(), 0.0) / static_cast<double>(sq.size()));
}

}  // namespace

RunReport monte_carlo_run(const EvalConfig& cfg, const std::vector<const Estimator*>& estimators, std::size_t n,
                          std::uint64_t seed) {
    cfg.geometry.validate();
    cfg.selection.validate(cfg.geometry.num_antennas);
    const ScenarioDistribution dist =
        ScenarioDistribution::equal_power_test(cfg.num_sources, cfg.snr_db, cfg.grid, cfg.rho);
    const LikelihoodModel model{cfg.geometry, cfg.selection, cfg.num_snapshots};

    RunReport report;
    report.config = cfg;
    report.seed = seed;
    report.realizations = n;
    report.results.resize(estimators.size());
    for (std::size_t e = 0; e < estimators.size(); ++e) {
        report.results[e].estimator = estimators[e]->name();
        report.results[e].realizations.resize(n);
    }

    const auto count = static_cast<std::int64_t>(n);
#pragma omp parallel for schedule(dynamic, 4)
    for (std::int64_t i = 0; i < count; ++i) {
        Rng rng = make_rng(seed, streams::kEvaluation, static_cast<std::uint64_t>(i));
        const DrawnScene truth = draw_scene(rng, dist);
        const Observation obs = make_observation(truth, cfg, rng);
        const std::vector<double> true_doas(truth.scene.doas.data(), truth.scene.doas.data() + truth.scene.doas.size());
        for (std::size_t e = 0; e < estimators.size(); ++e) {
            const auto start = std::chrono::steady_clock::now();
            RealizationResult r;
            r.truth = true_doas;
            r.plain = estimators[e]->estimate(obs);
            if (cfg.refine) {
                const RVector init = Eigen::Map<const RVector>(r.plain.data(), static_cast<Eigen::Index>(r.plain.size()));
                const RefineResult rr =
                    estimators[e]->is_genie()
                        ? genie_ml(truth.scene.doas, truth.powers, truth.scene.noise_power, obs.covariances, model,
                                   cfg.refine_options, truth.rho)
                        : refine(init, obs.covariances, model, cfg.refine_options);
                r.refined.assign(rr.params.doas.data(), rr.params.doas.data() + rr.params.doas.size());
                r.refined_nll = rr.nll_trace.back();
            }
            score(r, true_doas);
            r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            report.results[e].realizations[static_cast<std::size_t>(i)] = std::move(r);
        }
    }

    for (const auto& res : report.results) {
        EstimatorSummary s;
        s.estimator = res.estimator;
        if (n > 0) {
            const auto plain = res.plain_sq_errors();
            s.rmspe = mean_rmspe(plain);
            s.rmspe_trimmed = trimmed_rmspe(plain, cfg.trim_quantile);
            if (cfg.refine) {
                const auto refined = res.refined_sq_errors();
                s.rmspe_refined = mean_rmspe(refined);
                s.rmspe_refined_trimmed = trimmed_rmspe(refined, cfg.trim_quantile);
            }
        }
        report.summaries.push_back(s);
    }
    return report;
}

std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

void write_rmspe_csv(const std::filesystem::path& file, const std::vector<RunReport>& reports, bool with_refined) {
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    out << "estimator,snr_db,n,rmspe,rmspe_trimmed_q";
    if (with_refined) out << ",rmspe_refined,rmspe_refined_trimmed_q";
    out << '\n';
    for (const auto& rep : reports)
        for (const auto& s : rep.summaries) {
            out << s.estimator << ',' << format_number(rep.config.snr_db) << ',' << rep.config.num_snapshots << ','
                << format_number(s.rmspe) << ',' << format_number(s.rmspe_trimmed);
            if (with_refined) out << ',' << format_number(s.rmspe_refined) << ',' << format_number(s.rmspe_refined_trimmed);
            out << '\n';
        }
}

void write_cdf_csvs(const std::filesystem::path& dir, const RunReport& report, bool with_n_suffix) {
    std::filesystem::create_directories(dir);
    const std::string suffix =
        format_number(report.config.snr_db) + (with_n_suffix ? "_n" + std::to_string(report.config.num_snapshots) : "");
    auto dump = [&](const std::string& name, const std::vector<double>& sq) {
        if (sq.empty()) return;
        std::vector<double> errs;
        for (double v : sq) errs.push_back(std::sqrt(v));
        std::ofstream out(dir / ("cdf_" + name + "_" + suffix + ".csv"));
        out << "error_rad,error_deg,fraction\n";
        for (const auto& [v, f] : empirical_cdf(errs))
            out << format_number(v) << ',' << format_number(v * 180.0 / kPi) << ',' << format_number(f) << '\n';
    };
    for (const auto& res : report.results) {
        dump(res.estimator, res.plain_sq_errors());
        if (report.config.refine) dump(res.estimator + "-refined", res.refined_sq_errors());
    }
}

nlohmann::json report_to_json(const std::vector<RunReport>& reports) {
    nlohmann::json points = nlohmann::json::array();
    for (const auto& rep : reports) {
        nlohmann::json p;
        p["config"] = rep.config.to_json();
        p["seed"] = rep.seed;
        p["realizations"] = rep.realizations;
        p["summaries"] = nlohmann::json::array();
        for (const auto& s : rep.summaries)
            p["summaries"].push_back({{"estimator", s.estimator},
                                      {"rmspe", s.rmspe},
                                      {"rmspe_trimmed", s.rmspe_trimmed},
                                      {"rmspe_refined", s.rmspe_refined},
                                      {"rmspe_refined_trimmed", s.rmspe_refined_trimmed}});
        points.push_back(std::move(p));
    }
    return {{"format_version", 1}, {"points", points}};
}

}  // namespace doa
