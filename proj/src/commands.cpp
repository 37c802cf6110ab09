#include "doa/commands.hpp"

#include "doa/baselines.hpp"
#include "doa/chainnet.hpp"
#include "doa/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>
#include <ostream>
#include <sstream>

namespace doa {

namespace fs = std::filesystem;
using nlohmann::json;

json training_metadata(const RunConfig& cfg) {
    const auto& t = cfg.train;
    return {{"profile", to_string(cfg.profile)},
            {"hidden_layers", t.architecture.hidden_layers},
            {"hidden_units", t.architecture.hidden_units},
            {"batch_size", t.optimizer.batch_size},
            {"learning_rate", t.optimizer.learning_rate},
            {"total_samples", t.optimizer.total_samples},
            {"optimizer", "adam"},
            {"adam_beta1", t.optimizer.adam.beta1},
            {"adam_beta2", t.optimizer.adam.beta2},
            {"adam_epsilon", t.optimizer.adam.epsilon},
            {"initialization", "glorot_uniform"},
            {"chain_training", t.chain_training == ChainTraining::teacher_forcing ? "teacher_forcing" : "sequential"},
            {"seed", cfg.train_seed}};
}

namespace {

constexpr double kDeg = kPi / 180.0;

json read_json(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("missing " + file.string());
    return json::parse(in);
}

void write_json(const fs::path& file, const json& j) {
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    out << j.dump(2) << '\n';
}

void require_checkpoint(const fs::path& dir, const std::string& what) {
    if (!fs::exists(dir / "manifest.json")) throw ConfigError("missing " + what + " checkpoint at " + dir.string());
}

std::string loss_header(int num_stages, bool with_br) {
    std::string h = "samples";
    for (int l = 1; l <= num_stages; ++l) h += ",stage" + std::to_string(l);
    if (with_br) h += ",br";
    return h;
}

std::vector<std::string> read_loss_rows(const fs::path& file, std::uint64_t up_to) {
    std::vector<std::string> rows;
    std::ifstream in(file);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (std::stoull(line.substr(0, line.find(','))) > up_to) break;
        rows.push_back(line);
    }
    return rows;
}

void write_loss_csv(const fs::path& file, const std::string& header, const std::vector<std::string>& rows) {
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    out << header << '\n';
    for (const auto& r : rows) out << r << '\n';
}


struct TrainSession {
    ChainModel chain;
    std::optional<BrModel> br;
};

TrainSession fresh_models(const RunConfig& cfg) {
    TrainSession s;
    Rng chain_rng = make_rng(cfg.train_seed, streams::kInit, 0);
    s.chain = make_chain(feature_dim(cfg.selection), cfg.grid, cfg.train_distribution.num_sources,
                         cfg.train.architecture, chain_rng);
    if (cfg.train.train_br) {
        Rng br_rng = make_rng(cfg.train_seed, streams::kInit, 1);
        s.br = make_br(feature_dim(cfg.selection), cfg.grid, cfg.train.architecture, br_rng);
    }
    return s;
}

void save_state(const fs::path& dir, const TrainSession& s, ChainTrainer& chain_trainer, Trainer* br_trainer,
                const LossSmoother& br_smoother, std::uint64_t samples_seen, const RunConfig& cfg) {
    const fs::path tmp = dir.string() + ".tmp";
    fs::remove_all(tmp);
    save_chain(tmp / "chain", s.chain, training_metadata(cfg));
    json smoothers = json::array();
    for (int l = 1; l <= s.chain.num_sources(); ++l) {
        save_adam_state(tmp / "chain_adam" / ("stage" + std::to_string(l)), chain_trainer.stage_trainer(l).state());
        smoothers.push_back({{"value", chain_trainer.smoother(l).value()},
                             {"started", chain_trainer.smoother(l).started()}});
    }
    json progress{{"samples_seen", samples_seen}, {"stage_smoothers", smoothers}};
    if (s.br && br_trainer != nullptr) {
        save_br(tmp / "br", *s.br, training_metadata(cfg));
        save_adam_state(tmp / "br_adam", br_trainer->state());
        progress["br_smoother"] = {{"value", br_smoother.value()}, {"started", br_smoother.started()}};
    }
    write_json(tmp / "progress.json", progress);
    fs::remove_all(dir);
    fs::rename(tmp, dir);
}

}  // namespace

TrainOutcome cmd_train(const RunConfig& cfg_in, bool resume, std::ostream& log, std::uint64_t halt_after) {
    RunConfig cfg = cfg_in;
    cfg.validate();
    fs::create_directories(cfg.out_dir);
    save_run_config(cfg.out_dir / "config.json", cfg);

    const auto& opt = cfg.train.optimizer;
    const int l_total = cfg.train_distribution.num_sources;
    const bool with_br = cfg.train.train_br;
    const std::string header = loss_header(l_total, with_br);
    SampleStream stream(cfg.train_generator(), cfg.train_seed, streams::kTrain);
    TrainOutcome outcome;

    if (cfg.train.chain_training == ChainTraining::sequential) {
        TrainSession s = fresh_models(cfg);
        log << "training chain (sequential) on " << opt.total_samples << " samples\n";
        const auto res = train_sequential(s.chain, stream, opt);
        std::vector<std::string> rows;
        // stage traces are written one after another; other stages left blank
        for (int l = 1; l <= l_total; ++l) {
            const auto& trace = res.stage_loss_traces[static_cast<std::size_t>(l - 1)];
            for (std::size_t i = 0; i < trace.size(); ++i) {
                std::ostringstream row;
                row << std::min<std::uint64_t>((i + 1) * opt.batch_size, opt.total_samples);
                for (int k = 1; k <= l_total; ++k) row << ',' << (k == l ? format_number(trace[i]) : "");
                if (with_br) row << ',';
                rows.push_back(row.str());
            }
            outcome.final_stage_losses.push_back(trace.empty() ? 0.0 : trace.back());
        }
        if (s.br) {
            SampleStream br_stream(cfg.train_generator(), cfg.train_seed, streams::kTrain);
            const auto br_res = train_br(*s.br, br_stream, opt);
            for (std::size_t i = 0; i < br_res.loss_trace.size(); ++i) {
                std::ostringstream row;
                row << std::min<std::uint64_t>((i + 1) * opt.batch_size, opt.total_samples);
                for (int k = 1; k <= l_total; ++k) row << ',';
                row << ',' << format_number(br_res.loss_trace[i]);
                rows.push_back(row.str());
            }
            outcome.final_br_loss = br_res.loss_trace.empty() ? 0.0 : br_res.loss_trace.back();
            save_br(cfg.br_dir(), *s.br, training_metadata(cfg));
        }
        save_chain(cfg.chain_dir(), s.chain, training_metadata(cfg));
        write_loss_csv(cfg.out_dir / "train_loss.csv", header, rows);
        outcome.samples_seen = res.samples_seen;
        return outcome;
    }

    TrainSession s = fresh_models(cfg);
    const fs::path state_dir = cfg.out_dir / "state";
    std::uint64_t seen = 0;
    std::vector<std::string> rows;
    json progress;
    if (resume && fs::exists(state_dir / "progress.json")) {
        progress = read_json(state_dir / "progress.json");
        seen = progress.at("samples_seen").get<std::uint64_t>();
        s.chain = load_chain(state_dir / "chain");
        if (with_br) s.br = load_br(state_dir / "br");
        rows = read_loss_rows(cfg.out_dir / "train_loss.csv", seen);
        log << "resuming from " << seen << " samples\n";
    }
    ChainTrainer chain_trainer(s.chain, opt);
    std::unique_ptr<Trainer> br_trainer;
    LossSmoother br_smoother(opt.loss_smoothing);
    if (s.br) br_trainer = std::make_unique<Trainer>(s.br->net, opt);
    if (!progress.is_null()) {
        for (int l = 1; l <= l_total; ++l) {
            chain_trainer.stage_trainer(l).state() =
                load_adam_state(state_dir / "chain_adam" / ("stage" + std::to_string(l)), s.chain.stages[static_cast<std::size_t>(l - 1)]);
            const auto& sm = progress.at("stage_smoothers").at(static_cast<std::size_t>(l - 1));
            chain_trainer.smoother(l).restore(sm.at("value").get<double>(), sm.at("started").get<bool>());
        }
        if (br_trainer) {
            br_trainer->state() = load_adam_state(state_dir / "br_adam", s.br->net);
            const auto& sm = progress.at("br_smoother");
            br_smoother.restore(sm.at("value").get<double>(), sm.at("started").get<bool>());
        }
    }
    stream.seek(seen);

    log << "training chain" << (with_br ? " and BR" : "") << " on " << opt.total_samples << " samples\n";
    std::uint64_t next_checkpoint =
        cfg.train.checkpoint_every > 0 ? (seen / cfg.train.checkpoint_every + 1) * cfg.train.checkpoint_every : 0;
    std::uint64_t next_log = seen + opt.total_samples / 10;
    std::vector<double> stage_losses(static_cast<std::size_t>(l_total), 0.0);
    while (seen < opt.total_samples) {
        const auto want = static_cast<std::size_t>(std::min<std::uint64_t>(opt.batch_size, opt.total_samples - seen));
        const auto samples = stream.next_batch(want);
        stage_losses = chain_trainer.step(samples);
        std::ostringstream row;
        seen += want;
        row << seen;
        for (double v : stage_losses) row << ',' << format_number(v);
        if (br_trainer) {
            const double loss = br_trainer->step(make_br_batch(samples, cfg.grid));
            row << ',' << format_number(br_smoother.update(loss));
        }
        rows.push_back(row.str());
        if (next_checkpoint > 0 && seen >= next_checkpoint && seen < opt.total_samples) {
            save_state(state_dir, s, chain_trainer, br_trainer.get(), br_smoother, seen, cfg);
            write_loss_csv(cfg.out_dir / "train_loss.csv", header, rows);
            next_checkpoint += cfg.train.checkpoint_every;
            if (halt_after > 0 && seen >= halt_after) {
                log << "halted at " << seen << " samples\n";
                outcome.samples_seen = seen;
                outcome.final_stage_losses = stage_losses;
                return outcome;
            }
        }
        if (seen >= next_log) {
            log << "  " << seen << " samples, stage losses";
            for (double v : stage_losses) log << ' ' << format_number(v);
            if (br_trainer) log << ", br " << format_number(br_smoother.value());
            log << '\n';
            next_log = seen + std::max<std::uint64_t>(opt.total_samples / 10, 1);
        }
    }
    save_chain(cfg.chain_dir(), s.chain, training_metadata(cfg));
    if (s.br) save_br(cfg.br_dir(), *s.br, training_metadata(cfg));
    write_loss_csv(cfg.out_dir / "train_loss.csv", header, rows);
    fs::remove_all(state_dir);
    outcome.samples_seen = seen;
    outcome.final_stage_losses = stage_losses;
    outcome.final_br_loss = br_smoother.value();
    return outcome;
}

void cmd_adapt(const RunConfig& cfg_in, const fs::path& base, const fs::path& out, std::ostream& log) {
    RunConfig cfg = cfg_in;
    cfg.train_distribution.rho_min = cfg.adapt.rho_min;
    cfg.train_distribution.rho_max = cfg.adapt.rho_max;
    cfg.validate();
    require_checkpoint(base, "base chain");
    ChainModel chain = load_chain(base);
    if (chain.num_sources() != cfg.train_distribution.num_sources || chain.feature_dim != feature_dim(cfg.selection) ||
        chain.grid.num_sectors != cfg.grid.num_sectors)
        throw ConfigError("base checkpoint does not match the configured geometry, grid or model order");

    TrainConfig opt = cfg.train.optimizer;
    opt.total_samples = cfg.adapt.total_samples;
    opt.learning_rate = cfg.adapt.learning_rate;
    SampleStream stream(cfg.train_generator(), cfg.train_seed, streams::kAdapt);
    log << "adapting " << base.string() << " on " << opt.total_samples << " samples, rho in [" << cfg.adapt.rho_min
        << ", " << cfg.adapt.rho_max << "]\n";
    const auto res = adapt(chain, stream, opt);

    json meta = training_metadata(cfg);
    meta["total_samples"] = opt.total_samples;
    meta["learning_rate"] = opt.learning_rate;
    meta["parent_checkpoint"] = fs::absolute(base).lexically_normal().string();
    meta["adapt_rho_range"] = {cfg.adapt.rho_min, cfg.adapt.rho_max};
    save_chain(out, chain, meta);
    json manifest = read_json(out / "manifest.json");
    manifest["parent"] = meta["parent_checkpoint"];
    write_json(out / "manifest.json", manifest);

    std::vector<std::string> rows;
    const std::size_t steps = res.stage_loss_traces.empty() ? 0 : res.stage_loss_traces.front().size();
    for (std::size_t i = 0; i < steps; ++i) {
        std::ostringstream row;
        row << std::min<std::uint64_t>((i + 1) * opt.batch_size, opt.total_samples);
        for (const auto& t : res.stage_loss_traces) row << ',' << format_number(t[i]);
        rows.push_back(row.str());
    }
    write_loss_csv(out / "adapt_loss.csv", loss_header(chain.num_sources(), false), rows);
}

namespace {

struct LoadedEstimators {
    std::optional<ChainModel> chain;
    std::optional<BrModel> br;
    std::vector<std::unique_ptr<Estimator>> owned;

    std::vector<const Estimator*> pointers() const {
        std::vector<const Estimator*> out;
        for (const auto& e : owned) out.push_back(e.get());
        return out;
    }
};

LoadedEstimators load_estimators(const RunConfig& cfg) {
    LoadedEstimators le;
    const auto& ev = cfg.evaluation;
    for (const auto& name : ev.estimators) {
        if (name == "chainnet") {
            require_checkpoint(cfg.chain_dir(), "chain");
            le.chain = load_chain(cfg.chain_dir());
            if (le.chain->num_sources() != ev.num_sources)
                throw ConfigError("chain checkpoint has " + std::to_string(le.chain->num_sources()) +
                                  " stages but evaluation asks for L = " + std::to_string(ev.num_sources));
            if (le.chain->feature_dim != feature_dim(cfg.selection) || le.chain->grid.num_sectors != cfg.grid.num_sectors)
                throw ConfigError("chain checkpoint does not match the configured array or grid");
            le.owned.push_back(std::make_unique<ChainNetEstimator>(*le.chain, ev.angle_mode, ev.mask));
        } else if (name == "br") {
            require_checkpoint(cfg.br_dir(), "BR");
            le.br = load_br(cfg.br_dir());
            if (le.br->net.input_dim() != feature_dim(cfg.selection) || le.br->grid.num_sectors != cfg.grid.num_sectors)
                throw ConfigError("BR checkpoint does not match the configured array or grid");
            le.owned.push_back(std::make_unique<BrEstimator>(*le.br, ev.num_sources));
        } else if (name == "music") {
            le.owned.push_back(std::make_unique<MusicEstimator>(cfg.geometry, cfg.grid, ev.num_sources));
        } else if (name == "genie_ml") {
            le.owned.push_back(std::make_unique<GenieMlEstimator>());
        }
    }
    return le;
}

void dump_spectrum(const fs::path& file, const RVector& spectrum, const SectorGrid& grid) {
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    out << "sector,angle_deg,value\n";
    for (int g = 1; g <= grid.num_sectors; ++g)
        out << g << ',' << format_number(sector_midpoint(g, grid) / kDeg) << ',' << format_number(spectrum[g - 1])
            << '\n';
}

void evaluate_fixed(const RunConfig& cfg, const FixedScenario& fx, std::ostream& log) {
    std::vector<double> doas;
    for (double d : fx.doas_deg) doas.push_back(d * kDeg);
    const DrawnScene truth = fixed_scene(doas, fx.snr_db, cfg.grid, cfg.evaluation.rho);
    EvalConfig ec = cfg.eval_config(fx.snr_db, fx.num_snapshots);
    Rng rng = make_rng(cfg.eval_seed, streams::kEvaluation, 0);
    const Observation obs = make_observation(truth, ec, rng);

    json summary{{"doas_deg", fx.doas_deg}, {"snr_db", fx.snr_db}, {"num_snapshots", fx.num_snapshots},
                 {"true_sectors", truth.sectors}, {"seed", cfg.eval_seed}};
    bool dumped = false;
    if (fs::exists(cfg.br_dir() / "manifest.json")) {
        const BrModel br = load_br(cfg.br_dir());
        if (br.net.input_dim() != feature_dim(cfg.selection)) throw ConfigError("BR checkpoint does not match the array");
        const RVector spec = br.spectrum(obs.features);
        dump_spectrum(cfg.out_dir / "br_spectrum.csv", spec, cfg.grid);
        summary["br_peaks"] = br_peak_search(spec, static_cast<int>(doas.size()));
        dumped = true;
    }
    if (cfg.selection.num_subarrays() == 1 && static_cast<int>(doas.size()) < cfg.geometry.num_antennas) {
        const RVector spec = music_spectrum(obs.covariances.front(), static_cast<int>(doas.size()), cfg.grid, cfg.geometry);
        dump_spectrum(cfg.out_dir / "music_spectrum.csv", spec, cfg.grid);
        summary["music_peaks"] = br_peak_search(spec, static_cast<int>(doas.size()));
        dumped = true;
    }
    if (!dumped) throw ConfigError("fixed scenario needs a BR checkpoint or a fully sampled array");
    write_json(cfg.out_dir / "fixed_scenario.json", summary);
    log << "fixed scenario spectra written to " << cfg.out_dir.string() << '\n';
}

}  // namespace

std::vector<RunReport> cmd_evaluate(const RunConfig& cfg_in, const std::optional<FixedScenario>& fixed,
                                    std::ostream& log) {
    RunConfig cfg = cfg_in;
    cfg.validate();
    fs::create_directories(cfg.out_dir);
    if (fixed) {
        evaluate_fixed(cfg, *fixed, log);
        return {};
    }
    const LoadedEstimators le = load_estimators(cfg);
    const auto estimators = le.pointers();
    const auto& ev = cfg.evaluation;
    std::vector<RunReport> reports;
    for (int n : ev.num_snapshots)
        for (double snr : ev.snr_db) {
            log << "evaluating SNR " << format_number(snr) << " dB, N = " << n << ", " << ev.realizations
                << " realizations\n";
            reports.push_back(monte_carlo_run(cfg.eval_config(snr, n), estimators, ev.realizations, cfg.eval_seed));
            for (const auto& s : reports.back().summaries) {
                log << "  " << std::setw(10) << std::left << s.estimator << " rmspe " << format_number(s.rmspe);
                if (ev.refine) log << "  refined " << format_number(s.rmspe_refined);
                log << '\n';
            }
        }
    write_rmspe_csv(cfg.out_dir / "rmspe.csv", reports, ev.refine);
    for (const auto& r : reports)
        if (r.realizations > 0) write_cdf_csvs(cfg.out_dir, r, ev.num_snapshots.size() > 1);
    json report = report_to_json(reports);
    report["run_config"] = to_json(cfg);
    write_json(cfg.out_dir / "report.json", report);
    return reports;
}

RefineResult cmd_refine(const RunConfig& cfg_in, const RefineRequest& req, std::ostream& log) {
    RunConfig cfg = cfg_in;
    cfg.validate();
    fs::create_directories(cfg.out_dir);
    std::vector<double> doas;
    for (double d : req.doas_deg) doas.push_back(d * kDeg);
    const DrawnScene truth = fixed_scene(doas, req.snr_db, cfg.grid, cfg.evaluation.rho);
    const EvalConfig ec = cfg.eval_config(req.snr_db, req.num_snapshots);
    Rng rng = make_rng(cfg.eval_seed, streams::kEvaluation, 0);
    const Observation obs = make_observation(truth, ec, rng);

    std::vector<double> init;
    if (!req.init_deg.empty()) {
        for (double d : req.init_deg) init.push_back(d * kDeg);
    } else {
        require_checkpoint(cfg.chain_dir(), "chain");
        const ChainModel chain = load_chain(cfg.chain_dir());
        const ChainOutput out = infer_chain(chain, obs.features, cfg.evaluation.mask);
        init = sectors_to_angles(out.sectors, out.probabilities, chain.grid, cfg.evaluation.angle_mode);
    }
    if (init.size() != doas.size()) throw ConfigError("initial estimate count differs from the scene's source count");
    const LikelihoodModel model{cfg.geometry, cfg.selection, req.num_snapshots};
    const RVector x0 = Eigen::Map<const RVector>(init.data(), static_cast<Eigen::Index>(init.size()));
    const RefineResult r = refine(x0, obs.covariances, model, cfg.evaluation.refine_options);

    {
        std::ofstream out(cfg.out_dir / "refine_trace.csv");
        out << "step,nll\n";
        for (std::size_t i = 0; i < r.nll_trace.size(); ++i) out << i << ',' << format_number(r.nll_trace[i]) << '\n';
    }
    std::vector<double> refined_deg;
    for (Eigen::Index i = 0; i < r.params.doas.size(); ++i) refined_deg.push_back(r.params.doas[i] / kDeg);
    std::vector<double> refined(r.params.doas.data(), r.params.doas.data() + r.params.doas.size());
    std::vector<double> truth_rad(truth.scene.doas.data(), truth.scene.doas.data() + truth.scene.doas.size());
    std::vector<double> init_deg;
    for (double v : init) init_deg.push_back(v / kDeg);
    write_json(cfg.out_dir / "refine.json", {{"true_deg", req.doas_deg},
                                             {"initial_deg", init_deg},
                                             {"refined_deg", refined_deg},
                                             {"iterations", r.iterations},
                                             {"converged", r.converged},
                                             {"initial_rmspe", match_and_rmspe(truth_rad, init).rmspe},
                                             {"refined_rmspe", match_and_rmspe(truth_rad, refined).rmspe},
                                             {"seed", cfg.eval_seed}});
    log << "refined in " << r.iterations << " iterations, nll " << format_number(r.nll_trace.front()) << " -> "
        << format_number(r.nll_trace.back()) << '\n';
    return r;
}

MlGradient nll_gradient_fd(const std::vector<CMatrix>& covs, const MlParams& params, const LikelihoodModel& model,
                           double h) {
    auto central = [&](auto&& perturb) {
        MlParams plus = params;
        MlParams minus = params;
        perturb(plus, h);
        perturb(minus, -h);
        return (nll(covs, plus, model) - nll(covs, minus, model)) / (2.0 * h);
    };
    MlGradient g;
    const int l = params.num_sources();
    g.doas.resize(l);
    g.log_powers.resize(l);
    for (int i = 0; i < l; ++i) {
        g.doas[i] = central([i](MlParams& p, double d) { p.doas[i] += d; });
        g.log_powers[i] = central([i](MlParams& p, double d) { p.log_powers[i] += d; });
    }
    g.log_noise = central([](MlParams& p, double d) { p.log_noise += d; });
    if (params.rho.has_value()) g.rho = central([](MlParams& p, double d) { *p.rho += d; });
    return g;
}

double gradient_relative_error(const MlGradient& a, const MlGradient& b) {
    MlGradient diff;
    diff.doas = a.doas - b.doas;
    diff.log_powers = a.log_powers - b.log_powers;
    diff.log_noise = a.log_noise - b.log_noise;
    diff.rho = a.rho - b.rho;
    return diff.norm() / std::max(b.norm(), 1e-12);
}

OracleSummary cmd_oracle(const RunConfig& cfg, const OracleOptions& opts, std::ostream& log) {
    OracleSummary summary;
    ArrayGeometry geom = cfg.geometry;
    geom.num_antennas = opts.num_antennas;
    const SectorGrid grid{opts.num_sectors};
    MapOracleConfig mc;
    mc.grid = grid;
    mc.num_sources = opts.num_sources;
    mc.powers = RVector::Ones(opts.num_sources);
    mc.noise_power = std::pow(10.0, -opts.snr_db / 10.0);
    mc.model = LikelihoodModel{geom, SubarraySelection::fully_sampled(opts.num_antennas), cfg.num_snapshots};
    try {
        mc.validate();
    } catch (const std::exception& e) {
        throw ConfigError(std::string("oracle: ") + e.what());
    }

    const ScenarioDistribution dist =
        ScenarioDistribution::equal_power_test(opts.num_sources, opts.snr_db, grid, 0.0);
    auto check_map = [&](const DrawnScene& scene, Rng& rng, std::uint64_t id) {
        const auto covs =
            sample_covariance(simulate_snapshots(rng, scene.scene, geom, mc.model.selection, cfg.num_snapshots));
        const auto joint = map_joint_bruteforce(covs, mc);
        const auto succ = map_successive(covs, mc);
        ++summary.map_instances;
        if (joint != succ) {
            ++summary.map_mismatches;
            log << "  MAP mismatch on instance " << id << '\n';
        }
    };
    for (int i = 0; i < opts.instances; ++i) {
        Rng rng = make_rng(cfg.eval_seed, streams::kOracle, static_cast<std::uint64_t>(i));
        check_map(draw_scene(rng, dist), rng, static_cast<std::uint64_t>(i));
    }
    if (opts.exhaustive_sweep && opts.num_sources == 2) {
        std::uint64_t id = static_cast<std::uint64_t>(opts.instances);
        for (int g1 = 1; g1 <= grid.num_sectors; ++g1)
            for (int g2 = g1 + 1; g2 <= grid.num_sectors; ++g2, ++id) {
                Rng rng = make_rng(cfg.eval_seed, streams::kOracle, id);
                check_map(fixed_scene({sector_midpoint(g1, grid), sector_midpoint(g2, grid)}, opts.snr_db, grid), rng,
                          id);
            }
    }
    log << "MAP joint vs successive: " << summary.map_instances - summary.map_mismatches << "/" << summary.map_instances
        << " equal\n";

    const LikelihoodModel gm{cfg.geometry, SubarraySelection::table2_scheme(), cfg.num_snapshots};
    ScenarioDistribution gd;
    gd.num_sources = 3;
    gd.grid = SectorGrid{72};
    gd.noise_min_db = -20.0;
    gd.noise_max_db = 0.0;
    for (int i = 0; i < opts.gradient_cases; ++i) {
        Rng rng = make_rng(cfg.eval_seed, streams::kOracle, 1000000 + static_cast<std::uint64_t>(i));
        gd.rho_min = gd.rho_max = (i % 2 == 1) ? 0.5 : 0.0;
        const DrawnScene scene = draw_scene(rng, gd);
        const auto covs =
            sample_covariance(simulate_snapshots(rng, scene.scene, cfg.geometry, gm.selection, cfg.num_snapshots));
        std::uniform_real_distribution<double> jitter(-0.05, 0.05);
        MlParams p;
        p.doas = scene.scene.doas.unaryExpr([&](double t) { return t + jitter(rng); });
        p.log_powers = scene.powers.array().log() + 0.1;
        p.log_noise = std::log(scene.scene.noise_power) - 0.1;
        if (i % 2 == 1) p.rho = 0.3 + 0.4 * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        MlGradient analytic = nll_gradient(covs, p, gm);
        if (opts.corrupt_gradient) analytic.doas[0] *= 1.01;
        const double err = gradient_relative_error(analytic, nll_gradient_fd(covs, p, gm, 1e-5));
        ++summary.gradient_cases;
        summary.worst_gradient_error = std::max(summary.worst_gradient_error, err);
        if (!(err < opts.gradient_tolerance)) ++summary.gradient_failures;
    }
    log << "gradient checks: " << summary.gradient_cases - summary.gradient_failures << "/" << summary.gradient_cases
        << " within " << format_number(opts.gradient_tolerance) << ", worst relative error "
        << format_number(summary.worst_gradient_error) << '\n';
    return summary;
}

void cmd_report(const std::vector<fs::path>& runs, const fs::path& out, std::ostream& log) {
    if (runs.empty()) throw ConfigError("report needs at least one run directory");
    fs::create_directories(out);
    std::ofstream csv(out / "summary.csv");
    if (!csv) throw std::runtime_error("cannot write summary.csv");
    csv << "run,estimator,snr_db,n,rmspe,rmspe_trimmed_q,rmspe_refined,rmspe_refined_trimmed_q\n";
    log << std::left << std::setw(24) << "run" << std::setw(12) << "estimator" << std::setw(8) << "snr" << std::setw(5)
        << "n" << std::setw(14) << "rmspe" << "refined\n";
    for (const auto& run : runs) {
        const json report = read_json(run / "report.json");
        for (const auto& p : report.at("points")) {
            const auto& c = p.at("config");
            const bool refined = c.at("refine").get<bool>();
            for (const auto& s : p.at("summaries")) {
                const auto name = s.at("estimator").get<std::string>();
                const double snr = c.at("snr_db").get<double>();
                const int n = c.at("num_snapshots").get<int>();
                csv << run.filename().string() << ',' << name << ',' << format_number(snr) << ',' << n << ','
                    << format_number(s.at("rmspe").get<double>()) << ','
                    << format_number(s.at("rmspe_trimmed").get<double>()) << ',';
                if (refined)
                    csv << format_number(s.at("rmspe_refined").get<double>()) << ','
                        << format_number(s.at("rmspe_refined_trimmed").get<double>());
                else
                    csv << ',';
                csv << '\n';
                log << std::setw(24) << run.filename().string() << std::setw(12) << name << std::setw(8)
                    << format_number(snr) << std::setw(5) << n << std::setw(14)
                    << format_number(s.at("rmspe").get<double>())
                    << (refined ? format_number(s.at("rmspe_refined").get<double>()) : "-") << '\n';
            }
        }
    }
}

}  // namespace doa
