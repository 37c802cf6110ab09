#include "doa/commands.hpp"
#include "doa/errors.hpp"

#include <CLI11.hpp>
#include <omp.h>

#include <iostream>
#include <sstream>

namespace {

struct Common {
    std::string config;
    std::string preset;
    std::optional<std::uint64_t> seed;
    std::string profile;
    std::string out;
    int threads = 0;
    bool override_table1 = false;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config, "JSON run configuration")->check(CLI::ExistingFile);
    app->add_option("--preset", c.preset, "table1-paper | table2-subarrays | desk-small");
    app->add_option("--seed", c.seed, "master seed for training and evaluation");
    app->add_option("--profile", c.profile, "desk | paper")->check(CLI::IsMember({"desk", "paper"}));
    app->add_option("--out", c.out, "output directory");
    app->add_option("--threads", c.threads, "OpenMP threads (0 = runtime default)");
    app->add_flag("--override-table1", c.override_table1, "allow a paper-profile config to alter Table 1 values");
}

doa::RunConfig resolve(const Common& c) {
    if (!c.config.empty() && !c.preset.empty()) throw doa::ConfigError("give either --config or --preset");
    doa::RunConfig cfg = !c.config.empty() ? doa::load_run_config(c.config)
                                           : doa::preset(c.preset.empty() ? "desk-small" : c.preset);
    if (c.profile == "paper" && cfg.profile != doa::Profile::paper) doa::apply_paper_profile(cfg);
    if (c.profile == "desk") cfg.profile = doa::Profile::desk;
    if (c.override_table1) cfg.override_table1 = true;
    if (c.seed) cfg.train_seed = cfg.eval_seed = *c.seed;
    if (!c.out.empty()) cfg.out_dir = c.out;
    if (c.threads > 0) omp_set_num_threads(c.threads);
    cfg.validate();
    return cfg;
}

std::vector<double> parse_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stod(item));
        } catch (const std::exception&) {
            throw doa::ConfigError("cannot parse number '" + item + "'");
        }
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Direction-of-arrival estimation with classifier chains"};
    app.require_subcommand(1);

    Common c;
    bool resume = false;
    auto* train = app.add_subcommand("train", "train the chain (and BR baseline) on streamed samples");
    add_common(train, c);
    train->add_flag("--resume", resume, "continue from <out>/state");
    std::uint64_t halt_after = 0;
    train->add_option("--halt-after", halt_after, "stop after the first snapshot past this many samples (test hook)");

    std::string base;
    std::optional<std::uint64_t> samples;
    auto* adapt = app.add_subcommand("adapt", "fine-tune a trained chain on correlated sources");
    add_common(adapt, c);
    adapt->add_option("--base", base, "base chain checkpoint")->required();
    adapt->add_option("--samples", samples, "adaptation sample budget");

    std::string refine_flag = "on", scenario = "random", doas, init;
    std::optional<double> snr;
    std::optional<int> n;
    std::optional<std::size_t> realizations;
    std::string chain_dir, br_dir;
    auto* evaluate = app.add_subcommand("evaluate", "Monte Carlo evaluation or fixed-scene spectrum dump");
    add_common(evaluate, c);
    evaluate->add_option("--refine", refine_flag, "on | off")->check(CLI::IsMember({"on", "off"}));
    evaluate->add_option("--scenario", scenario, "random | fixed")->check(CLI::IsMember({"random", "fixed"}));
    evaluate->add_option("--doas", doas, "comma-separated DoAs in degrees (fixed scenario)");
    evaluate->add_option("--snr", snr, "SNR in dB");
    evaluate->add_option("--n", n, "number of snapshots");
    evaluate->add_option("--realizations", realizations, "Monte Carlo realizations per point");
    evaluate->add_option("--chain", chain_dir, "chain checkpoint directory");
    evaluate->add_option("--br", br_dir, "BR checkpoint directory");

    auto* refine = app.add_subcommand("refine", "likelihood refinement on a simulated fixed scene");
    add_common(refine, c);
    refine->add_option("--doas", doas, "true DoAs in degrees")->required();
    refine->add_option("--init", init, "initial DoAs in degrees (default: chain estimate)");
    refine->add_option("--snr", snr, "SNR in dB");
    refine->add_option("--n", n, "number of snapshots");
    refine->add_option("--chain", chain_dir, "chain checkpoint directory");

    doa::OracleOptions oracle_opts;
    bool no_sweep = false;
    auto* oracle = app.add_subcommand("oracle", "MAP equivalence sweep and likelihood gradient checks");
    add_common(oracle, c);
    oracle->add_option("--instances", oracle_opts.instances, "random MAP instances");
    oracle->add_option("--sectors", oracle_opts.num_sectors, "grid size G");
    oracle->add_option("--sources", oracle_opts.num_sources, "model order L");
    oracle->add_option("--antennas", oracle_opts.num_antennas, "array size M");
    oracle->add_option("--oracle-snr", oracle_opts.snr_db, "SNR in dB");
    oracle->add_option("--gradient-cases", oracle_opts.gradient_cases, "gradient check scenarios");
    oracle->add_flag("--no-sweep", no_sweep, "skip the exhaustive true-sector sweep");
    oracle->add_flag("--corrupt-gradient", oracle_opts.corrupt_gradient, "perturb the analytic gradient (test hook)");

    std::vector<std::string> runs;
    std::string report_out = "report";
    int report_threads = 0;
    auto* report = app.add_subcommand("report", "summarize evaluation runs");
    report->add_option("runs", runs, "run directories containing report.json")->required();
    report->add_option("--out", report_out, "output directory");
    report->add_option("--threads", report_threads, "unused, accepted for uniformity");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? doa::kExitOk : doa::kExitConfig;
    }

    try {
        if (*train) {
            doa::cmd_train(resolve(c), resume, std::cerr, halt_after);
        } else if (*adapt) {
            doa::RunConfig cfg = resolve(c);
            if (samples) cfg.adapt.total_samples = *samples;
            doa::cmd_adapt(cfg, base, cfg.out_dir, std::cerr);
        } else if (*evaluate) {
            doa::RunConfig cfg = resolve(c);
            cfg.evaluation.refine = refine_flag == "on";
            if (!chain_dir.empty()) cfg.chain_checkpoint = chain_dir;
            if (!br_dir.empty()) cfg.br_checkpoint = br_dir;
            if (realizations) cfg.evaluation.realizations = *realizations;
            if (snr) cfg.evaluation.snr_db = {*snr};
            if (n) cfg.evaluation.num_snapshots = {*n};
            std::optional<doa::FixedScenario> fixed;
            if (scenario == "fixed") {
                if (doas.empty()) throw doa::ConfigError("--scenario fixed needs --doas");
                fixed = doa::FixedScenario{parse_list(doas), snr.value_or(20.0), n.value_or(10)};
            }
            doa::cmd_evaluate(cfg, fixed, std::cerr);
        } else if (*refine) {
            doa::RunConfig cfg = resolve(c);
            if (!chain_dir.empty()) cfg.chain_checkpoint = chain_dir;
            doa::RefineRequest req{parse_list(doas), init.empty() ? std::vector<double>{} : parse_list(init),
                                   snr.value_or(20.0), n.value_or(10)};
            doa::cmd_refine(cfg, req, std::cerr);
        } else if (*oracle) {
            oracle_opts.exhaustive_sweep = !no_sweep;
            const auto summary = doa::cmd_oracle(resolve(c), oracle_opts, std::cerr);
            if (!summary.passed()) {
                std::cerr << "oracle mismatch\n";
                return doa::kExitOracle;
            }
        } else if (*report) {
            std::vector<std::filesystem::path> dirs(runs.begin(), runs.end());
            doa::cmd_report(dirs, report_out, std::cout);
        }
    } catch (const doa::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return doa::kExitConfig;
    } catch (const doa::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return doa::kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return doa::kExitConfig;
    }
    return doa::kExitOk;
}
