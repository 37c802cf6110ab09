#include "doa/config.hpp"

#include "doa/errors.hpp"

#include <algorithm>
#include <fstream>
#include <set>

namespace doa {

namespace {

using nlohmann::json;

// Table 1 constants enforced under the paper profile.
constexpr double kPaperMinSourceDb = -9.0;
constexpr double kPaperNoiseMinDb = -10.0;
constexpr double kPaperNoiseMaxDb = 30.0;
constexpr int kPaperHiddenLayers = 4;
constexpr int kPaperHiddenUnits = 4096;
constexpr std::size_t kPaperBatch = 256;
constexpr double kPaperLearningRate = 1e-4;
constexpr std::uint64_t kPaperSamples = 64000000;

void require_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

std::string training_name(ChainTraining t) {
    return t == ChainTraining::teacher_forcing ? "teacher_forcing" : "sequential";
}

ChainTraining training_from_string(const std::string& s) {
    if (s == "teacher_forcing") return ChainTraining::teacher_forcing;
    if (s == "sequential") return ChainTraining::sequential;
    throw ConfigError("unknown chain training mode " + s);
}

const std::set<std::string> kEstimators{"chainnet", "br", "music", "genie_ml"};

}  // namespace

std::string to_string(Profile p) { return p == Profile::desk ? "desk" : "paper"; }

Profile profile_from_string(const std::string& s) {
    if (s == "desk") return Profile::desk;
    if (s == "paper") return Profile::paper;
    throw ConfigError("profile must be desk or paper, got " + s);
}

void RunConfig::validate() const {
    try {
        geometry.validate();
        selection.validate(geometry.num_antennas);
        train_distribution.validate();
        train.optimizer.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (grid.num_sectors < 2) throw ConfigError("grid needs at least two sectors");
    if (train_distribution.grid.num_sectors != grid.num_sectors) throw ConfigError("distribution grid out of sync");
    if (num_snapshots < 1) throw ConfigError("num_snapshots must be >= 1");
    if (train.architecture.hidden_layers < 0 || train.architecture.hidden_units < 1)
        throw ConfigError("invalid architecture");
    if (adapt.rho_min < 0.0 || adapt.rho_max > 1.0 || adapt.rho_min > adapt.rho_max)
        throw ConfigError("adapt rho range must be a subset of [0, 1]");
    if (adapt.learning_rate < 0.0) throw ConfigError("adapt learning rate must be non-negative");

    const auto& ev = evaluation;
    if (ev.snr_db.empty() || ev.num_snapshots.empty()) throw ConfigError("evaluation needs SNR and N points");
    for (int n : ev.num_snapshots)
        if (n < 1) throw ConfigError("evaluation N must be >= 1");
    if (ev.num_sources < 1 || ev.num_sources > 8) throw ConfigError("evaluation L must be in [1, 8]");
    if (ev.rho < 0.0 || ev.rho > 1.0) throw ConfigError("evaluation rho must be in [0, 1]");
    if (!(ev.trim_quantile > 0.0 && ev.trim_quantile <= 1.0)) throw ConfigError("trim quantile must be in (0, 1]");
    for (const auto& e : ev.estimators) {
        if (!kEstimators.count(e)) throw ConfigError("unknown estimator " + e);
        if (e == "music" && selection.num_subarrays() != 1)
            throw ConfigError("music requires a fully sampled array");
        if (e == "music" && ev.num_sources >= geometry.num_antennas)
            throw ConfigError("music requires fewer sources than antennas");
    }

    if (profile == Profile::paper && !override_table1) {
        auto check = [](bool ok, const std::string& what) {
            if (!ok) throw ConfigError("paper profile: " + what + " differs from Table 1 (use override_table1)");
        };
        check(train_distribution.min_source_power_db == kPaperMinSourceDb, "weakest source power");
        check(train_distribution.noise_min_db == kPaperNoiseMinDb, "minimum noise power");
        check(train_distribution.noise_max_db == kPaperNoiseMaxDb, "maximum noise power");
        check(train.architecture.hidden_layers == kPaperHiddenLayers, "hidden layer count");
        check(train.architecture.hidden_units == kPaperHiddenUnits, "hidden unit count");
        check(train.optimizer.batch_size == kPaperBatch, "batch size");
        check(train.optimizer.learning_rate == kPaperLearningRate, "learning rate");
        check(train.optimizer.total_samples == kPaperSamples, "training set size");
    }
}

SampleGenerator RunConfig::train_generator() const {
    SampleGenerator g;
    g.geometry = geometry;
    g.selection = selection;
    g.distribution = train_distribution;
    g.distribution.grid = grid;
    g.num_snapshots = num_snapshots;
    return g;
}

EvalConfig RunConfig::eval_config(double snr_db, int n) const {
    EvalConfig e;
    e.geometry = geometry;
    e.selection = selection;
    e.grid = grid;
    e.num_sources = evaluation.num_sources;
    e.snr_db = snr_db;
    e.num_snapshots = n;
    e.rho = evaluation.rho;
    e.refine = evaluation.refine;
    e.refine_options = evaluation.refine_options;
    e.trim_quantile = evaluation.trim_quantile;
    return e;
}

std::filesystem::path RunConfig::chain_dir() const {
    return chain_checkpoint.empty() ? out_dir / "chain" : chain_checkpoint;
}

std::filesystem::path RunConfig::br_dir() const { return br_checkpoint.empty() ? out_dir / "br" : br_checkpoint; }

json to_json(const RunConfig& c) {
    const auto& d = c.train_distribution;
    const auto& t = c.train;
    const auto& ev = c.evaluation;
    const auto& ro = ev.refine_options;
    return {
        {"schema_version", kConfigSchemaVersion},
        {"preset", c.preset},
        {"profile", to_string(c.profile)},
        {"override_table1", c.override_table1},
        {"geometry",
         {{"num_antennas", c.geometry.num_antennas},
          {"radius_over_wavelength", c.geometry.radius_over_wavelength},
          {"elevation", c.geometry.elevation}}},
        {"subarrays", c.selection.antenna_indices},
        {"num_sectors", c.grid.num_sectors},
        {"num_snapshots", c.num_snapshots},
        {"train_distribution",
         {{"num_sources", d.num_sources},
          {"min_source_power_db", d.min_source_power_db},
          {"noise_min_db", d.noise_min_db},
          {"noise_max_db", d.noise_max_db},
          {"rho_min", d.rho_min},
          {"rho_max", d.rho_max}}},
        {"train",
         {{"hidden_layers", t.architecture.hidden_layers},
          {"hidden_units", t.architecture.hidden_units},
          {"batch_size", t.optimizer.batch_size},
          {"learning_rate", t.optimizer.learning_rate},
          {"total_samples", t.optimizer.total_samples},
          {"adam_beta1", t.optimizer.adam.beta1},
          {"adam_beta2", t.optimizer.adam.beta2},
          {"adam_epsilon", t.optimizer.adam.epsilon},
          {"loss_smoothing", t.optimizer.loss_smoothing},
          {"chain_training", training_name(t.chain_training)},
          {"train_br", t.train_br},
          {"checkpoint_every", t.checkpoint_every}}},
        {"adapt",
         {{"total_samples", c.adapt.total_samples},
          {"learning_rate", c.adapt.learning_rate},
          {"rho_min", c.adapt.rho_min},
          {"rho_max", c.adapt.rho_max}}},
        {"evaluation",
         {{"snr_db", ev.snr_db},
          {"num_snapshots", ev.num_snapshots},
          {"num_sources", ev.num_sources},
          {"rho", ev.rho},
          {"realizations", ev.realizations},
          {"refine", ev.refine},
          {"refine_max_iterations", ro.max_iterations},
          {"refine_gradient_tolerance", ro.gradient_tolerance},
          {"refine_optimize_rho", ro.optimize_rho},
          {"trim_quantile", ev.trim_quantile},
          {"estimators", ev.estimators},
          {"angle_mode", to_string(ev.angle_mode)},
          {"mask", ev.mask}}},
        {"seeds", {{"train", c.train_seed}, {"evaluation", c.eval_seed}}},
        {"out_dir", c.out_dir.string()},
        {"checkpoints", {{"chain", c.chain_checkpoint.string()}, {"br", c.br_checkpoint.string()}}},
    };
}

RunConfig run_config_from_json(const json& j) {
    try {
        require_keys(j,
                     {"schema_version", "preset", "profile", "override_table1", "geometry", "subarrays",
                      "oversampling", "num_sectors", "num_snapshots", "train_distribution", "train", "adapt",
                      "evaluation", "seeds", "out_dir", "checkpoints"},
                     "config");
        const int version = j.value("schema_version", kConfigSchemaVersion);
        if (version != kConfigSchemaVersion)
            throw ConfigError("unsupported config schema_version " + std::to_string(version));

        RunConfig c;
        read(j, "preset", c.preset);
        if (j.contains("profile")) c.profile = profile_from_string(j.at("profile").get<std::string>());
        read(j, "override_table1", c.override_table1);
        if (j.contains("geometry")) {
            const auto& g = j.at("geometry");
            require_keys(g, {"num_antennas", "radius_over_wavelength", "elevation"}, "geometry");
            read(g, "num_antennas", c.geometry.num_antennas);
            read(g, "radius_over_wavelength", c.geometry.radius_over_wavelength);
            read(g, "elevation", c.geometry.elevation);
        }
        if (j.contains("subarrays")) {
            const auto& s = j.at("subarrays");
            if (s.is_string()) {
                const auto name = s.get<std::string>();
                if (name == "full") c.selection = SubarraySelection::fully_sampled(c.geometry.num_antennas);
                else if (name == "table2") c.selection = SubarraySelection::table2_scheme();
                else throw ConfigError("subarrays must be a list, \"full\" or \"table2\"");
            } else {
                c.selection.antenna_indices = s.get<std::vector<std::vector<int>>>();
            }
        }
        if (j.contains("oversampling") && j.contains("num_sectors"))
            throw ConfigError("give either oversampling or num_sectors");
        if (j.contains("oversampling"))
            c.grid = SectorGrid::from_oversampling(j.at("oversampling").get<int>(), c.geometry.num_antennas);
        read(j, "num_sectors", c.grid.num_sectors);
        read(j, "num_snapshots", c.num_snapshots);
        if (j.contains("train_distribution")) {
            const auto& d = j.at("train_distribution");
            require_keys(d,
                         {"num_sources", "min_source_power_db", "noise_min_db", "noise_max_db", "rho_min",
                          "rho_max"},
                         "train_distribution");
            read(d, "num_sources", c.train_distribution.num_sources);
            read(d, "min_source_power_db", c.train_distribution.min_source_power_db);
            read(d, "noise_min_db", c.train_distribution.noise_min_db);
            read(d, "noise_max_db", c.train_distribution.noise_max_db);
            read(d, "rho_min", c.train_distribution.rho_min);
            read(d, "rho_max", c.train_distribution.rho_max);
        }
        c.train_distribution.grid = c.grid;
        if (j.contains("train")) {
            const auto& t = j.at("train");
            require_keys(t,
                         {"hidden_layers", "hidden_units", "batch_size", "learning_rate", "total_samples",
                          "adam_beta1", "adam_beta2", "adam_epsilon", "loss_smoothing", "chain_training",
                          "train_br", "checkpoint_every"},
                         "train");
            read(t, "hidden_layers", c.train.architecture.hidden_layers);
            read(t, "hidden_units", c.train.architecture.hidden_units);
            read(t, "batch_size", c.train.optimizer.batch_size);
            read(t, "learning_rate", c.train.optimizer.learning_rate);
            read(t, "total_samples", c.train.optimizer.total_samples);
            read(t, "adam_beta1", c.train.optimizer.adam.beta1);
            read(t, "adam_beta2", c.train.optimizer.adam.beta2);
            read(t, "adam_epsilon", c.train.optimizer.adam.epsilon);
            read(t, "loss_smoothing", c.train.optimizer.loss_smoothing);
            if (t.contains("chain_training"))
                c.train.chain_training = training_from_string(t.at("chain_training").get<std::string>());
            read(t, "train_br", c.train.train_br);
            read(t, "checkpoint_every", c.train.checkpoint_every);
        }
        if (j.contains("adapt")) {
            const auto& a = j.at("adapt");
            require_keys(a, {"total_samples", "learning_rate", "rho_min", "rho_max"}, "adapt");
            read(a, "total_samples", c.adapt.total_samples);
            read(a, "learning_rate", c.adapt.learning_rate);
            read(a, "rho_min", c.adapt.rho_min);
            read(a, "rho_max", c.adapt.rho_max);
        }
        if (j.contains("evaluation")) {
            const auto& e = j.at("evaluation");
            require_keys(e,
                         {"snr_db", "num_snapshots", "num_sources", "rho", "realizations", "refine",
                          "refine_max_iterations", "refine_gradient_tolerance", "refine_optimize_rho",
                          "trim_quantile", "estimators", "angle_mode", "mask"},
                         "evaluation");
            auto& ev = c.evaluation;
            read(e, "snr_db", ev.snr_db);
            read(e, "num_snapshots", ev.num_snapshots);
            read(e, "num_sources", ev.num_sources);
            read(e, "rho", ev.rho);
            read(e, "realizations", ev.realizations);
            read(e, "refine", ev.refine);
            read(e, "refine_max_iterations", ev.refine_options.max_iterations);
            read(e, "refine_gradient_tolerance", ev.refine_options.gradient_tolerance);
            read(e, "refine_optimize_rho", ev.refine_options.optimize_rho);
            read(e, "trim_quantile", ev.trim_quantile);
            read(e, "estimators", ev.estimators);
            if (e.contains("angle_mode")) ev.angle_mode = angle_mode_from_string(e.at("angle_mode").get<std::string>());
            read(e, "mask", ev.mask);
        }
        if (j.contains("seeds")) {
            const auto& s = j.at("seeds");
            require_keys(s, {"train", "evaluation"}, "seeds");
            read(s, "train", c.train_seed);
            read(s, "evaluation", c.eval_seed);
        }
        if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
        if (j.contains("checkpoints")) {
            const auto& k = j.at("checkpoints");
            require_keys(k, {"chain", "br"}, "checkpoints");
            if (k.contains("chain")) c.chain_checkpoint = k.at("chain").get<std::string>();
            if (k.contains("br")) c.br_checkpoint = k.at("br").get<std::string>();
        }
        return c;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

RunConfig load_run_config(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot read config " + file.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config " + file.string() + " is not valid JSON: " + e.what());
    }
    return run_config_from_json(j);
}

void save_run_config(const std::filesystem::path& file, const RunConfig& cfg) {
    if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    out << to_json(cfg).dump(2) << '\n';
}

void apply_paper_profile(RunConfig& cfg) {
    cfg.profile = Profile::paper;
    cfg.train_distribution.min_source_power_db = kPaperMinSourceDb;
    cfg.train_distribution.noise_min_db = kPaperNoiseMinDb;
    cfg.train_distribution.noise_max_db = kPaperNoiseMaxDb;
    cfg.train.architecture = Architecture{kPaperHiddenLayers, kPaperHiddenUnits};
    cfg.train.optimizer.batch_size = kPaperBatch;
    cfg.train.optimizer.learning_rate = kPaperLearningRate;
    cfg.train.optimizer.total_samples = kPaperSamples;
    cfg.adapt.total_samples = kPaperSamples / 10;
    cfg.adapt.learning_rate = kPaperLearningRate;
}

RunConfig preset(const std::string& name) {
    RunConfig c;
    c.preset = name;
    // desk training noise covers the evaluated SNRs
    c.train_distribution.noise_min_db = -30.0;
    c.train_distribution.noise_max_db = 0.0;
    if (name == "table1-paper") {
        c.selection = SubarraySelection::table2_scheme();
        c.grid = SectorGrid::from_oversampling(32, c.geometry.num_antennas);
        c.train_distribution.num_sources = 2;
        apply_paper_profile(c);
        c.train.checkpoint_every = 1000000;
        c.evaluation.snr_db = {-10, -5, 0, 5, 10, 15, 20, 25, 30};
        c.evaluation.realizations = 10000;
        c.evaluation.estimators = {"chainnet", "br", "genie_ml"};
        c.out_dir = "runs/table1-paper";
    } else if (name == "table2-subarrays") {
        c.selection = SubarraySelection::table2_scheme();
        c.grid = SectorGrid{72};
        c.train_distribution.num_sources = 2;
        c.train.architecture = Architecture{3, 256};
        c.train.optimizer.total_samples = 1000000;
        c.adapt.total_samples = 100000;
        c.evaluation.snr_db = {0, 10, 20, 30};
        c.evaluation.estimators = {"chainnet", "br", "genie_ml"};
        c.out_dir = "runs/table2-subarrays";
    } else if (name == "desk-small") {
        c.selection = SubarraySelection::fully_sampled(c.geometry.num_antennas);
        c.grid = SectorGrid{72};
        c.train_distribution.num_sources = 1;
        c.train.architecture = Architecture{2, 256};
        c.train.optimizer.total_samples = 500000;
        c.train.train_br = false;
        c.adapt.total_samples = 50000;
        c.evaluation.num_sources = 1;
        c.evaluation.snr_db = {20};
        c.evaluation.realizations = 1000;
        c.evaluation.estimators = {"chainnet", "music", "genie_ml"};
        c.out_dir = "runs/desk-small";
    } else {
        throw ConfigError("unknown preset " + name);
    }
    c.train_distribution.grid = c.grid;
    return c;
}

std::vector<std::string> preset_names() { return {"table1-paper", "table2-subarrays", "desk-small"}; }

}  // namespace doa
