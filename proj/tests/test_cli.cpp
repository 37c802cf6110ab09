#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "doa/commands.hpp"
#include "doa/config.hpp"

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <sys/wait.h>

using namespace doa;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "doa_cli_test";

int run(const std::string& args) {
    const std::string cmd = std::string(DOA_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Every tensor file under a checkpoint directory, byte for byte.
bool same_tensors(const fs::path& a, const fs::path& b) {
    int count = 0;
    for (const auto& e : fs::recursive_directory_iterator(a)) {
        if (e.path().extension() != ".f32") continue;
        ++count;
        const fs::path other = b / fs::relative(e.path(), a);
        if (!fs::exists(other) || slurp(e.path()) != slurp(other)) return false;
    }
    return count > 0;
}

fs::path write_config(const std::string& name, const RunConfig& cfg) {
    const fs::path p = kRoot / (name + ".json");
    save_run_config(p, cfg);
    return p;
}

RunConfig desk_config() {
    RunConfig c = preset("desk-small");
    c.train.architecture = Architecture{2, 64};
    c.train.optimizer.total_samples = 20480;
    c.train.train_br = true;
    c.evaluation.estimators = {"chainnet", "br", "music", "genie_ml"};
    c.evaluation.snr_db = {0.0, 20.0};
    c.evaluation.realizations = 10;
    return c;
}

std::string first_line(const fs::path& p) {
    std::ifstream in(p);
    std::string s;
    std::getline(in, s);
    return s;
}

int count_lines(const fs::path& p) {
    std::ifstream in(p);
    std::string s;
    int n = 0;
    while (std::getline(in, s)) ++n;
    return n;
}

struct Fixture {
    Fixture() {
        static bool done = false;
        if (done) return;
        done = true;
        fs::remove_all(kRoot);
        fs::create_directories(kRoot);
    }
};

}  // namespace

TEST_CASE_FIXTURE(Fixture, "train: smoke run, seed repeat, resume") {
    const fs::path cfg = write_config("desk", desk_config());
    const auto a = kRoot / "a", b = kRoot / "b", c = kRoot / "c", d = kRoot / "d";
    REQUIRE(run("train --config " + cfg.string() + " --seed 11 --threads 1 --out " + a.string()) == 0);
    CHECK(fs::exists(a / "chain" / "manifest.json"));
    CHECK(fs::exists(a / "br" / "manifest.json"));
    CHECK(fs::exists(a / "config.json"));
    CHECK(first_line(a / "train_loss.csv") == "samples,stage1,br");
    const ChainModel chain = load_chain(a / "chain");
    CHECK(chain.num_sources() == 1);
    CHECK(chain.grid.num_sectors == 72);
    CHECK(load_manifest(a / "chain").at("training").at("seed") == 11);

    REQUIRE(run("train --config " + cfg.string() + " --seed 11 --threads 1 --out " + b.string()) == 0);
    CHECK(same_tensors(a / "chain", b / "chain"));
    CHECK(same_tensors(a / "br", b / "br"));

    REQUIRE(run("train --config " + cfg.string() + " --seed 12 --threads 1 --out " + c.string()) == 0);
    CHECK_FALSE(same_tensors(a / "chain", c / "chain"));

    RunConfig snap = desk_config();
    snap.train.checkpoint_every = 5120;
    const fs::path snap_cfg = write_config("snap", snap);
    const auto e = kRoot / "e";
    REQUIRE(run("train --config " + snap_cfg.string() + " --seed 11 --threads 1 --out " + d.string()) == 0);
    REQUIRE(run("train --config " + snap_cfg.string() + " --seed 11 --threads 1 --halt-after 10000 --out " +
                e.string()) == 0);
    CHECK(fs::exists(e / "state" / "progress.json"));
    CHECK_FALSE(fs::exists(e / "chain"));
    REQUIRE(run("train --config " + snap_cfg.string() + " --seed 11 --threads 1 --resume --out " + e.string()) == 0);
    CHECK_FALSE(fs::exists(e / "state"));
    CHECK(same_tensors(d / "chain", e / "chain"));
    CHECK(same_tensors(d / "br", e / "br"));
    CHECK(same_tensors(a / "chain", d / "chain"));
    CHECK(slurp(d / "train_loss.csv") == slurp(e / "train_loss.csv"));
}

TEST_CASE_FIXTURE(Fixture, "adapt: zero samples keep the weights and record the parent") {
    const fs::path cfg = write_config("desk", desk_config());
    const auto base = kRoot / "a" / "chain";
    REQUIRE(fs::exists(base / "manifest.json"));
    const auto out = kRoot / "adapt0";
    REQUIRE(run("adapt --config " + cfg.string() + " --base " + base.string() + " --samples 0 --out " +
                out.string()) == 0);
    CHECK(same_tensors(base, out));
    const auto m = load_manifest(out);
    CHECK(m.at("parent") == fs::absolute(base).lexically_normal().string());
    CHECK(m.at("training").at("adapt_rho_range") == nlohmann::json::array({0.0, 1.0}));

    const auto out2 = kRoot / "adapt1";
    REQUIRE(run("adapt --config " + cfg.string() + " --base " + base.string() + " --samples 2048 --out " +
                out2.string()) == 0);
    CHECK_FALSE(same_tensors(base, out2));
    CHECK(fs::exists(out2 / "adapt_loss.csv"));

    RunConfig two = desk_config();
    two.train_distribution.num_sources = 2;
    two.evaluation.num_sources = 2;
    const fs::path bad = write_config("two", two);
    CHECK(run("adapt --config " + bad.string() + " --base " + base.string() + " --out " + (kRoot / "x").string()) ==
          kExitConfig);
}

TEST_CASE_FIXTURE(Fixture, "evaluate: report shape, refine switch, fixed scene, determinism") {
    const fs::path cfg = write_config("desk", desk_config());
    const auto ckpt = kRoot / "a";
    const std::string common = "evaluate --config " + cfg.string() + " --chain " + (ckpt / "chain").string() +
                               " --br " + (ckpt / "br").string() + " --threads 1 --seed 4";
    const auto on = kRoot / "eval_on", off = kRoot / "eval_off", again = kRoot / "eval_again";
    REQUIRE(run(common + " --out " + on.string()) == 0);
    REQUIRE(run(common + " --refine off --out " + off.string()) == 0);
    REQUIRE(run(common + " --out " + again.string()) == 0);

    CHECK(first_line(on / "rmspe.csv") ==
          "estimator,snr_db,n,rmspe,rmspe_trimmed_q,rmspe_refined,rmspe_refined_trimmed_q");
    CHECK(first_line(off / "rmspe.csv") == "estimator,snr_db,n,rmspe,rmspe_trimmed_q");
    CHECK(count_lines(on / "rmspe.csv") == 1 + 4 * 2);
    CHECK(fs::exists(on / "cdf_music_20.csv"));
    CHECK(fs::exists(on / "cdf_genie_ml-refined_0.csv"));
    CHECK_FALSE(fs::exists(off / "cdf_music-refined_20.csv"));
    CHECK(slurp(on / "rmspe.csv") == slurp(again / "rmspe.csv"));

    const auto j = nlohmann::json::parse(slurp(on / "report.json"));
    CHECK(j.at("run_config").at("seeds").at("evaluation") == 4);
    CHECK(j.at("points").size() == 2);
    nlohmann::json a = nlohmann::json::parse(slurp(again / "report.json"));
    a["run_config"]["out_dir"] = j["run_config"]["out_dir"];
    CHECK(a == j);

    const auto fixed = kRoot / "fixed";
    REQUIRE(run(common + " --scenario fixed --doas -135,0,60 --snr 20 --n 10 --out " + fixed.string()) == 0);
    CHECK(first_line(fixed / "br_spectrum.csv") == "sector,angle_deg,value");
    CHECK(count_lines(fixed / "br_spectrum.csv") == 73);
    CHECK(fs::exists(fixed / "music_spectrum.csv"));
    CHECK(nlohmann::json::parse(slurp(fixed / "fixed_scenario.json")).at("true_sectors") ==
          nlohmann::json::array({1, 13, 46}));

    CHECK(run("evaluate --config " + cfg.string() + " --chain " + (kRoot / "missing").string() + " --out " +
              (kRoot / "m").string()) == kExitConfig);

    const auto rep = kRoot / "report";
    REQUIRE(run("report " + on.string() + " " + off.string() + " --out " + rep.string()) == 0);
    CHECK(count_lines(rep / "summary.csv") == 1 + 2 * 4 * 2);
}

TEST_CASE_FIXTURE(Fixture, "refine subcommand writes a monotone trace") {
    const fs::path cfg = write_config("desk", desk_config());
    const auto out = kRoot / "refine";
    REQUIRE(run("refine --config " + cfg.string() + " --doas 33.3 --init 35 --snr 20 --out " + out.string()) == 0);
    std::ifstream in(out / "refine_trace.csv");
    std::string line;
    std::getline(in, line);
    double prev = std::numeric_limits<double>::infinity();
    int rows = 0;
    while (std::getline(in, line)) {
        const double v = std::stod(line.substr(line.find(',') + 1));
        CHECK(v <= prev);
        prev = v;
        ++rows;
    }
    CHECK(rows >= 2);
    const auto j = nlohmann::json::parse(slurp(out / "refine.json"));
    CHECK(j.at("refined_rmspe").get<double>() < j.at("initial_rmspe").get<double>());
}

TEST_CASE_FIXTURE(Fixture, "oracle and exit codes") {
    CHECK(run("oracle --instances 30 --gradient-cases 10 --no-sweep --out " + (kRoot / "o1").string()) == kExitOk);
    CHECK(run("oracle --instances 5 --gradient-cases 5 --no-sweep --corrupt-gradient --out " +
              (kRoot / "o2").string()) == kExitOracle);

    const auto bad = kRoot / "bad.json";
    std::ofstream(bad) << R"({"bogus": true})";
    CHECK(run("train --config " + bad.string() + " --out " + (kRoot / "b1").string()) == kExitConfig);
    std::ofstream(kRoot / "broken.json") << "{ not json";
    CHECK(run("train --config " + (kRoot / "broken.json").string()) == kExitConfig);
    CHECK(run("train --preset nope") == kExitConfig);
    CHECK(run("train --profile huge") == kExitConfig);
    CHECK(run("train --preset table1-paper --profile paper --out " + (kRoot / "p").string() +
              " --config " + bad.string()) == kExitConfig);

    RunConfig p = preset("table1-paper");
    p.train.optimizer.learning_rate = 1e-3;
    const fs::path altered = write_config("altered", p);
    CHECK(run("train --config " + altered.string() + " --out " + (kRoot / "p2").string()) == kExitConfig);

    // a NaN initial estimate cannot be refined
    CHECK(run("refine --doas 10 --init nan --out " + (kRoot / "r").string()) == kExitNumerical);
}
