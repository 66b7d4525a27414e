#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const std::string kCli = RAILMATCH_CLI_PATH;

struct RunResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

RunResult run(const std::string& args, const std::string& env = "") {
    static int counter = 0;
    const auto dir = fs::temp_directory_path() / "railmatch_cli_io";
    fs::create_directories(dir);
    const std::string out_path = (dir / ("out" + std::to_string(counter) + ".txt")).string();
    const std::string err_path = (dir / ("err" + std::to_string(counter) + ".txt")).string();
    ++counter;
    const std::string cmd =
        env + " " + kCli + " " + args + " >" + out_path + " 2>" + err_path;
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    auto slurp = [](const std::string& p) {
        std::ifstream f(p);
        std::ostringstream ss;
        ss << f.rdbuf();
        return ss.str();
    };
    r.out = slurp(out_path);
    r.err = slurp(err_path);
    return r;
}

std::string slurp_file(const fs::path& p) {
    std::ifstream f(p);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

} // namespace

TEST_CASE("unknown subcommand fails with usage text") {
    RunResult r = run("frobnicate");
    CHECK(r.exit_code != 0);
    CHECK((r.err.find("Usage") != std::string::npos ||
           r.err.find("subcommand") != std::string::npos));
}

TEST_CASE("no subcommand fails") {
    RunResult r = run("");
    CHECK(r.exit_code != 0);
}

TEST_CASE("gen writes a manifest and reports split sizes") {
    TempDir dir("railmatch_cli_gen");
    RunResult r = run("gen --out " + (dir.path / "data").string() + " --n 12 --seed 5");
    REQUIRE(r.exit_code == 0);
    json j = json::parse(r.out);
    CHECK(j.at("n_samples") == 12);
    CHECK(fs::exists(dir.path / "data" / "manifest.jsonl"));
    CHECK(j.at("train").get<int>() + j.at("val").get<int>() + j.at("test").get<int>() == 12);
}

TEST_CASE("RAILMATCH_SEED overrides the flag seed") {
    TempDir dir("railmatch_cli_envseed");
    RunResult a = run("gen --out " + (dir.path / "a").string() + " --n 6 --seed 1",
                      "RAILMATCH_SEED=42");
    RunResult b = run("gen --out " + (dir.path / "b").string() + " --n 6 --seed 2",
                      "RAILMATCH_SEED=42");
    REQUIRE(a.exit_code == 0);
    REQUIRE(b.exit_code == 0);
    CHECK(json::parse(a.out).at("master_seed") == 42);
    CHECK(slurp_file(dir.path / "a" / "manifest.jsonl") ==
          slurp_file(dir.path / "b" / "manifest.jsonl"));
}

TEST_CASE("match on identical profiles returns a zero displacement") {
    TempDir dir("railmatch_cli_match");
    RunResult g = run("gen --out " + (dir.path / "data").string() + " --n 2 --seed 7");
    REQUIRE(g.exit_code == 0);
    const std::string designed = (dir.path / "data" / "profiles" / "s000000_designed.csv").string();
    RunResult r = run("match --method icp --designed " + designed + " --measured " + designed);
    REQUIRE(r.exit_code == 0);
    json j = json::parse(r.out);
    CHECK(std::abs(j.at("dx_mm").get<double>()) < 1e-6);
    CHECK(std::abs(j.at("dy_mm").get<double>()) < 1e-6);
}

TEST_CASE("match --wear appends a wear report") {
    TempDir dir("railmatch_cli_wear");
    RunResult g = run("gen --out " + (dir.path / "data").string() + " --n 2 --seed 8");
    REQUIRE(g.exit_code == 0);
    const auto profiles = dir.path / "data" / "profiles";
    RunResult r = run("match --method icp --wear --designed " +
                      (profiles / "s000000_designed.csv").string() + " --measured " +
                      (profiles / "s000000_measured.csv").string());
    REQUIRE(r.exit_code == 0);
    json j = json::parse(r.out);
    REQUIRE(j.contains("wear"));
    CHECK(j.at("wear").contains("vertical_wear_mm"));
    CHECK(j.at("wear").contains("side_wear_mm"));
}

TEST_CASE("missing input file fails with a diagnostic") {
    RunResult r = run("match --method icp --designed /nonexistent/a.csv --measured /nonexistent/b.csv");
    CHECK(r.exit_code != 0);
    CHECK(r.err.find("error") != std::string::npos);
}

TEST_CASE("render --check emits stable digests across runs") {
    TempDir dir("railmatch_cli_render");
    RunResult g = run("gen --out " + (dir.path / "data").string() + " --n 4 --seed 9");
    REQUIRE(g.exit_code == 0);
    const std::string base = "render --manifest " + (dir.path / "data" / "manifest.jsonl").string() +
                             " --data " + (dir.path / "data").string() +
                             " --mode single --check --width-px 256 --height-px 256 "
                             "--mm-per-px 0.6 --resize-to 0";
    RunResult a = run(base + " --out " + (dir.path / "imgs_a").string());
    RunResult b = run(base + " --out " + (dir.path / "imgs_b").string());
    REQUIRE(a.exit_code == 0);
    REQUIRE(b.exit_code == 0);
    CHECK(json::parse(a.out).at("samples") == json::parse(b.out).at("samples"));
    CHECK(fs::exists(dir.path / "imgs_a" / "s000000.png"));
}

TEST_CASE("gen, train, eval and plot pipeline is deterministic") {
    TempDir dir("railmatch_cli_pipeline");
    RunResult g = run("gen --out " + (dir.path / "data").string() + " --n 24 --seed 11");
    REQUIRE(g.exit_code == 0);

    const std::string manifest = (dir.path / "data" / "manifest.jsonl").string();
    const std::string data = (dir.path / "data").string();
    const std::string train_cmd =
        "train --manifest " + manifest + " --data " + data +
        " --preset tiny --epochs 2 --batch-size 8 --lr 1e-3 --seed 3"
        " --width-px 256 --height-px 256 --mm-per-px 0.6 --resize-to 64 --out ";
    RunResult t1 = run(train_cmd + (dir.path / "a.ckpt").string());
    RunResult t2 = run(train_cmd + (dir.path / "b.ckpt").string());
    REQUIRE(t1.exit_code == 0);
    REQUIRE(t2.exit_code == 0);
    CHECK(json::parse(t1.out).at("best_val_mse") == json::parse(t2.out).at("best_val_mse"));
    CHECK(fs::exists(dir.path / "a.ckpt"));
    CHECK(fs::exists(dir.path / "a.ckpt.json"));
    CHECK(fs::exists(dir.path / "a.ckpt.history.csv"));

    const std::string eval_cmd = "eval --manifest " + manifest + " --data " + data +
                                 " --method checkpoint --checkpoint " +
                                 (dir.path / "a.ckpt").string() + " --split val --out ";
    RunResult e1 = run(eval_cmd + (dir.path / "r1.json").string());
    RunResult e2 = run(eval_cmd + (dir.path / "r2.json").string());
    REQUIRE(e1.exit_code == 0);
    CHECK(e1.out == e2.out);

    RunResult p = run("plot --report " + (dir.path / "r1.json").string() + " --out-csv " +
                      (dir.path / "errs.csv").string() + " --out-svg " +
                      (dir.path / "errs.svg").string());
    REQUIRE(p.exit_code == 0);
    CHECK(fs::exists(dir.path / "errs.csv"));
    CHECK(fs::exists(dir.path / "errs.svg"));
}

TEST_CASE("ensemble subcommand evaluates a spec file") {
    TempDir dir("railmatch_cli_ensemble");
    RunResult g = run("gen --out " + (dir.path / "data").string() + " --n 16 --seed 13");
    REQUIRE(g.exit_code == 0);
    const std::string manifest = (dir.path / "data" / "manifest.jsonl").string();
    const std::string data = (dir.path / "data").string();
    const std::string train_cmd =
        "train --manifest " + manifest + " --data " + data +
        " --preset tiny --epochs 1 --batch-size 8 --lr 1e-3"
        " --width-px 256 --height-px 256 --mm-per-px 0.6 --resize-to 64 --out ";
    RunResult t1 = run(train_cmd + (dir.path / "m0.ckpt").string() + " --seed 1");
    RunResult t2 = run(train_cmd + (dir.path / "m1.ckpt").string() + " --seed 2");
    REQUIRE(t1.exit_code == 0);
    REQUIRE(t2.exit_code == 0);

    {
        std::ofstream f(dir.path / "spec.json");
        f << json{{"members",
                   {(dir.path / "m0.ckpt").string(), (dir.path / "m1.ckpt").string()}},
                  {"weights", {0.5, 0.5}}}
                 .dump();
    }
    RunResult e = run("ensemble --manifest " + manifest + " --data " + data + " --spec " +
                      (dir.path / "spec.json").string() + " --split val");
    REQUIRE(e.exit_code == 0);
    json j = json::parse(e.out);
    CHECK(j.contains("accuracy"));
    CHECK(j.at("samples").size() > 0);
}
