#include "jsqlab/cli.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace jsq::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("jsqlab_cli_test_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

struct Run {
    int status;
    std::string out, err;
};

Run invoke(std::vector<std::string> args) {
    args.insert(args.begin(), "jsqlab");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int status = run(static_cast<int>(argv.size()), argv.data(), out, err);
    return {status, out.str(), err.str()};
}

}  // namespace

TEST_CASE("empty config file gives the defaults") {
    const auto dir = scratch("empty");
    fs::create_directories(dir);
    std::ofstream(dir / "empty.cfg") << "";
    const auto c = load_config((dir / "empty.cfg").string(), "couple");
    const auto d = default_config("couple");
    CHECK(c.n == d.n);
    CHECK(c.b == d.b);
    CHECK(c.beta == d.beta);
    CHECK(c.reps == d.reps);
    CHECK(c.seed == d.seed);
    CHECK(c.functions == d.functions);
    CHECK(c.settings.empty());
    CHECK(c.warnings.empty());
    CHECK(default_config("rate").ladder == std::vector<int>{25, 100, 400});
}

TEST_CASE("sections, comments and bare keys") {
    auto c = default_config("rate");
    parse_config_text(c,
                      "# ladder\n"
                      "[model]\n"
                      "n = 25, 100, 400   ; three points\n"
                      "beta = 1.5\n"
                      "\n"
                      "[simulation]\n"
                      "dt = 5e-3\n"
                      "scheme = bridge\n"
                      "epsilon = false\n"
                      "[output]\n"
                      "dir = somewhere\n");
    validate(c);
    CHECK(c.ladder == std::vector<int>{25, 100, 400});
    CHECK(c.beta == 1.5);
    CHECK(c.dt == 5e-3);
    CHECK(c.scheme == "bridge");
    CHECK_FALSE(c.epsilon);
    CHECK(c.output_dir == "somewhere");
    CHECK(c.settings.at("model.beta") == "1.5");

    auto d = default_config("ruin");
    parse_config_text(d, "p = 0.6\nq=0.4\n[ruin]\nz = 3\n");
    CHECK(d.ruin_p == 0.6);
    CHECK(d.ruin_z == 3);
}

TEST_CASE("parse errors carry the line") {
    auto c = default_config("solve");
    try {
        parse_config_text(c, "n = 10\n\nbeta = abc\n", "x.cfg");
        FAIL("no error");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("x.cfg:3:") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_config_text(c, "[model\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text(c, "no equals sign\n"), ConfigError);
    CHECK_THROWS_AS(parse_config_text(c, "[model]\nwidth = 3\n"), ConfigError);
    CHECK_THROWS_AS(load_config("/nonexistent/file.cfg"), ConfigError);
}

TEST_CASE("validation") {
    auto c = default_config("solve");
    apply_setting(c, "n", "4");
    apply_setting(c, "beta", "2");
    CHECK_THROWS_AS(validate(c), ConfigError);
    apply_setting(c, "beta", "1.99");
    CHECK_NOTHROW(validate(c));

    auto r = default_config("rate");
    apply_setting(r, "n", "25,100");
    validate(r);
    REQUIRE(r.warnings.size() == 1);
    CHECK(r.warnings[0].find("slope fit degenerate") != std::string::npos);

    auto s = default_config("solve");
    apply_setting(s, "n", "25,100");
    CHECK_THROWS_AS(validate(s), ConfigError);

    auto h = default_config("poisson");
    apply_setting(h, "h", "x1,nope");
    CHECK_THROWS_AS(validate(h), ConfigError);

    auto t = default_config("diffuse");
    apply_setting(t, "T", "5");
    CHECK_THROWS_AS(validate(t), ConfigError);  // burn-in 10 exceeds T
    CHECK_THROWS_AS(default_config("nope"), ConfigError);
}

TEST_CASE("sha256") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST_CASE("ruin command") {
    const auto dir = scratch("ruin");
    const auto r = invoke({"ruin", "--p", "0.6", "--q", "0.4", "--z", "1", "--a", "2", "--out", dir.string()});
    CHECK(r.status == 0);
    CHECK(r.out.find("ruin probability 0.4") != std::string::npos);
    const auto csv = slurp(dir / "ruin.csv");
    CHECK(csv.rfind("quantity,closed_form,oracle\n", 0) == 0);
    CHECK(csv.find("ruin_probability,0.4") != std::string::npos);
}

TEST_CASE("flags override the config file") {
    const auto dir = scratch("override");
    fs::create_directories(dir);
    std::ofstream(dir / "run.cfg") << "[ruin]\np = 0.5\nq = 0.5\nz = 1\na = 4\n";
    const auto r = invoke({"ruin", "--config", (dir / "run.cfg").string(), "--a", "2", "--out", (dir / "o").string()});
    CHECK(r.status == 0);
    CHECK(r.out.find("ruin probability 0.5") != std::string::npos);
    const auto m = nlohmann::json::parse(slurp(dir / "o" / "manifest.json"));
    CHECK(m["config"]["ruin"]["a"] == 2);
}

TEST_CASE("manifest lists every output with its hash, and runs are deterministic") {
    const auto a = scratch("det_a"), b = scratch("det_b");
    const std::vector<std::string> common = {"couple", "--n", "2", "--beta", "0.5", "--reps", "300", "--seed", "5"};
    auto args_a = common, args_b = common;
    args_a.insert(args_a.end(), {"--out", a.string()});
    args_b.insert(args_b.end(), {"--out", b.string()});
    REQUIRE(invoke(args_a).status == 0);
    REQUIRE(invoke(args_b).status == 0);
    const auto m = nlohmann::json::parse(slurp(a / "manifest.json"));
    REQUIRE(m["outputs"].size() == 2);
    for (const auto& f : m["outputs"]) {
        const std::string name = f["file"];
        const auto content = slurp(a / name);
        CHECK(f["sha256"] == sha256_hex(content));
        CHECK(f["bytes"] == content.size());
        CHECK(content == slurp(b / name));
    }
    CHECK(m["seed"] == 5);
    CHECK(m["command"] == "couple");
    CHECK(m["versions"].contains("compiler"));
}

TEST_CASE("output directory from the environment") {
    const auto dir = scratch("env");
    ::setenv(kOutputDirEnv, dir.string().c_str(), 1);
    CHECK(default_output_dir() == dir.string());
    const auto r = invoke({"spline-check"});
    ::unsetenv(kOutputDirEnv);
    CHECK(r.status == 0);
    CHECK(fs::exists(dir / "spline_check.csv"));
    CHECK(fs::exists(dir / "manifest.json"));
    CHECK(default_output_dir() == "jsqlab_out");
}

TEST_CASE("usage and validation errors") {
    CHECK(invoke({}).status == 2);
    CHECK(invoke({"bogus"}).status == 2);
    const auto r = invoke({"solve", "--n", "4", "--beta", "2", "--out", scratch("bad").string()});
    CHECK(r.status == 2);
    CHECK(r.err.find("sqrt(n)") != std::string::npos);
    CHECK(invoke({"solve", "--n", "ten"}).status == 2);
    CHECK(invoke({"solve", "--reps", "5"}).status == 2);  // not a solve flag
}

TEST_CASE("lyapunov outside the regime") {
    const auto dir = scratch("lyap");
    const auto r = invoke({"lyapunov", "--n", "400", "--beta", "2", "--out", dir.string()});
    CHECK(r.status == 4);
    CHECK(r.err.find("kappa2") != std::string::npos);
    CHECK(fs::exists(dir / "lyapunov_pde.csv"));
    const auto ok = invoke({"lyapunov", "--n", "900", "--beta", "2", "--per-axis", "6", "--out", dir.string()});
    CHECK(ok.status == 0);
    CHECK(slurp(dir / "lyapunov.csv").rfind("q1,q2,GXV,bound_rhs,margin\n", 0) == 0);
}

TEST_CASE("small solve and rate runs") {
    const auto dir = scratch("solve");
    CHECK(invoke({"solve", "--n", "10", "--out", dir.string()}).status == 0);
    CHECK(fs::exists(dir / "solve_pi.csv"));
    const auto r = invoke({"rate", "--n", "25,36,49", "--T", "300", "--functions", "x1+x2", "--epsilon", "0",
                           "--out", dir.string()});
    CHECK((r.status == 0 || r.status == 3));
    CHECK(r.out.find("pooled slope") != std::string::npos);
    CHECK(fs::exists(dir / "rate_cells.csv"));
}
