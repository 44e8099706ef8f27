#include "covdet/container.hpp"

#include <doctest.h>
#include <json.hpp>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run
{
    int code;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p)
{
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path workdir()
{
    const fs::path dir = fs::temp_directory_path() / "covdet_test_cli";
    fs::create_directories(dir);
    return dir;
}

Run run(const std::string& args)
{
    const auto out = workdir() / "stdout.txt";
    const auto err = workdir() / "stderr.txt";
    const std::string cmd = std::string(COVDET_CLI) + " " + args + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

std::string write_config(const std::string& name, const std::string& body)
{
    const auto path = workdir() / name;
    std::ofstream(path) << body;
    return path.string();
}

const char* kSmall = R"({"system": {"N": 40, "L": 16, "M": 64}, "trials": 2, "master_seed": 5})";

std::string without_time(const std::string& csv)
{
    std::istringstream in(csv);
    std::string line, out;
    while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + '\n';
    return out;
}

} // namespace

TEST_CASE("usage errors exit with 1")
{
    CHECK(run("").code == 1);
    CHECK(run("frobnicate").code == 1);
    CHECK(run("solve --no-such-flag").code == 1);
    CHECK(run("simulate").code == 1);  // --out is required
    CHECK(run("solve --solver em").code == 1);
    CHECK(run("simulate --preset huge --out x.covd").code == 1);
    CHECK(run("--help").code == 0);

    const auto bad = write_config("bad.json", R"({"system": {"nodes": 3}})");
    const auto r = run("bench --config " + bad + " --quiet");
    CHECK(r.code == 1);
    CHECK(r.err.find("unknown key") != std::string::npos);
}

TEST_CASE("simulate writes a container and a gamma CSV")
{
    const auto cfg = write_config("small.json", kSmall);
    const auto inst = (workdir() / "inst.covd").string();
    const auto gamma = (workdir() / "gamma.csv").string();
    const auto r = run("simulate --config " + cfg + " --out " + inst + " --gamma-csv " + gamma);
    REQUIRE(r.code == 0);
    const auto summary = json::parse(r.out);
    CHECK(summary.at("N") == 40);
    CHECK(summary.at("active") == 4);

    const auto file = covdet::read_instance(inst);
    CHECK(file.N == 40);
    CHECK(file.L == 16);
    CHECK(file.M == 64);
    CHECK(file.true_support().size() == 4);
    const auto csv = slurp(gamma);
    CHECK(csv.rfind("device,sequence,gamma\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 81);

    CHECK(run("simulate --config " + cfg + " --out " + inst + " --sweep-index 3").code == 1);
    CHECK(run("simulate --config " + cfg + " --out " + (workdir() / "no" / "dir.covd").string()).code == 3);
}

TEST_CASE("solve prints a certified JSON result for every solver")
{
    const auto cfg = write_config("small.json", kSmall);
    const auto inst = (workdir() / "inst.covd").string();
    REQUIRE(run("simulate --config " + cfg + " --out " + inst).code == 0);
    for (const char* solver : {"active_set_pg", "coordinate_descent", "ideal_pg", "ideal_cd"}) {
        CAPTURE(solver);
        const auto r = run("solve --config " + cfg + " --instance " + inst + " --solver " + solver);
        REQUIRE(r.code == 0);
        const auto doc = json::parse(r.out);
        CHECK(doc.at("solver") == solver);
        CHECK(doc.at("converged") == true);
        CHECK(doc.at("certified_kkt").get<double>() < 1e-3);
        CHECK(doc.contains("detection"));
        for (const auto& g : doc.at("gamma")) CHECK(g.at("gamma").get<double>() > 0);
    }
}

TEST_CASE("solve without an instance generates one from the config")
{
    const auto cfg = write_config("small.json", kSmall);
    const auto r = run("solve --config " + cfg + " --seed 9");
    REQUIRE(r.code == 0);
    CHECK(json::parse(r.out).at("solver") == "active_set_pg");
}

TEST_CASE("solve trace goes to stderr as CSV")
{
    const auto cfg = write_config("small.json", kSmall);
    const auto r = run("solve --config " + cfg + " --solver as_pg --trace");
    REQUIRE(r.code == 0);
    CHECK(r.err.rfind("k,active_size,objective,kkt,elapsed\n", 0) == 0);
    const auto doc = json::parse(r.out);
    const auto rows = std::count(r.err.begin(), r.err.end(), '\n') - 1;
    CHECK(rows == doc.at("outer_iters").get<long>() + 1);
}

TEST_CASE("solve exits with 2 when the solver does not converge")
{
    const auto cfg = write_config(
        "starved.json",
        R"({"system": {"N": 40, "L": 16, "M": 64}, "schedule": {"max_outer": 1}, "pg": {"max_inner": 1}, "cd": {"max_sweeps": 1}})");
    const auto as = run("solve --config " + cfg + " --solver active_set_pg");
    CHECK(as.code == 2);
    CHECK(json::parse(as.out).at("converged") == false);
    CHECK(run("solve --config " + cfg + " --solver cd").code == 2);
}

TEST_CASE("solve reports unreadable instances with 3")
{
    CHECK(run("solve --instance " + (workdir() / "missing.covd").string()).code == 3);
    const auto junk = workdir() / "junk.covd";
    std::ofstream(junk) << "COVD2 not a container";
    CHECK(run("solve --instance " + junk.string()).code == 3);
}

TEST_CASE("bench writes per-trial, aggregate and JSON results")
{
    const auto cfg = write_config("small.json", kSmall);
    const auto csv = workdir() / "bench.csv";
    const auto agg = workdir() / "agg.csv";
    const auto js = workdir() / "bench.json";
    const auto r = run("bench --config " + cfg + " --trials 3 --solver cd --solver ideal_pg --csv " + csv.string() +
                       " --aggregate " + agg.string() + " --json " + js.string() + " --quiet");
    REQUIRE(r.code == 0);
    const auto rows = slurp(csv);
    CHECK(std::count(rows.begin(), rows.end(), '\n') == 1 + 3 * 2);
    CHECK(rows.find("coordinate_descent") != std::string::npos);
    CHECK(rows.find("active_set_pg") == std::string::npos);
    const auto aggs = slurp(agg);
    CHECK(std::count(aggs.begin(), aggs.end(), '\n') == 1 + 2);
    const auto doc = json::parse(slurp(js));
    CHECK(doc.at("trials").size() == 6);
}

TEST_CASE("bench is reproducible for a fixed seed")
{
    const auto cfg = write_config("small.json", kSmall);
    const auto a = workdir() / "a.csv";
    const auto b = workdir() / "b.csv";
    const auto c = workdir() / "c.csv";
    REQUIRE(run("bench --config " + cfg + " --sequential --seed 11 --csv " + a.string() + " --quiet").code == 0);
    REQUIRE(run("bench --config " + cfg + " --sequential --seed 11 --csv " + b.string() + " --quiet").code == 0);
    REQUIRE(run("bench --config " + cfg + " --sequential --seed 12 --csv " + c.string() + " --quiet").code == 0);
    CHECK(without_time(slurp(a)) == without_time(slurp(b)));
    CHECK(without_time(slurp(a)) != without_time(slurp(c)));
}

TEST_CASE("validate runs the oracle suites")
{
    const auto r = run("validate --seed 3 --gradient-instances 10 --coordinates 20");
    REQUIRE(r.code == 0);
    const auto doc = json::parse(r.out);
    CHECK(doc.at("gradient_fd").at("checked") == 10);
    CHECK(doc.at("gradient_fd").at("pass") == true);
    CHECK(doc.at("cd_closed_form").at("checked") == 20);
    CHECK(doc.at("cd_closed_form").at("pass") == true);
}
