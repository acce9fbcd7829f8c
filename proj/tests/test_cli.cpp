#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ngc/report.hpp"
#include "ngc/theory.hpp"

using namespace ngc;
namespace fs = std::filesystem;

namespace {

fs::path scratch_root() {
    static fs::path dir = [] {
        auto d = fs::temp_directory_path() / "ngc_cli_tests";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

fs::path fresh_dir(const char* name) {
    auto dir = scratch_root() / name;
    fs::remove_all(dir);
    return dir;
}

std::string slurp(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct CliResult {
    int code = -1;
    std::string out, err;
};

CliResult run_cli(const std::string& args, const std::string& env = "") {
    static int counter = 0;
    fs::path out = scratch_root() / ("stdout_" + std::to_string(counter));
    fs::path err = scratch_root() / ("stderr_" + std::to_string(counter));
    ++counter;
    std::string cmd = (env.empty() ? "" : env + " ") + std::string(NGC_CLI_PATH) + " " + args +
                      " >" + out.string() + " 2>" + err.string();
    int rc = std::system(cmd.c_str());
    REQUIRE(WIFEXITED(rc));
    return {WEXITSTATUS(rc), slurp(out), slurp(err)};
}

// The CLI's own CSV formatting, frozen here so a change in either place trips.
std::string fmt_full(double v) {
    char b[40];
    std::snprintf(b, sizeof b, "%.17g", v);
    return b;
}

const char* kSimHeader = "p,C,N,analytic_pe_plus,empirical_acc,ci_low,ci_high,bound_printed,bound_mu2";

std::string sim_row(double p, uint32_t C, uint32_t N, const SimResult& r) {
    return fmt_full(p) + "," + std::to_string(C) + "," + std::to_string(N) + "," +
           fmt_full(r.pe_plus) + "," + fmt_full(r.accuracy) + "," + fmt_full(r.ci.low) + "," +
           fmt_full(r.ci.high) + "," + fmt_full(r.bound_printed) + "," + fmt_full(r.bound_mu2) +
           "\n";
}

std::vector<std::vector<std::string>> tokenize_lines(const std::string& text) {
    std::vector<std::vector<std::string>> lines;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        std::vector<std::string> toks;
        std::stringstream ls(line);
        std::string t;
        while (ls >> t) toks.push_back(t);
        lines.push_back(std::move(toks));
    }
    return lines;
}

}  // namespace

// --------------------------------------------------------------------------
// report module (the layer the CLI's report/evaluate output rides on)

TEST_CASE("report csv round-trips doubles exactly") {
    fs::path dir = scratch_root() / "csv";
    fs::create_directories(dir);
    std::vector<report::Row> rows = {
        {0, "depth", "rgb->depth", "l1", 1.0 / 3.0},
        {1, "depth", "ensemble", "l1", 1e-17},
        {2, "pose", "-", "l2", 123456.78901234567},
        {3, "seg", "prefix_2", "accuracy", 4.9406564584124654e-324},
        {4, "wire", "rgb->wire", "error_rate", 0.0},
    };
    report::write_csv(dir / "r.csv", rows);

    std::string raw = slurp(dir / "r.csv");
    CHECK(raw.rfind("iteration,node,edge,metric,value\n", 0) == 0);

    std::vector<report::Row> back = report::read_csv(dir / "r.csv");
    REQUIRE(back.size() == rows.size());
    for (size_t i = 0; i < rows.size(); ++i) {
        CHECK(back[i].iteration == rows[i].iteration);
        CHECK(back[i].node == rows[i].node);
        CHECK(back[i].edge == rows[i].edge);
        CHECK(back[i].metric == rows[i].metric);
        CHECK(back[i].value == rows[i].value);  // bit-exact through %.17g
    }

    std::ofstream bad(dir / "bad.csv");
    bad << "wrong,header\n";
    bad.close();
    CHECK_THROWS_AS(report::read_csv(dir / "bad.csv"), std::runtime_error);
    CHECK_THROWS_AS(report::read_csv(dir / "absent.csv"), std::runtime_error);
}

TEST_CASE("summary table renders one row per node metric with 6-digit cells") {
    std::vector<report::Row> rows = {
        {0, "depth", "rgb->depth", "l1", 3.0},
        {1, "depth", "ensemble", "l1", 2.5},
        {1, "depth", "rgb->depth", "l1", 2.75},
        {0, "seg", "rgb->seg", "accuracy", 0.5},
    };
    auto summary = report::build_summary(rows);
    CHECK(summary["iterations"] == std::vector<int>{0, 1});

    std::string text = report::render_text(summary);
    auto lines = tokenize_lines(text);
    REQUIRE(lines.size() == 3);
    CHECK(lines[0] == std::vector<std::string>{"node", "metric", "iter0", "edge", "iter1", "ngc",
                                               "iter1", "edge"});
    CHECK(lines[1] == std::vector<std::string>{"depth", "l1", "3", "2.5", "2.75"});
    // no generation-1 rows for seg: the table shows gaps, not zeros
    CHECK(lines[2] == std::vector<std::string>{"seg", "accuracy", "0.5", "-", "-"});

    // no trailing whitespace on any rendered line
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        REQUIRE(!line.empty());
        CHECK(line.back() != ' ');
    }

    // summary json survives disk exactly
    fs::path dir = scratch_root() / "summary";
    fs::create_directories(dir);
    report::write_summary(dir / "summary.json", summary);
    CHECK(report::read_summary(dir / "summary.json") == summary);

    CHECK_THROWS_AS(report::render_run(dir, false), std::invalid_argument);  // no reports/ here
}

// --------------------------------------------------------------------------
// argument handling

TEST_CASE("help prints and bad invocations exit 1") {
    CliResult help = run_cli("--help");
    CHECK(help.code == 0);
    CHECK(help.out.find("Exit codes") != std::string::npos);

    CliResult sub = run_cli("sim-ensemble --help");
    CHECK(sub.code == 0);
    CHECK(sub.out.find("--trials") != std::string::npos);

    CHECK(run_cli("").code == 1);                        // a subcommand is required
    CHECK(run_cli("no-such-command").code == 1);
    CHECK(run_cli("sim-ensemble --bogus 3").code == 1);
    CHECK(run_cli("build-graph --run only").code == 1);  // --data is required

    CliResult bad = run_cli("sim-ensemble --p 1.5");
    CHECK(bad.code == 1);
    CHECK(bad.err.find("error:") != std::string::npos);
}

// --------------------------------------------------------------------------
// simulator subcommands

TEST_CASE("sim-ensemble emits exactly the library's numbers") {
    EnsembleSimConfig cfg{0.7, 10, 15, 4000, 9, 2};
    SimResult r = simulate_ensemble(cfg);
    std::string expected = std::string(kSimHeader) + "\n" + sim_row(0.7, 10, 15, r);

    CliResult res = run_cli("sim-ensemble --p 0.7 --classes 10 --paths 15 --trials 4000 --seed 9");
    CHECK(res.code == 0);
    CHECK(res.out == expected);

    // --out routes the same bytes to a file and keeps stdout quiet
    fs::path out = scratch_root() / "sim.csv";
    CliResult filed = run_cli("sim-ensemble --p 0.7 --classes 10 --paths 15 --trials 4000 "
                              "--seed 9 --out " + out.string());
    CHECK(filed.code == 0);
    CHECK(filed.out.empty());
    CHECK(slurp(out) == expected);

    // worker count must never change the numbers
    CliResult t1 = run_cli("sim-ensemble --p 0.8 --classes 5 --paths 7 --trials 6000 --seed 2",
                           "NGC_THREADS=1");
    CliResult t4 = run_cli("sim-ensemble --p 0.8 --classes 5 --paths 7 --trials 6000 --seed 2",
                           "NGC_THREADS=4");
    CHECK(t1.code == 0);
    CHECK(t1.out == t4.out);

    // below chance the bounds are undefined and print as nan
    CliResult below = run_cli("sim-ensemble --p 0.05 --classes 10 --trials 200 --seed 1");
    CHECK(below.code == 0);
    EnsembleSimConfig bcfg{0.05, 10, 1, 200, 1, 2};
    CHECK(below.out == std::string(kSimHeader) + "\n" + sim_row(0.05, 10, 1, simulate_ensemble(bcfg)));
    CHECK(below.out.find("nan") != std::string::npos);
}

TEST_CASE("sim-generations walks the recurrence row by row") {
    GenerationSimConfig cfg;
    cfg.p0 = 0.6;
    cfg.r = 0.25;
    cfg.generations = 5;
    cfg.Ns = {15};
    cfg.C = 100;
    cfg.trials = 3000;
    cfg.seed = 3;
    auto points = simulate_generations(cfg);
    REQUIRE(points.size() == 5);

    std::string expected = std::string(kSimHeader) + "\n";
    for (const auto& pt : points) {
        SimResult like;
        like.pe_plus = pe_plus(pt.p, cfg.C);
        like.accuracy = pt.teacher_acc;
        like.ci = pt.ci;
        like.bound_printed = chebyshev_bound(pt.p, cfg.C, 15, ChebyshevVariant::AsPrinted);
        like.bound_mu2 = chebyshev_bound(pt.p, cfg.C, 15, ChebyshevVariant::MuSquared);
        expected += sim_row(pt.p, cfg.C, 15, like);
    }

    CliResult res = run_cli("sim-generations --p0 0.6 --recovery 0.25 --generations 5 "
                            "--paths 15 --classes 100 --trials 3000 --seed 3");
    CHECK(res.code == 0);
    CHECK(res.out == expected);

    // the CSV itself carries the recurrence: p_{k+1} = p_k + r (T_k - p_k)
    auto lines = tokenize_lines(res.out);
    REQUIRE(lines.size() == 6);
    std::vector<double> p, teacher;
    for (size_t i = 1; i < lines.size(); ++i) {
        std::stringstream ls(lines[i][0]);
        std::string f;
        std::getline(ls, f, ',');
        p.push_back(std::stod(f));
        for (int skip = 0; skip < 3; ++skip) std::getline(ls, f, ',');  // C, N, analytic
        std::getline(ls, f, ',');
        teacher.push_back(std::stod(f));
    }
    CHECK(p[0] == 0.6);
    for (size_t k = 0; k + 1 < p.size(); ++k)
        CHECK(p[k + 1] == doctest::Approx(p[k] + 0.25 * (teacher[k] - p[k])).epsilon(1e-15));

    CHECK(run_cli("sim-generations --paths 1,2 --generations 5").code == 1);
    CHECK(run_cli("sim-generations --paths 1x5").code == 1);
}

TEST_CASE("sim-classes sweeps C and matches the single-C simulator") {
    auto results = sweep_classes(0.6, 9, {10, 100}, 3000, 5);
    REQUIRE(results.size() == 2);
    std::string expected = std::string(kSimHeader) + "\n" + sim_row(0.6, 10, 9, results[0]) +
                           sim_row(0.6, 100, 9, results[1]);

    CliResult res = run_cli("sim-classes --p 0.6 --paths 9 --classes 10,100 --trials 3000 --seed 5");
    CHECK(res.code == 0);
    CHECK(res.out == expected);

    // a one-element sweep is the plain ensemble simulation, byte for byte
    CliResult single = run_cli("sim-classes --p 0.6 --paths 9 --classes 10 --trials 3000 --seed 5");
    CliResult direct =
        run_cli("sim-ensemble --p 0.6 --paths 9 --classes 10 --trials 3000 --seed 5");
    CHECK(single.code == 0);
    CHECK(single.out == direct.out);

    CHECK(run_cli("sim-classes --classes ''").code == 1);
}

// --------------------------------------------------------------------------
// pipeline subcommands on a tiny world

TEST_CASE("pipeline subcommands drive a run directory end to end") {
    fs::path data = fresh_dir("data");
    fs::path run = fresh_dir("run");

    CliResult gw = run_cli("gen-world --out " + data.string() +
                           " --seed 4242 --height 12 --width 12 --classes 6 --counts 6,3,4,4,3");
    CHECK(gw.code == 0);
    CHECK(gw.out.find("dataset written") != std::string::npos);
    CHECK(fs::exists(data / "manifest.json"));

    // an existing dataset is never overwritten
    CliResult again = run_cli("gen-world --out " + data.string() + " --counts 6,3,4,4,3");
    CHECK(again.code == 2);
    CHECK(again.err.find("already exists") != std::string::npos);
    CHECK(run_cli("gen-world --out " + fresh_dir("d2").string() + " --counts 1,2,3").code == 1);

    std::string at = " --run " + run.string() + " --data " + data.string();
    CliResult pre = run_cli("pretrain" + at + " --seed 11 --iterations 1 --samples 24");
    CHECK(pre.code == 0);
    CHECK(pre.out.find("pretrained 31 edges") != std::string::npos);
    CHECK(fs::exists(run / "reports" / "pretrain.csv"));

    // same directory, different settings: refused rather than mixed
    CliResult clash = run_cli("pretrain" + at + " --seed 12 --iterations 1 --samples 24");
    CHECK(clash.code == 1);
    CHECK(clash.err.find("different config") != std::string::npos);

    CliResult bg = run_cli("build-graph" + at);
    CHECK(bg.code == 0);
    CHECK(bg.out.find("kept") != std::string::npos);
    CHECK(fs::exists(run / "topology.json"));

    CliResult it = run_cli("iterate" + at + " --round 1");
    CHECK(it.code == 0);
    CHECK(it.out.find("dispersion") != std::string::npos);
    CHECK(fs::exists(run / "reports" / "iteration_1.csv"));

    CliResult e0 = run_cli("evaluate" + at + " --generation 0");
    CHECK(e0.code == 0);
    CHECK(e0.out.find("rgb->depth") != std::string::npos);
    CliResult e1 = run_cli("evaluate" + at);  // defaults to the latest complete generation
    CHECK(e1.code == 0);
    CHECK(e1.out.find("ensemble") != std::string::npos);
    CHECK(fs::exists(run / "reports" / "eval_gen1.csv"));

    // the rendered report is exactly the library rendering of summary.json
    CliResult rep = run_cli("report --run " + run.string());
    CHECK(rep.code == 0);
    CHECK(rep.out == report::render_run(run, false));
    CliResult repj = run_cli("report --run " + run.string() + " --json");
    CHECK(repj.code == 0);
    CHECK(repj.out == report::render_run(run, true));

    // text and json carry the same values, text rounded to 6 significant digits
    auto summary = report::read_summary(run / "reports" / "summary.json");
    for (const auto& row : summary.at("rows"))
        for (const auto& [it_key, preds] : row.at("values").items())
            for (const auto& [pred, val] : preds.items()) {
                char cell[40];
                std::snprintf(cell, sizeof cell, "%.6g", val.get<double>());
                CHECK(rep.out.find(cell) != std::string::npos);
            }

    // a held lock turns writers away with a runtime failure
    {
        std::ofstream lock(run / ".lock");
    }
    CliResult locked = run_cli("iterate" + at + " --round 1");
    CHECK(locked.code == 2);
    CHECK(locked.err.find("locked") != std::string::npos);
    fs::remove(run / ".lock");

    // readers never take the lock
    CHECK(run_cli("report --run " + run.string()).code == 0);

    CliResult nogen = run_cli("evaluate" + at + " --generation 7");
    CHECK(nogen.code == 1);
    CHECK(nogen.err.find("checkpoint missing") != std::string::npos);

    CliResult norep = run_cli("report --run " + fresh_dir("empty_run").string());
    CHECK(norep.code == 1);
    CHECK(norep.err.find("no reports found") != std::string::npos);

    CliResult nodata = run_cli("pretrain --run " + fresh_dir("r2").string() + " --data /no/such");
    CHECK(nodata.code == 1);
    CHECK(nodata.err.find("no dataset") != std::string::npos);
}
