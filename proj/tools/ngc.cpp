#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ngc/dataset.hpp"
#include "ngc/orchestrator.hpp"
#include "ngc/report.hpp"
#include "ngc/theory.hpp"
#include "ngc/world.hpp"

namespace fs = std::filesystem;

namespace {

std::string fmt_full(double v) {
    char b[40];
    std::snprintf(b, sizeof b, "%.17g", v);
    return b;
}

std::string fmt6(double v) {
    char b[40];
    std::snprintf(b, sizeof b, "%.6g", v);
    return b;
}

constexpr const char* kSimHeader =
    "p,C,N,analytic_pe_plus,empirical_acc,ci_low,ci_high,bound_printed,bound_mu2";

std::string sim_row(double p, uint32_t C, uint32_t N, double pe_plus, double acc,
                    const ngc::WilsonCI& ci, double bound_printed, double bound_mu2) {
    return fmt_full(p) + "," + std::to_string(C) + "," + std::to_string(N) + "," +
           fmt_full(pe_plus) + "," + fmt_full(acc) + "," + fmt_full(ci.low) + "," +
           fmt_full(ci.high) + "," + fmt_full(bound_printed) + "," + fmt_full(bound_mu2) + "\n";
}

void write_out(const std::string& text, const std::string& out_file) {
    if (out_file.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream f(out_file);
    if (!f) throw std::runtime_error("cannot write " + out_file);
    f << text;
}

std::vector<uint64_t> parse_u64_list(const std::string& csv, const std::string& flag) {
    std::vector<uint64_t> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        size_t pos = 0;
        unsigned long long v = std::stoull(item, &pos);
        if (pos != item.size()) throw std::invalid_argument(flag + ": bad entry '" + item + "'");
        out.push_back(v);
    }
    if (out.empty()) throw std::invalid_argument(flag + ": empty list");
    return out;
}

ngc::dataset::DatasetReader open_reader(const std::string& data_dir) {
    if (!fs::exists(fs::path(data_dir) / "manifest.json"))
        throw std::invalid_argument("no dataset at " + data_dir + " (manifest.json missing)");
    return ngc::dataset::DatasetReader(data_dir);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ngc: hypergraph consensus learners on a synthetic multi-representation world"};
    app.require_subcommand(1);
    app.footer(
        "Exit codes: 0 success, 1 invalid input or precondition, 2 runtime failure.\n"
        "NGC_THREADS caps worker threads (default: hardware concurrency).");

    // ---------------------------------------------------------------- sims
    struct {
        double p = 0.7;
        uint32_t C = 10, N = 1, hops = 2;
        uint64_t trials = 10000, seed = 0;
        std::string out;
    } se;
    auto* sim_ensemble = app.add_subcommand(
        "sim-ensemble", std::string("Monte Carlo vs analytic accuracy of an N-path vote.\n"
                                    "CSV: ") + kSimHeader);
    sim_ensemble->add_option("--p", se.p, "per-edge success probability")->capture_default_str();
    sim_ensemble->add_option("--classes", se.C, "class count C")->capture_default_str();
    sim_ensemble->add_option("--paths", se.N, "ensemble paths N")->capture_default_str();
    sim_ensemble->add_option("--trials", se.trials, "Monte Carlo trials")->capture_default_str();
    sim_ensemble->add_option("--seed", se.seed, "random seed")->capture_default_str();
    sim_ensemble->add_option("--hops", se.hops, "hops per path (analytic columns assume 2)")
        ->capture_default_str();
    sim_ensemble->add_option("--out", se.out, "write CSV here instead of stdout");
    sim_ensemble->callback([&] {
        ngc::EnsembleSimConfig cfg{se.p, se.C, se.N, se.trials, se.seed, se.hops};
        ngc::SimResult r = ngc::simulate_ensemble(cfg);
        write_out(std::string(kSimHeader) + "\n" +
                      sim_row(se.p, se.C, se.N, r.pe_plus, r.accuracy, r.ci, r.bound_printed,
                              r.bound_mu2),
                  se.out);
    });

    struct {
        double p0 = 0.6, r = 0.2;
        uint32_t generations = 10, C = 100;
        std::string paths = "15";
        uint64_t trials = 10000, seed = 0;
        std::string out;
    } sg;
    auto* sim_generations = app.add_subcommand(
        "sim-generations",
        std::string("Student-teacher learning curve: p_{k+1} = p_k + r*(T_k - p_k).\n"
                    "CSV (one row per generation): ") + kSimHeader);
    sim_generations->add_option("--p0", sg.p0, "initial edge accuracy")->capture_default_str();
    sim_generations->add_option("--recovery", sg.r, "fraction of the teacher gap recovered")
        ->capture_default_str();
    sim_generations->add_option("--generations", sg.generations, "generation count")
        ->capture_default_str();
    sim_generations->add_option("--paths", sg.paths, "N per generation (single value broadcasts)")
        ->capture_default_str();
    sim_generations->add_option("--classes", sg.C, "class count C")->capture_default_str();
    sim_generations->add_option("--trials", sg.trials, "Monte Carlo trials per generation")
        ->capture_default_str();
    sim_generations->add_option("--seed", sg.seed, "random seed")->capture_default_str();
    sim_generations->add_option("--out", sg.out, "write CSV here instead of stdout");
    sim_generations->callback([&] {
        ngc::GenerationSimConfig cfg;
        cfg.p0 = sg.p0;
        cfg.r = sg.r;
        cfg.generations = sg.generations;
        for (uint64_t v : parse_u64_list(sg.paths, "--paths")) cfg.Ns.push_back(uint32_t(v));
        cfg.C = sg.C;
        cfg.trials = sg.trials;
        cfg.seed = sg.seed;
        auto points = ngc::simulate_generations(cfg);
        std::string text = std::string(kSimHeader) + "\n";
        for (size_t k = 0; k < points.size(); ++k) {
            uint32_t N = cfg.Ns.size() == 1 ? cfg.Ns[0] : cfg.Ns[k];
            double nan = std::nan("");
            double bp = nan, bm = nan;
            if (points[k].p > 1.0 / cfg.C) {
                bp = ngc::chebyshev_bound(points[k].p, cfg.C, N, ngc::ChebyshevVariant::AsPrinted);
                bm = ngc::chebyshev_bound(points[k].p, cfg.C, N, ngc::ChebyshevVariant::MuSquared);
            }
            text += sim_row(points[k].p, cfg.C, N, ngc::pe_plus(points[k].p, cfg.C),
                            points[k].teacher_acc, points[k].ci, bp, bm);
        }
        write_out(text, sg.out);
    });

    struct {
        double p = 0.6;
        uint32_t N = 15;
        std::string classes = "10,100,1000";
        uint64_t trials = 10000, seed = 0;
        std::string out;
    } sc;
    auto* sim_classes = app.add_subcommand(
        "sim-classes", std::string("Ensemble accuracy across class counts.\n"
                                   "CSV (one row per C): ") + kSimHeader);
    sim_classes->add_option("--p", sc.p, "per-edge success probability")->capture_default_str();
    sim_classes->add_option("--paths", sc.N, "ensemble paths N")->capture_default_str();
    sim_classes->add_option("--classes", sc.classes, "comma list of class counts")
        ->capture_default_str();
    sim_classes->add_option("--trials", sc.trials, "Monte Carlo trials per C")
        ->capture_default_str();
    sim_classes->add_option("--seed", sc.seed, "random seed")->capture_default_str();
    sim_classes->add_option("--out", sc.out, "write CSV here instead of stdout");
    sim_classes->callback([&] {
        std::vector<uint32_t> counts;
        for (uint64_t v : parse_u64_list(sc.classes, "--classes")) counts.push_back(uint32_t(v));
        auto results = ngc::sweep_classes(sc.p, sc.N, counts, sc.trials, sc.seed);
        std::string text = std::string(kSimHeader) + "\n";
        for (size_t i = 0; i < results.size(); ++i)
            text += sim_row(sc.p, counts[i], sc.N, results[i].pe_plus, results[i].accuracy,
                            results[i].ci, results[i].bound_printed, results[i].bound_mu2);
        write_out(text, sc.out);
    });

    // ----------------------------------------------------------- gen-world
    struct {
        std::string out;
        uint64_t seed = 1234;
        double noise = 0.4;
        int height = 32, width = 32, classes = 12;
        std::string counts = "800,200,1000,1000,1000";
    } gw;
    auto* gen_world = app.add_subcommand(
        "gen-world",
        "Generate the synthetic dataset: labeled train/val, two unlabeled pools\n"
        "(sensor only; ground truth under sealed/), and an eval split.");
    gen_world->add_option("--out", gw.out, "dataset directory to create")->required();
    gen_world->add_option("--seed", gw.seed, "world master seed")->capture_default_str();
    gen_world->add_option("--noise", gw.noise, "rgb sensor noise sigma")->capture_default_str();
    gen_world->add_option("--height", gw.height, "scene height")->capture_default_str();
    gen_world->add_option("--width", gw.width, "scene width")->capture_default_str();
    gen_world->add_option("--classes", gw.classes, "segmentation class count")
        ->capture_default_str();
    gen_world->add_option("--counts", gw.counts,
                          "scene counts: train,val,unlabeled1,unlabeled2,eval")
        ->capture_default_str();
    gen_world->callback([&] {
        ngc::world::WorldConfig wc;
        wc.master_seed = gw.seed;
        wc.rgb_noise = gw.noise;
        wc.height = gw.height;
        wc.width = gw.width;
        wc.seg_classes = gw.classes;
        auto counts = parse_u64_list(gw.counts, "--counts");
        if (counts.size() != 5)
            throw std::invalid_argument("--counts needs exactly 5 entries");
        const char* names[5] = {"train", "val", "unlabeled1", "unlabeled2", "eval"};
        const bool labeled[5] = {true, true, false, false, false};
        ngc::world::DatasetPlan plan;
        uint64_t off = 0;
        for (int i = 0; i < 5; ++i) {
            plan.splits.push_back({names[i], off, int(counts[i]), labeled[i]});
            off += counts[i];
        }
        auto manifest = ngc::world::make_dataset(wc, plan, gw.out);
        std::cout << "dataset written to " << gw.out << "\n";
        for (const auto& s : manifest.splits)
            std::cout << "  " << s.name << ": " << s.scenes.size() << " scenes"
                      << (s.labeled ? "" : " (sensor only)") << "\n";
    });

    // ----------------------------------------------------------- pipeline
    struct {
        std::string run, data;
        uint64_t seed = 7;
        int iterations = 1, max_hops = 2, samples = 48;
        double tau = -1.0, alpha = -1.0;
        bool sequential = false, mix_labeled = false, consensus_intermediates = false;
        bool stop_at_first = false;
    } pt;
    auto* pretrain = app.add_subcommand(
        "pretrain",
        "Step 1: train every edge on the labeled split; writes generation-0\n"
        "checkpoints, config.json and reports/pretrain.csv\n"
        "(CSV: iteration,node,edge,metric,value).");
    pretrain->add_option("--run", pt.run, "run directory")->required();
    pretrain->add_option("--data", pt.data, "dataset directory")->required();
    pretrain->add_option("--seed", pt.seed, "experiment seed")->capture_default_str();
    pretrain->add_option("--iterations", pt.iterations, "planned iteration count")
        ->capture_default_str();
    pretrain->add_option("--max-hops", pt.max_hops, "path length cap")->capture_default_str();
    pretrain->add_option("--samples", pt.samples, "pixels sampled per scene per edge")
        ->capture_default_str();
    pretrain->add_option("--tau", pt.tau, "dispersion gate for regression pseudo-labels");
    pretrain->add_option("--alpha", pt.alpha, "agreement gate for vote pseudo-labels");
    pretrain->add_flag("--sequential-students", pt.sequential,
                       "publish each student immediately instead of swapping together");
    pretrain->add_flag("--mix-labeled", pt.mix_labeled,
                       "mix the labeled split into student fine-tuning");
    pretrain->add_flag("--consensus-intermediates", pt.consensus_intermediates,
                       "students read consensus layers instead of first-hop predictions");
    pretrain->add_flag("--greedy-stop-at-first", pt.stop_at_first,
                       "greedy selection stops at the first non-improving prefix");
    pretrain->callback([&] {
        ngc::orchestrator::ExperimentConfig cfg;
        cfg.seed = pt.seed;
        cfg.iterations = pt.iterations;
        cfg.max_hops = pt.max_hops;
        cfg.samples_per_scene = pt.samples;
        if (pt.tau >= 0) cfg.gate.tau = pt.tau;
        if (pt.alpha >= 0) cfg.gate.alpha = pt.alpha;
        cfg.sequential_students = pt.sequential;
        cfg.mix_labeled = pt.mix_labeled;
        cfg.consensus_intermediates = pt.consensus_intermediates;
        cfg.greedy_stop_at_first = pt.stop_at_first;
        ngc::orchestrator::Experiment exp(pt.run, open_reader(pt.data), cfg);
        auto result = exp.pretrain_supervised();
        std::cout << "pretrained " << result.val_metrics.size() << " edges (validation):\n";
        for (const auto& m : result.val_metrics)
            std::cout << "  " << m.label << "  " << m.metric << " " << fmt6(m.value) << "\n";
    });

    struct {
        std::string run, data;
    } bg;
    auto* build_graph = app.add_subcommand(
        "build-graph",
        "Step 2: rank candidate paths per target on the validation split and\n"
        "keep the best prefix; writes topology.json and reports/greedy.csv.");
    build_graph->add_option("--run", bg.run, "run directory")->required();
    build_graph->add_option("--data", bg.data, "dataset directory")->required();
    build_graph->callback([&] {
        auto exp = ngc::orchestrator::Experiment::open(bg.run, bg.data);
        auto selections = exp.build_graph_greedy();
        for (const auto& sel : selections) {
            std::cout << exp.graph().node(sel.target).spec.name << ": kept " << sel.selected
                      << "/" << sel.ranked.size() << " paths, " << sel.metric << " "
                      << fmt6(sel.prefix_metric[sel.selected - 1]) << "\n";
        }
    });

    struct {
        std::string run, data;
        int round = 1;
    } it;
    auto* iterate = app.add_subcommand(
        "iterate",
        "Step 3: one consensus iteration on a fresh unlabeled pool; writes\n"
        "generation-k checkpoints and reports/iteration_k.csv.");
    iterate->add_option("--run", it.run, "run directory")->required();
    iterate->add_option("--data", it.data, "dataset directory")->required();
    iterate->add_option("--round", it.round, "iteration number, 1-based")->capture_default_str();
    iterate->callback([&] {
        auto exp = ngc::orchestrator::Experiment::open(it.run, it.data);
        auto rep = exp.run_unsupervised_iteration(it.round);
        std::cout << "iteration " << rep.iteration << " dispersion (mean over unlabeled pool):\n";
        for (const auto& [node, before] : rep.dispersion_before)
            std::cout << "  " << node << "  " << fmt6(before) << " -> "
                      << fmt6(rep.dispersion_after.at(node)) << "  ("
                      << fmt6(rep.reduction_pct.at(node)) << "% lower)\n";
    });

    struct {
        std::string run, data;
        int generation = -1;
    } ev;
    auto* evaluate = app.add_subcommand(
        "evaluate",
        "Metric table on the held-out eval split for one generation's weights;\n"
        "writes reports/eval_genG.csv and refreshes reports/summary.json\n"
        "(CSV: iteration,node,edge,metric,value).");
    evaluate->add_option("--run", ev.run, "run directory")->required();
    evaluate->add_option("--data", ev.data, "dataset directory")->required();
    evaluate->add_option("--generation", ev.generation,
                         "generation to evaluate (default: latest complete)");
    evaluate->callback([&] {
        auto exp = ngc::orchestrator::Experiment::open(ev.run, ev.data);
        int g = ev.generation >= 0 ? ev.generation : exp.completed_iterations();
        auto rows = exp.evaluate(g);
        for (const auto& r : rows)
            std::cout << r.node << "  " << r.edge << "  " << r.metric << "  " << fmt6(r.value)
                      << "\n";
    });

    struct {
        std::string run;
        bool as_json = false;
    } rp;
    auto* report = app.add_subcommand(
        "report", "Render reports/summary.json as an aligned table (or JSON).");
    report->add_option("--run", rp.run, "run directory")->required();
    report->add_flag("--json", rp.as_json, "emit the JSON summary instead of text");
    report->callback([&] { std::cout << ngc::report::render_run(rp.run, rp.as_json); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        CLI::App* a = &app;
        while (!a->get_subcommands().empty()) a = a->get_subcommands().front();
        std::cout << a->help();
        return 0;
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e, std::cout, std::cerr);
        return code == 0 ? 0 : 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::out_of_range& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::domain_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
