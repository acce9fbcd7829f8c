#include "ngc/orchestrator.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "ngc/features.hpp"
#include "ngc/metrics.hpp"
#include "ngc/parallel.hpp"
#include "ngc/report.hpp"
#include "ngc/rng.hpp"
#include "nlohmann/json.hpp"

namespace ngc::orchestrator {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// RunLock

RunLock::RunLock(const fs::path& run_dir) {
    fs::create_directories(run_dir);
    file_ = run_dir / ".lock";
    int fd = ::open(file_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
        if (errno == EEXIST)
            throw std::runtime_error("run directory is locked: " + file_.string());
        throw std::runtime_error("cannot create lock file " + file_.string());
    }
    std::string pid = std::to_string(::getpid()) + "\n";
    ssize_t n = ::write(fd, pid.data(), pid.size());
    (void)n;
    ::close(fd);
    held_ = true;
}

RunLock& RunLock::operator=(RunLock&& o) noexcept {
    if (this != &o) {
        release();
        file_ = std::move(o.file_);
        held_ = o.held_;
        o.held_ = false;
    }
    return *this;
}

void RunLock::release() {
    if (held_) {
        std::error_code ec;
        fs::remove(file_, ec);
        held_ = false;
    }
}

// ---------------------------------------------------------------------------
// Config

namespace {

json train_to_json(const TrainConfig& tc) {
    return json{{"epochs", tc.epochs},
                {"learning_rate", tc.learning_rate},
                {"weight_decay", tc.weight_decay},
                {"batch_size", tc.batch_size},
                {"shuffle_seed", tc.shuffle_seed}};
}

TrainConfig train_from_json(const json& j, const TrainConfig& defaults) {
    TrainConfig tc = defaults;
    tc.epochs = j.value("epochs", tc.epochs);
    tc.learning_rate = j.value("learning_rate", tc.learning_rate);
    tc.weight_decay = j.value("weight_decay", tc.weight_decay);
    tc.batch_size = j.value("batch_size", tc.batch_size);
    tc.shuffle_seed = j.value("shuffle_seed", tc.shuffle_seed);
    return tc;
}

void validate_config(const ExperimentConfig& c) {
    if (c.splits.train.empty() || c.splits.val.empty() || c.splits.eval.empty())
        throw std::invalid_argument("split names must be nonempty");
    if (c.iterations < 0) throw std::invalid_argument("iterations must be >= 0");
    if (c.iterations > 0 && c.splits.unlabeled.empty())
        throw std::invalid_argument("iterations requested but no unlabeled splits configured");
    if (c.max_hops < 1) throw std::invalid_argument("max_hops must be >= 1");
    if (c.samples_per_scene < 1) throw std::invalid_argument("samples_per_scene must be >= 1");
    for (const TrainConfig* tc : {&c.pretrain, &c.finetune}) {
        if (tc->epochs < 1) throw std::invalid_argument("epochs must be >= 1");
        if (!(tc->learning_rate > 0)) throw std::invalid_argument("learning_rate must be > 0");
        if (tc->batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
        if (tc->weight_decay < 0) throw std::invalid_argument("weight_decay must be >= 0");
    }
    if (c.finetune_batch_vector < 1)
        throw std::invalid_argument("finetune_batch_vector must be >= 1");
    if (c.gate.tau && *c.gate.tau < 0) throw std::invalid_argument("gate tau must be >= 0");
    if (c.gate.alpha && (*c.gate.alpha < 0 || *c.gate.alpha > 1))
        throw std::invalid_argument("gate alpha must be in [0, 1]");
}

}  // namespace

void save_config(const ExperimentConfig& cfg, const fs::path& file) {
    validate_config(cfg);
    json j;
    j["splits"] = {{"train", cfg.splits.train},
                   {"val", cfg.splits.val},
                   {"unlabeled", cfg.splits.unlabeled},
                   {"eval", cfg.splits.eval}};
    j["seed"] = cfg.seed;
    j["iterations"] = cfg.iterations;
    j["max_hops"] = cfg.max_hops;
    j["samples_per_scene"] = cfg.samples_per_scene;
    j["hidden"] = cfg.hidden;
    j["pretrain"] = train_to_json(cfg.pretrain);
    j["finetune"] = train_to_json(cfg.finetune);
    j["finetune_batch_vector"] = cfg.finetune_batch_vector;
    json gate = json::object();
    if (cfg.gate.tau) gate["tau"] = *cfg.gate.tau;
    if (cfg.gate.alpha) gate["alpha"] = *cfg.gate.alpha;
    j["gate"] = gate;
    j["consensus_intermediates"] = cfg.consensus_intermediates;
    j["sequential_students"] = cfg.sequential_students;
    j["mix_labeled"] = cfg.mix_labeled;
    j["greedy_stop_at_first"] = cfg.greedy_stop_at_first;

    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    out << j.dump(1) << "\n";
}

ExperimentConfig load_config(const fs::path& file) {
    std::ifstream in(file);
    if (!in) throw std::invalid_argument("cannot read config " + file.string());
    json j = json::parse(in);
    ExperimentConfig c;
    if (j.contains("splits")) {
        const json& s = j["splits"];
        c.splits.train = s.value("train", c.splits.train);
        c.splits.val = s.value("val", c.splits.val);
        c.splits.eval = s.value("eval", c.splits.eval);
        if (s.contains("unlabeled")) c.splits.unlabeled = s["unlabeled"].get<std::vector<std::string>>();
    }
    c.seed = j.value("seed", c.seed);
    c.iterations = j.value("iterations", c.iterations);
    c.max_hops = j.value("max_hops", c.max_hops);
    c.samples_per_scene = j.value("samples_per_scene", c.samples_per_scene);
    if (j.contains("hidden")) c.hidden = j["hidden"].get<std::vector<uint32_t>>();
    if (j.contains("pretrain")) c.pretrain = train_from_json(j["pretrain"], c.pretrain);
    if (j.contains("finetune")) c.finetune = train_from_json(j["finetune"], c.finetune);
    c.finetune_batch_vector = j.value("finetune_batch_vector", c.finetune_batch_vector);
    if (j.contains("gate")) {
        const json& g = j["gate"];
        if (g.contains("tau")) c.gate.tau = g["tau"].get<double>();
        if (g.contains("alpha")) c.gate.alpha = g["alpha"].get<double>();
    }
    c.consensus_intermediates = j.value("consensus_intermediates", c.consensus_intermediates);
    c.sequential_students = j.value("sequential_students", c.sequential_students);
    c.mix_labeled = j.value("mix_labeled", c.mix_labeled);
    c.greedy_stop_at_first = j.value("greedy_stop_at_first", c.greedy_stop_at_first);
    validate_config(c);
    return c;
}

// ---------------------------------------------------------------------------
// Prefix rule

int select_prefix(const std::vector<double>& prefix_metric, const std::string& metric,
                  bool stop_at_first) {
    if (prefix_metric.empty()) throw std::invalid_argument("no prefixes to select from");
    if (stop_at_first) {
        size_t k = 1;
        while (k < prefix_metric.size() &&
               metrics::better(metric, prefix_metric[k], prefix_metric[k - 1]))
            ++k;
        return static_cast<int>(k);
    }
    size_t best = 0;
    for (size_t i = 1; i < prefix_metric.size(); ++i)
        if (metrics::better(metric, prefix_metric[i], prefix_metric[best])) best = i;
    return static_cast<int>(best + 1);
}

// ---------------------------------------------------------------------------
// Shared helpers

namespace {

std::string node_name(const graph::Graph& g, int id) { return g.node(id).spec.name; }

std::string edge_label(const graph::Graph& g, const graph::HyperEdge& e) {
    std::string s;
    for (size_t i = 0; i < e.clique.size(); ++i) {
        if (i) s += "+";
        s += node_name(g, e.clique[i]);
    }
    return s + "->" + node_name(g, e.output);
}

std::string path_label(const graph::Graph& g, const graph::Path& p) {
    const graph::HyperEdge& first = g.edge(p.edges[0]);
    std::string s = node_name(g, first.clique[0]);
    for (int eid : p.edges) s += "->" + node_name(g, g.edge(eid).output);
    return s;
}

Tensor hcat(Tensor a, const Tensor& b) {
    if (a.shape[0] != b.shape[0]) throw TensorError("clique feature row mismatch");
    uint32_t c0 = a.shape[1], c1 = b.shape[1];
    Tensor merged = Tensor::zeros_f32({a.shape[0], c0 + c1});
    for (uint32_t r = 0; r < a.shape[0]; ++r) {
        std::copy_n(a.f.begin() + size_t(r) * c0, c0, merged.f.begin() + size_t(r) * (c0 + c1));
        std::copy_n(b.f.begin() + size_t(r) * c1, c1,
                    merged.f.begin() + size_t(r) * (c0 + c1) + c0);
    }
    return merged;
}

// Feature matrix an edge consumes, built from explicitly supplied layers
// (ground truth during pretraining, predictions during later stages).
Tensor edge_input_matrix(const graph::Graph& g, const graph::HyperEdge& e,
                         const std::map<std::string, Tensor>& layers) {
    const NodeSpec& out_spec = g.node(e.output).spec;
    Tensor X;
    for (size_t k = 0; k < e.clique.size(); ++k) {
        const NodeSpec& in_spec = g.node(e.clique[k]).spec;
        auto it = layers.find(in_spec.name);
        if (it == layers.end())
            throw std::invalid_argument("missing input layer '" + in_spec.name + "' for edge " +
                                        edge_label(g, e));
        Tensor part = features::edge_features(in_spec, out_spec, it->second);
        X = k == 0 ? std::move(part) : hcat(std::move(X), part);
    }
    return X;
}

Tensor run_edge_model(const graph::Graph& g, const graph::HyperEdge& e, const DenseModel& model,
                      const std::map<std::string, Tensor>& layers) {
    const NodeSpec& out_spec = g.node(e.output).spec;
    Tensor X = edge_input_matrix(g, e, layers);
    int h = 0, w = 0;
    for (int cid : e.clique) {
        const NodeSpec& sp = g.node(cid).spec;
        if (sp.is_map) {
            const Tensor& t = layers.at(sp.name);
            h = int(t.shape[0]);
            w = int(t.shape[1]);
            break;
        }
    }
    Tensor rows = forward(model, X);
    return features::output_to_layer(out_spec, rows, h, w);
}

Tensor run_edge(const graph::Graph& g, const graph::HyperEdge& e,
                const std::map<std::string, Tensor>& layers) {
    if (!e.model)
        throw std::runtime_error("edge " + edge_label(g, e) + " has no trained model");
    return run_edge_model(g, e, *e.model, layers);
}

// `want` distinct pixel indices out of `total` via partial Fisher-Yates; the
// generator persists across scenes so every scene sees fresh positions.
std::vector<uint32_t> sample_pixels(Rng& rng, uint32_t total, uint32_t want) {
    if (want >= total) {
        std::vector<uint32_t> all(total);
        for (uint32_t i = 0; i < total; ++i) all[i] = i;
        return all;
    }
    std::vector<uint32_t> idx(total);
    for (uint32_t i = 0; i < total; ++i) idx[i] = i;
    for (uint32_t i = 0; i < want; ++i)
        std::swap(idx[i], idx[i + uint32_t(rng.below(total - i))]);
    idx.resize(want);
    return idx;
}

// Training rows accumulated across scenes for one edge.
struct RowBlock {
    std::vector<float> x;
    std::vector<float> yf;
    std::vector<uint16_t> yu;
    std::vector<uint8_t> keep;
    size_t rows = 0;
    uint32_t dim = 0;
    bool any_masked = false;
};

// Appends this scene's rows: sampled pixels for map targets, the single
// pooled row for vector targets. `element_mask`, when set, is the consensus
// confidence mask over the target layer's elements; a row is kept only if
// every element it covers passed the gate.
void append_edge_rows(RowBlock& blk, const graph::Graph& g, const graph::HyperEdge& e,
                      const std::map<std::string, Tensor>& in_layers, const Tensor& target_layer,
                      const std::vector<uint8_t>* element_mask, uint32_t samples, Rng& rng) {
    const NodeSpec& out = g.node(e.output).spec;
    Tensor X = edge_input_matrix(g, e, in_layers);
    blk.dim = X.shape[1];

    if (!out.is_map) {
        blk.x.insert(blk.x.end(), X.f.begin(), X.f.end());
        blk.yf.insert(blk.yf.end(), target_layer.f.begin(), target_layer.f.end());
        uint8_t kept = 1;
        if (element_mask)
            for (uint8_t m : *element_mask)
                if (!m) kept = 0;
        blk.keep.push_back(kept);
        blk.any_masked |= !kept;
        blk.rows += 1;
        return;
    }

    auto pixels = sample_pixels(rng, X.shape[0], samples);
    Tensor Y = features::gather_target_rows(out, target_layer, pixels);
    for (uint32_t p : pixels)
        blk.x.insert(blk.x.end(), X.f.begin() + size_t(p) * blk.dim,
                     X.f.begin() + size_t(p + 1) * blk.dim);
    if (out.categorical)
        blk.yu.insert(blk.yu.end(), Y.u.begin(), Y.u.end());
    else
        blk.yf.insert(blk.yf.end(), Y.f.begin(), Y.f.end());
    size_t elems_per_pixel = out.categorical ? 1 : size_t(out.channels);
    for (uint32_t p : pixels) {
        uint8_t kept = 1;
        if (element_mask)
            for (size_t c = 0; c < elems_per_pixel; ++c)
                if (!(*element_mask)[size_t(p) * elems_per_pixel + c]) kept = 0;
        blk.keep.push_back(kept);
        blk.any_masked |= !kept;
    }
    blk.rows += pixels.size();
}

FitResult fit_edge(DenseModel& model, RowBlock& blk, const NodeSpec& out,
                   const TrainConfig& tc) {
    if (blk.rows == 0) throw std::invalid_argument("no training rows for edge");
    Tensor X = Tensor::from_f32({uint32_t(blk.rows), blk.dim}, std::move(blk.x));
    Tensor Y = out.categorical
                   ? Tensor::from_u16({uint32_t(blk.rows)}, std::move(blk.yu))
                   : Tensor::from_f32({uint32_t(blk.rows), uint32_t(out.channels)},
                                      std::move(blk.yf));
    return fit(model, X, Y, tc, blk.any_masked ? &blk.keep : nullptr);
}

std::vector<std::string> node_names(const graph::Graph& g, bool sensors_only) {
    std::vector<std::string> names;
    for (const auto& n : g.nodes)
        if (!sensors_only || n.sensor) names.push_back(n.spec.name);
    return names;
}

report::Row to_report_row(const MetricRow& r) {
    return report::Row{r.iteration, r.node, r.edge, r.metric, r.value};
}

void append_timing(const fs::path& run_dir, const std::string& stage, double seconds) {
    std::ofstream out(run_dir / "timing.log", std::ios::app);
    char buf[64];
    std::snprintf(buf, sizeof buf, " %.1fs\n", seconds);
    out << stage << buf;
}

double elapsed_sec(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// The edge feeding a node its student-training input: the lowest-id edge
// whose inputs are all sensors. Mirrors how the node is reached at
// evaluation time (first hop of a 2-hop path).
const graph::HyperEdge* direct_sensor_edge(const graph::Graph& g, int node_id) {
    const graph::HyperEdge* best = nullptr;
    for (const auto& e : g.edges) {
        if (e.output != node_id) continue;
        bool all_sensors = true;
        for (int cid : e.clique)
            if (!g.node(cid).sensor) all_sensors = false;
        if (!all_sensors) continue;
        if (!best || e.id < best->id) best = &e;
    }
    return best;
}

double mean_dispersion(const graph::ConsensusResult& r) {
    const Tensor& d = r.dispersion;
    double sum = 0.0;
    for (size_t i = 0; i < d.f.size(); ++i) sum += d.f[i];
    double mean = d.f.empty() ? 0.0 : sum / double(d.f.size());
    // vote dispersion stores the winning fraction; report disagreement so
    // lower is better for every node kind
    return r.categorical() ? 1.0 - mean : mean;
}

}  // namespace

// ---------------------------------------------------------------------------
// Experiment

Experiment::Experiment(fs::path run_dir, dataset::DatasetReader reader, ExperimentConfig config)
    : run_dir_(std::move(run_dir)),
      reader_(std::move(reader)),
      config_(std::move(config)),
      lock_(run_dir_) {
    validate_config(config_);
    for (const std::string& s : {config_.splits.train, config_.splits.val, config_.splits.eval})
        if (!reader_.manifest().has_split(s))
            throw std::invalid_argument("split '" + s + "' not present in dataset");
    for (const std::string& s : config_.splits.unlabeled)
        if (!reader_.manifest().has_split(s))
            throw std::invalid_argument("split '" + s + "' not present in dataset");

    fs::create_directories(run_dir_ / "checkpoints");
    fs::create_directories(run_dir_ / "reports");

    fs::path cfg_file = run_dir_ / "config.json";
    if (fs::exists(cfg_file)) {
        if (!(load_config(cfg_file) == config_))
            throw std::invalid_argument("run directory already holds a different config: " +
                                        cfg_file.string());
    } else {
        save_config(config_, cfg_file);
    }

    fs::path topo = run_dir_ / "topology.json";
    graph_ = fs::exists(topo) ? graph::load_topology(topo) : graph::default_world_graph();
    graph_.validate();
}

Experiment Experiment::open(const fs::path& run_dir, const fs::path& data_dir) {
    fs::path cfg_file = run_dir / "config.json";
    if (!fs::exists(cfg_file))
        throw std::invalid_argument("not a run directory (missing " + cfg_file.string() + ")");
    ExperimentConfig cfg = load_config(cfg_file);
    return Experiment(run_dir, dataset::DatasetReader(data_dir), cfg);
}

fs::path Experiment::checkpoint_path(int edge_id, int generation) const {
    char buf[48];
    std::snprintf(buf, sizeof buf, "edge_%03d_gen%d.ngcm", edge_id, generation);
    return run_dir_ / "checkpoints" / buf;
}

bool Experiment::has_pretrained() const {
    for (const auto& e : graph_.edges)
        if (!fs::exists(checkpoint_path(e.id, 0))) return false;
    return !graph_.edges.empty();
}

bool Experiment::has_topology() const { return fs::exists(run_dir_ / "topology.json"); }

int Experiment::completed_iterations() const {
    int g = 0;
    for (;;) {
        bool complete = true;
        for (const auto& e : graph_.edges)
            if (!fs::exists(checkpoint_path(e.id, g + 1))) complete = false;
        if (!complete) return g;
        ++g;
    }
}

void Experiment::load_generation(int generation) {
    if (loaded_generation_ == generation) return;
    for (auto& e : graph_.edges) {
        fs::path file = checkpoint_path(e.id, generation);
        if (!fs::exists(file))
            throw std::invalid_argument("checkpoint missing: " + file.string());
        e.model = load_checkpoint(file);
        e.checkpoint = fs::relative(file, run_dir_).string();
    }
    loaded_generation_ = generation;
}

Experiment::SceneList Experiment::load_labeled(const std::string& split,
                                               dataset::AuditLog& audit,
                                               const std::string& usage) const {
    std::vector<std::string> layers = node_names(graph_, false);
    const auto& sm = reader_.manifest().split(split);
    SceneList scenes;
    scenes.reserve(sm.scenes.size());
    for (size_t i = 0; i < sm.scenes.size(); ++i)
        scenes.push_back(reader_.load_training_scene(split, i, layers, audit, usage));
    return scenes;
}

std::vector<EdgeMetric> Experiment::edge_val_metrics(const SceneList& val_scenes) const {
    std::vector<EdgeMetric> out(graph_.edges.size());
    parallel_for(graph_.edges.size(), [&](size_t i) {
        const graph::HyperEdge& e = graph_.edges[i];
        const NodeSpec& spec = graph_.node(e.output).spec;
        std::string metric = metrics::selection_metric_name(spec);
        double sum = 0.0;
        for (const auto& scene : val_scenes) {
            Tensor pred = run_edge(graph_, e, scene);
            sum += metrics::selection_metric(spec, pred, scene.at(spec.name));
        }
        out[i] = EdgeMetric{e.id, edge_label(graph_, e),
                            val_scenes.empty() ? 0.0 : sum / double(val_scenes.size()), metric};
    });
    return out;
}

// ---------------------------------------------------------------------------
// Step 1: supervised pretraining

PretrainResult Experiment::pretrain_supervised() {
    auto t0 = std::chrono::steady_clock::now();
    dataset::AuditLog audit(run_dir_ / "audit.log");
    SceneList train = load_labeled(config_.splits.train, audit, "pretrain-train");
    SceneList val = load_labeled(config_.splits.val, audit, "pretrain-val");
    if (train.empty()) throw std::invalid_argument("training split is empty");

    parallel_for(graph_.edges.size(), [&](size_t i) {
        graph::HyperEdge& e = graph_.edges[i];
        const NodeSpec& out = graph_.node(e.output).spec;
        uint32_t input_dim = 0;
        for (int cid : e.clique)
            input_dim += uint32_t(features::edge_input_dim(graph_.node(cid).spec, out));
        ModelSpec spec{input_dim, config_.hidden, uint32_t(out.channels),
                       Activation::HyperbolicTangent,
                       out.categorical ? Head::Softmax : Head::Regression,
                       mix_seed(config_.seed, 100, uint64_t(e.id))};
        DenseModel model = init_model(spec);

        RowBlock blk;
        Rng rng(mix_seed(config_.seed, 500, uint64_t(e.id)));
        for (const auto& scene : train)
            append_edge_rows(blk, graph_, e, scene, scene.at(out.name), nullptr,
                             uint32_t(config_.samples_per_scene), rng);
        TrainConfig tc = config_.pretrain;
        tc.shuffle_seed = mix_seed(config_.seed, 900, uint64_t(e.id));
        fit_edge(model, blk, out, tc);

        save_checkpoint(checkpoint_path(e.id, 0), model);
        e.model = std::move(model);
        e.checkpoint = fs::relative(checkpoint_path(e.id, 0), run_dir_).string();
    });
    loaded_generation_ = 0;

    PretrainResult result;
    result.val_metrics = edge_val_metrics(val);

    std::vector<report::Row> rows;
    for (const auto& m : result.val_metrics)
        rows.push_back({0, graph_.node(graph_.edge(m.edge_id).output).spec.name, m.label,
                        m.metric, m.value});
    report::write_csv(run_dir_ / "reports" / "pretrain.csv", rows);
    append_timing(run_dir_, "pretrain", elapsed_sec(t0));
    return result;
}

// ---------------------------------------------------------------------------
// Step 2: greedy graph construction

std::vector<GreedySelection> Experiment::build_graph_greedy() {
    auto t0 = std::chrono::steady_clock::now();
    if (!has_pretrained())
        throw std::invalid_argument("pretrained checkpoints missing (run pretrain first)");
    load_generation(0);

    dataset::AuditLog audit(run_dir_ / "audit.log");
    SceneList val = load_labeled(config_.splits.val, audit, "build-graph-val");
    if (val.empty()) throw std::invalid_argument("validation split is empty");

    std::vector<int> targets;
    for (const auto& n : graph_.nodes)
        if (!n.sensor) targets.push_back(n.id);

    std::vector<GreedySelection> selections(targets.size());
    std::vector<bool> excluded(targets.size(), false);

    parallel_for(targets.size(), [&](size_t ti) {
        int target = targets[ti];
        const NodeSpec& spec = graph_.node(target).spec;
        std::vector<graph::Path> paths = graph::enumerate_paths(graph_, target, config_.max_hops);
        if (paths.empty()) {
            excluded[ti] = true;
            return;
        }
        std::string metric = metrics::selection_metric_name(spec);

        // per-path predictions on the validation split
        std::vector<std::vector<Tensor>> preds(paths.size());
        std::vector<double> solo(paths.size(), 0.0);
        for (size_t pi = 0; pi < paths.size(); ++pi) {
            preds[pi].reserve(val.size());
            for (const auto& scene : val) {
                preds[pi].push_back(graph::evaluate_path(graph_, paths[pi], scene));
                solo[pi] += metrics::selection_metric(spec, preds[pi].back(), scene.at(spec.name));
            }
            solo[pi] /= double(val.size());
        }

        // rank: direct sensor paths first, then everything else by its solo
        // validation metric; stable so enumeration order breaks ties
        std::vector<size_t> order(paths.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            bool da = paths[a].edges.size() == 1, db = paths[b].edges.size() == 1;
            if (da != db) return da;
            return metrics::better(metric, solo[a], solo[b]);
        });

        GreedySelection sel;
        sel.target = target;
        sel.metric = metric;
        for (size_t i : order) {
            sel.ranked.push_back(paths[i]);
            sel.solo.push_back(solo[i]);
        }

        // ensemble metric of every prefix of the ranking
        for (size_t k = 1; k <= sel.ranked.size(); ++k) {
            double sum = 0.0;
            for (size_t s = 0; s < val.size(); ++s) {
                std::vector<Tensor> members;
                members.reserve(k);
                for (size_t i = 0; i < k; ++i) members.push_back(preds[order[i]][s]);
                graph::ConsensusResult cr = spec.categorical
                                                ? graph::consensus_vote(members)
                                                : graph::consensus_median(members);
                sum += metrics::selection_metric(spec, cr.pseudo_label, val[s].at(spec.name));
            }
            sel.prefix_metric.push_back(sum / double(val.size()));
        }
        sel.selected = select_prefix(sel.prefix_metric, metric, config_.greedy_stop_at_first);
        selections[ti] = std::move(sel);
    });

    std::vector<GreedySelection> kept;
    graph_.ensembles.clear();
    for (size_t ti = 0; ti < targets.size(); ++ti) {
        if (excluded[ti]) {
            std::cerr << "warning: no candidate paths for node '"
                      << node_name(graph_, targets[ti]) << "', excluded from ensembles\n";
            continue;
        }
        const GreedySelection& sel = selections[ti];
        graph_.ensembles[sel.target] = std::vector<graph::Path>(
            sel.ranked.begin(), sel.ranked.begin() + sel.selected);
        kept.push_back(sel);
    }
    graph_.validate();
    graph::save_topology(graph_, run_dir_ / "topology.json");

    std::vector<report::Row> rows;
    for (const auto& sel : kept) {
        std::string node = node_name(graph_, sel.target);
        for (size_t i = 0; i < sel.ranked.size(); ++i)
            rows.push_back({0, node, path_label(graph_, sel.ranked[i]), "solo_" + sel.metric,
                            sel.solo[i]});
        for (size_t k = 0; k < sel.prefix_metric.size(); ++k)
            rows.push_back({0, node, "prefix_" + std::to_string(k + 1),
                            "ensemble_" + sel.metric, sel.prefix_metric[k]});
        rows.push_back({0, node, "-", "selected_paths", double(sel.selected)});
    }
    report::write_csv(run_dir_ / "reports" / "greedy.csv", rows);
    append_timing(run_dir_, "build-graph", elapsed_sec(t0));
    return kept;
}

// ---------------------------------------------------------------------------
// Step 3: one unsupervised iteration

IterationReport Experiment::run_unsupervised_iteration(int round) {
    auto t0 = std::chrono::steady_clock::now();
    if (round < 1) throw std::invalid_argument("round must be >= 1");
    if (!has_topology() || graph_.ensembles.empty())
        throw std::invalid_argument("graph topology missing (run build-graph first)");
    load_generation(round - 1);

    const std::string unl_split =
        config_.splits.unlabeled[(size_t(round) - 1) % config_.splits.unlabeled.size()];
    dataset::AuditLog audit(run_dir_ / "audit.log");
    std::string tag = "iterate" + std::to_string(round);

    std::vector<std::string> sensor_names = node_names(graph_, true);
    const auto& sm = reader_.manifest().split(unl_split);
    SceneList unl;
    unl.reserve(sm.scenes.size());
    for (size_t i = 0; i < sm.scenes.size(); ++i)
        unl.push_back(
            reader_.load_training_scene(unl_split, i, sensor_names, audit, tag + "-unlabeled"));
    if (unl.empty()) throw std::invalid_argument("unlabeled split '" + unl_split + "' is empty");
    SceneList val = load_labeled(config_.splits.val, audit, tag + "-val");
    SceneList train;
    if (config_.mix_labeled) train = load_labeled(config_.splits.train, audit, tag + "-train");

    IterationReport rep;
    rep.iteration = round;
    rep.edge_before = edge_val_metrics(val);

    // Pseudo-labels from the frozen teachers, one consensus per (target, scene).
    std::vector<int> targets;
    for (const auto& [tid, sel] : graph_.ensembles) {
        if (sel.empty()) throw std::runtime_error("empty ensemble for node " + node_name(graph_, tid));
        targets.push_back(tid);
    }
    std::vector<std::vector<graph::ConsensusResult>> pseudo(targets.size());
    auto consensus_pass = [&](std::vector<std::vector<graph::ConsensusResult>>* store,
                              std::vector<double>* disp) {
        parallel_for(targets.size(), [&](size_t ti) {
            int target = targets[ti];
            const auto& sel = graph_.ensembles.at(target);
            double sum = 0.0;
            std::vector<graph::ConsensusResult> results;
            results.reserve(store ? unl.size() : 0);
            for (const auto& scene : unl) {
                std::vector<Tensor> preds;
                preds.reserve(sel.size());
                for (const auto& p : sel) preds.push_back(graph::evaluate_path(graph_, p, scene));
                graph::ConsensusResult cr = graph_.node(target).spec.categorical
                                                ? graph::consensus_vote(preds)
                                                : graph::consensus_median(preds);
                cr = graph::gate_confidence(std::move(cr), config_.gate);
                sum += mean_dispersion(cr);
                if (store) results.push_back(std::move(cr));
            }
            if (store) (*store)[ti] = std::move(results);
            if (disp) (*disp)[ti] = sum / double(unl.size());
        });
    };
    std::vector<double> disp_before(targets.size());
    consensus_pass(&pseudo, &disp_before);
    auto target_index = [&](int node_id) -> int {
        for (size_t i = 0; i < targets.size(); ++i)
            if (targets[i] == node_id) return int(i);
        return -1;
    };

    // Student-input layers: every non-sensor clique node is replaced by the
    // generation-(round-1) prediction that reaches it at evaluation time.
    auto student_layer = [&](int node_id, const std::map<std::string, Tensor>& sensors,
                             size_t scene_idx) -> Tensor {
        const graph::GraphNode& n = graph_.node(node_id);
        int ti = target_index(node_id);
        if (config_.consensus_intermediates && ti >= 0)
            return pseudo[ti][scene_idx].pseudo_label;
        if (const graph::HyperEdge* direct = direct_sensor_edge(graph_, node_id))
            return run_edge(graph_, *direct, sensors);
        if (ti >= 0) return pseudo[ti][scene_idx].pseudo_label;
        throw std::runtime_error("no student input available for node '" + n.spec.name + "'");
    };

    // In the synchronous default all students read frozen teacher state and
    // publish together; precompute the shared intermediate layers once.
    std::set<int> needed;
    for (const auto& e : graph_.edges) {
        if (target_index(e.output) < 0) continue;
        for (int cid : e.clique)
            if (!graph_.node(cid).sensor) needed.insert(cid);
    }
    std::map<int, std::vector<Tensor>> intermediate;
    if (!config_.sequential_students) {
        std::vector<int> need_list(needed.begin(), needed.end());
        std::vector<std::vector<Tensor>> computed(need_list.size());
        parallel_for(need_list.size(), [&](size_t i) {
            std::vector<Tensor> per_scene;
            per_scene.reserve(unl.size());
            for (size_t s = 0; s < unl.size(); ++s)
                per_scene.push_back(student_layer(need_list[i], unl[s], s));
            computed[i] = std::move(per_scene);
        });
        for (size_t i = 0; i < need_list.size(); ++i)
            intermediate[need_list[i]] = std::move(computed[i]);
    }

    auto train_student = [&](size_t ei) -> std::optional<DenseModel> {
        graph::HyperEdge& e = graph_.edges[ei];
        int ti = target_index(e.output);
        if (ti < 0) return std::nullopt;  // no ensemble feeds this node
        const NodeSpec& out = graph_.node(e.output).spec;

        RowBlock blk;
        Rng rng(mix_seed(config_.seed, 1500 + uint64_t(round), uint64_t(e.id)));
        for (size_t s = 0; s < unl.size(); ++s) {
            std::map<std::string, Tensor> inputs;
            for (int cid : e.clique) {
                const graph::GraphNode& n = graph_.node(cid);
                if (n.sensor)
                    inputs[n.spec.name] = unl[s].at(n.spec.name);
                else if (config_.sequential_students)
                    inputs[n.spec.name] = student_layer(cid, unl[s], s);
                else
                    inputs[n.spec.name] = intermediate.at(cid)[s];
            }
            const graph::ConsensusResult& cr = pseudo[ti][s];
            const std::vector<uint8_t>* mask = cr.mask ? &*cr.mask : nullptr;
            append_edge_rows(blk, graph_, e, inputs, cr.pseudo_label, mask,
                             uint32_t(config_.samples_per_scene), rng);
        }
        if (config_.mix_labeled) {
            Rng lrng(mix_seed(config_.seed, 1700 + uint64_t(round), uint64_t(e.id)));
            for (const auto& scene : train)
                append_edge_rows(blk, graph_, e, scene, scene.at(out.name), nullptr,
                                 uint32_t(config_.samples_per_scene), lrng);
        }

        TrainConfig tc = config_.finetune;
        tc.shuffle_seed = mix_seed(config_.seed, 1900 + uint64_t(round), uint64_t(e.id));
        if (!out.is_map) tc.batch_size = config_.finetune_batch_vector;

        DenseModel student = *e.model;  // fine-tune from generation round-1
        fit_edge(student, blk, out, tc);
        return student;
    };

    std::vector<std::optional<DenseModel>> students(graph_.edges.size());
    if (config_.sequential_students) {
        // each student publishes immediately; later students see it
        for (size_t ei = 0; ei < graph_.edges.size(); ++ei) {
            students[ei] = train_student(ei);
            if (students[ei]) graph_.edges[ei].model = *students[ei];
        }
    } else {
        parallel_for(graph_.edges.size(), [&](size_t ei) { students[ei] = train_student(ei); });
        // atomic swap: all generations advance together
        for (size_t ei = 0; ei < graph_.edges.size(); ++ei)
            if (students[ei]) graph_.edges[ei].model = std::move(*students[ei]);
    }
    for (auto& e : graph_.edges) {
        save_checkpoint(checkpoint_path(e.id, round), *e.model);
        e.checkpoint = fs::relative(checkpoint_path(e.id, round), run_dir_).string();
    }
    loaded_generation_ = round;

    std::vector<double> disp_after(targets.size());
    consensus_pass(nullptr, &disp_after);
    rep.edge_after = edge_val_metrics(val);

    for (size_t ti = 0; ti < targets.size(); ++ti) {
        std::string node = node_name(graph_, targets[ti]);
        rep.dispersion_before[node] = disp_before[ti];
        rep.dispersion_after[node] = disp_after[ti];
        rep.reduction_pct[node] =
            disp_before[ti] > 0 ? 100.0 * (1.0 - disp_after[ti] / disp_before[ti]) : 0.0;
    }
    rep.wall_time_sec = elapsed_sec(t0);

    std::vector<report::Row> rows;
    for (size_t ti = 0; ti < targets.size(); ++ti) {
        std::string node = node_name(graph_, targets[ti]);
        rows.push_back({round, node, "-", "dispersion_before", disp_before[ti]});
        rows.push_back({round, node, "-", "dispersion_after", disp_after[ti]});
        rows.push_back({round, node, "-", "dispersion_reduction_pct", rep.reduction_pct[node]});
    }
    for (size_t i = 0; i < rep.edge_before.size(); ++i) {
        const EdgeMetric& b = rep.edge_before[i];
        const EdgeMetric& a = rep.edge_after[i];
        std::string node = node_name(graph_, graph_.edge(b.edge_id).output);
        rows.push_back({round, node, b.label, "val_" + b.metric + "_before", b.value});
        rows.push_back({round, node, a.label, "val_" + a.metric + "_after", a.value});
    }
    report::write_csv(run_dir_ / "reports" /
                          ("iteration_" + std::to_string(round) + ".csv"),
                      rows);
    append_timing(run_dir_, "iterate" + std::to_string(round), rep.wall_time_sec);
    return rep;
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<MetricRow> Experiment::evaluate(int generation) {
    auto t0 = std::chrono::steady_clock::now();
    if (generation < 0) throw std::invalid_argument("generation must be >= 0");
    if (!has_topology())
        throw std::invalid_argument("graph topology missing (run build-graph first)");
    load_generation(generation);

    dataset::AuditLog audit(run_dir_ / "audit.log");
    std::string usage = "evaluate-gen" + std::to_string(generation);
    std::vector<std::string> layers = node_names(graph_, false);
    const auto& sm = reader_.manifest().split(config_.splits.eval);
    SceneList scenes;
    scenes.reserve(sm.scenes.size());
    for (size_t i = 0; i < sm.scenes.size(); ++i)
        scenes.push_back(
            reader_.load_evaluation_scene(config_.splits.eval, i, layers, audit, usage));
    if (scenes.empty()) throw std::invalid_argument("evaluation split is empty");

    struct NodeEval {
        std::vector<MetricRow> rows;
    };
    std::vector<int> targets;
    for (const auto& [tid, sel] : graph_.ensembles) targets.push_back(tid);
    std::vector<NodeEval> evals(targets.size());

    parallel_for(targets.size(), [&](size_t ti) {
        int target = targets[ti];
        const NodeSpec& spec = graph_.node(target).spec;
        const graph::HyperEdge* direct = direct_sensor_edge(graph_, target);

        // metric set by node kind
        std::vector<std::pair<std::string, std::function<double(const Tensor&, const Tensor&)>>>
            fns;
        if (spec.categorical) {
            fns.push_back({"accuracy", [](const Tensor& p, const Tensor& g) {
                               return metrics::accuracy(p, g);
                           }});
            int classes = spec.channels;
            fns.push_back({"miou", [classes](const Tensor& p, const Tensor& g) {
                               return metrics::miou(p, g, classes);
                           }});
        } else if (spec.direction) {
            fns.push_back({"angular_l1_deg", [](const Tensor& p, const Tensor& g) {
                               return metrics::angular_l1_deg(p, g);
                           }});
        } else if (spec.is_map) {
            fns.push_back({"l1", [](const Tensor& p, const Tensor& g) {
                               return metrics::l1(p, g);
                           }});
        } else {
            fns.push_back({"l2", [](const Tensor& p, const Tensor& g) {
                               return metrics::l2(p, g);
                           }});
        }

        std::optional<DenseModel> baseline;
        if (generation >= 1 && direct)
            baseline = load_checkpoint(checkpoint_path(direct->id, 0));

        std::map<std::string, double> edge_sum, ngc_sum;
        double edge_improved = 0.0, ngc_improved = 0.0;
        for (const auto& scene : scenes) {
            const Tensor& gt = scene.at(spec.name);
            std::optional<Tensor> edge_pred;
            if (direct) edge_pred = run_edge(graph_, *direct, scene);
            std::optional<Tensor> ngc_pred;
            if (generation >= 1)
                ngc_pred = graph::ensemble_predict(graph_, target, scene).pseudo_label;
            std::optional<Tensor> base_pred;
            if (baseline) base_pred = run_edge_model(graph_, *direct, *baseline, scene);

            for (const auto& [name, fn] : fns) {
                if (edge_pred) edge_sum[name] += fn(*edge_pred, gt);
                if (ngc_pred) ngc_sum[name] += fn(*ngc_pred, gt);
            }
            if (base_pred && edge_pred)
                edge_improved += metrics::pixels_improved_pct(spec, *edge_pred, *base_pred, gt);
            if (base_pred && ngc_pred)
                ngc_improved += metrics::pixels_improved_pct(spec, *ngc_pred, *base_pred, gt);
        }

        double n = double(scenes.size());
        NodeEval ev;
        if (generation >= 1)
            for (const auto& [name, fn] : fns)
                ev.rows.push_back({generation, spec.name, "ensemble", name, ngc_sum[name] / n});
        if (direct)
            for (const auto& [name, fn] : fns)
                ev.rows.push_back({generation, spec.name, edge_label(graph_, *direct), name,
                                   edge_sum[name] / n});
        if (generation >= 1 && baseline) {
            ev.rows.push_back({generation, spec.name, "ensemble", "pixels_improved_pct",
                               ngc_improved / n});
            ev.rows.push_back({generation, spec.name, edge_label(graph_, *direct),
                               "pixels_improved_pct", edge_improved / n});
        }
        evals[ti] = std::move(ev);
    });

    std::vector<MetricRow> rows;
    for (auto& ev : evals)
        for (auto& r : ev.rows) rows.push_back(std::move(r));

    std::vector<report::Row> csv;
    for (const auto& r : rows) csv.push_back(to_report_row(r));
    report::write_csv(run_dir_ / "reports" /
                          ("eval_gen" + std::to_string(generation) + ".csv"),
                      csv);

    // refresh the cross-generation summary from every eval report present
    std::vector<report::Row> all;
    for (int g = 0;; ++g) {
        fs::path f = run_dir_ / "reports" / ("eval_gen" + std::to_string(g) + ".csv");
        if (!fs::exists(f)) {
            if (g > generation) break;
            continue;
        }
        for (auto& r : report::read_csv(f)) all.push_back(std::move(r));
    }
    report::write_summary(run_dir_ / "reports" / "summary.json", report::build_summary(all));
    append_timing(run_dir_, usage, elapsed_sec(t0));
    return rows;
}

// ---------------------------------------------------------------------------
// Full pipeline

void Experiment::run_experiment() {
    auto stage = [&](const std::string& name, const std::function<void()>& fn) {
        try {
            fn();
        } catch (const std::exception& ex) {
            throw std::runtime_error("stage " + name + " failed (seed " +
                                     std::to_string(config_.seed) + "): " + ex.what());
        }
    };
    auto eval_file = [&](int g) {
        return run_dir_ / "reports" / ("eval_gen" + std::to_string(g) + ".csv");
    };

    if (!has_pretrained()) stage("pretrain", [&] { pretrain_supervised(); });
    if (graph_.ensembles.empty()) stage("build-graph", [&] { build_graph_greedy(); });
    if (!fs::exists(eval_file(0))) stage("evaluate-gen0", [&] { evaluate(0); });
    for (int k = 1; k <= config_.iterations; ++k) {
        if (completed_iterations() < k)
            stage("iterate-" + std::to_string(k), [&] { run_unsupervised_iteration(k); });
        if (!fs::exists(eval_file(k)))
            stage("evaluate-gen" + std::to_string(k), [&] { evaluate(k); });
    }
}

}  // namespace ngc::orchestrator
