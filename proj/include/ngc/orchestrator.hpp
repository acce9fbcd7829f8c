#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ngc/dataset.hpp"
#include "ngc/graph.hpp"
#include "ngc/nn.hpp"

namespace ngc::orchestrator {

struct SplitPlan {
    std::string train = "train";
    std::string val = "val";
    std::vector<std::string> unlabeled = {"unlabeled1", "unlabeled2"};  // one per iteration
    std::string eval = "eval";

    bool operator==(const SplitPlan&) const = default;
};

struct ExperimentConfig {
    SplitPlan splits;
    std::uint64_t seed = 7;
    int iterations = 1;
    int max_hops = 2;
    int samples_per_scene = 48;  // pixels drawn per scene for dense edges
    std::vector<uint32_t> hidden = {24};

    TrainConfig pretrain{.epochs = 100, .learning_rate = 0.01, .weight_decay = 1e-4,
                         .batch_size = 128, .shuffle_seed = 0};
    TrainConfig finetune{.epochs = 25, .learning_rate = 0.002, .weight_decay = 1e-4,
                         .batch_size = 64, .shuffle_seed = 0};
    // Scene-vector edges see one row per scene; a smaller batch keeps their
    // fine-tuning step count useful.
    uint32_t finetune_batch_vector = 16;

    graph::GateConfig gate;  // no thresholds by default: mask all-true

    // Intermediate layers inside paths and student inputs come from
    // single-edge outputs by default; consensus-valued intermediates were an
    // alternative reading and stay available behind this flag.
    bool consensus_intermediates = false;
    // Students normally learn from frozen teachers and swap in together;
    // sequential mode publishes each student immediately.
    bool sequential_students = false;
    // Mix the labeled training set into student fine-tuning (off: students
    // see pseudo-labels only).
    bool mix_labeled = false;
    // Greedy prefix rule: false = evaluate every prefix and keep the best,
    // true = stop at the first prefix that fails to improve.
    bool greedy_stop_at_first = false;

    bool operator==(const ExperimentConfig&) const = default;
};

void save_config(const ExperimentConfig& cfg, const std::filesystem::path& file);
ExperimentConfig load_config(const std::filesystem::path& file);

// One row of the canonical report CSV (iteration, node, edge, metric, value).
struct MetricRow {
    int iteration = 0;
    std::string node;
    std::string edge;  // "rgb->depth", "ensemble", or "-"
    std::string metric;
    double value = 0.0;
};

struct EdgeMetric {
    int edge_id = 0;
    std::string label;  // "src->dst"
    double value = 0.0;
    std::string metric;
};

struct PretrainResult {
    std::vector<EdgeMetric> val_metrics;
};

// Ranked candidates and evaluated prefixes for one target node.
struct GreedySelection {
    int target = 0;
    std::vector<graph::Path> ranked;
    std::vector<double> solo;
    std::vector<double> prefix_metric;
    std::string metric;
    int selected = 1;  // chosen prefix length
};

struct IterationReport {
    int iteration = 1;
    std::vector<EdgeMetric> edge_before, edge_after;    // validation metric per edge
    std::map<std::string, double> dispersion_before;    // node -> mean dispersion
    std::map<std::string, double> dispersion_after;
    std::map<std::string, double> reduction_pct;        // 100*(1 - after/before), before > 0
    double wall_time_sec = 0.0;                         // never part of canonical reports
};

// Exclusive writer lock on a run directory: a ".lock" file created
// atomically and removed on release. Readers (report rendering) never take
// it. A stale lock after a crash is removed by hand.
class RunLock {
  public:
    RunLock() = default;
    explicit RunLock(const std::filesystem::path& run_dir);
    ~RunLock() { release(); }
    RunLock(RunLock&& o) noexcept : file_(std::move(o.file_)), held_(o.held_) { o.held_ = false; }
    RunLock& operator=(RunLock&& o) noexcept;
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

    void release();

  private:
    std::filesystem::path file_;
    bool held_ = false;
};

// In-memory view of one run directory (config + dataset + graph state).
class Experiment {
  public:
    Experiment(std::filesystem::path run_dir, dataset::DatasetReader reader,
               ExperimentConfig config);

    // Loads config.json from an existing run directory.
    static Experiment open(const std::filesystem::path& run_dir,
                           const std::filesystem::path& data_dir);

    const ExperimentConfig& config() const { return config_; }
    const std::filesystem::path& run_dir() const { return run_dir_; }
    graph::Graph& graph() { return graph_; }

    bool has_pretrained() const;
    bool has_topology() const;
    int completed_iterations() const;

    // Algorithm step 1: every edge trained on ground truth independently.
    PretrainResult pretrain_supervised();

    // Algorithm step 2: rank candidate paths per target on the validation
    // split and keep the best prefix. Persists topology.json.
    std::vector<GreedySelection> build_graph_greedy();

    // Algorithm step 3 for one round (1-based): consensus pseudo-labels from
    // frozen generation-(round-1) teachers, students fine-tuned, swapped in
    // atomically, generation-(round) checkpoints persisted.
    IterationReport run_unsupervised_iteration(int round);

    // Metric table on the evaluation split for one generation's weights.
    std::vector<MetricRow> evaluate(int generation);

    // Steps 1..3 end to end with per-stage persistence and resume.
    void run_experiment();

  private:
    using SceneList = std::vector<std::map<std::string, Tensor>>;

    void load_generation(int generation);
    std::filesystem::path checkpoint_path(int edge_id, int generation) const;
    std::vector<EdgeMetric> edge_val_metrics(const SceneList& val_scenes) const;
    SceneList load_labeled(const std::string& split, dataset::AuditLog& audit,
                           const std::string& usage) const;

    std::filesystem::path run_dir_;
    dataset::DatasetReader reader_;
    ExperimentConfig config_;
    graph::Graph graph_;
    int loaded_generation_ = -1;
    RunLock lock_;
};

// Pure prefix rule shared with tests: index of the best prefix (1-based
// length) under the metric's polarity; earliest wins ties. In stop-at-first
// mode evaluation conceptually halts at the first non-improving prefix.
int select_prefix(const std::vector<double>& prefix_metric, const std::string& metric,
                  bool stop_at_first);

}  // namespace ngc::orchestrator
