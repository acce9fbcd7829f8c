#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ngc/nn.hpp"
#include "ngc/repr.hpp"
#include "ngc/tensor.hpp"

namespace ngc::graph {

// A node holds one scene representation; sensor nodes come from input data
// and are never predicted.
struct GraphNode {
    int id = 0;
    NodeSpec spec;
    bool sensor = false;
};

// A hyperedge transforms the layers of its input clique into its output
// node's layer via a dense learner.
struct HyperEdge {
    int id = 0;
    std::vector<int> clique;  // ordered input node ids, length >= 1
    int output = 0;
    std::string checkpoint;               // relative path once trained
    std::optional<DenseModel> model;      // loaded learner, when available

    bool operator==(const HyperEdge& o) const {
        return id == o.id && clique == o.clique && output == o.output;
    }
};

// Sensor-rooted chain of edges: each edge consumes the previous edge's
// output, any additional clique inputs must be sensors or earlier outputs.
struct Path {
    std::vector<int> edges;
    bool operator==(const Path&) const = default;
    bool operator<(const Path& o) const { return edges < o.edges; }
};

struct Graph {
    std::vector<GraphNode> nodes;
    std::vector<HyperEdge> edges;
    // Selected ensembles: target node id -> paths in rank order (the order is
    // authoritative for vote tie-breaks).
    std::map<int, std::vector<Path>> ensembles;

    const GraphNode& node(int id) const;
    const HyperEdge& edge(int id) const;
    const GraphNode* find_node(const std::string& name) const;
    int node_id(const std::string& name) const;  // throws for unknown names

    // Structural invariants: unique ids, cliques reference known nodes,
    // sensors are never outputs, no duplicate (clique, output) pairs,
    // ensemble paths are well-formed chains ending at their target.
    void validate() const;
};

// The fixed learning graph of the synthetic world: rgb is the only sensor,
// every other node gets a direct rgb edge plus a curated set of
// cross-representation edges.
Graph default_world_graph();

// All sensor-rooted paths of length <= max_hops ending at target,
// deduplicated, sorted lexicographically by edge-id sequence.
std::vector<Path> enumerate_paths(const Graph& g, int target, int max_hops);

// Runs the chain of learners on the given sensor layers and returns the
// terminal prediction. Intermediate layers are learner outputs, never ground
// truth. Throws if a required sensor layer is missing or a model is absent.
Tensor evaluate_path(const Graph& g, const Path& path,
                     const std::map<std::string, Tensor>& sensor_layers);

struct ConsensusResult {
    Tensor pseudo_label;               // f32 (regression) or u16 labels (classification)
    Tensor dispersion;                 // per-element std, or agreement fraction
    int path_count = 1;
    std::optional<std::vector<uint8_t>> mask;  // per element, present once gated

    bool categorical() const { return pseudo_label.dtype == DType::U16; }
};

// Per-element median (even count: mean of the two central values);
// dispersion is the per-element population standard deviation.
ConsensusResult consensus_median(const std::vector<Tensor>& predictions);

// Per-element mean; same dispersion convention. Used by the variance
// identity of the unsupervised loss.
ConsensusResult consensus_mean(const std::vector<Tensor>& predictions);

// Per-element plurality vote over label maps; ties go to the vote cast by
// the highest-ranked path (list order = rank). Dispersion holds the winning
// vote fraction.
ConsensusResult consensus_vote(const std::vector<Tensor>& predictions);

// Confidence gating: keeps elements with dispersion <= tau (regression) or
// agreement >= alpha (classification).
struct GateConfig {
    std::optional<double> tau;    // regression dispersion threshold
    std::optional<double> alpha;  // classification agreement threshold

    bool operator==(const GateConfig&) const = default;
};
ConsensusResult gate_confidence(ConsensusResult result, const GateConfig& gate);

// Evaluates every selected path for the target and applies the
// kind-appropriate consensus operator.
ConsensusResult ensemble_predict(const Graph& g, int target,
                                 const std::map<std::string, Tensor>& sensor_layers);

// Sum over paths of the mean squared deviation from the pseudo-label. With
// the mean as pseudo-label this equals path count times the mean sample
// variance (divisor N).
double unsupervised_loss(const std::vector<Tensor>& predictions, const Tensor& pseudo_label);
double mean_sample_variance(const std::vector<Tensor>& predictions);

// Topology file: nodes, hyperedges (with checkpoint paths), ensembles.
// Learner weights live in checkpoints, not here.
void save_topology(const Graph& g, const std::filesystem::path& file);
Graph load_topology(const std::filesystem::path& file);

}  // namespace ngc::graph
