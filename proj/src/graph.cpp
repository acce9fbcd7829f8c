#include "ngc/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <stdexcept>

#include "ngc/features.hpp"
#include "nlohmann/json.hpp"

namespace ngc::graph {

using json = nlohmann::ordered_json;

const GraphNode& Graph::node(int id) const {
    for (const auto& n : nodes)
        if (n.id == id) return n;
    throw std::out_of_range("no node with id " + std::to_string(id));
}

const HyperEdge& Graph::edge(int id) const {
    for (const auto& e : edges)
        if (e.id == id) return e;
    throw std::out_of_range("no edge with id " + std::to_string(id));
}

const GraphNode* Graph::find_node(const std::string& name) const {
    for (const auto& n : nodes)
        if (n.spec.name == name) return &n;
    return nullptr;
}

int Graph::node_id(const std::string& name) const {
    const GraphNode* n = find_node(name);
    if (!n) throw std::out_of_range("no node named '" + name + "'");
    return n->id;
}

namespace {

// Chain rule shared by validate() and enumerate_paths(): each edge consumes
// the previous edge's output; remaining clique inputs must be sensors or
// outputs produced earlier in the chain; no node is produced twice.
bool chain_is_valid(const Graph& g, const std::vector<int>& edge_ids) {
    if (edge_ids.empty()) return false;
    std::set<int> available;
    for (const auto& n : g.nodes)
        if (n.sensor) available.insert(n.id);
    int prev_output = -1;
    std::set<int> produced;
    for (size_t i = 0; i < edge_ids.size(); ++i) {
        const HyperEdge& e = g.edge(edge_ids[i]);
        if (i > 0 && std::find(e.clique.begin(), e.clique.end(), prev_output) == e.clique.end())
            return false;
        for (int in : e.clique)
            if (!available.count(in)) return false;
        if (produced.count(e.output)) return false;
        produced.insert(e.output);
        available.insert(e.output);
        prev_output = e.output;
    }
    return true;
}

}  // namespace

void Graph::validate() const {
    std::set<int> node_ids;
    std::set<std::string> names;
    for (const auto& n : nodes) {
        if (!node_ids.insert(n.id).second)
            throw std::invalid_argument("duplicate node id " + std::to_string(n.id));
        if (n.spec.name.empty() || !names.insert(n.spec.name).second)
            throw std::invalid_argument("duplicate or empty node name '" + n.spec.name + "'");
        if (n.spec.categorical && n.spec.channels < 2)
            throw std::invalid_argument("categorical node '" + n.spec.name + "' needs >= 2 classes");
        if (n.spec.channels < 1)
            throw std::invalid_argument("node '" + n.spec.name + "' has no channels");
    }
    std::set<int> edge_ids;
    std::set<std::pair<std::vector<int>, int>> signatures;
    for (const auto& e : edges) {
        if (!edge_ids.insert(e.id).second)
            throw std::invalid_argument("duplicate edge id " + std::to_string(e.id));
        if (e.clique.empty()) throw std::invalid_argument("edge with empty clique");
        for (int in : e.clique) node(in);
        if (node(e.output).sensor)
            throw std::invalid_argument("sensor node '" + node(e.output).spec.name +
                                        "' cannot be an edge output");
        if (std::find(e.clique.begin(), e.clique.end(), e.output) != e.clique.end())
            throw std::invalid_argument("edge output inside its own clique");
        if (!signatures.insert({e.clique, e.output}).second)
            throw std::invalid_argument("two edges share the same (clique, output) pair");
    }
    for (const auto& [target, paths] : ensembles) {
        if (node(target).sensor)
            throw std::invalid_argument("ensemble target is a sensor node");
        for (const auto& p : paths) {
            if (!chain_is_valid(*this, p.edges))
                throw std::invalid_argument("ensemble path is not a valid chain");
            if (edge(p.edges.back()).output != target)
                throw std::invalid_argument("ensemble path does not end at its target");
        }
    }
}

Graph default_world_graph() {
    Graph g;
    int id = 0;
    for (const auto& spec : world_nodes())
        g.nodes.push_back({id++, spec, spec.name == "rgb"});

    const std::vector<std::pair<std::string, std::vector<std::string>>> deps = {
        {"depth", {"half", "seg", "normC", "normW"}},
        {"normC", {"normW", "depth", "wire"}},
        {"normW", {"normC", "depth", "wire", "half"}},
        {"seg", {"depth", "normW", "half"}},
        {"wire", {"seg", "depth", "half"}},
        {"pose", {"normC", "normW", "seg", "half", "depth"}},
        {"half", {"depth", "seg"}},
    };
    int eid = 0;
    for (const auto& [target, inputs] : deps) {
        g.edges.push_back({eid++, {g.node_id("rgb")}, g.node_id(target), "", std::nullopt});
        for (const auto& in : inputs)
            g.edges.push_back({eid++, {g.node_id(in)}, g.node_id(target), "", std::nullopt});
    }
    g.validate();
    return g;
}

std::vector<Path> enumerate_paths(const Graph& g, int target, int max_hops) {
    if (g.node(target).sensor) throw std::invalid_argument("target is a sensor node");
    if (max_hops < 1) throw std::invalid_argument("max_hops must be >= 1");

    std::vector<Path> found;
    std::vector<int> chain;
    std::set<int> available;
    for (const auto& n : g.nodes)
        if (n.sensor) available.insert(n.id);

    auto extend = [&](auto&& self, int prev_output, std::set<int>& produced) -> void {
        for (const auto& e : g.edges) {
            if (prev_output >= 0 &&
                std::find(e.clique.begin(), e.clique.end(), prev_output) == e.clique.end())
                continue;
            if (produced.count(e.output)) continue;
            bool ready = true;
            for (int in : e.clique)
                if (!available.count(in) && !produced.count(in)) ready = false;
            if (!ready) continue;

            chain.push_back(e.id);
            produced.insert(e.output);
            if (e.output == target)
                found.push_back({chain});
            else if (chain.size() < static_cast<size_t>(max_hops))
                self(self, e.output, produced);
            produced.erase(e.output);
            chain.pop_back();
        }
    };
    std::set<int> produced;
    extend(extend, -1, produced);
    std::sort(found.begin(), found.end());
    found.erase(std::unique(found.begin(), found.end()), found.end());
    return found;
}

Tensor evaluate_path(const Graph& g, const Path& path,
                     const std::map<std::string, Tensor>& sensor_layers) {
    if (path.edges.empty()) throw std::invalid_argument("empty path");
    std::map<int, const Tensor*> layers;
    std::map<int, Tensor> computed;
    int height = -1, width = -1;

    auto layer_of = [&](int node_id) -> const Tensor& {
        auto it = layers.find(node_id);
        if (it != layers.end()) return *it->second;
        const GraphNode& n = g.node(node_id);
        if (!n.sensor)
            throw std::invalid_argument("path uses layer '" + n.spec.name +
                                        "' before it is produced");
        auto sit = sensor_layers.find(n.spec.name);
        if (sit == sensor_layers.end())
            throw std::invalid_argument("missing sensor layer '" + n.spec.name + "'");
        layers[node_id] = &sit->second;
        if (n.spec.is_map && height < 0) {
            height = static_cast<int>(sit->second.shape[0]);
            width = static_cast<int>(sit->second.shape[1]);
        }
        return sit->second;
    };

    int terminal = -1;
    for (int eid : path.edges) {
        const HyperEdge& e = g.edge(eid);
        if (!e.model)
            throw std::runtime_error("edge " + std::to_string(eid) + " has no trained model");
        const NodeSpec& out_spec = g.node(e.output).spec;

        Tensor X;
        for (size_t k = 0; k < e.clique.size(); ++k) {
            const NodeSpec& in_spec = g.node(e.clique[k]).spec;
            Tensor part = features::edge_features(in_spec, out_spec, layer_of(e.clique[k]));
            if (k == 0) {
                X = std::move(part);
            } else {
                if (part.shape[0] != X.shape[0])
                    throw TensorError("clique feature row mismatch");
                uint32_t c0 = X.shape[1], c1 = part.shape[1];
                Tensor merged = Tensor::zeros_f32({X.shape[0], c0 + c1});
                for (uint32_t r = 0; r < X.shape[0]; ++r) {
                    std::copy_n(X.f.begin() + static_cast<size_t>(r) * c0, c0,
                                merged.f.begin() + static_cast<size_t>(r) * (c0 + c1));
                    std::copy_n(part.f.begin() + static_cast<size_t>(r) * c1, c1,
                                merged.f.begin() + static_cast<size_t>(r) * (c0 + c1) + c0);
                }
                X = std::move(merged);
            }
        }
        if (X.shape[1] != e.model->spec.input_dim)
            throw TensorError("edge " + std::to_string(eid) + " expects input dim " +
                              std::to_string(e.model->spec.input_dim) + ", got " +
                              std::to_string(X.shape[1]));

        Tensor rows = forward(*e.model, X);
        computed[e.output] = features::output_to_layer(out_spec, rows, height, width);
        layers[e.output] = &computed[e.output];
        terminal = e.output;
    }
    return std::move(computed.at(terminal));
}

namespace {

void check_predictions(const std::vector<Tensor>& preds, DType want) {
    if (preds.empty()) throw std::invalid_argument("consensus needs at least one prediction");
    for (const auto& p : preds) {
        if (p.dtype != want)
            throw std::invalid_argument(want == DType::F32
                                            ? "regression consensus expects f32 predictions"
                                            : "vote consensus expects label predictions");
        if (p.shape != preds.front().shape)
            throw std::invalid_argument("consensus predictions disagree on shape");
    }
}

ConsensusResult reduce_continuous(const std::vector<Tensor>& preds, bool use_median) {
    check_predictions(preds, DType::F32);
    const size_t n = preds.front().f.size();
    const int N = static_cast<int>(preds.size());
    ConsensusResult r;
    r.pseudo_label = Tensor::zeros_f32(preds.front().shape);
    r.dispersion = Tensor::zeros_f32(preds.front().shape);
    r.path_count = N;
    std::vector<double> vals(N);
    for (size_t i = 0; i < n; ++i) {
        double mean = 0.0;
        for (int a = 0; a < N; ++a) {
            vals[a] = preds[a].f[i];
            mean += vals[a];
        }
        mean /= N;
        double var = 0.0;
        for (int a = 0; a < N; ++a) var += (vals[a] - mean) * (vals[a] - mean);
        var /= N;
        double label;
        if (use_median) {
            std::sort(vals.begin(), vals.end());
            label = (N % 2 == 1) ? vals[N / 2] : 0.5 * (vals[N / 2 - 1] + vals[N / 2]);
        } else {
            label = mean;
        }
        r.pseudo_label.f[i] = static_cast<float>(label);
        r.dispersion.f[i] = static_cast<float>(std::sqrt(var));
    }
    return r;
}

}  // namespace

ConsensusResult consensus_median(const std::vector<Tensor>& predictions) {
    return reduce_continuous(predictions, true);
}

ConsensusResult consensus_mean(const std::vector<Tensor>& predictions) {
    return reduce_continuous(predictions, false);
}

ConsensusResult consensus_vote(const std::vector<Tensor>& predictions) {
    check_predictions(predictions, DType::U16);
    const size_t n = predictions.front().u.size();
    const int N = static_cast<int>(predictions.size());
    ConsensusResult r;
    r.pseudo_label = Tensor::zeros_u16(predictions.front().shape);
    r.dispersion = Tensor::zeros_f32(predictions.front().shape);
    r.path_count = N;
    for (size_t i = 0; i < n; ++i) {
        // Plurality with rank-order tie-break; O(N^2) per element is fine for
        // the handful of paths an ensemble holds.
        int best_count = 0, winner_rank = 0;
        for (int a = 0; a < N; ++a) {
            int count = 0;
            for (int b = 0; b < N; ++b) count += predictions[b].u[i] == predictions[a].u[i];
            if (count > best_count) {
                best_count = count;
                winner_rank = a;
            }
        }
        r.pseudo_label.u[i] = predictions[winner_rank].u[i];
        r.dispersion.f[i] = static_cast<float>(best_count) / static_cast<float>(N);
    }
    return r;
}

ConsensusResult gate_confidence(ConsensusResult result, const GateConfig& gate) {
    const size_t n = result.dispersion.f.size();
    std::vector<uint8_t> mask(n, 1);
    if (result.categorical()) {
        if (gate.alpha)
            for (size_t i = 0; i < n; ++i) mask[i] = result.dispersion.f[i] >= *gate.alpha;
    } else {
        if (gate.tau)
            for (size_t i = 0; i < n; ++i) mask[i] = result.dispersion.f[i] <= *gate.tau;
    }
    result.mask = std::move(mask);
    return result;
}

ConsensusResult ensemble_predict(const Graph& g, int target,
                                 const std::map<std::string, Tensor>& sensor_layers) {
    auto it = g.ensembles.find(target);
    if (it == g.ensembles.end() || it->second.empty())
        throw std::invalid_argument("empty ensemble for node '" + g.node(target).spec.name + "'");
    std::vector<Tensor> preds;
    preds.reserve(it->second.size());
    for (const auto& p : it->second) preds.push_back(evaluate_path(g, p, sensor_layers));
    return g.node(target).spec.categorical ? consensus_vote(preds) : consensus_median(preds);
}

double unsupervised_loss(const std::vector<Tensor>& predictions, const Tensor& pseudo_label) {
    check_predictions(predictions, DType::F32);
    if (pseudo_label.shape != predictions.front().shape)
        throw std::invalid_argument("pseudo-label shape mismatch");
    const size_t n = pseudo_label.f.size();
    double loss = 0.0;
    for (const auto& p : predictions) {
        double sum = 0.0;
        for (size_t i = 0; i < n; ++i) {
            double d = static_cast<double>(p.f[i]) - static_cast<double>(pseudo_label.f[i]);
            sum += d * d;
        }
        loss += sum / static_cast<double>(n);
    }
    return loss;
}

double mean_sample_variance(const std::vector<Tensor>& predictions) {
    check_predictions(predictions, DType::F32);
    const size_t n = predictions.front().f.size();
    const int N = static_cast<int>(predictions.size());
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
        double mean = 0.0;
        for (int a = 0; a < N; ++a) mean += predictions[a].f[i];
        mean /= N;
        double var = 0.0;
        for (int a = 0; a < N; ++a) {
            double d = predictions[a].f[i] - mean;
            var += d * d;
        }
        total += var / N;
    }
    return total / static_cast<double>(n);
}

namespace {

std::string kind_string(const NodeSpec& s) {
    if (s.categorical) return "categorical_map";
    if (!s.is_map) return "vector";
    return "continuous_map";
}

void kind_from_string(const std::string& kind, NodeSpec& s) {
    if (kind == "categorical_map") {
        s.is_map = true;
        s.categorical = true;
    } else if (kind == "vector") {
        s.is_map = false;
        s.categorical = false;
    } else if (kind == "continuous_map") {
        s.is_map = true;
        s.categorical = false;
    } else {
        throw std::invalid_argument("unknown node kind '" + kind + "'");
    }
}

}  // namespace

void save_topology(const Graph& g, const std::filesystem::path& file) {
    json j;
    j["nodes"] = json::array();
    for (const auto& n : g.nodes) {
        j["nodes"].push_back({{"id", n.id},
                              {"name", n.spec.name},
                              {"kind", kind_string(n.spec)},
                              {"channels", n.spec.channels},
                              {"units", n.spec.units},
                              {"direction", n.spec.direction},
                              {"sensor", n.sensor}});
    }
    j["edges"] = json::array();
    for (const auto& e : g.edges) {
        j["edges"].push_back(
            {{"id", e.id}, {"clique", e.clique}, {"output", e.output}, {"checkpoint", e.checkpoint}});
    }
    j["ensembles"] = json::array();
    for (const auto& [target, paths] : g.ensembles) {
        json jp = json::array();
        for (const auto& p : paths) jp.push_back(p.edges);
        j["ensembles"].push_back({{"target", target}, {"paths", jp}});
    }
    std::ofstream out(file);
    if (!out) throw std::runtime_error("cannot write " + file.string());
    out << j.dump(1) << "\n";
}

Graph load_topology(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw std::runtime_error("cannot read " + file.string());
    json j = json::parse(in);
    Graph g;
    for (const auto& jn : j.at("nodes")) {
        GraphNode n;
        n.id = jn.at("id").get<int>();
        n.spec.name = jn.at("name").get<std::string>();
        kind_from_string(jn.at("kind").get<std::string>(), n.spec);
        n.spec.channels = jn.at("channels").get<int>();
        n.spec.units = jn.at("units").get<std::string>();
        n.spec.direction = jn.at("direction").get<bool>();
        n.sensor = jn.at("sensor").get<bool>();
        g.nodes.push_back(std::move(n));
    }
    for (const auto& je : j.at("edges")) {
        HyperEdge e;
        e.id = je.at("id").get<int>();
        e.clique = je.at("clique").get<std::vector<int>>();
        e.output = je.at("output").get<int>();
        e.checkpoint = je.at("checkpoint").get<std::string>();
        g.edges.push_back(std::move(e));
    }
    for (const auto& js : j.at("ensembles")) {
        std::vector<Path> paths;
        for (const auto& jp : js.at("paths")) paths.push_back({jp.get<std::vector<int>>()});
        g.ensembles[js.at("target").get<int>()] = std::move(paths);
    }
    g.validate();
    return g;
}

}  // namespace ngc::graph
