#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <set>

#include "ngc/features.hpp"
#include "ngc/graph.hpp"
#include "ngc/rng.hpp"
#include "ngc/world.hpp"

using namespace ngc;
using namespace ngc::graph;
namespace fs = std::filesystem;

namespace {

// Brute-force path enumeration written independently of the library:
// depth-first over edges, tracking which nodes a chain has produced.
void oracle_extend(const Graph& g, int target, int max_hops, std::vector<int>& chain,
                   std::set<int>& produced, const std::set<int>& sensors,
                   std::set<std::vector<int>>& out) {
    if (int(chain.size()) > max_hops) return;
    if (!chain.empty() && g.edge(chain.back()).output == target) out.insert(chain);
    if (int(chain.size()) == max_hops) return;
    for (const auto& e : g.edges) {
        if (produced.count(e.output)) continue;
        bool ok = true;
        bool uses_prev = chain.empty();
        int prev = chain.empty() ? -1 : g.edge(chain.back()).output;
        for (int in : e.clique) {
            if (in == prev) uses_prev = true;
            if (!sensors.count(in) && !produced.count(in)) ok = false;
        }
        if (!ok || !uses_prev) continue;
        chain.push_back(e.id);
        produced.insert(e.output);
        oracle_extend(g, target, max_hops, chain, produced, sensors, out);
        produced.erase(e.output);
        chain.pop_back();
    }
}

std::set<std::vector<int>> oracle_paths(const Graph& g, int target, int max_hops) {
    std::set<std::vector<int>> out;
    std::set<int> sensors;
    for (const auto& n : g.nodes)
        if (n.sensor) sensors.insert(n.id);
    std::vector<int> chain;
    std::set<int> produced;
    oracle_extend(g, target, max_hops, chain, produced, sensors, out);
    return out;
}

Tensor map_f32(std::vector<float> v, uint32_t h, uint32_t w, uint32_t c = 1) {
    return Tensor::from_f32({h, w, c}, std::move(v));
}

Tensor labels(std::vector<uint16_t> v, uint32_t h, uint32_t w) {
    return Tensor::from_u16({h, w}, std::move(v));
}

}  // namespace

TEST_CASE("the default world graph is valid and rgb is its only sensor") {
    Graph g = default_world_graph();
    CHECK_NOTHROW(g.validate());
    CHECK(g.nodes.size() == world_nodes().size());
    int sensors = 0;
    for (const auto& n : g.nodes) sensors += n.sensor ? 1 : 0;
    CHECK(sensors == 1);
    CHECK(g.node(g.node_id("rgb")).sensor);

    // every non-sensor node keeps a direct sensor edge
    for (const auto& n : g.nodes) {
        if (n.sensor) continue;
        bool direct = false;
        for (const auto& e : g.edges)
            direct |= e.output == n.id && e.clique == std::vector<int>{g.node_id("rgb")};
        CHECK(direct);
    }

    CHECK_THROWS_AS(g.node_id("nope"), std::out_of_range);
    CHECK(g.find_node("nope") == nullptr);
}

TEST_CASE("path enumeration matches a brute-force oracle on the world graph") {
    Graph g = default_world_graph();
    for (const auto& n : g.nodes) {
        if (n.sensor) continue;
        for (int hops : {1, 2, 3}) {
            auto got = enumerate_paths(g, n.id, hops);
            auto want = oracle_paths(g, n.id, hops);
            REQUIRE(got.size() == want.size());
            for (const auto& p : got) CHECK(want.count(p.edges) == 1);
            // sorted lexicographically and free of duplicates
            for (size_t i = 0; i + 1 < got.size(); ++i) CHECK(got[i] < got[i + 1]);
        }
    }

    CHECK_THROWS_AS(enumerate_paths(g, g.node_id("rgb"), 2), std::invalid_argument);
    CHECK_THROWS_AS(enumerate_paths(g, g.node_id("depth"), 0), std::invalid_argument);
}

TEST_CASE("path enumeration on a hand-built graph") {
    Graph g;
    NodeSpec ms{"m", true, false, false, 1, ""};
    g.nodes = {{0, {"s", true, false, false, 1, ""}, true},
               {1, {"a", true, false, false, 1, ""}, false},
               {2, {"b", true, false, false, 1, ""}, false}};
    g.edges = {{0, {0}, 1, "", std::nullopt},    // s -> a
               {1, {0}, 2, "", std::nullopt},    // s -> b
               {2, {1}, 2, "", std::nullopt},    // a -> b
               {3, {2}, 1, "", std::nullopt},    // b -> a
               {4, {0, 1}, 2, "", std::nullopt}};  // {s,a} -> b
    g.validate();

    auto to_b_1 = enumerate_paths(g, 2, 1);
    REQUIRE(to_b_1.size() == 1);
    CHECK(to_b_1[0].edges == std::vector<int>{1});

    auto to_b_2 = enumerate_paths(g, 2, 2);
    // s->b, s->a->b, s->a->{s,a}->b
    REQUIRE(to_b_2.size() == 3);
    CHECK(to_b_2[0].edges == std::vector<int>{0, 2});
    CHECK(to_b_2[1].edges == std::vector<int>{0, 4});
    CHECK(to_b_2[2].edges == std::vector<int>{1});

    // no chain may produce the same node twice
    for (const auto& p : enumerate_paths(g, 1, 3)) {
        std::set<int> outs;
        for (int e : p.edges) CHECK(outs.insert(g.edge(e).output).second);
    }
}

TEST_CASE("structural validation rejects malformed graphs") {
    Graph g;
    g.nodes = {{0, {"s", true, false, false, 1, ""}, true},
               {1, {"a", true, false, false, 1, ""}, false}};
    g.edges = {{0, {0}, 1, "", std::nullopt}};
    CHECK_NOTHROW(g.validate());

    SUBCASE("duplicate node ids") {
        g.nodes.push_back({1, {"b", true, false, false, 1, ""}, false});
        CHECK_THROWS_AS(g.validate(), std::invalid_argument);
    }
    SUBCASE("sensor used as an output") {
        g.edges.push_back({1, {1}, 0, "", std::nullopt});
        CHECK_THROWS_AS(g.validate(), std::invalid_argument);
    }
    SUBCASE("output inside its own clique") {
        g.edges.push_back({1, {1}, 1, "", std::nullopt});
        CHECK_THROWS_AS(g.validate(), std::invalid_argument);
    }
    SUBCASE("unknown clique node") {
        g.edges.push_back({1, {7}, 1, "", std::nullopt});
        CHECK_THROWS_AS(g.validate(), std::out_of_range);
    }
    SUBCASE("duplicate (clique, output) pair") {
        g.edges.push_back({1, {0}, 1, "", std::nullopt});
        CHECK_THROWS_AS(g.validate(), std::invalid_argument);
    }
    SUBCASE("ensemble path must end at its target") {
        g.ensembles[1] = {Path{{0}}};
        CHECK_NOTHROW(g.validate());
        g.nodes.push_back({2, {"b", true, false, false, 1, ""}, false});
        g.edges.push_back({1, {1}, 2, "", std::nullopt});
        g.ensembles[1] = {Path{{0, 1}}};  // ends at b, not a
        CHECK_THROWS_AS(g.validate(), std::invalid_argument);
    }
    SUBCASE("ensemble path must start at a sensor") {
        g.nodes.push_back({2, {"b", true, false, false, 1, ""}, false});
        g.edges.push_back({1, {1}, 2, "", std::nullopt});
        g.ensembles[2] = {Path{{1}}};  // first edge consumes a non-sensor
        CHECK_THROWS_AS(g.validate(), std::invalid_argument);
    }
}

TEST_CASE("median consensus: odd, even, and its dispersion") {
    // 3 paths, 2x2 single-channel maps
    std::vector<Tensor> odd = {map_f32({1, 10, -1, 0}, 2, 2), map_f32({2, 30, -5, 0}, 2, 2),
                               map_f32({3, 20, -3, 0}, 2, 2)};
    ConsensusResult r = consensus_median(odd);
    CHECK_FALSE(r.categorical());
    CHECK(r.path_count == 3);
    CHECK(r.pseudo_label.f[0] == 2.0f);
    CHECK(r.pseudo_label.f[1] == 20.0f);
    CHECK(r.pseudo_label.f[2] == -3.0f);
    CHECK(r.pseudo_label.f[3] == 0.0f);
    // population std of {1,2,3} is sqrt(2/3)
    CHECK(r.dispersion.f[0] == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(1e-6));
    CHECK(r.dispersion.f[3] == 0.0f);

    // even count: mean of the two central values
    std::vector<Tensor> even = {map_f32({1}, 1, 1), map_f32({100}, 1, 1), map_f32({3}, 1, 1),
                                map_f32({2}, 1, 1)};
    CHECK(consensus_median(even).pseudo_label.f[0] == doctest::Approx(2.5));

    // permutation invariance
    std::vector<Tensor> perm = {odd[2], odd[0], odd[1]};
    ConsensusResult r2 = consensus_median(perm);
    CHECK(r2.pseudo_label.f == r.pseudo_label.f);
    for (size_t i = 0; i < 4; ++i)
        CHECK(r2.dispersion.f[i] == doctest::Approx(r.dispersion.f[i]).epsilon(1e-6));

    CHECK_THROWS_AS(consensus_median({}), std::invalid_argument);
    CHECK_THROWS_AS(consensus_median({map_f32({1}, 1, 1), map_f32({1, 2}, 1, 2)}),
                    std::invalid_argument);
}

TEST_CASE("plurality vote with rank-order tie break") {
    // clear majority
    std::vector<Tensor> maj = {labels({5}, 1, 1), labels({7}, 1, 1), labels({7}, 1, 1)};
    ConsensusResult r = consensus_vote(maj);
    CHECK(r.categorical());
    CHECK(r.pseudo_label.u[0] == 7);
    CHECK(r.dispersion.f[0] == doctest::Approx(2.0 / 3.0));

    // 2-2 tie: the earliest-ranked path's vote wins
    std::vector<Tensor> tie = {labels({4}, 1, 1), labels({9}, 1, 1), labels({9}, 1, 1),
                               labels({4}, 1, 1)};
    CHECK(consensus_vote(tie).pseudo_label.u[0] == 4);
    std::vector<Tensor> tie2 = {tie[1], tie[0], tie[3], tie[2]};
    CHECK(consensus_vote(tie2).pseudo_label.u[0] == 9);
    CHECK(consensus_vote(tie).dispersion.f[0] == doctest::Approx(0.5));

    // unanimous agreement pins dispersion at 1
    std::vector<Tensor> same = {labels({3, 1}, 1, 2), labels({3, 1}, 1, 2)};
    ConsensusResult u = consensus_vote(same);
    CHECK(u.pseudo_label.u == std::vector<uint16_t>{3, 1});
    CHECK(u.dispersion.f[0] == 1.0f);
    CHECK(u.dispersion.f[1] == 1.0f);
}

TEST_CASE("identical predictions have zero spread under every operator") {
    Tensor p = map_f32({1.5f, -2, 3, 4}, 2, 2);
    for (auto op : {consensus_median, consensus_mean}) {
        ConsensusResult r = op({p, p, p});
        CHECK(r.pseudo_label.f == p.f);
        for (float d : r.dispersion.f) CHECK(d == 0.0f);
    }
}

TEST_CASE("mean-consensus unsupervised loss equals N times the sample variance") {
    Rng rng(314);
    for (int fixture = 0; fixture < 100; ++fixture) {
        int N = 2 + int(rng.below(6));
        uint32_t h = 2 + uint32_t(rng.below(3)), w = 2 + uint32_t(rng.below(3));
        uint32_t c = 1 + uint32_t(rng.below(2));
        std::vector<Tensor> preds;
        for (int k = 0; k < N; ++k) {
            std::vector<float> v(size_t(h) * w * c);
            for (auto& x : v) x = float(rng.uniform(-5, 5));
            preds.push_back(map_f32(std::move(v), h, w, c));
        }
        ConsensusResult mean = consensus_mean(preds);
        double lhs = unsupervised_loss(preds, mean.pseudo_label);
        double rhs = double(N) * mean_sample_variance(preds);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-9));

        // the mean is the minimizer: any other pseudo-label does worse
        ConsensusResult med = consensus_median(preds);
        CHECK(unsupervised_loss(preds, med.pseudo_label) >= lhs - 1e-12);
    }
}

TEST_CASE("confidence gating masks exactly the low-agreement elements") {
    // regression: keep dispersion <= tau
    std::vector<Tensor> preds = {map_f32({0, 0, 0, 0}, 2, 2), map_f32({1, 3, 0.5f, 0}, 2, 2)};
    ConsensusResult r = consensus_median(preds);
    GateConfig gate;
    gate.tau = 0.5;
    ConsensusResult gated = gate_confidence(r, gate);
    REQUIRE(gated.mask.has_value());
    // dispersions are {0.5, 1.5, 0.25, 0}
    CHECK((*gated.mask)[0] == 1);
    CHECK((*gated.mask)[1] == 0);
    CHECK((*gated.mask)[2] == 1);
    CHECK((*gated.mask)[3] == 1);

    // classification: keep agreement >= alpha
    std::vector<Tensor> votes = {labels({1, 1}, 1, 2), labels({1, 2}, 1, 2), labels({1, 3}, 1, 2)};
    ConsensusResult v = consensus_vote(votes);
    GateConfig g2;
    g2.alpha = 0.6;
    ConsensusResult gv = gate_confidence(v, g2);
    CHECK((*gv.mask)[0] == 1);   // 3/3 agreement
    CHECK((*gv.mask)[1] == 0);   // 1/3

    // an absent threshold keeps everything
    ConsensusResult open = gate_confidence(consensus_vote(votes), GateConfig{});
    for (uint8_t m : *open.mask) CHECK(m == 1);
}

TEST_CASE("a chain of learners runs end to end and reports missing pieces") {
    // rgb(sensor, 3ch map) -> depth(1ch map): one patch-wise model
    Graph g;
    g.nodes = {{0, node_spec("rgb"), true}, {1, node_spec("depth"), false}};
    uint32_t in_dim = uint32_t(features::edge_input_dim(node_spec("rgb"), node_spec("depth")));
    ModelSpec ms{in_dim, {4}, 1, Activation::HyperbolicTangent, Head::Regression, 11};
    g.edges = {{0, {0}, 1, "", init_model(ms)}};
    g.validate();

    world::WorldConfig wc;
    wc.height = 8;
    wc.width = 8;
    world::Scene scene = world::generate_scene(wc, 1);
    std::map<std::string, Tensor> sensors = {{"rgb", scene.layer("rgb")}};

    Path p{{0}};
    Tensor pred = evaluate_path(g, p, sensors);
    CHECK(pred.shape == std::vector<uint32_t>{8, 8, 1});
    Tensor again = evaluate_path(g, p, sensors);
    CHECK(pred.f == again.f);  // pure function of inputs

    SUBCASE("missing sensor layer") {
        std::map<std::string, Tensor> empty;
        CHECK_THROWS(evaluate_path(g, p, empty));
    }
    SUBCASE("untrained edge") {
        g.edges[0].model.reset();
        try {
            evaluate_path(g, p, sensors);
            FAIL("expected an error about the missing model");
        } catch (const std::runtime_error& e) {
            CHECK(std::string(e.what()).find("no trained model") != std::string::npos);
        }
    }
    SUBCASE("ensembles of one path reduce to that path") {
        g.ensembles[1] = {p};
        ConsensusResult r = ensemble_predict(g, 1, sensors);
        CHECK(r.pseudo_label.f == pred.f);
        CHECK(r.path_count == 1);
        CHECK_THROWS_AS(ensemble_predict(g, 0, sensors), std::invalid_argument);
    }
}

TEST_CASE("topology files round trip the structure and selections") {
    Graph g = default_world_graph();
    int depth = g.node_id("depth");
    auto paths = enumerate_paths(g, depth, 2);
    REQUIRE(paths.size() >= 2);
    g.ensembles[depth] = {paths[1], paths[0]};  // order is rank, keep it
    for (auto& e : g.edges) e.checkpoint = "checkpoints/edge_" + std::to_string(e.id) + ".ngcm";

    auto dir = fs::temp_directory_path() / "ngc_graph_tests";
    fs::create_directories(dir);
    auto file = dir / "topology.json";
    save_topology(g, file);
    Graph r = load_topology(file);

    REQUIRE(r.nodes.size() == g.nodes.size());
    for (size_t i = 0; i < g.nodes.size(); ++i) {
        CHECK(r.nodes[i].id == g.nodes[i].id);
        CHECK(r.nodes[i].spec.name == g.nodes[i].spec.name);
        CHECK(r.nodes[i].sensor == g.nodes[i].sensor);
        CHECK(r.nodes[i].spec.categorical == g.nodes[i].spec.categorical);
        CHECK(r.nodes[i].spec.channels == g.nodes[i].spec.channels);
    }
    REQUIRE(r.edges.size() == g.edges.size());
    for (size_t i = 0; i < g.edges.size(); ++i) {
        CHECK(r.edges[i] == g.edges[i]);
        CHECK(r.edges[i].checkpoint == g.edges[i].checkpoint);
        CHECK_FALSE(r.edges[i].model.has_value());  // weights live in checkpoints
    }
    CHECK(r.ensembles == g.ensembles);
    CHECK_NOTHROW(r.validate());
}
