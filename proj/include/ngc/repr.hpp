#pragma once

#include <string>
#include <vector>

namespace ngc {

// One scene representation ("node" of the graph). Maps are dense HxW layers,
// vectors are per-scene summaries. Categorical maps store u16 labels and
// `channels` counts their classes; continuous maps use `channels` float
// channels per pixel.
struct NodeSpec {
    std::string name;
    bool is_map = true;
    bool categorical = false;
    bool direction = false;  // compared with an angular metric
    int channels = 1;
    std::string units;
};

// The fixed node set of the synthetic world.
const std::vector<NodeSpec>& world_nodes();

// Lookup by name; throws std::out_of_range for unknown nodes.
const NodeSpec& node_spec(const std::string& name);

bool is_world_node(const std::string& name);

}  // namespace ngc
