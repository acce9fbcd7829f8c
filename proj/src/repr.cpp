#include "ngc/repr.hpp"

#include <stdexcept>

namespace ngc {

const std::vector<NodeSpec>& world_nodes() {
    static const std::vector<NodeSpec> kNodes = {
        {"rgb", true, false, false, 3, "intensity"},
        {"depth", true, false, false, 1, "meters"},
        {"normC", true, false, true, 2, "degrees"},
        {"normW", true, false, true, 2, "degrees"},
        {"seg", true, true, false, 12, "class"},
        {"wire", true, true, false, 2, "class"},
        {"half", true, true, false, 2, "class"},
        {"pose", false, false, false, 6, "mixed"},
    };
    return kNodes;
}

const NodeSpec& node_spec(const std::string& name) {
    for (const auto& n : world_nodes())
        if (n.name == name) return n;
    throw std::out_of_range("unknown node: " + name);
}

bool is_world_node(const std::string& name) {
    for (const auto& n : world_nodes())
        if (n.name == name) return true;
    return false;
}

}  // namespace ngc
