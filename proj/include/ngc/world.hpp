#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "ngc/repr.hpp"
#include "ngc/tensor.hpp"

namespace ngc::world {

struct WorldConfig {
    int height = 32;
    int width = 32;
    int seg_classes = 12;
    double rgb_noise = 0.4;
    std::uint64_t master_seed = 1234;
};

void validate(const WorldConfig& cfg);  // throws std::invalid_argument

// All layers of one scene, keyed by node name. Continuous/vector layers are
// f32 tensors, categorical layers are u16 label maps.
struct Scene {
    std::uint64_t id = 0;
    std::map<std::string, Tensor> layers;

    const Tensor& layer(const std::string& name) const;
};

// Deterministic: the same (config, scene_id) always yields bit-identical
// layers. Every non-sensor layer is a pure function of the latent field; the
// rgb sensor additionally carries seeded observation noise.
Scene generate_scene(const WorldConfig& cfg, std::uint64_t scene_id);

struct SplitSpec {
    std::string name;
    std::uint64_t first_id = 0;
    int count = 0;
    // Labeled splits ship every layer in the open; unlabeled splits ship only
    // the rgb sensor and keep ground truth under sealed/.
    bool labeled = true;
};

struct DatasetPlan {
    std::vector<SplitSpec> splits;
    static DatasetPlan defaults();  // train 800, val 200, unlabeled1/2 1000, eval 1000
};

void validate(const DatasetPlan& plan);  // id-range overlap, duplicate names

struct SceneEntry {
    std::uint64_t id = 0;
    std::map<std::string, std::string> files;   // node name -> path relative to root
    std::map<std::string, std::string> sealed;  // ground truth kept aside for evaluation
};

struct SplitManifest {
    std::string name;
    bool labeled = true;
    std::vector<SceneEntry> scenes;
};

struct DatasetManifest {
    WorldConfig world;
    std::vector<SplitManifest> splits;

    const SplitManifest& split(const std::string& name) const;  // throws if absent
    bool has_split(const std::string& name) const;
};

// Generates every scene and writes the tensor files plus manifest.json under
// root. Refuses to overwrite an existing dataset.
DatasetManifest make_dataset(const WorldConfig& cfg, const DatasetPlan& plan,
                             const std::filesystem::path& root);

void write_manifest(const DatasetManifest& m, const std::filesystem::path& file);
DatasetManifest read_manifest(const std::filesystem::path& file);

}  // namespace ngc::world
