#include "ngc/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace ngc::dataset {

AuditLog::AuditLog(std::filesystem::path file) : file_(std::move(file)) {
    std::ifstream in(file_);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) seen_.insert(line);
}

void AuditLog::record(const std::string& scene_tag, const std::string& usage) {
    std::string line = scene_tag + " " + usage;
    if (!seen_.insert(line).second) return;
    std::ofstream out(file_, std::ios::app);
    if (!out) throw std::runtime_error("cannot append to audit log " + file_.string());
    out << line << "\n";
}

std::string scene_tag(const std::string& split, std::uint64_t id) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "scene_%06llu", static_cast<unsigned long long>(id));
    return split + "/" + buf;
}

DatasetReader::DatasetReader(std::filesystem::path root) : root_(std::move(root)) {
    manifest_ = world::read_manifest(root_ / "manifest.json");
}

namespace {

bool under_sealed(const std::string& rel) {
    return rel.rfind("sealed/", 0) == 0 || rel.find("/sealed/") != std::string::npos;
}

const world::SceneEntry& entry_at(const world::DatasetManifest& m, const std::string& split,
                                  size_t index) {
    const auto& s = m.split(split);
    if (index >= s.scenes.size())
        throw std::out_of_range("split '" + split + "' has only " +
                                std::to_string(s.scenes.size()) + " scenes");
    return s.scenes[index];
}

}  // namespace

std::map<std::string, Tensor> DatasetReader::load_training_scene(
    const std::string& split, size_t index, const std::vector<std::string>& layers,
    AuditLog& audit, const std::string& usage) const {
    const auto& e = entry_at(manifest_, split, index);
    std::map<std::string, Tensor> out;
    for (const auto& name : layers) {
        auto it = e.files.find(name);
        // Ground truth for unlabeled splits only exists under sealed/; a
        // training load must fail rather than fall through to it.
        if (it == e.files.end())
            throw std::runtime_error("layer '" + name + "' of " + scene_tag(split, e.id) +
                                     " is not available for training");
        if (under_sealed(it->second))
            throw std::runtime_error("training refuses sealed file " + it->second);
        out[name] = read_tensor(root_ / it->second);
    }
    audit.record(scene_tag(split, e.id), usage);
    return out;
}

std::map<std::string, Tensor> DatasetReader::load_evaluation_scene(
    const std::string& split, size_t index, const std::vector<std::string>& layers,
    AuditLog& audit, const std::string& usage) const {
    const auto& e = entry_at(manifest_, split, index);
    std::map<std::string, Tensor> out;
    for (const auto& name : layers) {
        const std::string* rel = nullptr;
        if (auto it = e.files.find(name); it != e.files.end())
            rel = &it->second;
        else if (auto st = e.sealed.find(name); st != e.sealed.end())
            rel = &st->second;
        if (!rel)
            throw std::runtime_error("layer '" + name + "' of " + scene_tag(split, e.id) +
                                     " is missing from the dataset");
        out[name] = read_tensor(root_ / *rel);
    }
    audit.record(scene_tag(split, e.id), usage);
    return out;
}

}  // namespace ngc::dataset
