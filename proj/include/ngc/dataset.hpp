#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "ngc/tensor.hpp"
#include "ngc/world.hpp"

namespace ngc::dataset {

// Line-oriented record of every (scene, usage) pair. Lines are unique; the
// log is append-only across process runs so a whole experiment can be
// audited afterwards.
class AuditLog {
  public:
    explicit AuditLog(std::filesystem::path file);
    void record(const std::string& scene_tag, const std::string& usage);
    const std::filesystem::path& file() const { return file_; }

  private:
    std::filesystem::path file_;
    std::set<std::string> seen_;
};

std::string scene_tag(const std::string& split, std::uint64_t id);

// Reads scenes out of a generated dataset directory. Training-side loads are
// path-checked: any file under sealed/ is refused. Evaluation-side loads may
// open the sealed sidecar. Every access lands in the audit log.
class DatasetReader {
  public:
    explicit DatasetReader(std::filesystem::path root);

    const world::DatasetManifest& manifest() const { return manifest_; }
    const std::filesystem::path& root() const { return root_; }

    std::map<std::string, Tensor> load_training_scene(const std::string& split, size_t index,
                                                      const std::vector<std::string>& layers,
                                                      AuditLog& audit,
                                                      const std::string& usage) const;

    std::map<std::string, Tensor> load_evaluation_scene(const std::string& split, size_t index,
                                                        const std::vector<std::string>& layers,
                                                        AuditLog& audit,
                                                        const std::string& usage) const;

  private:
    std::filesystem::path root_;
    world::DatasetManifest manifest_;
};

}  // namespace ngc::dataset
