#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "ngc/tensor.hpp"

namespace ngc {

enum class Activation : uint8_t { Rectifier = 0, HyperbolicTangent = 1 };
enum class Head : uint8_t { Regression = 0, Softmax = 1 };
enum class LossKind : uint8_t { L2 = 0, CrossEntropy = 1 };

struct ModelSpec {
    uint32_t input_dim = 1;
    std::vector<uint32_t> hidden;
    uint32_t output_dim = 1;
    Activation activation = Activation::HyperbolicTangent;
    Head head = Head::Regression;
    uint64_t init_seed = 0;

    bool operator==(const ModelSpec&) const = default;
};

size_t param_count(const ModelSpec& spec);

// Small dense feedforward learner. Parameters live as f32 (the on-disk
// format); all arithmetic happens in double internally.
struct DenseModel {
    ModelSpec spec;
    std::vector<float> params;
    std::vector<float> opt_m, opt_v;
    uint64_t step_count = 0;
};

// Glorot-uniform weights (+/- sqrt(6/(fan_in+fan_out))), zero biases,
// drawn deterministically from spec.init_seed.
DenseModel init_model(const ModelSpec& spec);

struct TrainConfig {
    uint32_t epochs = 100;
    double learning_rate = 1e-3;
    double weight_decay = 0.0;
    uint32_t batch_size = 32;
    uint64_t shuffle_seed = 0;

    bool operator==(const TrainConfig&) const = default;
};

Tensor forward(const DenseModel& model, const Tensor& batch);

double loss_l2(const Tensor& pred, const Tensor& target);
double loss_cross_entropy(const Tensor& pred, const Tensor& target_labels);

std::vector<double> backward(const DenseModel& model, const Tensor& batch, const Tensor& target,
                             LossKind loss);

struct FitResult {
    std::vector<double> epoch_loss;  // per-epoch mean loss in raw target units
};

// Trains in place with AdamW (beta 0.9/0.999, eps 1e-8, decoupled decay).
// Inputs and regression targets are standardized internally per fit call;
// the affine rescaling is folded back into the first and last layer on
// return, so the model always maps raw inputs to raw outputs. Optimizer
// moments reset at the start of every call, which keeps results identical
// whether a model arrives in memory or reloaded from a checkpoint.
// row_mask, when present, excludes rows from loss and gradients.
FitResult fit(DenseModel& model, const Tensor& inputs, const Tensor& targets,
              const TrainConfig& config, const std::vector<uint8_t>* row_mask = nullptr);

// Max over parameters of |analytic - numeric| / max(1e-8, |analytic| + |numeric|)
// with central differences, step 1e-4, on the double-precision loss path.
double grad_check(const DenseModel& model, const Tensor& batch, const Tensor& target,
                  LossKind loss);

// Checkpoint: magic "NGCM", version u32 LE, serialized spec, step count
// u64 LE, parameters f32 LE.
void save_checkpoint(const std::filesystem::path& file, const DenseModel& model);
DenseModel load_checkpoint(const std::filesystem::path& file);

}  // namespace ngc
