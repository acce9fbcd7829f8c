#pragma once

#include <cstdint>
#include <vector>

#include "ngc/repr.hpp"
#include "ngc/tensor.hpp"

namespace ngc::features {

// Per-pixel features for dense (map-to-map) learners: the replicate-padded
// 3x3 patch of the layer's channels, one-hot expanded for categorical maps,
// plus four positional channels (x, y in [0,1] and the 4x4 phase of each).
int patch_dim(const NodeSpec& spec);  // 9 * channels + 4
Tensor patch_features(const NodeSpec& spec, const Tensor& layer);  // (H*W, patch_dim) f32

// Scene-level features for map-to-vector learners: per-channel means over a
// 4x4 grid of equal cells.
int pooled_dim(const NodeSpec& spec);  // 16 * channels
Tensor pooled_features(const NodeSpec& spec, const Tensor& layer);  // (1, pooled_dim) f32

// Featurization an edge src -> dst applies to its input layer.
int edge_input_dim(const NodeSpec& src, const NodeSpec& dst);
Tensor edge_features(const NodeSpec& src, const NodeSpec& dst, const Tensor& layer);

// Model output rows back into a node layer: (H*W, c) -> (H, W, c) for
// continuous maps, per-row argmax labels for categorical maps, and the
// single row itself for vectors.
Tensor output_to_layer(const NodeSpec& spec, const Tensor& rows, int height, int width);

// Target rows for a sampled subset of pixels: f32 (n, c) for continuous
// maps, u16 labels (n) for categorical maps.
Tensor gather_target_rows(const NodeSpec& spec, const Tensor& layer,
                          const std::vector<uint32_t>& pixels);

}  // namespace ngc::features
