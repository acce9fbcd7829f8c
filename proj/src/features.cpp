#include "ngc/features.hpp"

#include <algorithm>
#include <stdexcept>

namespace ngc::features {

namespace {

struct MapView {
    int h = 0, w = 0, c = 0;
    const Tensor* t = nullptr;
    bool categorical = false;

    // Channel value with one-hot expansion for categorical layers.
    double at(int y, int x, int ch) const {
        size_t i = static_cast<size_t>(y) * w + x;
        if (!categorical) return t->f[i * c + ch];
        int label = std::min<int>(t->u[i], c - 1);
        return label == ch ? 1.0 : 0.0;
    }
};

MapView check_map(const NodeSpec& spec, const Tensor& layer) {
    if (!spec.is_map) throw TensorError("node '" + spec.name + "' is not a map");
    MapView v;
    v.categorical = spec.categorical;
    v.c = spec.channels;
    v.t = &layer;
    if (spec.categorical) {
        if (layer.dtype != DType::U16 || layer.rank() != 2)
            throw TensorError("layer '" + spec.name + "' must be a rank-2 label map");
        v.h = static_cast<int>(layer.shape[0]);
        v.w = static_cast<int>(layer.shape[1]);
    } else {
        if (layer.dtype != DType::F32 || layer.rank() != 3 ||
            layer.shape[2] != static_cast<uint32_t>(spec.channels))
            throw TensorError("layer '" + spec.name + "' must be a rank-3 f32 map with " +
                              std::to_string(spec.channels) + " channels");
        v.h = static_cast<int>(layer.shape[0]);
        v.w = static_cast<int>(layer.shape[1]);
    }
    return v;
}

}  // namespace

int patch_dim(const NodeSpec& spec) { return 9 * spec.channels + 4; }
int pooled_dim(const NodeSpec& spec) { return 16 * spec.channels; }

Tensor patch_features(const NodeSpec& spec, const Tensor& layer) {
    MapView v = check_map(spec, layer);
    const int h = v.h, w = v.w, c = v.c;
    const int dim = patch_dim(spec);
    Tensor out = Tensor::zeros_f32({static_cast<uint32_t>(h) * static_cast<uint32_t>(w),
                                    static_cast<uint32_t>(dim)});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            float* row = out.f.data() + (static_cast<size_t>(y) * w + x) * dim;
            int k = 0;
            for (int dy = -1; dy <= 1; ++dy) {
                int yy = std::clamp(y + dy, 0, h - 1);
                for (int dx = -1; dx <= 1; ++dx) {
                    int xx = std::clamp(x + dx, 0, w - 1);
                    for (int ch = 0; ch < c; ++ch)
                        row[k++] = static_cast<float>(v.at(yy, xx, ch));
                }
            }
            row[k++] = static_cast<float>(x) / (w - 1);
            row[k++] = static_cast<float>(y) / (h - 1);
            row[k++] = static_cast<float>(x % 4) / 3.0f;
            row[k++] = static_cast<float>(y % 4) / 3.0f;
        }
    }
    return out;
}

Tensor pooled_features(const NodeSpec& spec, const Tensor& layer) {
    MapView v = check_map(spec, layer);
    constexpr int g = 4;
    if (v.h % g != 0 || v.w % g != 0)
        throw TensorError("pooled features need extents divisible by 4");
    const int bh = v.h / g, bw = v.w / g, c = v.c;
    Tensor out = Tensor::zeros_f32({1, static_cast<uint32_t>(pooled_dim(spec))});
    for (int gy = 0; gy < g; ++gy) {
        for (int gx = 0; gx < g; ++gx) {
            for (int ch = 0; ch < c; ++ch) {
                double sum = 0.0;
                for (int y = gy * bh; y < (gy + 1) * bh; ++y)
                    for (int x = gx * bw; x < (gx + 1) * bw; ++x) sum += v.at(y, x, ch);
                out.f[(static_cast<size_t>(gy) * g + gx) * c + ch] =
                    static_cast<float>(sum / (bh * bw));
            }
        }
    }
    return out;
}

int edge_input_dim(const NodeSpec& src, const NodeSpec& dst) {
    if (!src.is_map)
        throw TensorError("edge input must be a map node, got '" + src.name + "'");
    return dst.is_map ? patch_dim(src) : pooled_dim(src);
}

Tensor edge_features(const NodeSpec& src, const NodeSpec& dst, const Tensor& layer) {
    if (!src.is_map)
        throw TensorError("edge input must be a map node, got '" + src.name + "'");
    return dst.is_map ? patch_features(src, layer) : pooled_features(src, layer);
}

Tensor output_to_layer(const NodeSpec& spec, const Tensor& rows, int height, int width) {
    if (rows.dtype != DType::F32 || rows.rank() != 2)
        throw TensorError("model output must be a rank-2 f32 tensor");
    const uint32_t n = rows.shape[0], d = rows.shape[1];
    if (!spec.is_map) {
        if (n != 1 || d != static_cast<uint32_t>(spec.channels))
            throw TensorError("vector output shape mismatch for '" + spec.name + "'");
        Tensor out = Tensor::zeros_f32({d});
        std::copy(rows.f.begin(), rows.f.end(), out.f.begin());
        return out;
    }
    if (n != static_cast<uint32_t>(height) * static_cast<uint32_t>(width) ||
        d != static_cast<uint32_t>(spec.channels))
        throw TensorError("map output shape mismatch for '" + spec.name + "'");
    if (spec.categorical) {
        Tensor out = Tensor::zeros_u16(
            {static_cast<uint32_t>(height), static_cast<uint32_t>(width)});
        for (uint32_t r = 0; r < n; ++r) {
            const float* p = rows.f.data() + static_cast<size_t>(r) * d;
            uint32_t best = 0;
            for (uint32_t k = 1; k < d; ++k)
                if (p[k] > p[best]) best = k;
            out.u[r] = static_cast<uint16_t>(best);
        }
        return out;
    }
    Tensor out = Tensor::zeros_f32({static_cast<uint32_t>(height), static_cast<uint32_t>(width),
                                    static_cast<uint32_t>(spec.channels)});
    std::copy(rows.f.begin(), rows.f.end(), out.f.begin());
    return out;
}

Tensor gather_target_rows(const NodeSpec& spec, const Tensor& layer,
                          const std::vector<uint32_t>& pixels) {
    if (!spec.is_map) throw TensorError("gather_target_rows needs a map node");
    MapView v = check_map(spec, layer);
    const uint32_t n = static_cast<uint32_t>(pixels.size());
    if (spec.categorical) {
        Tensor out = Tensor::zeros_u16({n});
        for (uint32_t i = 0; i < n; ++i) {
            uint32_t pix = pixels[i];
            out.u[i] = std::min<uint16_t>(layer.u[pix], static_cast<uint16_t>(v.c - 1));
        }
        return out;
    }
    Tensor out = Tensor::zeros_f32({n, static_cast<uint32_t>(v.c)});
    for (uint32_t i = 0; i < n; ++i)
        for (int ch = 0; ch < v.c; ++ch)
            out.f[static_cast<size_t>(i) * v.c + ch] =
                layer.f[static_cast<size_t>(pixels[i]) * v.c + ch];
    return out;
}

}  // namespace ngc::features
