#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace ngc {

enum class DType : uint8_t { F32 = 0, U16 = 1 };

struct TensorError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Parse failures carry the byte offset where the file went wrong.
struct ParseError : std::runtime_error {
    ParseError(const std::string& msg, uint64_t offset)
        : std::runtime_error(msg + " (offset " + std::to_string(offset) + ")"), offset(offset) {}
    uint64_t offset;
};

// Dense row-major tensor. Exactly one of `f` / `u` is populated, per dtype.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros_f32(std::vector<uint32_t> shape);
    static Tensor zeros_u16(std::vector<uint32_t> shape);
    static Tensor from_f32(std::vector<uint32_t> shape, std::vector<float> values);
    static Tensor from_u16(std::vector<uint32_t> shape, std::vector<uint16_t> values);

    DType dtype = DType::F32;
    std::vector<uint32_t> shape;
    std::vector<float> f;
    std::vector<uint16_t> u;

    size_t numel() const;
    size_t rank() const { return shape.size(); }
    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    // rows/cols view for rank >= 1: trailing extent is the column count,
    // everything before it is flattened into rows
    size_t cols() const { return shape.empty() ? 0 : shape.back(); }
    size_t rows() const;

    float& at_f(size_t i) { return f[i]; }
    float at_f(size_t i) const { return f[i]; }
    uint16_t at_u(size_t i) const { return u[i]; }

    static void validate_shape(const std::vector<uint32_t>& shape);
};

size_t shape_numel(const std::vector<uint32_t>& shape);

// Container format: magic "NGCT", version u32 LE, dtype u8 (0 = f32,
// 1 = u16 labels), rank u8, extents u32 LE each, payload row-major LE.
void write_tensor(const std::filesystem::path& file, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& file);

std::vector<uint8_t> serialize_tensor(const Tensor& t);
Tensor deserialize_tensor(const uint8_t* data, size_t size);

}  // namespace ngc
