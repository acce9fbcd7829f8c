#include "ngc/tensor.hpp"

#include <cstring>
#include <fstream>

namespace ngc {

namespace {

constexpr char kMagic[4] = {'N', 'G', 'C', 'T'};
constexpr uint32_t kVersion = 1;
// generous cap; catches corrupted extent fields before they turn into
// multi-gigabyte allocations
constexpr uint64_t kMaxElements = 1ull << 31;

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(uint8_t(v));
    out.push_back(uint8_t(v >> 8));
    out.push_back(uint8_t(v >> 16));
    out.push_back(uint8_t(v >> 24));
}

uint32_t get_u32(const uint8_t* p) {
    return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 | uint32_t(p[3]) << 24;
}

}  // namespace

size_t shape_numel(const std::vector<uint32_t>& shape) {
    size_t n = 1;
    for (uint32_t e : shape) n *= e;
    return shape.empty() ? 0 : n;
}

void Tensor::validate_shape(const std::vector<uint32_t>& shape) {
    if (shape.empty()) throw TensorError("tensor rank must be >= 1");
    uint64_t n = 1;
    for (uint32_t e : shape) {
        if (e == 0) throw TensorError("zero extents are not allowed");
        n *= e;
        if (n > kMaxElements) throw TensorError("tensor extent product overflows the element cap");
    }
}

size_t Tensor::numel() const { return shape_numel(shape); }

size_t Tensor::rows() const {
    if (shape.empty()) return 0;
    size_t r = 1;
    for (size_t i = 0; i + 1 < shape.size(); ++i) r *= shape[i];
    return r;
}

Tensor Tensor::zeros_f32(std::vector<uint32_t> shape) {
    validate_shape(shape);
    Tensor t;
    t.dtype = DType::F32;
    t.f.assign(shape_numel(shape), 0.0f);
    t.shape = std::move(shape);
    return t;
}

Tensor Tensor::zeros_u16(std::vector<uint32_t> shape) {
    validate_shape(shape);
    Tensor t;
    t.dtype = DType::U16;
    t.u.assign(shape_numel(shape), 0);
    t.shape = std::move(shape);
    return t;
}

Tensor Tensor::from_f32(std::vector<uint32_t> shape, std::vector<float> values) {
    validate_shape(shape);
    if (values.size() != shape_numel(shape))
        throw TensorError("value count does not match shape");
    Tensor t;
    t.dtype = DType::F32;
    t.shape = std::move(shape);
    t.f = std::move(values);
    return t;
}

Tensor Tensor::from_u16(std::vector<uint32_t> shape, std::vector<uint16_t> values) {
    validate_shape(shape);
    if (values.size() != shape_numel(shape))
        throw TensorError("value count does not match shape");
    Tensor t;
    t.dtype = DType::U16;
    t.shape = std::move(shape);
    t.u = std::move(values);
    return t;
}

std::vector<uint8_t> serialize_tensor(const Tensor& t) {
    Tensor::validate_shape(t.shape);
    std::vector<uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, kVersion);
    out.push_back(uint8_t(t.dtype));
    out.push_back(uint8_t(t.shape.size()));
    for (uint32_t e : t.shape) put_u32(out, e);
    size_t n = t.numel();
    if (t.dtype == DType::F32) {
        if (t.f.size() != n) throw TensorError("f32 payload size mismatch");
        for (float v : t.f) {
            uint32_t bits;
            std::memcpy(&bits, &v, 4);
            put_u32(out, bits);
        }
    } else {
        if (t.u.size() != n) throw TensorError("u16 payload size mismatch");
        for (uint16_t v : t.u) {
            out.push_back(uint8_t(v));
            out.push_back(uint8_t(v >> 8));
        }
    }
    return out;
}

Tensor deserialize_tensor(const uint8_t* data, size_t size) {
    if (size < 4 || std::memcmp(data, kMagic, 4) != 0)
        throw ParseError("bad magic, expected NGCT", 0);
    if (size < 10) throw ParseError("truncated header", size);
    uint32_t version = get_u32(data + 4);
    if (version != kVersion)
        throw ParseError("unsupported version " + std::to_string(version), 4);
    uint8_t dtype_raw = data[8];
    if (dtype_raw > 1) throw ParseError("unknown dtype " + std::to_string(dtype_raw), 8);
    uint8_t rank = data[9];
    if (rank == 0) throw ParseError("rank 0 tensors are not allowed", 9);
    size_t off = 10;
    if (size < off + size_t(rank) * 4) throw ParseError("truncated extent list", size);
    std::vector<uint32_t> shape(rank);
    uint64_t n = 1;
    for (uint8_t i = 0; i < rank; ++i) {
        shape[i] = get_u32(data + off);
        if (shape[i] == 0) throw ParseError("zero extent", off);
        n *= shape[i];
        if (n > kMaxElements) throw ParseError("extent product overflow", off);
        off += 4;
    }
    size_t elem_size = dtype_raw == 0 ? 4 : 2;
    if (size != off + n * elem_size)
        throw ParseError("payload size mismatch, expected " + std::to_string(n * elem_size) +
                             " bytes, found " + std::to_string(size - off),
                         off);
    Tensor t;
    t.dtype = DType(dtype_raw);
    t.shape = std::move(shape);
    if (t.dtype == DType::F32) {
        t.f.resize(n);
        for (size_t i = 0; i < n; ++i) {
            uint32_t bits = get_u32(data + off + i * 4);
            std::memcpy(&t.f[i], &bits, 4);
        }
    } else {
        t.u.resize(n);
        for (size_t i = 0; i < n; ++i)
            t.u[i] = uint16_t(data[off + i * 2]) | uint16_t(data[off + i * 2 + 1]) << 8;
    }
    return t;
}

void write_tensor(const std::filesystem::path& file, const Tensor& t) {
    auto bytes = serialize_tensor(t);
    std::ofstream out(file, std::ios::binary | std::ios::trunc);
    if (!out) throw TensorError("cannot open for writing: " + file.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw TensorError("write failed: " + file.string());
}

Tensor read_tensor(const std::filesystem::path& file) {
    std::ifstream in(file, std::ios::binary | std::ios::ate);
    if (!in) throw TensorError("cannot open: " + file.string());
    std::streamsize size = in.tellg();
    in.seekg(0);
    std::vector<uint8_t> bytes(static_cast<size_t>(size));
    in.read(reinterpret_cast<char*>(bytes.data()), size);
    if (!in) throw TensorError("read failed: " + file.string());
    return deserialize_tensor(bytes.data(), bytes.size());
}

}  // namespace ngc
