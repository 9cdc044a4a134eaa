#pragma once

// PQT1 tensor container.
//
//   bytes 0..3   magic "PQT1"
//   bytes 4..7   header length, u32 little-endian
//   header       UTF-8 JSON: {"tensors":[{"name","shape","dtype","role"}...], <extra fields>}
//   payload      raw little-endian arrays, concatenated in header order
//
// dtype is one of "f32", "i32", "u8".

#include "paro/tensor.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace paro {

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using TensorData =
    std::variant<std::vector<float>, std::vector<std::int32_t>, std::vector<std::uint8_t>>;

struct Tensor {
    std::string name;
    std::string role;
    std::vector<std::int64_t> shape;
    TensorData data;

    std::string dtype() const;
    std::size_t element_count() const;

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

Tensor make_tensor(std::string name, std::string role, const Matrix& m);

struct TensorFile {
    std::vector<Tensor> tensors;
    /// Additional top-level header fields, written after "tensors".
    nlohmann::ordered_json fields = nlohmann::ordered_json::object();

    const Tensor* find(std::string_view name) const noexcept;
    const Tensor& at(std::string_view name) const;  // throws FormatError
    void add(Tensor t);

    Matrix matrix(std::string_view name) const;  // f32 rank-1/2 tensor as Matrix

    friend bool operator==(const TensorFile& a, const TensorFile& b) {
        return a.tensors == b.tensors && a.fields == b.fields;
    }
};

std::vector<std::uint8_t> encode_tensors(const TensorFile& file);
TensorFile decode_tensors(std::span<const std::uint8_t> bytes);

void save_tensors(const std::filesystem::path& path, const TensorFile& file);
TensorFile load_tensors(const std::filesystem::path& path);

}  // namespace paro
