#include "paro/tensor_file.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

namespace paro {

namespace {

constexpr char kMagic[4] = {'P', 'Q', 'T', '1'};

template <typename T>
T byteswap_value(T v) noexcept {
    auto bytes = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
}

template <typename T>
void append_le(std::vector<std::uint8_t>& out, const std::vector<T>& values) {
    const std::size_t offset = out.size();
    out.resize(offset + values.size() * sizeof(T));
    if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
        if (!values.empty()) std::memcpy(out.data() + offset, values.data(), values.size() * sizeof(T));
    } else {
        for (std::size_t i = 0; i < values.size(); ++i) {
            const T v = byteswap_value(values[i]);
            std::memcpy(out.data() + offset + i * sizeof(T), &v, sizeof(T));
        }
    }
}

template <typename T>
std::vector<T> read_le(std::span<const std::uint8_t> bytes, std::size_t count) {
    std::vector<T> values(count);
    if (count) std::memcpy(values.data(), bytes.data(), count * sizeof(T));
    if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
        for (auto& v : values) v = byteswap_value(v);
    }
    return values;
}

std::size_t dtype_size(const std::string& dtype) {
    if (dtype == "f32" || dtype == "i32") return 4;
    if (dtype == "u8") return 1;
    throw FormatError("unknown dtype '" + dtype + "'");
}

std::size_t shape_count(const std::vector<std::int64_t>& shape) {
    std::size_t n = 1;
    for (auto d : shape) {
        if (d < 0) throw FormatError("negative dimension in shape");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

}  // namespace

std::string Tensor::dtype() const {
    switch (data.index()) {
        case 0: return "f32";
        case 1: return "i32";
        default: return "u8";
    }
}

std::size_t Tensor::element_count() const {
    return std::visit([](const auto& v) { return v.size(); }, data);
}

Tensor make_tensor(std::string name, std::string role, const Matrix& m) {
    return {std::move(name),
            std::move(role),
            {static_cast<std::int64_t>(m.rows()), static_cast<std::int64_t>(m.cols())},
            m.values()};
}

const Tensor* TensorFile::find(std::string_view name) const noexcept {
    for (const auto& t : tensors)
        if (t.name == name) return &t;
    return nullptr;
}

const Tensor& TensorFile::at(std::string_view name) const {
    if (const Tensor* t = find(name)) return *t;
    throw FormatError("missing tensor '" + std::string(name) + "'");
}

void TensorFile::add(Tensor t) {
    if (find(t.name)) throw std::invalid_argument("duplicate tensor name '" + t.name + "'");
    if (shape_count(t.shape) != t.element_count())
        throw std::invalid_argument("tensor '" + t.name + "' shape does not match its data");
    tensors.push_back(std::move(t));
}

Matrix TensorFile::matrix(std::string_view name) const {
    const Tensor& t = at(name);
    const auto* values = std::get_if<std::vector<float>>(&t.data);
    if (!values) throw FormatError("tensor '" + t.name + "' is not f32");
    if (t.shape.size() == 1) return Matrix(1, static_cast<std::size_t>(t.shape[0]), *values);
    if (t.shape.size() != 2) throw FormatError("tensor '" + t.name + "' is not rank 1 or 2");
    return Matrix(static_cast<std::size_t>(t.shape[0]), static_cast<std::size_t>(t.shape[1]), *values);
}

std::vector<std::uint8_t> encode_tensors(const TensorFile& file) {
    nlohmann::ordered_json header = nlohmann::ordered_json::object();
    header["tensors"] = nlohmann::ordered_json::array();
    std::set<std::string> names;
    for (const auto& t : file.tensors) {
        if (!names.insert(t.name).second)
            throw std::invalid_argument("duplicate tensor name '" + t.name + "'");
        if (shape_count(t.shape) != t.element_count())
            throw std::invalid_argument("tensor '" + t.name + "' shape does not match its data");
        header["tensors"].push_back(
            {{"name", t.name}, {"shape", t.shape}, {"dtype", t.dtype()}, {"role", t.role}});
    }
    for (const auto& [key, value] : file.fields.items()) {
        if (key == "tensors") throw std::invalid_argument("'tensors' is a reserved header field");
        header[key] = value;
    }
    const std::string text = header.dump();

    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    append_le(out, std::vector<std::uint32_t>{static_cast<std::uint32_t>(text.size())});
    out.insert(out.end(), text.begin(), text.end());
    for (const auto& t : file.tensors) std::visit([&](const auto& v) { append_le(out, v); }, t.data);
    return out;
}

TensorFile decode_tensors(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 4) != 0)
        throw FormatError("bad magic: not a PQT1 tensor file");
    const auto header_len = read_le<std::uint32_t>(bytes.subspan(4, 4), 1)[0];
    if (bytes.size() - 8 < header_len) throw FormatError("truncated header");

    nlohmann::ordered_json header;
    try {
        header = nlohmann::ordered_json::parse(bytes.begin() + 8, bytes.begin() + 8 + header_len);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed header JSON: ") + e.what());
    }
    if (!header.is_object() || !header.contains("tensors") || !header["tensors"].is_array())
        throw FormatError("header lacks a 'tensors' array");

    TensorFile file;
    std::size_t offset = 8 + header_len;
    try {
        for (const auto& entry : header["tensors"]) {
            Tensor t;
            t.name = entry.at("name").get<std::string>();
            t.role = entry.at("role").get<std::string>();
            t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
            const auto dtype = entry.at("dtype").get<std::string>();
            const std::size_t count = shape_count(t.shape);
            const std::size_t nbytes = count * dtype_size(dtype);
            if (bytes.size() - offset < nbytes)
                throw FormatError("truncated payload for tensor '" + t.name + "'");
            const auto chunk = bytes.subspan(offset, nbytes);
            if (dtype == "f32") t.data = read_le<float>(chunk, count);
            else if (dtype == "i32") t.data = read_le<std::int32_t>(chunk, count);
            else t.data = read_le<std::uint8_t>(chunk, count);
            offset += nbytes;
            if (file.find(t.name)) throw FormatError("duplicate tensor name '" + t.name + "'");
            file.tensors.push_back(std::move(t));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed tensor entry: ") + e.what());
    }
    if (offset != bytes.size()) throw FormatError("trailing bytes after payload");
    for (const auto& [key, value] : header.items())
        if (key != "tensors") file.fields[key] = value;
    return file;
}

void save_tensors(const std::filesystem::path& path, const TensorFile& file) {
    const auto bytes = encode_tensors(file);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

TensorFile load_tensors(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_tensors(bytes);
}

}  // namespace paro
