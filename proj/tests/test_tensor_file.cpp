#include "paro/rng.hpp"
#include "paro/tensor_file.hpp"

#include "doctest.h"

#include <cmath>

#include <cstring>
#include <filesystem>

using namespace paro;

namespace {

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("paro_test_" + name);
}

}  // namespace

TEST_CASE("TensorFile.TwoByTwoRoundTripIsBitExact") {
    TensorFile f;
    f.add(make_tensor("w", "weight", Matrix{{1.5f, -0.0f}, {3.0e-38f, 7.25f}}));
    const auto path = temp_path("2x2.pqt");
    save_tensors(path, f);
    const TensorFile g = load_tensors(path);
    REQUIRE_EQ(g.tensors.size(), 1u);
    const auto& a = std::get<std::vector<float>>(f.tensors[0].data);
    const auto& b = std::get<std::vector<float>>(g.tensors[0].data);
    REQUIRE_EQ(a.size(), b.size());
    CHECK_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(float)), 0);
    CHECK_EQ(g.tensors[0].shape, (std::vector<std::int64_t>{2, 2}));
    CHECK_EQ(g.tensors[0].role, "weight");
    std::filesystem::remove(path);
}

TEST_CASE("TensorFile.BadMagicIsRejected") {
    TensorFile f;
    f.add(make_tensor("w", "weight", Matrix(1, 1)));
    auto bytes = encode_tensors(f);
    std::memcpy(bytes.data(), "XXXX", 4);
    CHECK_THROWS_AS(decode_tensors(bytes), FormatError);
}

TEST_CASE("TensorFile.TruncatedPayloadIsRejected") {
    TensorFile f;
    f.add(make_tensor("w", "weight", Matrix(3, 3)));
    auto bytes = encode_tensors(f);
    bytes.pop_back();
    CHECK_THROWS_AS(decode_tensors(bytes), FormatError);
    CHECK_THROWS_AS(decode_tensors(std::span(bytes).first(6)), FormatError);
}

TEST_CASE("TensorFile.EmptyTensorListIsValid") {
    const auto bytes = encode_tensors(TensorFile{});
    const std::string header(bytes.begin() + 8, bytes.end());
    CHECK_EQ(header, R"({"tensors":[]})");
    CHECK(decode_tensors(bytes).tensors.empty());
}

TEST_CASE("TensorFile.LayoutIsMagicLengthHeaderPayload") {
    TensorFile f;
    f.add({"codes", "codes", {3}, std::vector<std::uint8_t>{1, 2, 3}});
    const auto bytes = encode_tensors(f);
    REQUIRE_GE(bytes.size(), 8u);
    CHECK_EQ(std::string(bytes.begin(), bytes.begin() + 4), "PQT1");
    const std::uint32_t len = bytes[4] | (bytes[5] << 8) | (bytes[6] << 16) | (bytes[7] << 24);
    CHECK_EQ(bytes.size(), 8 + len + 3);
    const auto header = nlohmann::json::parse(bytes.begin() + 8, bytes.begin() + 8 + len);
    CHECK_EQ(header["tensors"][0]["dtype"], "u8");
    CHECK_EQ(bytes.back(), 3);
}

TEST_CASE("TensorFile.ShapeMismatchAndDuplicatesAreRejected") {
    TensorFile f;
    CHECK_THROWS_AS(f.add({"w", "weight", {2, 2}, std::vector<float>(3)}), std::invalid_argument);
    f.add({"w", "weight", {1}, std::vector<float>(1)});
    CHECK_THROWS_AS(f.add({"w", "weight", {1}, std::vector<float>(1)}), std::invalid_argument);
}

// Property: decode(encode(x)) == x and encode(decode(bytes)) == bytes for random files.
TEST_CASE("TensorFile.RandomRoundTripsAreIdentityOnBytes") {
    Rng rng(17);
    for (int trial = 0; trial < 40; ++trial) {
        TensorFile f;
        const int n = static_cast<int>(rng.below(5));
        for (int k = 0; k < n; ++k) {
            const auto rows = static_cast<std::int64_t>(rng.below(6));
            const auto cols = static_cast<std::int64_t>(rng.below(6));
            const std::size_t count = static_cast<std::size_t>(rows * cols);
            const std::string name = "t" + std::to_string(k);
            switch (rng.below(3)) {
                case 0: {
                    std::vector<float> v(count);
                    for (auto& x : v) x = std::bit_cast<float>(static_cast<std::uint32_t>(rng.next_u64() & 0x7f7fffffu));
                    f.add({name, "f", {rows, cols}, v});
                    break;
                }
                case 1: {
                    std::vector<std::int32_t> v(count);
                    for (auto& x : v) x = static_cast<std::int32_t>(rng.next_u64());
                    f.add({name, "i", {rows, cols}, v});
                    break;
                }
                default: {
                    std::vector<std::uint8_t> v(count);
                    for (auto& x : v) x = static_cast<std::uint8_t>(rng.next_u64());
                    f.add({name, "u", {rows, cols}, v});
                }
            }
        }
        if (rng.below(2)) f.fields["bits"] = 4;
        const auto bytes = encode_tensors(f);
        const TensorFile g = decode_tensors(bytes);
        CHECK_EQ(g, f);
        CHECK_EQ(encode_tensors(g), bytes);
    }
}
