#pragma once

// Group-wise round-to-nearest (RTN) linear quantization.
//
//   Q(x) = clamp(round(x / s) + z, 0, 2^b - 1)
//   s    = (max - min) / (2^b - 1),   z = -round(min / s)
//
// One (s, z) pair per g consecutive input channels of each output column.
// round() is round-half-to-even; dequantization is (code - z) * s.

#include "paro/tensor.hpp"
#include "paro/tensor_file.hpp"

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace paro {

inline constexpr float kMinScale = 1e-8f;

struct QuantSpec {
    int bits = 4;
    std::size_t group_size = 128;

    /// 2 <= bits <= 16, group_size >= 2. Codes wider than 8 bits only exist
    /// for the lossless sanity configurations.
    void validate() const;
    float max_code() const noexcept { return static_cast<float>((1u << bits) - 1u); }
};

struct GroupParams {
    float scale = 1.0f;
    float zero_point = 0.0f;
};

/// Per-(group, output column) parameters of a (D_in x D_out) weight.
struct QuantParams {
    QuantSpec spec;
    GroupLayout layout;
    Matrix scales;  // num_groups x D_out
    Matrix zeros;   // num_groups x D_out

    GroupParams at(std::size_t group, std::size_t col) const noexcept {
        return {scales(group, col), zeros(group, col)};
    }
};

struct QuantizedTensor {
    std::size_t rows = 0;  // D_in
    std::size_t cols = 0;  // D_out
    std::vector<std::uint16_t> codes;  // row-major, rows x cols
    QuantParams params;

    std::uint16_t code(std::size_t r, std::size_t c) const noexcept { return codes[r * cols + c]; }
};

float round_half_even(float x) noexcept;

/// Throws std::invalid_argument on an empty group.
GroupParams compute_group_params(std::span<const float> values, int bits);

std::uint16_t quantize_value(float v, GroupParams p, int bits) noexcept;
void quantize_group(std::span<const float> values, GroupParams p, int bits,
                    std::span<std::uint16_t> codes);
inline float dequantize_value(std::uint16_t code, GroupParams p) noexcept {
    return (static_cast<float>(code) - p.zero_point) * p.scale;
}
void dequantize_group(std::span<const std::uint16_t> codes, GroupParams p, std::span<float> out);

/// True when the unclamped code of v lies inside [0, 2^b - 1].
bool in_quant_range(float v, GroupParams p, int bits) noexcept;

/// RTN parameters for every (group, column) block of w.
QuantParams rtn_params(const Matrix& w, const QuantSpec& spec);

QuantizedTensor quantize_matrix(const Matrix& w, const QuantSpec& spec);
/// Quantize with given (e.g. learned) parameters.
QuantizedTensor quantize_matrix(const Matrix& w, const QuantParams& params);
Matrix dequantize_matrix(const QuantizedTensor& qt);

/// Quantize-then-dequantize in FP32. Equal to dequantize_matrix(quantize_matrix(w, params))
/// whenever the zero points are integer valued.
Matrix fake_quant(const Matrix& w, const QuantParams& params);

struct FakeQuantGrads {
    Matrix weight;  // D_in x D_out
    Matrix scales;  // num_groups x D_out
    Matrix zeros;   // num_groups x D_out
};

/// Straight-through gradients of fake_quant with (s, z) as free parameters.
///   in range: dw = g,  ds = g * (round(w/s) - w/s),  dz = 0
///   clamped:  dw = 0,  ds = g * (c - z),             dz = -g * s
FakeQuantGrads fake_quant_backward(const Matrix& w, const QuantParams& params,
                                   const Matrix& grad_out);

/// Gradient w.r.t. w when (s, z) are themselves computed from w by rtn_params:
/// the direct STE term plus the (s, z) gradients routed through each block's
/// min and max elements.
Matrix dynamic_fake_quant_backward(const Matrix& w, const QuantParams& params,
                                   const Matrix& grad_out);

/// Snap learned zero points back onto the integer grid.
void round_zero_points(QuantParams& params) noexcept;

/// Tensors "<prefix>codes", "<prefix>scales", "<prefix>zeros" plus header
/// fields bits / group_size.
void write_quantized(TensorFile& file, const QuantizedTensor& qt, std::string_view prefix = "");
QuantizedTensor read_quantized(const TensorFile& file, std::string_view prefix = "");

}  // namespace paro
