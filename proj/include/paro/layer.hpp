#pragma once

// Toy decoder layer (two linears, SiLU, residual) and its quantized
// counterpart in training mode.

#include "paro/quantizer.hpp"
#include "paro/tensor.hpp"
#include "paro/transform.hpp"

#include <optional>
#include <vector>

namespace paro {

float silu(float x) noexcept;
float silu_grad(float x) noexcept;

/// y = x W + b. b may be empty.
Matrix affine(const Matrix& x, const Matrix& w, const std::vector<float>& bias);

struct ToyDecoderLayer {
    Matrix up_weight;    // D x H
    std::vector<float> up_bias;
    Matrix down_weight;  // H x D
    std::vector<float> down_bias;
    bool residual = true;

    std::size_t dim() const noexcept { return up_weight.rows(); }
    std::size_t hidden() const noexcept { return up_weight.cols(); }

    /// FP32 forward: x + SiLU(x W_up + b_up) W_down + b_down.
    Matrix forward(const Matrix& x) const;
    void validate() const;
};

enum class WeightMode {
    Float,    // transformed weights used unquantized
    Dynamic,  // RTN parameters recomputed from T(W) on every forward (stage 1)
    Static,   // weights already transformed; learned (s, z) (stage 2 and deployment)
};

struct QuantLinear {
    Matrix weight;  // original W for Float/Dynamic, T(W) for Static
    std::vector<float> bias;
    TransformBundle bundle;
    QuantSpec spec;
    QuantParams params;  // meaningful in Static mode
    WeightMode mode = WeightMode::Dynamic;

    /// Starts a linear in Dynamic mode with the given bundle.
    static QuantLinear make(const Matrix& w, std::vector<float> bias, TransformBundle bundle,
                            const QuantSpec& spec);

    /// Switch to Static mode: fold T into the weights and initialize (s, z) by RTN.
    void fold();
    /// Transformed weight T(W) (Static: the stored weight).
    Matrix transformed_weight() const;
    /// Effective dequantized weight used by the forward.
    Matrix effective_weight() const;
};

struct LinearTape {
    Matrix input;        // X
    Matrix input_t;      // X T^-1
    Matrix weight_t;     // T(W)
    QuantParams params;  // parameters applied to weight_t (unused in Float mode)
    Matrix weight_q;     // effective weight
};

Matrix linear_forward(const QuantLinear& lin, const Matrix& x, LinearTape* tape = nullptr);

struct QuantLayer {
    QuantLinear up;
    QuantLinear down;
    bool residual = true;
};

struct LayerTape {
    LinearTape up;
    Matrix pre_act;  // x W_up + b
    LinearTape down;
};

/// Training-mode forward of a quantized layer.
Matrix layer_forward(const QuantLayer& layer, const Matrix& x, LayerTape* tape = nullptr);

/// Wraps a float layer with fresh bundles (Dynamic mode).
QuantLayer make_quant_layer(const ToyDecoderLayer& layer, TransformBundle up_bundle,
                            TransformBundle down_bundle, const QuantSpec& spec);

}  // namespace paro
