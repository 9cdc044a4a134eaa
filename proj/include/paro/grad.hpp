#pragma once

// Hand-derived reverse-mode gradients for the quantized layer graph.
//
// Per Givens pair with outputs (a', b') = (c a - s b, s a + c b) and incoming
// gradients (ga', gb'):
//     dtheta += sum(gb' * a' - ga' * b')
//     ga = c ga' + s gb',   gb = -s ga' + c gb'
// Inputs are recovered from outputs by the inverse rotation, so no
// per-rotation intermediates are stored.

#include "paro/layer.hpp"
#include "paro/tensor.hpp"
#include "paro/transform.hpp"

#include <optional>
#include <vector>

namespace paro {

/// FP64 accumulators shaped like a bundle's alpha and flat angle vectors.
struct TransformGrads {
    std::vector<double> alpha;
    std::vector<double> angles;

    static TransformGrads zeros_like(const TransformBundle& b) {
        return {std::vector<double>(b.channels(), 0.0), std::vector<double>(b.angle_count(), 0.0)};
    }
};

/// Backward of out = apply_bundle_to_weights(w, bundle).
/// Adds into acc; writes dL/dw to grad_w when given.
void weights_transform_backward(const Matrix& w, const Matrix& out, const TransformBundle& bundle,
                                const Matrix& grad_out, TransformGrads& acc, Matrix* grad_w = nullptr);

/// Backward of out = apply_inverse_to_activations(x, bundle).
void activations_inverse_backward(const Matrix& x, const Matrix& out, const TransformBundle& bundle,
                                  const Matrix& grad_out, TransformGrads& acc,
                                  Matrix* grad_x = nullptr);

struct LinearGrads {
    TransformGrads transform;  // filled when the request asks for it
    Matrix weight;             // Static: dL/dT(W); otherwise dL/dW
    Matrix scales;             // Static mode only
    Matrix zeros;              // Static mode only
    std::vector<double> bias;
    Matrix input;              // dL/dX
};

struct GradRequest {
    bool transform = false;     // alpha and angles
    bool weight = false;
    bool quant_params = false;  // s and z (Static mode)
    bool input = false;
};

LinearGrads linear_backward(const QuantLinear& lin, const LinearTape& tape, const Matrix& grad_y,
                            const GradRequest& req);

struct LayerGrads {
    LinearGrads up;
    LinearGrads down;
    Matrix input;
};

LayerGrads layer_backward(const QuantLayer& layer, const LayerTape& tape, const Matrix& grad_y,
                          const GradRequest& req);

}  // namespace paro
