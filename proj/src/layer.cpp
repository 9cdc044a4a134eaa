#include "paro/layer.hpp"

#include <cmath>
#include <stdexcept>

namespace paro {

float silu(float x) noexcept { return x / (1.0f + std::exp(-x)); }

float silu_grad(float x) noexcept {
    const float sig = 1.0f / (1.0f + std::exp(-x));
    return sig * (1.0f + x * (1.0f - sig));
}

Matrix affine(const Matrix& x, const Matrix& w, const std::vector<float>& bias) {
    Matrix y = matmul(x, w);
    if (!bias.empty()) {
        if (bias.size() != y.cols()) throw std::invalid_argument("bias length mismatch");
        for (std::size_t t = 0; t < y.rows(); ++t) {
            auto row = y.row(t);
            for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias[c];
        }
    }
    return y;
}

void ToyDecoderLayer::validate() const {
    if (up_weight.cols() != down_weight.rows()) throw std::invalid_argument("hidden dimensions do not chain");
    if (residual && down_weight.cols() != up_weight.rows())
        throw std::invalid_argument("residual layer must map D -> D");
    if (!up_bias.empty() && up_bias.size() != up_weight.cols()) throw std::invalid_argument("up bias length");
    if (!down_bias.empty() && down_bias.size() != down_weight.cols())
        throw std::invalid_argument("down bias length");
    if (!up_weight.all_finite() || !down_weight.all_finite())
        throw std::invalid_argument("layer weights must be finite");
}

Matrix ToyDecoderLayer::forward(const Matrix& x) const {
    Matrix h = affine(x, up_weight, up_bias);
    for (float& v : h.values()) v = silu(v);
    Matrix y = affine(h, down_weight, down_bias);
    if (residual)
        for (std::size_t i = 0; i < y.size(); ++i) y.values()[i] += x.values()[i];
    return y;
}

QuantLinear QuantLinear::make(const Matrix& w, std::vector<float> bias, TransformBundle bundle,
                              const QuantSpec& spec) {
    spec.validate();
    if (bundle.channels() != w.rows()) throw std::invalid_argument("bundle does not match weight rows");
    QuantLinear lin;
    lin.weight = w;
    lin.bias = std::move(bias);
    lin.bundle = std::move(bundle);
    lin.spec = spec;
    lin.mode = WeightMode::Dynamic;
    return lin;
}

void QuantLinear::fold() {
    if (mode == WeightMode::Static) return;
    weight = apply_bundle_to_weights(weight, bundle);
    params = rtn_params(weight, spec);
    mode = WeightMode::Static;
}

Matrix QuantLinear::transformed_weight() const {
    return mode == WeightMode::Static ? weight : apply_bundle_to_weights(weight, bundle);
}

Matrix QuantLinear::effective_weight() const {
    Matrix wt = transformed_weight();
    switch (mode) {
        case WeightMode::Float: return wt;
        case WeightMode::Dynamic: return fake_quant(wt, rtn_params(wt, spec));
        case WeightMode::Static: return fake_quant(wt, params);
    }
    return wt;
}

Matrix linear_forward(const QuantLinear& lin, const Matrix& x, LinearTape* tape) {
    Matrix xt = apply_inverse_to_activations(x, lin.bundle);
    Matrix wt = lin.transformed_weight();
    QuantParams params;
    Matrix wq;
    switch (lin.mode) {
        case WeightMode::Float: wq = wt; break;
        case WeightMode::Dynamic:
            params = rtn_params(wt, lin.spec);
            wq = fake_quant(wt, params);
            break;
        case WeightMode::Static:
            params = lin.params;
            wq = fake_quant(wt, params);
            break;
    }
    Matrix y = affine(xt, wq, lin.bias);
    if (tape) {
        tape->input = x;
        tape->input_t = std::move(xt);
        tape->weight_t = std::move(wt);
        tape->params = std::move(params);
        tape->weight_q = std::move(wq);
    }
    return y;
}

Matrix layer_forward(const QuantLayer& layer, const Matrix& x, LayerTape* tape) {
    Matrix h = linear_forward(layer.up, x, tape ? &tape->up : nullptr);
    Matrix a = h;
    for (float& v : a.values()) v = silu(v);
    if (tape) tape->pre_act = std::move(h);
    Matrix y = linear_forward(layer.down, a, tape ? &tape->down : nullptr);
    if (layer.residual) {
        if (y.cols() != x.cols()) throw std::invalid_argument("residual shape mismatch");
        for (std::size_t i = 0; i < y.size(); ++i) y.values()[i] += x.values()[i];
    }
    return y;
}

QuantLayer make_quant_layer(const ToyDecoderLayer& layer, TransformBundle up_bundle,
                            TransformBundle down_bundle, const QuantSpec& spec) {
    layer.validate();
    QuantLayer q;
    q.up = QuantLinear::make(layer.up_weight, layer.up_bias, std::move(up_bundle), spec);
    q.down = QuantLinear::make(layer.down_weight, layer.down_bias, std::move(down_bundle), spec);
    q.residual = layer.residual;
    return q;
}

}  // namespace paro
