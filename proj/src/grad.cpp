#include "paro/grad.hpp"

#include "paro/quantizer.hpp"

#include <cmath>
#include <stdexcept>

namespace paro {

namespace {

struct RotationRef {
    std::size_t group;
    std::size_t first_channel;
    const IndependentRotation* rotation;
    std::size_t angle_offset;
};

// Rotations in application order with their offsets into the flat angle vector.
std::vector<RotationRef> rotation_refs(const TransformBundle& b) {
    std::vector<RotationRef> refs;
    std::size_t offset = 0;
    for (std::size_t g = 0; g < b.groups.size(); ++g)
        for (const auto& rot : b.groups[g]) {
            refs.push_back({g, b.layout.begin(g), &rot, offset});
            offset += rot.angles.size();
        }
    return refs;
}

}  // namespace

void weights_transform_backward(const Matrix& w, const Matrix& out, const TransformBundle& bundle,
                                const Matrix& grad_out, TransformGrads& acc, Matrix* grad_w) {
    if (out.rows() != w.rows() || grad_out.rows() != w.rows() || grad_out.cols() != w.cols())
        throw std::invalid_argument("weights_transform_backward: shape mismatch");
    Matrix vals = out;
    Matrix grad = grad_out;
    const std::size_t cols = w.cols();
    const auto refs = rotation_refs(bundle);
    for (auto it = refs.rbegin(); it != refs.rend(); ++it) {
        const auto& rot = *it->rotation;
        for (std::size_t k = 0; k < rot.pairs.size(); ++k) {
            const float c = std::cos(rot.angles[k]);
            const float s = std::sin(rot.angles[k]);
            float* vi = vals.row(it->first_channel + rot.pairs[k].i).data();
            float* vj = vals.row(it->first_channel + rot.pairs[k].j).data();
            float* gi = grad.row(it->first_channel + rot.pairs[k].i).data();
            float* gj = grad.row(it->first_channel + rot.pairs[k].j).data();
            double dtheta = 0.0;
            for (std::size_t col = 0; col < cols; ++col) {
                const float a = vi[col], b = vj[col], ga = gi[col], gb = gj[col];
                dtheta += static_cast<double>(gb) * a - static_cast<double>(ga) * b;
                gi[col] = c * ga + s * gb;
                gj[col] = -s * ga + c * gb;
                vi[col] = c * a + s * b;
                vj[col] = -s * a + c * b;
            }
            acc.angles[it->angle_offset + k] += dtheta;
        }
    }
    if (grad_w) *grad_w = Matrix(w.rows(), cols);
    for (std::size_t r = 0; r < w.rows(); ++r) {
        double da = 0.0;
        const auto wr = w.row(r);
        const auto gr = grad.row(r);
        for (std::size_t col = 0; col < cols; ++col) da += static_cast<double>(gr[col]) * wr[col];
        acc.alpha[r] += da;
        if (grad_w)
            for (std::size_t col = 0; col < cols; ++col) (*grad_w)(r, col) = bundle.alpha[r] * gr[col];
    }
}

void activations_inverse_backward(const Matrix& x, const Matrix& out, const TransformBundle& bundle,
                                  const Matrix& grad_out, TransformGrads& acc, Matrix* grad_x) {
    if (out.cols() != x.cols() || grad_out.cols() != x.cols() || grad_out.rows() != x.rows())
        throw std::invalid_argument("activations_inverse_backward: shape mismatch");
    const auto refs = rotation_refs(bundle);
    std::vector<float> cos_v(acc.angles.size()), sin_v(acc.angles.size());
    for (const auto& ref : refs)
        for (std::size_t k = 0; k < ref.rotation->angles.size(); ++k) {
            cos_v[ref.angle_offset + k] = std::cos(ref.rotation->angles[k]);
            sin_v[ref.angle_offset + k] = std::sin(ref.rotation->angles[k]);
        }
    const std::size_t D = x.cols();
    std::vector<float> vals(D), grad(D);
    std::vector<double> dalpha(D, 0.0);
    if (grad_x) *grad_x = Matrix(x.rows(), D);
    for (std::size_t t = 0; t < x.rows(); ++t) {
        std::copy(out.row(t).begin(), out.row(t).end(), vals.begin());
        std::copy(grad_out.row(t).begin(), grad_out.row(t).end(), grad.begin());
        for (auto it = refs.rbegin(); it != refs.rend(); ++it) {
            const auto& rot = *it->rotation;
            for (std::size_t k = 0; k < rot.pairs.size(); ++k) {
                const std::size_t idx = it->angle_offset + k;
                const float c = cos_v[idx], s = sin_v[idx];
                const std::size_t ci = it->first_channel + rot.pairs[k].i;
                const std::size_t cj = it->first_channel + rot.pairs[k].j;
                const float a = vals[ci], b = vals[cj], ga = grad[ci], gb = grad[cj];
                acc.angles[idx] += static_cast<double>(gb) * a - static_cast<double>(ga) * b;
                grad[ci] = c * ga + s * gb;
                grad[cj] = -s * ga + c * gb;
                vals[ci] = c * a + s * b;
                vals[cj] = -s * a + c * b;
            }
        }
        // x0 = x / alpha
        const auto xr = x.row(t);
        for (std::size_t c = 0; c < D; ++c) {
            const double al = bundle.alpha[c];
            dalpha[c] -= static_cast<double>(grad[c]) * xr[c] / (al * al);
            if (grad_x) (*grad_x)(t, c) = grad[c] / bundle.alpha[c];
        }
    }
    for (std::size_t c = 0; c < D; ++c) acc.alpha[c] += dalpha[c];
}

LinearGrads linear_backward(const QuantLinear& lin, const LinearTape& tape, const Matrix& grad_y,
                            const GradRequest& req) {
    LinearGrads grads;
    grads.transform = TransformGrads::zeros_like(lin.bundle);
    grads.bias.assign(grad_y.cols(), 0.0);
    for (std::size_t t = 0; t < grad_y.rows(); ++t) {
        const auto row = grad_y.row(t);
        for (std::size_t c = 0; c < row.size(); ++c) grads.bias[c] += row[c];
    }

    const bool need_weight_path = req.weight || req.quant_params ||
                                  (req.transform && lin.mode != WeightMode::Static);
    if (need_weight_path) {
        const Matrix d_wq = matmul_tn(tape.input_t, grad_y);
        Matrix d_wt;
        switch (lin.mode) {
            case WeightMode::Float: d_wt = d_wq; break;
            case WeightMode::Dynamic: d_wt = dynamic_fake_quant_backward(tape.weight_t, tape.params, d_wq); break;
            case WeightMode::Static: {
                FakeQuantGrads fq = fake_quant_backward(tape.weight_t, tape.params, d_wq);
                d_wt = std::move(fq.weight);
                grads.scales = std::move(fq.scales);
                grads.zeros = std::move(fq.zeros);
                break;
            }
        }
        if (lin.mode == WeightMode::Static) {
            grads.weight = std::move(d_wt);
        } else if (req.transform || req.weight) {
            weights_transform_backward(lin.weight, tape.weight_t, lin.bundle, d_wt, grads.transform,
                                       req.weight ? &grads.weight : nullptr);
        }
    }

    if (req.transform || req.input) {
        const Matrix d_xt = matmul_nt(grad_y, tape.weight_q);
        activations_inverse_backward(tape.input, tape.input_t, lin.bundle, d_xt, grads.transform,
                                     req.input ? &grads.input : nullptr);
    }
    return grads;
}

LayerGrads layer_backward(const QuantLayer& layer, const LayerTape& tape, const Matrix& grad_y,
                          const GradRequest& req) {
    LayerGrads grads;
    GradRequest down_req = req;
    down_req.input = true;
    grads.down = linear_backward(layer.down, tape.down, grad_y, down_req);

    Matrix d_pre = std::move(grads.down.input);
    for (std::size_t i = 0; i < d_pre.size(); ++i) d_pre.values()[i] *= silu_grad(tape.pre_act.values()[i]);
    grads.down.input = Matrix();

    grads.up = linear_backward(layer.up, tape.up, d_pre, req);
    if (req.input) {
        grads.input = std::move(grads.up.input);
        grads.up.input = Matrix();
        if (layer.residual)
            for (std::size_t i = 0; i < grads.input.size(); ++i) grads.input.values()[i] += grad_y.values()[i];
    }
    return grads;
}

}  // namespace paro
