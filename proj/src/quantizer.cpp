#include "paro/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace paro {

namespace {

void check_params_shape(const Matrix& w, const QuantParams& p) {
    if (p.layout.channels != w.rows() || p.scales.rows() != p.layout.num_groups ||
        p.scales.cols() != w.cols() || p.zeros.rows() != p.scales.rows() ||
        p.zeros.cols() != p.scales.cols())
        throw std::invalid_argument("quantization parameters do not match the weight shape");
}

// Visits every (group, column) block of a D_in x D_out weight.
template <typename Fn>
void for_each_block(const GroupLayout& layout, std::size_t cols, Fn&& fn) {
    for (std::size_t g = 0; g < layout.num_groups; ++g)
        for (std::size_t c = 0; c < cols; ++c) fn(g, c, layout.begin(g), layout.live_size(g));
}

}  // namespace

void QuantSpec::validate() const {
    if (bits < 2 || bits > 16)
        throw std::invalid_argument("bits must be in [2, 16], got " + std::to_string(bits));
    if (group_size < 2) throw std::invalid_argument("group size must be >= 2");
}

float round_half_even(float x) noexcept { return std::nearbyint(x); }

GroupParams compute_group_params(std::span<const float> values, int bits) {
    if (values.empty()) throw std::invalid_argument("cannot compute parameters of an empty group");
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    const float qmax = static_cast<float>((1u << bits) - 1u);
    GroupParams p;
    p.scale = std::max((*hi - *lo) / qmax, kMinScale);
    p.zero_point = std::clamp(-round_half_even(*lo / p.scale), 0.0f, qmax);
    return p;
}

std::uint16_t quantize_value(float v, GroupParams p, int bits) noexcept {
    const float qmax = static_cast<float>((1u << bits) - 1u);
    const float u = round_half_even(v / p.scale) + p.zero_point;
    return static_cast<std::uint16_t>(std::clamp(u, 0.0f, qmax));
}

void quantize_group(std::span<const float> values, GroupParams p, int bits,
                    std::span<std::uint16_t> codes) {
    if (codes.size() != values.size()) throw std::invalid_argument("code buffer size mismatch");
    for (std::size_t i = 0; i < values.size(); ++i) codes[i] = quantize_value(values[i], p, bits);
}

void dequantize_group(std::span<const std::uint16_t> codes, GroupParams p, std::span<float> out) {
    if (codes.size() != out.size()) throw std::invalid_argument("output buffer size mismatch");
    for (std::size_t i = 0; i < codes.size(); ++i) out[i] = dequantize_value(codes[i], p);
}

bool in_quant_range(float v, GroupParams p, int bits) noexcept {
    const float qmax = static_cast<float>((1u << bits) - 1u);
    const float u = round_half_even(v / p.scale) + p.zero_point;
    return u >= 0.0f && u <= qmax;
}

QuantParams rtn_params(const Matrix& w, const QuantSpec& spec) {
    spec.validate();
    QuantParams p;
    p.spec = spec;
    p.layout = make_group_layout(w.rows(), spec.group_size);
    p.scales = Matrix(p.layout.num_groups, w.cols());
    p.zeros = Matrix(p.layout.num_groups, w.cols());
    std::vector<float> column(spec.group_size);
    for_each_block(p.layout, w.cols(), [&](std::size_t g, std::size_t c, std::size_t r0, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) column[i] = w(r0 + i, c);
        const GroupParams gp = compute_group_params({column.data(), n}, spec.bits);
        p.scales(g, c) = gp.scale;
        p.zeros(g, c) = gp.zero_point;
    });
    return p;
}

QuantizedTensor quantize_matrix(const Matrix& w, const QuantSpec& spec) {
    return quantize_matrix(w, rtn_params(w, spec));
}

QuantizedTensor quantize_matrix(const Matrix& w, const QuantParams& params) {
    check_params_shape(w, params);
    QuantizedTensor qt;
    qt.rows = w.rows();
    qt.cols = w.cols();
    qt.params = params;
    qt.codes.resize(w.size());
    const int bits = params.spec.bits;
    for_each_block(params.layout, w.cols(), [&](std::size_t g, std::size_t c, std::size_t r0, std::size_t n) {
        const GroupParams gp = params.at(g, c);
        for (std::size_t r = r0; r < r0 + n; ++r) qt.codes[r * qt.cols + c] = quantize_value(w(r, c), gp, bits);
    });
    return qt;
}

Matrix dequantize_matrix(const QuantizedTensor& qt) {
    Matrix out(qt.rows, qt.cols);
    for_each_block(qt.params.layout, qt.cols, [&](std::size_t g, std::size_t c, std::size_t r0, std::size_t n) {
        const GroupParams gp = qt.params.at(g, c);
        for (std::size_t r = r0; r < r0 + n; ++r) out(r, c) = dequantize_value(qt.code(r, c), gp);
    });
    return out;
}

Matrix fake_quant(const Matrix& w, const QuantParams& params) {
    check_params_shape(w, params);
    const float qmax = params.spec.max_code();
    Matrix out(w.rows(), w.cols());
    for_each_block(params.layout, w.cols(), [&](std::size_t g, std::size_t c, std::size_t r0, std::size_t n) {
        const GroupParams gp = params.at(g, c);
        for (std::size_t r = r0; r < r0 + n; ++r) {
            const float code = std::clamp(round_half_even(w(r, c) / gp.scale) + gp.zero_point, 0.0f, qmax);
            out(r, c) = (code - gp.zero_point) * gp.scale;
        }
    });
    return out;
}

FakeQuantGrads fake_quant_backward(const Matrix& w, const QuantParams& params,
                                   const Matrix& grad_out) {
    check_params_shape(w, params);
    if (grad_out.rows() != w.rows() || grad_out.cols() != w.cols())
        throw std::invalid_argument("gradient shape does not match the weight");
    const float qmax = params.spec.max_code();
    FakeQuantGrads grads{Matrix(w.rows(), w.cols()), Matrix(params.scales.rows(), w.cols()),
                         Matrix(params.scales.rows(), w.cols())};
    for_each_block(params.layout, w.cols(), [&](std::size_t g, std::size_t c, std::size_t r0, std::size_t n) {
        const GroupParams gp = params.at(g, c);
        double ds = 0.0;
        double dz = 0.0;
        for (std::size_t r = r0; r < r0 + n; ++r) {
            const float go = grad_out(r, c);
            const float ratio = w(r, c) / gp.scale;
            const float rounded = round_half_even(ratio);
            const float u = rounded + gp.zero_point;
            if (u >= 0.0f && u <= qmax) {
                grads.weight(r, c) = go;
                ds += static_cast<double>(go) * (rounded - ratio);
            } else {
                const float clamped = u < 0.0f ? 0.0f : qmax;
                ds += static_cast<double>(go) * (clamped - gp.zero_point);
                dz -= static_cast<double>(go) * gp.scale;
            }
        }
        grads.scales(g, c) = static_cast<float>(ds);
        grads.zeros(g, c) = static_cast<float>(dz);
    });
    return grads;
}

Matrix dynamic_fake_quant_backward(const Matrix& w, const QuantParams& params,
                                   const Matrix& grad_out) {
    FakeQuantGrads direct = fake_quant_backward(w, params, grad_out);
    Matrix& dw = direct.weight;
    const float qmax = params.spec.max_code();
    for_each_block(params.layout, w.cols(), [&](std::size_t g, std::size_t c, std::size_t r0, std::size_t n) {
        std::size_t arg_lo = r0;
        std::size_t arg_hi = r0;
        for (std::size_t r = r0 + 1; r < r0 + n; ++r) {
            if (w(r, c) < w(arg_lo, c)) arg_lo = r;
            if (w(r, c) > w(arg_hi, c)) arg_hi = r;
        }
        const float lo = w(arg_lo, c);
        const float hi = w(arg_hi, c);
        const float s = params.scales(g, c);
        double ds = direct.scales(g, c);
        double dlo = 0.0;
        const float z_raw = -round_half_even(lo / s);
        if (z_raw >= 0.0f && z_raw <= qmax) {
            // z = -round(lo / s), STE through the round.
            const double dz = direct.zeros(g, c);
            ds += dz * static_cast<double>(lo) / (static_cast<double>(s) * s);
            dlo -= dz / s;
        }
        if ((hi - lo) / qmax >= kMinScale) {
            dw(arg_hi, c) += static_cast<float>(ds / qmax);
            dlo -= ds / qmax;
        }
        dw(arg_lo, c) += static_cast<float>(dlo);
    });
    return dw;
}

void round_zero_points(QuantParams& params) noexcept {
    const float qmax = params.spec.max_code();
    for (float& z : params.zeros.values()) z = std::clamp(round_half_even(z), 0.0f, qmax);
}

void write_quantized(TensorFile& file, const QuantizedTensor& qt, std::string_view prefix) {
    const std::string p(prefix);
    const std::vector<std::int64_t> shape{static_cast<std::int64_t>(qt.rows),
                                          static_cast<std::int64_t>(qt.cols)};
    if (qt.params.spec.bits <= 8) {
        file.add({p + "codes", "codes", shape, std::vector<std::uint8_t>(qt.codes.begin(), qt.codes.end())});
    } else {
        file.add({p + "codes", "codes", shape, std::vector<std::int32_t>(qt.codes.begin(), qt.codes.end())});
    }
    file.add(make_tensor(p + "scales", "scales", qt.params.scales));
    file.add(make_tensor(p + "zeros", "zeros", qt.params.zeros));
    file.fields["bits"] = qt.params.spec.bits;
    file.fields["group_size"] = qt.params.spec.group_size;
}

QuantizedTensor read_quantized(const TensorFile& file, std::string_view prefix) {
    const std::string p(prefix);
    QuantizedTensor qt;
    try {
        qt.params.spec.bits = file.fields.at("bits").get<int>();
        qt.params.spec.group_size = file.fields.at("group_size").get<std::size_t>();
        qt.params.spec.validate();
    } catch (const std::exception& e) {
        throw FormatError(std::string("invalid quantization header: ") + e.what());
    }
    const Tensor& codes = file.at(p + "codes");
    if (codes.shape.size() != 2) throw FormatError("codes must be rank 2");
    qt.rows = static_cast<std::size_t>(codes.shape[0]);
    qt.cols = static_cast<std::size_t>(codes.shape[1]);
    const std::uint32_t qmax = (1u << qt.params.spec.bits) - 1u;
    std::visit(
        [&](const auto& v) {
            using T = typename std::decay_t<decltype(v)>::value_type;
            if constexpr (std::is_same_v<T, float>) {
                throw FormatError("codes must be an integer tensor");
            } else {
                qt.codes.reserve(v.size());
                for (auto x : v) {
                    if (x < 0 || static_cast<std::uint32_t>(x) > qmax) throw FormatError("code out of range");
                    qt.codes.push_back(static_cast<std::uint16_t>(x));
                }
            }
        },
        codes.data);
    qt.params.layout = make_group_layout(qt.rows, qt.params.spec.group_size);
    qt.params.scales = file.matrix(p + "scales");
    qt.params.zeros = file.matrix(p + "zeros");
    if (qt.params.scales.rows() != qt.params.layout.num_groups || qt.params.scales.cols() != qt.cols ||
        qt.params.zeros.rows() != qt.params.layout.num_groups || qt.params.zeros.cols() != qt.cols)
        throw FormatError("scale/zero tensors do not match the code shape");
    for (float s : qt.params.scales.values())
        if (!(s > 0.0f) || !std::isfinite(s)) throw FormatError("scales must be positive and finite");
    for (float z : qt.params.zeros.values())
        if (!(z >= 0.0f && z <= static_cast<float>(qmax))) throw FormatError("zero point out of range");
    return qt;
}

}  // namespace paro
