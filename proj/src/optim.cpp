#include "paro/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace paro {

float default_lr(ParamKind kind) noexcept {
    switch (kind) {
        case ParamKind::Angles:
        case ParamKind::Alpha: return 0.05f;
        case ParamKind::Weights: return 1e-5f;
        case ParamKind::Scales:
        case ParamKind::ZeroPoints: return 1e-6f;
        case ParamKind::SkewU: return 1e-3f;
    }
    return 0.0f;
}

std::string_view to_string(ParamKind kind) noexcept {
    switch (kind) {
        case ParamKind::Angles: return "angles";
        case ParamKind::Alpha: return "alpha";
        case ParamKind::Weights: return "weights";
        case ParamKind::Scales: return "scales";
        case ParamKind::ZeroPoints: return "zero_points";
        case ParamKind::SkewU: return "skew_u";
    }
    return "unknown";
}

LossResult huber_loss(const Matrix& pred, const Matrix& target, float beta) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols())
        throw std::invalid_argument("huber_loss: shape mismatch");
    LossResult r;
    r.grad = Matrix(pred.rows(), pred.cols());
    if (pred.empty()) return r;
    const double n = static_cast<double>(pred.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double d = static_cast<double>(pred.values()[i]) - target.values()[i];
        const double ad = std::fabs(d);
        if (ad < beta) {
            acc += 0.5 * d * d / beta;
            r.grad.values()[i] = static_cast<float>(d / beta / n);
        } else {
            acc += ad - 0.5 * beta;
            r.grad.values()[i] = static_cast<float>((d > 0 ? 1.0 : -1.0) / n);
        }
    }
    r.loss = acc / n;
    return r;
}

double huber_value(const Matrix& pred, const Matrix& target, float beta) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols())
        throw std::invalid_argument("huber_value: shape mismatch");
    if (pred.empty()) return 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double ad = std::fabs(static_cast<double>(pred.values()[i]) - target.values()[i]);
        acc += ad < beta ? 0.5 * ad * ad / beta : ad - 0.5 * beta;
    }
    return acc / static_cast<double>(pred.size());
}

void adamw_step(std::span<float> params, std::span<const double> grads, AdamWState& state,
                double lr, const AdamWConfig& cfg) {
    if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size())
        throw std::invalid_argument("adamw_step: parameter, gradient and state sizes differ");
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        double p = params[i];
        p -= lr * cfg.weight_decay * p;
        const double g = grads[i];
        const double m = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        const double v = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        state.m[i] = static_cast<float>(m);
        state.v[i] = static_cast<float>(v);
        p -= lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
        params[i] = static_cast<float>(p);
    }
}

double cosine_lr(std::uint64_t step, const LrSchedule& s) {
    if (s.total_steps < 1) throw std::invalid_argument("schedule needs at least one step");
    if (!(s.floor_divisor >= 1.0)) throw std::invalid_argument("schedule floor divisor must be >= 1");
    const double floor = s.base_lr / s.floor_divisor;
    if (step == 0) return s.base_lr;
    if (step >= s.total_steps) return floor;
    const double progress = static_cast<double>(step) / static_cast<double>(s.total_steps);
    return floor + (s.base_lr - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void write_adamw_state(TensorFile& file, const AdamWState& state, std::string_view prefix) {
    const std::string p(prefix);
    const auto n = static_cast<std::int64_t>(state.m.size());
    file.add({p + "m", "adam_m", {n}, state.m});
    file.add({p + "v", "adam_v", {n}, state.v});
    // Step count as two 32-bit halves keeps the payload within the i32 dtype.
    file.add({p + "step", "adam_step", {2},
              std::vector<std::int32_t>{static_cast<std::int32_t>(state.step & 0xffffffffu),
                                        static_cast<std::int32_t>(state.step >> 32)}});
}

AdamWState read_adamw_state(const TensorFile& file, std::string_view prefix) {
    const std::string p(prefix);
    const auto* m = std::get_if<std::vector<float>>(&file.at(p + "m").data);
    const auto* v = std::get_if<std::vector<float>>(&file.at(p + "v").data);
    const auto* step = std::get_if<std::vector<std::int32_t>>(&file.at(p + "step").data);
    if (!m || !v || !step || m->size() != v->size() || step->size() != 2)
        throw FormatError("malformed optimizer state '" + p + "'");
    AdamWState s;
    s.m = *m;
    s.v = *v;
    s.step = static_cast<std::uint32_t>((*step)[0]) |
             (static_cast<std::uint64_t>(static_cast<std::uint32_t>((*step)[1])) << 32);
    return s;
}

}  // namespace paro
