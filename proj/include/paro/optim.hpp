#pragma once

// Loss, AdamW and the cosine learning-rate schedule used by every calibration
// loop in the library.

#include "paro/tensor.hpp"
#include "paro/tensor_file.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace paro {

enum class ParamKind { Angles, Alpha, Weights, Scales, ZeroPoints, SkewU };

/// Per-kind learning rates of the layer-wise calibration (SkewU: full-rotation baseline).
float default_lr(ParamKind kind) noexcept;
std::string_view to_string(ParamKind kind) noexcept;

struct LossResult {
    double loss = 0.0;
    Matrix grad;  // dL/dpred
};

/// Mean smooth-L1 (Huber) loss:
///   0.5 d^2 / beta  if |d| < beta,  |d| - 0.5 beta  otherwise.
LossResult huber_loss(const Matrix& pred, const Matrix& target, float beta = 1.0f);
double huber_value(const Matrix& pred, const Matrix& target, float beta = 1.0f);

struct AdamWConfig {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double weight_decay = 0.01;
    double eps = 1e-10;
};

struct AdamWState {
    std::vector<float> m;
    std::vector<float> v;
    std::uint64_t step = 0;

    explicit AdamWState(std::size_t n = 0) : m(n, 0.0f), v(n, 0.0f) {}
};

/// Decoupled weight decay, then the bias-corrected Adam update.
void adamw_step(std::span<float> params, std::span<const double> grads, AdamWState& state,
                double lr, const AdamWConfig& config = {});

struct LrSchedule {
    double base_lr = 0.0;
    std::uint64_t total_steps = 1;
    double floor_divisor = 20.0;  // floor = base_lr / floor_divisor
};

/// floor + (base - floor) * (1 + cos(pi * step / total)) / 2, floor = base / 20.
/// Steps past the end stay at the floor.
double cosine_lr(std::uint64_t step, const LrSchedule& schedule);

/// A named block of trainable values with its own optimizer state.
struct ParamGroup {
    ParamKind kind = ParamKind::Angles;
    std::vector<float> values;
    double lr = 0.0;
    AdamWState state;

    ParamGroup() = default;
    ParamGroup(ParamKind k, std::vector<float> v)
        : kind(k), values(std::move(v)), lr(default_lr(k)), state(values.size()) {}
    ParamGroup(ParamKind k, std::vector<float> v, double learning_rate)
        : kind(k), values(std::move(v)), lr(learning_rate), state(values.size()) {}
};

void write_adamw_state(TensorFile& file, const AdamWState& state, std::string_view prefix);
AdamWState read_adamw_state(const TensorFile& file, std::string_view prefix);

}  // namespace paro
