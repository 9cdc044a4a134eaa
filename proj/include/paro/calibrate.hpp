#pragma once

// Layer-wise two-stage calibration of a toy decoder stack.
//
// Stage 1 learns the transform (alpha, angles) with RTN parameters recomputed
// from T(W) on every step. Stage 2 folds T into the weights and fine-tunes
// the transformed weights together with the quantization scales and zero
// points. Each layer is trained on the outputs of the already quantized
// preceding layers and targets the full-precision outputs.

#include "paro/layer.hpp"
#include "paro/optim.hpp"
#include "paro/quantizer.hpp"
#include "paro/rng.hpp"
#include "paro/transform.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace paro {

struct OutlierModelSpec {
    std::size_t num_layers = 2;
    std::size_t dim = 128;
    std::size_t hidden = 256;
    std::size_t outlier_channels = 4;  // per linear
    float outlier_gain = 50.0f;
    bool bias = true;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Gaussian N(0, 1/D_in) weight with `outliers` random input rows scaled by `gain`.
Matrix gen_outlier_weight(std::size_t d_in, std::size_t d_out, std::size_t outliers, float gain, Rng& rng);

std::vector<ToyDecoderLayer> gen_synthetic_model(const OutlierModelSpec& spec);

/// Full-precision forward through a stack.
Matrix model_forward(const std::vector<ToyDecoderLayer>& layers, const Matrix& x);

struct CalibrationSpec {
    std::size_t train_samples = 256;
    std::size_t val_samples = 32;
    std::size_t seq_len = 64;
    std::uint64_t seed = 1;

    void validate() const;
};

/// Each sample is a (seq_len x D) block of i.i.d. standard normal token embeddings.
struct CalibrationSet {
    std::vector<Matrix> train;
    std::vector<Matrix> val;
};

/// Training and validation inputs come from disjoint forks of the seed.
CalibrationSet gen_calibration(std::size_t dim, const CalibrationSpec& spec);

struct TrainConfig {
    std::size_t epochs_per_stage = 10;
    std::size_t batch_size = 16;  // samples per step
    /// Samples per gradient chunk. Chunks are reduced in a fixed order, so
    /// results do not depend on the worker count.
    std::size_t chunk_samples = 4;
    double lr_angles = 0.05;
    double lr_alpha = 0.05;
    double lr_weights = 1e-5;
    double lr_scales = 1e-6;
    double lr_zeros = 1e-6;
    AdamWConfig adamw;
    /// Next-layer quantized inputs from the quantized inputs (true) or from
    /// the full-precision inputs (false).
    bool propagate_quantized_inputs = true;
    std::uint64_t seed = 2;

    void validate() const;
};

struct RunConfig {
    OutlierModelSpec model;
    CalibrationSpec calibration;
    QuantSpec quant{4, 128};
    TransformConfig transform{128, 8, 64};
    TrainConfig train;
};

void to_json(nlohmann::json& j, const RunConfig& c);
/// Missing keys keep their defaults; unknown keys and invalid values throw.
RunConfig run_config_from_json(const nlohmann::json& j);

struct StageReport {
    double init_val = 0.0;
    double best_val = 0.0;
    std::size_t best_epoch = 0;  // 0 = initial parameters
    double init_train = 0.0;
    double final_train = 0.0;  // full training-set loss of the selected parameters
    std::vector<double> train_loss;  // mean over each epoch's steps
    std::vector<double> val_loss;    // after each epoch (before selection)
};

struct LayerReport {
    StageReport stage1;
    StageReport stage2;
};

/// Calibration streams of one layer: quantized-path inputs and FP labels.
struct LayerData {
    const std::vector<Matrix>* inputs = nullptr;      // X'
    const std::vector<Matrix>* labels = nullptr;      // Y
    const std::vector<Matrix>* val_inputs = nullptr;  // validation X'
    const std::vector<Matrix>* val_labels = nullptr;  // validation Y
};

/// Returns the calibrated layer in Static mode with integer zero points.
QuantLayer optimize_layer(const ToyDecoderLayer& layer, const LayerData& data, const QuantSpec& spec,
                          const TransformConfig& transform, const TrainConfig& config, std::uint64_t layer_seed,
                          LayerReport* report = nullptr);

/// Mean Huber loss of a quantized layer over sample blocks.
double dataset_loss(const QuantLayer& layer, const std::vector<Matrix>& inputs, const std::vector<Matrix>& labels);

struct QuantizedModel {
    std::vector<QuantLayer> layers;
    std::vector<LayerReport> reports;
};

using ProgressFn = std::function<void(const std::string&)>;

QuantizedModel quantize_model(const std::vector<ToyDecoderLayer>& layers, const CalibrationSet& calib,
                              const QuantSpec& spec, const TransformConfig& transform, const TrainConfig& config,
                              const ProgressFn& progress = {});

/// Plain RTN baseline: identity transforms, RTN parameters, no tuning.
std::vector<QuantLayer> quantize_model_rtn(const std::vector<ToyDecoderLayer>& layers, const QuantSpec& spec);

/// Training-mode forward through a quantized stack.
Matrix quant_model_forward(const std::vector<QuantLayer>& layers, const Matrix& x);

/// Full-precision stack: fp_model.pqt with tensors "layer<i>.up_weight" etc.
void save_fp_model(const std::filesystem::path& path, const std::vector<ToyDecoderLayer>& layers);
std::vector<ToyDecoderLayer> load_fp_model(const std::filesystem::path& path);

nlohmann::json report_to_json(const std::vector<LayerReport>& reports);

}  // namespace paro
