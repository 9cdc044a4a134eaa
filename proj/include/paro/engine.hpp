#pragma once

// Deployed-mode inference: weights stay as integer codes, the inverse
// transform runs as a fused tiled routine, and dequantization happens one
// channel group at a time inside the matmul.

#include "paro/calibrate.hpp"
#include "paro/layer.hpp"
#include "paro/quantizer.hpp"
#include "paro/transform.hpp"

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <span>
#include <string>
#include <vector>

namespace paro {

struct DeployedLinear {
    QuantizedTensor weight;  // codes of T(W) with integer zero points
    TransformBundle bundle;
    std::vector<float> bias;
};

struct DeployedLayer {
    DeployedLinear up;
    DeployedLinear down;
    bool residual = true;
};

struct DeployedModel {
    std::vector<DeployedLayer> layers;

    std::size_t dim() const noexcept { return layers.empty() ? 0 : layers.front().up.weight.rows; }
    void validate() const;
};

/// Freezes calibrated layers (Static mode) into code form. Zero points must be integers.
DeployedModel deploy(const std::vector<QuantLayer>& layers);

/// Run directory layout: model.json plus layer<i>.up.pqt / layer<i>.down.pqt.
void save_deployed(const std::filesystem::path& dir, const DeployedModel& model);
/// Throws FormatError on malformed or inconsistent files.
DeployedModel load_deployed(const std::filesystem::path& dir);

/// Precomputed cos/sin and pair tables of a bundle.
struct FusedPlan {
    std::size_t channels = 0;
    GroupLayout layout;
    std::vector<float> inv_alpha;
    struct Group {
        std::vector<std::uint16_t> i, j;  // group-local channels, rotation-major
        std::vector<float> cos, sin;
    };
    std::vector<Group> groups;

    static FusedPlan build(const TransformBundle& bundle);
};

/// Same result as apply_inverse_to_activations; processes (token tile x group)
/// blocks independently with every rotation applied while the block is in cache.
Matrix fused_inverse_transform(const Matrix& x, const FusedPlan& plan);
Matrix fused_inverse_transform(const Matrix& x, const TransformBundle& bundle);
/// Writes into `out`, reusing its storage when the shape already matches.
void fused_inverse_transform_into(const Matrix& x, const FusedPlan& plan, Matrix& out);

/// Instrumentation of the dequantizing matmul.
struct ForwardStats {
    std::size_t peak_dequant_floats = 0;  // largest transient FP32 weight buffer
    std::size_t linears = 0;
};

/// y = fused_inverse_transform(x) * dequant(codes) + bias, dequantizing group by group.
Matrix deployed_linear_forward(const DeployedLinear& lin, const Matrix& x, ForwardStats* stats = nullptr);
Matrix quantized_forward(const DeployedModel& model, const Matrix& x, ForwardStats* stats = nullptr);

/// Output MSE against the full-precision stack on held-out inputs.
struct EvalReport {
    std::size_t samples = 0;
    std::size_t tokens = 0;
    double mse_quantized = 0.0;  // deployed model
    double mse_rtn = 0.0;        // plain RTN of the same FP stack
    double signal_variance = 0.0;
};

EvalReport evaluate_model(const std::vector<ToyDecoderLayer>& fp, const DeployedModel& deployed,
                          const QuantSpec& spec, const std::vector<Matrix>& inputs);
nlohmann::json eval_to_json(const EvalReport& report);

struct BenchRow {
    std::string kind;  // "pairwise" or "hadamard"
    std::size_t n = 0;
    std::size_t K = 0;  // 0 for hadamard
    std::size_t tokens = 0;
    double seconds = 0.0;  // median over interleaved repeats
    double elements_per_second = 0.0;
};

struct BenchConfig {
    std::vector<std::size_t> dims{256, 1024, 4096, 8192};
    std::vector<std::size_t> rotations{8};
    std::size_t tokens = 64;
    std::size_t repeats = 15;
    std::size_t group_size = 128;
    bool include_hadamard = true;
    std::uint64_t seed = 0;
};

std::vector<BenchRow> bench_transforms(const BenchConfig& config);
/// Header: kind,n,K,tokens,seconds,elements_per_second
void write_bench_csv(std::ostream& out, std::span<const BenchRow> rows);

}  // namespace paro
