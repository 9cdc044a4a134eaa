#pragma once

// Reference transforms (channel scaling, full rotation, randomized Hadamard)
// and a harness that optimizes each transform against the quantized output
// error of a single linear layer.

#include "paro/quantizer.hpp"
#include "paro/rng.hpp"
#include "paro/tensor.hpp"
#include "paro/transform.hpp"

#include "json.hpp"

#include <cstdint>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace paro {

/// In-place unnormalized Walsh-Hadamard butterfly. Length must be a power of two.
void fwht(std::span<float> v);
std::vector<float> fwht(std::vector<float> v);

bool is_power_of_two(std::size_t n) noexcept;
std::size_t next_power_of_two(std::size_t n) noexcept;

/// Randomized Hadamard H = n^-1/2 * Had * diag(signs); orthogonal.
struct HadamardOp {
    std::size_t n = 0;
    std::vector<float> signs;

    static HadamardOp random(std::size_t n, Rng& rng);
    /// v <- H v
    void apply(std::span<float> v) const;
    /// T(W) = H W for a weight with n rows.
    Matrix apply_to_weights(const Matrix& w) const;
    /// X H^T for activations with n columns.
    Matrix apply_to_activations(const Matrix& x) const;
};

/// R = exp(U - U^T) for strictly upper-triangular U (entries on and below
/// the diagonal are ignored). Scaling and squaring with an order-18 Taylor
/// polynomial, evaluated in FP64.
Matrix skew_to_orthogonal(const Matrix& u);

/// Gradient w.r.t. U of a loss whose gradient w.r.t. R = exp(U - U^T) is grad_r.
/// Uses the adjoint Frechet derivative of exp; result is strictly upper triangular.
Matrix skew_to_orthogonal_backward(const Matrix& u, const Matrix& grad_r);

/// All g(g-1)/2 pairs of a group (rows of w_group), sorted by descending
/// |norm(row_i) - norm(row_j)|, ties broken lexicographically.
std::vector<Pair> rank_pairs_by_magnitude(const Matrix& w_group);
/// floor(fraction * pairs.size()) leading pairs.
std::vector<Pair> top_fraction(std::span<const Pair> ranked, double fraction);

enum class TransformKind {
    None,
    ScalingOnly,
    FullRotation,
    RandomHadamard,
    IndependentRotations,
    ScaledPairwise,
    TopPairs,  // dependent Givens sequence over the largest-magnitude-difference pairs
};

std::string_view to_string(TransformKind kind) noexcept;
std::optional<TransformKind> parse_transform_kind(std::string_view name) noexcept;
std::vector<TransformKind> all_transform_kinds();

struct CompareConfig {
    QuantSpec spec{4, 128};
    std::size_t steps = 200;
    std::size_t rotations = 8;
    std::size_t pairs_per_rotation = 64;
    std::size_t full_rotation_block = 64;
    std::size_t hadamard_seeds = 100;
    double top_fraction = 0.1;
    double lr_full_rotation = 1e-3;
    double lr_other = 1e-2;
    std::uint64_t seed = 0;
};

struct LossCurve {
    TransformKind kind = TransformKind::None;
    std::vector<double> loss;       // loss of the parameters used at step t (t = 0 is the init)
    std::vector<double> best;       // best-so-far loss up to step t
    double final_loss() const noexcept { return best.empty() ? 0.0 : best.back(); }
};

/// Output error of the quantized layer with transform T: Huber(X T^-1 Q(T W), X W).
/// W is D_in x D_out, X is T x D_in. Each optimizable kind runs `steps` AdamW
/// updates on the full batch; curves have steps + 1 entries.
std::vector<LossCurve> compare_transforms(const Matrix& w, const Matrix& x, std::span<const TransformKind> kinds,
                                          const CompareConfig& config);

/// CSV with header kind,step,loss,seed; loss is the best-so-far value.
void write_curves_csv(std::ostream& out, std::span<const LossCurve> curves, std::uint64_t seed);

/// Synthetic outlier-heavy problem for the comparison harness.
struct CompareRun {
    std::size_t d_in = 128;
    std::size_t d_out = 512;
    std::size_t rows = 128;  // calibration activations
    std::size_t outlier_channels = 4;
    float outlier_gain = 50.0f;
    std::vector<TransformKind> kinds = all_transform_kinds();
    CompareConfig config;
};

/// Keys: d_in, d_out, rows, outlier_channels, outlier_gain, kinds, bits,
/// group_size, steps, rotations, pairs_per_rotation, full_rotation_block,
/// hadamard_seeds, top_fraction, lr_full_rotation, lr_other, seed.
/// Unknown keys and invalid values throw std::invalid_argument.
CompareRun compare_run_from_json(const nlohmann::json& j);

/// Draws W (gen_outlier_weight) and X ~ N(0, 1) from config.seed and runs the harness.
std::vector<LossCurve> run_comparison(const CompareRun& run);

}  // namespace paro
